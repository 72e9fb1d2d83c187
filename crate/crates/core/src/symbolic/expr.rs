//! Expression trees for ODE right-hand sides.

use std::fmt;

use super::SymbolicError;

/// Largest system dimension the vocabulary can name (`u_1` .. `u_5`).
pub const MAX_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Neg,
}

/// A node of an expression tree. Arity is encoded in the variant, so a
/// well-typed value can never carry the wrong number of children.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Const(f64),
    /// Zero-based state variable index.
    Var(usize),
    /// Unknown coefficient in a skeleton equation.
    Placeholder,
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Div, a, b)
    }

    pub fn pow(a: Expr, exponent: f64) -> Self {
        Self::binary(BinaryOp::Pow, a, Expr::Const(exponent))
    }

    pub fn sin(a: Expr) -> Self {
        Self::unary(UnaryOp::Sin, a)
    }

    pub fn cos(a: Expr) -> Self {
        Self::unary(UnaryOp::Cos, a)
    }

    pub fn neg(a: Expr) -> Self {
        Self::unary(UnaryOp::Neg, a)
    }

    /// `c * e`, folding unit coefficients: `1 * e = e`, `-1 * e = neg e`.
    pub fn scaled(c: f64, e: Expr) -> Self {
        if c == 1.0 {
            e
        } else if c == -1.0 {
            Expr::neg(e)
        } else {
            Expr::mul(Expr::Const(c), e)
        }
    }

    /// Product of factors, left to right (`a*b*c` becomes `mul a mul b c`).
    pub fn product(mut factors: Vec<Expr>) -> Self {
        assert!(!factors.is_empty(), "empty product");
        let mut acc = factors.pop().unwrap();
        while let Some(f) = factors.pop() {
            acc = Expr::mul(f, acc);
        }
        acc
    }

    /// Right-associated sum: `t1 + t2 + t3` becomes `add t1 add t2 t3`.
    pub fn sum(mut terms: Vec<Expr>) -> Self {
        assert!(!terms.is_empty(), "empty sum");
        let mut acc = terms.pop().unwrap();
        while let Some(t) = terms.pop() {
            acc = Expr::add(t, acc);
        }
        acc
    }

    /// Top-level additive terms of a right-associated `add` chain.
    pub fn terms(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Expr::Binary(BinaryOp::Add, a, b) = cur {
            out.push(a.as_ref());
            cur = b;
        }
        out.push(cur);
        out
    }

    pub fn into_terms(self) -> Vec<Expr> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Expr::Binary(BinaryOp::Add, a, b) => {
                    out.push(*a);
                    cur = *b;
                }
                other => {
                    out.push(other);
                    return out;
                }
            }
        }
    }

    /// True when the tree contains no `add`/`sub` node, i.e. it is a single
    /// additive term.
    pub fn is_term(&self) -> bool {
        !self.any(&mut |e| matches!(e, Expr::Binary(BinaryOp::Add, _, _) | Expr::Binary(BinaryOp::Sub, _, _)))
    }

    fn any(&self, pred: &mut impl FnMut(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Binary(_, a, b) => a.any(pred) || b.any(pred),
            Expr::Unary(_, a) => a.any(pred),
            _ => false,
        }
    }

    pub fn has_placeholder(&self) -> bool {
        self.any(&mut |e| matches!(e, Expr::Placeholder))
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Var(i) => Some(*i),
            _ => None,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
            Expr::Unary(_, a) => 1 + a.node_count(),
            _ => 1,
        }
    }

    /// Visit every constant leaf that acts as a coefficient. Exponents of
    /// `pow` are structural and are not visited.
    pub fn for_each_coefficient(&self, f: &mut impl FnMut(f64)) {
        match self {
            Expr::Binary(BinaryOp::Pow, a, b) => {
                a.for_each_coefficient(f);
                if !matches!(b.as_ref(), Expr::Const(_)) {
                    b.for_each_coefficient(f);
                }
            }
            Expr::Binary(_, a, b) => {
                a.for_each_coefficient(f);
                b.for_each_coefficient(f);
            }
            Expr::Unary(_, a) => a.for_each_coefficient(f),
            Expr::Const(c) => f(*c),
            _ => {}
        }
    }

    /// Replace every coefficient (see [`Expr::for_each_coefficient`]).
    pub fn map_coefficients(&self, f: &mut impl FnMut(f64) -> Expr) -> Expr {
        match self {
            Expr::Binary(BinaryOp::Pow, a, b) => {
                let b = match b.as_ref() {
                    Expr::Const(c) => Expr::Const(*c),
                    other => other.map_coefficients(f),
                };
                Expr::binary(BinaryOp::Pow, a.map_coefficients(f), b)
            }
            Expr::Binary(op, a, b) => Expr::binary(*op, a.map_coefficients(f), b.map_coefficients(f)),
            Expr::Unary(op, a) => Expr::unary(*op, a.map_coefficients(f)),
            Expr::Const(c) => f(*c),
            other => other.clone(),
        }
    }

    /// Evaluate at state `u`. Any non-finite intermediate is a domain error.
    pub fn eval(&self, u: &[f64]) -> Result<f64, SymbolicError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *u.get(*i).ok_or(SymbolicError::DimensionMismatch {
                expected: *i + 1,
                found: u.len(),
            })?,
            Expr::Placeholder => return Err(SymbolicError::PlaceholderPresent),
            Expr::Unary(op, a) => {
                let a = a.eval(u)?;
                match op {
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Neg => -a,
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval(u)?;
                let b = b.eval(u)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(SymbolicError::Domain("division by zero"));
                        }
                        a / b
                    }
                    BinaryOp::Pow => {
                        if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                            a.powi(b as i32)
                        } else {
                            a.powf(b)
                        }
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SymbolicError::Domain("non-finite value"))
        }
    }
}

/// A `d`-dimensional right-hand side `u' = f(u)`, one tree per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemExpr {
    components: Vec<Expr>,
}

impl SystemExpr {
    pub fn new(components: Vec<Expr>) -> Result<Self, SymbolicError> {
        let d = components.len();
        if d == 0 || d > MAX_DIM {
            return Err(SymbolicError::InvalidSystem(format!(
                "dimension {d} outside 1..={MAX_DIM}"
            )));
        }
        for (j, c) in components.iter().enumerate() {
            if let Some(v) = c.max_var() {
                if v >= d {
                    return Err(SymbolicError::InvalidSystem(format!(
                        "component {j} references u_{} in a {d}-dimensional system",
                        v + 1
                    )));
                }
            }
            let mut finite = true;
            c.any(&mut |e| {
                if let Expr::Const(x) = e {
                    finite &= x.is_finite();
                }
                false
            });
            if !finite {
                return Err(SymbolicError::InvalidSystem(format!(
                    "component {j} has a non-finite constant"
                )));
            }
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Expr> {
        self.components
    }

    pub fn has_placeholder(&self) -> bool {
        self.components.iter().any(Expr::has_placeholder)
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>, SymbolicError> {
        if u.len() != self.dim() {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.dim(),
                found: u.len(),
            });
        }
        if self.has_placeholder() {
            return Err(SymbolicError::PlaceholderPresent);
        }
        self.components.iter().map(|c| c.eval(u)).collect()
    }

    /// Evaluate into a caller-provided buffer; used on the solver hot path.
    pub fn evaluate_into(&self, u: &[f64], out: &mut [f64]) -> Result<(), SymbolicError> {
        debug_assert_eq!(out.len(), self.dim());
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(u)?;
        }
        Ok(())
    }

    /// All coefficients in preorder.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.components {
            c.for_each_coefficient(&mut |x| out.push(x));
        }
        out
    }

    /// Human-readable infix rendering, one string per component.
    pub fn infix(&self) -> Vec<String> {
        self.components.iter().map(|c| c.to_string()).collect()
    }
}

impl fmt::Display for SystemExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, c) in self.components.iter().enumerate() {
            if j > 0 {
                writeln!(f)?;
            }
            write!(f, "u_{}' = {}", j + 1, c)?;
        }
        Ok(())
    }
}

// Infix printing. Precedences: sum 1, product 2, unary minus 3, power 4.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Const(c) if *c < 0.0 => 3,
        Expr::Binary(BinaryOp::Pow, _, _) => 4,
        _ => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl Expr {
    fn fmt_sum(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self.terms();
        write_operand(f, terms[0], 1)?;
        for t in &terms[1..] {
            match negated(t) {
                Some(nt) => {
                    write!(f, " - ")?;
                    write_operand(f, &nt, 2)?;
                }
                None => {
                    write!(f, " + ")?;
                    write_operand(f, t, 2)?;
                }
            }
        }
        Ok(())
    }
}

/// Negated view of a term, used to print `a + (-b)` as `a - b`.
fn negated(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Unary(UnaryOp::Neg, a) => Some((**a).clone()),
        Expr::Const(c) if *c < 0.0 => Some(Expr::Const(-c)),
        Expr::Binary(BinaryOp::Mul, a, b) => match a.as_ref() {
            Expr::Const(c) if *c < 0.0 => Some(Expr::scaled(-c, (**b).clone())),
            _ => None,
        },
        _ => None,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "u_{}", i + 1),
            Expr::Placeholder => write!(f, "?"),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                write_operand(f, a, 4)
            }
            Expr::Unary(op, a) => {
                let name = if *op == UnaryOp::Sin { "sin" } else { "cos" };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op, a, b) => match op {
                BinaryOp::Add => self.fmt_sum(f),
                BinaryOp::Sub => {
                    write_operand(f, a, 1)?;
                    write!(f, " - ")?;
                    write_operand(f, b, 2)
                }
                BinaryOp::Mul => {
                    write_operand(f, a, 2)?;
                    write!(f, "*")?;
                    write_operand(f, b, 3)
                }
                BinaryOp::Div => {
                    write_operand(f, a, 2)?;
                    write!(f, "/")?;
                    write_operand(f, b, 3)
                }
                BinaryOp::Pow => {
                    write_operand(f, a, 5)?;
                    write!(f, "^")?;
                    write_operand(f, b, 5)
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> Expr {
        // cos(1.5 x1) + (x2^2 - 2.6)
        Expr::add(
            Expr::cos(Expr::mul(Expr::Const(1.5), Expr::var(0))),
            Expr::sub(Expr::pow(Expr::var(1), 2.0), Expr::Const(2.6)),
        )
    }

    #[test]
    fn eval_matches_direct_formula() {
        let e = sample_tree();
        let u = [0.3, -1.7];
        let want = (1.5f64 * 0.3).cos() + 1.7f64 * 1.7 - 2.6;
        assert!((e.eval(&u).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let e = Expr::div(Expr::Const(1.0), Expr::var(0));
        assert!(matches!(e.eval(&[0.0]), Err(SymbolicError::Domain(_))));
    }

    #[test]
    fn placeholder_refuses_evaluation() {
        let sys = SystemExpr::new(vec![Expr::mul(Expr::Placeholder, Expr::var(0))]).unwrap();
        assert!(matches!(sys.evaluate(&[1.0]), Err(SymbolicError::PlaceholderPresent)));
    }

    #[test]
    fn variable_out_of_range_rejected() {
        let err = SystemExpr::new(vec![Expr::var(0), Expr::var(2)]).unwrap_err();
        assert!(matches!(err, SymbolicError::InvalidSystem(_)));
    }

    #[test]
    fn sum_is_right_associated() {
        let s = Expr::sum(vec![Expr::Const(1.0), Expr::Const(2.0), Expr::Const(3.0)]);
        assert_eq!(
            s,
            Expr::add(Expr::Const(1.0), Expr::add(Expr::Const(2.0), Expr::Const(3.0)))
        );
        assert_eq!(s.terms().len(), 3);
    }

    #[test]
    fn pow_exponent_is_not_a_coefficient() {
        let e = Expr::mul(Expr::Const(-0.25), Expr::pow(Expr::var(1), 2.0));
        let mut seen = Vec::new();
        e.for_each_coefficient(&mut |c| seen.push(c));
        assert_eq!(seen, vec![-0.25]);
    }

    #[test]
    fn infix_rendering() {
        let e = Expr::sum(vec![
            Expr::scaled(-0.327, Expr::var(0)),
            Expr::neg(Expr::var(1)),
            Expr::scaled(-0.25, Expr::pow(Expr::var(1), 2.0)),
        ]);
        assert_eq!(e.to_string(), "-0.327*u_1 - u_2 - 0.25*u_2^2");
    }
}
