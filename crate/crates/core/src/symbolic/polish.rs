//! Prefix (Polish) serialization of systems and base-10 float tokens.
//!
//! A constant `x` becomes three words `sign mantissa exponent` with
//! `|x| = mantissa * 10^exponent` and, for `x != 0`, the mantissa holding
//! exactly `mantissa_len` digits. Components of a system are joined by `|`.

use super::expr::{Expr, SystemExpr, MAX_DIM};
use super::vocab::{Operator, TokenSeq, Vocabulary, Word, MAX_EXPONENT, MIN_EXPONENT};
use super::{ParseError, SymbolicError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatTriplet {
    pub negative: bool,
    pub mantissa: u32,
    pub exponent: i32,
}

impl FloatTriplet {
    pub fn value(&self) -> f64 {
        let m = self.mantissa as f64;
        // 10^k is exact for k <= 22, so dividing keeps e.g. 260 E-2 == 2.6.
        let mag = if self.exponent >= 0 {
            m * 10f64.powi(self.exponent)
        } else if self.exponent >= -22 {
            m / 10f64.powi(-self.exponent)
        } else {
            m * 10f64.powi(self.exponent)
        };
        if self.negative {
            -mag
        } else {
            mag
        }
    }

    pub fn words(&self) -> [Word; 3] {
        [
            Word::Sign(self.negative),
            Word::Mantissa(self.mantissa),
            Word::Exponent(self.exponent),
        ]
    }
}

pub fn encode_float(x: f64, mantissa_len: u32) -> Result<FloatTriplet, SymbolicError> {
    if !x.is_finite() {
        return Err(SymbolicError::ExponentOutOfRange(x));
    }
    if x == 0.0 {
        return Ok(FloatTriplet {
            negative: false,
            mantissa: 0,
            exponent: 0,
        });
    }
    let len = mantissa_len as i32;
    let lo = 10f64.powi(len - 1);
    let hi = 10f64.powi(len);
    let a = x.abs();
    let mut exponent = a.log10().floor() as i32 - (len - 1);
    let scaled = |e: i32| {
        if e >= 0 {
            a / 10f64.powi(e)
        } else {
            a * 10f64.powi(-e)
        }
    };
    // log10 can be off by one ulp around exact powers of ten.
    let mut m = scaled(exponent);
    if m >= hi {
        exponent += 1;
        m = scaled(exponent);
    } else if m < lo {
        exponent -= 1;
        m = scaled(exponent);
    }
    let mut mantissa = m.round();
    if mantissa >= hi {
        mantissa /= 10.0;
        exponent += 1;
    }
    if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&exponent) {
        return Err(SymbolicError::ExponentOutOfRange(x));
    }
    Ok(FloatTriplet {
        negative: x < 0.0,
        mantissa: mantissa as u32,
        exponent,
    })
}

/// Value of a `sign mantissa exponent` word triple.
pub fn decode_float(words: &[Word]) -> Result<f64, SymbolicError> {
    match words {
        [Word::Sign(neg), Word::Mantissa(m), Word::Exponent(e)] => Ok(FloatTriplet {
            negative: *neg,
            mantissa: *m,
            exponent: *e,
        }
        .value()),
        _ => Err(SymbolicError::MalformedTriplet),
    }
}

/// Round a value to the grid representable with `mantissa_len` digits.
pub fn quantize(x: f64, mantissa_len: u32) -> Result<f64, SymbolicError> {
    encode_float(x, mantissa_len).map(|t| t.value())
}

pub fn to_polish(sys: &SystemExpr, vocab: &Vocabulary) -> Result<TokenSeq, SymbolicError> {
    let mut words = Vec::new();
    for (j, c) in sys.components().iter().enumerate() {
        if j > 0 {
            words.push(Word::Separator);
        }
        push_prefix(c, vocab.mantissa_len(), &mut words)?;
    }
    Ok(TokenSeq(words.into_iter().map(|w| vocab.id(w)).collect()))
}

fn push_prefix(e: &Expr, mantissa_len: u32, out: &mut Vec<Word>) -> Result<(), SymbolicError> {
    match e {
        Expr::Binary(op, a, b) => {
            out.push(Word::Op(Operator::Binary(*op)));
            push_prefix(a, mantissa_len, out)?;
            push_prefix(b, mantissa_len, out)?;
        }
        Expr::Unary(op, a) => {
            out.push(Word::Op(Operator::Unary(*op)));
            push_prefix(a, mantissa_len, out)?;
        }
        Expr::Const(c) => out.extend(encode_float(*c, mantissa_len)?.words()),
        Expr::Var(i) => out.push(Word::Var(*i)),
        Expr::Placeholder => out.push(Word::Placeholder),
    }
    Ok(())
}

/// A parse item: an operator or a complete leaf (floats already merged).
enum Item {
    Op(Operator),
    Leaf(Expr),
}

/// Parse a prefix token sequence (without `<SOS>`/`<EOS>` framing).
///
/// The whole sequence must be consumed; anything else is an invalid
/// expression.
pub fn from_polish(tokens: &[u32], vocab: &Vocabulary) -> Result<SystemExpr, SymbolicError> {
    let invalid = |e: ParseError| SymbolicError::InvalidExpression(e);

    let mut components: Vec<Vec<Item>> = vec![Vec::new()];
    let mut i = 0;
    while i < tokens.len() {
        let w = vocab.word(tokens[i]).ok_or(invalid(ParseError::UnknownId(tokens[i])))?;
        match w {
            Word::Separator => components.push(Vec::new()),
            Word::Op(op) => components.last_mut().unwrap().push(Item::Op(op)),
            Word::Var(v) => components.last_mut().unwrap().push(Item::Leaf(Expr::Var(v))),
            Word::Placeholder => components.last_mut().unwrap().push(Item::Leaf(Expr::Placeholder)),
            Word::Sign(_) => {
                let triple: Vec<Word> = tokens[i..tokens.len().min(i + 3)]
                    .iter()
                    .map(|&t| vocab.word(t).unwrap_or(Word::Pad))
                    .collect();
                let x = decode_float(&triple).map_err(|_| invalid(ParseError::MalformedFloat(i)))?;
                components.last_mut().unwrap().push(Item::Leaf(Expr::Const(x)));
                i += 2;
            }
            Word::Mantissa(_) | Word::Exponent(_) => return Err(invalid(ParseError::MalformedFloat(i))),
            Word::Pad | Word::Sos | Word::Eos => return Err(invalid(ParseError::UnexpectedSpecial(i))),
        }
        i += 1;
    }
    if components.len() > MAX_DIM {
        return Err(invalid(ParseError::TooManyComponents(components.len())));
    }
    let trees = components
        .into_iter()
        .map(|items| build_tree(items).map_err(invalid))
        .collect::<Result<Vec<_>, _>>()?;
    SystemExpr::new(trees).map_err(|e| match e {
        SymbolicError::InvalidSystem(msg) => invalid(ParseError::InvalidSystem(msg)),
        other => other,
    })
}

/// Build one tree by scanning the prefix items right to left with an
/// operand stack.
fn build_tree(items: Vec<Item>) -> Result<Expr, ParseError> {
    if items.is_empty() {
        return Err(ParseError::EmptyComponent);
    }
    let mut stack: Vec<Expr> = Vec::new();
    for item in items.into_iter().rev() {
        match item {
            Item::Leaf(e) => stack.push(e),
            Item::Op(op) => {
                if stack.len() < op.arity() {
                    return Err(ParseError::Truncated);
                }
                let first = stack.pop().unwrap();
                let node = match op {
                    Operator::Unary(u) => Expr::unary(u, first),
                    Operator::Binary(b) => {
                        let second = stack.pop().unwrap();
                        Expr::binary(b, first, second)
                    }
                };
                stack.push(node);
            }
        }
    }
    match stack.len() {
        1 => Ok(stack.pop().unwrap()),
        _ => Err(ParseError::Leftover),
    }
}
