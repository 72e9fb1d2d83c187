//! Catalog of the fifteen ODE families and sampling of concrete instances.
//!
//! Every family builds its right-hand side as a [`SystemExpr`]. All but the
//! double pendulum are written as right-associated sums of monomial-like
//! terms, which is what the term-level corruption operators work on.
//! Named parameters always appear as explicit constant leaves (even when
//! their base value is 1) so the tree shape does not change under
//! sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::symbolic::{Expr, SystemExpr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameter {
    pub name: &'static str,
    pub base: f64,
}

const fn p(name: &'static str, base: f64) -> Parameter {
    Parameter { name, base }
}

pub struct OdeFamily {
    /// Stable identifier used in dataset records and CLI filters.
    pub name: &'static str,
    pub title: &'static str,
    pub dim: usize,
    pub params: &'static [Parameter],
    /// Whether the components are sums of simple terms.
    pub additive: bool,
    build: fn(&[f64]) -> Vec<Expr>,
}

impl std::fmt::Debug for OdeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl OdeFamily {
    pub fn base_params(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.base).collect()
    }

    /// Right-hand side for the given parameter values (in `params` order).
    pub fn system(&self, values: &[f64]) -> SystemExpr {
        assert_eq!(values.len(), self.params.len(), "{}: parameter count", self.name);
        SystemExpr::new((self.build)(values)).expect("catalog systems are valid")
    }

    pub fn base_system(&self) -> SystemExpr {
        self.system(&self.base_params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Relative half-width of the coefficient interval `[F - λ|F|, F + λ|F|]`.
    pub lambda: f64,
    /// Initial conditions are uniform in `[-ic_half_width, ic_half_width]^d`.
    pub ic_half_width: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            ic_half_width: 2.0,
        }
    }
}

pub fn sample_parameters<R: Rng + ?Sized>(family: &OdeFamily, lambda: f64, rng: &mut R) -> Vec<f64> {
    family
        .params
        .iter()
        .map(|p| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            p.base * (1.0 + lambda * u)
        })
        .collect()
}

pub fn sample_initial_condition<R: Rng + ?Sized>(dim: usize, half_width: f64, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect()
}

/// One concrete system with perturbed coefficients and an initial condition.
pub fn sample_instance<R: Rng + ?Sized>(
    family: &OdeFamily,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> (SystemExpr, Vec<f64>) {
    let params = sample_parameters(family, cfg.lambda, rng);
    let u0 = sample_initial_condition(family.dim, cfg.ic_half_width, rng);
    (family.system(&params), u0)
}

pub fn catalog() -> &'static [OdeFamily] {
    &CATALOG
}

pub fn family(name: &str) -> Option<&'static OdeFamily> {
    CATALOG.iter().find(|f| f.name == name)
}

pub fn family_index(name: &str) -> Option<usize> {
    CATALOG.iter().position(|f| f.name == name)
}

fn u(i: usize) -> Expr {
    Expr::var(i)
}

/// `c * e` for a named parameter; never folded.
fn coef(c: f64, e: Expr) -> Expr {
    Expr::mul(Expr::Const(c), e)
}

fn prod(a: usize, b: usize) -> Expr {
    Expr::mul(u(a), u(b))
}

fn thomas(p: &[f64]) -> Vec<Expr> {
    let b = p[0];
    (0..3)
        .map(|i| Expr::sum(vec![Expr::sin(u((i + 1) % 3)), coef(-b, u(i))]))
        .collect()
}

fn lorenz3d(p: &[f64]) -> Vec<Expr> {
    let (sigma, beta, rho) = (p[0], p[1], p[2]);
    vec![
        Expr::sum(vec![coef(sigma, u(1)), coef(-sigma, u(0))]),
        Expr::sum(vec![coef(rho, u(0)), Expr::neg(prod(0, 2)), Expr::neg(u(1))]),
        Expr::sum(vec![prod(0, 1), coef(-beta, u(2))]),
    ]
}

fn aizawa(p: &[f64]) -> Vec<Expr> {
    // `e` is listed with the family's constants but does not enter the
    // right-hand side as written.
    let (a, b, c, d, _e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    vec![
        Expr::sum(vec![prod(0, 2), coef(-b, u(0)), coef(-d, u(1))]),
        Expr::sum(vec![coef(d, u(0)), prod(1, 2), coef(-b, u(1))]),
        Expr::sum(vec![
            Expr::Const(c),
            coef(a, u(2)),
            Expr::scaled(-1.0 / 3.0, Expr::pow(u(2), 3.0)),
            Expr::neg(Expr::pow(u(0), 2.0)),
            coef(f, Expr::mul(u(2), Expr::pow(u(0), 3.0))),
        ]),
    ]
}

fn chen_lee(p: &[f64]) -> Vec<Expr> {
    let (a, d) = (p[0], p[1]);
    vec![
        Expr::sum(vec![coef(a, u(0)), Expr::neg(prod(1, 2))]),
        Expr::sum(vec![Expr::scaled(-10.0, u(1)), prod(0, 2)]),
        Expr::sum(vec![coef(d, u(2)), Expr::scaled(1.0 / 3.0, prod(0, 1))]),
    ]
}

fn dadras(p: &[f64]) -> Vec<Expr> {
    let (a, b, c, d, e) = (p[0], p[1], p[2], p[3], p[4]);
    vec![
        Expr::sum(vec![Expr::scaled(0.5, u(1)), coef(-a, u(0)), coef(b, prod(1, 2))]),
        Expr::sum(vec![
            coef(c, u(1)),
            Expr::scaled(-0.5, prod(0, 2)),
            Expr::scaled(0.5, u(2)),
        ]),
        Expr::sum(vec![coef(d, prod(0, 1)), coef(-e, u(2))]),
    ]
}

fn rossler(p: &[f64]) -> Vec<Expr> {
    let (a, b, c) = (p[0], p[1], p[2]);
    vec![
        Expr::sum(vec![Expr::neg(u(1)), Expr::neg(u(2))]),
        Expr::sum(vec![u(0), coef(a, u(1))]),
        Expr::sum(vec![Expr::Const(b), prod(0, 2), coef(-c, u(2))]),
    ]
}

fn halvorsen(p: &[f64]) -> Vec<Expr> {
    let a = p[0];
    (0..3)
        .map(|i| {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            Expr::sum(vec![
                coef(a, u(i)),
                Expr::neg(u(j)),
                Expr::neg(u(k)),
                Expr::scaled(-0.25, Expr::pow(u(j), 2.0)),
            ])
        })
        .collect()
}

fn rabinovich_fabrikant(p: &[f64]) -> Vec<Expr> {
    let (alpha, gamma) = (p[0], p[1]);
    vec![
        Expr::sum(vec![
            prod(1, 2),
            Expr::neg(u(1)),
            Expr::mul(Expr::pow(u(0), 2.0), u(1)),
            coef(gamma, u(0)),
        ]),
        Expr::sum(vec![
            Expr::scaled(3.0, prod(0, 2)),
            u(0),
            Expr::neg(Expr::pow(u(0), 3.0)),
            coef(gamma, u(1)),
        ]),
        Expr::sum(vec![
            coef(-2.0 * alpha, u(2)),
            Expr::scaled(-2.0, Expr::product(vec![u(0), u(1), u(2)])),
        ]),
    ]
}

fn sprott_b(p: &[f64]) -> Vec<Expr> {
    let (a, b, c) = (p[0], p[1], p[2]);
    vec![
        coef(a, prod(1, 2)),
        Expr::sum(vec![u(0), coef(-b, u(1))]),
        Expr::sum(vec![Expr::Const(c), Expr::neg(prod(0, 1))]),
    ]
}

fn sprott_linz_f(p: &[f64]) -> Vec<Expr> {
    let a = p[0];
    vec![
        Expr::sum(vec![u(1), u(2)]),
        Expr::sum(vec![Expr::neg(u(0)), coef(a, u(1))]),
        Expr::sum(vec![Expr::pow(u(0), 2.0), Expr::neg(u(2))]),
    ]
}

fn four_wing(p: &[f64]) -> Vec<Expr> {
    let (a, b, c) = (p[0], p[1], p[2]);
    vec![
        Expr::sum(vec![coef(a, u(0)), prod(1, 2)]),
        Expr::sum(vec![coef(b, u(0)), coef(c, u(1)), Expr::neg(prod(0, 2))]),
        Expr::sum(vec![Expr::neg(u(2)), Expr::neg(prod(0, 1))]),
    ]
}

fn duffing(p: &[f64]) -> Vec<Expr> {
    let (alpha, beta, gamma, delta, omega) = (p[0], p[1], p[2], p[3], p[4]);
    vec![
        Expr::Const(1.0),
        u(2),
        Expr::sum(vec![
            coef(-delta, u(2)),
            coef(-alpha, u(1)),
            coef(-beta, Expr::pow(u(1), 3.0)),
            coef(gamma, Expr::cos(coef(omega, u(0)))),
        ]),
    ]
}

fn lorenz96(n: usize, forcing: f64) -> Vec<Expr> {
    (0..n)
        .map(|i| {
            let prev = (i + n - 1) % n;
            let prev2 = (i + n - 2) % n;
            let next = (i + 1) % n;
            Expr::sum(vec![
                Expr::mul(u(prev), u(next)),
                Expr::neg(Expr::mul(u(prev2), u(prev))),
                Expr::neg(u(i)),
                Expr::Const(forcing),
            ])
        })
        .collect()
}

fn lorenz96_4(p: &[f64]) -> Vec<Expr> {
    lorenz96(4, p[0])
}

fn lorenz96_5(p: &[f64]) -> Vec<Expr> {
    lorenz96(5, p[0])
}

fn double_pendulum(p: &[f64]) -> Vec<Expr> {
    let k = p[0] / p[1];
    let diff = || Expr::sub(u(0), u(1));
    let den = || Expr::sub(Expr::Const(3.0), Expr::cos(Expr::mul(Expr::Const(2.0), diff())));
    let num3 = Expr::sum(vec![
        Expr::mul(Expr::Const(-3.0 * k), Expr::sin(u(0))),
        Expr::mul(
            Expr::Const(-k),
            Expr::sin(Expr::sub(u(0), Expr::mul(Expr::Const(2.0), u(1)))),
        ),
        Expr::mul(
            Expr::Const(-2.0),
            Expr::mul(
                Expr::sin(diff()),
                Expr::add(Expr::pow(u(3), 2.0), Expr::mul(Expr::pow(u(2), 2.0), Expr::cos(diff()))),
            ),
        ),
    ]);
    let num4 = Expr::mul(
        Expr::sin(diff()),
        Expr::sum(vec![
            Expr::mul(Expr::Const(4.0), Expr::pow(u(2), 2.0)),
            Expr::mul(Expr::Const(4.0 * k), Expr::cos(u(0))),
            Expr::mul(Expr::pow(u(3), 2.0), Expr::cos(diff())),
        ]),
    );
    vec![u(2), u(3), Expr::div(num3, den()), Expr::div(num4, den())]
}

static CATALOG: [OdeFamily; 15] = [
    OdeFamily {
        name: "thomas",
        title: "Thomas' cyclically symmetric attractor",
        dim: 3,
        params: &[p("b", 0.17)],
        additive: true,
        build: thomas,
    },
    OdeFamily {
        name: "lorenz3d",
        title: "Lorenz 3D system",
        dim: 3,
        params: &[p("sigma", 10.0), p("beta", 8.0 / 3.0), p("rho", 28.0)],
        additive: true,
        build: lorenz3d,
    },
    OdeFamily {
        name: "aizawa",
        title: "Aizawa attractor",
        dim: 3,
        params: &[
            p("a", 0.95),
            p("b", 0.7),
            p("c", 0.6),
            p("d", 3.5),
            p("e", 0.25),
            p("f", 0.1),
        ],
        additive: true,
        build: aizawa,
    },
    OdeFamily {
        name: "chen_lee",
        title: "Chen-Lee attractor",
        dim: 3,
        params: &[p("a", 5.0), p("d", -0.38)],
        additive: true,
        build: chen_lee,
    },
    OdeFamily {
        name: "dadras",
        title: "Dadras attractor",
        dim: 3,
        params: &[p("a", 1.25), p("b", 1.15), p("c", 0.75), p("d", 0.8), p("e", 4.0)],
        additive: true,
        build: dadras,
    },
    OdeFamily {
        name: "rossler",
        title: "Rössler attractor",
        dim: 3,
        params: &[p("a", 0.1), p("b", 0.1), p("c", 14.0)],
        additive: true,
        build: rossler,
    },
    OdeFamily {
        name: "halvorsen",
        title: "Halvorsen attractor",
        dim: 3,
        params: &[p("a", -0.35)],
        additive: true,
        build: halvorsen,
    },
    OdeFamily {
        name: "rabinovich_fabrikant",
        title: "Rabinovich-Fabrikant equation",
        dim: 3,
        params: &[p("alpha", 0.98), p("gamma", 0.1)],
        additive: true,
        build: rabinovich_fabrikant,
    },
    OdeFamily {
        name: "sprott_b",
        title: "Sprott B attractor",
        dim: 3,
        params: &[p("a", 0.4), p("b", 1.2), p("c", 1.0)],
        additive: true,
        build: sprott_b,
    },
    OdeFamily {
        name: "sprott_linz_f",
        title: "Sprott-Linz F attractor",
        dim: 3,
        params: &[p("a", 0.5)],
        additive: true,
        build: sprott_linz_f,
    },
    OdeFamily {
        name: "four_wing",
        title: "Four-wing chaotic attractor",
        dim: 3,
        params: &[p("a", 0.2), p("b", 0.01), p("c", -0.4)],
        additive: true,
        build: four_wing,
    },
    OdeFamily {
        name: "duffing",
        title: "Duffing equation",
        dim: 3,
        params: &[
            p("alpha", 1.0),
            p("beta", 5.0),
            p("gamma", 8.0),
            p("delta", 0.02),
            p("omega", 0.5),
        ],
        additive: true,
        build: duffing,
    },
    OdeFamily {
        name: "lorenz96_4",
        title: "Lorenz 96 system (N = 4)",
        dim: 4,
        params: &[p("F", 8.0)],
        additive: true,
        build: lorenz96_4,
    },
    OdeFamily {
        name: "double_pendulum",
        title: "Double pendulum",
        dim: 4,
        params: &[p("g", 9.81), p("l", 1.0)],
        additive: false,
        build: double_pendulum,
    },
    OdeFamily {
        name: "lorenz96_5",
        title: "Lorenz 96 system (N = 5)",
        dim: 5,
        params: &[p("F", 8.0)],
        additive: true,
        build: lorenz96_5,
    },
];
