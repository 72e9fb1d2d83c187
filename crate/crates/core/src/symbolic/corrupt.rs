//! Corruption of symbolic guesses: unknown coefficients, term deletion and
//! term addition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::expr::{Expr, SystemExpr};
use super::SymbolicError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Replace every coefficient with a placeholder.
    pub unknown_coefficients: bool,
    /// Per-component probability of deleting one additive term.
    pub deletion_prob: f64,
    /// Per-component probability of inserting one spurious term.
    pub addition_prob: f64,
}

impl CorruptionConfig {
    pub const NONE: CorruptionConfig = CorruptionConfig {
        unknown_coefficients: false,
        deletion_prob: 0.0,
        addition_prob: 0.0,
    };

    pub const SKELETON: CorruptionConfig = CorruptionConfig {
        unknown_coefficients: true,
        deletion_prob: 0.0,
        addition_prob: 0.0,
    };

    pub const UNKNOWN: CorruptionConfig = CorruptionConfig {
        unknown_coefficients: true,
        deletion_prob: 0.15,
        addition_prob: 0.15,
    };

    pub fn edits_terms(&self) -> bool {
        self.deletion_prob > 0.0 || self.addition_prob > 0.0
    }

    /// The same configuration with term edits switched off.
    pub fn without_term_edits(&self) -> CorruptionConfig {
        CorruptionConfig {
            deletion_prob: 0.0,
            addition_prob: 0.0,
            ..*self
        }
    }
}

/// Draw one term from the addition pool: `c*u_i`, `c*u_i*u_j`, `c*u_i^2`,
/// `c*sin(u_i)` or `c*cos(u_i)` with `c ~ U[-1, 1]`.
pub fn sample_pool_term<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Expr {
    let c = rng.random_range(-1.0..=1.0);
    let i = rng.random_range(0..dim);
    let body = match rng.random_range(0..5) {
        0 => Expr::var(i),
        1 => {
            let j = rng.random_range(0..dim);
            Expr::mul(Expr::var(i.min(j)), Expr::var(i.max(j)))
        }
        2 => Expr::pow(Expr::var(i), 2.0),
        3 => Expr::sin(Expr::var(i)),
        _ => Expr::cos(Expr::var(i)),
    };
    Expr::mul(Expr::Const(c), body)
}

/// Apply deletion, then addition, then coefficient masking.
///
/// Term edits require every component to be a right-associated sum of terms
/// free of `add`/`sub`; coefficient masking works on any tree.
pub fn corrupt<R: Rng + ?Sized>(
    sys: &SystemExpr,
    cfg: &CorruptionConfig,
    rng: &mut R,
) -> Result<SystemExpr, SymbolicError> {
    let dim = sys.dim();
    let mut components = Vec::with_capacity(dim);
    for (j, comp) in sys.components().iter().enumerate() {
        let mut comp = comp.clone();
        if cfg.edits_terms() {
            let mut terms = comp.into_terms();
            if !terms.iter().all(Expr::is_term) {
                return Err(SymbolicError::NotInAdditiveForm { component: j });
            }
            if cfg.deletion_prob > 0.0 && rng.random::<f64>() < cfg.deletion_prob && terms.len() > 1 {
                let k = rng.random_range(0..terms.len());
                terms.remove(k);
            }
            if cfg.addition_prob > 0.0 && rng.random::<f64>() < cfg.addition_prob {
                let term = sample_pool_term(dim, rng);
                let k = rng.random_range(0..=terms.len());
                terms.insert(k, term);
            }
            comp = Expr::sum(terms);
        }
        if cfg.unknown_coefficients {
            comp = comp.map_coefficients(&mut |_| Expr::Placeholder);
        }
        components.push(comp);
    }
    SystemExpr::new(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_terms() -> SystemExpr {
        SystemExpr::new(vec![
            Expr::sum(vec![
                Expr::scaled(2.0, Expr::var(0)),
                Expr::neg(Expr::var(1)),
                Expr::mul(Expr::Const(-0.25), Expr::pow(Expr::var(1), 2.0)),
            ]),
            Expr::var(0),
        ])
        .unwrap()
    }

    #[test]
    fn all_off_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = three_terms();
        assert_eq!(corrupt(&s, &CorruptionConfig::NONE, &mut rng).unwrap(), s);
    }

    #[test]
    fn skeleton_keeps_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = three_terms();
        let c = corrupt(&s, &CorruptionConfig::SKELETON, &mut rng).unwrap();
        assert!(c.coefficients().is_empty());
        assert_eq!(c.components()[0].node_count(), s.components()[0].node_count());
        assert_eq!(c.components()[0].to_string(), "?*u_1 - u_2 + ?*u_2^2");
    }

    #[test]
    fn forced_deletion_removes_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CorruptionConfig {
            unknown_coefficients: false,
            deletion_prob: 1.0,
            addition_prob: 0.0,
        };
        let c = corrupt(&three_terms(), &cfg, &mut rng).unwrap();
        assert_eq!(c.components()[0].terms().len(), 2);
    }

    #[test]
    fn deletion_never_empties_a_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CorruptionConfig {
            unknown_coefficients: false,
            deletion_prob: 1.0,
            addition_prob: 0.0,
        };
        let s = SystemExpr::new(vec![Expr::var(0)]).unwrap();
        assert_eq!(corrupt(&s, &cfg, &mut rng).unwrap(), s);
    }

    #[test]
    fn forced_addition_adds_pool_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = CorruptionConfig {
            unknown_coefficients: false,
            deletion_prob: 0.0,
            addition_prob: 1.0,
        };
        let c = corrupt(&three_terms(), &cfg, &mut rng).unwrap();
        assert_eq!(c.components()[0].terms().len(), 4);
        for _ in 0..200 {
            let t = sample_pool_term(3, &mut rng);
            let mut cs = Vec::new();
            t.for_each_coefficient(&mut |x| cs.push(x));
            assert_eq!(cs.len(), 1);
            assert!((-1.0..=1.0).contains(&cs[0]));
            assert!(t.max_var().unwrap() < 3);
        }
    }

    #[test]
    fn term_edits_need_additive_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = SystemExpr::new(vec![Expr::sin(Expr::sub(Expr::var(0), Expr::Const(1.0)))]).unwrap();
        assert!(matches!(
            corrupt(&s, &CorruptionConfig::UNKNOWN, &mut rng),
            Err(SymbolicError::NotInAdditiveForm { component: 0 })
        ));
        // Masking alone is fine on any tree.
        assert!(corrupt(&s, &CorruptionConfig::SKELETON, &mut rng).is_ok());
    }
}
