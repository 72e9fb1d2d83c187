//! Monte-Carlo relative error between two velocity maps.

use rand::Rng;

use super::expr::SystemExpr;
use super::SymbolicError;

/// Number of draws allowed per requested point before the point is skipped.
const ATTEMPTS_PER_POINT: usize = 10;

/// Mean over `n_points` uniform draws in `[-half_width, half_width]^d` of
/// `|f(u) - f_hat(u)|_2 / |f(u)|_2`.
///
/// Draws where either map fails to evaluate, or where `f(u) = 0`, are
/// redrawn; a point that fails ten times is skipped.
pub fn expression_error<R: Rng + ?Sized>(
    f: &SystemExpr,
    f_hat: &SystemExpr,
    n_points: usize,
    half_width: f64,
    rng: &mut R,
) -> Result<f64, SymbolicError> {
    if f.dim() != f_hat.dim() {
        return Err(SymbolicError::DimensionMismatch {
            expected: f.dim(),
            found: f_hat.dim(),
        });
    }
    let d = f.dim();
    let mut u = vec![0.0; d];
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..n_points {
        for _ in 0..ATTEMPTS_PER_POINT {
            for x in u.iter_mut() {
                *x = rng.random_range(-half_width..=half_width);
            }
            let (Ok(a), Ok(b)) = (f.evaluate(&u), f_hat.evaluate(&u)) else {
                continue;
            };
            let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if den == 0.0 {
                continue;
            }
            let num = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            total += num / den;
            count += 1;
            break;
        }
    }
    if count == 0 {
        return Err(SymbolicError::Domain("no admissible sample point"));
    }
    Ok(total / count as f64)
}
