//! Central finite-difference checks of [`Graph::backward`].

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Gradient norms below this, times `max(1, |loss|)`, are treated as zero;
/// finite differences carry rounding noise of roughly `1e-11 |loss|`.
pub const ZERO_GRAD_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub param: String,
    /// `|a - n| / max(|a|, |n|, ZERO_GRAD_FLOOR max(1, |loss|))` over the probed entries of one tensor.
    pub rel_error: f64,
    pub probed: usize,
}

/// Relative error of the analytic gradient of every parameter, probing at
/// most `max_entries` entries per tensor: the largest analytic entries
/// first, then an even stride over the rest.
pub fn check_gradients<F>(store: &ParamStore, max_entries: usize, build: F) -> Vec<GradCheck>
where
    F: Fn(&mut Graph) -> Var,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let loss = build(&mut g);
        g.scalar(loss)
    };
    let floor = ZERO_GRAD_FLOOR * eval(store).abs().max(1.0);
    let mut probe = store.clone();
    let mut out = Vec::new();
    for p in store.ids() {
        let n = store.get(p).data.len();
        let analytic = grads.get(p).map(|m| m.data.clone()).unwrap_or_else(|| vec![0.0; n]);
        let entries = pick_entries(&analytic, max_entries);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &entries {
            let numeric = fd_entry(&mut probe, p, i, &eval);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let scale = na.max(nn).sqrt();
        let rel_error = diff.sqrt() / scale.max(floor);
        out.push(GradCheck {
            param: store.name(p).to_string(),
            rel_error,
            probed: entries.len(),
        });
    }
    out
}

fn fd_entry(probe: &mut ParamStore, p: ParamId, i: usize, eval: &impl Fn(&ParamStore) -> f64) -> f64 {
    let orig = probe.get(p).data[i];
    probe.get_mut(p).data[i] = orig + FD_STEP;
    let up = eval(probe);
    probe.get_mut(p).data[i] = orig - FD_STEP;
    let down = eval(probe);
    probe.get_mut(p).data[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn pick_entries(analytic: &[f64], max_entries: usize) -> Vec<usize> {
    let n = analytic.len();
    if n <= max_entries {
        return (0..n).collect();
    }
    let mut by_size: Vec<usize> = (0..n).collect();
    by_size.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()).then(a.cmp(&b)));
    let mut picked: Vec<usize> = by_size[..max_entries / 2].to_vec();
    let stride = n / (max_entries - picked.len());
    let rest: Vec<usize> = (0..n)
        .step_by(stride.max(1))
        .filter(|i| !picked.contains(i))
        .take(max_entries - picked.len())
        .collect();
    picked.extend(rest);
    picked.sort_unstable();
    picked
}

/// Panics unless every parameter passes at [`GRAD_TOLERANCE`].
pub fn check_params<F>(store: &ParamStore, build: F)
where
    F: Fn(&mut Graph) -> Var,
{
    for c in check_gradients(store, 64, build) {
        assert!(
            c.rel_error < GRAD_TOLERANCE,
            "{}: relative error {:.3e}",
            c.param,
            c.rel_error
        );
    }
}
