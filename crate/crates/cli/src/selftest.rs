use anyhow::{ensure, Context};
use prose_core::dataset::{child_rng, generate, DatasetConfig, SplitSizes};
use prose_core::integrate::{linspace, solve_fn, SolverConfig};
use prose_core::model::{ModelInput, Prose, ProseConfig};
use prose_core::nn_core::gradcheck::{check_gradients, GRAD_TOLERANCE};
use prose_core::nn_core::{EncoderLayer, Graph, Mask, Mat, ParamStore};
use prose_core::ode_dict::{catalog, sample_instance, SamplingConfig};
use prose_core::symbolic::{encode_float, from_polish, to_polish, SystemExpr, Vocabulary};

type Check = (&'static str, fn() -> anyhow::Result<()>);

const CHECKS: &[Check] = &[
    ("float encoding", float_encoding),
    ("polish roundtrip", polish_roundtrip),
    ("solver", solver),
    ("gradients", gradients),
    ("model contracts", model_contracts),
];

/// Runs every check and fails if any of them fails.
pub fn run() -> anyhow::Result<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
    ensure!(failed == 0, "{failed} of {} self-tests failed", CHECKS.len());
    Ok(())
}

fn float_encoding() -> anyhow::Result<()> {
    let words = encode_float(2.6, 3)?.words().map(|w| w.to_string());
    ensure!(words == ["+", "260", "E-2"], "2.6 encoded as {words:?}");
    Ok(())
}

fn polish_roundtrip() -> anyhow::Result<()> {
    let vocab = Vocabulary::default();
    let sampling = SamplingConfig::default();
    for (k, fam) in catalog().iter().enumerate() {
        let mut rng = child_rng(0, "selftest", k as u64);
        for _ in 0..20 {
            let (sys, _) = sample_instance(fam, &sampling, &mut rng);
            let back = from_polish(to_polish(&sys, &vocab)?.ids(), &vocab)
                .with_context(|| format!("{} does not parse back", fam.name))?;
            let (a, b) = (coefficients(&sys), coefficients(&back));
            ensure!(a.len() == b.len(), "{}: roundtrip changes the structure", fam.name);
            for (x, y) in a.iter().zip(&b) {
                let rel = (x - y).abs() / x.abs();
                ensure!(rel <= 5e-3, "{}: constant {x} comes back as {y}", fam.name);
            }
        }
    }
    Ok(())
}

fn coefficients(sys: &SystemExpr) -> Vec<f64> {
    let mut out = Vec::new();
    for c in sys.components() {
        c.for_each_coefficient(&mut |x| out.push(x));
    }
    out
}

fn solver() -> anyhow::Result<()> {
    let cfg = SolverConfig::default();
    let mut decay = |_: f64, u: &[f64], out: &mut [f64]| {
        out[0] = -u[0];
        true
    };
    let t = solve_fn(&mut decay, &[1.0], &linspace(0.0, 1.0, 11), &cfg)?;
    let err = (t.row(10)[0] - (-1.0f64).exp()).abs();
    ensure!(err < 1e-4, "u' = -u off by {err:.2e} at t = 1");

    let mut osc = |_: f64, u: &[f64], out: &mut [f64]| {
        out[0] = u[1];
        out[1] = -u[0];
        true
    };
    let tau = 2.0 * std::f64::consts::PI;
    let t = solve_fn(&mut osc, &[1.0, 0.0], &linspace(0.0, tau, 9), &cfg)?;
    let end = t.row(8);
    let err = ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt();
    ensure!(err < 1e-3, "oscillator off by {err:.2e} after one period");
    Ok(())
}

fn gradients() -> anyhow::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = child_rng(0, "selftest-grad", 0);
    let layer = EncoderLayer::new(&mut store, "enc", 8, 2, 16, &mut rng);
    let x = Mat::from_fn(5, 8, |i, j| ((i * 8 + j) as f64 * 0.7).sin());
    let target = Mat::from_fn(5, 8, |i, j| ((i + 2 * j) as f64 * 0.3).cos());
    let checks = check_gradients(&store, 16, |g: &mut Graph| {
        let xv = g.input(x.clone());
        let (y, _) = layer.forward(g, xv, &Mask::Causal);
        g.rel_squared(y, &target, &[true; 8])
    });
    for c in checks {
        ensure!(
            c.rel_error < GRAD_TOLERANCE,
            "{}: relative error {:.2e}",
            c.param,
            c.rel_error
        );
    }
    Ok(())
}

fn model_contracts() -> anyhow::Result<()> {
    let one = SplitSizes {
        instances: 1,
        ics_per_instance: 1,
    };
    let sample = generate(&DatasetConfig::desk(), one, 0)?.remove(0);
    let model = Prose::new(ProseConfig::desk(), 0)?;
    let x = ModelInput::from_sample(&sample)?;
    let q = &sample.query_times;
    let full = model.predict_trajectory(&x, q)?;
    ensure!(full.is_finite(), "non-finite prediction");
    for (i, &t) in q.iter().enumerate().step_by(7) {
        let single = model.predict_trajectory(&x, &[t])?;
        ensure!(single.row(0) == full.row(i), "query {i} depends on the other queries");
    }
    let pred = model.predict(&x, q, 8)?;
    ensure!(pred.symbol.is_some(), "multimodal model produced no symbol output");
    Ok(())
}
