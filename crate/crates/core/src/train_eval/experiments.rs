use serde::{Deserialize, Serialize};

use crate::dataset::{generate_split, DatasetConfig, Sample, Split};
use crate::model::{ModelError, ModelInput, Prediction, Prose, ProseConfig};

use super::eval::{evaluate, EvalConfig, MetricsReport, Predictor};
use super::train::train;
use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub lambda: f64,
    pub report: MetricsReport,
}

/// Evaluates on test sets regenerated at each coefficient half-width
/// `lambda`. Every set uses the same master seed, so the draws behind
/// coefficients, initial conditions and noise are shared across `lambda`
/// and only the coefficient spread changes.
pub fn ood_sweep(
    p: &impl Predictor,
    data_cfg: &DatasetConfig,
    lambdas: &[f64],
    seed: u64,
    eval_cfg: &EvalConfig,
) -> Result<Vec<OodRow>, TrainError> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut cfg = data_cfg.clone();
            cfg.sampling.lambda = lambda;
            let test = generate_split(&cfg, Split::Test, seed)?;
            log::info!("ood lambda {lambda}: {} samples", test.len());
            Ok(OodRow {
                lambda,
                report: evaluate(p, &test, eval_cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub input_points: usize,
    pub multimodal_params: usize,
    pub data_only_params: usize,
    /// Test errors on [2,6], in percent.
    pub multimodal_error_2_6_pct: f64,
    pub data_only_error_2_6_pct: f64,
}

/// Trains a multimodal and a data-only model per input size on identical
/// data and initial seeds, then evaluates both on the shared label grid.
pub fn input_length_ablation(
    data_cfg: &DatasetConfig,
    model_cfg: &ProseConfig,
    train_cfg: &TrainConfig,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut cfg = data_cfg.clone();
        cfg.grid.input_points = n;
        cfg.validate()?;
        let train_set = generate_split(&cfg, Split::Train, seed)?;
        let val = generate_split(&cfg, Split::Val, seed)?;
        let test = generate_split(&cfg, Split::Test, seed)?;
        let run = |mc: ProseConfig| -> Result<(usize, f64), TrainError> {
            let mut m = Prose::new(mc, seed)?;
            train(&mut m, &train_set, &val, train_cfg)?;
            let r = evaluate(&DataOnlyView(&m), &test, &EvalConfig::default())?;
            Ok((m.store.num_scalars(), r.error_2_6_pct))
        };
        let (multimodal_params, multimodal_error_2_6_pct) = run(model_cfg.clone())?;
        let (data_only_params, data_only_error_2_6_pct) = run(model_cfg.data_only())?;
        log::info!(
            "ablation {n} points: multimodal {multimodal_error_2_6_pct:.3}% data-only {data_only_error_2_6_pct:.3}%"
        );
        rows.push(AblationRow {
            input_points: n,
            multimodal_params,
            data_only_params,
            multimodal_error_2_6_pct,
            data_only_error_2_6_pct,
        });
    }
    Ok(rows)
}

/// Trajectory-only evaluation of a model; symbol decoding is skipped.
struct DataOnlyView<'a>(&'a Prose);

impl Predictor for DataOnlyView<'_> {
    fn predict_sample(&self, s: &Sample, _: usize) -> Result<Prediction, ModelError> {
        let x = ModelInput::from_sample(s)?;
        self.0
            .predict_trajectory(&x, &s.query_times)
            .map(|trajectory| Prediction {
                trajectory,
                symbol: None,
            })
    }

    fn max_symbol_len(&self) -> usize {
        0
    }
}

pub fn ood_csv(rows: &[OodRow]) -> String {
    let mut out = String::from("lambda,relative_prediction_error_2_4_pct,relative_prediction_error_2_6_pct,valid_expressions_pct,relative_expression_error_pct\n");
    for r in rows {
        let s = r.report.symbol.as_ref();
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{}\n",
            r.lambda,
            r.report.error_2_4_pct,
            r.report.error_2_6_pct,
            opt(s.map(|s| s.valid_pct)),
            opt(s.and_then(|s| s.expr_error_pct)),
        ));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "input_points,multimodal_error_2_6_pct,data_only_error_2_6_pct,multimodal_params,data_only_params\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{}\n",
            r.input_points,
            r.multimodal_error_2_6_pct,
            r.data_only_error_2_6_pct,
            r.multimodal_params,
            r.data_only_params
        ));
    }
    out
}
