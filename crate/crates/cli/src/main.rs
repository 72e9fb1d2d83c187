mod config;
mod selftest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use prose_core::dataset::{read_dataset, write_dataset, write_jsonl, Sample, Split};
use prose_core::model::{load_checkpoint, save_checkpoint, write_attention_csv, ModelInput, Prose};
use prose_core::symbolic::{from_polish, TokenSeq, Vocabulary};
use prose_core::train_eval::{
    ablation_csv, evaluate, input_length_ablation, loss_curve_csv, metrics_csv, ood_csv, ood_sweep, train_with,
    AblationRow, MetricsReport, OodRow, TrainReport,
};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "prose", version, about = "Trajectory and equation learning for ODE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration in JSON; the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved run configuration as JSON.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the train, val and test splits.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSON-lines copy of each split.
        #[arg(long)]
        jsonl: bool,
    },
    /// Train a model on generated splits.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accept datasets produced under a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file, e.g. `data/test.bin`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accept a dataset or checkpoint produced under a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Predict one sample: trajectory CSV followed by target and generated equations.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Record index within the dataset file.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Evaluate a checkpoint on test sets with widened coefficient ranges.
    Ood {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.10, 0.15, 0.20])]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train multimodal and data-only models at several input lengths.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export fusion attention maps of one sample as CSV.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks.
    Selftest,
}

/// Artifact wrapper carrying the producing configuration's hash.
#[derive(Serialize)]
struct Stamped<'a, T> {
    config_hash: String,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, hash: [u8; 32], body: &T) -> anyhow::Result<()> {
    let stamped = Stamped {
        config_hash: hex::encode(hash),
        body,
    };
    let mut text = serde_json::to_string_pretty(&stamped)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn check_hash(what: &str, found: [u8; 32], expected: [u8; 32], force: bool) -> anyhow::Result<()> {
    if found == expected {
        return Ok(());
    }
    let msg = format!(
        "{what} was produced under config {} but the current config is {}",
        hex::encode(found),
        hex::encode(expected)
    );
    if force {
        warn!("{msg}; continuing because of --force");
        Ok(())
    } else {
        bail!("{msg}; pass --force to proceed")
    }
}

fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.bin", split.name()))
}

fn load_split(path: &Path, cfg_hash: [u8; 32], force: bool) -> anyhow::Result<Vec<Sample>> {
    let (header, samples) = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    check_hash(
        &format!("dataset {}", path.display()),
        header.config_hash,
        cfg_hash,
        force,
    )?;
    Ok(samples)
}

fn load_model(path: &Path, cfg_hash: Option<[u8; 32]>, force: bool) -> anyhow::Result<Prose> {
    let (header, model) = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(h) = cfg_hash {
        check_hash(&format!("checkpoint {}", path.display()), header.config_hash, h, force)?;
    }
    Ok(model)
}

fn load_sample(path: &Path, index: usize) -> anyhow::Result<Sample> {
    let (_, samples) = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    let n = samples.len();
    samples
        .into_iter()
        .nth(index)
        .with_context(|| format!("sample {index} out of range; {} has {n} records", path.display()))
}

fn gen(cfg: &RunConfig, out: &Path, jsonl: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    for split in [Split::Train, Split::Val, Split::Test] {
        let samples = prose_core::dataset::generate_split(&cfg.dataset, split, cfg.seed)?;
        let path = split_path(out, split);
        write_dataset(&path, hash, &samples)?;
        if jsonl {
            write_jsonl(&path.with_extension("jsonl"), &samples)?;
        }
        info!("{}: {} samples -> {}", split.name(), samples.len(), path.display());
    }
    write_text(&out.join("config.json"), &(serde_json::to_string_pretty(cfg)? + "\n"))
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> anyhow::Result<()> {
    let hash = cfg.hash();
    let train_set = load_split(&split_path(data, Split::Train), hash, force)?;
    let val = load_split(&split_path(data, Split::Val), hash, force)?;
    fs::create_dir_all(out)?;
    let mut model = Prose::new(cfg.model.clone(), cfg.seed)?;
    info!(
        "training {} parameters on {} samples, validating on {}",
        model.store.num_scalars(),
        train_set.len(),
        val.len()
    );
    let report: TrainReport = train_with(&mut model, &train_set, &val, &cfg.train, |e, _| {
        info!(
            "epoch {} step {}: train {:.5} val {:.5} (data {:.5}, symbol {:.5})",
            e.epoch, e.step, e.train_loss, e.val_loss, e.val_data, e.val_symbol
        );
    })?;
    save_checkpoint(&out.join("model.ckpt"), &model, hash)?;
    write_text(&out.join("loss_curve.csv"), &loss_curve_csv(&report))?;
    write_json(&out.join("train_report.json"), hash, &report)?;
    info!("best epoch {}; wrote {}", report.best_epoch, out.display());
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path, force: bool) -> anyhow::Result<()> {
    let hash = cfg.hash();
    let model = load_model(ckpt, Some(hash), force)?;
    let test = load_split(data, hash, force)?;
    let report: MetricsReport = evaluate(&model, &test, &cfg.eval)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), hash, &report)?;
    let csv = metrics_csv(&data.display().to_string(), &report);
    write_text(&out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn predict_cmd(ckpt: &Path, data: &Path, index: usize) -> anyhow::Result<()> {
    let model = load_model(ckpt, None, false)?;
    let s = load_sample(data, index)?;
    let x = ModelInput::from_sample(&s)?;
    let pred = model.predict(&x, &s.query_times, model.cfg.max_symbol_len)?;
    let d = s.dim as usize;
    let header: Vec<String> = (1..=d).map(|j| format!("u_{j}")).collect();
    println!("t,{}", header.join(","));
    for (i, t) in s.query_times.iter().enumerate() {
        let row: Vec<String> = pred.trajectory.row(i)[..d].iter().map(|v| v.to_string()).collect();
        println!("{t},{}", row.join(","));
    }
    let vocab = Vocabulary::default();
    println!();
    print_equation("target", s.symbol_target.ids(), &vocab, false);
    match pred.symbol {
        Some(g) => print_equation("generated", &g.tokens, &vocab, g.truncated),
        None => println!("# generated: none (data-only model)"),
    }
    Ok(())
}

fn print_equation(label: &str, ids: &[u32], vocab: &Vocabulary, truncated: bool) {
    let seq = TokenSeq(ids.to_vec());
    let trunc = if truncated { " (truncated)" } else { "" };
    println!("# {label} polish{trunc}: {}", seq.to_words(vocab));
    match from_polish(ids, vocab) {
        Ok(sys) => {
            for line in sys.to_string().lines() {
                println!("# {label} infix: {line}");
            }
        }
        Err(e) => println!("# {label} infix: unparseable ({e})"),
    }
}

fn ood_cmd(cfg: &RunConfig, ckpt: &Path, lambdas: &[f64], out: &Path, force: bool) -> anyhow::Result<()> {
    let hash = cfg.hash();
    let model = load_model(ckpt, Some(hash), force)?;
    let rows: Vec<OodRow> = ood_sweep(&model, &cfg.dataset, lambdas, cfg.seed, &cfg.eval)?;
    fs::create_dir_all(out)?;
    let csv = ood_csv(&rows);
    write_text(&out.join("ood.csv"), &csv)?;
    write_json(&out.join("ood.json"), hash, &serde_json::json!({ "rows": rows }))?;
    print!("{csv}");
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, sizes: &[usize], out: &Path) -> anyhow::Result<()> {
    let hash = cfg.hash();
    let rows: Vec<AblationRow> = input_length_ablation(&cfg.dataset, &cfg.model, &cfg.train, sizes, cfg.seed)?;
    fs::create_dir_all(out)?;
    let csv = ablation_csv(&rows);
    write_text(&out.join("ablation.csv"), &csv)?;
    write_json(&out.join("ablation.json"), hash, &serde_json::json!({ "rows": rows }))?;
    print!("{csv}");
    Ok(())
}

fn attn_cmd(ckpt: &Path, data: &Path, index: usize, out: &Path) -> anyhow::Result<()> {
    let model = load_model(ckpt, None, false)?;
    let s = load_sample(data, index)?;
    let maps = model.export_attention(&ModelInput::from_sample(&s)?)?;
    fs::create_dir_all(out)?;
    let files = write_attention_csv(out, &maps)?;
    info!("wrote {} attention maps to {}", files.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Config { common } => {
            println!("{}", serde_json::to_string_pretty(&common.resolve()?)?);
            Ok(())
        }
        Command::Gen { common, out, jsonl } => gen(&common.resolve()?, &out, jsonl),
        Command::Train {
            common,
            data,
            out,
            force,
        } => train_cmd(&common.resolve()?, &data, &out, force),
        Command::Eval {
            common,
            ckpt,
            data,
            out,
            force,
        } => eval_cmd(&common.resolve()?, &ckpt, &data, &out, force),
        Command::Predict { ckpt, data, sample } => predict_cmd(&ckpt, &data, sample),
        Command::Ood {
            common,
            ckpt,
            lambdas,
            out,
            force,
        } => ood_cmd(&common.resolve()?, &ckpt, &lambdas, &out, force),
        Command::Ablate { common, sizes, out } => ablate_cmd(&common.resolve()?, &sizes, &out),
        Command::Attn {
            ckpt,
            data,
            sample,
            out,
        } => attn_cmd(&ckpt, &data, sample, &out),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
