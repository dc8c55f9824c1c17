//! Command-line runner: generate corpora, train, evaluate, probe, adapt and
//! run the named experiments.
//!
//! Reports go to `--out` (and stdout); timestamps only ever go to
//! `<out>/run.log`. Failures print one JSON line to stderr and exit with
//! 2 (missing file), 3 (invalid config or usage), 4 (numerical failure) or
//! 1 (anything else).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use dnnlab::adaptation::AdaptSettings;
use dnnlab::corpus::{Dataset, Generator, Split};
use dnnlab::diagnostics::{PairSet, ProbeReport};
use dnnlab::experiment::{self, adapt_by_speaker, model_hash, sha256_hex, ExperimentConfig, Report};
use dnnlab::network::{frame_accuracy, train, Network};
use dnnlab::Error;

#[derive(Parser)]
#[command(name = "dnnlab", version, about = "Deep network invariance lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the corpus and training seeds of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the report printed to stdout.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network; writes model.json and loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Frame accuracy of a model on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Saturation, gain norms, weight statistics and paired distances.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset frame-aligned with `--data` (same content, other condition).
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Per-speaker unsupervised fDLR adaptation; writes one transform per
    /// speaker under `transforms/`.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Undistorted counterpart of `--data`, for reference accuracy.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run a named experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// One of depth-sweep, shrinkage, mixed-band, speaker-adapt, noise-robust.
        name: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Probe { .. } => "probe",
            Command::Adapt { .. } => "adapt",
            Command::Experiment { .. } => "experiment",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Gen { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Probe { common, .. }
            | Command::Adapt { common, .. }
            | Command::Experiment { common, .. } => common,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 2,
        Error::InvalidConfig(_) | Error::Parse { .. } | Error::Json(_) => 3,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::MissingFile(_) => "missing_file",
        Error::InvalidConfig(_) => "invalid_config",
        Error::Parse { .. } | Error::Json(_) => "parse",
        e if e.is_numerical() => "numerical",
        Error::Shape(_) => "shape",
        Error::InvalidInput(_) | Error::InvalidLabel { .. } => "invalid_input",
        _ => "io",
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail("usage", 3, first);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), exit_code(&e), &e.to_string()),
    }
}

/// Resolved config and the directory outputs go to.
fn setup(common: &Common) -> dnnlab::Result<(ExperimentConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = cfg.resolve()?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::InvalidConfig(format!("output directory {} not writable: {e}", out.display())))?;
    Ok((cfg, out))
}

fn log(out: &Path, command: &str, detail: &str) {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let host = std::env::var("HOSTNAME").unwrap_or_default();
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(out.join("run.log")) {
        let _ = writeln!(f, "ts={ts} host={host} pid={} command={command} {detail}", std::process::id());
    }
}

/// `key,value` rows for every leaf of a JSON document.
fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, rows)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&key(&i.to_string()), v, rows)),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn to_csv(json: &str) -> dnnlab::Result<String> {
    let v: Value = serde_json::from_str(json)?;
    let mut rows = Vec::new();
    flatten("", &v, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    Ok(out)
}

/// Write `<name>.json` and print the report in the chosen format.
fn emit(out: &Path, name: &str, json: &str, csv: Option<String>, format: Format) -> dnnlab::Result<()> {
    std::fs::write(out.join(format!("{name}.json")), json)?;
    let text = match format {
        Format::Json => json.to_string(),
        Format::Csv => match csv {
            Some(c) => c,
            None => to_csv(json)?,
        },
    };
    print!("{text}");
    Ok(())
}

fn file_hash(path: &Path) -> dnnlab::Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Hash of the config together with the input files of a command.
fn inputs_hash(cfg: &ExperimentConfig, files: &[&Path]) -> dnnlab::Result<String> {
    #[derive(Serialize)]
    struct Inputs<'a> {
        config: &'a ExperimentConfig,
        files: Vec<String>,
    }
    let files = files.iter().map(|p| file_hash(p)).collect::<dnnlab::Result<Vec<_>>>()?;
    experiment::config_hash(&Inputs { config: cfg, files })
}

#[derive(Serialize)]
struct GenResults {
    train_utterances: usize,
    test_utterances: usize,
    train_frames: usize,
    test_frames: usize,
    train_class_histogram: Vec<usize>,
    train_sha256: String,
    test_sha256: String,
}

#[derive(Serialize)]
struct TrainResults {
    layer_sizes: Vec<usize>,
    parameters: usize,
    epoch_losses: Vec<f64>,
    train_accuracy: f64,
    model_sha256: String,
}

#[derive(Serialize)]
struct EvalResults {
    frames: usize,
    accuracy: f64,
    frame_error_rate: f64,
    model_sha256: String,
}

#[derive(Serialize)]
struct AdaptResults {
    settings: AdaptSettings,
    distorted_accuracy: f64,
    adapted_accuracy: f64,
    speakers: Vec<experiment::SpeakerResult>,
}

fn run(cmd: &Command) -> dnnlab::Result<()> {
    let common = cmd.common();
    let (cfg, out) = setup(common)?;
    log(&out, cmd.name(), "start");
    let format = common.format;
    match cmd {
        Command::Gen { .. } => {
            let g = Generator::new(cfg.corpus_spec()?)?;
            let train_set = g.split(Split::Train)?;
            let test_set = g.split(Split::Test)?;
            let (tp, ep) = (out.join("train.utt"), out.join("test.utt"));
            train_set.save(&tp)?;
            test_set.save(&ep)?;
            let results = GenResults {
                train_utterances: train_set.len(),
                test_utterances: test_set.len(),
                train_frames: train_set.frame_count(),
                test_frames: test_set.frame_count(),
                train_class_histogram: train_set.class_histogram(),
                train_sha256: file_hash(&tp)?,
                test_sha256: file_hash(&ep)?,
            };
            emit(&out, "gen", &Report::new("gen", cfg.hash()?, results).to_json()?, None, format)?;
        }
        Command::Train { data, .. } => {
            let train_set = match data {
                Some(p) => Dataset::load(p)?,
                None => Generator::new(cfg.corpus_spec()?)?.split(Split::Train)?,
            };
            let frames = cfg.front_end.frames_all(&train_set)?;
            let sizes = cfg.layer_sizes()?;
            let init = Network::init(&sizes, cfg.train.seed, cfg.train.init_scale)?;
            let outcome = train(&init, &frames, &cfg.train)?;
            outcome.network.save(&out.join("model.json"))?;
            let mut loss = String::from("epoch,loss\n");
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                loss.push_str(&format!("{},{l:?}\n", i + 1));
            }
            std::fs::write(out.join("loss.csv"), loss)?;
            let hash = match data {
                Some(p) => inputs_hash(&cfg, &[p])?,
                None => cfg.hash()?,
            };
            let results = TrainResults {
                layer_sizes: sizes,
                parameters: outcome.network.parameter_count(),
                train_accuracy: frame_accuracy(&outcome.network, &frames)?,
                epoch_losses: outcome.epoch_losses,
                model_sha256: model_hash(&outcome.network),
            };
            emit(&out, "train", &Report::new("train", hash, results).to_json()?, None, format)?;
        }
        Command::Eval { model, data, .. } => {
            let net = Network::load(model)?;
            let frames = cfg.front_end.frames_all(&Dataset::load(data)?)?;
            let accuracy = frame_accuracy(&net, &frames)?;
            let results = EvalResults {
                frames: frames.len(),
                accuracy,
                frame_error_rate: 1.0 - accuracy,
                model_sha256: model_hash(&net),
            };
            let hash = inputs_hash(&cfg, &[model, data])?;
            emit(&out, "eval", &Report::new("eval", hash, results).to_json()?, None, format)?;
        }
        Command::Probe { model, data, pairs, .. } => {
            let net = Network::load(model)?;
            let frames = cfg.front_end.frames_all(&Dataset::load(data)?)?;
            let paired = match pairs {
                Some(p) => {
                    let b = cfg.front_end.frames_all(&Dataset::load(p)?)?;
                    if b.len() != frames.len() {
                        return Err(Error::Shape(format!(
                            "pair dataset has {} frames, data has {}",
                            b.len(),
                            frames.len()
                        )));
                    }
                    Some(PairSet {
                        a: frames.inputs.clone(),
                        b: b.inputs,
                    })
                }
                None => None,
            };
            let sample = probe_sample(&frames, cfg.probe.frames)?;
            let report = ProbeReport::measure(&net, &sample, paired.as_ref(), &cfg.probe.settings())?;
            let mut files: Vec<&Path> = vec![model, data];
            if let Some(p) = pairs {
                files.push(p);
            }
            let hash = inputs_hash(&cfg, &files)?;
            let csv = report.to_csv();
            std::fs::write(out.join("probe.csv"), &csv)?;
            emit(&out, "probe", &Report::new("probe", hash, report).to_json()?, Some(csv), format)?;
        }
        Command::Adapt { model, data, reference, .. } => {
            let net = Network::load(model)?;
            let distorted = Dataset::load(data)?;
            let reference_set = reference.as_deref().map(Dataset::load).transpose()?;
            let speakers = adapt_by_speaker(&net, &cfg.front_end, &distorted, reference_set.as_ref(), &cfg.adapt)?;
            let dir = out.join("transforms");
            std::fs::create_dir_all(&dir)?;
            for s in &speakers {
                if let Some(t) = &s.transform {
                    let stem: String = s
                        .speaker
                        .chars()
                        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                        .collect();
                    t.save(&dir.join(format!("{stem}.json")))?;
                }
            }
            let total: usize = speakers.iter().map(|s| s.frames).sum();
            let weighted = |f: fn(&experiment::SpeakerResult) -> f64| {
                speakers.iter().map(|s| (f(s) * s.frames as f64).round()).sum::<f64>() / total as f64
            };
            let results = AdaptResults {
                settings: cfg.adapt,
                distorted_accuracy: weighted(|s| s.distorted_accuracy),
                adapted_accuracy: weighted(|s| s.adapted_accuracy),
                speakers,
            };
            let mut files: Vec<&Path> = vec![model, data];
            if let Some(p) = reference {
                files.push(p);
            }
            let hash = inputs_hash(&cfg, &files)?;
            emit(&out, "adapt", &Report::new("adapt", hash, results).to_json()?, None, format)?;
        }
        Command::Experiment { name, .. } => {
            let json = experiment::run_named(name, common.seed)?;
            emit(&out, name, &json, None, format)?;
        }
    }
    log(&out, cmd.name(), "done");
    Ok(())
}

/// At most `n` evenly spaced frames.
fn probe_sample(frames: &dnnlab::LabeledFrames, n: usize) -> dnnlab::Result<dnnlab::LabeledFrames> {
    if frames.len() <= n {
        return Ok(frames.clone());
    }
    let step = frames.len() / n;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| frames.frame(i * step).to_vec()).collect();
    dnnlab::LabeledFrames::new(
        dnnlab::Matrix::from_rows(&rows)?,
        (0..n).map(|i| frames.labels[i * step]).collect(),
    )
}
