//! Experiment configuration, report envelopes and the named experiments.
//!
//! Each named experiment has a fixed, serializable configuration. Its report
//! carries the SHA-256 of that configuration and nothing time- or
//! host-dependent, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{apply_fdlr, self_adapt, AdaptSettings, FdlrTransform};
use crate::corpus::{generate, Condition, CorpusSpec, Dataset, SpeakerSpec};
use crate::diagnostics::{
    frame_gain_norms, paired_layer_distances, perturbation_shrinkage, top_layer_kl, MeanVar, PairSet,
    ProbeReport, ProbeSettings,
};
use crate::error::{Error, Result};
use crate::features::{mask_high_band, splice_context, FeatureSpec, FrontEnd, Utterance};
use crate::linalg::{norm2, Matrix};
use crate::network::{frame_accuracy, train, LabeledFrames, Network, TrainConfig};

pub const REPORT_VERSION: u32 = 1;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the JSON form of any configuration value.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Hash identifying a trained model.
pub fn model_hash(net: &Network) -> String {
    sha256_hex(net.to_json().as_bytes())
}

/// Either an inline corpus spec or a path to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusRef {
    Inline(CorpusSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    #[serde(default = "defaults::eps")]
    pub saturation_eps: f64,
    #[serde(default = "defaults::threshold")]
    pub weight_threshold: f64,
    /// Step size for the perturbation check.
    #[serde(default = "defaults::t")]
    pub perturbation_t: f64,
    /// Frames used for gain norms (evenly spaced through the data).
    #[serde(default = "defaults::frames")]
    pub frames: usize,
    /// Frames used for the perturbation check.
    #[serde(default = "defaults::perturbation_frames")]
    pub perturbation_frames: usize,
}

mod defaults {
    pub fn eps() -> f64 {
        crate::diagnostics::DEFAULT_SATURATION_EPS
    }
    pub fn threshold() -> f64 {
        0.5
    }
    pub fn t() -> f64 {
        1e-4
    }
    pub fn frames() -> usize {
        1000
    }
    pub fn perturbation_frames() -> usize {
        100
    }
    pub fn out_dir() -> std::path::PathBuf {
        "out".into()
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            saturation_eps: defaults::eps(),
            weight_threshold: defaults::threshold(),
            perturbation_t: defaults::t(),
            frames: defaults::frames(),
            perturbation_frames: defaults::perturbation_frames(),
        }
    }
}

impl ProbeConfig {
    pub fn settings(&self) -> ProbeSettings {
        ProbeSettings {
            saturation_eps: self.saturation_eps,
            weight_threshold: self.weight_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation_eps > 0.0 && self.saturation_eps < 0.5) {
            return Err(Error::config("saturation_eps must be in (0, 0.5)"));
        }
        if !(self.weight_threshold > 0.0) {
            return Err(Error::config("weight_threshold must be positive"));
        }
        if !(self.perturbation_t > 0.0 && self.perturbation_t.is_finite()) {
            return Err(Error::config("perturbation_t must be positive"));
        }
        if self.frames == 0 {
            return Err(Error::config("probe frames must be at least 1"));
        }
        Ok(())
    }
}

/// Configuration shared by the `gen`, `train`, `eval`, `probe` and `adapt`
/// commands. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusRef,
    #[serde(default)]
    pub front_end: FrontEnd,
    /// Hidden layer widths; input and output sizes follow from the corpus.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub adapt: AdaptSettings,
    /// Where outputs go; not part of the config hash.
    #[serde(default = "defaults::out_dir", skip_serializing)]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Default corpus and front end, a 4×32 network trained as in the depth
    /// sweep.
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusRef::Inline(CorpusSpec::default()),
            front_end: FrontEnd::default(),
            hidden: vec![32; 4],
            train: DepthSweepConfig::default().train,
            probe: ProbeConfig::default(),
            adapt: AdaptSettings::default(),
            out_dir: defaults::out_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file. A corpus file reference is resolved relative to
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let CorpusRef::File(p) = &cfg.corpus {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.corpus = CorpusRef::File(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    /// Inline the corpus spec and check every part.
    pub fn resolve(mut self) -> Result<Self> {
        if let CorpusRef::File(p) = &self.corpus {
            self.corpus = CorpusRef::Inline(CorpusSpec::load(p)?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.corpus {
            CorpusRef::Inline(spec) => spec.validate()?,
            CorpusRef::File(p) if !p.exists() => return Err(Error::MissingFile(p.clone())),
            CorpusRef::File(_) => {}
        }
        self.front_end.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if self.adapt.iterations == 0 {
            return Err(Error::config("adapt.iterations must be at least 1"));
        }
        Ok(())
    }

    /// The corpus spec; the config must be resolved.
    pub fn corpus_spec(&self) -> Result<&CorpusSpec> {
        match &self.corpus {
            CorpusRef::Inline(spec) => Ok(spec),
            CorpusRef::File(p) => Err(Error::config(format!("corpus {} not resolved", p.display()))),
        }
    }

    /// Replace the corpus and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let CorpusRef::Inline(spec) = &mut self.corpus {
            spec.seed = seed;
        }
        self.train.seed = seed;
        self
    }

    pub fn layer_sizes(&self) -> Result<Vec<usize>> {
        let spec = self.corpus_spec()?;
        let mut sizes = vec![self.front_end.input_dim(spec.d_static())];
        sizes.extend(&self.hidden);
        sizes.push(spec.classes);
        Ok(sizes)
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Envelope shared by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub report: String,
    pub version: u32,
    pub config_hash: String,
    pub results: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(kind: &str, config_hash: String, results: T) -> Self {
        Report {
            report: kind.to_string(),
            version: REPORT_VERSION,
            config_hash,
            results,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn net_init(sizes: &[usize], train_cfg: &TrainConfig) -> Result<Network> {
    Network::init(sizes, train_cfg.seed, train_cfg.init_scale)
}

/// Train a fresh network of `sizes` on `data`.
pub fn fit(sizes: &[usize], data: &LabeledFrames, cfg: &TrainConfig) -> Result<(Network, Vec<f64>)> {
    let out = train(&net_init(sizes, cfg)?, data, cfg)?;
    Ok((out.network, out.epoch_losses))
}

fn spliced(utts: &[Utterance], context: usize) -> Result<LabeledFrames> {
    let parts = utts
        .iter()
        .map(|u| LabeledFrames::new(splice_context(u, context)?, u.labels.clone()))
        .collect::<Result<Vec<_>>>()?;
    LabeledFrames::concat(&parts)
}

/// Every `step`-th frame, at most `n` of them.
fn subsample(data: &LabeledFrames, n: usize) -> Result<LabeledFrames> {
    let step = (data.len() / n.max(1)).max(1);
    let idx: Vec<usize> = (0..data.len()).step_by(step).take(n).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| data.frame(i).to_vec()).collect();
    LabeledFrames::new(Matrix::from_rows(&rows)?, idx.iter().map(|&i| data.labels[i]).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- depth sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepConfig {
    pub corpus: CorpusSpec,
    pub front_end: FrontEnd,
    pub deep_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for DepthSweepConfig {
    fn default() -> Self {
        DepthSweepConfig {
            corpus: CorpusSpec::default(),
            front_end: FrontEnd::default(),
            deep_hidden: vec![32; 4],
            train: TrainConfig {
                learning_rate: 0.5,
                minibatch_size: 32,
                epochs: 20,
                seed: 0,
                init_scale: 0.3,
            },
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRun {
    pub seed: u64,
    pub deep_accuracy: f64,
    pub shallow_accuracy: f64,
    pub deep_final_loss: f64,
    pub shallow_final_loss: f64,
    pub deep_model_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepResults {
    pub deep_layers: Vec<usize>,
    pub shallow_layers: Vec<usize>,
    pub deep_parameters: usize,
    pub shallow_parameters: usize,
    pub runs: Vec<DepthRun>,
    pub deep_mean_accuracy: f64,
    pub shallow_mean_accuracy: f64,
    pub difference: f64,
}

/// Width of a single hidden layer whose network has as close to `params`
/// parameters as possible.
pub fn matched_width(params: usize, input: usize, classes: usize) -> usize {
    let per_unit = (input + 1 + classes) as f64;
    (((params - classes) as f64 / per_unit).round() as usize).max(1)
}

fn layers_for(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend(hidden);
    v.push(classes);
    v
}

fn train_with_seed(base: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..base.clone() }
}

pub fn depth_sweep(cfg: &DepthSweepConfig) -> Result<DepthSweepResults> {
    let (train_set, test_set) = generate(&cfg.corpus)?;
    let tr = cfg.front_end.frames_all(&train_set)?;
    let te = cfg.front_end.frames_all(&test_set)?;
    let k = cfg.corpus.classes;
    let deep_layers = layers_for(tr.dim(), &cfg.deep_hidden, k);
    let deep_parameters = Network::init(&deep_layers, 0, 0.0)?.parameter_count();
    let shallow_layers = vec![tr.dim(), matched_width(deep_parameters, tr.dim(), k), k];
    let shallow_parameters = Network::init(&shallow_layers, 0, 0.0)?.parameter_count();
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let tc = train_with_seed(&cfg.train, seed);
        let (deep, deep_loss) = fit(&deep_layers, &tr, &tc)?;
        let (shallow, shallow_loss) = fit(&shallow_layers, &tr, &tc)?;
        runs.push(DepthRun {
            seed,
            deep_accuracy: frame_accuracy(&deep, &te)?,
            shallow_accuracy: frame_accuracy(&shallow, &te)?,
            deep_final_loss: *deep_loss.last().unwrap_or(&f64::NAN),
            shallow_final_loss: *shallow_loss.last().unwrap_or(&f64::NAN),
            deep_model_sha256: model_hash(&deep),
        });
    }
    let deep_mean_accuracy = mean(&runs.iter().map(|r| r.deep_accuracy).collect::<Vec<_>>());
    let shallow_mean_accuracy = mean(&runs.iter().map(|r| r.shallow_accuracy).collect::<Vec<_>>());
    Ok(DepthSweepResults {
        deep_layers,
        shallow_layers,
        deep_parameters,
        shallow_parameters,
        runs,
        deep_mean_accuracy,
        shallow_mean_accuracy,
        difference: deep_mean_accuracy - shallow_mean_accuracy,
    })
}

// ------------------------------------------------------------------ shrinkage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageConfig {
    /// The network is the first seed of this sweep.
    pub model: DepthSweepConfig,
    pub probe: ProbeConfig,
    /// SNR of the perturbed member of each pair.
    pub pair_snr_db: f64,
    /// Seed for the random perturbation directions.
    pub direction_seed: u64,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        ShrinkageConfig {
            model: DepthSweepConfig::default(),
            probe: ProbeConfig::default(),
            pair_snr_db: 20.0,
            direction_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub frame: usize,
    /// `‖δ^{ℓ+1}‖ / ‖δ^ℓ‖` per hidden layer.
    pub ratios: Vec<f64>,
    /// Gain norm of the same frame per hidden layer.
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageResults {
    pub model_sha256: String,
    pub test_accuracy: f64,
    pub probe: ProbeReport,
    pub perturbation_t: f64,
    pub perturbation: Vec<PerturbationCheck>,
    /// Largest `ratio / gain` per layer over the checked frames.
    pub max_ratio_over_gain: Vec<f64>,
}

/// Perturb each frame along a seeded random unit direction and compare the
/// measured ratios with the frame's gain norms.
pub fn perturbation_checks(net: &Network, frames: &LabeledFrames, t: f64, seed: u64) -> Result<Vec<PerturbationCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frames
        .iter()
        .enumerate()
        .map(|(i, (x, _))| {
            let mut dir: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm2(&dir);
            dir.iter_mut().for_each(|d| *d /= n);
            Ok(PerturbationCheck {
                frame: i,
                ratios: perturbation_shrinkage(net, x, &dir, t)?,
                gains: frame_gain_norms(net, x)?,
            })
        })
        .collect()
}

pub fn shrinkage(cfg: &ShrinkageConfig) -> Result<ShrinkageResults> {
    let m = &cfg.model;
    let seed = *m
        .seeds
        .first()
        .ok_or_else(|| Error::config("shrinkage needs at least one seed"))?;
    let (train_set, test_set) = generate(&m.corpus)?;
    let tr = m.front_end.frames_all(&train_set)?;
    let te = m.front_end.frames_all(&test_set)?;
    let sizes = layers_for(tr.dim(), &m.deep_hidden, m.corpus.classes);
    let (net, _) = fit(&sizes, &tr, &train_with_seed(&m.train, seed))?;

    let noisy_spec = CorpusSpec {
        conditions: vec![Condition::noise(cfg.pair_snr_db)],
        ..m.corpus.clone()
    };
    let (_, noisy_test) = generate(&noisy_spec)?;
    let te_noisy = m.front_end.frames_all(&noisy_test)?;
    let probe_clean = subsample(&te, cfg.probe.frames)?;
    let probe_noisy = subsample(&te_noisy, cfg.probe.frames)?;
    let pairs = PairSet {
        a: probe_clean.inputs.clone(),
        b: probe_noisy.inputs.clone(),
    };
    let probe = ProbeReport::measure(&net, &probe_clean, Some(&pairs), &cfg.probe.settings())?;

    let pert_frames = subsample(&te, cfg.probe.perturbation_frames)?;
    let perturbation = perturbation_checks(&net, &pert_frames, cfg.probe.perturbation_t, cfg.direction_seed)?;
    let layers = net.hidden_layer_count();
    let max_ratio_over_gain = (0..layers)
        .map(|l| {
            perturbation
                .iter()
                .map(|c| if c.gains[l] > 0.0 { c.ratios[l] / c.gains[l] } else { 0.0 })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(ShrinkageResults {
        model_sha256: model_hash(&net),
        test_accuracy: frame_accuracy(&net, &te)?,
        probe,
        perturbation_t: cfg.probe.perturbation_t,
        perturbation,
        max_ratio_over_gain,
    })
}

// ----------------------------------------------------------------- mixed band

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedBandConfig {
    pub corpus: CorpusSpec,
    pub front_end: FrontEnd,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for MixedBandConfig {
    fn default() -> Self {
        MixedBandConfig {
            corpus: CorpusSpec {
                utterances_per_split: 300,
                coupling_strength: 1.0,
                high_level: 2.0,
                ..CorpusSpec::default()
            },
            // per-utterance mean removal would hide the missing band's level
            front_end: FrontEnd {
                mean_normalize: false,
                ..FrontEnd::default()
            },
            hidden: vec![32; 4],
            train: DepthSweepConfig::default().train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandModelResults {
    pub wideband_accuracy: f64,
    pub narrowband_accuracy: f64,
    pub gap: f64,
    /// Mean `KL(p_wb ‖ p_nb)` over test frame pairs, in nats.
    pub kl_mean: f64,
    /// Wideband/narrowband distance per hidden layer.
    pub distances: Vec<MeanVar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedBandResults {
    pub wideband_only: BandModelResults,
    pub mixed: BandModelResults,
    pub kl_ratio: f64,
}

/// Front-end output with the high band zeroed.
pub fn narrowband(fe: &FrontEnd, spec: &CorpusSpec, utts: &[Utterance]) -> Result<Vec<Utterance>> {
    let fs = FeatureSpec {
        n_low: spec.d_low,
        n_high: spec.d_high,
        context: fe.context,
        dynamics_order: fe.dynamics_order,
    };
    utts.iter().map(|u| mask_high_band(&fe.process(u)?, &fs)).collect()
}

fn processed(fe: &FrontEnd, utts: &[Utterance]) -> Result<Vec<Utterance>> {
    utts.iter().map(|u| fe.process(u)).collect()
}

pub fn mixed_band(cfg: &MixedBandConfig) -> Result<MixedBandResults> {
    let fe = &cfg.front_end;
    let (train_set, test_set) = generate(&cfg.corpus)?;
    let train_wb = processed(fe, &train_set.utterances)?;
    let train_nb = narrowband(fe, &cfg.corpus, &train_set.utterances)?;
    let mixed: Vec<Utterance> = train_wb
        .iter()
        .zip(&train_nb)
        .enumerate()
        .map(|(i, (w, n))| if i % 2 == 0 { w.clone() } else { n.clone() })
        .collect();
    let test_wb = spliced(&processed(fe, &test_set.utterances)?, fe.context)?;
    let test_nb = spliced(&narrowband(fe, &cfg.corpus, &test_set.utterances)?, fe.context)?;
    let pairs = PairSet {
        a: test_wb.inputs.clone(),
        b: test_nb.inputs.clone(),
    };
    let train_wb = spliced(&train_wb, fe.context)?;
    let train_mixed = spliced(&mixed, fe.context)?;
    let sizes = layers_for(train_wb.dim(), &cfg.hidden, cfg.corpus.classes);
    let evaluate = |data: &LabeledFrames| -> Result<BandModelResults> {
        let (net, _) = fit(&sizes, data, &cfg.train)?;
        let wideband_accuracy = frame_accuracy(&net, &test_wb)?;
        let narrowband_accuracy = frame_accuracy(&net, &test_nb)?;
        Ok(BandModelResults {
            wideband_accuracy,
            narrowband_accuracy,
            gap: wideband_accuracy - narrowband_accuracy,
            kl_mean: top_layer_kl(&net, &pairs)?,
            distances: paired_layer_distances(&net, &pairs)?,
        })
    };
    let wideband_only = evaluate(&train_wb)?;
    let mixed = evaluate(&train_mixed)?;
    Ok(MixedBandResults {
        kl_ratio: mixed.kl_mean / wideband_only.kl_mean,
        wideband_only,
        mixed,
    })
}

// -------------------------------------------------------------- speaker adapt

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerAdaptConfig {
    /// Training corpus; its own speaker distortion applies to training data.
    pub corpus: CorpusSpec,
    /// Per-speaker affine distortion magnitude of the test data.
    pub test_distortion: f64,
    pub front_end: FrontEnd,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub adapt: AdaptSettings,
}

impl Default for SpeakerAdaptConfig {
    fn default() -> Self {
        SpeakerAdaptConfig {
            corpus: CorpusSpec {
                utterances_per_split: 300,
                speakers: SpeakerSpec {
                    count: 5,
                    distortion: 0.0,
                    warp: 0.0,
                },
                modes_per_class: 1,
                jitter: 0.3,
                ..CorpusSpec::default()
            },
            test_distortion: 0.2,
            // the transform then has the distortion's own shape
            front_end: FrontEnd {
                dynamics_order: 0,
                mean_normalize: false,
                context: 5,
            },
            hidden: vec![32; 4],
            train: TrainConfig {
                epochs: 3,
                ..DepthSweepConfig::default().train
            },
            adapt: AdaptSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerResult {
    pub speaker: String,
    pub frames: usize,
    /// Present when an undistorted reference was given.
    pub undistorted_accuracy: Option<f64>,
    pub distorted_accuracy: f64,
    pub adapted_accuracy: f64,
    pub label_changes: Vec<usize>,
    pub final_objective: f64,
    /// `‖A − I‖_F`
    pub transform_deviation: f64,
    /// Kept out of reports; the CLI writes it to its own file.
    #[serde(skip)]
    pub transform: Option<FdlrTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerAdaptResults {
    pub undistorted_accuracy: f64,
    pub distorted_accuracy: f64,
    pub adapted_accuracy: f64,
    /// Fraction of the distortion gap closed by adaptation.
    pub recovered_fraction: f64,
    pub speakers: Vec<SpeakerResult>,
}

/// Self-adapt per speaker and score before and after.
pub fn adapt_by_speaker(
    net: &Network,
    fe: &FrontEnd,
    distorted: &Dataset,
    reference: Option<&Dataset>,
    settings: &AdaptSettings,
) -> Result<Vec<SpeakerResult>> {
    let reference_groups = reference.map(Dataset::by_speaker);
    distorted
        .by_speaker()
        .into_iter()
        .enumerate()
        .map(|(g, (speaker, utts))| {
            let proc = utts.iter().map(|u| fe.process(u)).collect::<Result<Vec<_>>>()?;
            let before = spliced(&proc, fe.context)?;
            let out = self_adapt(net, &proc, fe.context, settings)?;
            let adapted = proc
                .iter()
                .map(|u| apply_fdlr(&out.transform, u))
                .collect::<Result<Vec<_>>>()?;
            let after = spliced(&adapted, fe.context)?;
            let undistorted_accuracy = match &reference_groups {
                Some(groups) => {
                    let (_, ref_utts) = groups
                        .get(g)
                        .ok_or_else(|| Error::InvalidInput("reference has fewer speakers".into()))?;
                    let owned: Vec<Utterance> = ref_utts.iter().map(|u| (*u).clone()).collect();
                    Some(frame_accuracy(net, &fe.frames_all(&owned)?)?)
                }
                None => None,
            };
            let final_objective = out
                .objectives
                .last()
                .and_then(|o| o.last())
                .copied()
                .unwrap_or(f64::NAN);
            Ok(SpeakerResult {
                speaker,
                frames: before.len(),
                undistorted_accuracy,
                distorted_accuracy: frame_accuracy(net, &before)?,
                adapted_accuracy: frame_accuracy(net, &after)?,
                label_changes: out.label_changes,
                final_objective,
                transform_deviation: out.transform.deviation_from_identity(),
                transform: Some(out.transform),
            })
        })
        .collect()
}

pub fn speaker_adapt(cfg: &SpeakerAdaptConfig) -> Result<SpeakerAdaptResults> {
    let fe = &cfg.front_end;
    let (train_set, undistorted_test) = generate(&cfg.corpus)?;
    let test_spec = CorpusSpec {
        speakers: SpeakerSpec {
            distortion: cfg.test_distortion,
            ..cfg.corpus.speakers.clone()
        },
        ..cfg.corpus.clone()
    };
    let (_, distorted_test) = generate(&test_spec)?;
    let tr = fe.frames_all(&train_set)?;
    let sizes = layers_for(tr.dim(), &cfg.hidden, cfg.corpus.classes);
    let (net, _) = fit(&sizes, &tr, &cfg.train)?;
    let undistorted_accuracy = frame_accuracy(&net, &fe.frames_all(&undistorted_test)?)?;
    let distorted = fe.frames_all(&distorted_test)?;
    let distorted_accuracy = frame_accuracy(&net, &distorted)?;
    let speakers = adapt_by_speaker(&net, fe, &distorted_test, Some(&undistorted_test), &cfg.adapt)?;
    let correct: f64 = speakers
        .iter()
        .map(|s| (s.adapted_accuracy * s.frames as f64).round())
        .sum();
    let adapted_accuracy = correct / distorted.len() as f64;
    Ok(SpeakerAdaptResults {
        undistorted_accuracy,
        distorted_accuracy,
        adapted_accuracy,
        recovered_fraction: (adapted_accuracy - distorted_accuracy) / (undistorted_accuracy - distorted_accuracy),
        speakers,
    })
}

// --------------------------------------------------------------- noise robust

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRobustConfig {
    pub corpus: CorpusSpec,
    pub front_end: FrontEnd,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub test_snr_db: f64,
    /// Noisy conditions added to clean data for multi-condition training.
    pub multi_snr_db: Vec<f64>,
}

impl Default for NoiseRobustConfig {
    fn default() -> Self {
        NoiseRobustConfig {
            corpus: CorpusSpec {
                // raises signal power, hence noise power at a given SNR, in
                // channels that per-utterance normalization then centres
                high_level: 4.5,
                ..CorpusSpec::default()
            },
            front_end: FrontEnd::default(),
            hidden: vec![32; 4],
            train: DepthSweepConfig::default().train,
            test_snr_db: 10.0,
            multi_snr_db: vec![10.0, 15.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResults {
    pub clean_accuracy: f64,
    pub noisy_accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRobustResults {
    pub clean_trained: ConditionResults,
    pub multi_condition: ConditionResults,
}

pub fn noise_robust(cfg: &NoiseRobustConfig) -> Result<NoiseRobustResults> {
    let fe = &cfg.front_end;
    let with_conditions = |conditions: Vec<Condition>| CorpusSpec {
        conditions,
        ..cfg.corpus.clone()
    };
    let (clean_train, clean_test) = generate(&with_conditions(vec![Condition::Clean]))?;
    let (_, noisy_test) = generate(&with_conditions(vec![Condition::noise(cfg.test_snr_db)]))?;
    let mut multi = vec![Condition::Clean];
    multi.extend(cfg.multi_snr_db.iter().map(|&s| Condition::noise(s)));
    let (multi_train, _) = generate(&with_conditions(multi))?;
    let tc = fe.frames_all(&clean_test)?;
    let tn = fe.frames_all(&noisy_test)?;
    let evaluate = |train_set: &Dataset| -> Result<ConditionResults> {
        let data = fe.frames_all(train_set)?;
        let sizes = layers_for(data.dim(), &cfg.hidden, cfg.corpus.classes);
        let (net, _) = fit(&sizes, &data, &cfg.train)?;
        let clean_accuracy = frame_accuracy(&net, &tc)?;
        let noisy_accuracy = frame_accuracy(&net, &tn)?;
        Ok(ConditionResults {
            clean_accuracy,
            noisy_accuracy,
            loss: clean_accuracy - noisy_accuracy,
        })
    };
    Ok(NoiseRobustResults {
        clean_trained: evaluate(&clean_train)?,
        multi_condition: evaluate(&multi_train)?,
    })
}

// ------------------------------------------------------------------ registry

pub const NAMED: [&str; 5] = ["depth-sweep", "shrinkage", "mixed-band", "speaker-adapt", "noise-robust"];

/// Shift every seed of a corpus/train pair by `seed`.
fn reseed(corpus: &mut CorpusSpec, train: &mut TrainConfig, seed: u64) {
    corpus.seed = seed;
    train.seed = seed;
}

fn envelope<C: Serialize, R: Serialize>(name: &str, cfg: &C, results: R) -> Result<String> {
    Report::new(name, config_hash(cfg)?, results).to_json()
}

/// Run a named experiment, optionally with a different base seed, and
/// return its report JSON.
pub fn run_named(name: &str, seed: Option<u64>) -> Result<String> {
    match name {
        "depth-sweep" => {
            let mut c = DepthSweepConfig::default();
            if let Some(s) = seed {
                reseed(&mut c.corpus, &mut c.train, s);
                c.seeds = c.seeds.iter().map(|x| x + s).collect();
            }
            envelope(name, &c, depth_sweep(&c)?)
        }
        "shrinkage" => {
            let mut c = ShrinkageConfig::default();
            if let Some(s) = seed {
                reseed(&mut c.model.corpus, &mut c.model.train, s);
                c.model.seeds = c.model.seeds.iter().map(|x| x + s).collect();
                c.direction_seed = s;
            }
            envelope(name, &c, shrinkage(&c)?)
        }
        "mixed-band" => {
            let mut c = MixedBandConfig::default();
            if let Some(s) = seed {
                reseed(&mut c.corpus, &mut c.train, s);
            }
            envelope(name, &c, mixed_band(&c)?)
        }
        "speaker-adapt" => {
            let mut c = SpeakerAdaptConfig::default();
            if let Some(s) = seed {
                reseed(&mut c.corpus, &mut c.train, s);
            }
            envelope(name, &c, speaker_adapt(&c)?)
        }
        "noise-robust" => {
            let mut c = NoiseRobustConfig::default();
            if let Some(s) = seed {
                reseed(&mut c.corpus, &mut c.train, s);
            }
            envelope(name, &c, noise_robust(&c)?)
        }
        other => Err(Error::config(format!(
            "unknown experiment {other:?}; expected one of {}",
            NAMED.join(", ")
        ))),
    }
}
