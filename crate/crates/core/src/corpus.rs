//! Deterministic synthetic corpus: labeled frame streams with a redundant
//! high band, per-speaker affine (and optional warp) distortion, and
//! additive coloured noise at a target SNR.
//!
//! Independent random streams drive class structure, speakers, per-split
//! content and noise, so changing e.g. the speaker distortion magnitude
//! leaves the underlying utterance content unchanged.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, Band, Utterance};
use crate::linalg::Matrix;

const STREAM_MODEL: u64 = 1;
const STREAM_SPEAKERS: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_TRAIN_NOISE: u64 = 5;
const STREAM_TEST_NOISE: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Recording condition of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Noise {
        snr_db: f64,
        /// Selects the spectral shape of the noise.
        #[serde(default)]
        noise_type: u32,
    },
}

impl Condition {
    pub fn noise(snr_db: f64) -> Self {
        Condition::Noise { snr_db, noise_type: 0 }
    }

    pub fn id(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Noise { snr_db, noise_type } => format!("snr{snr_db}_n{noise_type}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    /// Speakers per split; train and test speakers are disjoint.
    pub count: usize,
    /// Max absolute deviation of each affine entry from identity
    /// (matrix and offset).
    pub distortion: f64,
    /// Max `|α − 1|` of a per-speaker channel warp; 0 disables warping.
    #[serde(default)]
    pub warp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: usize,
    pub d_low: usize,
    pub d_high: usize,
    pub frames_per_utterance: usize,
    pub utterances_per_split: usize,
    pub speakers: SpeakerSpec,
    pub conditions: Vec<Condition>,
    /// 1: high band is a fixed function of the low band; 0: independent of it.
    pub coupling_strength: f64,
    pub seed: u64,
    /// Cluster centres per class.
    #[serde(default = "defaults::modes")]
    pub modes_per_class: usize,
    /// Std of class centres in the low band.
    #[serde(default = "defaults::one")]
    pub prototype_scale: f64,
    /// Within-class std of the low band.
    #[serde(default = "defaults::jitter")]
    pub jitter: f64,
    /// Extra std on the high band.
    #[serde(default)]
    pub high_jitter: f64,
    /// Constant level added to every high-band channel.
    #[serde(default)]
    pub high_level: f64,
    /// Gain of the coupling map `g`.
    #[serde(default = "defaults::one")]
    pub high_gain: f64,
    /// Radius of a moving average applied to class centres along the
    /// channel axis, giving them spectrum-like smoothness; 0 leaves channels
    /// independent.
    #[serde(default)]
    pub prototype_smoothing: usize,
    /// Inclusive range of class-segment durations in frames.
    #[serde(default = "defaults::segment")]
    pub segment_frames: (usize, usize),
}

mod defaults {
    pub fn modes() -> usize {
        8
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn jitter() -> f64 {
        0.4
    }
    pub fn segment() -> (usize, usize) {
        (3, 8)
    }
}

impl Default for CorpusSpec {
    /// K=10, 8 low and 4 high channels, 8 clusters per class with 0.4
    /// jitter, speaker distortion on.
    fn default() -> Self {
        CorpusSpec {
            classes: 10,
            d_low: 8,
            d_high: 4,
            frames_per_utterance: 60,
            utterances_per_split: 500,
            speakers: SpeakerSpec {
                count: 10,
                distortion: 0.1,
                warp: 0.0,
            },
            conditions: vec![Condition::Clean],
            coupling_strength: 0.8,
            seed: 0,
            modes_per_class: defaults::modes(),
            prototype_scale: 1.0,
            jitter: defaults::jitter(),
            high_jitter: 0.0,
            high_level: 0.0,
            high_gain: 1.0,
            prototype_smoothing: 0,
            segment_frames: defaults::segment(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("corpus needs at least 2 classes"));
        }
        if self.classes > u32::MAX as usize {
            return Err(Error::config("class count not representable"));
        }
        if self.d_low == 0 {
            return Err(Error::config("d_low must be at least 1"));
        }
        if self.frames_per_utterance == 0 {
            return Err(Error::config("frames_per_utterance must be at least 1"));
        }
        if self.speakers.count == 0 {
            return Err(Error::config("need at least one speaker"));
        }
        if self.conditions.is_empty() {
            return Err(Error::config("need at least one condition"));
        }
        if self.modes_per_class == 0 {
            return Err(Error::config("modes_per_class must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.coupling_strength) {
            return Err(Error::config("coupling_strength must lie in [0, 1]"));
        }
        let (lo, hi) = self.segment_frames;
        if lo == 0 || lo > hi {
            return Err(Error::config("segment_frames must be a nonempty range of positive lengths"));
        }
        for c in &self.conditions {
            if let Condition::Noise { snr_db, .. } = c {
                if !snr_db.is_finite() {
                    return Err(Error::config("SNR must be finite"));
                }
            }
        }
        let reals = [
            ("prototype_scale", self.prototype_scale),
            ("jitter", self.jitter),
            ("high_jitter", self.high_jitter),
            ("high_level", self.high_level),
            ("high_gain", self.high_gain),
            ("speakers.distortion", self.speakers.distortion),
        ];
        for (name, v) in reals {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        if self.jitter < 0.0 || self.high_jitter < 0.0 || self.speakers.distortion < 0.0 {
            return Err(Error::config("jitter and distortion magnitudes must be nonnegative"));
        }
        if !(0.0..0.5).contains(&self.speakers.warp) {
            return Err(Error::config("speaker warp must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn d_static(&self) -> usize {
        self.d_low + self.d_high
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let spec: CorpusSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A collection of utterances sharing one static layout and class set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        Dataset { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.class_count)
    }

    /// Frames per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count().unwrap_or(0)];
        for u in &self.utterances {
            for &l in &u.labels {
                h[l] += 1;
            }
        }
        h
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    /// Utterances grouped by speaker, in order of first appearance.
    pub fn by_speaker(&self) -> Vec<(String, Vec<&Utterance>)> {
        let mut groups: Vec<(String, Vec<&Utterance>)> = Vec::new();
        for u in &self.utterances {
            match groups.iter_mut().find(|(s, _)| *s == u.speaker_id) {
                Some((_, g)) => g.push(u),
                None => groups.push((u.speaker_id.clone(), vec![u])),
            }
        }
        groups
    }

    pub fn map(&self, f: impl Fn(&Utterance) -> Result<Utterance>) -> Result<Dataset> {
        Ok(Dataset {
            utterances: self.utterances.iter().map(f).collect::<Result<_>>()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        features::save_utterances(path, &self.utterances)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Dataset {
            utterances: features::load_utterances(path)?,
        })
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.utterances.iter()
    }
}

/// Fixed class structure shared by both splits.
struct ClassModel {
    /// `[class][mode]` low-band centres.
    centres: Vec<Vec<Vec<f64>>>,
    /// `d_high × d_low` mixing matrix of the coupling map.
    mix: Matrix,
}

impl ClassModel {
    fn draw(spec: &CorpusSpec) -> Self {
        let mut rng = stream(spec.seed, STREAM_MODEL);
        let centres = (0..spec.classes)
            .map(|_| {
                (0..spec.modes_per_class)
                    .map(|_| {
                        let raw: Vec<f64> = (0..spec.d_low).map(|_| spec.prototype_scale * normal(&mut rng)).collect();
                        smooth(&raw, spec.prototype_smoothing)
                    })
                    .collect()
            })
            .collect();
        let scale = 1.0 / (spec.d_low as f64).sqrt();
        let mix = Matrix::from_fn(spec.d_high, spec.d_low, |_, _| scale * normal(&mut rng));
        ClassModel { centres, mix }
    }

    /// `g(low) = gain · tanh(M · low)`
    fn couple(&self, low: &[f64], gain: f64) -> Vec<f64> {
        self.mix
            .row_iter()
            .map(|r| gain * crate::linalg::dot(r, low).tanh())
            .collect()
    }
}

/// Edge-clamped moving average of radius `r`, scaled by `√(2r+1)` so that
/// independent unit-variance inputs keep unit variance.
fn smooth(x: &[f64], r: usize) -> Vec<f64> {
    if r == 0 {
        return x.to_vec();
    }
    let last = x.len() as isize - 1;
    let w = (2 * r + 1) as f64;
    (0..x.len() as isize)
        .map(|i| {
            let sum: f64 = (-(r as isize)..=r as isize).map(|k| x[(i + k).clamp(0, last) as usize]).sum();
            sum / w.sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTransform {
    pub id: String,
    pub matrix: Matrix,
    pub offset: Vec<f64>,
    pub warp: f64,
}

impl SpeakerTransform {
    fn draw(id: String, d: usize, spec: &SpeakerSpec, rng: &mut ChaCha8Rng) -> Self {
        let m = spec.distortion;
        let uniform = |r: &mut ChaCha8Rng| if m > 0.0 { r.random_range(-m..=m) } else { 0.0 };
        let mut matrix = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                matrix[(i, j)] += uniform(rng);
            }
        }
        let offset = (0..d).map(|_| uniform(rng)).collect();
        let warp = if spec.warp > 0.0 {
            1.0 + rng.random_range(-spec.warp..=spec.warp)
        } else {
            1.0
        };
        SpeakerTransform {
            id,
            matrix,
            offset,
            warp,
        }
    }

    fn apply(&self, u: &Utterance) -> Result<Utterance> {
        let warped = if self.warp != 1.0 {
            features::vtln_warp(u, self.warp)?
        } else {
            u.clone()
        };
        let mut frames = warped.frames.clone();
        for t in 0..frames.rows() {
            let y = self.matrix.mul_vec(warped.frames.row(t))?;
            for ((o, yi), bi) in frames.row_mut(t).iter_mut().zip(y).zip(&self.offset) {
                *o = yi + bi;
            }
        }
        Ok(warped.with_frames(frames))
    }
}

/// Per-channel noise amplitudes for a noise type, normalised to unit mean
/// square. Type `k` is a bump about `d/12` channels wide centred on channel
/// `d − 2 − 3k` (wrapping), over a small flat floor; type 0 sits in the
/// upper channels.
pub fn noise_profile(noise_type: u32, d: usize) -> Vec<f64> {
    let centre = (d as i64 - 2 - 3 * noise_type as i64).rem_euclid(d as i64) as f64;
    let width = (d as f64 / 12.0).max(0.5);
    let raw: Vec<f64> = (0..d)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * width * width)).exp() + 0.05)
        .collect();
    let ms = raw.iter().map(|v| v * v).sum::<f64>() / d as f64;
    raw.iter().map(|v| v / ms.sqrt()).collect()
}

/// Mean squared value of the static channels.
pub fn signal_power(u: &Utterance) -> f64 {
    let d = u.d_static;
    let mut sum = 0.0;
    for row in u.frames.row_iter() {
        sum += row[..d].iter().map(|v| v * v).sum::<f64>();
    }
    sum / (u.len() * d) as f64
}

/// Measured SNR in dB of `noisy` relative to the clean `clean`.
pub fn measured_snr_db(clean: &Utterance, noisy: &Utterance) -> f64 {
    let d = clean.d_static;
    let mut noise = 0.0;
    for (a, b) in clean.frames.row_iter().zip(noisy.frames.row_iter()) {
        noise += a[..d].iter().zip(&b[..d]).map(|(x, y)| (y - x).powi(2)).sum::<f64>();
    }
    let noise = noise / (clean.len() * d) as f64;
    10.0 * (signal_power(clean) / noise).log10()
}

/// Add coloured Gaussian noise to the static channels, scaled so that the
/// utterance SNR is exactly `snr_db`.
pub fn add_noise(u: &Utterance, snr_db: f64, profile: &[f64], rng: &mut ChaCha8Rng) -> Result<Utterance> {
    let d = u.d_static;
    if profile.len() != d {
        return Err(Error::shape("noise profile width differs from static width"));
    }
    let mut noise = Matrix::from_fn(u.len(), d, |_, j| profile[j] * normal(rng));
    let noise_power = noise.as_slice().iter().map(|v| v * v).sum::<f64>() / (u.len() * d) as f64;
    let target = signal_power(u) / 10f64.powf(snr_db / 10.0);
    if noise_power > 0.0 {
        noise.scale((target / noise_power).sqrt());
    }
    let mut frames = u.frames.clone();
    for t in 0..u.len() {
        for (o, n) in frames.row_mut(t)[..d].iter_mut().zip(noise.row(t)) {
            *o += n;
        }
    }
    let mut out = u.with_frames(frames);
    out.condition_id = Condition::noise(snr_db).id();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Generator with the class structure and speakers drawn once.
pub struct Generator {
    spec: CorpusSpec,
    model: ClassModel,
    train_speakers: Vec<SpeakerTransform>,
    test_speakers: Vec<SpeakerTransform>,
}

impl Generator {
    pub fn new(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let model = ClassModel::draw(spec);
        let mut rng = stream(spec.seed, STREAM_SPEAKERS);
        let d = spec.d_static();
        let speakers = |prefix: &str, rng: &mut ChaCha8Rng| -> Vec<SpeakerTransform> {
            (0..spec.speakers.count)
                .map(|i| SpeakerTransform::draw(format!("{prefix}-spk{i}"), d, &spec.speakers, rng))
                .collect()
        };
        let train_speakers = speakers("train", &mut rng);
        let test_speakers = speakers("test", &mut rng);
        Ok(Generator {
            spec: spec.clone(),
            model,
            train_speakers,
            test_speakers,
        })
    }

    pub fn speakers(&self, split: Split) -> &[SpeakerTransform] {
        match split {
            Split::Train => &self.train_speakers,
            Split::Test => &self.test_speakers,
        }
    }

    /// Undistorted, noise-free utterances of a split.
    pub fn clean_split(&self, split: Split) -> Result<Vec<Utterance>> {
        let spec = &self.spec;
        let mut rng = stream(
            spec.seed,
            match split {
                Split::Train => STREAM_TRAIN,
                Split::Test => STREAM_TEST,
            },
        );
        let mut deck: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(spec.utterances_per_split);
        for i in 0..spec.utterances_per_split {
            let (speaker, condition) = self.assignment(split, i);
            let mut data = Vec::with_capacity(spec.frames_per_utterance * spec.d_static());
            let mut labels = Vec::with_capacity(spec.frames_per_utterance);
            while labels.len() < spec.frames_per_utterance {
                if deck.is_empty() {
                    deck = (0..spec.classes).collect();
                    deck.shuffle(&mut rng);
                }
                let class = deck.pop().expect("deck refilled");
                let mode = rng.random_range(0..spec.modes_per_class);
                let duration = rng.random_range(spec.segment_frames.0..=spec.segment_frames.1);
                // label-independent part of the high band, held per segment
                let independent: Vec<f64> = (0..spec.d_high).map(|_| normal(&mut rng)).collect();
                let centre = &self.model.centres[class][mode];
                for _ in 0..duration.min(spec.frames_per_utterance - labels.len()) {
                    let low: Vec<f64> = centre.iter().map(|c| c + spec.jitter * normal(&mut rng)).collect();
                    let coupled = self.model.couple(&low, spec.high_gain);
                    let c = spec.coupling_strength;
                    data.extend_from_slice(&low);
                    for (g, ind) in coupled.iter().zip(&independent) {
                        let jit = if spec.high_jitter > 0.0 {
                            spec.high_jitter * normal(&mut rng)
                        } else {
                            0.0
                        };
                        data.push(c * g + (1.0 - c) * ind + jit + spec.high_level);
                    }
                    labels.push(class);
                }
            }
            let frames = Matrix::from_row_major(labels.len(), spec.d_static(), data)?;
            let mut u = Utterance::new(
                frames,
                labels,
                self.speakers(split)[speaker].id.clone(),
                condition.id(),
                Band::Wide,
                spec.classes,
            )?;
            u.d_static = spec.d_static();
            out.push(u);
        }
        Ok(out)
    }

    fn assignment(&self, _split: Split, i: usize) -> (usize, Condition) {
        let spk = self.spec.speakers.count;
        let conds = &self.spec.conditions;
        (i % spk, conds[(i / spk) % conds.len()])
    }

    /// Apply speaker distortion and per-condition noise to clean utterances
    /// of `split`.
    pub fn distort(&self, split: Split, clean: &[Utterance]) -> Result<Vec<Utterance>> {
        let mut noise_rng = stream(
            self.spec.seed,
            match split {
                Split::Train => STREAM_TRAIN_NOISE,
                Split::Test => STREAM_TEST_NOISE,
            },
        );
        clean
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let (speaker, condition) = self.assignment(split, i);
                let spoken = self.speakers(split)[speaker].apply(u)?;
                match condition {
                    Condition::Clean => Ok(spoken),
                    Condition::Noise { snr_db, noise_type } => {
                        let profile = noise_profile(noise_type, self.spec.d_static());
                        let mut noisy = add_noise(&spoken, snr_db, &profile, &mut noise_rng)?;
                        noisy.condition_id = condition.id();
                        Ok(noisy)
                    }
                }
            })
            .collect()
    }

    pub fn split(&self, split: Split) -> Result<Dataset> {
        let clean = self.clean_split(split)?;
        Ok(Dataset::new(self.distort(split, &clean)?))
    }

    pub fn split_name(split: Split) -> &'static str {
        split.name()
    }
}

/// Train and test splits for `spec`.
pub fn generate(spec: &CorpusSpec) -> Result<(Dataset, Dataset)> {
    let g = Generator::new(spec)?;
    Ok((g.split(Split::Train)?, g.split(Split::Test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            frames_per_utterance: 20,
            utterances_per_split: 12,
            speakers: SpeakerSpec {
                count: 3,
                distortion: 0.1,
                warp: 0.0,
            },
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let (a, b) = generate(&small()).unwrap();
        let (c, d) = generate(&small()).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert_ne!(a, b);
    }

    #[test]
    fn shapes_and_metadata() {
        let (train, test) = generate(&small()).unwrap();
        assert_eq!(train.len(), 12);
        for u in train.iter().chain(test.iter()) {
            assert_eq!(u.len(), 20);
            assert_eq!(u.dim(), 12);
            assert_eq!(u.d_static, 12);
            assert_eq!(u.band, Band::Wide);
            assert_eq!(u.condition_id, "clean");
        }
        assert_eq!(train.by_speaker().len(), 3);
        assert!(train.utterances[0].speaker_id.starts_with("train-"));
        assert!(test.utterances[0].speaker_id.starts_with("test-"));
    }

    #[test]
    fn distortion_magnitude_does_not_change_content() {
        let mut flat = small();
        flat.speakers.distortion = 0.0;
        let g1 = Generator::new(&small()).unwrap();
        let g0 = Generator::new(&flat).unwrap();
        assert_eq!(g1.clean_split(Split::Test).unwrap(), g0.clean_split(Split::Test).unwrap());
        assert_eq!(g0.split(Split::Test).unwrap().utterances, g0.clean_split(Split::Test).unwrap());
    }

    #[test]
    fn clean_condition_adds_no_noise() {
        let g = Generator::new(&small()).unwrap();
        let mut flat = small();
        flat.speakers.distortion = 0.0;
        let g0 = Generator::new(&flat).unwrap();
        let clean = g0.clean_split(Split::Train).unwrap();
        let out = g0.distort(Split::Train, &clean).unwrap();
        for (a, b) in clean.iter().zip(&out) {
            assert_eq!(a.frames, b.frames);
            assert!(measured_snr_db(a, b).is_infinite());
        }
        drop(g);
    }

    #[test]
    fn noise_hits_target_snr() {
        let mut spec = small();
        spec.conditions = vec![Condition::noise(10.0)];
        let g = Generator::new(&spec).unwrap();
        let clean = g.clean_split(Split::Test).unwrap();
        let spoken: Vec<Utterance> = {
            let mut s = spec.clone();
            s.conditions = vec![Condition::Clean];
            let gs = Generator::new(&s).unwrap();
            gs.distort(Split::Test, &clean).unwrap()
        };
        let noisy = g.distort(Split::Test, &clean).unwrap();
        for (a, b) in spoken.iter().zip(&noisy) {
            assert!((measured_snr_db(a, b) - 10.0).abs() < 0.5);
            assert_eq!(b.condition_id, "snr10_n0");
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = small();
        s.classes = 1;
        assert!(matches!(generate(&s), Err(Error::InvalidConfig(_))));
        let mut s = small();
        s.frames_per_utterance = 0;
        assert!(matches!(generate(&s), Err(Error::InvalidConfig(_))));
        let mut s = small();
        s.coupling_strength = 1.5;
        assert!(generate(&s).is_err());
        let mut s = small();
        s.conditions = vec![Condition::noise(f64::INFINITY)];
        assert!(generate(&s).is_err());
    }

    #[test]
    fn labels_are_balanced() {
        let (train, _) = generate(&CorpusSpec::default()).unwrap();
        let h = train.class_histogram();
        let uniform = train.frame_count() as f64 / h.len() as f64;
        for c in h {
            assert!((c as f64 - uniform).abs() <= 0.1 * uniform, "{c} vs {uniform}");
        }
    }

    #[test]
    fn full_coupling_without_jitter_is_a_function_of_low_band() {
        let spec = CorpusSpec {
            coupling_strength: 1.0,
            high_jitter: 0.0,
            speakers: SpeakerSpec {
                count: 1,
                distortion: 0.0,
                warp: 0.0,
            },
            ..small()
        };
        let g = Generator::new(&spec).unwrap();
        let utts = g.clean_split(Split::Train).unwrap();
        for u in &utts {
            for row in u.frames.row_iter() {
                let expect = g.model.couple(&row[..spec.d_low], spec.high_gain);
                assert_eq!(&row[spec.d_low..], expect.as_slice());
            }
        }
    }

    #[test]
    fn profile_has_unit_mean_square() {
        let p = noise_profile(2, 12);
        let ms = p.iter().map(|v| v * v).sum::<f64>() / 12.0;
        assert!((ms - 1.0).abs() < 1e-12);
    }
}
