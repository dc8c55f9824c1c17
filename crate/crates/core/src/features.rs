//! Frame-level feature pipeline: regression deltas, utterance mean
//! normalization, context splicing, high-band masking and channel-axis
//! warping.
//!
//! A frame is laid out as `[statics | Δ | ΔΔ]`, each block `d_static` wide.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::LabeledFrames;

/// Half-width of the delta regression window.
pub const DELTA_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Wide,
    Narrow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// `T × dim`, where `dim` is `d_static` times the number of blocks.
    pub frames: Matrix,
    pub labels: Vec<usize>,
    pub speaker_id: String,
    pub condition_id: String,
    pub band: Band,
    pub d_static: usize,
    pub class_count: usize,
}

impl Utterance {
    pub fn new(
        frames: Matrix,
        labels: Vec<usize>,
        speaker_id: impl Into<String>,
        condition_id: impl Into<String>,
        band: Band,
        class_count: usize,
    ) -> Result<Self> {
        let u = Utterance {
            d_static: frames.cols(),
            frames,
            labels,
            speaker_id: speaker_id.into(),
            condition_id: condition_id.into(),
            band,
            class_count,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rows() == 0 {
            return Err(Error::InvalidInput("utterance has no frames".into()));
        }
        if self.labels.len() != self.frames.rows() {
            return Err(Error::shape(format!(
                "{} frames but {} labels",
                self.frames.rows(),
                self.labels.len()
            )));
        }
        if self.d_static == 0 || self.frames.cols() % self.d_static != 0 {
            return Err(Error::shape(format!(
                "frame width {} is not a multiple of d_static {}",
                self.frames.cols(),
                self.d_static
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::InvalidLabel {
                label,
                classes: self.class_count,
            });
        }
        if !self.frames.is_finite() {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Number of `d_static`-wide blocks per frame (1 + dynamics order).
    pub fn blocks(&self) -> usize {
        self.dim() / self.d_static
    }

    pub fn with_frames(&self, frames: Matrix) -> Utterance {
        Utterance {
            frames,
            ..self.clone()
        }
    }

    fn require_statics(&self, op: &str) -> Result<()> {
        if self.dim() != self.d_static {
            return Err(Error::shape(format!(
                "{op} expects static features only (width {}), got width {}",
                self.d_static,
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub n_low: usize,
    pub n_high: usize,
    pub context: usize,
    pub dynamics_order: usize,
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_low == 0 {
            return Err(Error::config("n_low must be at least 1"));
        }
        if self.context % 2 == 0 {
            return Err(Error::config(format!("context must be odd, got {}", self.context)));
        }
        if self.dynamics_order > 2 {
            return Err(Error::config("dynamics_order must be 0, 1 or 2"));
        }
        Ok(())
    }

    pub fn d_static(&self) -> usize {
        self.n_low + self.n_high
    }

    /// Width of one frame after dynamics.
    pub fn frame_dim(&self) -> usize {
        self.d_static() * (self.dynamics_order + 1)
    }

    /// Width of a spliced network input.
    pub fn input_dim(&self) -> usize {
        self.frame_dim() * self.context
    }
}

/// Regression deltas over a ±2 frame window with edge replication.
fn regression_delta(src: &Matrix) -> Matrix {
    let t_len = src.rows();
    let denom = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Matrix::zeros(t_len, src.cols());
    let last = t_len as isize - 1;
    for t in 0..t_len {
        let row = out.row_mut(t);
        for n in 1..=DELTA_WINDOW {
            let fwd = src.row((t as isize + n as isize).min(last) as usize);
            let back = src.row((t as isize - n as isize).max(0) as usize);
            for ((o, &f), &b) in row.iter_mut().zip(fwd).zip(back) {
                *o += n as f64 * (f - b);
            }
        }
        row.iter_mut().for_each(|o| *o /= denom);
    }
    out
}

/// Append Δ (order ≥ 1) and ΔΔ (order 2) blocks to static features.
pub fn add_dynamics(u: &Utterance, order: usize) -> Result<Utterance> {
    if order > 2 {
        return Err(Error::config(format!("dynamics order must be ≤ 2, got {order}")));
    }
    u.require_statics("add_dynamics")?;
    if order == 0 {
        return Ok(u.clone());
    }
    let d = u.d_static;
    let mut blocks = vec![u.frames.clone()];
    for k in 1..=order {
        let next = regression_delta(&blocks[k - 1]);
        blocks.push(next);
    }
    let frames = Matrix::from_fn(u.len(), d * (order + 1), |t, j| blocks[j / d][(t, j % d)]);
    Ok(u.with_frames(frames))
}

/// Subtract the per-dimension utterance mean.
pub fn mean_normalize(u: &Utterance) -> Utterance {
    let t_len = u.len() as f64;
    let mut mean = vec![0.0; u.dim()];
    for row in u.frames.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_len);
    let mut frames = u.frames.clone();
    for t in 0..u.len() {
        for (v, m) in frames.row_mut(t).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    u.with_frames(frames)
}

/// Stack frames `t-k … t+k` (edge-replicated) into row `t`.
pub fn splice_context(u: &Utterance, context: usize) -> Result<Matrix> {
    splice_frames(&u.frames, context)
}

pub fn splice_frames(frames: &Matrix, context: usize) -> Result<Matrix> {
    if context % 2 == 0 {
        return Err(Error::config(format!("context must be odd, got {context}")));
    }
    let k = (context / 2) as isize;
    let d = frames.cols();
    let last = frames.rows() as isize - 1;
    let mut out = Matrix::zeros(frames.rows(), d * context);
    for t in 0..frames.rows() {
        let row = out.row_mut(t);
        for (j, offset) in (-k..=k).enumerate() {
            let src = (t as isize + offset).clamp(0, last) as usize;
            row[j * d..(j + 1) * d].copy_from_slice(frames.row(src));
        }
    }
    Ok(out)
}

/// Zero the last `n_high` channels of every block and tag the utterance
/// narrowband.
pub fn mask_high_band(u: &Utterance, spec: &FeatureSpec) -> Result<Utterance> {
    if u.d_static != spec.d_static() {
        return Err(Error::shape(format!(
            "utterance has {} static channels, feature spec describes {}",
            u.d_static,
            spec.d_static()
        )));
    }
    let mut out = u.clone();
    out.band = Band::Narrow;
    if spec.n_high == 0 {
        return Ok(out);
    }
    let d = u.d_static;
    for t in 0..out.len() {
        for block in out.frames.row_mut(t).chunks_exact_mut(d) {
            block[spec.n_low..].fill(0.0);
        }
    }
    Ok(out)
}

/// Valid warp factors: `0.5 ≤ α < 2.0`.
pub const WARP_RANGE: (f64, f64) = (0.5, 2.0);

/// Resample the channel axis at positions `i·alpha` by linear
/// interpolation; positions past the last channel read the last channel.
pub fn vtln_warp(u: &Utterance, alpha: f64) -> Result<Utterance> {
    if !(alpha >= WARP_RANGE.0 && alpha < WARP_RANGE.1) {
        return Err(Error::config(format!(
            "warp factor {alpha} outside [{}, {})",
            WARP_RANGE.0, WARP_RANGE.1
        )));
    }
    u.require_statics("vtln_warp")?;
    let mut frames = u.frames.clone();
    for t in 0..u.len() {
        warp_channels(u.frames.row(t), alpha, frames.row_mut(t));
    }
    Ok(u.with_frames(frames))
}

fn warp_channels(src: &[f64], alpha: f64, dst: &mut [f64]) {
    let last = src.len() - 1;
    for (i, out) in dst.iter_mut().enumerate() {
        let pos = i as f64 * alpha;
        let lo = pos.floor() as usize;
        *out = if lo >= last {
            src[last]
        } else {
            let frac = pos - lo as f64;
            if frac == 0.0 {
                src[lo]
            } else {
                (1.0 - frac) * src[lo] + frac * src[lo + 1]
            }
        };
    }
}

/// The per-utterance processing applied before a network sees frames:
/// dynamics, optional mean normalization, then context splicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub dynamics_order: usize,
    pub mean_normalize: bool,
    pub context: usize,
}

impl Default for FrontEnd {
    fn default() -> Self {
        FrontEnd {
            dynamics_order: 2,
            mean_normalize: true,
            context: 5,
        }
    }
}

impl FrontEnd {
    pub fn validate(&self) -> Result<()> {
        if self.dynamics_order > 2 {
            return Err(Error::config("dynamics_order must be 0, 1 or 2"));
        }
        if self.context % 2 == 0 {
            return Err(Error::config(format!("context must be odd, got {}", self.context)));
        }
        Ok(())
    }

    pub fn frame_dim(&self, d_static: usize) -> usize {
        d_static * (self.dynamics_order + 1)
    }

    pub fn input_dim(&self, d_static: usize) -> usize {
        self.frame_dim(d_static) * self.context
    }

    /// Everything up to (not including) splicing.
    pub fn process(&self, u: &Utterance) -> Result<Utterance> {
        let with_dyn = add_dynamics(u, self.dynamics_order)?;
        Ok(if self.mean_normalize {
            mean_normalize(&with_dyn)
        } else {
            with_dyn
        })
    }

    /// Network-ready inputs for one utterance.
    pub fn frames(&self, u: &Utterance) -> Result<LabeledFrames> {
        let processed = self.process(u)?;
        LabeledFrames::new(splice_context(&processed, self.context)?, u.labels.clone())
    }

    pub fn frames_all<'a>(&self, utts: impl IntoIterator<Item = &'a Utterance>) -> Result<LabeledFrames> {
        let parts = utts
            .into_iter()
            .map(|u| self.frames(u))
            .collect::<Result<Vec<_>>>()?;
        LabeledFrames::concat(&parts)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
struct UtteranceHeader {
    speaker_id: String,
    condition_id: String,
    band: Band,
    #[serde(rename = "T")]
    t: usize,
    d_static: usize,
    class_count: usize,
    /// Frame width when dynamics are included; absent means `d_static`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

/// Write utterances as a JSON header line followed by `T` CSV rows
/// (`features…, label`).
pub fn write_utterances<W: Write>(mut w: W, utts: &[Utterance]) -> Result<()> {
    for u in utts {
        let header = UtteranceHeader {
            speaker_id: u.speaker_id.clone(),
            condition_id: u.condition_id.clone(),
            band: u.band,
            t: u.len(),
            d_static: u.d_static,
            class_count: u.class_count,
            dim: (u.dim() != u.d_static).then_some(u.dim()),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        let mut line = String::new();
        for (row, label) in u.frames.row_iter().zip(&u.labels) {
            line.clear();
            for v in row {
                // shortest representation that round-trips exactly
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&label.to_string());
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn read_utterances<R: BufRead>(r: R) -> Result<Vec<Utterance>> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut out = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        let line = line?;
        let mut last_line = lineno;
        if line.trim().is_empty() {
            continue;
        }
        let header: UtteranceHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: format!("bad utterance header: {e}"),
        })?;
        let dim = header.dim.unwrap_or(header.d_static);
        let mut data = Vec::with_capacity(header.t * dim);
        let mut labels = Vec::with_capacity(header.t);
        for _ in 0..header.t {
            let Some((lineno, row)) = lines.next() else {
                return Err(Error::Parse {
                    line: last_line + 1,
                    message: format!("file ends inside an utterance of {} frames", header.t),
                });
            };
            let row = row?;
            last_line = lineno;
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} columns, found {}", dim + 1, fields.len()),
                });
            }
            for f in &fields[..dim] {
                data.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad value {f:?}: {e}"),
                })?);
            }
            labels.push(fields[dim].parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("bad label {:?}: {e}", fields[dim]),
            })?);
        }
        let u = Utterance {
            frames: Matrix::from_row_major(header.t, dim, data)?,
            labels,
            speaker_id: header.speaker_id,
            condition_id: header.condition_id,
            band: header.band,
            d_static: header.d_static,
            class_count: header.class_count,
        };
        u.validate().map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(u);
    }
    Ok(out)
}

pub fn save_utterances(path: &Path, utts: &[Utterance]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_utterances(&mut w, utts)?;
    w.flush()?;
    Ok(())
}

pub fn load_utterances(path: &Path) -> Result<Vec<Utterance>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_utterances(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(rows: &[Vec<f64>]) -> Utterance {
        let frames = Matrix::from_rows(rows).unwrap();
        let labels = vec![0; frames.rows()];
        Utterance::new(frames, labels, "spk", "clean", Band::Wide, 2).unwrap()
    }

    #[test]
    fn constant_signal_has_zero_dynamics() {
        let u = utt(&vec![vec![3.0, -1.5]; 6]);
        let d = add_dynamics(&u, 2).unwrap();
        assert_eq!(d.dim(), 6);
        for row in d.frames.row_iter() {
            assert_eq!(&row[..2], &[3.0, -1.5]);
            assert!(row[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_has_unit_delta_inside() {
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64]).collect();
        let d = add_dynamics(&utt(&rows), 1).unwrap();
        for t in 2..8 {
            assert!((d.frames[(t, 1)] - 1.0).abs() < 1e-15, "t={t}");
        }
    }

    #[test]
    fn dynamics_of_order_zero_is_identity_and_order_three_rejected() {
        let u = utt(&[vec![1.0], vec![2.0]]);
        assert_eq!(add_dynamics(&u, 0).unwrap(), u);
        assert!(matches!(add_dynamics(&u, 3), Err(Error::InvalidConfig(_))));
        let d = add_dynamics(&u, 1).unwrap();
        assert!(matches!(add_dynamics(&d, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_normalize_edge_cases() {
        let c = mean_normalize(&utt(&vec![vec![2.0, 5.0]; 4]));
        assert!(c.frames.as_slice().iter().all(|&v| v == 0.0));
        let single = mean_normalize(&utt(&[vec![1.0, -7.0]]));
        assert!(single.frames.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn splice_identity_and_width() {
        let u = utt(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(splice_context(&u, 1).unwrap(), u.frames);
        assert!(matches!(splice_context(&u, 4), Err(Error::InvalidConfig(_))));
        let wide = Matrix::zeros(2, 29 * 3);
        assert_eq!(splice_frames(&wide, 11).unwrap().cols(), 957);
    }

    #[test]
    fn splice_replicates_edges() {
        let u = utt(&[vec![10.0], vec![20.0], vec![30.0]]);
        let s = splice_context(&u, 3).unwrap();
        assert_eq!(s.row(0), &[10.0, 10.0, 20.0]);
        assert_eq!(s.row(1), &[10.0, 20.0, 30.0]);
        assert_eq!(s.row(2), &[20.0, 30.0, 30.0]);
    }

    #[test]
    fn masking_zeroes_high_channels_of_every_block() {
        let spec = FeatureSpec {
            n_low: 22,
            n_high: 7,
            context: 1,
            dynamics_order: 0,
        };
        let row: Vec<f64> = (0..29).map(|i| i as f64 + 1.0).collect();
        let m = mask_high_band(&utt(&[row.clone()]), &spec).unwrap();
        assert_eq!(m.band, Band::Narrow);
        assert_eq!(&m.frames.row(0)[..22], &row[..22]);
        assert!(m.frames.row(0)[22..].iter().all(|&v| v == 0.0));
        assert_eq!(mask_high_band(&m, &spec).unwrap(), m);

        let dyn_u = add_dynamics(&utt(&vec![row; 5]), 2).unwrap();
        let m = mask_high_band(&dyn_u, &spec).unwrap();
        for block in m.frames.row(2).chunks(29) {
            assert!(block[22..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn masking_without_high_band_only_retags() {
        let spec = FeatureSpec {
            n_low: 2,
            n_high: 0,
            context: 1,
            dynamics_order: 0,
        };
        let u = utt(&[vec![1.0, 2.0]]);
        let m = mask_high_band(&u, &spec).unwrap();
        assert_eq!(m.frames, u.frames);
        assert_eq!(m.band, Band::Narrow);
        let wrong = FeatureSpec { n_low: 3, ..spec };
        assert!(matches!(mask_high_band(&u, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn warp_identity_midpoint_and_range() {
        let u = utt(&[vec![2.0, 6.0], vec![-1.0, 1.0]]);
        assert_eq!(vtln_warp(&u, 1.0).unwrap(), u);
        let w = vtln_warp(&u, 0.5).unwrap();
        assert_eq!(w.frames.row(0), &[2.0, 4.0]);
        assert_eq!(w.frames.row(1), &[-1.0, 0.0]);
        assert!(matches!(vtln_warp(&u, 0.5 - 1e-9), Err(Error::InvalidConfig(_))));
        assert!(matches!(vtln_warp(&u, 2.0), Err(Error::InvalidConfig(_))));
        // beyond the last channel clamps
        let w = vtln_warp(&u, 1.5).unwrap();
        assert_eq!(w.frames.row(0), &[2.0, 6.0]);
    }

    #[test]
    fn truncated_file_names_the_line() {
        let u = utt(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mut buf = Vec::new();
        write_utterances(&mut buf, &[u]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        match read_utterances(truncated.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let garbled = text.replace("3.0,4.0", "3.0,x");
        match read_utterances(garbled.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let mut buf = Vec::new();
        write_utterances(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
        assert!(read_utterances(&buf[..]).unwrap().is_empty());
    }
}
