//! Invariance measurements on a trained network: activation saturation,
//! per-layer gain norms `‖diag(v∘(1−v)) Wᵀ‖₂`, weight magnitude statistics,
//! paired-representation distances, top-layer KL, and empirical
//! perturbation shrinkage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, sub, Matrix};
use crate::network::{LabeledFrames, Network, PROB_FLOOR};

pub const DEFAULT_SATURATION_EPS: f64 = 0.05;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest singular value by power iteration on `MᵀM`.
///
/// Starts from the all-ones vector; if that start lies in the null space of
/// a nonzero `M` the iteration restarts from a fixed ramp vector.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("spectral norm of an empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("spectral norm of a non-finite matrix".into()));
    }
    if m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let n = m.cols();
    let ones = vec![1.0; n];
    let lambda = match power_iterate(m, ones)? {
        Some(l) => l,
        None => {
            let ramp: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt()).collect();
            match power_iterate(m, ramp)? {
                Some(l) => l,
                // a nonzero matrix annihilating both starts: try each basis
                // vector
                None => {
                    let mut best = 0.0f64;
                    for i in 0..n {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        if let Some(l) = power_iterate(m, e)? {
                            best = best.max(l);
                        }
                    }
                    best
                }
            }
        }
    };
    Ok(lambda.max(0.0).sqrt())
}

/// Returns the dominant eigenvalue of `MᵀM`, or `None` if the start
/// vector collapsed to zero.
fn power_iterate(m: &Matrix, start: Vec<f64>) -> Result<Option<f64>> {
    let mut v = start;
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda_prev = f64::NAN;
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = m.tr_mul_vec(&m.mul_vec(&v)?)?;
        // Rayleigh quotient with ‖v‖ = 1
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(None);
        }
        if (lambda - lambda_prev).abs() < POWER_TOL * lambda.abs() {
            return Ok(Some(lambda));
        }
        lambda_prev = lambda;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Err(Error::ConvergenceFailure {
        iterations: POWER_MAX_ITERS,
        estimate: lambda.max(0.0).sqrt(),
    })
}

/// Fraction of hidden activations below `eps` or above `1 − eps`, per
/// hidden layer, over all frames.
pub fn saturation_stats(net: &Network, data: &LabeledFrames, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::config(format!("saturation eps must be in (0, 0.5), got {eps}")));
    }
    let layers = net.hidden_layer_count();
    let per_frame = data
        .inputs
        .row_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let trace = net.forward(x)?;
            Ok(trace
                .hidden()
                .iter()
                .map(|v| v.iter().filter(|&&a| a < eps || a > 1.0 - eps).count())
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; layers];
    for frame in &per_frame {
        for (c, n) in counts.iter_mut().zip(frame) {
            *c += n;
        }
    }
    Ok(counts
        .iter()
        .zip(net.layers())
        .map(|(&c, l)| {
            let total = l.fan_out() * data.len();
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        })
        .collect())
}

/// `diag(s) Wᵀ` for a layer with weights `W` (`fan_in × fan_out`) and
/// output slopes `s = v∘(1−v)`.
pub fn gain_matrix(weights: &Matrix, slopes: &[f64]) -> Matrix {
    Matrix::from_fn(weights.cols(), weights.rows(), |i, j| slopes[i] * weights[(j, i)])
}

/// Per-frame gain norm of every hidden layer.
pub fn frame_gain_norms(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let trace = net.forward(x)?;
    net.layers()[..net.hidden_layer_count()]
        .iter()
        .zip(trace.hidden())
        .enumerate()
        .map(|(layer, (params, v))| {
            let slopes: Vec<f64> = v.iter().map(|a| a * (1.0 - a)).collect();
            spectral_norm(&gain_matrix(&params.weights, &slopes)).map_err(|e| Error::GainNorm {
                layer,
                frame: 0,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMax {
    pub mean: f64,
    pub max: f64,
}

/// Mean and max over frames of each hidden layer's gain norm.
pub fn gain_norms(net: &Network, data: &LabeledFrames) -> Result<Vec<MeanMax>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("gain norms need at least one frame".into()));
    }
    let rows: Vec<&[f64]> = data.inputs.row_iter().collect();
    let per_frame = rows
        .par_iter()
        .enumerate()
        .map(|(frame, x)| {
            frame_gain_norms(net, x).map_err(|e| match e {
                Error::GainNorm { layer, source, .. } => Error::GainNorm { layer, frame, source },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let layers = net.hidden_layer_count();
    Ok((0..layers)
        .map(|l| {
            let (mut sum, mut max) = (0.0, 0.0f64);
            for f in &per_frame {
                sum += f[l];
                max = max.max(f[l]);
            }
            MeanMax {
                mean: sum / per_frame.len() as f64,
                max,
            }
        })
        .collect())
}

/// Fraction of weights (biases excluded) with `|w| < threshold`, per layer
/// including the softmax layer.
pub fn weight_fraction_below(net: &Network, threshold: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.0) {
        return Err(Error::config(format!("threshold must be positive, got {threshold}")));
    }
    Ok(net
        .layers()
        .iter()
        .map(|l| {
            let w = l.weights.as_slice();
            w.iter().filter(|v| v.abs() < threshold).count() as f64 / w.len() as f64
        })
        .collect())
}

/// The same frames seen under two conditions (e.g. wideband and
/// narrowband). The first member is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub a: Matrix,
    pub b: Matrix,
}

impl PairSet {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::shape(format!(
                "pair members are {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(PairSet { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.rows() == 0
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("pair set is empty".into()));
        }
        if self.a.cols() != net.input_dim() {
            return Err(Error::shape(format!(
                "pairs have width {}, network expects {}",
                self.a.cols(),
                net.input_dim()
            )));
        }
        Ok(())
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        self.a.row_iter().zip(self.b.row_iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

impl MeanVar {
    pub fn of(values: &[f64]) -> MeanVar {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanVar { mean, variance }
    }
}

/// Euclidean distance between the paired hidden representations, summarised
/// per hidden layer.
pub fn paired_layer_distances(net: &Network, pairs: &PairSet) -> Result<Vec<MeanVar>> {
    pairs.check(net)?;
    let per_pair = pairs
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(xa, xb)| {
            let (ta, tb) = (net.forward(xa)?, net.forward(xb)?);
            Ok(ta
                .hidden()
                .iter()
                .zip(tb.hidden())
                .map(|(ha, hb)| norm2(&sub(ha, hb)))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..net.hidden_layer_count())
        .map(|l| MeanVar::of(&per_pair.iter().map(|d| d[l]).collect::<Vec<_>>()))
        .collect())
}

/// `KL(p ∥ q)` in nats with `q` clamped at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum::<f64>()
        // rounding can leave a tiny negative for identical inputs
        .max(0.0)
}

/// Mean over pairs of `KL(p(·|a) ∥ p(·|b))`.
pub fn top_layer_kl(net: &Network, pairs: &PairSet) -> Result<f64> {
    pairs.check(net)?;
    let kls = pairs
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(xa, xb)| Ok(kl_divergence(&net.posteriors(xa)?, &net.posteriors(xb)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

/// Push `x` by `t·direction` and report `‖δ^{ℓ+1}‖ / ‖δ^ℓ‖` for each hidden
/// layer, where `δ^0 = t·direction`.
pub fn perturbation_shrinkage(net: &Network, x: &[f64], direction: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config(format!("perturbation size must be positive, got {t}")));
    }
    if direction.len() != x.len() {
        return Err(Error::shape("direction and input differ in length"));
    }
    let dn = norm2(direction);
    if (dn - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("direction must have unit norm, has {dn}")));
    }
    let moved: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + t * d).collect();
    let (base, pert) = (net.forward(x)?, net.forward(&moved)?);
    let norms: Vec<f64> = base
        .activations
        .iter()
        .zip(&pert.activations)
        .map(|(a, b)| norm2(&sub(b, a)))
        .collect();
    Ok(norms
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect())
}

/// One row of a probe report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub saturation: f64,
    pub gain_mean: f64,
    pub gain_max: f64,
    pub dist_mean: Option<f64>,
    pub dist_var: Option<f64>,
    pub wfrac: f64,
}

/// Per-hidden-layer diagnostics plus the top-layer KL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub saturation_eps: f64,
    pub weight_threshold: f64,
    pub layers: Vec<LayerProbe>,
    pub kl_mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub saturation_eps: f64,
    pub weight_threshold: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            saturation_eps: DEFAULT_SATURATION_EPS,
            weight_threshold: 0.5,
        }
    }
}

pub const CSV_COLUMNS: [&str; 8] = [
    "layer", "saturation", "gain_mean", "gain_max", "dist_mean", "dist_var", "kl_mean", "wfrac",
];

impl ProbeReport {
    pub fn measure(
        net: &Network,
        data: &LabeledFrames,
        pairs: Option<&PairSet>,
        settings: &ProbeSettings,
    ) -> Result<Self> {
        let saturation = saturation_stats(net, data, settings.saturation_eps)?;
        let gains = gain_norms(net, data)?;
        let wfrac = weight_fraction_below(net, settings.weight_threshold)?;
        let dists = pairs.map(|p| paired_layer_distances(net, p)).transpose()?;
        let kl_mean = pairs.map(|p| top_layer_kl(net, p)).transpose()?;
        let layers = (0..net.hidden_layer_count())
            .map(|l| LayerProbe {
                layer: l + 1,
                saturation: saturation[l],
                gain_mean: gains[l].mean,
                gain_max: gains[l].max,
                dist_mean: dists.as_ref().map(|d| d[l].mean),
                dist_var: dists.as_ref().map(|d| d[l].variance),
                wfrac: wfrac[l],
            })
            .collect();
        Ok(ProbeReport {
            saturation_eps: settings.saturation_eps,
            weight_threshold: settings.weight_threshold,
            layers,
            kl_mean,
        })
    }

    /// One row per hidden layer; `kl_mean` is repeated on every row and
    /// missing values are empty cells.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for l in &self.layers {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{},{},{},{:?}\n",
                l.layer,
                l.saturation,
                l.gain_mean,
                l.gain_max,
                cell(l.dist_mean),
                cell(l.dist_var),
                cell(self.kl_mean),
                l.wfrac
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerParams;

    fn scalar_chain(w: f64, b: f64) -> Network {
        Network::new(vec![
            LayerParams::new(Matrix::from_row_major(1, 1, vec![w]).unwrap(), vec![b]).unwrap(),
            LayerParams::zeros(1, 2),
        ])
        .unwrap()
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm(&Matrix::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]).unwrap();
        assert!((spectral_norm(&d).unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        assert!(spectral_norm(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn spectral_norm_survives_ones_in_null_space() {
        let m = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        assert!((spectral_norm(&m).unwrap() - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_scales_absolutely() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-0.3, 0.9, 2.2]]).unwrap();
        let base = spectral_norm(&m).unwrap();
        let mut scaled = m.clone();
        scaled.scale(-3.5);
        assert!((spectral_norm(&scaled).unwrap() - 3.5 * base).abs() < 1e-9 * 3.5 * base);
    }

    #[test]
    fn zero_net_has_no_saturation_or_gain() {
        let net = Network::init(&[3, 4, 4, 2], 0, 0.0).unwrap();
        let data = LabeledFrames::new(Matrix::from_fn(5, 3, |i, j| (i + j) as f64), vec![0; 5]).unwrap();
        assert_eq!(saturation_stats(&net, &data, 0.05).unwrap(), vec![0.0, 0.0]);
        for g in gain_norms(&net, &data).unwrap() {
            assert_eq!((g.mean, g.max), (0.0, 0.0));
        }
        assert_eq!(weight_fraction_below(&net, 0.5).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn huge_weights_saturate_everything() {
        let net = Network::new(vec![
            LayerParams::new(Matrix::from_rows(&[vec![100.0, -100.0]]).unwrap(), vec![0.0; 2]).unwrap(),
            LayerParams::zeros(2, 2),
        ])
        .unwrap();
        let data = LabeledFrames::new(Matrix::from_rows(&[vec![1.0], vec![-0.5]]).unwrap(), vec![0, 1]).unwrap();
        assert_eq!(saturation_stats(&net, &data, 0.05).unwrap(), vec![1.0]);
        assert!(saturation_stats(&net, &data, 0.5).is_err());
    }

    #[test]
    fn scalar_gain_is_weight_times_slope() {
        // w = 2 and input 0 gives v = 0.5, gain = 2 · 0.25
        let net = scalar_chain(2.0, 0.0);
        let data = LabeledFrames::new(Matrix::zeros(1, 1), vec![0]).unwrap();
        let g = gain_norms(&net, &data).unwrap();
        assert!((g[0].mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_fraction_counts_strictly_below() {
        let net = Network::new(vec![LayerParams::new(
            Matrix::from_rows(&[vec![0.4, 0.6]]).unwrap(),
            vec![0.0; 2],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(weight_fraction_below(&net, 0.5).unwrap(), vec![0.5]);
        assert!(weight_fraction_below(&net, 0.0).is_err());
    }

    #[test]
    fn identical_pairs_are_zero_distance() {
        let net = Network::init(&[3, 5, 4, 3], 2, 1.0).unwrap();
        let a = Matrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.7);
        let pairs = PairSet::new(a.clone(), a).unwrap();
        for d in paired_layer_distances(&net, &pairs).unwrap() {
            assert_eq!((d.mean, d.variance), (0.0, 0.0));
        }
        assert_eq!(top_layer_kl(&net, &pairs).unwrap(), 0.0);
    }

    #[test]
    fn kl_of_certain_against_uniform_is_ln2() {
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn shrinkage_of_constant_map_is_zero() {
        let net = Network::init(&[2, 3, 2], 0, 0.0).unwrap();
        let r = perturbation_shrinkage(&net, &[0.1, 0.2], &[1.0, 0.0], 1e-3).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(matches!(
            perturbation_shrinkage(&net, &[0.1, 0.2], &[1.0, 0.0], 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn scalar_chain_shrinks_by_sigmoid_slope() {
        let net = scalar_chain(1.0, 0.0);
        let r = perturbation_shrinkage(&net, &[0.0], &[1.0], 1e-6).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_layer() {
        let net = Network::init(&[3, 4, 4, 2], 1, 0.3).unwrap();
        let data = LabeledFrames::new(Matrix::from_fn(6, 3, |i, j| (i * j) as f64 * 0.1), vec![0; 6]).unwrap();
        let report = ProbeReport::measure(&net, &data, None, &ProbeSettings::default()).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "layer,saturation,gain_mean,gain_max,dist_mean,dist_var,kl_mean,wfrac");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
