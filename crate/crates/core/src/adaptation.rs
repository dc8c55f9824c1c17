//! Feature-space adaptation through a frozen network.
//!
//! fDLR is a per-frame affine transform `f ↦ A f + b` applied after
//! dynamics/normalization and before context splicing, estimated by
//! minimizing cross-entropy with the network held fixed. `self_adapt`
//! alternates labeling with the adapted model and re-estimating.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{splice_frames, vtln_warp, FrontEnd, Utterance};
use crate::linalg::{axpy, Matrix};
use crate::network::{argmax, cross_entropy, Network, PROB_FLOOR};

/// Step halvings tried before a gradient step is given up on.
pub const MAX_HALVINGS: usize = 30;

/// Rounds of label-then-adapt used by [`self_adapt`] unless told otherwise.
pub const DEFAULT_SELF_ADAPT_ITERATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FdlrTransform {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl FdlrTransform {
    pub fn identity(dim: usize) -> Self {
        FdlrTransform {
            a: Matrix::identity(dim),
            b: vec![0.0; dim],
        }
    }

    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() != b.len() {
            return Err(Error::shape(format!(
                "transform needs a square matrix matching the offset, got {}x{} and {}",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite transform".into()));
        }
        Ok(FdlrTransform { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.iter().all(|v| v.is_finite())
    }

    pub fn apply_frame(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.a.mul_vec(f)?;
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        Ok(y)
    }

    fn apply_matrix(&self, frames: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(frames.rows(), frames.cols());
        for t in 0..frames.rows() {
            out.row_mut(t).copy_from_slice(&self.apply_frame(frames.row(t))?);
        }
        Ok(out)
    }

    /// `self ∘ inner`: applying `inner` first, then `self`.
    pub fn compose(&self, inner: &FdlrTransform) -> Result<FdlrTransform> {
        let a = self.a.matmul(&inner.a)?;
        let b = self.apply_frame(&inner.b)?;
        FdlrTransform::new(a, b)
    }

    /// Distance of `A` from identity in Frobenius norm.
    pub fn deviation_from_identity(&self) -> f64 {
        let mut d = self.a.clone();
        for i in 0..d.rows() {
            d[(i, i)] -= 1.0;
        }
        d.frobenius_norm()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TransformFile {
            dim: self.dim(),
            a: self.a.as_slice().to_vec(),
            b: self.b.clone(),
        })
        .expect("transform serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TransformFile = serde_json::from_str(s)?;
        FdlrTransform::new(Matrix::from_row_major(f.dim, f.dim, f.a)?, f.b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TransformFile {
    dim: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Replace every frame `f` by `A f + b`.
pub fn apply_fdlr(t: &FdlrTransform, u: &Utterance) -> Result<Utterance> {
    if t.dim() != u.dim() {
        return Err(Error::shape(format!(
            "transform has dimension {}, frames have width {}",
            t.dim(),
            u.dim()
        )));
    }
    Ok(u.with_frames(t.apply_matrix(&u.frames)?))
}

/// Frames ready for adaptation: post-frontend, pre-splicing, with the labels
/// to fit.
#[derive(Debug, Clone)]
pub struct AdaptationSet<'a> {
    pub utterances: &'a [Utterance],
    pub labels: Vec<Vec<usize>>,
    pub context: usize,
}

impl<'a> AdaptationSet<'a> {
    pub fn new(utterances: &'a [Utterance], labels: Vec<Vec<usize>>, context: usize) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidInput("adaptation set is empty".into()));
        }
        if labels.len() != utterances.len() || utterances.iter().zip(&labels).any(|(u, l)| u.len() != l.len()) {
            return Err(Error::shape("labels do not cover every frame"));
        }
        if context % 2 == 0 {
            return Err(Error::config(format!("context must be odd, got {context}")));
        }
        let dim = utterances[0].dim();
        if utterances.iter().any(|u| u.dim() != dim) {
            return Err(Error::shape("utterances differ in frame width"));
        }
        Ok(AdaptationSet {
            utterances,
            labels,
            context,
        })
    }

    /// Reference labels of the utterances themselves.
    pub fn supervised(utterances: &'a [Utterance], context: usize) -> Result<Self> {
        Self::new(utterances, utterances.iter().map(|u| u.labels.clone()).collect(), context)
    }

    pub fn dim(&self) -> usize {
        self.utterances[0].dim()
    }

    fn frame_count(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.dim() * self.context != net.input_dim() {
            return Err(Error::shape(format!(
                "frames of width {} spliced {} wide give {} inputs, network expects {}",
                self.dim(),
                self.context,
                self.dim() * self.context,
                net.input_dim()
            )));
        }
        let classes = net.class_count();
        if let Some(&label) = self.labels.iter().flatten().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        Ok(())
    }

    /// Mean cross-entropy through `t`; `+∞` when the transformed features
    /// are not finite.
    pub fn objective(&self, net: &Network, t: &FdlrTransform) -> Result<f64> {
        if !t.is_finite() {
            return Ok(f64::INFINITY);
        }
        let sums = self
            .utterances
            .par_iter()
            .zip(&self.labels)
            .map(|(u, labels)| {
                let spliced = splice_frames(&t.apply_matrix(&u.frames)?, self.context)?;
                if !spliced.is_finite() {
                    return Ok(f64::INFINITY);
                }
                let mut sum = 0.0;
                for (x, &l) in spliced.row_iter().zip(labels) {
                    sum += cross_entropy(&net.forward(x)?, l)?;
                }
                Ok(sum)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(sums.iter().sum::<f64>() / self.frame_count() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to `(A, b)`.
    fn objective_and_gradient(&self, net: &Network, t: &FdlrTransform) -> Result<(f64, FdlrTransform)> {
        let dim = self.dim();
        let k = (self.context / 2) as isize;
        let parts = self
            .utterances
            .par_iter()
            .zip(&self.labels)
            .map(|(u, labels)| {
                let transformed = t.apply_matrix(&u.frames)?;
                let spliced = splice_frames(&transformed, self.context)?;
                let mut grad_a = Matrix::zeros(dim, dim);
                let mut grad_b = vec![0.0; dim];
                let mut sum = 0.0;
                let last = u.len() as isize - 1;
                for (tt, (x, &l)) in spliced.row_iter().zip(labels).enumerate() {
                    let trace = net.forward(x)?;
                    sum += cross_entropy(&trace, l)?;
                    let input_grad = net.input_gradient(&trace, l)?;
                    // each context block came from one (replicated) source frame
                    for (j, offset) in (-k..=k).enumerate() {
                        let src = (tt as isize + offset).clamp(0, last) as usize;
                        let g = &input_grad[j * dim..(j + 1) * dim];
                        let f = u.frames.row(src);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gr, f, grad_a.row_mut(r));
                            }
                        }
                        axpy(1.0, g, &mut grad_b);
                    }
                }
                Ok((sum, grad_a, grad_b))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.frame_count() as f64;
        let mut total = 0.0;
        let mut grad = FdlrTransform {
            a: Matrix::zeros(dim, dim),
            b: vec![0.0; dim],
        };
        for (sum, ga, gb) in parts {
            total += sum;
            axpy(1.0 / n, ga.as_slice(), grad.a.as_mut_slice());
            axpy(1.0 / n, &gb, &mut grad.b);
        }
        Ok((total / n, grad))
    }
}

#[derive(Debug, Clone)]
pub struct FdlrOutcome {
    pub transform: FdlrTransform,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
}

/// fDLR from the identity transform.
pub fn fdlr_estimate(net: &Network, set: &AdaptationSet<'_>, steps: usize, lr0: f64) -> Result<FdlrOutcome> {
    fdlr_estimate_from(net, set, FdlrTransform::identity(set.dim()), steps, lr0)
}

/// Full-batch gradient descent on mean cross-entropy with backtracking:
/// a step is accepted only if it does not raise the objective, halving the
/// step size up to [`MAX_HALVINGS`] times. The network is only read.
pub fn fdlr_estimate_from(
    net: &Network,
    set: &AdaptationSet<'_>,
    start: FdlrTransform,
    steps: usize,
    lr0: f64,
) -> Result<FdlrOutcome> {
    if !(lr0.is_finite() && lr0 > 0.0) {
        return Err(Error::config(format!("learning rate must be positive, got {lr0}")));
    }
    set.check(net)?;
    if start.dim() != set.dim() {
        return Err(Error::shape("start transform does not match frame width"));
    }
    let mut current = start;
    let mut objective = vec![set.objective(net, &current)?];
    if !objective[0].is_finite() {
        return Err(Error::AdaptationDiverged("objective is not finite at the start point".into()));
    }
    let mut lr = lr0;
    for _ in 0..steps {
        let (value, grad) = set.objective_and_gradient(net, &current)?;
        if grad.a.frobenius_norm() == 0.0 && grad.b.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut accepted = None;
        let mut last_finite = true;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = current.clone();
            axpy(-lr, grad.a.as_slice(), cand.a.as_mut_slice());
            axpy(-lr, &grad.b, &mut cand.b);
            let v = set.objective(net, &cand)?;
            last_finite = v.is_finite();
            if last_finite && v <= value {
                accepted = Some((cand, v));
                break;
            }
            lr *= 0.5;
        }
        match accepted {
            Some((cand, v)) => {
                current = cand;
                objective.push(v);
                lr = (lr * 2.0).min(lr0);
            }
            None if !last_finite => {
                return Err(Error::AdaptationDiverged(format!(
                    "objective still non-finite after {MAX_HALVINGS} step halvings"
                )))
            }
            // no descent at any tried step size: at a minimum to working precision
            None => break,
        }
    }
    Ok(FdlrOutcome {
        transform: current,
        objective,
    })
}

/// Argmax labels of every frame through `t`.
pub fn self_labels(net: &Network, utts: &[Utterance], t: &FdlrTransform, context: usize) -> Result<Vec<Vec<usize>>> {
    utts.par_iter()
        .map(|u| {
            let spliced = splice_frames(&apply_fdlr(t, u)?.frames, context)?;
            spliced.row_iter().map(|x| net.predict(x)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptSettings {
    pub iterations: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings {
            iterations: DEFAULT_SELF_ADAPT_ITERATIONS,
            steps: 20,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfAdaptOutcome {
    pub transform: FdlrTransform,
    /// Frames whose self-label changed relative to the previous iteration
    /// (the first entry compares against the unadapted model and is 0).
    pub label_changes: Vec<usize>,
    pub objectives: Vec<Vec<f64>>,
}

/// Unsupervised adaptation: label with the current transform, re-estimate
/// starting from the current transform, repeat.
pub fn self_adapt(
    net: &Network,
    utts: &[Utterance],
    context: usize,
    settings: &AdaptSettings,
) -> Result<SelfAdaptOutcome> {
    if settings.iterations == 0 {
        return Err(Error::config("self-adaptation needs at least one iteration"));
    }
    if utts.is_empty() {
        return Err(Error::InvalidInput("no utterances to adapt on".into()));
    }
    let mut current = FdlrTransform::identity(utts[0].dim());
    let mut previous: Option<Vec<Vec<usize>>> = None;
    let mut label_changes = Vec::with_capacity(settings.iterations);
    let mut objectives = Vec::with_capacity(settings.iterations);
    for iteration in 0..settings.iterations {
        let wrap = |e| Error::SelfAdapt {
            iteration,
            source: Box::new(e),
        };
        let labels = self_labels(net, utts, &current, context).map_err(wrap)?;
        let changed = previous.as_ref().map_or(0, |p| {
            p.iter()
                .flatten()
                .zip(labels.iter().flatten())
                .filter(|(a, b)| a != b)
                .count()
        });
        label_changes.push(changed);
        let set = AdaptationSet::new(utts, labels.clone(), context).map_err(wrap)?;
        let out = fdlr_estimate_from(net, &set, current, settings.steps, settings.learning_rate).map_err(wrap)?;
        current = out.transform;
        objectives.push(out.objective);
        previous = Some(labels);
    }
    Ok(SelfAdaptOutcome {
        transform: current,
        label_changes,
        objectives,
    })
}

/// Candidate warp factors, strictly increasing inside `(0.5, 2.0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpGrid {
    alphas: Vec<f64>,
}

impl WarpGrid {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::config("warp grid is empty"));
        }
        if alphas.iter().any(|&a| !(a > 0.5 && a < 2.0)) {
            return Err(Error::config("warp factors must lie in (0.5, 2.0)"));
        }
        if alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("warp grid must be strictly increasing"));
        }
        Ok(WarpGrid { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

impl Default for WarpGrid {
    /// 0.88 to 1.12 in steps of 0.02.
    fn default() -> Self {
        WarpGrid {
            alphas: (0..13).map(|i| (88 + 2 * i) as f64 / 100.0).collect(),
        }
    }
}

/// Mean log-posterior of the argmax label over the frames of `u` after
/// warping by `alpha`.
pub fn warp_score(net: &Network, u: &Utterance, alpha: f64, front_end: &FrontEnd) -> Result<f64> {
    let warped = vtln_warp(u, alpha)?;
    let frames = front_end.frames(&warped)?;
    let mut sum = 0.0;
    for x in frames.inputs.row_iter() {
        let p = net.posteriors(x)?;
        sum += p[argmax(&p)].max(PROB_FLOOR).ln();
    }
    Ok(sum / frames.len() as f64)
}

/// Grid search for the warp maximizing [`warp_score`]. Ties go to the
/// factor nearest 1, then to the smaller one.
pub fn select_vtln_warp(net: &Network, u: &Utterance, grid: &WarpGrid, front_end: &FrontEnd) -> Result<f64> {
    let scores = grid
        .alphas
        .par_iter()
        .map(|&a| warp_score(net, u, a, front_end))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..scores.len() {
        let (a, b) = (grid.alphas[i], grid.alphas[best]);
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && (a - 1.0).abs() < (b - 1.0).abs());
        if better {
            best = i;
        }
    }
    Ok(grid.alphas[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Band;

    fn utt(rows: &[Vec<f64>]) -> Utterance {
        let frames = Matrix::from_rows(rows).unwrap();
        let n = frames.rows();
        Utterance::new(frames, vec![0; n], "s", "clean", Band::Wide, 2).unwrap()
    }

    #[test]
    fn identity_leaves_frames_alone() {
        let u = utt(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        assert_eq!(apply_fdlr(&FdlrTransform::identity(2), &u).unwrap(), u);
    }

    #[test]
    fn doubling_transform() {
        let t = FdlrTransform::new(Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap(), vec![0.0; 2]).unwrap();
        let out = apply_fdlr(&t, &utt(&[vec![1.0, 2.0]])).unwrap();
        assert_eq!(out.frames.row(0), &[2.0, 4.0]);
        assert!(matches!(apply_fdlr(&FdlrTransform::identity(3), &utt(&[vec![1.0, 2.0]])), Err(Error::Shape(_))));
    }

    #[test]
    fn json_round_trip() {
        let t = FdlrTransform::new(Matrix::from_rows(&[vec![1.5, -0.25], vec![0.1, 0.9]]).unwrap(), vec![0.3, -0.7]).unwrap();
        assert_eq!(FdlrTransform::from_json(&t.to_json()).unwrap(), t);
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["A"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn zero_steps_returns_identity() {
        let net = Network::init(&[6, 3, 2], 0, 0.3).unwrap();
        let utts = vec![utt(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]])];
        let set = AdaptationSet::supervised(&utts, 3).unwrap();
        let out = fdlr_estimate(&net, &set, 0, 0.5).unwrap();
        assert_eq!(out.transform, FdlrTransform::identity(2));
        assert_eq!(out.objective.len(), 1);
    }

    #[test]
    fn grid_validation_and_default() {
        let g = WarpGrid::default();
        assert_eq!(g.alphas().len(), 13);
        assert_eq!(g.alphas()[0], 0.88);
        assert_eq!(g.alphas()[12], 1.12);
        assert!(WarpGrid::new(vec![]).is_err());
        assert!(WarpGrid::new(vec![1.0, 1.0]).is_err());
        assert!(WarpGrid::new(vec![0.4]).is_err());
    }

    #[test]
    fn singleton_grid_selects_its_point() {
        let net = Network::init(&[9, 4, 3], 0, 0.5).unwrap();
        let u = utt(&[vec![0.1, 0.2, 0.3], vec![0.3, 0.1, 0.0]]);
        let fe = FrontEnd {
            dynamics_order: 0,
            mean_normalize: false,
            context: 3,
        };
        let a = select_vtln_warp(&net, &u, &WarpGrid::new(vec![1.0]).unwrap(), &fe).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn self_adapt_needs_iterations() {
        let net = Network::init(&[2, 2], 0, 0.3).unwrap();
        let utts = vec![utt(&[vec![0.1, 0.2]])];
        let s = AdaptSettings {
            iterations: 0,
            ..AdaptSettings::default()
        };
        assert!(matches!(self_adapt(&net, &utts, 1, &s), Err(Error::InvalidConfig(_))));
    }
}
