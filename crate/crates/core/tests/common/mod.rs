//! Independent reference computations shared by the integration tests and
//! the acceptance harness. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use dnnlab::network::{cross_entropy, LayerParams};
use dnnlab::{LabeledFrames, Matrix, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A network with layer widths drawn from `1..=max_width`, weights and
/// biases uniform in `[-scale, scale]`.
pub fn random_network(seed: u64, max_layers: usize, max_width: usize, scale: f64) -> Network {
    let mut r = rng(seed);
    let hidden = r.random_range(1..max_layers.max(2));
    let mut sizes = vec![r.random_range(1..=max_width)];
    for _ in 0..hidden {
        sizes.push(r.random_range(1..=max_width));
    }
    sizes.push(r.random_range(2..=max_width.max(2)));
    let layers = sizes
        .windows(2)
        .map(|w| {
            let weights = Matrix::from_fn(w[0], w[1], |_, _| r.random_range(-scale..=scale));
            let biases = (0..w[1]).map(|_| r.random_range(-scale..=scale)).collect();
            LayerParams::new(weights, biases).unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..=scale)).collect()
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..=1.0))
}

/// Forward pass written out with explicit loops: returns `v^0 … v^L` and
/// the posteriors.
pub fn longhand_forward(net: &Network, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let layers = net.layers();
    let mut acts = vec![x.to_vec()];
    let mut posteriors = Vec::new();
    for (l, p) in layers.iter().enumerate() {
        let v = acts.last().unwrap();
        let mut z = vec![0.0; p.fan_out()];
        for j in 0..p.fan_out() {
            let mut s = p.biases[j];
            for i in 0..p.fan_in() {
                s += p.weights[(i, j)] * v[i];
            }
            z[j] = s;
        }
        if l + 1 < layers.len() {
            acts.push(z.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect());
        } else {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = e.iter().sum();
            posteriors = e.iter().map(|v| v / total).collect();
        }
    }
    (acts, posteriors)
}

pub fn loss(net: &Network, x: &[f64], label: usize) -> f64 {
    cross_entropy(&net.forward(x).unwrap(), label).unwrap()
}

/// Which parameter of a layer to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Param {
    Weight(usize, usize),
    Bias(usize),
}

/// Central difference of the loss in one parameter.
pub fn central_difference(net: &Network, x: &[f64], label: usize, layer: usize, p: Param, h: f64) -> f64 {
    let nudge = |delta: f64| {
        let mut n = net.clone();
        let lp = &mut n.layers_mut()[layer];
        match p {
            Param::Weight(i, j) => lp.weights[(i, j)] += delta,
            Param::Bias(j) => lp.biases[j] += delta,
        }
        loss(&n, x, label)
    };
    (nudge(h) - nudge(-h)) / (2.0 * h)
}

/// Singular values by one-sided Jacobi rotations on the columns.
pub fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|v| v * v).sum();
                let beta: f64 = a[q].iter().map(|v| v * v).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Two interleaved Gaussian clouds per class far apart: any reasonable
/// classifier separates them perfectly.
pub fn separable(seed: u64, classes: usize, dim: usize, per_class: usize) -> LabeledFrames {
    let mut r = rng(seed);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| random_vec(&mut r, dim, 3.0)).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..classes * per_class {
        let c = i % classes;
        rows.push(centres[c].iter().map(|v| v + r.random_range(-0.1..=0.1)).collect::<Vec<f64>>());
        labels.push(c);
    }
    LabeledFrames::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
}
