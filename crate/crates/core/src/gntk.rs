//! Finite-width NTK Gram matrices of masked networks, the `yᵀK⁻¹y`
//! complexity term, label-noise sweeps, path density and data loading.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitg::GridKernel;
use crate::matrix::Matrix;
use crate::netlab::{backward_signals, forward, Mask, NetParams, NetSpec};
use crate::numkit::{Activation, Rng64};
use crate::saliency::{make_mask, random_scores, snip_layer_scores, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    SyntheticGaussian,
    Cifar10Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    /// Labels in `{−1, +1}`.
    pub y: Vec<f64>,
    pub source: DataSource,
    pub noise_fraction: f64,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, source: DataSource) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::arg(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyDataset("dataset has no rows".into()));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::arg("labels must be -1 or +1"));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(Dataset {
            x,
            y,
            source,
            noise_fraction: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Copy with `round(η·m)` uniformly chosen labels flipped. Noise is
    /// applied once; flipping an already noisy dataset is refused.
    pub fn with_label_noise(&self, eta: f64, rng: &mut Rng64) -> Result<Dataset> {
        if self.noise_fraction > 0.0 {
            return Err(Error::Contract("labels were already flipped".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        let mut out = self.clone();
        out.y = flipped_labels(&self.y, &order, eta)?;
        out.noise_fraction = eta;
        Ok(out)
    }
}

/// Labels with the first `round(η·m)` positions of `order` flipped, so
/// larger η flips a superset of the labels flipped by smaller η.
pub fn flipped_labels(y: &[f64], order: &[usize], eta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::arg(format!("noise fraction must lie in [0,1], got {eta}")));
    }
    let count = (eta * y.len() as f64).round() as usize;
    let mut out = y.to_vec();
    for &i in &order[..count.min(y.len())] {
        out[i] = -out[i];
    }
    Ok(out)
}

/// Two classes at means `±(separation/√d)·1` with identity covariance,
/// rows shuffled.
pub fn synth_gaussian(m: usize, d: usize, separation: f64, rng: &mut Rng64) -> Result<Dataset> {
    if m == 0 || m % 2 == 1 {
        return Err(Error::arg(format!("sample count must be even and positive, got {m}")));
    }
    if d == 0 {
        return Err(Error::arg("dimension must be >= 1"));
    }
    let shift = separation / (d as f64).sqrt();
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for k in 0..m {
        let label = if k < m / 2 { 1.0 } else { -1.0 };
        rows.push(rng.normal_vec(d).into_iter().map(|z| z + label * shift).collect::<Vec<_>>());
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut order);
    let x = Matrix::from_fn(m, d, |i, j| rows[order[i]][j]);
    let y = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(x, y, DataSource::SyntheticGaussian)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CifarOptions {
    /// Average RGB and 2×2 pixel blocks down to 16×16 grayscale (d = 256).
    pub pool_gray: bool,
    /// Centre and scale each feature to unit variance.
    pub standardise: bool,
}

pub const CIFAR_RECORD: usize = 3073;

fn cifar_features(pixels: &[u8], pool: bool) -> Vec<f64> {
    let px = |c: usize, r: usize, col: usize| pixels[c * 1024 + r * 32 + col] as f64 / 255.0;
    if !pool {
        return pixels.iter().map(|&p| p as f64 / 255.0).collect();
    }
    let mut out = Vec::with_capacity(256);
    for r in 0..16 {
        for c in 0..16 {
            let mut s = 0.0;
            for ch in 0..3 {
                for dr in 0..2 {
                    for dc in 0..2 {
                        s += px(ch, 2 * r + dr, 2 * c + dc);
                    }
                }
            }
            out.push(s / 12.0);
        }
    }
    out
}

/// Binary CIFAR-10 records (label byte + 3072 channel-major pixels) with
/// label `c0 → −1`, `c1 → +1`; other labels are skipped.
pub fn load_cifar10_binary(
    paths: &[PathBuf],
    classes: (u8, u8),
    limit: usize,
    opts: CifarOptions,
) -> Result<Dataset> {
    if limit == 0 {
        return Err(Error::EmptyDataset("limit is 0".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    'files: for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        for (k, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
            if rec.len() != CIFAR_RECORD {
                return Err(Error::Format {
                    offset: (k * CIFAR_RECORD) as u64,
                    message: format!(
                        "{}: truncated record of {} bytes",
                        path.display(),
                        rec.len()
                    ),
                });
            }
            let label = if rec[0] == classes.0 {
                -1.0
            } else if rec[0] == classes.1 {
                1.0
            } else {
                continue;
            };
            rows.push(cifar_features(&rec[1..], opts.pool_gray));
            labels.push(label);
            if rows.len() == limit {
                break 'files;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no records with labels {} or {}",
            classes.0, classes.1
        )));
    }
    let d = rows[0].len();
    let mut x = Matrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    if opts.standardise {
        standardise_columns(&mut x);
    }
    Dataset::new(x, labels, DataSource::Cifar10Binary)
}

fn standardise_columns(x: &mut Matrix) {
    let (m, d) = x.shape();
    for j in 0..d {
        let mean = (0..m).map(|i| x[(i, j)]).sum::<f64>() / m as f64;
        let var = (0..m).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        for i in 0..m {
            let v = x[(i, j)] - mean;
            x.row_mut(i)[j] = if sd > 0.0 { v / sd } else { v };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub k: Matrix,
    pub jitter_used: f64,
    pub min_eig_estimate: f64,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

impl GramMatrix {
    pub fn new(k: Matrix) -> Result<Self> {
        if k.rows() != k.cols() || k.rows() == 0 {
            return Err(Error::arg("Gram matrix must be square and non-empty"));
        }
        if k.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Gram entry".into()));
        }
        let min_eig_estimate = to_dmatrix(&k)
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        Ok(GramMatrix {
            k,
            jitter_used: 0.0,
            min_eig_estimate,
        })
    }

    pub fn size(&self) -> usize {
        self.k.rows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|i| self.k[(i, i)]).sum()
    }
}

/// Closed-form Gram of a one-hidden-layer network:
/// `(1/n)Σ_j σ(h_j^p)σ(h_j^q) + (1/n)Σ_j a_j²σ′(h_j^p)σ′(h_j^q)·(1/d)Σ_i M_ij x_i^p x_i^q`
/// (plus `(1/n)Σ_j a_j²σ′σ′` when biases are trainable).
pub fn ntk_gram_shallow(
    spec: &NetSpec,
    params: &NetParams,
    mask: Option<&Mask>,
    x: &Matrix,
) -> Result<GramMatrix> {
    if spec.depth() != 1 {
        return Err(Error::Feature("closed-form Gram needs one hidden layer".into()));
    }
    let masks = mask.map(std::slice::from_ref);
    let (m, d, n) = (x.rows(), spec.input_dim, spec.hidden[0]);
    let act = spec.activation;
    let passes = (0..m)
        .map(|p| forward(spec, params, masks, x.row(p)))
        .collect::<Result<Vec<_>>>()?;
    let mut k = Matrix::zeros(m, m);
    for p in 0..m {
        for q in p..m {
            let (hp, hq) = (&passes[p].pre[0], &passes[q].pre[0]);
            let mut total = 0.0;
            for j in 0..n {
                let out = act.eval(hp[j]) * act.eval(hq[j]);
                let back = params.output[j].powi(2) * act.deriv(hp[j]) * act.deriv(hq[j]);
                let mut inner = 0.0;
                for i in 0..d {
                    if mask.is_none_or(|mk| mk.get(i, j)) {
                        inner += x[(p, i)] * x[(q, i)];
                    }
                }
                let bias = if spec.use_bias { 1.0 } else { 0.0 };
                total += out + back * (inner / d as f64 + bias);
            }
            let v = total / n as f64;
            k.row_mut(p)[q] = v;
            k.row_mut(q)[p] = v;
        }
    }
    GramMatrix::new(k)
}

/// Active weights per Jacobian chunk.
const CHUNK_TARGET: usize = 16_384;

/// `Σ_{(i,j) active} (A_pi S_pj)(A_qi S_qj)/fan_in` for one layer, as a sum
/// of `JᵀJ` products over row blocks of the weight matrix.
fn layer_gram(inputs: &[&[f64]], signals: &[&[f64]], mask: Option<&Mask>, fan_in: usize) -> DMatrix<f64> {
    let m = inputs.len();
    let rows = inputs[0].len();
    let cols = signals[0].len();
    let active = |i: usize| -> Vec<usize> {
        match mask {
            Some(mk) => (0..cols).filter(|&j| mk.get(i, j)).collect(),
            None => (0..cols).collect(),
        }
    };
    let actives: Vec<Vec<usize>> = (0..rows).map(active).collect();
    let mut chunks = Vec::new();
    let (mut start, mut count) = (0, 0);
    for (i, a) in actives.iter().enumerate() {
        count += a.len();
        if count >= CHUNK_TARGET {
            chunks.push((start, i + 1, count));
            start = i + 1;
            count = 0;
        }
    }
    if count > 0 {
        chunks.push((start, rows, count));
    }
    let scale = 1.0 / (fan_in as f64).sqrt();
    let parts: Vec<DMatrix<f64>> = chunks
        .par_iter()
        .map(|&(lo, hi, nnz)| {
            // column p holds sample p's gradient entries for this chunk
            let mut j = DMatrix::<f64>::zeros(nnz, m);
            for p in 0..m {
                let (a, s) = (inputs[p], signals[p]);
                let col = j.column_mut(p);
                let col = col.data.into_slice_mut();
                let mut r = 0;
                for i in lo..hi {
                    let ai = a[i] * scale;
                    for &jj in &actives[i] {
                        col[r] = ai * s[jj];
                        r += 1;
                    }
                }
            }
            let mut k = DMatrix::<f64>::zeros(m, m);
            k.gemm_tr(1.0, &j, &j, 0.0);
            k
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(m, m);
    for part in parts {
        k += part;
    }
    k
}

/// Empirical NTK Gram `K = JJᵀ` over active hidden weights, output weights
/// and (if trainable) biases, for depth 1 or 2.
pub fn ntk_gram(
    spec: &NetSpec,
    params: &NetParams,
    masks: Option<&[Mask]>,
    x: &Matrix,
) -> Result<GramMatrix> {
    if spec.depth() > 2 {
        return Err(Error::Feature(format!(
            "Gram assembly supports depth 1 or 2, got {}",
            spec.depth()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset("no samples for Gram matrix".into()));
    }
    let m = x.rows();
    let depth = spec.depth();
    let per_sample = (0..m)
        .into_par_iter()
        .map(|p| {
            let pass = forward(spec, params, masks, x.row(p))?;
            let sig = backward_signals(spec, params, masks, &pass);
            Ok((pass, sig))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut k = DMatrix::<f64>::zeros(m, m);
    for l in 0..depth {
        let inputs: Vec<&[f64]> = (0..m)
            .map(|p| if l == 0 { x.row(p) } else { per_sample[p].0.post[l - 1].as_slice() })
            .collect();
        let signals: Vec<&[f64]> = per_sample.iter().map(|(_, s)| s[l].as_slice()).collect();
        k += layer_gram(&inputs, &signals, masks.map(|ms| &ms[l]), spec.fan_in(l));
        if spec.use_bias {
            let s = DMatrix::from_fn(signals[0].len(), m, |j, p| signals[p][j]);
            k.gemm_tr(1.0, &s, &s, 1.0);
        }
    }
    let width = spec.output_width();
    let post = DMatrix::from_fn(width, m, |j, p| per_sample[p].0.post[depth - 1][j]);
    k.gemm_tr(1.0 / width as f64, &post, &post, 1.0);
    // exact symmetry
    let k = Matrix::from_fn(m, m, |p, q| {
        let (a, b) = if p <= q { (p, q) } else { (q, p) };
        k[(a, b)]
    });
    GramMatrix::new(k)
}

/// `yᵀK⁻¹y` by Cholesky, adding `1e-6·tr(K)/m` to the diagonal when the
/// smallest eigenvalue is below `1e-10·tr(K)/m`. Returns (value, jitter).
pub fn complexity_term(gram: &GramMatrix, y: &[f64]) -> Result<(f64, f64)> {
    let m = gram.size();
    if y.len() != m {
        return Err(Error::arg(format!("{} labels for a {m}x{m} Gram", y.len())));
    }
    let scale = gram.trace() / m as f64;
    let jitter = if gram.min_eig_estimate < 1e-10 * scale {
        1e-6 * scale
    } else {
        0.0
    };
    let mut k = to_dmatrix(&gram.k);
    for i in 0..m {
        k[(i, i)] += jitter;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Numeric("Gram matrix is not positive definite after jitter".into()))?;
    let yv = DVector::from_column_slice(y);
    let z = chol.solve(&yv);
    Ok((yv.dot(&z), jitter))
}

/// `P[i0] = (1/G³)·Σ W1[i1,i0]·W2[i2,i1]·W3[i3,i2]`: kernels are indexed
/// `[later layer, earlier layer]`.
pub fn path_density(w1: &GridKernel, w2: &GridKernel, w3: &GridKernel) -> Result<Vec<f64>> {
    let g = w1.size();
    if w2.size() != g || w3.size() != g {
        return Err(Error::arg("path density kernels must share one grid size"));
    }
    let inv = 1.0 / g as f64;
    let contract = |w: &GridKernel, upstream: &[f64]| -> Vec<f64> {
        (0..g)
            .map(|col| (0..g).map(|row| w.get(row, col) * upstream[row]).sum::<f64>() * inv)
            .collect()
    };
    let c3 = contract(w3, &vec![1.0; g]);
    let c2 = contract(w2, &c3);
    Ok(contract(w1, &c2))
}

/// Mask-oriented kernel (`[input, output]`) transposed to the
/// `[later, earlier]` indexing of [`path_density`].
pub fn transpose_kernel(w: &GridKernel) -> GridKernel {
    GridKernel::from_fn(w.size(), |i, j| w.get(j, i)).expect("square")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepConfig {
    pub methods: Vec<Method>,
    pub activation: Activation,
    pub rho: f64,
    pub width: usize,
    pub noise: Vec<f64>,
    pub seeds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRun {
    pub method: Method,
    pub noise: f64,
    pub seed: usize,
    pub complexity: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSummary {
    pub method: Method,
    pub noise: f64,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
}

/// Masks for both hidden layers of a two-hidden-layer network. SNIP scores
/// on the first sample with label 0, so masks do not see label noise.
pub fn sweep_masks(
    method: Method,
    spec: &NetSpec,
    params: &NetParams,
    x0: &[f64],
    rho: f64,
    rng: &mut Rng64,
) -> Result<Vec<Mask>> {
    (0..spec.depth())
        .map(|l| {
            let factors = match method {
                Method::Snip => snip_layer_scores(spec, params, x0, l)?,
                Method::Random => {
                    let (r, c) = spec.layer_shape(l);
                    random_scores(r, c, rng)
                }
                other => {
                    return Err(Error::Feature(format!(
                        "noise sweeps support snip and random, not {other}"
                    )))
                }
            };
            make_mask(&factors, rho, rng)
        })
        .collect()
}

/// Complexity of every (method, seed, noise) triple. Each (method, seed)
/// builds one masked `d → n → n → 1` network and Gram; noise levels reuse
/// it with nested label flips from a per-seed permutation.
pub fn noise_sweep(data: &Dataset, cfg: &NoiseSweepConfig) -> Result<(Vec<NoiseRun>, Vec<NoiseSummary>)> {
    if cfg.seeds == 0 {
        return Err(Error::arg("seeds must be >= 1"));
    }
    if cfg.noise.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::arg("noise levels must lie in [0,1]"));
    }
    let spec = NetSpec::new(data.dim(), &[cfg.width, cfg.width], cfg.activation)?;
    let jobs: Vec<(usize, Method, usize)> = cfg
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, &m)| (0..cfg.seeds).map(move |s| (mi, m, s)))
        .collect();
    let per_job = jobs
        .iter()
        .map(|&(mi, method, s)| {
            // network and masks depend on the seed only through stream ids,
            // so methods share weights for the same seed
            let mut net_rng = Rng64::derive(cfg.seed, 2 * s as u64 + 1);
            let params = NetParams::sample(&spec, &mut net_rng);
            let mut mask_rng = Rng64::derive(cfg.seed, 1_000_003 * (mi as u64 + 1) + s as u64);
            let masks = sweep_masks(method, &spec, &params, data.x.row(0), cfg.rho, &mut mask_rng)?;
            let gram = ntk_gram(&spec, &params, Some(&masks), &data.x)?;
            let mut flip_rng = Rng64::derive(cfg.seed, 2 * s as u64 + 2);
            let mut order: Vec<usize> = (0..data.len()).collect();
            flip_rng.shuffle(&mut order);
            cfg.noise
                .iter()
                .map(|&eta| {
                    let y = flipped_labels(&data.y, &order, eta)?;
                    let (complexity, jitter) = complexity_term(&gram, &y)?;
                    Ok(NoiseRun {
                        method,
                        noise: eta,
                        seed: s,
                        complexity,
                        jitter,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<NoiseRun> = per_job.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        for &eta in &cfg.noise {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == method && r.noise == eta)
                .map(|r| r.complexity)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            summary.push(NoiseSummary {
                method,
                noise: eta,
                mean,
                std,
            });
        }
    }
    Ok((runs, summary))
}

/// Convenience for callers holding a directory of CIFAR batch files.
pub fn cifar_batch_paths(dir: &Path) -> Vec<PathBuf> {
    (1..=5)
        .map(|k| dir.join(format!("data_batch_{k}.bin")))
        .chain(std::iter::once(dir.join("test_batch.bin")))
        .filter(|p| p.exists())
        .collect()
}
