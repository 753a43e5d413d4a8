//! Expressivity diagnostics: active rectangles of limit graphons, dense-core
//! counting with Chernoff predictions, and exact embedding of a k-input
//! tanh approximator into a masked one-hidden-layer network.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitg::GridKernel;
use crate::netlab::{forward, Mask, NetParams, NetSpec};
use crate::numkit::{Activation, Rng64};
use crate::saliency::{make_mask, snip_scores};

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRectangle {
    /// First grid row of `U* = [u_start, G)`.
    pub u_start: usize,
    /// First grid column of `V* = [v_start, G)`.
    pub v_start: usize,
    /// `λ(U*)`
    pub beta: f64,
    /// `λ(V*)`
    pub alpha: f64,
    pub p_star: f64,
}

/// Largest suffix rectangle `[iu, G) × [iv, G)` whose cells are all at
/// least `p_floor`. Monotone kernels attain their minimum over such a
/// rectangle at its low corner.
pub fn find_active_rectangle(w: &GridKernel, p_floor: f64) -> Result<Option<ActiveRectangle>> {
    if !(p_floor > 0.0 && p_floor < 1.0) {
        return Err(Error::arg(format!("edge floor must lie in (0,1), got {p_floor}")));
    }
    let g = w.size();
    // smin[iu][iv] = min over [iu, G) × [iv, G)
    let mut smin = vec![f64::INFINITY; (g + 1) * (g + 1)];
    let at = |i: usize, j: usize| i * (g + 1) + j;
    for iu in (0..g).rev() {
        for iv in (0..g).rev() {
            let v = w.get(iu, iv).min(smin[at(iu + 1, iv)]).min(smin[at(iu, iv + 1)]);
            smin[at(iu, iv)] = v;
        }
    }
    let mut best: Option<(usize, usize, usize)> = None;
    for iu in 0..g {
        for iv in 0..g {
            if smin[at(iu, iv)] >= p_floor {
                let area = (g - iu) * (g - iv);
                if best.is_none_or(|(a, _, _)| area > a) {
                    best = Some((area, iu, iv));
                }
            }
        }
    }
    Ok(best.map(|(_, iu, iv)| ActiveRectangle {
        u_start: iu,
        v_start: iv,
        beta: (g - iu) as f64 / g as f64,
        alpha: (g - iv) as f64 / g as f64,
        p_star: smin[at(iu, iv)],
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCore {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub n_good: usize,
}

/// Columns fully connected to every row of `rows`.
pub fn good_columns(mask: &Mask, rows: &[usize]) -> Result<Vec<usize>> {
    if let Some(&i) = rows.iter().find(|&&i| i >= mask.rows()) {
        return Err(Error::arg(format!("row {i} outside a mask with {} rows", mask.rows())));
    }
    let mut good = vec![true; mask.cols()];
    for &i in rows {
        for (g, &b) in good.iter_mut().zip(mask.row_bits(i)) {
            *g &= b == 1;
        }
    }
    Ok(good.iter().enumerate().filter(|(_, &g)| g).map(|(j, _)| j).collect())
}

/// Dense `|rows| × ntilde` biclique using the first good columns.
pub fn count_dense_core(mask: &Mask, rows: &[usize], ntilde: usize) -> Result<DenseCore> {
    if ntilde == 0 {
        return Err(Error::arg("core width must be >= 1"));
    }
    let good = good_columns(mask, rows)?;
    if good.len() < ntilde {
        return Err(Error::InsufficientCore {
            n_good: good.len(),
            needed: ntilde,
        });
    }
    Ok(DenseCore {
        rows: rows.to_vec(),
        cols: good[..ntilde].to_vec(),
        n_good: good.len(),
    })
}

/// `μ ≥ (α/2)·n·(p*/2)^k` and the Chernoff tail `exp(−μ/8)` for
/// `N_good ≤ μ/2`.
pub fn chernoff_predictor(n: usize, alpha: f64, p_star: f64, k: usize) -> Result<(f64, f64)> {
    if n == 0 || k == 0 || !(alpha > 0.0 && alpha.is_finite()) || !(p_star > 0.0 && p_star <= 1.0) {
        return Err(Error::arg("chernoff predictor needs positive n, k, alpha and p* in (0,1]"));
    }
    let mu = 0.5 * alpha * n as f64 * (0.5 * p_star).powi(k as i32);
    Ok((mu, (-mu / 8.0).exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCoreTrials {
    pub n_good: Vec<usize>,
    /// `n·p^k`
    pub expected: f64,
    /// Fraction of trials with `N_good ≥ expected/2`.
    pub success_rate: f64,
    /// `1 − exp(−expected/8)`
    pub chernoff_floor: f64,
}

/// Bernoulli(p) `k × n` masks; counts fully connected columns per trial.
pub fn bernoulli_core_trials(
    n: usize,
    k: usize,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<DenseCoreTrials> {
    if trials == 0 || n == 0 || k == 0 {
        return Err(Error::arg("trials, n and k must be >= 1"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::arg(format!("edge probability must lie in (0,1], got {p}")));
    }
    let rows: Vec<usize> = (0..k).collect();
    let n_good = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng64::derive(seed, t as u64);
            let bits = (0..k * n).map(|_| u8::from(rng.bernoulli(p))).collect();
            let mask = Mask::from_bits(k, n, bits, vec![1.0; k], vec![1.0; n])?;
            Ok(good_columns(&mask, &rows)?.len())
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = n as f64 * p.powi(k as i32);
    let hits = n_good.iter().filter(|&&g| g as f64 >= 0.5 * expected).count();
    Ok(DenseCoreTrials {
        n_good,
        expected,
        success_rate: hits as f64 / trials as f64,
        chernoff_floor: 1.0 - (-expected / 8.0).exp(),
    })
}

/// Rows of a square SNIP mask with the `k` largest row factors, ties by
/// index.
pub fn top_rows(phi: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Good-column counts on the top-`k` rows of SNIP masks of square
/// `n → n → 1` networks, one network per trial.
pub fn snip_core_trials(
    n: usize,
    k: usize,
    rho: f64,
    activation: Activation,
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if trials == 0 || k == 0 || k > n {
        return Err(Error::arg("need trials >= 1 and 1 <= k <= n"));
    }
    let spec = NetSpec::shallow(n, n, activation)?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng64::derive(seed, t as u64);
            let x = rng.normal_vec(n);
            let params = NetParams::sample(&spec, &mut rng);
            let factors = snip_scores(&spec, &params, &x, 0.0)?;
            let mask = make_mask(&factors, rho, &mut rng)?;
            Ok(good_columns(&mask, &top_rows(&factors.phi, k))?.len())
        })
        .collect()
}

/// `u ↦ Σ_r a_r·tanh(θ_rᵀu + b_r)` on `[−1,1]^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    pub theta: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub a: Vec<f64>,
    /// Max error to the target on the test lattice.
    pub sup_error: f64,
}

impl Approximator {
    pub fn k(&self) -> usize {
        self.theta.first().map_or(0, Vec::len)
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(&self.bias)
            .zip(&self.a)
            .map(|((t, b), a)| a * feature(t, *b, u))
            .sum()
    }
}

#[inline]
fn feature(theta: &[f64], b: f64, u: &[f64]) -> f64 {
    (theta.iter().zip(u).map(|(t, x)| t * x).sum::<f64>() + b).tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Standard deviation of the random feature directions.
    pub scale: f64,
    pub ridge: f64,
    /// Points per axis of the training lattice.
    pub train_grid: usize,
    /// Points per axis of the test lattice.
    pub test_grid: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            scale: 2.5,
            ridge: 1e-8,
            train_grid: 64,
            test_grid: 201,
        }
    }
}

/// All points of the `m^k` lattice on `[−1,1]^k` (endpoints included).
pub fn lattice(k: usize, m: usize) -> Vec<Vec<f64>> {
    let coord = |t: usize| {
        if m == 1 {
            0.0
        } else {
            -1.0 + 2.0 * t as f64 / (m - 1) as f64
        }
    };
    let total = m.pow(k as u32);
    (0..total)
        .map(|mut idx| {
            (0..k)
                .map(|_| {
                    let c = coord(idx % m);
                    idx /= m;
                    c
                })
                .collect()
        })
        .collect()
}

/// Random features `θ_r ~ N(0, scale²I_k)`, `b_r ~ U[−2,2]`, then ridge
/// least squares for the output weights on the training lattice.
pub fn sample_features(k: usize, ntilde: usize, scale: f64, rng: &mut Rng64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let theta = (0..ntilde)
        .map(|_| rng.normal_vec(k).into_iter().map(|z| z * scale).collect())
        .collect();
    let bias = (0..ntilde).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    (theta, bias)
}

/// Ridge fit of output weights for fixed features.
pub fn fit_output_weights(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    theta: Vec<Vec<f64>>,
    bias: Vec<f64>,
    opts: &FitOptions,
) -> Result<Approximator> {
    let ntilde = theta.len();
    if ntilde == 0 || bias.len() != ntilde {
        return Err(Error::arg("need matching, non-empty feature and bias lists"));
    }
    let k = theta[0].len();
    if k == 0 || opts.train_grid < 2 || opts.test_grid < 2 {
        return Err(Error::arg("k and lattice sizes must be >= 1 and >= 2"));
    }
    let train = lattice(k, opts.train_grid);
    let phi = DMatrix::from_fn(train.len(), ntilde, |p, r| feature(&theta[r], bias[r], &train[p]));
    let y = DVector::from_iterator(train.len(), train.iter().map(|u| f(u)));
    // ridge solution a = V·diag(s/(s²+λ))·Uᵀy from the thin SVD
    let svd = phi.svd(true, true);
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("singular value decomposition failed".into())),
    };
    let uty = u.transpose() * &y;
    let shrunk = DVector::from_iterator(
        uty.len(),
        svd.singular_values
            .iter()
            .zip(uty.iter())
            .map(|(&s, &c)| if s > 0.0 { c * s / (s * s + opts.ridge) } else { 0.0 }),
    );
    let a: Vec<f64> = (vt.transpose() * shrunk).iter().copied().collect();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ridge solve produced non-finite weights".into()));
    }
    let mut approx = Approximator {
        theta,
        bias,
        a,
        sup_error: 0.0,
    };
    let test = lattice(k, opts.test_grid);
    approx.sup_error = test
        .par_iter()
        .map(|u| (approx.eval(u) - f(u)).abs())
        .reduce(|| 0.0, f64::max);
    Ok(approx)
}

pub fn fit_k_feature_approximator(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    k: usize,
    ntilde: usize,
    opts: &FitOptions,
    rng: &mut Rng64,
) -> Result<Approximator> {
    if k == 0 || ntilde == 0 {
        return Err(Error::arg("k and ntilde must be >= 1"));
    }
    let (theta, bias) = sample_features(k, ntilde, opts.scale, rng);
    fit_output_weights(f, theta, bias, opts)
}

/// Parameters of a masked `d → n → 1` tanh network that computes
/// `approx(x_I)` exactly: neuron `J[r]` reads row set `I` with weights
/// `√d·θ_r`, bias `b_r`, output weight `√n·a_r`; everything else is zero.
pub fn embed_into_mask(
    spec: &NetSpec,
    mask: &Mask,
    rows: &[usize],
    cols: &[usize],
    approx: &Approximator,
) -> Result<NetParams> {
    if spec.depth() != 1 || !spec.use_bias {
        return Err(Error::Contract("embedding needs one hidden layer with biases".into()));
    }
    if spec.activation != Activation::Tanh {
        return Err(Error::Contract("embedding is built for tanh networks".into()));
    }
    if mask.shape() != spec.layer_shape(0) {
        return Err(Error::arg("mask does not match network shape"));
    }
    if rows.len() != approx.k() || cols.len() != approx.width() {
        return Err(Error::Contract(format!(
            "core is {}x{}, approximator needs {}x{}",
            rows.len(),
            cols.len(),
            approx.k(),
            approx.width()
        )));
    }
    for &i in rows {
        for &j in cols {
            if !mask.get(i, j) {
                return Err(Error::Contract(format!("mask entry ({i},{j}) of the core is zero")));
            }
        }
    }
    let (d, n) = (spec.input_dim as f64, spec.hidden[0] as f64);
    let mut params = NetParams::zeros(spec);
    for (r, &j) in cols.iter().enumerate() {
        for (l, &i) in rows.iter().enumerate() {
            params.weights[0].row_mut(i)[j] = d.sqrt() * approx.theta[r][l];
        }
        params.biases[0][j] = approx.bias[r];
        params.output[j] = n.sqrt() * approx.a[r];
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UatConfig {
    pub k: usize,
    pub ntilde: usize,
    /// Input dimension and hidden width of the pruned network.
    pub width: usize,
    pub rho: f64,
    pub seed: u64,
    pub test_points: usize,
    /// Test points whose off-core inputs are random rather than zero.
    pub perturbed_points: usize,
    pub fit: FitOptions,
}

impl Default for UatConfig {
    fn default() -> Self {
        UatConfig {
            k: 2,
            ntilde: 256,
            width: 2048,
            rho: 0.2,
            seed: 1,
            test_points: 10_000,
            perturbed_points: 64,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UatReport {
    pub n_good: usize,
    pub fitted_sup_error: f64,
    /// Max `|F(x) − approx(x_I)|` over the test points.
    pub embed_max_err: f64,
    /// Max `|F(x) − target(x_I)|` over the test points.
    pub masked_sup_error: f64,
    /// Max `|approx(x_I) − target(x_I)|` over the same points.
    pub fitted_point_error: f64,
}

/// `sin(3u₁)·cos(2u₂)`, extended as a product over further coordinates.
pub fn default_target(u: &[f64]) -> f64 {
    u.iter()
        .enumerate()
        .map(|(l, &x)| if l % 2 == 0 { (3.0 * x).sin() } else { (2.0 * x).cos() })
        .product()
}

/// SNIP-prune a square tanh network at density ρ, find a dense core on the
/// `k` rows with the largest input magnitude, embed a fitted approximator
/// of `target` and measure it on random test points.
pub fn run_uat(cfg: &UatConfig, target: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<UatReport> {
    let n = cfg.width;
    if cfg.k > n {
        return Err(Error::arg("k exceeds the network width"));
    }
    let spec = NetSpec::shallow(n, n, Activation::Tanh)?.with_bias(true);
    let mut rng = Rng64::derive(cfg.seed, 0);
    let x = rng.normal_vec(n);
    let params = NetParams::sample(&spec, &mut rng);
    let factors = snip_scores(&spec, &params, &x, 0.0)?;
    let mask = make_mask(&factors, cfg.rho, &mut rng)?;
    let rows = top_rows(&factors.phi, cfg.k);
    let core = count_dense_core(&mask, &rows, cfg.ntilde)?;
    let mut fit_rng = Rng64::derive(cfg.seed, 1);
    let approx = fit_k_feature_approximator(target, cfg.k, cfg.ntilde, &cfg.fit, &mut fit_rng)?;
    let embedded = embed_into_mask(&spec, &mask, &core.rows, &core.cols, &approx)?;
    let masks = [mask];
    let mut test_rng = Rng64::derive(cfg.seed, 2);
    // Off-core inputs are zero on the bulk of the points (the forward pass
    // skips zero inputs) and Gaussian on the first `perturbed_points`.
    let points: Vec<Vec<f64>> = (0..cfg.test_points)
        .map(|t| {
            let mut input = if t < cfg.perturbed_points {
                test_rng.normal_vec(n)
            } else {
                vec![0.0; n]
            };
            for &i in &core.rows {
                input[i] = test_rng.uniform_range(-1.0, 1.0);
            }
            input
        })
        .collect();
    let errs = points
        .par_iter()
        .map(|input| {
            let out = forward(&spec, &embedded, Some(&masks), input)?.output;
            let u: Vec<f64> = core.rows.iter().map(|&i| input[i]).collect();
            let fitted = approx.eval(&u);
            let t = target(&u);
            Ok(((out - fitted).abs(), (out - t).abs(), (fitted - t).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |sel: fn(&(f64, f64, f64)) -> f64| errs.iter().map(sel).fold(0.0, f64::max);
    Ok(UatReport {
        n_good: core.n_good,
        fitted_sup_error: approx.sup_error,
        embed_max_err: max(|e| e.0),
        masked_sup_error: max(|e| e.1),
        fitted_point_error: max(|e| e.2),
    })
}
