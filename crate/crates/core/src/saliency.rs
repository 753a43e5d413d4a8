//! Pruning-at-initialisation scorers, top-ρ masks and sorted empirical
//! edge-probability estimates.
//!
//! Every scorer returns its saliency in factorised form
//! `S_ij = φ_i · ψ_j · |ξ_ij|` (up to one positive global scalar). The row
//! factor φ and column factor ψ double as the latent coordinates used to
//! sort masks before averaging.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutmetric::pool_to_grid;
use crate::error::{Error, Result};
use crate::limitg::GridKernel;
use crate::matrix::Matrix;
use crate::netlab::{backward_signals, forward, grad_params, hvp, Mask, NetParams, NetSpec};
use crate::numkit::{top_count, Activation, Rng64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "snip")]
    Snip,
    #[serde(rename = "grasp-mag")]
    GraspMagnitude,
    #[serde(rename = "grasp-signed")]
    GraspSigned,
    #[serde(rename = "synflow")]
    Synflow,
    #[serde(rename = "magnitude")]
    Magnitude,
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Snip,
        Method::GraspMagnitude,
        Method::GraspSigned,
        Method::Synflow,
        Method::Magnitude,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Snip => "snip",
            Method::GraspMagnitude => "grasp-mag",
            Method::GraspSigned => "grasp-signed",
            Method::Synflow => "synflow",
            Method::Magnitude => "magnitude",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspVariant {
    Magnitude,
    Signed,
}

/// How the Hessian-gradient product is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianPath {
    /// Closed form `Hg = c_n·g + R`.
    Analytic,
    /// Central differences of the gradient (`netlab::hvp`).
    HvpOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyFactors {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub xi_abs: Matrix,
    /// Signed retention score; when present, masks rank by it instead of
    /// the magnitude product.
    pub signed_score: Option<Matrix>,
}

impl SaliencyFactors {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>, xi_abs: Matrix) -> Result<Self> {
        if phi.len() != xi_abs.rows() || psi.len() != xi_abs.cols() {
            return Err(Error::arg("factor lengths do not match edge-noise shape"));
        }
        Ok(SaliencyFactors {
            phi,
            psi,
            xi_abs,
            signed_score: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.phi.len()
    }

    pub fn cols(&self) -> usize {
        self.psi.len()
    }

    #[inline]
    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.phi[i] * self.psi[j] * self.xi_abs[(i, j)]
    }

    /// `φ ⊗ ψ ⊙ |ξ|`.
    pub fn magnitude_scores(&self) -> Matrix {
        Matrix::from_fn(self.rows(), self.cols(), |i, j| self.magnitude(i, j))
    }

    /// The scores `make_mask` ranks by.
    pub fn ranking_scores(&self) -> Matrix {
        match &self.signed_score {
            Some(s) => s.clone(),
            None => self.magnitude_scores(),
        }
    }
}

fn check_shallow(spec: &NetSpec, what: &str) -> Result<()> {
    if spec.depth() != 1 {
        return Err(Error::Feature(format!(
            "{what} scores are defined for one hidden layer, got depth {}",
            spec.depth()
        )));
    }
    Ok(())
}

/// SNIP connection sensitivity `|∂L/∂m_ij|` with the global factor
/// `|δ|/√(nd)` dropped: `φ = |x|`, `ψ_j = |a_j||σ′(h_j)|`, `|ξ| = |θ|`.
pub fn snip_scores(spec: &NetSpec, params: &NetParams, x: &[f64], _y: f64) -> Result<SaliencyFactors> {
    check_shallow(spec, "SNIP")?;
    let pass = forward(spec, params, None, x)?;
    let act = spec.activation;
    let phi = x.iter().map(|v| v.abs()).collect();
    let psi = params
        .output
        .iter()
        .zip(&pass.pre[0])
        .map(|(&a, &h)| a.abs() * act.deriv(h).abs())
        .collect();
    SaliencyFactors::new(phi, psi, params.weights[0].map(f64::abs))
}

/// Layerwise SNIP factors for hidden layer `layer` of a (possibly deep)
/// network: `φ_i = |a⁽ˡ⁻¹⁾_i|`, `ψ_j = √n_L·|∂f/∂h⁽ˡ⁾_j|`, `|ξ| = |θ⁽ˡ⁾|`.
/// For the last layer `ψ_k = |w_k||σ′(h⁽ᴸ⁾_k)|`.
pub fn snip_layer_scores(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    layer: usize,
) -> Result<SaliencyFactors> {
    if layer >= spec.depth() {
        return Err(Error::arg(format!("layer {layer} out of range")));
    }
    let pass = forward(spec, params, None, x)?;
    let act = spec.activation;
    let input: &[f64] = if layer == 0 { x } else { &pass.post[layer - 1] };
    let phi = input.iter().map(|v| v.abs()).collect();
    let psi = if layer + 1 == spec.depth() {
        params
            .output
            .iter()
            .zip(&pass.pre[layer])
            .map(|(&a, &h)| a.abs() * act.deriv(h).abs())
            .collect()
    } else {
        let signals = backward_signals(spec, params, None, &pass);
        let root = (spec.output_width() as f64).sqrt();
        signals[layer].iter().map(|s| s.abs() * root).collect()
    };
    SaliencyFactors::new(phi, psi, params.weights[layer].map(f64::abs))
}

/// Pieces of the closed-form Hessian-gradient product for one hidden layer.
struct GraspTerms {
    delta: f64,
    /// `c_n = (‖x‖²/d)·(1/n)Σ_k a_k²σ′(h_k)²`
    c_n: f64,
    /// `(Hg)_ij = g_ij·(c_n + r_j)`, `r_j = δ a_j σ″(h_j)(‖x‖²/d)/√n`
    r: Vec<f64>,
    /// `a_j σ′(h_j)`
    back: Vec<f64>,
}

fn grasp_terms(spec: &NetSpec, params: &NetParams, x: &[f64], y: f64) -> Result<GraspTerms> {
    let pass = forward(spec, params, None, x)?;
    let act = spec.activation;
    let d = spec.input_dim as f64;
    let n = spec.hidden[0] as f64;
    let delta = pass.output - y;
    let x_energy = x.iter().map(|v| v * v).sum::<f64>() / d;
    let back: Vec<f64> = params
        .output
        .iter()
        .zip(&pass.pre[0])
        .map(|(&a, &h)| a * act.deriv(h))
        .collect();
    let c_n = x_energy * back.iter().map(|b| b * b).sum::<f64>() / n;
    let r = params
        .output
        .iter()
        .zip(&pass.pre[0])
        .map(|(&a, &h)| delta * a * act.deriv2(h) * x_energy / n.sqrt())
        .collect();
    Ok(GraspTerms {
        delta,
        c_n,
        r,
        back,
    })
}

/// `H·g` for the first-layer loss Hessian, either in closed form
/// (`c_n·g + R`) or through the finite-difference oracle.
pub fn grasp_hessian_gradient(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    y: f64,
    path: HessianPath,
) -> Result<Matrix> {
    check_shallow(spec, "GraSP")?;
    match path {
        HessianPath::Analytic => {
            let t = grasp_terms(spec, params, x, y)?;
            let scale = t.delta / ((spec.input_dim * spec.hidden[0]) as f64).sqrt();
            Ok(Matrix::from_fn(x.len(), spec.hidden[0], |i, j| {
                let g = scale * t.back[j] * x[i];
                g * (t.c_n + t.r[j])
            }))
        }
        HessianPath::HvpOracle => {
            let g = grad_params(spec, params, None, x, y)?.weights.swap_remove(0);
            hvp(spec, params, x, y, &g)
        }
    }
}

/// GraSP saliency `θ ⊙ (Hg)`, magnitude or signed.
///
/// On the analytic path the score factorises exactly: `ψ_j` is the SNIP
/// neuron factor times `|1 + r_j/c_n|`, so for piecewise-linear activations
/// (`r ≡ 0`) the factors coincide with SNIP bit for bit.
pub fn grasp_scores(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    y: f64,
    variant: GraspVariant,
    path: HessianPath,
) -> Result<SaliencyFactors> {
    check_shallow(spec, "GraSP")?;
    let theta = &params.weights[0];
    let phi: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let (rows, cols) = theta.shape();
    match path {
        HessianPath::Analytic => {
            let t = grasp_terms(spec, params, x, y)?;
            let degenerate = t.delta == 0.0 || t.c_n == 0.0;
            let gain: Vec<f64> = t
                .r
                .iter()
                .map(|&r| if degenerate { 0.0 } else { (t.c_n + r) / t.c_n })
                .collect();
            let psi: Vec<f64> = t
                .back
                .iter()
                .zip(&gain)
                .map(|(b, g)| b.abs() * g.abs())
                .collect();
            let mut f = SaliencyFactors::new(phi, psi, theta.map(f64::abs))?;
            if variant == GraspVariant::Signed {
                let sign = t.delta.signum();
                f.signed_score = Some(Matrix::from_fn(rows, cols, |i, j| {
                    sign * x[i] * t.back[j] * gain[j] * theta[(i, j)]
                }));
            }
            Ok(f)
        }
        HessianPath::HvpOracle => {
            let hg = grasp_hessian_gradient(spec, params, x, y, path)?;
            let pass = forward(spec, params, None, x)?;
            let act = spec.activation;
            let psi: Vec<f64> = params
                .output
                .iter()
                .zip(&pass.pre[0])
                .map(|(&a, &h)| a.abs() * act.deriv(h).abs())
                .collect();
            let raw = Matrix::from_fn(rows, cols, |i, j| theta[(i, j)] * hg[(i, j)]);
            let xi = Matrix::from_fn(rows, cols, |i, j| {
                let denom = phi[i] * psi[j];
                if denom > 0.0 {
                    raw[(i, j)].abs() / denom
                } else {
                    0.0
                }
            });
            let mut f = SaliencyFactors::new(phi, psi, xi)?;
            if variant == GraspVariant::Signed {
                let scale = raw.max_abs();
                f.signed_score = Some(if scale > 0.0 {
                    raw.map(|v| v / scale)
                } else {
                    raw
                });
            }
            Ok(f)
        }
    }
}

/// One-shot SynFlow: `φ ≡ 1`, `ψ = |a|`, `|ξ| = |θ|`.
pub fn synflow_scores(spec: &NetSpec, params: &NetParams) -> Result<SaliencyFactors> {
    check_shallow(spec, "SynFlow")?;
    let theta = &params.weights[0];
    SaliencyFactors::new(
        vec![1.0; theta.rows()],
        params.output.iter().map(|a| a.abs()).collect(),
        theta.map(f64::abs),
    )
}

pub fn magnitude_scores(weights: &Matrix) -> SaliencyFactors {
    SaliencyFactors::new(
        vec![1.0; weights.rows()],
        vec![1.0; weights.cols()],
        weights.map(f64::abs),
    )
    .expect("shape")
}

/// Uniform edge noise, i.e. Bernoulli(ρ)-style pruning after top-ρ selection.
pub fn random_scores(rows: usize, cols: usize, rng: &mut Rng64) -> SaliencyFactors {
    let xi = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform()).collect())
        .expect("shape");
    SaliencyFactors::new(vec![1.0; rows], vec![1.0; cols], xi).expect("shape")
}

/// Keep exactly `⌊ρ·d·n⌋` entries: everything strictly above the k-th
/// largest score, plus a uniformly random subset of the entries tied with it.
pub fn make_mask(factors: &SaliencyFactors, rho: f64, rng: &mut Rng64) -> Result<Mask> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::arg(format!("density must lie in (0,1], got {rho}")));
    }
    let (rows, cols) = (factors.rows(), factors.cols());
    let total = rows * cols;
    let k = top_count(rho, total);
    if k == 0 {
        return Err(Error::arg(format!(
            "density {rho} keeps no entries of a {rows}x{cols} mask"
        )));
    }
    let scores = factors.ranking_scores().into_vec();
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN saliency score".into()));
    }
    let mut bits = vec![0u8; total];
    if k == total {
        bits.fill(1);
    } else {
        let mut scratch = scores.clone();
        let (_, &mut threshold, _) = scratch.select_nth_unstable_by(total - k, f64::total_cmp);
        let mut ties = Vec::new();
        let mut kept = 0;
        for (idx, &s) in scores.iter().enumerate() {
            if s > threshold {
                bits[idx] = 1;
                kept += 1;
            } else if s == threshold {
                ties.push(idx);
            }
        }
        let need = k - kept;
        if need == ties.len() {
            for &t in &ties {
                bits[t] = 1;
            }
        } else {
            for pick in rng.sample_indices(ties.len(), need) {
                bits[ties[pick]] = 1;
            }
        }
    }
    Mask::from_bits(rows, cols, bits, factors.phi.clone(), factors.psi.clone())
}

/// Stable ascending order of `values` (ties keep index order).
pub fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Mask with rows sorted by ascending row factor and columns by ascending
/// column factor.
pub fn sort_by_factors(mask: &Mask) -> Mask {
    let r = ascending_order(&mask.row_factors);
    let c = ascending_order(&mask.col_factors);
    mask.permuted(&r, &c)
}

/// Factors of `method` on a one-hidden-layer network. `rng` supplies the
/// edge noise for `Random` only.
pub fn method_scores(
    method: Method,
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    y: f64,
    rng: &mut Rng64,
) -> Result<SaliencyFactors> {
    match method {
        Method::Snip => snip_scores(spec, params, x, y),
        Method::GraspMagnitude => grasp_scores(
            spec,
            params,
            x,
            y,
            GraspVariant::Magnitude,
            HessianPath::Analytic,
        ),
        Method::GraspSigned => {
            grasp_scores(spec, params, x, y, GraspVariant::Signed, HessianPath::Analytic)
        }
        Method::Synflow => synflow_scores(spec, params),
        Method::Magnitude => {
            check_shallow(spec, "magnitude")?;
            Ok(magnitude_scores(&params.weights[0]))
        }
        Method::Random => {
            let (r, c) = spec.layer_shape(0);
            Ok(random_scores(r, c, rng))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphonConfig {
    pub method: Method,
    pub activation: Activation,
    pub rho: f64,
    pub width: usize,
    pub seeds: usize,
    pub grid: usize,
    pub seed: u64,
    /// Label `y` of the single scoring sample.
    pub label: f64,
}

impl GraphonConfig {
    fn validate(&self) -> Result<()> {
        if self.width < self.grid {
            return Err(Error::arg(format!(
                "width {} is smaller than grid {}",
                self.width, self.grid
            )));
        }
        if self.seeds == 0 || self.grid == 0 {
            return Err(Error::arg("seeds and grid must be >= 1"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::arg(format!("density must lie in (0,1], got {}", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGraphon {
    pub probs: GridKernel,
    pub width: usize,
    pub seeds: usize,
    pub method: Method,
    pub activation: Activation,
    pub rho: f64,
}

/// Stream id of seed `s` within a run keyed by the master seed.
fn seed_rng(master: u64, s: usize) -> Rng64 {
    Rng64::derive(master, s as u64 + 1)
}

/// The sorted square mask for seed `s` of a one-hidden-layer run: draw
/// `x ~ N(0, I_n)`, weights, score, select top-ρ, sort by latent factors.
pub fn sorted_seed_mask(cfg: &GraphonConfig, s: usize) -> Result<Mask> {
    let n = cfg.width;
    let spec = NetSpec::shallow(n, n, cfg.activation)?;
    let mut rng = seed_rng(cfg.seed, s);
    let x = rng.normal_vec(n);
    let params = NetParams::sample(&spec, &mut rng);
    let factors = method_scores(cfg.method, &spec, &params, &x, cfg.label, &mut rng)?;
    let mask = make_mask(&factors, cfg.rho, &mut rng)?;
    Ok(sort_by_factors(&mask))
}

fn average_counts(counts: &[u32], seeds: usize, rows: usize, cols: usize) -> Matrix {
    let inv = 1.0 / seeds as f64;
    Matrix::from_vec(rows, cols, counts.iter().map(|&c| c as f64 * inv).collect())
        .expect("shape")
}

fn accumulate(counts: &mut [u32], mask: &Mask) {
    for (c, &b) in counts.iter_mut().zip(mask.bits()) {
        *c += b as u32;
    }
}

/// Seed-averaged sorted masks at full `n × n` resolution. Seeds run in
/// parallel; integer counts make the reduction order-independent.
pub fn empirical_probabilities(cfg: &GraphonConfig) -> Result<Matrix> {
    cfg.validate()?;
    let n = cfg.width;
    let counts = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| sorted_seed_mask(cfg, s))
        .try_fold(
            || vec![0u32; n * n],
            |mut acc, mask| {
                accumulate(&mut acc, &mask?);
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u32; n * n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    Ok(average_counts(&counts, cfg.seeds, n, n))
}

pub fn empirical_graphon(cfg: &GraphonConfig) -> Result<EmpiricalGraphon> {
    let probs = empirical_probabilities(cfg)?;
    Ok(EmpiricalGraphon {
        probs: pool_to_grid(&probs, cfg.grid)?,
        width: cfg.width,
        seeds: cfg.seeds,
        method: cfg.method,
        activation: cfg.activation,
        rho: cfg.rho,
    })
}

/// Sorted layer-1 and layer-2 SNIP masks of a `n → n → n → 1` network for
/// seed `s`. Layer-1 rows sort by `|x_i|`, layer-2 rows by `|σ(h⁽¹⁾_j)|`;
/// columns sort by each layer's backward factor.
pub fn sorted_seed_masks_deep(cfg: &GraphonConfig, s: usize) -> Result<(Mask, Mask)> {
    if cfg.method != Method::Snip {
        return Err(Error::Feature(format!(
            "two-layer graphons are built for snip, not {}",
            cfg.method
        )));
    }
    let n = cfg.width;
    let spec = NetSpec::new(n, &[n, n], cfg.activation)?;
    let mut rng = seed_rng(cfg.seed, s);
    let x = rng.normal_vec(n);
    let params = NetParams::sample(&spec, &mut rng);
    let f1 = snip_layer_scores(&spec, &params, &x, 0)?;
    let f2 = snip_layer_scores(&spec, &params, &x, 1)?;
    let m1 = make_mask(&f1, cfg.rho, &mut rng)?;
    let m2 = make_mask(&f2, cfg.rho, &mut rng)?;
    Ok((sort_by_factors(&m1), sort_by_factors(&m2)))
}

pub fn empirical_graphon_deep(cfg: &GraphonConfig) -> Result<(EmpiricalGraphon, EmpiricalGraphon)> {
    cfg.validate()?;
    let n = cfg.width;
    let zero = || (vec![0u32; n * n], vec![0u32; n * n]);
    let (c1, c2) = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| sorted_seed_masks_deep(cfg, s))
        .try_fold(zero, |(mut a, mut b), pair| {
            let (m1, m2) = pair?;
            accumulate(&mut a, &m1);
            accumulate(&mut b, &m2);
            Ok::<_, Error>((a, b))
        })
        .try_reduce(zero, |(mut a1, mut a2), (b1, b2)| {
            a1.iter_mut().zip(&b1).for_each(|(x, y)| *x += y);
            a2.iter_mut().zip(&b2).for_each(|(x, y)| *x += y);
            Ok((a1, a2))
        })?;
    let wrap = |counts: &[u32]| -> Result<EmpiricalGraphon> {
        Ok(EmpiricalGraphon {
            probs: pool_to_grid(&average_counts(counts, cfg.seeds, n, n), cfg.grid)?,
            width: n,
            seeds: cfg.seeds,
            method: cfg.method,
            activation: cfg.activation,
            rho: cfg.rho,
        })
    };
    Ok((wrap(&c1)?, wrap(&c2)?))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let order = ascending_order(values);
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation over flattened entries, ties at average rank.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg("score arrays differ in size"));
    }
    if a.len() < 2 {
        return Err(Error::arg("rank correlation needs at least two entries"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shallow(d: usize, n: usize, act: Activation, seed: u64) -> (NetSpec, NetParams, Vec<f64>) {
        let spec = NetSpec::shallow(d, n, act).unwrap();
        let mut rng = Rng64::new(seed);
        let x = rng.normal_vec(d);
        let params = NetParams::sample(&spec, &mut rng);
        (spec, params, x)
    }

    #[test]
    fn snip_zero_input_scores_zero() {
        let (spec, params, _) = shallow(6, 5, Activation::Tanh, 1);
        let f = snip_scores(&spec, &params, &[0.0; 6], 0.0).unwrap();
        assert_eq!(f.magnitude_scores().max_abs(), 0.0);
    }

    #[test]
    fn snip_reconstructs_mask_sensitivity() {
        // |∂L/∂m_ij| = |θ_ij · ∂L/∂θ_ij| from the analytic gradient
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            let (spec, params, x) = shallow(7, 9, act, 11);
            let y = 0.4;
            let f = snip_scores(&spec, &params, &x, y).unwrap();
            let g = grad_params(&spec, &params, None, &x, y).unwrap();
            let delta = forward(&spec, &params, None, &x).unwrap().output - y;
            let scale = delta.abs() / ((7 * 9) as f64).sqrt();
            for i in 0..7 {
                for j in 0..9 {
                    let oracle = (params.weights[0][(i, j)] * g.weights[0][(i, j)]).abs();
                    let got = f.magnitude(i, j) * scale;
                    assert!((got - oracle).abs() <= 1e-6 * oracle.max(1e-300) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn snip_relu_zero_columns() {
        let (spec, params, x) = shallow(10, 40, Activation::Relu, 3);
        let pass = forward(&spec, &params, None, &x).unwrap();
        let f = snip_scores(&spec, &params, &x, 0.0).unwrap();
        for j in 0..40 {
            assert_eq!(f.psi[j] == 0.0, pass.pre[0][j] <= 0.0);
        }
    }

    #[test]
    fn grasp_zero_residual() {
        let (spec, params, x) = shallow(5, 6, Activation::Tanh, 2);
        let f = forward(&spec, &params, None, &x).unwrap().output;
        for path in [HessianPath::Analytic, HessianPath::HvpOracle] {
            let hg = grasp_hessian_gradient(&spec, &params, &x, f, path).unwrap();
            assert_eq!(hg.max_abs(), 0.0);
        }
    }

    #[test]
    fn grasp_analytic_matches_hvp() {
        for seed in 0..4 {
            let (spec, params, x) = shallow(16, 16, Activation::Tanh, seed);
            let a = grasp_hessian_gradient(&spec, &params, &x, 0.5, HessianPath::Analytic).unwrap();
            let b = grasp_hessian_gradient(&spec, &params, &x, 0.5, HessianPath::HvpOracle).unwrap();
            let err = a.sub(&b).unwrap().max_abs() / a.max_abs();
            assert!(err <= 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn grasp_factors_reproduce_raw_score() {
        let (spec, params, x) = shallow(8, 12, Activation::Sigmoid, 5);
        let y = -0.3;
        let hg = grasp_hessian_gradient(&spec, &params, &x, y, HessianPath::Analytic).unwrap();
        let f = grasp_scores(&spec, &params, &x, y, GraspVariant::Signed, HessianPath::Analytic)
            .unwrap();
        let signed = f.signed_score.as_ref().unwrap();
        // one global positive ratio links the factorised and raw scores
        let raw = |i, j| params.weights[0][(i, j)] * hg[(i, j)];
        let ratio = raw(0, 0).abs() / f.magnitude(0, 0);
        for i in 0..8 {
            for j in 0..12 {
                let r = raw(i, j);
                assert!((r.abs() - ratio * f.magnitude(i, j)).abs() <= 1e-6 * r.abs() + 1e-18);
                assert!((r - ratio * signed[(i, j)]).abs() <= 1e-6 * r.abs() + 1e-18);
            }
        }
    }

    #[test]
    fn grasp_relu_equals_snip_factors() {
        let (spec, params, x) = shallow(20, 30, Activation::Relu, 8);
        let g = grasp_scores(&spec, &params, &x, 0.0, GraspVariant::Magnitude, HessianPath::Analytic)
            .unwrap();
        let s = snip_scores(&spec, &params, &x, 0.0).unwrap();
        assert_eq!(g, s);
    }

    #[test]
    fn grasp_rejects_depth_two() {
        let spec = NetSpec::new(4, &[3, 3], Activation::Tanh).unwrap();
        let params = NetParams::sample(&spec, &mut Rng64::new(1));
        let r = grasp_scores(&spec, &params, &[1.0; 4], 0.0, GraspVariant::Magnitude, HessianPath::Analytic);
        assert!(matches!(r, Err(Error::Feature(_))));
    }

    #[test]
    fn synflow_is_data_agnostic() {
        let (spec, mut params, _) = shallow(5, 7, Activation::Tanh, 4);
        let f = synflow_scores(&spec, &params).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let want = params.output[j].abs() * params.weights[0][(i, j)].abs();
                assert!((f.magnitude(i, j) - want).abs() <= 1e-15 * want.max(1.0));
            }
        }
        params.output.iter_mut().for_each(|a| *a = 0.0);
        assert_eq!(synflow_scores(&spec, &params).unwrap().magnitude_scores().max_abs(), 0.0);
    }

    #[test]
    fn mask_cardinality_and_extremes() {
        let mut rng = Rng64::new(1);
        let w = Matrix::from_vec(13, 17, rng.normal_vec(13 * 17)).unwrap();
        let f = magnitude_scores(&w);
        for rho in [0.05, 0.2, 0.5, 0.77] {
            let m = make_mask(&f, rho, &mut rng).unwrap();
            assert_eq!(m.count_ones(), top_count(rho, 13 * 17));
        }
        assert_eq!(make_mask(&f, 1.0, &mut rng).unwrap().count_ones(), 13 * 17);
        assert!(make_mask(&f, 0.001, &mut rng).is_err());
    }

    #[test]
    fn distinct_scores_keep_largest() {
        let xi = Matrix::from_rows(&[vec![0.1, 0.9, 0.5], vec![0.7, 0.3, 0.2]]).unwrap();
        let f = SaliencyFactors::new(vec![1.0, 1.0], vec![1.0; 3], xi).unwrap();
        let m = make_mask(&f, 0.5, &mut Rng64::new(0)).unwrap();
        assert_eq!(m.bits(), &[0, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn ties_broken_uniformly() {
        let f = SaliencyFactors::new(vec![1.0; 4], vec![1.0; 5], Matrix::filled(4, 5, 1.0)).unwrap();
        let rho = 0.3;
        let trials = 1000;
        let mut freq = vec![0usize; 20];
        let mut rng = Rng64::new(77);
        for _ in 0..trials {
            let m = make_mask(&f, rho, &mut rng).unwrap();
            assert_eq!(m.count_ones(), 6);
            for (c, &b) in freq.iter_mut().zip(m.bits()) {
                *c += b as usize;
            }
        }
        let sd = (trials as f64 * rho * (1.0 - rho)).sqrt();
        for c in freq {
            assert!((c as f64 - trials as f64 * rho).abs() <= 3.5 * sd, "count {c}");
        }
    }

    #[test]
    fn random_masks_differ_between_seeds() {
        let a = make_mask(&random_scores(20, 20, &mut Rng64::new(1)), 0.2, &mut Rng64::new(1)).unwrap();
        let b = make_mask(&random_scores(20, 20, &mut Rng64::new(2)), 0.2, &mut Rng64::new(2)).unwrap();
        assert_ne!(a.bits(), b.bits());
        assert_eq!(a.count_ones(), 80);
    }

    #[test]
    fn snip_relu_survivors_have_signal() {
        let (spec, params, x) = shallow(40, 40, Activation::Relu, 12);
        let f = snip_scores(&spec, &params, &x, 0.0).unwrap();
        let positive = f.magnitude_scores().as_slice().iter().filter(|&&s| s > 0.0).count();
        assert!(positive as f64 > 0.2 * 1600.0);
        let m = make_mask(&f, 0.2, &mut Rng64::new(0)).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                if m.get(i, j) {
                    assert!(f.psi[j] > 0.0);
                }
            }
        }
    }

    #[test]
    fn sorting_is_relabelling_invariant() {
        let (spec, params, x) = shallow(12, 12, Activation::Tanh, 6);
        let f = snip_scores(&spec, &params, &x, 0.0).unwrap();
        let m = make_mask(&f, 0.3, &mut Rng64::new(1)).unwrap();
        let mut rng = Rng64::new(99);
        let mut rp: Vec<usize> = (0..12).collect();
        let mut cp: Vec<usize> = (0..12).collect();
        rng.shuffle(&mut rp);
        rng.shuffle(&mut cp);
        let shuffled = m.permuted(&rp, &cp);
        assert_eq!(sort_by_factors(&shuffled), sort_by_factors(&m));
    }

    #[test]
    fn empirical_graphon_random_mean_and_determinism() {
        let cfg = GraphonConfig {
            method: Method::Random,
            activation: Activation::Tanh,
            rho: 0.25,
            width: 32,
            seeds: 1,
            grid: 8,
            seed: 5,
            label: 0.0,
        };
        let g = empirical_graphon(&cfg).unwrap();
        assert!((g.probs.mean() - 0.25).abs() < 1e-12);
        assert_eq!(empirical_graphon(&cfg).unwrap(), g);
        let bad = GraphonConfig { grid: 64, ..cfg };
        assert!(empirical_graphon(&bad).is_err());
    }

    #[test]
    fn magnitude_graphon_tightens_with_seeds() {
        let base = GraphonConfig {
            method: Method::Magnitude,
            activation: Activation::Relu,
            rho: 0.2,
            width: 64,
            seeds: 2,
            grid: 4,
            seed: 1,
            label: 0.0,
        };
        let dev = |seeds| {
            let g = empirical_graphon(&GraphonConfig { seeds, ..base.clone() }).unwrap();
            g.probs.cells().iter().map(|c| (c - 0.2).abs()).fold(0.0, f64::max)
        };
        assert!(dev(64) < dev(2));
    }

    #[test]
    fn deep_graphon_is_deterministic() {
        let cfg = GraphonConfig {
            method: Method::Snip,
            activation: Activation::Relu,
            rho: 0.2,
            width: 24,
            seeds: 3,
            grid: 6,
            seed: 2,
            label: 0.0,
        };
        let a = empirical_graphon_deep(&cfg).unwrap();
        let b = empirical_graphon_deep(&cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.0.probs.mean() - 0.2).abs() < 1e-3);
        assert!((a.1.probs.mean() - 0.2).abs() < 1e-3);
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((rank_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((rank_correlation(&a, &rev).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            rank_correlation(&a, &[1.0; 4]),
            Err(Error::UndefinedCorrelation(_))
        ));
        // ties take the average rank: [1, 2.5, 2.5, 4] vs [1,2,3,4]
        let tied = [1.0, 2.0, 2.0, 3.0];
        let want = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((rank_correlation(&a, &tied).unwrap() - want).abs() < 1e-12);
    }
}
