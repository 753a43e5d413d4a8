//! Deterministic limit graphons on a grid: latent feature profiles,
//! Monte-Carlo column quantiles, link functions and density-matching
//! thresholds.

use rayon::prelude::*;

use crate::cutmetric::pool_to_grid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkit::{
    erf, half_normal_quantile, mc_quantile_table, std_normal_cdf, Activation, QuantileTable, Rng64,
};
use crate::saliency::Method;

/// `G × G` kernel sampled at cell centres `((i+½)/G, (j+½)/G)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernel {
    size: usize,
    cells: Vec<f64>,
}

impl GridKernel {
    pub fn new(size: usize, cells: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::arg("grid size must be >= 1"));
        }
        if cells.len() != size * size {
            return Err(Error::arg(format!(
                "grid of size {size} needs {} cells, got {}",
                size * size,
                cells.len()
            )));
        }
        if cells.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite grid cell".into()));
        }
        Ok(GridKernel { size, cells })
    }

    pub fn constant(size: usize, value: f64) -> Result<Self> {
        GridKernel::new(size, vec![value; size * size])
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::arg(format!(
                "grid kernel must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        GridKernel::new(m.rows(), m.as_slice().to_vec())
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        GridKernel::new(size, Matrix::from_fn(size, size, f).into_vec())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, iu: usize, iv: usize) -> f64 {
        self.cells[iu * self.size + iv]
    }

    pub fn row(&self, iu: usize) -> &[f64] {
        &self.cells[iu * self.size..(iu + 1) * self.size]
    }

    pub fn mean(&self) -> f64 {
        self.cells.iter().sum::<f64>() / self.cells.len() as f64
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.size, self.size, self.cells.clone()).expect("shape")
    }

    /// Cellwise `self − other`.
    pub fn difference(&self, other: &GridKernel) -> Result<GridKernel> {
        if self.size != other.size {
            return Err(Error::arg(format!(
                "grid sizes differ: {} vs {}",
                self.size, other.size
            )));
        }
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| a - b).collect();
        GridKernel::new(self.size, cells)
    }

    pub fn max_abs_diff(&self, other: &GridKernel) -> Result<f64> {
        Ok(self
            .difference(other)?
            .cells
            .iter()
            .fold(0.0, |m, c| m.max(c.abs())))
    }

    pub fn is_probability(&self) -> bool {
        self.cells.iter().all(|c| (0.0..=1.0).contains(c))
    }

    /// Non-decreasing along both axes, up to `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        let g = self.size;
        for i in 0..g {
            for j in 0..g {
                let c = self.get(i, j);
                if i + 1 < g && self.get(i + 1, j) < c - tol {
                    return false;
                }
                if j + 1 < g && self.get(i, j + 1) < c - tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Row latent profile `u ↦ φ(u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiProfile {
    /// `√2·erfinv(u)`, the half-normal quantile.
    HalfNormal,
    Constant(f64),
    Table(QuantileTable),
}

impl PhiProfile {
    pub fn eval(&self, u: f64) -> Result<f64> {
        match self {
            PhiProfile::HalfNormal => half_normal_quantile(u),
            PhiProfile::Constant(c) => Ok(*c),
            PhiProfile::Table(t) => Ok(t.query(u)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `|ξ| ~ |N(0,1)|`
    HalfNormal,
    /// `|ξ| ~ U[0,1]`
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Magnitude,
    /// Keeps `z·ξ > τ` with symmetric `ξ`.
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitModel {
    pub phi_profile: PhiProfile,
    pub psi_quantile: QuantileTable,
    pub noise_kind: NoiseKind,
    pub link_kind: LinkKind,
    tau: Option<f64>,
}

impl LimitModel {
    pub fn new(
        phi_profile: PhiProfile,
        psi_quantile: QuantileTable,
        noise_kind: NoiseKind,
        link_kind: LinkKind,
    ) -> Self {
        LimitModel {
            phi_profile,
            psi_quantile,
            noise_kind,
            link_kind,
            tau: None,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::arg(format!("threshold must be positive, got {tau}")));
        }
        self.tau = Some(tau);
        Ok(self)
    }

    fn require_tau(&self) -> Result<f64> {
        self.tau
            .ok_or_else(|| Error::Contract("limit model has no threshold; solve it first".into()))
    }
}

/// Retention probability `P(z·ξ > τ)` for the given noise law and link.
pub fn link_value(noise: NoiseKind, kind: LinkKind, tau: f64, z: f64) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(Error::arg(format!("link signal must be >= 0, got {z}")));
    }
    Ok(link_unchecked(noise, kind, tau, z))
}

#[inline]
fn link_unchecked(noise: NoiseKind, kind: LinkKind, tau: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if tau > 0.0 { 0.0 } else { 1.0 };
    }
    let t = tau / z;
    match (noise, kind) {
        (NoiseKind::HalfNormal, LinkKind::Magnitude) => 1.0 - erf(t / std::f64::consts::SQRT_2),
        (NoiseKind::HalfNormal, LinkKind::Signed) => 1.0 - std_normal_cdf(t),
        (NoiseKind::Uniform, LinkKind::Magnitude) => (1.0 - t).clamp(0.0, 1.0),
        (NoiseKind::Uniform, LinkKind::Signed) => (0.5 * (1.0 - t)).clamp(0.0, 0.5),
    }
}

pub fn link(model: &LimitModel, z: f64) -> Result<f64> {
    link_value(model.noise_kind, model.link_kind, model.require_tau()?, z)
}

fn psi_sampler(activation: Activation, nu: f64) -> impl Fn(&mut Rng64) -> f64 {
    move |r: &mut Rng64| {
        let a = r.normal();
        let h = nu * r.normal();
        a.abs() * activation.deriv(h).abs()
    }
}

/// SNIP limit: `φ(u) = √2·erfinv(u)`, `Q_ψ` from `|a|·|σ′(h)|` with
/// `a ~ N(0,1)`, `h ~ N(0,1)` independent, half-normal edge noise.
pub fn snip_limit_model(activation: Activation, mc_n: usize, rng: &mut Rng64) -> Result<LimitModel> {
    snip_limit_model_scaled(activation, 1.0, mc_n, rng)
}

/// As [`snip_limit_model`] with pre-activations `h ~ N(0, ν²)`.
pub fn snip_limit_model_scaled(
    activation: Activation,
    nu: f64,
    mc_n: usize,
    rng: &mut Rng64,
) -> Result<LimitModel> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::arg(format!("pre-activation scale must be positive, got {nu}")));
    }
    let psi = mc_quantile_table(psi_sampler(activation, nu), mc_n, rng)?;
    Ok(LimitModel::new(
        PhiProfile::HalfNormal,
        psi,
        NoiseKind::HalfNormal,
        LinkKind::Magnitude,
    ))
}

/// Limit model of each scorer on a one-hidden-layer network.
///
/// GraSP-magnitude shares the SNIP profiles (its column correction is
/// `O(1/√n)`); signed GraSP uses the same profiles with the Gaussian link.
pub fn method_limit_model(
    method: Method,
    activation: Activation,
    mc_n: usize,
    rng: &mut Rng64,
) -> Result<LimitModel> {
    match method {
        Method::Snip | Method::GraspMagnitude => snip_limit_model(activation, mc_n, rng),
        Method::GraspSigned => {
            let mut m = snip_limit_model(activation, mc_n, rng)?;
            m.link_kind = LinkKind::Signed;
            Ok(m)
        }
        Method::Synflow => {
            let psi = mc_quantile_table(|r| r.normal().abs(), mc_n, rng)?;
            Ok(LimitModel::new(
                PhiProfile::Constant(1.0),
                psi,
                NoiseKind::HalfNormal,
                LinkKind::Magnitude,
            ))
        }
        Method::Magnitude => Ok(LimitModel::new(
            PhiProfile::Constant(1.0),
            QuantileTable::constant(1.0),
            NoiseKind::HalfNormal,
            LinkKind::Magnitude,
        )),
        Method::Random => Ok(LimitModel::new(
            PhiProfile::Constant(1.0),
            QuantileTable::constant(1.0),
            NoiseKind::Uniform,
            LinkKind::Magnitude,
        )),
    }
}

/// Layer-2 SNIP limit of a two-hidden-layer network: rows follow the law of
/// `|σ(Z)|`, columns `|a|·|σ′(h)|` with `h ~ N(0, E σ(Z)²)`, the variance a
/// second-layer pre-activation actually has under `1/√n` scaling.
pub fn deep_layer2_model(activation: Activation, mc_n: usize, rng: &mut Rng64) -> Result<LimitModel> {
    let rows = mc_quantile_table(|r| activation.eval(r.normal()).abs(), mc_n, rng)?;
    let second_moment =
        rows.samples().iter().map(|v| v * v).sum::<f64>() / rows.len() as f64;
    let mut m = snip_limit_model_scaled(activation, second_moment.sqrt(), mc_n, rng)?;
    m.phi_profile = PhiProfile::Table(rows);
    Ok(m)
}

/// `φ(u)` at the `g` cell centres and `Q_ψ(v)` at the same centres.
fn profiles(model: &LimitModel, g: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let centre = |i: usize| (i as f64 + 0.5) / g as f64;
    let phi = (0..g)
        .map(|i| model.phi_profile.eval(centre(i)))
        .collect::<Result<Vec<_>>>()?;
    let psi = (0..g).map(|i| model.psi_quantile.query(centre(i))).collect();
    Ok((phi, psi))
}

fn grid_density(model: &LimitModel, phi: &[f64], psi: &[f64], tau: f64) -> f64 {
    let rows: Vec<f64> = phi
        .par_iter()
        .map(|&p| {
            psi.iter()
                .map(|&q| link_unchecked(model.noise_kind, model.link_kind, tau, p * q))
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (phi.len() * psi.len()) as f64
}

const MAX_ITERS: usize = 200;

/// Threshold whose `G × G` cell-centre grid has mean `ρ` (to 1e-6).
pub fn solve_threshold(model: &LimitModel, rho: f64, g: usize) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::arg(format!("density must lie in (0,1), got {rho}")));
    }
    if g == 0 {
        return Err(Error::arg("grid size must be >= 1"));
    }
    let (phi, psi) = profiles(model, g)?;
    let density = |tau| grid_density(model, &phi, &psi, tau);
    if density(f64::MIN_POSITIVE) < rho {
        return Err(Error::Numeric(format!(
            "grid cannot reach density {rho}: too many zero-signal cells"
        )));
    }
    let mut hi = 1.0;
    let mut iters = 0;
    while density(hi) >= rho {
        hi *= 2.0;
        iters += 1;
        if iters > MAX_ITERS {
            return Err(Error::Numeric("threshold bracket did not close".into()));
        }
    }
    let mut lo = 0.0;
    let mut iters = 0;
    while hi - lo > 1e-13 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if density(mid) >= rho {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters >= MAX_ITERS {
            return Err(Error::Numeric("threshold bisection did not converge".into()));
        }
    }
    let tau = 0.5 * (lo + hi);
    let achieved = density(tau);
    if (achieved - rho).abs() > 1e-6 {
        return Err(Error::Numeric(format!(
            "threshold {tau} reaches density {achieved}, wanted {rho}"
        )));
    }
    Ok(tau)
}

/// Cell-centre evaluation of `W(u,v) = link(φ(u)·Q_ψ(v))`.
pub fn evaluate_grid(model: &LimitModel, g: usize) -> Result<GridKernel> {
    let tau = model.require_tau()?;
    if g == 0 {
        return Err(Error::arg("grid size must be >= 1"));
    }
    let (phi, psi) = profiles(model, g)?;
    let rows: Vec<Vec<f64>> = phi
        .par_iter()
        .map(|&p| {
            psi.iter()
                .map(|&q| link_unchecked(model.noise_kind, model.link_kind, tau, p * q))
                .collect()
        })
        .collect();
    GridKernel::new(g, rows.concat())
}

/// Evaluate on a `G·factor` grid and average `factor × factor` blocks, so
/// every cell approximates the block integral of `W` rather than its
/// centre value. The threshold is re-solved on the fine grid.
pub fn block_averaged_graphon(
    model: &LimitModel,
    rho: f64,
    g: usize,
    factor: usize,
) -> Result<(GridKernel, f64)> {
    if factor == 0 {
        return Err(Error::arg("oversampling factor must be >= 1"));
    }
    let fine = g * factor;
    let tau = solve_threshold(model, rho, fine)?;
    let model = model.clone().with_tau(tau)?;
    let w = evaluate_grid(&model, fine)?;
    Ok((pool_to_grid(&w.to_matrix(), g)?, tau))
}

/// Oversampling used for theoretical kernels compared against pooled masks.
pub const DEFAULT_OVERSAMPLE: usize = 8;

/// Theoretical graphon of `method` at density `ρ` on a `G` grid.
pub fn theoretical_graphon(
    method: Method,
    activation: Activation,
    rho: f64,
    g: usize,
    mc_n: usize,
    rng: &mut Rng64,
) -> Result<(GridKernel, LimitModel)> {
    let model = method_limit_model(method, activation, mc_n, rng)?;
    if rho == 1.0 {
        return Ok((GridKernel::constant(g, 1.0)?, model));
    }
    let (w, tau) = block_averaged_graphon(&model, rho, g, DEFAULT_OVERSAMPLE)?;
    Ok((w, model.with_tau(tau)?))
}
