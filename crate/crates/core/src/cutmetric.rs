//! Matrix cut norm, operator-norm bracketing, grid pooling and the sorted
//! bipartite cut distance used to measure graphon convergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitg::{block_averaged_graphon, deep_layer2_model, method_limit_model, snip_limit_model, GridKernel, DEFAULT_OVERSAMPLE};
use crate::matrix::Matrix;
use crate::numkit::{Activation, Rng64};
use crate::saliency::{empirical_graphon, empirical_graphon_deep, GraphonConfig, Method};

/// Largest side enumerated by [`cut_norm_exact`].
pub const EXACT_BUDGET: usize = 22;
pub const DEFAULT_RESTARTS: usize = 32;
const HEURISTIC_SEED: u64 = 0x05ee_dc07;
const POWER_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutMethod {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    /// `(1/dn)·|Σ_{S×T} B_ij|` for the certificate.
    pub value: f64,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub method: CutMethod,
    /// `σ_max(B)/√(dn)`.
    pub upper_bound: f64,
}

/// `(1/dn)·|Σ_{i∈S, j∈T} B_ij|`.
pub fn rectangle_value(b: &Matrix, rows: &[usize], cols: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in rows {
        let r = b.row(i);
        for &j in cols {
            sum += r[j];
        }
    }
    sum.abs() / (b.rows() * b.cols()) as f64
}

/// Best column set for row sums `r`: positives or negatives, whichever has
/// the larger absolute total. Returns (|total|, take-positive).
#[inline]
fn best_side(r: &[f64]) -> (f64, bool) {
    let (mut pos, mut neg) = (0.0, 0.0);
    for &v in r {
        if v > 0.0 {
            pos += v;
        } else {
            neg += v;
        }
    }
    if pos >= -neg {
        (pos, true)
    } else {
        (-neg, false)
    }
}

fn side_indices(r: &[f64], positive: bool) -> Vec<usize> {
    r.iter()
        .enumerate()
        .filter(|(_, &v)| if positive { v > 0.0 } else { v < 0.0 })
        .map(|(j, _)| j)
        .collect()
}

/// `σ_max(B)` by power iteration on `BᵀB` from a fixed pseudo-random start.
pub fn spectral_norm(b: &Matrix) -> f64 {
    let n = b.cols();
    if n == 0 || b.rows() == 0 {
        return 0.0;
    }
    let mut rng = Rng64::new(0x0b5e_55ed);
    let mut v = rng.normal_vec(n);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w = b.t_mul_vec(&b.mul_vec(&v));
        let next = v.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
        v = w;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

pub fn operator_bound(b: &Matrix) -> f64 {
    spectral_norm(b) / ((b.rows() * b.cols()) as f64).sqrt()
}

/// Exact cut norm by enumerating every subset of the smaller side; the
/// other side is then chosen optimally in closed form.
pub fn cut_norm_exact(b: &Matrix) -> Result<CutResult> {
    let (d, n) = b.shape();
    let small = d.min(n);
    if small > EXACT_BUDGET {
        return Err(Error::Budget {
            size: small,
            limit: EXACT_BUDGET,
        });
    }
    let upper_bound = operator_bound(b);
    if d == 0 || n == 0 {
        return Ok(CutResult {
            value: 0.0,
            rows: vec![],
            cols: vec![],
            method: CutMethod::Exact,
            upper_bound,
        });
    }
    let work = if d <= n { b.clone() } else { b.transpose() };
    let m = work.rows();
    let high_bits = m.min(6);
    let low_bits = m - high_bits;
    // Each chunk fixes the high bits and walks the low bits in Gray order.
    let best = (0u64..1 << high_bits)
        .into_par_iter()
        .map(|hi| {
            let mut r = vec![0.0; work.cols()];
            for bit in 0..high_bits {
                if hi >> bit & 1 == 1 {
                    add_row(&mut r, work.row(low_bits + bit), 1.0);
                }
            }
            let base = hi << low_bits;
            let (mut best_val, mut best_pos) = best_side(&r);
            let mut best_set = base;
            let mut gray = 0u64;
            for step in 1u64..1 << low_bits {
                let bit = step.trailing_zeros() as usize;
                gray ^= 1 << bit;
                let sign = if gray >> bit & 1 == 1 { 1.0 } else { -1.0 };
                add_row(&mut r, work.row(bit), sign);
                let (val, pos) = best_side(&r);
                if val > best_val {
                    best_val = val;
                    best_pos = pos;
                    best_set = base | gray;
                }
            }
            (best_val, best_set, best_pos)
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, true),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    let (_, set, positive) = best;
    let subset: Vec<usize> = (0..m).filter(|i| set >> i & 1 == 1).collect();
    let mut r = vec![0.0; work.cols()];
    for &i in &subset {
        add_row(&mut r, work.row(i), 1.0);
    }
    let other = side_indices(&r, positive);
    let (rows, cols) = if d <= n { (subset, other) } else { (other, subset) };
    Ok(CutResult {
        value: rectangle_value(b, &rows, &cols),
        rows,
        cols,
        method: CutMethod::Exact,
        upper_bound,
    })
}

#[inline]
fn add_row(acc: &mut [f64], row: &[f64], sign: f64) {
    for (a, &v) in acc.iter_mut().zip(row) {
        *a += sign * v;
    }
}

/// Alternating maximisation of `sign·Σ_{S×T} B` from row indicator `start`.
fn alternate(b: &Matrix, start: Vec<bool>, sign: f64) -> (f64, Vec<usize>, Vec<usize>) {
    let (d, n) = b.shape();
    let mut s = start;
    let mut best = f64::NEG_INFINITY;
    let mut cert = (vec![], vec![]);
    for _ in 0..1000 {
        let mut r = vec![0.0; n];
        for (i, _) in s.iter().enumerate().filter(|(_, &on)| on) {
            add_row(&mut r, b.row(i), 1.0);
        }
        let t: Vec<bool> = r.iter().map(|&v| sign * v > 0.0).collect();
        let c: Vec<f64> = (0..d)
            .map(|i| {
                b.row(i)
                    .iter()
                    .zip(&t)
                    .filter(|(_, &on)| on)
                    .map(|(v, _)| v)
                    .sum::<f64>()
            })
            .collect();
        let next: Vec<bool> = c.iter().map(|&v| sign * v > 0.0).collect();
        let total: f64 = c.iter().zip(&next).filter(|(_, &on)| on).map(|(v, _)| sign * v).sum();
        if total <= best {
            break;
        }
        best = total;
        let idx = |m: &[bool]| m.iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect();
        cert = (idx(&next), idx(&t));
        if next == s {
            break;
        }
        s = next;
    }
    let value = rectangle_value(b, &cert.0, &cert.1);
    (value, cert.0, cert.1)
}

/// Lower bound on the cut norm from `restarts` random starts (plus the
/// all-rows start), each run for both signs.
pub fn cut_norm_heuristic(b: &Matrix, restarts: usize, rng: &mut Rng64) -> Result<CutResult> {
    if restarts == 0 {
        return Err(Error::arg("restarts must be >= 1"));
    }
    let d = b.rows();
    let mut starts = vec![vec![true; d]];
    for _ in 0..restarts {
        starts.push((0..d).map(|_| rng.bernoulli(0.5)).collect());
    }
    let best = starts
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(k, s)| {
            [1.0, -1.0].into_iter().enumerate().map(move |(h, sign)| (2 * k + h, s.clone(), sign))
        })
        .map(|(k, s, sign)| {
            let (v, rows, cols) = alternate(b, s, sign);
            (v, k, rows, cols)
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, vec![], vec![]),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    Ok(CutResult {
        value: best.0.max(0.0),
        rows: best.2,
        cols: best.3,
        method: CutMethod::Heuristic,
        upper_bound: operator_bound(b),
    })
}

/// Exact when the smaller side fits the enumeration budget, else the
/// seeded heuristic.
pub fn cut_norm(b: &Matrix) -> Result<CutResult> {
    if b.rows().min(b.cols()) <= EXACT_BUDGET {
        cut_norm_exact(b)
    } else {
        cut_norm_heuristic(b, DEFAULT_RESTARTS, &mut Rng64::new(HEURISTIC_SEED))
    }
}

/// Start offsets of `g` contiguous blocks over `len` items, larger blocks
/// first.
fn block_bounds(len: usize, g: usize) -> Vec<usize> {
    let (base, extra) = (len / g, len % g);
    let mut bounds = Vec::with_capacity(g + 1);
    let mut at = 0;
    bounds.push(0);
    for k in 0..g {
        at += base + usize::from(k < extra);
        bounds.push(at);
    }
    bounds
}

/// Average `P` over a `G × G` partition into near-equal contiguous blocks.
pub fn pool_to_grid(p: &Matrix, g: usize) -> Result<GridKernel> {
    let (d, n) = p.shape();
    if g == 0 || d < g || n < g {
        return Err(Error::arg(format!("cannot pool a {d}x{n} matrix to a grid of {g}")));
    }
    let rb = block_bounds(d, g);
    let cb = block_bounds(n, g);
    let mut cells = vec![0.0; g * g];
    for bi in 0..g {
        let mut sums = vec![0.0; g];
        for i in rb[bi]..rb[bi + 1] {
            let row = p.row(i);
            for (bj, s) in sums.iter_mut().enumerate() {
                *s += row[cb[bj]..cb[bj + 1]].iter().sum::<f64>();
            }
        }
        for bj in 0..g {
            let count = (rb[bi + 1] - rb[bi]) * (cb[bj + 1] - cb[bj]);
            cells[bi * g + bj] = sums[bj] / count as f64;
        }
    }
    GridKernel::new(g, cells)
}

/// Cut norm of `A − B` on the shared grid. Both kernels are already aligned
/// by sorting, so this upper-bounds the bipartite cut distance.
pub fn cut_distance_sorted(a: &GridKernel, b: &GridKernel) -> Result<CutResult> {
    cut_norm(&a.difference(b)?.to_matrix())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub method: Method,
    pub activation: Activation,
    pub rho: f64,
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub grid: usize,
    pub seed: u64,
    /// Hidden layers; depth 2 is supported for SNIP only.
    pub depth: usize,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub width: usize,
    /// 1-based hidden layer.
    pub layer: usize,
    pub distance: f64,
    pub upper_bound: f64,
    /// `√(log(2n)/n)`
    pub proxy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Theoretical kernel per layer.
    pub theoretical: Vec<GridKernel>,
    pub rows: Vec<SweepRow>,
    /// Empirical kernel per (width, layer), in row order.
    pub empirical: Vec<GridKernel>,
}

pub fn concentration_proxy(n: usize) -> f64 {
    let n = n as f64;
    ((2.0 * n).ln() / n).sqrt()
}

/// Theoretical kernels per layer for the sweep's method and depth.
pub fn sweep_theory(cfg: &SweepConfig) -> Result<Vec<GridKernel>> {
    let mut rng = Rng64::derive(cfg.seed, 0);
    let g = cfg.grid;
    let kernel = |model| -> Result<GridKernel> {
        if cfg.rho == 1.0 {
            return GridKernel::constant(g, 1.0);
        }
        Ok(block_averaged_graphon(&model, cfg.rho, g, DEFAULT_OVERSAMPLE)?.0)
    };
    match cfg.depth {
        1 => Ok(vec![kernel(method_limit_model(cfg.method, cfg.activation, cfg.mc_samples, &mut rng)?)?]),
        2 => {
            if cfg.method != Method::Snip {
                return Err(Error::Feature(format!(
                    "two-layer sweeps are built for snip, not {}",
                    cfg.method
                )));
            }
            let l1 = snip_limit_model(cfg.activation, cfg.mc_samples, &mut rng)?;
            let l2 = deep_layer2_model(cfg.activation, cfg.mc_samples, &mut rng)?;
            Ok(vec![kernel(l1)?, kernel(l2)?])
        }
        d => Err(Error::Feature(format!("sweeps support depth 1 or 2, got {d}"))),
    }
}

pub fn convergence_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    if cfg.widths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::arg("widths must be sorted ascending"));
    }
    if let Some(&w) = cfg.widths.iter().find(|&&w| w < cfg.grid) {
        return Err(Error::arg(format!("width {w} is smaller than grid {}", cfg.grid)));
    }
    let theoretical = sweep_theory(cfg)?;
    let mut rows = Vec::new();
    let mut empirical = Vec::new();
    for &width in &cfg.widths {
        let gcfg = GraphonConfig {
            method: cfg.method,
            activation: cfg.activation,
            rho: cfg.rho,
            width,
            seeds: cfg.seeds,
            grid: cfg.grid,
            seed: cfg.seed,
            label: 0.0,
        };
        let kernels = if cfg.depth == 1 {
            vec![empirical_graphon(&gcfg)?.probs]
        } else {
            let (a, b) = empirical_graphon_deep(&gcfg)?;
            vec![a.probs, b.probs]
        };
        for (layer, (emp, theo)) in kernels.into_iter().zip(&theoretical).enumerate() {
            let cut = cut_distance_sorted(&emp, theo)?;
            rows.push(SweepRow {
                width,
                layer: layer + 1,
                distance: cut.value,
                upper_bound: cut.upper_bound,
                proxy: concentration_proxy(width),
            });
            empirical.push(emp);
        }
    }
    Ok(SweepOutput {
        theoretical,
        rows,
        empirical,
    })
}
