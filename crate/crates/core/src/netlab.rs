//! Masked multilayer perceptrons at initialisation.
//!
//! Layer `ℓ` computes `h⁽ˡ⁾_j = n_{ℓ−1}^{-1/2} Σ_i (θ⁽ˡ⁾ ⊙ M⁽ˡ⁾)_{ij} a⁽ˡ⁻¹⁾_i + b⁽ˡ⁾_j`
//! with `a⁽⁰⁾ = x` and `a⁽ˡ⁾ = σ(h⁽ˡ⁾)`; the scalar output is
//! `f = n_L^{-1/2} Σ_k w_k a⁽ᴸ⁾_k`. The output layer is never masked.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkit::{Activation, Rng64};

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub use_bias: bool,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::arg("network needs at least one hidden layer"));
        }
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::arg("all widths must be >= 1"));
        }
        Ok(NetSpec {
            input_dim,
            hidden: hidden.to_vec(),
            activation,
            use_bias: false,
        })
    }

    /// One hidden layer of width `n` on `d` inputs.
    pub fn shallow(d: usize, n: usize, activation: Activation) -> Result<Self> {
        Self::new(d, &[n], activation)
    }

    pub fn with_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Fan-in of hidden layer `l` (0-based).
    pub fn fan_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden[l - 1]
        }
    }

    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.fan_in(l), self.hidden[l])
    }

    pub fn output_width(&self) -> usize {
        self.hidden[self.hidden.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// `weights[l]` is `fan_in(l) × hidden[l]`.
    pub weights: Vec<Matrix>,
    pub output: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
}

impl NetParams {
    /// i.i.d. `N(0,1)` weights drawn layer by layer (row-major), then the
    /// output weights. Biases are zero.
    pub fn sample(spec: &NetSpec, rng: &mut Rng64) -> Self {
        let weights = (0..spec.depth())
            .map(|l| {
                let (r, c) = spec.layer_shape(l);
                Matrix::from_vec(r, c, rng.normal_vec(r * c)).expect("shape")
            })
            .collect();
        let output = rng.normal_vec(spec.output_width());
        let biases = spec.hidden.iter().map(|&n| vec![0.0; n]).collect();
        NetParams {
            weights,
            output,
            biases,
        }
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        NetParams {
            weights: (0..spec.depth())
                .map(|l| {
                    let (r, c) = spec.layer_shape(l);
                    Matrix::zeros(r, c)
                })
                .collect(),
            output: vec![0.0; spec.output_width()],
            biases: spec.hidden.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.weights.len() != spec.depth() || self.biases.len() != spec.depth() {
            return Err(Error::arg("parameter depth does not match spec"));
        }
        for l in 0..spec.depth() {
            if self.weights[l].shape() != spec.layer_shape(l) {
                return Err(Error::arg(format!(
                    "layer {l} weights are {:?}, spec wants {:?}",
                    self.weights[l].shape(),
                    spec.layer_shape(l)
                )));
            }
            if self.biases[l].len() != spec.hidden[l] {
                return Err(Error::arg(format!("layer {l} bias length mismatch")));
            }
        }
        if self.output.len() != spec.output_width() {
            return Err(Error::arg("output weight length mismatch"));
        }
        Ok(())
    }
}

/// Binary connectivity mask with the latent factors used to sort it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    pub row_factors: Vec<f64>,
    pub col_factors: Vec<f64>,
}

impl Mask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![1; rows * cols],
            row_factors: vec![1.0; rows],
            col_factors: vec![1.0; cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mask {
            bits: vec![0; rows * cols],
            ..Mask::ones(rows, cols)
        }
    }

    pub fn from_bits(
        rows: usize,
        cols: usize,
        bits: Vec<u8>,
        row_factors: Vec<f64>,
        col_factors: Vec<f64>,
    ) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::arg("mask bit count does not match shape"));
        }
        if row_factors.len() != rows || col_factors.len() != cols {
            return Err(Error::arg("mask factor lengths do not match shape"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::arg("mask entries must be 0 or 1"));
        }
        Ok(Mask {
            rows,
            cols,
            bits,
            row_factors,
            col_factors,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j] == 1
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.cols + j] = on as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row_bits(&self, i: usize) -> &[u8] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / (self.rows * self.cols) as f64
    }

    /// `θ ⊙ M`.
    pub fn apply(&self, weights: &Matrix) -> Result<Matrix> {
        if weights.shape() != self.shape() {
            return Err(Error::arg(format!(
                "mask {:?} does not fit weights {:?}",
                self.shape(),
                weights.shape()
            )));
        }
        let data = weights
            .as_slice()
            .iter()
            .zip(&self.bits)
            .map(|(&w, &b)| if b == 1 { w } else { 0.0 })
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    /// Rows and columns reordered (`order[k]` is the source index placed at `k`).
    pub fn permuted(&self, row_order: &[usize], col_order: &[usize]) -> Mask {
        let mut bits = Vec::with_capacity(self.bits.len());
        for &i in row_order {
            let row = self.row_bits(i);
            bits.extend(col_order.iter().map(|&j| row[j]));
        }
        Mask {
            rows: row_order.len(),
            cols: col_order.len(),
            bits,
            row_factors: row_order.iter().map(|&i| self.row_factors[i]).collect(),
            col_factors: col_order.iter().map(|&j| self.col_factors[j]).collect(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("shape")
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: f64,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub output: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
}

fn check_masks(spec: &NetSpec, masks: Option<&[Mask]>) -> Result<()> {
    if let Some(ms) = masks {
        if ms.len() != spec.depth() {
            return Err(Error::arg(format!(
                "{} masks supplied for {} hidden layers",
                ms.len(),
                spec.depth()
            )));
        }
        for (l, m) in ms.iter().enumerate() {
            if m.shape() != spec.layer_shape(l) {
                return Err(Error::arg(format!(
                    "mask {l} is {:?}, layer is {:?}",
                    m.shape(),
                    spec.layer_shape(l)
                )));
            }
        }
    }
    Ok(())
}

#[inline]
fn masked_weight(params: &NetParams, masks: Option<&[Mask]>, l: usize, i: usize, j: usize) -> f64 {
    match masks {
        Some(ms) if !ms[l].get(i, j) => 0.0,
        _ => params.weights[l][(i, j)],
    }
}

pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    masks: Option<&[Mask]>,
    x: &[f64],
) -> Result<ForwardPass> {
    params.check(spec)?;
    check_masks(spec, masks)?;
    if x.len() != spec.input_dim {
        return Err(Error::arg(format!(
            "input has length {}, network expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let act = spec.activation;
    let mut pre = Vec::with_capacity(spec.depth());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(spec.depth());
    for l in 0..spec.depth() {
        let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
        let scale = 1.0 / (spec.fan_in(l) as f64).sqrt();
        let w = &params.weights[l];
        let mut h = vec![0.0; spec.hidden[l]];
        for (i, &ai) in input.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = w.row(i);
            match masks {
                Some(ms) => {
                    let bits = ms[l].row_bits(i);
                    for j in 0..h.len() {
                        if bits[j] == 1 {
                            h[j] += row[j] * ai;
                        }
                    }
                }
                None => {
                    for (hj, &wij) in h.iter_mut().zip(row) {
                        *hj += wij * ai;
                    }
                }
            }
        }
        for (hj, &b) in h.iter_mut().zip(&params.biases[l]) {
            *hj = *hj * scale + b;
        }
        post.push(h.iter().map(|&v| act.eval(v)).collect());
        pre.push(h);
    }
    let last = &post[spec.depth() - 1];
    let out_scale = 1.0 / (spec.output_width() as f64).sqrt();
    let output = out_scale * params.output.iter().zip(last).map(|(a, s)| a * s).sum::<f64>();
    Ok(ForwardPass { output, pre, post })
}

/// `∂f/∂h⁽ˡ⁾` for every hidden layer, from a completed forward pass.
pub fn backward_signals(
    spec: &NetSpec,
    params: &NetParams,
    masks: Option<&[Mask]>,
    pass: &ForwardPass,
) -> Vec<Vec<f64>> {
    let act = spec.activation;
    let depth = spec.depth();
    let mut signals = vec![Vec::new(); depth];
    let out_scale = 1.0 / (spec.output_width() as f64).sqrt();
    signals[depth - 1] = params
        .output
        .iter()
        .zip(&pass.pre[depth - 1])
        .map(|(&a, &h)| out_scale * a * act.deriv(h))
        .collect();
    for l in (1..depth).rev() {
        let scale = 1.0 / (spec.fan_in(l) as f64).sqrt();
        let upstream = &signals[l];
        let rows = spec.fan_in(l);
        let mut down = vec![0.0; rows];
        for (i, d) in down.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, &u) in upstream.iter().enumerate() {
                s += masked_weight(params, masks, l, i, j) * u;
            }
            *d = scale * s * act.deriv(pass.pre[l - 1][i]);
        }
        signals[l - 1] = down;
    }
    signals
}

/// Gradient of `½(f(x) − y)²` with respect to every parameter. Masked-out
/// weights receive zero gradient.
pub fn grad_params(
    spec: &NetSpec,
    params: &NetParams,
    masks: Option<&[Mask]>,
    x: &[f64],
    y: f64,
) -> Result<Gradients> {
    let pass = forward(spec, params, masks, x)?;
    let delta = pass.output - y;
    let signals = backward_signals(spec, params, masks, &pass);
    let depth = spec.depth();
    let mut weights = Vec::with_capacity(depth);
    for l in 0..depth {
        let input: &[f64] = if l == 0 { x } else { &pass.post[l - 1] };
        let scale = delta / (spec.fan_in(l) as f64).sqrt();
        let sig = &signals[l];
        let mut g = Matrix::from_fn(input.len(), sig.len(), |i, j| scale * input[i] * sig[j]);
        if let Some(ms) = masks {
            for i in 0..g.rows() {
                let bits = ms[l].row_bits(i);
                for (gij, &b) in g.row_mut(i).iter_mut().zip(bits) {
                    if b == 0 {
                        *gij = 0.0;
                    }
                }
            }
        }
        weights.push(g);
    }
    let out_scale = delta / (spec.output_width() as f64).sqrt();
    let output = pass.post[depth - 1].iter().map(|&s| out_scale * s).collect();
    let biases = if spec.use_bias {
        signals
            .iter()
            .map(|s| s.iter().map(|&v| delta * v).collect())
            .collect()
    } else {
        spec.hidden.iter().map(|&n| vec![0.0; n]).collect()
    };
    Ok(Gradients {
        weights,
        output,
        biases,
    })
}

/// Hessian-vector product of the loss with respect to the first-layer
/// weights (dense network, output weights held fixed), by central
/// differences of the analytic gradient with step `1e-4·(1 + ‖v‖∞)`.
pub fn hvp(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    y: f64,
    direction: &Matrix,
) -> Result<Matrix> {
    if spec.depth() != 1 {
        return Err(Error::Feature(format!(
            "Hessian-vector product implemented for one hidden layer, got depth {}",
            spec.depth()
        )));
    }
    if direction.shape() != spec.layer_shape(0) {
        return Err(Error::arg("direction must match first-layer weight shape"));
    }
    if direction.max_abs() == 0.0 {
        return Ok(Matrix::zeros(direction.rows(), direction.cols()));
    }
    let h = 1e-4 * (1.0 + direction.max_abs());
    let shifted = |sign: f64| -> Result<Matrix> {
        let mut p = params.clone();
        for (w, &v) in p.weights[0].as_mut_slice().iter_mut().zip(direction.as_slice()) {
            *w += sign * h * v;
        }
        Ok(grad_params(spec, &p, None, x, y)?.weights.swap_remove(0))
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;
    let data = plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    Matrix::from_vec(direction.rows(), direction.cols(), data)
}
