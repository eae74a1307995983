//! The association transform: a residual MLP with unit-norm output.
//!
//! ```text
//! g(x) = LN4(W4 · GELU(LN3(W3 · GELU(LN2(W2 · GELU(LN1(W1 · x + b1)) + b2)) + b3)) + b4)
//! f(x) = normalize(α · x + (1 − α) · g(x)),   α = sigmoid(alpha_logit)
//! ```
//!
//! Forward and backward are written out by hand. The backward pass is exact,
//! including LayerNorm and the final row normalization, and is checked
//! against central finite differences in the test suite.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::rng::SeededRng;
use crate::scalar::Real;

pub const DEFAULT_HIDDEN: usize = 1024;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const N_LAYERS: usize = 4;
/// Rows whose pre-normalization norm falls below this get a zero gradient.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
/// 1 / sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU: `x · Φ(x)` with the erf-based normal CDF.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

#[inline]
fn normal_cdf<T: Real>(x: T) -> T {
    T::from_f64(0.5) * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad_from_cdf<T: Real>(x: T, cdf: T) -> T {
    cdf + x * T::from_f64(INV_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Role of a parameter tensor, used to decide weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

/// Linear map followed by LayerNorm.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out x in`, applied as `x Wᵀ`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub norm_scale: Vec<T>,
    pub norm_shift: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::ZERO; output],
            norm_scale: vec![T::ZERO; output],
            norm_shift: vec![T::ZERO; output],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

fn layer_dims(d: usize, hidden: usize) -> [(usize, usize); N_LAYERS] {
    [(d, hidden), (hidden, hidden), (hidden, hidden), (hidden, d)]
}

/// Learnable parameters of the transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CalModel<T> {
    d: usize,
    hidden: usize,
    pub layers: Vec<Layer<T>>,
    pub alpha_logit: T,
}

/// One gradient tensor per parameter tensor of a [`CalModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    pub layers: Vec<Layer<T>>,
    pub alpha_logit: T,
    /// Rows skipped because their pre-normalization norm was degenerate.
    pub degenerate_rows: usize,
}

fn tensor_refs<T>(layers: &[Layer<T>]) -> Vec<(ParamKind, &[T])> {
    let mut out = Vec::with_capacity(layers.len() * 4);
    for l in layers {
        out.push((ParamKind::Weight, l.weight.as_slice()));
        out.push((ParamKind::Bias, &l.bias[..]));
        out.push((ParamKind::NormScale, &l.norm_scale[..]));
        out.push((ParamKind::NormShift, &l.norm_shift[..]));
    }
    out
}

fn tensor_muts<T>(layers: &mut [Layer<T>]) -> Vec<(ParamKind, &mut [T])> {
    let mut out = Vec::with_capacity(layers.len() * 4);
    for l in layers {
        out.push((ParamKind::Weight, l.weight.as_mut_slice()));
        out.push((ParamKind::Bias, &mut l.bias[..]));
        out.push((ParamKind::NormScale, &mut l.norm_scale[..]));
        out.push((ParamKind::NormShift, &mut l.norm_shift[..]));
    }
    out
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros_like(model: &CalModel<T>) -> Self {
        Self {
            layers: layer_dims(model.d, model.hidden)
                .iter()
                .map(|&(i, o)| Layer::zeros(i, o))
                .collect(),
            alpha_logit: T::ZERO,
            degenerate_rows: 0,
        }
    }

    /// Gradient tensors in checkpoint declaration order.
    pub fn tensors(&self) -> Vec<(ParamKind, &[T])> {
        tensor_refs(&self.layers)
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [T])> {
        tensor_muts(&mut self.layers)
    }

    pub fn add_assign(&mut self, other: &GradientBuffer<T>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self.alpha_logit += other.alpha_logit;
        self.degenerate_rows += other.degenerate_rows;
    }

    pub fn is_all_zero(&self) -> bool {
        self.alpha_logit == T::ZERO
            && self
                .tensors()
                .iter()
                .all(|(_, t)| t.iter().all(|x| *x == T::ZERO))
    }
}

impl<T: Real> CalModel<T> {
    /// Fresh model: linear weights uniform in ±1/sqrt(fan_in) drawn in
    /// declaration order, zero biases, identity LayerNorm, alpha_logit = 0.
    pub fn init(d: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let layers = layer_dims(d, hidden)
            .iter()
            .map(|&(input, output)| {
                let bound = 1.0 / libm::sqrt(input as f64);
                let mut layer = Layer::zeros(input, output);
                for w in layer.weight.as_mut_slice() {
                    *w = T::from_f64(rng.uniform(-bound, bound));
                }
                layer.norm_scale.iter_mut().for_each(|s| *s = T::ONE);
                layer
            })
            .collect();
        Ok(Self {
            d,
            hidden,
            layers,
            alpha_logit: T::ZERO,
        })
    }

    /// Assembles a model from explicit parts (used when loading checkpoints).
    pub fn from_parts(d: usize, hidden: usize, layers: Vec<Layer<T>>, alpha_logit: T) -> Result<Self> {
        let dims = layer_dims(d, hidden);
        if layers.len() != N_LAYERS {
            return Err(Error::Shape {
                expected: N_LAYERS,
                found: layers.len(),
            });
        }
        for (layer, &(i, o)) in layers.iter().zip(&dims) {
            let ok = layer.weight.rows() == o
                && layer.weight.cols() == i
                && layer.bias.len() == o
                && layer.norm_scale.len() == o
                && layer.norm_shift.len() == o;
            if !ok {
                return Err(Error::Shape {
                    expected: o * i,
                    found: layer.weight.as_slice().len(),
                });
            }
        }
        Ok(Self {
            d,
            hidden,
            layers,
            alpha_logit,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn alpha(&self) -> T {
        sigmoid(self.alpha_logit)
    }

    /// Count of learnable scalars, including `alpha_logit`.
    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum::<usize>() + 1
    }

    /// Parameter tensors in checkpoint declaration order: for each layer,
    /// weight, bias, LayerNorm scale, LayerNorm shift.
    pub fn tensors(&self) -> Vec<(ParamKind, &[T])> {
        tensor_refs(&self.layers)
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [T])> {
        tensor_muts(&mut self.layers)
    }

    pub fn cast<U: Real>(&self) -> CalModel<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        CalModel {
            d: self.d,
            hidden: self.hidden,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: conv(&l.bias),
                    norm_scale: conv(&l.norm_scale),
                    norm_shift: conv(&l.norm_shift),
                })
                .collect(),
            alpha_logit: U::from_f64(self.alpha_logit.to_f64()),
        }
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                found: x.cols(),
            });
        }
        if let Some(pos) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerics(alloc::format!(
                "input row {} contains a non-finite value",
                pos / self.d.max(1)
            )));
        }
        Ok(())
    }

    /// Applies the transform to every row of `x`, keeping the intermediates
    /// needed by [`CalModel::backward`].
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let n = x.rows();
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut hidden_caches = Vec::with_capacity(N_LAYERS);
        let mut activations: Vec<Matrix<T>> = Vec::with_capacity(N_LAYERS - 1);

        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &activations[l - 1] };
            let out = layer.out_dim();
            let mut z = Matrix::zeros(n, out);
            gemm(T::ONE, input, false, &layer.weight, true, T::ZERO, &mut z);
            let mut rstd = vec![T::ZERO; n];
            let mut y = Matrix::zeros(n, out);
            for r in 0..n {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += *b;
                }
                rstd[r] = normalize_row(row, eps);
                let yrow = y.row_mut(r);
                for j in 0..out {
                    yrow[j] = row[j] * layer.norm_scale[j] + layer.norm_shift[j];
                }
            }
            // `z` now holds the normalized pre-affine values (x-hat).
            if l + 1 < N_LAYERS {
                let mut cdf = Matrix::zeros(n, out);
                let mut h = Matrix::zeros(n, out);
                for ((hv, cv), yv) in h
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cdf.as_mut_slice().iter_mut())
                    .zip(y.as_slice())
                {
                    *cv = normal_cdf(*yv);
                    *hv = *yv * *cv;
                }
                hidden_caches.push(LayerCache {
                    xhat: z,
                    rstd,
                    pre_activation: y,
                    cdf,
                });
                activations.push(h);
            } else {
                hidden_caches.push(LayerCache {
                    xhat: z,
                    rstd,
                    pre_activation: Matrix::zeros(0, 0),
                    cdf: Matrix::zeros(0, 0),
                });
                activations.push(y);
            }
        }

        let g = activations.pop().expect("final layer output");
        let alpha = self.alpha();
        let beta = T::ONE - alpha;
        let mut output = Matrix::zeros(n, self.d);
        let mut out_norm = vec![T::ZERO; n];
        for r in 0..n {
            let orow = output.row_mut(r);
            let mut sq = T::ZERO;
            for ((o, xv), gv) in orow.iter_mut().zip(x.row(r)).zip(g.row(r)) {
                *o = alpha * *xv + beta * *gv;
                sq += *o * *o;
            }
            let norm = sq.sqrt();
            out_norm[r] = norm;
            if norm.to_f64() >= MIN_OUTPUT_NORM {
                let inv = T::ONE / norm;
                orow.iter_mut().for_each(|o| *o *= inv);
            }
        }
        let cache = ForwardCache {
            input: x.clone(),
            layers: hidden_caches,
            activations,
            g,
            out_norm,
            output: output.clone(),
            alpha,
        };
        Ok((output, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn transform(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Exact gradients of `sum(dY ⊙ Y)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, d_output: &Matrix<T>) -> Result<GradientBuffer<T>> {
        let n = cache.output.rows();
        if d_output.rows() != n || d_output.cols() != self.d || cache.input.cols() != self.d {
            return Err(Error::Shape {
                expected: n * self.d,
                found: d_output.rows() * d_output.cols(),
            });
        }
        let mut grads = GradientBuffer::zeros_like(self);
        let alpha = cache.alpha;
        let beta = T::ONE - alpha;

        // Through the row normalization and residual blend.
        let mut d_g = Matrix::zeros(n, self.d);
        let mut d_alpha = T::ZERO;
        for r in 0..n {
            let norm = cache.out_norm[r];
            if norm.to_f64() < MIN_OUTPUT_NORM {
                grads.degenerate_rows += 1;
                continue;
            }
            let y = cache.output.row(r);
            let dy = d_output.row(r);
            let proj = crate::linalg::dot(y, dy);
            let inv = T::ONE / norm;
            let xrow = cache.input.row(r);
            let grow = cache.g.row(r);
            let dgrow = d_g.row_mut(r);
            for j in 0..self.d {
                let du = (dy[j] - y[j] * proj) * inv;
                d_alpha += du * (xrow[j] - grow[j]);
                dgrow[j] = beta * du;
            }
        }
        grads.alpha_logit = d_alpha * alpha * (T::ONE - alpha);

        let mut upstream = d_g;
        for l in (0..N_LAYERS).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let out = layer.out_dim();
            // Into the LayerNorm output: through GELU on hidden layers.
            if l + 1 < N_LAYERS {
                for ((u, yv), cv) in upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(lc.pre_activation.as_slice())
                    .zip(lc.cdf.as_slice())
                {
                    *u *= gelu_grad_from_cdf(*yv, *cv);
                }
            }
            let gl = &mut grads.layers[l];
            let inv_out = T::ONE / T::from_usize(out);
            let mut d_z = Matrix::zeros(n, out);
            for r in 0..n {
                let dy = upstream.row(r);
                let xhat = lc.xhat.row(r);
                let mut mean_dxhat = T::ZERO;
                let mut mean_dxhat_xhat = T::ZERO;
                for j in 0..out {
                    gl.norm_scale[j] += dy[j] * xhat[j];
                    gl.norm_shift[j] += dy[j];
                    let dxh = dy[j] * layer.norm_scale[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[j];
                }
                mean_dxhat *= inv_out;
                mean_dxhat_xhat *= inv_out;
                let rs = lc.rstd[r];
                let dz = d_z.row_mut(r);
                for j in 0..out {
                    let dxh = dy[j] * layer.norm_scale[j];
                    dz[j] = rs * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            let input = if l == 0 {
                &cache.input
            } else {
                &cache.activations[l - 1]
            };
            gemm(T::ONE, &d_z, true, input, false, T::ZERO, &mut gl.weight);
            for r in 0..n {
                for (b, v) in gl.bias.iter_mut().zip(d_z.row(r)) {
                    *b += *v;
                }
            }
            if l > 0 {
                let mut d_in = Matrix::zeros(n, layer.in_dim());
                gemm(T::ONE, &d_z, false, &layer.weight, false, T::ZERO, &mut d_in);
                upstream = d_in;
            }
        }
        Ok(grads)
    }
}

/// Normalizes `row` in place to zero mean and unit variance; returns the
/// reciprocal standard deviation.
#[inline]
fn normalize_row<T: Real>(row: &mut [T], eps: T) -> T {
    let inv_n = T::ONE / T::from_usize(row.len());
    let mut mean = T::ZERO;
    for v in row.iter() {
        mean += *v;
    }
    mean *= inv_n;
    let mut var = T::ZERO;
    for v in row.iter() {
        let c = *v - mean;
        var += c * c;
    }
    var *= inv_n;
    let rstd = T::ONE / (var + eps).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * rstd;
    }
    rstd
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
    /// LayerNorm output (GELU input); empty for the last layer.
    pre_activation: Matrix<T>,
    cdf: Matrix<T>,
}

/// Intermediates from [`CalModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Matrix<T>,
    layers: Vec<LayerCache<T>>,
    /// GELU outputs of the three hidden layers.
    activations: Vec<Matrix<T>>,
    g: Matrix<T>,
    out_norm: Vec<T>,
    output: Matrix<T>,
    alpha: T,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

/// Analytic parameter count for `(d, hidden)`.
pub fn parameter_count(d: usize, hidden: usize) -> usize {
    (d * hidden + hidden) + 2 * (hidden * hidden + hidden) + (hidden * d + d) + 3 * 2 * hidden + 2 * d + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, d: usize, rng: &mut SeededRng) -> Matrix<f64> {
        let mut x = Matrix::from_fn(n, d, |_, _| rng.normal());
        for r in 0..n {
            let unit = crate::types::l2_normalize(x.row(r)).unwrap();
            x.row_mut(r).copy_from_slice(&unit);
        }
        x
    }

    #[test]
    fn parameter_count_matches_formula() {
        let m = CalModel::<f32>::init(50, 1024, &mut SeededRng::new(42)).unwrap();
        assert_eq!(m.parameter_count(), 2_208_919);
        assert_eq!(parameter_count(50, 1024), 2_208_919);
        assert_eq!(parameter_count(100, 1024), 2_311_469);
        let small = CalModel::<f64>::init(3, 4, &mut SeededRng::new(1)).unwrap();
        assert_eq!(small.parameter_count(), parameter_count(3, 4));
    }

    #[test]
    fn init_is_deterministic_and_documented() {
        let a = CalModel::<f32>::init(5, 7, &mut SeededRng::new(9)).unwrap();
        let b = CalModel::<f32>::init(5, 7, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alpha_logit, 0.0);
        assert_eq!(a.alpha(), 0.5);
        for l in &a.layers {
            let bound = 1.0 / (l.in_dim() as f32).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|b| *b == 0.0));
            assert!(l.norm_scale.iter().all(|s| *s == 1.0));
            assert!(l.norm_shift.iter().all(|s| *s == 0.0));
        }
    }

    #[test]
    fn output_rows_are_unit_norm() {
        let mut rng = SeededRng::new(2);
        let model = CalModel::<f32>::init(6, 16, &mut rng).unwrap();
        let x = random_input(10, 6, &mut rng).cast::<f32>();
        let y = model.transform(&x).unwrap();
        for r in 0..10 {
            let n = crate::linalg::norm(y.row(r));
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn saturated_alpha_is_identity_on_unit_inputs() {
        let mut rng = SeededRng::new(3);
        let mut model = CalModel::<f64>::init(4, 8, &mut rng).unwrap();
        model.alpha_logit = 20.0;
        let x = random_input(5, 4, &mut rng);
        let y = model.transform(&x).unwrap();
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(4);
        let model = CalModel::<f64>::init(3, 5, &mut rng).unwrap();
        let x = random_input(4, 3, &mut rng);
        let (_, cache) = model.forward(&x).unwrap();
        let g = model.backward(&cache, &Matrix::zeros(4, 3)).unwrap();
        assert!(g.is_all_zero());
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let mut rng = SeededRng::new(4);
        let model = CalModel::<f64>::init(3, 5, &mut rng).unwrap();
        let x = random_input(4, 3, &mut rng);
        let (_, cache) = model.forward(&x).unwrap();
        assert!(matches!(
            model.backward(&cache, &Matrix::zeros(2, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let model = CalModel::<f32>::init(2, 3, &mut SeededRng::new(0)).unwrap();
        let x = Matrix::from_vec(1, 2, vec![f32::NAN, 1.0]).unwrap();
        assert!(matches!(model.forward(&x), Err(Error::Numerics(_))));
        let wrong = Matrix::from_vec(1, 3, vec![1.0f32, 0.0, 0.0]).unwrap();
        assert!(matches!(model.forward(&wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Loss = sum(c ⊙ f(x)) for a fixed random c.
        let mut rng = SeededRng::new(21);
        let mut model = CalModel::<f64>::init(3, 4, &mut rng).unwrap();
        model.alpha_logit = 0.3;
        for l in &mut model.layers {
            for s in &mut l.norm_scale {
                *s = 1.0 + 0.2 * rng.normal();
            }
            for s in &mut l.norm_shift {
                *s = 0.1 * rng.normal();
            }
        }
        let x = random_input(2, 3, &mut rng);
        let c = Matrix::from_fn(2, 3, |_, _| rng.normal());
        let loss = |m: &CalModel<f64>| -> f64 {
            let y = m.transform(&x).unwrap();
            y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = model.forward(&x).unwrap();
        let grads = model.backward(&cache, &c).unwrap();
        let eps = 1e-5;
        let n_tensors = model.tensors().len();
        for t in 0..n_tensors {
            let len = model.tensors()[t].1.len();
            for i in 0..len {
                let mut plus = model.clone();
                plus.tensors_mut()[t].1[i] += eps;
                let mut minus = model.clone();
                minus.tensors_mut()[t].1[i] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = grads.tensors()[t].1[i];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "tensor {t} index {i}: {numeric} vs {analytic}"
                );
            }
        }
        let mut plus = model.clone();
        plus.alpha_logit += eps;
        let mut minus = model.clone();
        minus.alpha_logit -= eps;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        assert!((numeric - grads.alpha_logit).abs() < 1e-7);
    }
}
