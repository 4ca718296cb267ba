//! Dense matrices and fully-connected layers with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::SeededRng;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Matrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A 1×n matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(indices.iter().map(|&c| row[c]));
        }
        Self {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column means.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        if self.rows > 0 {
            means.iter_mut().for_each(|m| *m /= self.rows as f64);
        }
        means
    }

    /// Population column standard deviations.
    pub fn col_stds(&self) -> Vec<f64> {
        let means = self.col_means();
        let mut acc = vec![0.0; self.cols];
        for row in self.row_iter() {
            for ((a, v), m) in acc.iter_mut().zip(row).zip(&means) {
                *a += (v - m) * (v - m);
            }
        }
        acc.iter()
            .map(|a| {
                if self.rows > 0 {
                    math::sqrt(a / self.rows as f64)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Elementwise nonlinearity of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored as out×in.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_dim("DenseLayer bias", weight.rows(), bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    /// Fan-in uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// weights and biases (Kaiming-uniform with `a = sqrt(5)`).
    pub fn kaiming_uniform(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let bound = 1.0 / math::sqrt(input.max(1) as f64);
        let weight: Vec<f64> = (0..input * output)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..output)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            weight: Matrix {
                rows: output,
                cols: input,
                data: weight,
            },
            bias,
            activation,
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    /// Pre-activations `X Wᵀ + b` for a batch.
    pub fn affine(&self, x: &Matrix) -> Result<Matrix> {
        check_dim("DenseLayer input width", self.input_dim(), x.cols())?;
        let out_dim = self.output_dim();
        let in_dim = self.input_dim();
        let mut out = Matrix::zeros(x.rows(), out_dim);
        for s in 0..x.rows() {
            let x_row = x.row(s);
            let out_row = out.row_mut(s);
            for o in 0..out_dim {
                let w_row = &self.weight.data[o * in_dim..(o + 1) * in_dim];
                out_row[o] = self.bias[o] + dot(w_row, x_row);
            }
        }
        Ok(out)
    }

    /// Batch forward pass returning `(pre, post)` activations.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let pre = self.affine(x)?;
        let mut post = pre.clone();
        if self.activation != Activation::Identity {
            post.data
                .iter_mut()
                .for_each(|v| *v = self.activation.apply(*v));
        }
        Ok((pre, post))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_batch(x)?.1)
    }

    /// Backward pass of one layer given the gradient w.r.t. its output.
    pub fn backward_batch(
        &self,
        input: &Matrix,
        pre: &Matrix,
        output_grad: &Matrix,
    ) -> Result<(LayerGrads, Matrix)> {
        check_dim("backward input width", self.input_dim(), input.cols())?;
        check_dim("backward pre width", self.output_dim(), pre.cols())?;
        check_dim("backward grad width", self.output_dim(), output_grad.cols())?;
        check_dim("backward batch", input.rows(), output_grad.rows())?;
        check_dim("backward batch", input.rows(), pre.rows())?;
        let in_dim = self.input_dim();
        let out_dim = self.output_dim();
        let mut grads = LayerGrads::zeros_like(self);
        let mut input_grad = Matrix::zeros(input.rows(), in_dim);
        for s in 0..input.rows() {
            let x_row = input.row(s);
            let pre_row = pre.row(s);
            let g_row = output_grad.row(s);
            let dx = &mut input_grad.data[s * in_dim..(s + 1) * in_dim];
            for o in 0..out_dim {
                let delta = g_row[o] * self.activation.derivative(pre_row[o]);
                if delta == 0.0 {
                    continue;
                }
                grads.bias[o] += delta;
                let w_row = &self.weight.data[o * in_dim..(o + 1) * in_dim];
                let dw_row = &mut grads.weight.data[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dw_row[i] += delta * x_row[i];
                    dx[i] += delta * w_row[i];
                }
            }
        }
        Ok((grads, input_grad))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

/// Gradients for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.output_dim(), layer.input_dim()),
            bias: vec![0.0; layer.output_dim()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &LayerGrads) {
        for (a, b) in self.weight.data.iter_mut().zip(&other.weight.data) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Intermediate activations of a forward pass through a layer chain.
///
/// Layer `l` consumes `input(l)` (the chain input for `l = 0`, otherwise
/// `post(l - 1)`) and produces `pre(l)` and `post(l)`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }

    pub fn input(&self, layer: usize) -> &Matrix {
        if layer == 0 {
            &self.input
        } else {
            &self.post[layer - 1]
        }
    }

    pub fn pre(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }

    pub fn post(&self, layer: usize) -> &Matrix {
        &self.post[layer]
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Runs a batch through a chain of layers, keeping every activation.
pub fn forward_batch(layers: &[DenseLayer], x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(layers.len());
    for layer in layers {
        let (p, q) = layer.forward_batch(post.last().unwrap_or(x))?;
        pre.push(p);
        post.push(q);
    }
    let output = post.last().cloned().unwrap_or_else(|| x.clone());
    Ok((
        output,
        ForwardCache {
            input: x.clone(),
            pre,
            post,
        },
    ))
}

/// Single-vector forward pass.
pub fn forward(layers: &[DenseLayer], x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let (out, cache) = forward_batch(layers, &Matrix::row_vector(x))?;
    Ok((out.into_data(), cache))
}

/// Output only, without keeping the cache.
pub fn predict(layers: &[DenseLayer], x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for layer in layers {
        h = layer.apply(&h)?;
    }
    Ok(h)
}

/// Backward pass through the chain that produced `cache`.
///
/// Returns per-layer parameter gradients and the gradient with respect to the
/// chain input. A cache whose shapes do not match `layers` is rejected.
pub fn backward(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    output_grad: &Matrix,
) -> Result<(Vec<LayerGrads>, Matrix)> {
    if cache.layer_count() != layers.len() {
        return Err(Error::Logic(alloc::format!(
            "stale forward cache: {} cached layers for a {}-layer chain",
            cache.layer_count(),
            layers.len()
        )));
    }
    for (l, layer) in layers.iter().enumerate() {
        if cache.input(l).cols() != layer.input_dim() || cache.pre(l).cols() != layer.output_dim()
        {
            return Err(Error::Logic(alloc::format!(
                "stale forward cache: layer {l} shapes differ from the chain"
            )));
        }
    }
    check_dim("backward output grad rows", cache.batch_size(), output_grad.rows())?;
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = output_grad.clone();
    for (l, layer) in layers.iter().enumerate().rev() {
        let (lg, input_grad) = layer.backward_batch(cache.input(l), cache.pre(l), &g)?;
        grads.push(lg);
        g = input_grad;
    }
    grads.reverse();
    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[&[f64]], b: &[f64], act: Activation) -> DenseLayer {
        DenseLayer::new(Matrix::from_rows(w).unwrap(), b.to_vec(), act).unwrap()
    }

    #[test]
    fn identity_layer_passes_through() {
        let l = layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Identity);
        let (y, cache) = forward(&[l], &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
        assert_eq!(cache.layer_count(), 1);
    }

    #[test]
    fn relu_clamps_negatives() {
        let l = layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Relu);
        let (y, _) = forward(&[l], &[-1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 2.0]);
    }

    #[test]
    fn scalar_composition() {
        let a = layer(&[&[2.0]], &[0.0], Activation::Identity);
        let b = layer(&[&[3.0]], &[0.0], Activation::Identity);
        let (y, _) = forward(&[a, b], &[1.0]).unwrap();
        assert_eq!(y, vec![6.0]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let l = layer(&[&[1.0, 0.0]], &[0.0], Activation::Identity);
        assert!(matches!(
            forward(&[l], &[1.0, 2.0, 3.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scalar_product_rule() {
        let l = layer(&[&[2.0]], &[0.0], Activation::Identity);
        let layers = [l];
        let (_, cache) = forward(&layers, &[3.0]).unwrap();
        let (grads, dx) = backward(&layers, &cache, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(grads[0].weight.get(0, 0), 3.0);
        assert_eq!(grads[0].bias[0], 1.0);
        assert_eq!(dx.get(0, 0), 2.0);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let l = layer(&[&[1.0]], &[-2.0], Activation::Relu);
        let layers = [l];
        let (_, cache) = forward(&layers, &[1.0]).unwrap();
        assert_eq!(cache.pre(0).get(0, 0), -1.0);
        let (grads, dx) = backward(&layers, &cache, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(grads[0].weight.get(0, 0), 0.0);
        assert_eq!(grads[0].bias[0], 0.0);
        assert_eq!(dx.get(0, 0), 0.0);
    }

    #[test]
    fn stale_cache_is_a_logic_error() {
        let a = layer(&[&[1.0]], &[0.0], Activation::Identity);
        let b = layer(&[&[1.0, 1.0]], &[0.0], Activation::Identity);
        let (_, cache) = forward(core::slice::from_ref(&a), &[1.0]).unwrap();
        let err = backward(&[a.clone(), a.clone()], &cache, &Matrix::row_vector(&[1.0]));
        assert!(matches!(err, Err(Error::Logic(_))));
        let err = backward(&[b], &cache, &Matrix::row_vector(&[1.0]));
        assert!(matches!(err, Err(Error::Logic(_))));
    }

    #[test]
    fn matrix_helpers() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.column(1), vec![2.0, 5.0]);
        assert_eq!(m.transpose().row(2), &[3.0, 6.0]);
        assert_eq!(m.select_rows(&[1]).row(0), &[4.0, 5.0, 6.0]);
        assert_eq!(m.select_cols(&[2, 0]).row(1), &[6.0, 4.0]);
        assert_eq!(m.col_means(), vec![2.5, 3.5, 4.5]);
        assert_eq!(m.col_stds(), vec![1.5, 1.5, 1.5]);
        assert_eq!(m.row_iter().count(), 2);
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
