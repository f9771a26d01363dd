//! Dense row-major matrices and the handful of kernels the model needs.
//!
//! Everything here is `f64`. Weight matrices follow the `out × in` layout, so a
//! batch of row vectors `x` (one row per position) is mapped with
//! [`Matrix::matmul_t`], i.e. `x · Wᵀ`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(6) {
            write!(f, "{:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_t: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "t_matmul: ({}x{})ᵀ times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row_broadcast(&mut self, bias: &Matrix) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::shape(format!(
                "row broadcast of {}x{} onto {}x{}",
                bias.rows, bias.cols, self.rows, self.cols
            )));
        }
        for r in 0..self.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Row-wise argmax.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows).map(|r| argmax(self.row(r))).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `out[c] = bias[c] + dot(weight.row(c), x)`. Shared by batch and streaming
/// paths so both evaluate in the same order.
pub fn affine_into(weight: &Matrix, bias: Option<&Matrix>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(weight.cols, x.len());
    debug_assert_eq!(weight.rows, out.len());
    for (c, o) in out.iter_mut().enumerate() {
        let b = bias.map_or(0.0, |b| b.data[c]);
        *o = b + dot(weight.row(c), x);
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Vector-Jacobian product of a softmax row: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward_in_place(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner = dot(dy, y);
    for ((d, &yi), &dyi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (dyi - inner);
    }
}

pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        softmax_backward_in_place(y.row(r), dy.row(r), dx.row_mut(r));
    }
    dx
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

pub fn tanh_map(m: &Matrix) -> Matrix {
    m.map(f64::tanh)
}

/// Intermediates of a layer-norm forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Standardized rows before gain and bias.
    pub normalized: Matrix,
    /// Per-row `1 / sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<Matrix> {
    layer_norm_cached(x, gain, bias, eps).map(|(y, _)| y)
}

pub fn layer_norm_cached(
    x: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    if gain.shape() != (1, x.cols) || bias.shape() != (1, x.cols) {
        return Err(Error::shape(format!(
            "layer_norm gain {}x{} / bias {}x{} for {} columns",
            gain.rows, gain.cols, bias.rows, bias.cols, x.cols
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let n = x.cols as f64;
    let mut normalized = Matrix::zeros(x.rows, x.cols);
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        let norm_row = normalized.row_mut(r);
        for (z, v) in norm_row.iter_mut().zip(row) {
            *z = (v - mean) * istd;
        }
        let norm_row = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = norm_row[c] * gain.data[c] + bias.data[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Matrix,
    dy: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = Matrix::zeros(1, cols);
    let mut dbias = Matrix::zeros(1, cols);
    let mut dz = vec![0.0; cols];
    for r in 0..rows {
        let z = cache.normalized.row(r);
        let g = dy.row(r);
        for c in 0..cols {
            dgain.data[c] += g[c] * z[c];
            dbias.data[c] += g[c];
            dz[c] = g[c] * gain.data[c];
        }
        let mean_dz = dz.iter().sum::<f64>() / n;
        let mean_dz_z = dot(&dz, z) / n;
        let istd = cache.inv_std[r];
        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
            *d = istd * (dz[c] - mean_dz - z[c] * mean_dz_z);
        }
    }
    (dx, dgain, dbias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// `U(-1/√fan_in, +1/√fan_in)`.
    UniformScaled { fan_in: usize },
    Zeros,
    Ones,
}

impl InitScheme {
    /// Parses `uniform-scaled`, `zeros` or `ones`.
    pub fn parse(name: &str, fan_in: usize) -> Result<Self> {
        match name {
            "uniform-scaled" => Ok(InitScheme::UniformScaled { fan_in }),
            "zeros" => Ok(InitScheme::Zeros),
            "ones" => Ok(InitScheme::Ones),
            other => Err(Error::Config(format!("unknown init scheme '{other}'"))),
        }
    }
}

/// Seeded parameter source. The same seed and the same sequence of `init`
/// calls always produce bit-identical matrices.
#[derive(Debug, Clone)]
pub struct ParamRng {
    rng: ChaCha8Rng,
}

impl ParamRng {
    pub fn new(seed: RngSeed) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed.0),
        }
    }

    pub fn init(&mut self, rows: usize, cols: usize, scheme: InitScheme) -> Matrix {
        match scheme {
            InitScheme::Zeros => Matrix::zeros(rows, cols),
            InitScheme::Ones => Matrix::filled(rows, cols, 1.0),
            InitScheme::UniformScaled { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| self.rng.random_range(-bound..=bound))
                    .collect();
                Matrix { rows, cols, data }
            }
        }
    }

    /// `out × in` weight with `fan_in = in`.
    pub fn weight(&mut self, rows: usize, cols: usize) -> Matrix {
        self.init(rows, cols, InitScheme::UniformScaled { fan_in: cols })
    }
}

pub fn init_params(rows: usize, cols: usize, scheme: InitScheme, seed: RngSeed) -> Matrix {
    ParamRng::new(seed).init(rows, cols, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_small_cases() {
        let id = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(id.matmul(&v).unwrap(), v);

        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(a.matmul(&v).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)) <= 1e-12);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&triple_loop(&a, &b)) <= 1e-12);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("2x3 times 2x3"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::row_vector(&[0.0, 0.0, 0.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 0.0]));
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1) < 1e-300);

        let s = softmax_rows(&Matrix::row_vector(&[1.0, 2.0, 3.0]));
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, &v) in s.data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / denom).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let one = Matrix::filled(1, 3, 1.0);
        let zero = Matrix::zeros(1, 3);
        let y = layer_norm(&Matrix::row_vector(&[5.0, 5.0, 5.0]), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let one = Matrix::filled(1, 2, 1.0);
        let zero = Matrix::zeros(1, 2);
        let y = layer_norm(&Matrix::row_vector(&[1.0, 3.0]), &one, &zero, 1e-9).unwrap();
        assert!((y.get(0, 0) + 1.0).abs() < 1e-6 && (y.get(0, 1) - 1.0).abs() < 1e-6);

        assert!(layer_norm(&Matrix::zeros(1, 3), &one, &zero, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 4, 10).scale(7.0);
        let y = layer_norm(&x, &Matrix::filled(1, 10, 1.0), &Matrix::zeros(1, 10), 1e-12).unwrap();
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&Matrix::row_vector(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tanh_map(&Matrix::row_vector(&[0.0])).data(), &[0.0]);
        let big = tanh_map(&Matrix::row_vector(&[-15.0, 15.0, 3.0]));
        assert!(big.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn init_schemes() {
        assert_eq!(init_params(2, 2, InitScheme::Zeros, RngSeed(1)), Matrix::zeros(2, 2));
        let a = init_params(3, 5, InitScheme::UniformScaled { fan_in: 5 }, RngSeed(42));
        let b = init_params(3, 5, InitScheme::UniformScaled { fan_in: 5 }, RngSeed(42));
        assert_eq!(a, b);
        let draws = init_params(1, 64, InitScheme::UniformScaled { fan_in: 32 }, RngSeed(7));
        let bound = 1.0 / 32f64.sqrt();
        assert!(draws.data().iter().all(|v| v.abs() <= bound));
        assert!(matches!(
            InitScheme::parse("xavier", 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 2, 5);
        let gain = random_matrix(&mut rng, 1, 5);
        let bias = random_matrix(&mut rng, 1, 5);
        let w = random_matrix(&mut rng, 2, 5);
        let loss = |x: &Matrix| -> f64 {
            let y = layer_norm(x, &gain, &bias, 1e-5).unwrap();
            dot(y.data(), w.data())
        };
        let (_, cache) = layer_norm_cached(&x, &gain, &bias, 1e-5).unwrap();
        let (dx, _, _) = layer_norm_backward(&cache, &gain, &w);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e6f64..1e6, 1..12)) {
            let s = softmax_rows(&Matrix::row_vector(&row));
            let sum: f64 = s.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn layer_norm_shift_invariant(
            row in proptest::collection::vec(-50f64..50.0, 2..10),
            shift in -100f64..100.0,
        ) {
            let n = row.len();
            let gain = Matrix::filled(1, n, 1.0);
            let bias = Matrix::zeros(1, n);
            let a = layer_norm(&Matrix::row_vector(&row), &gain, &bias, LAYER_NORM_EPS).unwrap();
            let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let b = layer_norm(&Matrix::row_vector(&shifted), &gain, &bias, LAYER_NORM_EPS).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-6);
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 4);
            let b = random_matrix(&mut rng, 4, 2);
            let c = random_matrix(&mut rng, 2, 5);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= 1e-9);
        }
    }
}
