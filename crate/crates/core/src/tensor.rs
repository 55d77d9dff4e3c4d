//! Dense row-major float64 tensors and the handful of eager kernels shared by
//! the tape and by inference code.

use crate::error::{GamError, Result};

/// Dense float64 array in row-major order.
///
/// Parameters carry `requires_grad = true` and a gradient buffer of the same
/// shape; intermediate values on a [`crate::tape::Tape`] do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(GamError::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(GamError::shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("zeros: non-empty shape")
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GamError::shape("ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    /// Marks the tensor as trainable and allocates a zeroed gradient.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// `(rows, cols)` of a 2-D tensor; a 1-D tensor is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(GamError::shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        Tensor::matrix(c, r, transpose(&self.data, r, c))
    }
}

/// `a (m×k) · b (k×n)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise softmax of a `rows×cols` buffer with max subtraction.
pub(crate) fn softmax_rows_raw(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Numerically stable softmax over each row of a matrix.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(GamError::NonFinite("softmax_rows input".into()));
    }
    Tensor::matrix(r, c, softmax_rows_raw(&m.data, c))
}

/// `gain ⊙ (v − mean) / sqrt(var + eps) + bias` with the population variance.
pub fn layer_norm(v: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() != gain.len() || v.len() != bias.len() {
        return Err(GamError::shape(format!(
            "layer_norm lengths v={} gain={} bias={}",
            v.len(),
            gain.len(),
            bias.len()
        )));
    }
    let (mean, inv_std) = moments(v, eps);
    Ok(v.iter()
        .zip(gain.iter().zip(bias))
        .map(|(x, (g, b))| g * (x - mean) * inv_std + b)
        .collect())
}

/// Mean and `1/sqrt(var + eps)` of a row.
pub(crate) fn moments(v: &[f64], eps: f64) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        // e^0.7 = 2.0137527..., 1/(1+e^0.7) = 0.331812...
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.7]]).unwrap()).unwrap();
        let e = 0.7f64.exp();
        assert!((s.data()[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((s.data()[0] - 0.33181).abs() < 1e-5);
        assert!((s.data()[1] - 0.66819).abs() < 1e-5);

        let s = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 1000.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert_eq!(softmax_rows(&t).unwrap_err().code(), "E_NONFINITE");
        let t = Tensor::from_rows(&[vec![f64::INFINITY, 0.0]]).unwrap();
        assert_eq!(softmax_rows(&t).unwrap_err().code(), "E_NONFINITE");
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(&[1.0, 1.0, 1.0], &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);

        let out = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-9 && (out[1] + 1.0).abs() < 1e-9);

        let out = layer_norm(&[3.0, -7.0, 0.5], &[0.0; 3], &[0.1, 0.2, 0.3], 1e-5).unwrap();
        assert_eq!(out, vec![0.1, 0.2, 0.3]);

        let err = layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).unwrap_err();
        assert_eq!(err.code(), "E_SHAPE");
    }

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        let p = Tensor::zeros(vec![2, 2]).into_param();
        assert_eq!(p.grad().unwrap().len(), 4);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), ab);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 2), ab);
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in proptest::collection::vec(
            proptest::collection::vec(-50.0f64..50.0, 5), 1..6)) {
            let t = Tensor::from_rows(&rows).unwrap();
            let s = softmax_rows(&t).unwrap();
            for r in 0..rows.len() {
                let row = s.row(r);
                proptest::prop_assert!(row.iter().all(|&x| x > 0.0));
                proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
