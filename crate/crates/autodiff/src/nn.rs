//! Layer-level operations built from tape primitives.
//!
//! All of these are compositions of [`Graph`] primitives, so they inherit
//! second-order differentiability for free.

use std::rc::Rc;

use crate::error::TensorError;
use crate::graph::{ConvGeom, Graph, Var};
use crate::tensor::Tensor;

type R = Result<Var, TensorError>;

impl Graph {
    /// `max(x, 0)`, written as `x * 1[x > 0]` with the mask held constant.
    pub fn relu(&mut self, x: Var) -> R {
        let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// `|x|`, as `x * sign(x)` with the sign held constant (right-hand
    /// convention at zero).
    pub fn abs(&mut self, x: Var) -> R {
        let sign = self.value(x).map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        let s = self.constant(sign);
        self.mul(x, s)
    }

    pub fn square(&mut self, x: Var) -> R {
        self.mul(x, x)
    }

    /// Fully connected layer: `x [N, in] · w [in, out] + b [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> R {
        let y = self.matmul(x, w)?;
        self.add_row_vector(y, b)
    }

    /// 2-D convolution over NHWC input with a kernel stored as
    /// `[KH*KW*C_in, C_out]` (rows ordered by `(ky, kx, c_in)`).
    /// Returns `[N, OH, OW, C_out]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, geom: ConvGeom) -> R {
        let (k, c_out) = self.value(kernel).dims2("conv2d")?;
        if k != geom.patch_len() {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("kernel has {} rows, geometry needs {}", k, geom.patch_len()),
            });
        }
        let cols = self.im2col(x, geom)?;
        let y = self.matmul(cols, kernel)?;
        let y = self.add_row_vector(y, bias)?;
        self.reshape(y, &[geom.batch, geom.out_h, geom.out_w, c_out])
    }

    /// 2×2 max pooling with stride 2 over NHWC input; odd trailing rows or
    /// columns are dropped. Ties go to the first maximal element in
    /// row-major window order.
    pub fn maxpool2x2(&mut self, x: Var) -> R {
        let s = self.shape(x).to_vec();
        let [n, h, w, c] = s[..] else {
            return Err(TensorError::Shape { op: "maxpool2x2", detail: format!("expected NHWC, got {:?}", s) });
        };
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut index = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if best == usize::MAX || src[i] > best_v {
                                    best = i;
                                    best_v = src[i];
                                }
                            }
                        }
                        index.push(best);
                    }
                }
            }
        }
        self.gather(x, Rc::new(index), &[n, oh, ow, c])
    }

    /// Row-wise softmax of an `[R, C]` matrix.
    pub fn softmax_rows(&mut self, x: Var) -> R {
        let (r, c) = self.value(x).dims2("softmax_rows")?;
        let maxes: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(c.max(1))
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let m = self.constant(Tensor::new(&[r, 1], maxes.iter().map(|m| -m).collect())?);
        let shifted = self.add_col_vector(x, m)?;
        let e = self.exp(shifted)?;
        let z = self.group_sum_cols(e, c)?;
        let inv = self.powf(z, -1.0)?;
        self.mul_col_vector(e, inv)
    }

    /// Per-row standardisation of an `[R, F]` matrix: zero mean, unit variance.
    pub fn standardize_rows(&mut self, x: Var, eps: f64) -> R {
        let (_, f) = self.value(x).dims2("standardize_rows")?;
        let neg_mean = self.group_sum_cols(x, f)?;
        let neg_mean = self.scale(neg_mean, -1.0 / f as f64)?;
        let centered = self.add_col_vector(x, neg_mean)?;
        let sq = self.square(centered)?;
        let var = self.group_sum_cols(sq, f)?;
        let var = self.scale(var, 1.0 / f as f64)?;
        let var = self.add_scalar(var, eps)?;
        let inv_std = self.powf(var, -0.5)?;
        self.mul_col_vector(centered, inv_std)
    }

    /// Layer normalisation: each sample is standardised over all of its
    /// features, then a per-channel gain and shift (`[1, C]`) is applied.
    /// `x` is any tensor whose first axis is the batch and last axis the channel.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> R {
        let shape = self.shape(x).to_vec();
        let n = shape[0];
        let c = *shape.last().unwrap();
        let total: usize = shape.iter().product();
        let flat = self.reshape(x, &[n, total / n])?;
        let z = self.standardize_rows(flat, eps)?;
        let z = self.reshape(z, &[total / c, c])?;
        let z = self.mul_row_vector(z, gamma)?;
        let z = self.add_row_vector(z, beta)?;
        self.reshape(z, &shape)
    }

    /// Training-mode batch normalisation of an `[M, C]` matrix (statistics
    /// over rows). Returns the output and the batch mean and (biased)
    /// variance so callers can maintain running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>), TensorError> {
        let (m, _) = self.value(x).dims2("batch_norm")?;
        let mean = self.group_sum_rows(x, m)?;
        let mean = self.scale(mean, 1.0 / m as f64)?;
        let neg_mean = self.neg(mean)?;
        let centered = self.add_row_vector(x, neg_mean)?;
        let sq = self.square(centered)?;
        let var = self.group_sum_rows(sq, m)?;
        let var = self.scale(var, 1.0 / m as f64)?;
        let var_eps = self.add_scalar(var, eps)?;
        let inv_std = self.powf(var_eps, -0.5)?;
        let z = self.mul_row_vector(centered, inv_std)?;
        let z = self.mul_row_vector(z, gamma)?;
        let y = self.add_row_vector(z, beta)?;
        let batch_mean = self.value(mean).data().to_vec();
        let batch_var = self.value(var).data().to_vec();
        Ok((y, batch_mean, batch_var))
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> R {
        let c = mean.len();
        let neg_mean = self.constant(Tensor::new(&[1, c], mean.iter().map(|m| -m).collect())?);
        let inv_std = self.constant(Tensor::new(&[1, c], var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect())?);
        let z = self.add_row_vector(x, neg_mean)?;
        let z = self.mul_row_vector(z, inv_std)?;
        let z = self.mul_row_vector(z, gamma)?;
        self.add_row_vector(z, beta)
    }

    /// Euclidean norm of each row of an `[R, C]` matrix, as `[R, 1]`.
    /// `eps` is added under the square root so the norm stays differentiable at 0.
    pub fn l2_norm_rows(&mut self, x: Var, eps: f64) -> R {
        let (_, c) = self.value(x).dims2("l2_norm_rows")?;
        let sq = self.square(x)?;
        let s = self.group_sum_cols(sq, c)?;
        let s = self.add_scalar(s, eps)?;
        self.powf(s, 0.5)
    }
}
