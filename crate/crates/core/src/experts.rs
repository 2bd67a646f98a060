//! Two-layer ReLU MLP experts and the budget-preserving expert bank.
//!
//! A bank holds `n` identically shaped experts whose hidden width is
//! `max(1, H / n)` for a total hidden-unit budget `H`, so the weight-matrix
//! parameter count `2 d H` does not change as `n` varies (the fixed-budget
//! protocol used by every experiment here).

use crate::error::{Error, Result};
use crate::tensor::{matmul, sample_gaussian, Matrix, RngStream};

/// One expert: `f(z) = relu(z W1 + b1) W2 + b2`, mapping `R^d -> R^d`
/// through a hidden layer of width `h`. Inputs are row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpExpert {
    /// First-layer weights, `d x h`.
    pub w1: Matrix,
    /// First-layer bias, length `h`.
    pub b1: Vec<f64>,
    /// Second-layer weights, `h x d`.
    pub w2: Matrix,
    /// Second-layer bias, length `d`.
    pub b2: Vec<f64>,
}

/// Gradients of a scalar loss with respect to one expert's parameters.
#[derive(Clone, Debug)]
pub struct ExpertGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl MlpExpert {
    /// All-zero expert with the given dims.
    pub fn zeros(d: usize, h: usize) -> MlpExpert {
        MlpExpert {
            w1: Matrix::zeros(d, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, d),
            b2: vec![0.0; d],
        }
    }

    /// Expert that computes the exact identity map: `relu(z) - relu(-z) = z`.
    /// Uses hidden width `2d`. Handy for constructing layers with known outputs.
    pub fn identity(d: usize) -> MlpExpert {
        let mut e = MlpExpert::zeros(d, 2 * d);
        for i in 0..d {
            e.w1.set(i, i, 1.0);
            e.w1.set(i, d + i, -1.0);
            e.w2.set(i, i, 1.0);
            e.w2.set(d + i, i, -1.0);
        }
        e
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    /// `d*h + h + h*d + d` parameters.
    pub fn parameter_count(&self) -> usize {
        let d = self.input_dim();
        let h = self.hidden_dim();
        d * h + h + h * d + d
    }

    /// Apply the expert to one row vector of length `d`.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let zm = Matrix::from_vec(1, z.len(), z.to_vec()).map_err(|_| Error::LengthMismatch {
            op: "expert_forward",
            expected: self.input_dim(),
            got: z.len(),
        })?;
        Ok(self.forward_batch(&zm)?.data().to_vec())
    }

    /// Apply the expert to every row of `z` (shape `s x d`) at once.
    pub fn forward_batch(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "expert_forward",
                left: z.shape(),
                right: self.w1.shape(),
            });
        }
        let mut hidden = matmul(z, &self.w1)?;
        for r in 0..hidden.rows() {
            let row = hidden.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b1) {
                // ReLU; the derivative convention at exactly 0 is handled in backward
                *v = (*v + b).max(0.0);
            }
        }
        let mut out = matmul(&hidden, &self.w2)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b2) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Exact reverse-mode gradients of `forward` at `z` for upstream
    /// `dL/doutput`. Returns `(dL/dparams, dL/dz)`. The ReLU subgradient at
    /// exactly 0 is taken to be 0.
    pub fn backward(&self, z: &[f64], upstream: &[f64]) -> Result<(ExpertGrads, Vec<f64>)> {
        let d = self.input_dim();
        let h = self.hidden_dim();
        if z.len() != d {
            return Err(Error::LengthMismatch {
                op: "expert_backward",
                expected: d,
                got: z.len(),
            });
        }
        if upstream.len() != d {
            return Err(Error::LengthMismatch {
                op: "expert_backward upstream",
                expected: d,
                got: upstream.len(),
            });
        }

        // Recompute pre-activations a = z W1 + b1 and r = relu(a).
        let mut a = self.b1.clone();
        for (i, &zi) in z.iter().enumerate() {
            let w1_row = self.w1.row(i);
            for (acc, w) in a.iter_mut().zip(w1_row) {
                *acc += zi * w;
            }
        }
        let r: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();

        // Output layer: out_k = sum_j W2[j,k] r_j + b2_k
        let mut grads = ExpertGrads {
            w1: Matrix::zeros(d, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, d),
            b2: upstream.to_vec(),
        };
        for j in 0..h {
            let w2_row = self.w2.row(j);
            let gw2_row = grads.w2.row_mut(j);
            let mut dr = 0.0;
            for ((g, u), w) in gw2_row.iter_mut().zip(upstream).zip(w2_row) {
                *g = r[j] * u;
                dr += w * u;
            }
            // ReLU gate: pass gradient only where a_j > 0
            grads.b1[j] = if a[j] > 0.0 { dr } else { 0.0 };
        }

        // First layer: a_j = sum_i W1[i,j] z_i + b1_j; da = grads.b1
        let mut dz = vec![0.0; d];
        for i in 0..d {
            let w1_row = self.w1.row(i);
            let gw1_row = grads.w1.row_mut(i);
            let mut acc = 0.0;
            for ((g, da), w) in gw1_row.iter_mut().zip(&grads.b1).zip(w1_row) {
                *g = z[i] * da;
                acc += w * da;
            }
            dz[i] = acc;
        }
        Ok((grads, dz))
    }
}

/// `n` identically shaped experts under a shared hidden-unit budget.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank {
    pub experts: Vec<MlpExpert>,
    /// Total hidden-unit budget H; each expert gets width `max(1, H / n)`.
    pub hidden_budget: usize,
}

impl ExpertBank {
    pub fn n(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.experts[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.experts[0].hidden_dim()
    }

    /// Total parameter count over all experts, biases included.
    pub fn parameter_count(&self) -> usize {
        self.experts.iter().map(MlpExpert::parameter_count).sum()
    }
}

/// Per-expert hidden width for a bank of `n` experts with budget `H`.
pub fn hidden_width(hidden_budget: usize, n: usize) -> usize {
    (hidden_budget / n).max(1)
}

/// Build a bank of `n` experts on `R^d` with total hidden budget `H`.
///
/// Weights are He-initialized (std `sqrt(2 / fan_in)`); biases start at zero.
/// Draws come from `init_stream` in expert order, W1 then W2, so a bank is
/// fully determined by `(d, n, H, seed, stream_name)`.
pub fn build_bank(
    d: usize,
    n: usize,
    hidden_budget: usize,
    init_stream: &mut RngStream,
) -> Result<ExpertBank> {
    if d < 1 || n < 1 || hidden_budget < 1 {
        return Err(Error::InvalidConfig {
            message: format!("build_bank requires d, n, H >= 1 (got d={d}, n={n}, H={hidden_budget})"),
        });
    }
    let h = hidden_width(hidden_budget, n);
    let w1_std = (2.0 / d as f64).sqrt();
    let w2_std = (2.0 / h as f64).sqrt();
    let mut experts = Vec::with_capacity(n);
    for _ in 0..n {
        let w1 = sample_gaussian(init_stream, d, h, 0.0, w1_std)?;
        let w2 = sample_gaussian(init_stream, h, d, 0.0, w2_std)?;
        experts.push(MlpExpert {
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; d],
        });
    }
    Ok(ExpertBank {
        experts,
        hidden_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, "experts-test")
    }

    #[test]
    fn bank_widths_follow_budget() {
        // H = 10d with d=5: n=10 experts of width 5
        let bank = build_bank(5, 10, 50, &mut stream(0)).unwrap();
        assert_eq!(bank.n(), 10);
        assert!(bank.experts.iter().all(|e| e.hidden_dim() == 5));

        // the MNIST geometry: d=196, n=4, H=784 -> width 196
        let bank = build_bank(196, 4, 784, &mut stream(0)).unwrap();
        assert_eq!(bank.hidden_dim(), 196);
        let per_expert = 196 * 196 * 2 + 196 + 196;
        assert_eq!(bank.experts[0].parameter_count(), per_expert);
    }

    #[test]
    fn bank_width_floors_at_one() {
        let bank = build_bank(3, 7, 4, &mut stream(1)).unwrap();
        assert_eq!(bank.hidden_dim(), 1);
    }

    #[test]
    fn bank_rejects_degenerate_dims() {
        assert!(build_bank(0, 1, 1, &mut stream(1)).is_err());
        assert!(build_bank(1, 0, 1, &mut stream(1)).is_err());
        assert!(build_bank(1, 1, 0, &mut stream(1)).is_err());
    }

    #[test]
    fn parameter_count_formula() {
        // total = n (2dh + h + d) = 2dH + H + nd when n divides H;
        // the weight-only part 2dH is invariant in n, the bias part nd is not.
        let d = 5;
        let big_h = 10 * d;
        let mut weight_only = Vec::new();
        for n in [1usize, 2, 5, 10] {
            let bank = build_bank(d, n, big_h, &mut stream(2)).unwrap();
            let h = big_h / n;
            assert_eq!(bank.parameter_count(), 2 * d * big_h + big_h + n * d);
            weight_only.push(bank.parameter_count() - big_h - n * d);
            assert_eq!(h, bank.hidden_dim());
        }
        assert!(weight_only.iter().all(|&w| w == 2 * d * big_h));
    }

    #[test]
    fn tiny_expert_param_count() {
        let e = MlpExpert::zeros(1, 1);
        assert_eq!(e.parameter_count(), 4);
    }

    #[test]
    fn forward_zero_expert_is_zero() {
        let e = MlpExpert::zeros(3, 2);
        assert_eq!(e.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn forward_relu_clips() {
        // d=h=1, W1=W2=[1], biases 0: f(z) = relu(z)
        let mut e = MlpExpert::zeros(1, 1);
        e.w1.set(0, 0, 1.0);
        e.w2.set(0, 0, 1.0);
        assert_eq!(e.forward(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(e.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_rejects_bad_length() {
        let e = MlpExpert::zeros(3, 2);
        assert!(e.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_expert_is_exact() {
        let e = MlpExpert::identity(4);
        let z = [1.5, -2.25, 0.0, 7.0];
        assert_eq!(e.forward(&z).unwrap(), z.to_vec());
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let bank = build_bank(3, 1, 6, &mut stream(3)).unwrap();
        let (g, dz) = bank.experts[0]
            .backward(&[0.3, -0.4, 0.9], &[0.0, 0.0, 0.0])
            .unwrap();
        assert!(g.w1.data().iter().all(|&v| v == 0.0));
        assert!(g.w2.data().iter().all(|&v| v == 0.0));
        assert!(g.b1.iter().chain(&g.b2).all(|&v| v == 0.0));
        assert!(dz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_region_chain_rule() {
        // d=h=1 with positive pre-activation: dL/dz = W1 * W2 * upstream
        let mut e = MlpExpert::zeros(1, 1);
        e.w1.set(0, 0, 0.7);
        e.w2.set(0, 0, -1.3);
        let (_, dz) = e.backward(&[2.0], &[0.5]).unwrap();
        assert!((dz[0] - 0.7 * (-1.3) * 0.5).abs() < 1e-15);
    }

    #[test]
    fn positive_homogeneity_with_zero_biases() {
        let mut s = stream(4);
        let bank = build_bank(3, 2, 8, &mut s).unwrap();
        let e = &bank.experts[0];
        let z = [0.4, -1.1, 0.6];
        let t = 3.5;
        let scaled: Vec<f64> = z.iter().map(|v| v * t).collect();
        let base = e.forward(&z).unwrap();
        let out = e.forward(&scaled).unwrap();
        for (o, b) in out.iter().zip(&base) {
            assert!((o - t * b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_forward_matches_per_row() {
        let mut s = stream(5);
        let bank = build_bank(4, 1, 8, &mut s).unwrap();
        let e = &bank.experts[0];
        let z = sample_gaussian(&mut s, 6, 4, 0.0, 1.0).unwrap();
        let batch = e.forward_batch(&z).unwrap();
        for r in 0..6 {
            let single = e.forward(z.row(r)).unwrap();
            assert_eq!(batch.row(r), single.as_slice());
        }
    }
}
