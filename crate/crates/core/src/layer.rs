//! The soft mixture-of-experts layer: dispatch weights, combine weights,
//! full and subset-masked forward passes, and exact gradients.
//!
//! For input `X` (m tokens x d dims) and router `Phi` (d x n):
//!
//! - dispatch `D(X)` = column softmax of `X Phi` (each column sums to one),
//! - combine `C(X)` = row softmax of `X Phi` (each row sums to one),
//! - each expert `j` sees the single mixed token `(D(X)^T X)_j`,
//! - the layer output is `C(X) * Ytilde(X)` where row `j` of `Ytilde` is the
//!   output of expert `j`.
//!
//! One slot per expert throughout; there is no slot dimension in the data
//! model. A masked forward zeroes the `Ytilde` rows of unselected experts
//! without renormalizing `C`, and never evaluates the skipped experts.

use crate::error::{Error, Result};
use crate::experts::{build_bank, ExpertBank, ExpertGrads};
use crate::selection::SubsetMask;
use crate::tensor::{
    matmul, sample_gaussian, softmax_over_columns_per_row, softmax_over_rows_per_column, Matrix,
    RngStream,
};

/// Router parameters `Phi`, one column of logit weights per expert.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterParams {
    /// `d x n`.
    pub phi: Matrix,
}

/// A soft MoE layer: router plus expert bank.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMoELayer {
    pub router: RouterParams,
    pub bank: ExpertBank,
}

/// Everything a forward pass computes, retained for backward.
#[derive(Clone, Debug)]
pub struct LayerActivations {
    /// The input `X` the activations were computed from, `m x d`.
    pub input: Matrix,
    /// `D(X)`, `m x n`; every column sums to one.
    pub dispatch: Matrix,
    /// `C(X)`, `m x n`; every row sums to one.
    pub combine: Matrix,
    /// `D(X)^T X`, `n x d`; row `j` is expert `j`'s mixed input token.
    pub expert_inputs: Matrix,
    /// `Ytilde(X)` (`n x d`), or `Yhat(X)` with zeroed rows under a mask.
    pub expert_outputs: Matrix,
    /// `C(X) * expert_outputs`, `m x d`.
    pub output: Matrix,
    /// The expert subset that was evaluated, when this came from a masked pass.
    pub mask: Option<SubsetMask>,
}

/// Gradients of a scalar loss with respect to one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub phi: Matrix,
    pub experts: Vec<ExpertGrads>,
}

impl SoftMoELayer {
    /// Token dimension `d`.
    pub fn d(&self) -> usize {
        self.router.phi.rows()
    }

    /// Expert count `n`.
    pub fn n(&self) -> usize {
        self.router.phi.cols()
    }

    /// Build a layer with `Phi ~ N(0, (0.5)^2 / d)` and a He-initialized
    /// bank, drawn from `stream` in a fixed order (phi first, then the bank).
    /// The router starts soft: logits near zero mean near-uniform mixing,
    /// which trains noticeably faster than unit-scale logits.
    pub fn init(
        d: usize,
        n: usize,
        hidden_budget: usize,
        stream: &mut RngStream,
    ) -> Result<SoftMoELayer> {
        let phi = sample_gaussian(stream, d, n, 0.0, 0.5 / (d as f64).sqrt())?;
        let bank = build_bank(d, n, hidden_budget, stream)?;
        Ok(SoftMoELayer {
            router: RouterParams { phi },
            bank,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d() {
            return Err(Error::ShapeMismatch {
                op: "soft_moe_forward",
                left: x.shape(),
                right: self.router.phi.shape(),
            });
        }
        Ok(())
    }

    /// `D(X)`: column softmax of `X Phi`.
    pub fn compute_dispatch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        softmax_over_rows_per_column(&matmul(x, &self.router.phi)?)
    }

    /// `C(X)`: row softmax of `X Phi`.
    pub fn compute_combine(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        softmax_over_columns_per_row(&matmul(x, &self.router.phi)?)
    }

    /// Full forward pass; retains all intermediates.
    pub fn forward(&self, x: &Matrix) -> Result<LayerActivations> {
        self.forward_impl(x, None)
    }

    /// Forward pass evaluating only the experts in `mask`; the `Ytilde` rows
    /// of unselected experts are exact zeros and those experts are never run.
    /// Combine weights are used as-is, with no renormalization over the mask.
    pub fn masked_forward(&self, x: &Matrix, mask: &SubsetMask) -> Result<LayerActivations> {
        mask.validate_for(self.n())?;
        self.forward_impl(x, Some(mask))
    }

    fn forward_impl(&self, x: &Matrix, mask: Option<&SubsetMask>) -> Result<LayerActivations> {
        self.check_input(x)?;
        let logits = matmul(x, &self.router.phi)?;
        let dispatch = softmax_over_rows_per_column(&logits)?;
        let combine = softmax_over_columns_per_row(&logits)?;
        let expert_inputs = matmul(&dispatch.transposed(), x)?;

        let n = self.n();
        let d = self.d();
        let mut expert_outputs = Matrix::zeros(n, d);
        for j in 0..n {
            if mask.is_some_and(|m| !m.contains(j)) {
                continue;
            }
            let out = self.bank.experts[j].forward(expert_inputs.row(j))?;
            expert_outputs.row_mut(j).copy_from_slice(&out);
        }

        let output = matmul(&combine, &expert_outputs)?;
        Ok(LayerActivations {
            input: x.clone(),
            dispatch,
            combine,
            expert_inputs,
            expert_outputs,
            output,
            mask: mask.cloned(),
        })
    }

    /// Exact reverse-mode gradients through `C * Ytilde`, every expert,
    /// `D^T X`, and both softmaxes, into `Phi`, the bank, and `X`.
    ///
    /// `activations` must come from a full forward pass on this layer.
    pub fn backward(
        &self,
        activations: &LayerActivations,
        upstream: &Matrix,
    ) -> Result<(LayerGrads, Matrix)> {
        let (m, d) = activations.input.shape();
        let n = self.n();
        if d != self.d()
            || activations.dispatch.shape() != (m, n)
            || activations.expert_outputs.shape() != (n, d)
        {
            return Err(Error::ShapeMismatch {
                op: "soft_moe_backward (stale activations)",
                left: activations.input.shape(),
                right: self.router.phi.shape(),
            });
        }
        if upstream.shape() != (m, d) {
            return Err(Error::ShapeMismatch {
                op: "soft_moe_backward upstream",
                left: upstream.shape(),
                right: (m, d),
            });
        }
        if let Some(mask) = &activations.mask {
            if mask.k() != n {
                return Err(Error::InvalidConfig {
                    message: "backward requires activations from an unmasked forward".to_string(),
                });
            }
        }

        // Output = C * Ytilde
        let d_combine = matmul(upstream, &activations.expert_outputs.transposed())?;
        let d_expert_outputs = matmul(&activations.combine.transposed(), upstream)?;

        // Through each expert
        let mut expert_grads = Vec::with_capacity(n);
        let mut d_expert_inputs = Matrix::zeros(n, d);
        for j in 0..n {
            let (g, dz) = self.bank.experts[j]
                .backward(activations.expert_inputs.row(j), d_expert_outputs.row(j))?;
            expert_grads.push(g);
            d_expert_inputs.row_mut(j).copy_from_slice(&dz);
        }

        // Z = D^T X: dD = X dZ^T, dX += D dZ
        let d_dispatch = matmul(&activations.input, &d_expert_inputs.transposed())?;
        let mut d_input = matmul(&activations.dispatch, &d_expert_inputs)?;

        // Both softmaxes share the logits L = X Phi
        let mut d_logits = column_softmax_backward(&activations.dispatch, &d_dispatch);
        let d_logits_row = row_softmax_backward(&activations.combine, &d_combine);
        d_logits.add_scaled(&d_logits_row, 1.0)?;

        // L = X Phi
        let d_phi = matmul(&activations.input.transposed(), &d_logits)?;
        d_input.add_scaled(&matmul(&d_logits, &self.router.phi.transposed())?, 1.0)?;

        Ok((
            LayerGrads {
                phi: d_phi,
                experts: expert_grads,
            },
            d_input,
        ))
    }
}

/// Backprop through a per-column softmax `s = softmax(l)`:
/// `dl_ij = s_ij * (ds_ij - sum_i' ds_i'j s_i'j)`.
fn column_softmax_backward(s: &Matrix, ds: &Matrix) -> Matrix {
    let (m, n) = s.shape();
    let mut out = Matrix::zeros(m, n);
    for j in 0..n {
        let mut dot = 0.0;
        for i in 0..m {
            dot += ds.get(i, j) * s.get(i, j);
        }
        for i in 0..m {
            out.set(i, j, s.get(i, j) * (ds.get(i, j) - dot));
        }
    }
    out
}

/// Backprop through a per-row softmax.
fn row_softmax_backward(s: &Matrix, ds: &Matrix) -> Matrix {
    let (m, n) = s.shape();
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let dot: f64 = ds.row(i).iter().zip(s.row(i)).map(|(a, b)| a * b).sum();
        let out_row = out.row_mut(i);
        for ((o, sv), dv) in out_row.iter_mut().zip(s.row(i)).zip(ds.row(i)) {
            *o = sv * (dv - dot);
        }
    }
    out
}
