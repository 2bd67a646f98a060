//! Prediction heads, losses, Adam, and the training loops.
//!
//! A [`Model`] is a stack of soft MoE layers followed by either a
//! non-trainable summation head (scalar regression) or a linear head over the
//! flattened tokens (classification). Parameters flatten into a single
//! canonical vector (layer order: phi, then each expert's W1/b1/W2/b2; head
//! last), which is what the optimizer, the gradient checks, and the
//! checkpoint format all operate on.

use crate::datasets::{gen_norm_batch, NormTaskConfig};
use crate::error::{Error, Result};
use crate::layer::{LayerActivations, SoftMoELayer};
use crate::selection::SubsetMask;
use crate::tensor::{sample_gaussian, Matrix, RngStream};

/// Linear head: logits = `W^T flatten(Y) + b` over the row-major flattened
/// `m x d` layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    /// `(m*d) x classes`.
    pub w: Matrix,
    /// Length `classes`.
    pub b: Vec<f64>,
}

/// Prediction head. The summation head is stateless and non-trainable.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// Sum of all output entries; a scalar prediction.
    Summation,
    Linear(LinearHead),
}

/// Output of a head: a scalar or a logit vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Scalar(f64),
    Logits(Vec<f64>),
}

impl Prediction {
    /// Argmax class of a logit prediction; ties break toward the smaller index.
    pub fn argmax_class(&self) -> Result<usize> {
        argmax_prediction(self)
    }
}

/// Head choice in a model config.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadKind {
    Summation,
    Linear { classes: usize },
}

/// Hyperparameters that determine a model's architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Tokens per input, `m`.
    pub tokens: usize,
    /// Token dimension, `d`.
    pub token_dim: usize,
    /// Number of stacked MoE layers.
    pub layers: usize,
    /// Experts per layer, `n`.
    pub experts: usize,
    /// Total hidden-unit budget `H` per layer.
    pub hidden_budget: usize,
    pub head: HeadKind,
    /// Initial value for every expert output-bias coordinate. Since combine
    /// rows sum to one, the model's initial output entries equal this value
    /// exactly; regression tasks set it to `E[target] / (m * d)` so the
    /// first prediction is already the target mean.
    pub output_bias_init: f64,
}

/// Expert second-layer weights start at this fraction of their He scale.
/// Small initial outputs mean early optimizer steps fit signal instead of
/// unlearning init noise.
const W2_INIT_SCALE: f64 = 0.1;

/// A stack of soft MoE layers plus a prediction head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layers: Vec<SoftMoELayer>,
    pub head: Head,
    /// Tokens per input, `m`.
    pub tokens: usize,
    /// Token dimension, `d`.
    pub token_dim: usize,
}

/// Forward intermediates for a whole model.
#[derive(Clone, Debug)]
pub struct ModelActivations {
    pub layer_acts: Vec<LayerActivations>,
    pub prediction: Prediction,
}

impl Model {
    /// Initialize per `cfg`, drawing layer parameters and then the head from
    /// `stream` in a fixed order.
    pub fn init(cfg: &ModelConfig, stream: &mut RngStream) -> Result<Model> {
        if cfg.layers < 1 {
            return Err(Error::InvalidConfig {
                message: "model needs at least one layer".to_string(),
            });
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let mut layer = SoftMoELayer::init(
                cfg.token_dim,
                cfg.experts,
                cfg.hidden_budget,
                stream,
            )?;
            for e in &mut layer.bank.experts {
                e.w2 = e.w2.scaled(W2_INIT_SCALE);
                for b in &mut e.b2 {
                    *b = cfg.output_bias_init;
                }
            }
            layers.push(layer);
        }
        let head = match cfg.head {
            HeadKind::Summation => Head::Summation,
            HeadKind::Linear { classes } => {
                let flat = cfg.tokens * cfg.token_dim;
                let w = sample_gaussian(stream, flat, classes, 0.0, 1.0 / (flat as f64).sqrt())?;
                Head::Linear(LinearHead {
                    w,
                    b: vec![0.0; classes],
                })
            }
        };
        Ok(Model {
            layers,
            head,
            tokens: cfg.tokens,
            token_dim: cfg.token_dim,
        })
    }

    /// Experts per layer.
    pub fn n(&self) -> usize {
        self.layers[0].n()
    }

    /// Recover the architecture config of this model. `output_bias_init`
    /// only matters at init time and is reported as zero.
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            tokens: self.tokens,
            token_dim: self.token_dim,
            layers: self.layers.len(),
            experts: self.n(),
            hidden_budget: self.layers[0].bank.hidden_budget,
            head: match &self.head {
                Head::Summation => HeadKind::Summation,
                Head::Linear(h) => HeadKind::Linear { classes: h.b.len() },
            },
            output_bias_init: 0.0,
        }
    }

    /// Full forward pass through every layer and the head.
    pub fn forward(&self, x: &Matrix) -> Result<ModelActivations> {
        let mut layer_acts = Vec::with_capacity(self.layers.len());
        let mut tokens = x.clone();
        for layer in &self.layers {
            let acts = layer.forward(&tokens)?;
            tokens = acts.output.clone();
            layer_acts.push(acts);
        }
        let prediction = head_forward(&self.head, &tokens)?;
        Ok(ModelActivations {
            layer_acts,
            prediction,
        })
    }

    /// Forward with the same expert subset applied to every layer.
    pub fn forward_masked(&self, x: &Matrix, mask: &SubsetMask) -> Result<Prediction> {
        let mut tokens = x.clone();
        for layer in &self.layers {
            tokens = layer.masked_forward(&tokens, mask)?.output;
        }
        head_forward(&self.head, &tokens)
    }

    /// Argmax class of a linear-head model.
    pub fn predict(&self, x: &Matrix) -> Result<usize> {
        let acts = self.forward(x)?;
        argmax_prediction(&acts.prediction)
    }

    /// Argmax class using only the experts in `mask`.
    pub fn predict_masked(&self, x: &Matrix, mask: &SubsetMask) -> Result<usize> {
        argmax_prediction(&self.forward_masked(x, mask)?)
    }

    /// Total trainable parameter count (summation heads contribute nothing).
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for layer in &self.layers {
            count += layer.router.phi.data().len();
            count += layer.bank.parameter_count();
        }
        if let Head::Linear(h) = &self.head {
            count += h.w.data().len() + h.b.len();
        }
        count
    }

    /// Flatten all parameters in canonical order.
    pub fn collect_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.router.phi.data());
            for e in &layer.bank.experts {
                out.extend_from_slice(e.w1.data());
                out.extend_from_slice(&e.b1);
                out.extend_from_slice(e.w2.data());
                out.extend_from_slice(&e.b2);
            }
        }
        if let Head::Linear(h) = &self.head {
            out.extend_from_slice(h.w.data());
            out.extend_from_slice(&h.b);
        }
        out
    }

    /// Overwrite all parameters from a canonical flat vector.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                op: "Model::set_params",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for layer in &mut self.layers {
            take(layer.router.phi.data_mut());
            for e in &mut layer.bank.experts {
                take(e.w1.data_mut());
                take(&mut e.b1);
                take(e.w2.data_mut());
                take(&mut e.b2);
            }
        }
        if let Head::Linear(h) = &mut self.head {
            take(h.w.data_mut());
            take(&mut h.b);
        }
        Ok(())
    }

    /// Reverse-mode gradients of a scalar loss through the head and every
    /// layer, given `dL/dprediction`. Returns the flat gradient vector
    /// (canonical order) and `dL/dX`.
    pub fn backward(
        &self,
        acts: &ModelActivations,
        dpred: &Prediction,
    ) -> Result<(Vec<f64>, Matrix)> {
        let last_tokens = &acts
            .layer_acts
            .last()
            .expect("model has at least one layer")
            .output;
        let (head_grads, mut upstream) = head_backward(&self.head, last_tokens, dpred)?;

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (layer, l_acts) in self.layers.iter().zip(&acts.layer_acts).rev() {
            let (grads, dx) = layer.backward(l_acts, &upstream)?;
            layer_grads.push(grads);
            upstream = dx;
        }
        layer_grads.reverse();

        let mut flat = Vec::with_capacity(self.param_count());
        for g in &layer_grads {
            flat.extend_from_slice(g.phi.data());
            for e in &g.experts {
                flat.extend_from_slice(e.w1.data());
                flat.extend_from_slice(&e.b1);
                flat.extend_from_slice(e.w2.data());
                flat.extend_from_slice(&e.b2);
            }
        }
        if let Some((hw, hb)) = head_grads {
            flat.extend_from_slice(hw.data());
            flat.extend_from_slice(&hb);
        }
        Ok((flat, upstream))
    }
}

fn argmax_prediction(pred: &Prediction) -> Result<usize> {
    match pred {
        Prediction::Logits(logits) => Ok(logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits").then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("nonempty logits")),
        Prediction::Scalar(_) => Err(Error::InvalidConfig {
            message: "class prediction requires a linear head".to_string(),
        }),
    }
}

/// Apply a head to the `m x d` layer output.
pub fn head_forward(head: &Head, y: &Matrix) -> Result<Prediction> {
    match head {
        Head::Summation => Ok(Prediction::Scalar(y.data().iter().sum())),
        Head::Linear(h) => {
            let flat_len = y.rows() * y.cols();
            if flat_len != h.w.rows() {
                return Err(Error::LengthMismatch {
                    op: "head_forward",
                    expected: h.w.rows(),
                    got: flat_len,
                });
            }
            let mut logits = h.b.clone();
            for (q, &v) in y.data().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (l, w) in logits.iter_mut().zip(h.w.row(q)) {
                    *l += v * w;
                }
            }
            Ok(Prediction::Logits(logits))
        }
    }
}

/// Weight and bias gradients of a linear head; `None` for the summation head.
type HeadGrads = Option<(Matrix, Vec<f64>)>;

/// Gradients of a head: `(head parameter grads, dL/dY)`.
fn head_backward(head: &Head, y: &Matrix, dpred: &Prediction) -> Result<(HeadGrads, Matrix)> {
    match (head, dpred) {
        (Head::Summation, Prediction::Scalar(g)) => {
            let mut dy = Matrix::zeros(y.rows(), y.cols());
            for v in dy.data_mut() {
                *v = *g;
            }
            Ok((None, dy))
        }
        (Head::Linear(h), Prediction::Logits(dlogits)) => {
            if dlogits.len() != h.b.len() {
                return Err(Error::LengthMismatch {
                    op: "head_backward",
                    expected: h.b.len(),
                    got: dlogits.len(),
                });
            }
            let mut dw = Matrix::zeros(h.w.rows(), h.w.cols());
            let mut dy = Matrix::zeros(y.rows(), y.cols());
            for (q, &v) in y.data().iter().enumerate() {
                let dw_row = dw.row_mut(q);
                let w_row = h.w.row(q);
                let mut acc = 0.0;
                for ((g, dl), w) in dw_row.iter_mut().zip(dlogits).zip(w_row) {
                    *g = v * dl;
                    acc += w * dl;
                }
                dy.data_mut()[q] = acc;
            }
            Ok((Some((dw, dlogits.clone())), dy))
        }
        _ => Err(Error::InvalidConfig {
            message: "head/prediction kind mismatch in backward".to_string(),
        }),
    }
}

/// Squared error `(pred - target)^2` and its gradient in `pred`.
pub fn mse_loss(pred: f64, target: f64) -> (f64, f64) {
    let diff = pred - target;
    (diff * diff, 2.0 * diff)
}

/// Stable cross entropy `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Adam state over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Defaults: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(param_count: usize, learning_rate: f64) -> AdamState {
        AdamState {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place on `params`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(Error::LengthMismatch {
            op: "adam_step",
            expected: state.first_moment.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// What a model trains on.
#[derive(Clone, Debug)]
pub enum TrainTask {
    /// Fresh batch per epoch; summation head; MSE against the norm target.
    NormRegression(NormTaskConfig),
    /// Fixed labeled sets; linear head; cross entropy.
    Classification {
        train: Vec<(Matrix, usize)>,
        test: Vec<(Matrix, usize)>,
    },
}

/// Loop hyperparameters. `batch_size` is the classification mini-batch size;
/// the norm-regression task carries its own per-epoch batch size.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop at the first epoch whose test accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

/// Per-epoch entry of a training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

/// Result of a training run.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_accuracy)
    }
}

/// Supervision target for one example.
#[derive(Clone, Copy, Debug)]
enum Target {
    Scalar(f64),
    Class(usize),
}

fn loss_and_dpred(pred: &Prediction, target: Target) -> Result<(f64, Prediction)> {
    match (pred, target) {
        (Prediction::Scalar(p), Target::Scalar(t)) => {
            let (loss, dp) = mse_loss(*p, t);
            Ok((loss, Prediction::Scalar(dp)))
        }
        (Prediction::Logits(logits), Target::Class(label)) => {
            let (loss, dl) = cross_entropy_loss(logits, label)?;
            Ok((loss, Prediction::Logits(dl)))
        }
        _ => Err(Error::InvalidConfig {
            message: "head kind does not match the training task".to_string(),
        }),
    }
}

/// Mean loss and mean flat gradient over a batch, accumulated in index order.
fn accumulate_batch(
    model: &Model,
    inputs: &[&Matrix],
    targets: &[Target],
) -> Result<(f64, Vec<f64>)> {
    let mut total_loss = 0.0;
    let mut grad_sum = vec![0.0; model.param_count()];
    for (x, &target) in inputs.iter().zip(targets) {
        let acts = model.forward(x)?;
        let (loss, dpred) = loss_and_dpred(&acts.prediction, target)?;
        let (grad, _) = model.backward(&acts, &dpred)?;
        total_loss += loss;
        for (a, g) in grad_sum.iter_mut().zip(&grad) {
            *a += g;
        }
    }
    let scale = 1.0 / inputs.len() as f64;
    for g in &mut grad_sum {
        *g *= scale;
    }
    Ok((total_loss * scale, grad_sum))
}

/// Train `model` in place. Deterministic given `(stream.seed, stream.name)`:
/// the data stream and each epoch's shuffle stream are forked from `stream`
/// by name, and batch reduction order is fixed.
pub fn train_model(
    model: &mut Model,
    task: &TrainTask,
    cfg: &TrainConfig,
    stream: &RngStream,
) -> Result<TrainingTrace> {
    let mut trace = TrainingTrace::default();
    let mut adam = AdamState::new(model.param_count(), cfg.learning_rate);

    match task {
        TrainTask::NormRegression(norm_cfg) => {
            // one freshly generated batch per epoch
            let mut data_stream = stream.fork("norm-data");
            for epoch in 0..cfg.epochs {
                let (inputs, targets) = gen_norm_batch(norm_cfg, &mut data_stream)?;
                let refs: Vec<&Matrix> = inputs.iter().collect();
                let targets: Vec<Target> = targets.iter().map(|&t| Target::Scalar(t)).collect();
                let (loss, grads) = accumulate_batch(model, &refs, &targets)?;
                let mut params = model.collect_params();
                adam_step(&mut adam, &mut params, &grads)?;
                model.set_params(&params)?;
                trace.epochs.push(EpochStats {
                    epoch,
                    train_loss: loss,
                    test_accuracy: None,
                });
            }
        }
        TrainTask::Classification { train, test } => {
            if train.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            for epoch in 0..cfg.epochs {
                let mut shuffle_stream = stream.fork(&format!("shuffle-{epoch}"));
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut shuffle_stream);

                let mut epoch_loss = 0.0;
                for chunk in order.chunks(cfg.batch_size.max(1)) {
                    let refs: Vec<&Matrix> = chunk.iter().map(|&i| &train[i].0).collect();
                    let targets: Vec<Target> =
                        chunk.iter().map(|&i| Target::Class(train[i].1)).collect();
                    let (loss, grads) = accumulate_batch(model, &refs, &targets)?;
                    epoch_loss += loss * chunk.len() as f64;
                    let mut params = model.collect_params();
                    adam_step(&mut adam, &mut params, &grads)?;
                    model.set_params(&params)?;
                }
                let train_loss = epoch_loss / train.len() as f64;
                let test_accuracy = if test.is_empty() {
                    None
                } else {
                    Some(classification_accuracy(model, test)?)
                };
                trace.epochs.push(EpochStats {
                    epoch,
                    train_loss,
                    test_accuracy,
                });
                if let (Some(threshold), Some(acc)) = (cfg.stop_at_accuracy, test_accuracy) {
                    if acc >= threshold {
                        trace.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    Ok(trace)
}

/// Fraction of examples whose full-model prediction matches the label.
pub fn classification_accuracy(model: &Model, data: &[(Matrix, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, label) in data {
        if model.predict(x)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summation_head_sums_entries() {
        let y = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            head_forward(&Head::Summation, &y).unwrap(),
            Prediction::Scalar(10.0)
        );
        assert_eq!(
            head_forward(&Head::Summation, &Matrix::zeros(3, 3)).unwrap(),
            Prediction::Scalar(0.0)
        );
    }

    #[test]
    fn linear_head_zero_input_gives_bias() {
        let head = Head::Linear(LinearHead {
            w: Matrix::zeros(4, 3),
            b: vec![0.5, -1.0, 2.0],
        });
        let pred = head_forward(&head, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(pred, Prediction::Logits(vec![0.5, -1.0, 2.0]));
    }

    #[test]
    fn linear_head_rejects_wrong_size() {
        let head = Head::Linear(LinearHead {
            w: Matrix::zeros(4, 3),
            b: vec![0.0; 3],
        });
        assert!(head_forward(&head, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(3.0, 3.0), (0.0, 0.0));
        assert_eq!(mse_loss(1.0, 3.0), (4.0, -4.0));
        // symmetric in the loss, antisymmetric in the gradient
        assert_eq!(mse_loss(1.0, 3.0).0, mse_loss(3.0, 1.0).0);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, _) = cross_entropy_loss(&[0.0, 0.0], 0).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let (loss, grad) = cross_entropy_loss(&[10.0, -10.0], 0).unwrap();
        assert!(loss > 0.0 && loss < 1e-8, "loss {loss}");
        assert!(grad[0].abs() < 1e-8);
        assert!(grad[1].abs() < 1e-8);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (_, grad) = cross_entropy_loss(&[1.5, -0.3, 0.8, 2.2], 2).unwrap();
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy_loss(&[0.0, 0.0], 2),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut state = AdamState::new(3, 1e-3);
        let mut params = vec![0.5, -1.0, 2.0];
        for _ in 0..5 {
            adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, vec![0.5, -1.0, 2.0]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn adam_first_step_hand_value() {
        // theta = 0, g = 1, lr = 1e-3: bias correction makes m_hat = v_hat = 1,
        // so theta becomes -lr / (1 + eps) = -9.9999999e-4
        let mut state = AdamState::new(1, 1e-3);
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15, "got {}", params[0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut state = AdamState::new(3, 1e-3);
        let mut params = vec![0.0, 0.0, 0.0];
        adam_step(&mut state, &mut params, &[7.0, -0.02, 1e3]).unwrap();
        for (p, g) in params.iter().zip([7.0_f64, -0.02, 1e3]) {
            assert!((p + 1e-3 * g.signum()).abs() < 1e-9, "p={p} g={g}");
        }
    }

    #[test]
    fn adam_rejects_mismatched_grads() {
        let mut state = AdamState::new(2, 1e-3);
        let mut params = vec![0.0, 0.0];
        assert!(adam_step(&mut state, &mut params, &[1.0]).is_err());
    }

    #[test]
    fn params_roundtrip_canonical_order() {
        let mut stream = RngStream::new(20, "params");
        let cfg = ModelConfig {
            tokens: 3,
            token_dim: 2,
            layers: 2,
            experts: 3,
            hidden_budget: 6,
            head: HeadKind::Linear { classes: 4 },
            output_bias_init: 0.0,
        };
        let mut model = Model::init(&cfg, &mut stream).unwrap();
        let flat = model.collect_params();
        assert_eq!(flat.len(), model.param_count());
        let mut perturbed = flat.clone();
        for (i, v) in perturbed.iter_mut().enumerate() {
            *v += i as f64;
        }
        model.set_params(&perturbed).unwrap();
        assert_eq!(model.collect_params(), perturbed);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let mut stream = RngStream::new(21, "zero-epochs");
        let cfg = ModelConfig {
            tokens: 2,
            token_dim: 5,
            layers: 1,
            experts: 2,
            hidden_budget: 10,
            head: HeadKind::Summation,
            output_bias_init: 0.0,
        };
        let mut model = Model::init(&cfg, &mut stream).unwrap();
        let before = model.collect_params();
        let trace = train_model(
            &mut model,
            &TrainTask::NormRegression(NormTaskConfig::new(10, 2, 5, 8).unwrap()),
            &TrainConfig {
                epochs: 0,
                batch_size: 8,
                learning_rate: 1e-3,
                stop_at_accuracy: None,
            },
            &RngStream::new(21, "train"),
        )
        .unwrap();
        assert!(trace.epochs.is_empty());
        assert_eq!(model.collect_params(), before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut stream = RngStream::new(22, "det");
            let cfg = ModelConfig {
                tokens: 2,
                token_dim: 5,
                layers: 1,
                experts: 2,
                hidden_budget: 10,
                head: HeadKind::Summation,
                output_bias_init: 0.0,
            };
            let mut model = Model::init(&cfg, &mut stream).unwrap();
            let trace = train_model(
                &mut model,
                &TrainTask::NormRegression(NormTaskConfig::new(10, 2, 5, 16).unwrap()),
                &TrainConfig {
                    epochs: 5,
                    batch_size: 16,
                    learning_rate: 1e-3,
                    stop_at_accuracy: None,
                },
                &RngStream::new(22, "train"),
            )
            .unwrap();
            (model.collect_params(), trace)
        };
        let (p1, t1) = run();
        let (p2, t2) = run();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn empty_classification_dataset_rejected() {
        let mut stream = RngStream::new(23, "empty");
        let cfg = ModelConfig {
            tokens: 2,
            token_dim: 2,
            layers: 1,
            experts: 2,
            hidden_budget: 4,
            head: HeadKind::Linear { classes: 2 },
            output_bias_init: 0.0,
        };
        let mut model = Model::init(&cfg, &mut stream).unwrap();
        let result = train_model(
            &mut model,
            &TrainTask::Classification {
                train: vec![],
                test: vec![],
            },
            &TrainConfig {
                epochs: 1,
                batch_size: 4,
                learning_rate: 1e-3,
                stop_at_accuracy: None,
            },
            &RngStream::new(23, "train"),
        );
        assert_eq!(result.unwrap_err(), Error::EmptyDataset);
    }
}
