//! Loss, exact gradients, Adam, and the training loop.
//!
//! Gradients come from reverse accumulation through the unrolled
//! space-time graph: the classifier, all T·K inner steps (residual blend,
//! activation, the (I + U) product, the V/W/b affine map) and the
//! h_t⁽⁰⁾ = h_{t−1} seam between timesteps. The step sizes η_t⁽ᵏ⁾ are free
//! parameters with ∂ℓ/∂η_t⁽ᵏ⁾ = ⟨δh⁽ᵏ⁾, σ(g⁽ᵏ⁾) − h⁽ᵏ⁻¹⁾⟩. Everything is
//! checked against central finite differences by [`finite_diff_gradcheck`].
//!
//! Batch gradients sum per-sample gradients in sample-index order and
//! divide once, so results are bit-reproducible.

use std::io::Write;
use std::time::Instant;

use crate::cells::{
    check_compatible, forward_sequence, CellKind, ErnnParams, ForwardTape, SequenceView, TensorId,
};
use crate::checkpoint::CheckpointStore;
use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::Xoshiro256;

/// Optimizer and schedule settings. Model shape lives in
/// [`crate::cells::ModelConfig`]; this struct only drives the loop.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs between halvings of the learning rate.
    pub lr_half_period: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Optional global-norm gradient clip; off by default.
    pub grad_clip_norm: Option<f64>,
    /// In-memory per-epoch snapshot cap before spilling to disk.
    pub checkpoint_cap: usize,
    /// Keep per-epoch snapshots at all (the parameter-trajectory
    /// diagnostic needs them; long runs can turn this off).
    pub keep_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 128,
            epochs: 100,
            lr_half_period: 50,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: None,
            checkpoint_cap: 300,
            keep_checkpoints: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.lr_half_period == 0 {
            return Err(Error::InvalidArgument("lr_half_period must be at least 1".into()));
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("adam_eps must be positive".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    /// lr(epoch) = lr₀ · 2^(−⌊epoch / lr_half_period⌋), epoch 0-based.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.lr_half_period) as i32)
    }
}

/// Gradients (or any parameter-shaped accumulator: the Adam moments reuse
/// this layout).
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub w: DenseMatrix,
    pub b: DenseVector,
    pub eta: DenseMatrix,
    pub classifier_weights: DenseMatrix,
    pub classifier_bias: DenseVector,
}

impl GradientSet {
    pub fn zeros_like(params: &ErnnParams) -> Self {
        GradientSet {
            u: DenseMatrix::zeros(params.u.rows(), params.u.cols()),
            v: DenseMatrix::zeros(params.v.rows(), params.v.cols()),
            w: DenseMatrix::zeros(params.w.rows(), params.w.cols()),
            b: DenseVector::zeros(params.b.len()),
            eta: DenseMatrix::zeros(params.eta.rows(), params.eta.cols()),
            classifier_weights: DenseMatrix::zeros(
                params.classifier_weights.rows(),
                params.classifier_weights.cols(),
            ),
            classifier_bias: DenseVector::zeros(params.classifier_bias.len()),
        }
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        match id {
            TensorId::U => self.u.data(),
            TensorId::V => self.v.data(),
            TensorId::W => self.w.data(),
            TensorId::B => self.b.as_slice(),
            TensorId::Eta => self.eta.data(),
            TensorId::ClassifierWeights => self.classifier_weights.data(),
            TensorId::ClassifierBias => self.classifier_bias.as_slice(),
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut [f64] {
        match id {
            TensorId::U => self.u.data_mut(),
            TensorId::V => self.v.data_mut(),
            TensorId::W => self.w.data_mut(),
            TensorId::B => self.b.data_mut(),
            TensorId::Eta => self.eta.data_mut(),
            TensorId::ClassifierWeights => self.classifier_weights.data_mut(),
            TensorId::ClassifierBias => self.classifier_bias.data_mut(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for id in crate::cells::ALL_TENSORS {
            for (a, b) in self.tensor_mut(id).iter_mut().zip(other.tensor(id)) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for id in crate::cells::ALL_TENSORS {
            for a in self.tensor_mut(id) {
                *a *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for id in crate::cells::ALL_TENSORS {
            acc += self.tensor(id).iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        crate::cells::ALL_TENSORS
            .iter()
            .all(|&id| self.tensor(id).iter().all(|v| v.is_finite()))
    }
}

/// Adam moment accumulators, shape-mirroring the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ErnnParams) -> Self {
        AdamState {
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
            step: 0,
        }
    }
}

/// Numerically stable softmax cross-entropy on one logit vector.
/// Returns the loss and ∂ℓ/∂logits = softmax(logits) − onehot(label).
pub fn softmax_cross_entropy(logits: &DenseVector, label: usize) -> Result<(f64, DenseVector)> {
    let c = logits.len();
    if label >= c {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut dlogits = DenseVector::zeros(c);
    let mut denom = 0.0;
    for (slot, &l) in dlogits.data_mut().iter_mut().zip(logits.iter()) {
        let e = (l - max).exp();
        *slot = e;
        denom += e;
    }
    for slot in dlogits.data_mut() {
        *slot /= denom;
    }
    let loss = denom.ln() - (logits[label] - max);
    dlogits.data_mut()[label] -= 1.0;
    Ok((loss, dlogits))
}

/// Exact reverse accumulation through one sample's tape. `dlogits` is the
/// upstream gradient at the classifier output.
pub fn backward(
    params: &ErnnParams,
    tape: &ForwardTape,
    xs: &SequenceView,
    dlogits: &DenseVector,
) -> GradientSet {
    assert_eq!(tape.seq_len(), params.seq_len(), "tape/params length mismatch");
    assert_eq!(dlogits.len(), params.class_count(), "dlogits length mismatch");
    let n = params.hidden_dim();
    let k_steps = params.inner_steps();
    let mut grads = GradientSet::zeros_like(params);

    // Classifier: logits = cw · h_T + cb.
    let h_final = tape.final_state();
    grads.classifier_weights.add_outer(1.0, dlogits, h_final);
    for (g, d) in grads.classifier_bias.data_mut().iter_mut().zip(dlogits.iter()) {
        *g += d;
    }
    let mut delta = params.classifier_weights.matvec_t(dlogits);

    for t in (0..tape.seq_len()).rev() {
        let x = xs.step(t);
        let inner = &tape.steps[t];
        match params.cell_kind {
            CellKind::VanillaRnn => {
                // h_t = tanh(z), z = V h_{t-1} + W x + b.
                let h_t = &inner.states[0];
                let mut dz = DenseVector::zeros(n);
                for i in 0..n {
                    dz.data_mut()[i] = (1.0 - h_t[i] * h_t[i]) * delta[i];
                }
                let h_prev = &tape.h_init[t];
                grads.v.add_outer(1.0, &dz, h_prev);
                grads.w.add_outer(1.0, &dz, x);
                for (g, d) in grads.b.data_mut().iter_mut().zip(dz.iter()) {
                    *g += d;
                }
                delta = params.v.matvec_t(&dz);
            }
            CellKind::ErnnToy => {
                // h(k) = (1-eta) h(k-1) + eta tanh(h(k-1) + c), with
                // c = V h_{t-1} + W x + b shared across inner steps.
                let h_prev = &tape.h_init[t];
                let mut dc = DenseVector::zeros(n);
                for k in (0..k_steps).rev() {
                    let eta = params.eta[(t, k)];
                    let h_km1 = if k == 0 { h_prev } else { &inner.states[k - 1] };
                    let z = &inner.pre[k];
                    let mut deta_k = 0.0;
                    let mut next_delta = DenseVector::zeros(n);
                    for i in 0..n {
                        let u = z[i].tanh();
                        deta_k += delta[i] * (u - h_km1[i]);
                        let dz = (1.0 - u * u) * eta * delta[i];
                        dc.data_mut()[i] += dz;
                        next_delta.data_mut()[i] = (1.0 - eta) * delta[i] + dz;
                    }
                    grads.eta[(t, k)] += deta_k;
                    delta = next_delta;
                }
                grads.v.add_outer(1.0, &dc, h_prev);
                grads.w.add_outer(1.0, &dc, x);
                for (g, d) in grads.b.data_mut().iter_mut().zip(dc.iter()) {
                    *g += d;
                }
                let vt_dc = params.v.matvec_t(&dc);
                for (d, v) in delta.data_mut().iter_mut().zip(vt_dc.iter()) {
                    *d += v;
                }
            }
            CellKind::ErnnExemplar | CellKind::FastRnn => {
                // h(k) = (1-eta) h(k-1) + eta σ(g),
                // g = (I+U) a, a = V h(k-1) + W x + b.
                let act = params.activation;
                for k in (0..k_steps).rev() {
                    let eta = params.eta[(t, k)];
                    let h_km1 = if k == 0 {
                        &tape.h_init[t]
                    } else {
                        &inner.states[k - 1]
                    };
                    let g = &inner.pre[k];
                    let mut deta_k = 0.0;
                    let mut dg = DenseVector::zeros(n);
                    for i in 0..n {
                        let s = act.apply(g[i]);
                        deta_k += delta[i] * (s - h_km1[i]);
                        dg.data_mut()[i] = act.derivative(g[i]) * eta * delta[i];
                    }
                    grads.eta[(t, k)] += deta_k;

                    // a is cheap to recompute from the tape.
                    let mut a = params.v.matvec(h_km1);
                    let wx = params.w.matvec(x);
                    for ((ai, wi), bi) in
                        a.data_mut().iter_mut().zip(wx.iter()).zip(params.b.iter())
                    {
                        *ai += wi + bi;
                    }
                    grads.u.add_outer(1.0, &dg, &a);
                    // da = (I + U)^T dg
                    let mut da = params.u.matvec_t(&dg);
                    for (d, gi) in da.data_mut().iter_mut().zip(dg.iter()) {
                        *d += gi;
                    }
                    grads.v.add_outer(1.0, &da, h_km1);
                    grads.w.add_outer(1.0, &da, x);
                    for (gb, d) in grads.b.data_mut().iter_mut().zip(da.iter()) {
                        *gb += d;
                    }
                    let vt_da = params.v.matvec_t(&da);
                    let mut next_delta = DenseVector::zeros(n);
                    for i in 0..n {
                        next_delta.data_mut()[i] = (1.0 - eta) * delta[i] + vt_da[i];
                    }
                    delta = next_delta;
                }
            }
        }
    }

    // Frozen / unused parameters report zero gradient.
    if params.cell_kind == CellKind::FastRnn {
        for g in grads.u.data_mut() {
            *g = 0.0;
        }
    }
    if !params.cell_kind.uses_eta() {
        for g in grads.eta.data_mut() {
            *g = 0.0;
        }
    }
    grads
}

/// Loss and gradient of one labelled sample.
pub fn sample_gradient(
    params: &ErnnParams,
    xs: &SequenceView,
    label: usize,
) -> Result<(f64, GradientSet)> {
    let fwd = forward_sequence(params, xs);
    let (loss, dlogits) = softmax_cross_entropy(&fwd.logits, label)?;
    Ok((loss, backward(params, &fwd.tape, xs, &dlogits)))
}

/// Mean loss and mean gradient over `indices`, summed in index order.
pub fn batch_gradient(
    params: &ErnnParams,
    ds: &SequenceDataset,
    indices: &[usize],
) -> Result<(f64, GradientSet)> {
    assert!(!indices.is_empty(), "batch_gradient: empty batch");
    let mut total = GradientSet::zeros_like(params);
    let mut loss_sum = 0.0;
    for &i in indices {
        let (loss, g) = sample_gradient(params, &ds.sample(i), ds.label(i))?;
        loss_sum += loss;
        total.add_assign(&g);
    }
    let inv = 1.0 / indices.len() as f64;
    total.scale(inv);
    Ok((loss_sum * inv, total))
}

/// Central-difference check of [`backward`] over every trainable
/// coordinate of a (small) model. Returns the maximum relative error
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
pub fn finite_diff_gradcheck(
    params: &ErnnParams,
    xs: &SequenceView,
    label: usize,
    eps: f64,
) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(
            "gradcheck eps must lie in [1e-7, 1e-4]".into(),
        ));
    }
    let (_, analytic) = sample_gradient(params, xs, label)?;
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.trainable_tensors() {
        for c in 0..params.tensor(id).len() {
            let orig = work.tensor(id)[c];
            work.tensor_mut(id)[c] = orig + eps;
            let (loss_plus, _) =
                softmax_cross_entropy(&forward_sequence(&work, xs).logits, label)?;
            work.tensor_mut(id)[c] = orig - eps;
            let (loss_minus, _) =
                softmax_cross_entropy(&forward_sequence(&work, xs).logits, label)?;
            work.tensor_mut(id)[c] = orig;
            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let a = analytic.tensor(id)[c];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// One bias-corrected Adam update over every trainable tensor.
pub fn adam_step(
    params: &mut ErnnParams,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.adam_beta1.powi(t);
    let bc2 = 1.0 - config.adam_beta2.powi(t);
    for id in params.trainable_tensors() {
        let g = grads.tensor(id);
        let m = state.m.tensor_mut(id);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = config.adam_beta1 * *mi + (1.0 - config.adam_beta1) * gi;
        }
        let v = state.v.tensor_mut(id);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = config.adam_beta2 * *vi + (1.0 - config.adam_beta2) * gi * gi;
        }
        let m = state.m.tensor(id);
        let v = state.v.tensor(id);
        let p = params.tensor_mut(id);
        for i in 0..p.len() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(())
}

/// One row of the per-epoch record CSV (`epoch,lr,train_loss,test_acc,wall_ms`).
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

pub fn write_records_csv(records: &[EpochRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,train_loss,test_acc,wall_ms")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.lr, r.train_loss, r.test_acc, r.wall_ms
        )?;
    }
    Ok(())
}

/// A finished training run.
pub struct TrainOutcome {
    pub params: ErnnParams,
    pub records: Vec<EpochRecord>,
    /// Post-epoch snapshots (empty when `keep_checkpoints` is off).
    pub checkpoints: CheckpointStore,
}

/// Mini-batch Adam training with seeded shuffling and periodic
/// learning-rate halving. The per-epoch loss is the mean sample loss as
/// seen by the optimizer (measured before each update).
pub fn train(
    params: ErnnParams,
    train_set: &SequenceDataset,
    eval_set: &SequenceDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    check_compatible(
        &params,
        train_set.seq_len(),
        train_set.feature_dim(),
        train_set.class_count(),
    )?;
    check_compatible(
        &params,
        eval_set.seq_len(),
        eval_set.feature_dim(),
        eval_set.class_count(),
    )?;

    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = Xoshiro256::stream(config.seed, 1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut checkpoints = CheckpointStore::new(config.checkpoint_cap);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (mean_loss, mut grads) = batch_gradient(&params, train_set, batch)?;
            loss_sum += mean_loss * batch.len() as f64;
            if let Some(max_norm) = config.grad_clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &grads, &mut state, lr, config).map_err(|e| {
                Error::Diverged {
                    epoch: epoch + 1,
                    reason: e.to_string(),
                }
            })?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                reason: "non-finite training loss".into(),
            });
        }
        let test_acc = evaluate(&params, eval_set);
        records.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            test_acc,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if config.keep_checkpoints {
            checkpoints.push(params.clone())?;
        }
    }

    Ok(TrainOutcome {
        params,
        records,
        checkpoints,
    })
}

/// Accuracy of argmax(logits) against the labels; ties break toward the
/// smallest class index. Order-independent.
pub fn evaluate(params: &ErnnParams, ds: &SequenceDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let fwd = forward_sequence(params, &ds.sample(i));
        let mut best = 0usize;
        for c in 1..fwd.logits.len() {
            if fwd.logits[c] > fwd.logits[best] {
                best = c;
            }
        }
        if best == ds.label(i) {
            correct += 1;
        }
    }
    correct as f64 / ds.len() as f64
}
