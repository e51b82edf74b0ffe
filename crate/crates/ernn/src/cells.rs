//! Recurrent cell family.
//!
//! Four cells share one parameter bundle and one tape layout:
//!
//! - `VanillaRnn`: h_t = tanh(V h_{t−1} + W x_t + b);
//! - `ErnnToy`: the equilibrium form h = tanh(h + V h_{t−1} + W x_t + b),
//!   approached by K inner residual-blend steps
//!   h⁽ᵏ⁾ = (1 − η_t⁽ᵏ⁾) h⁽ᵏ⁻¹⁾ + η_t⁽ᵏ⁾ tanh(h⁽ᵏ⁻¹⁾ + V h_{t−1} + W x_t + b);
//! - `ErnnExemplar`: the embedded linear system g = Ug + V h⁽ᵏ⁻¹⁾ + W x_t + b
//!   with the inner solve replaced by the first-order Neumann form
//!   g ≈ (I + U)(V h⁽ᵏ⁻¹⁾ + W x_t + b), then
//!   h⁽ᵏ⁾ = (1 − η_t⁽ᵏ⁾) h⁽ᵏ⁻¹⁾ + η_t⁽ᵏ⁾ σ(g);
//! - `FastRnn`: the exemplar pinned to U = 0, K = 1 — literally the same
//!   code path, so equality is bitwise.
//!
//! Every inner step starts from h_t⁽⁰⁾ = h_{t−1} and the timestep output is
//! h_t = h_t⁽ᴷ⁾. The forward pass stashes every pre-activation and blended
//! state so reverse accumulation can replay the graph exactly.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// σ′ evaluated from the pre-activation. ReLU uses the active-set
    /// subgradient (0 at the kink).
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    VanillaRnn,
    ErnnToy,
    ErnnExemplar,
    FastRnn,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::VanillaRnn => "vanilla_rnn",
            CellKind::ErnnToy => "ernn_toy",
            CellKind::ErnnExemplar => "ernn_exemplar",
            CellKind::FastRnn => "fastrnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla_rnn" => Some(CellKind::VanillaRnn),
            "ernn_toy" => Some(CellKind::ErnnToy),
            "ernn_exemplar" => Some(CellKind::ErnnExemplar),
            "fastrnn" => Some(CellKind::FastRnn),
            _ => None,
        }
    }

    pub fn default_activation(self) -> Activation {
        match self {
            CellKind::VanillaRnn | CellKind::ErnnToy => Activation::Tanh,
            CellKind::ErnnExemplar | CellKind::FastRnn => Activation::Relu,
        }
    }

    /// Whether U is a free parameter (only the exemplar learns it).
    pub fn learns_u(self) -> bool {
        matches!(self, CellKind::ErnnExemplar)
    }

    /// Whether the per-(t, k) step sizes are used at all.
    pub fn uses_eta(self) -> bool {
        !matches!(self, CellKind::VanillaRnn)
    }
}

/// Shape and initialization choices for a model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub cell_kind: CellKind,
    pub activation: Activation,
    /// Hidden dimension n.
    pub hidden_dim: usize,
    /// Input feature dimension d.
    pub input_dim: usize,
    /// Sequence length T.
    pub seq_len: usize,
    /// Inner fixed-point steps K per timestep.
    pub inner_steps: usize,
    pub class_count: usize,
    /// Initial value for every η_t⁽ᵏ⁾.
    pub eta_init: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(cell_kind: CellKind, hidden_dim: usize, input_dim: usize, seq_len: usize) -> Self {
        ModelConfig {
            cell_kind,
            activation: cell_kind.default_activation(),
            hidden_dim,
            input_dim,
            seq_len,
            inner_steps: 1,
            class_count: 2,
            eta_init: 1e-2,
            seed: 0,
        }
    }
}

/// Identifies one parameter tensor; used by the optimizer and the
/// gradient checker to walk everything trainable in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorId {
    U,
    V,
    W,
    B,
    Eta,
    ClassifierWeights,
    ClassifierBias,
}

pub const ALL_TENSORS: [TensorId; 7] = [
    TensorId::U,
    TensorId::V,
    TensorId::W,
    TensorId::B,
    TensorId::Eta,
    TensorId::ClassifierWeights,
    TensorId::ClassifierBias,
];

/// Full parameter bundle of one model.
///
/// `eta` has one row per timestep and one column per inner step. FastRNN
/// models keep U ≡ 0 with K = 1; this is enforced at construction and on
/// checkpoint load.
#[derive(Debug, Clone, PartialEq)]
pub struct ErnnParams {
    pub cell_kind: CellKind,
    pub activation: Activation,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub w: DenseMatrix,
    pub b: DenseVector,
    pub eta: DenseMatrix,
    pub classifier_weights: DenseMatrix,
    pub classifier_bias: DenseVector,
}

impl ErnnParams {
    /// Seeded initialization: U (exemplar only), V, W and the classifier
    /// weights are drawn i.i.d. uniform in [−1/√n, 1/√n] in that order,
    /// row-major; biases start at zero and every η at `eta_init`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        if cfg.hidden_dim == 0
            || cfg.input_dim == 0
            || cfg.seq_len == 0
            || cfg.inner_steps == 0
            || cfg.class_count == 0
        {
            return Err(Error::InvalidArgument(
                "model dimensions must all be at least 1".into(),
            ));
        }
        if cfg.cell_kind == CellKind::FastRnn && cfg.inner_steps != 1 {
            return Err(Error::InvalidArgument(
                "fastrnn requires K = 1 (it is the exemplar with U = 0, K = 1)".into(),
            ));
        }
        if cfg.cell_kind == CellKind::VanillaRnn && cfg.inner_steps != 1 {
            return Err(Error::InvalidArgument(
                "the vanilla rnn has no inner fixed-point steps; K must be 1".into(),
            ));
        }
        if matches!(cfg.cell_kind, CellKind::VanillaRnn | CellKind::ErnnToy)
            && cfg.activation != Activation::Tanh
        {
            return Err(Error::InvalidArgument(format!(
                "{} is defined with tanh",
                cfg.cell_kind.name()
            )));
        }
        if !cfg.eta_init.is_finite() {
            return Err(Error::NonFinite("eta_init".into()));
        }

        let n = cfg.hidden_dim;
        let bound = 1.0 / (n as f64).sqrt();
        let mut rng = Xoshiro256::stream(cfg.seed, 0);
        let mut draw = |rows: usize, cols: usize| {
            DenseMatrix::from_fn(rows, cols, |_, _| rng.next_range(-bound, bound))
        };

        let u = if cfg.cell_kind.learns_u() {
            draw(n, n)
        } else {
            DenseMatrix::zeros(n, n)
        };
        let v = draw(n, n);
        let w = draw(n, cfg.input_dim);
        let classifier_weights = draw(cfg.class_count, n);

        let params = ErnnParams {
            cell_kind: cfg.cell_kind,
            activation: cfg.activation,
            u,
            v,
            w,
            b: DenseVector::zeros(n),
            eta: DenseMatrix::from_fn(cfg.seq_len, cfg.inner_steps, |_, _| cfg.eta_init),
            classifier_weights,
            classifier_bias: DenseVector::zeros(cfg.class_count),
        };
        params.validate()?;
        Ok(params)
    }

    /// Validates shapes, finiteness and the FastRNN freeze; used after
    /// init and after checkpoint load.
    pub fn validate(&self) -> Result<()> {
        let n = self.hidden_dim();
        if self.u.rows() != n || self.u.cols() != n {
            return Err(Error::ShapeMismatch("U must be n x n".into()));
        }
        if self.w.rows() != n {
            return Err(Error::ShapeMismatch("W must be n x d".into()));
        }
        if self.b.len() != n {
            return Err(Error::ShapeMismatch("b must have length n".into()));
        }
        if self.classifier_weights.cols() != n {
            return Err(Error::ShapeMismatch("classifier weights must be C x n".into()));
        }
        if self.classifier_bias.len() != self.classifier_weights.rows() {
            return Err(Error::ShapeMismatch(
                "classifier bias must have length C".into(),
            ));
        }
        if self.cell_kind == CellKind::FastRnn {
            if self.inner_steps() != 1 {
                return Err(Error::InvalidArgument("fastrnn requires K = 1".into()));
            }
            if self.u.data().iter().any(|&x| x != 0.0) {
                return Err(Error::InvalidArgument("fastrnn requires U = 0".into()));
            }
        }
        for id in ALL_TENSORS {
            if !self.tensor(id).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {id:?}")));
            }
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn seq_len(&self) -> usize {
        self.eta.rows()
    }

    pub fn inner_steps(&self) -> usize {
        self.eta.cols()
    }

    pub fn class_count(&self) -> usize {
        self.classifier_weights.rows()
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

    /// Tensors actually learned by this cell kind. U is frozen except for
    /// the exemplar; η is unused by the vanilla RNN.
    pub fn trainable_tensors(&self) -> Vec<TensorId> {
        let mut ids = Vec::with_capacity(7);
        if self.cell_kind.learns_u() {
            ids.push(TensorId::U);
        }
        ids.extend([TensorId::V, TensorId::W, TensorId::B]);
        if self.cell_kind.uses_eta() {
            ids.push(TensorId::Eta);
        }
        ids.extend([TensorId::ClassifierWeights, TensorId::ClassifierBias]);
        ids
    }

    /// Number of scalar parameters learned, with the η table counted
    /// separately: the vanilla RNN and the toy cell share every other
    /// tensor shape and differ only by it.
    pub fn parameter_counts(&self) -> (usize, usize) {
        let mut core = 0;
        for id in self.trainable_tensors() {
            if id != TensorId::Eta {
                core += self.tensor(id).len();
            }
        }
        let eta = if self.cell_kind.uses_eta() {
            self.eta.data().len()
        } else {
            0
        };
        (core, eta)
    }
}

/// Borrowed view of one sample: `seq_len` rows of `dim` features.
#[derive(Debug, Clone, Copy)]
pub struct SequenceView<'a> {
    data: &'a [f64],
    seq_len: usize,
    dim: usize,
}

impl<'a> SequenceView<'a> {
    pub fn new(data: &'a [f64], seq_len: usize, dim: usize) -> Self {
        assert_eq!(data.len(), seq_len * dim, "sequence view shape mismatch");
        SequenceView { data, seq_len, dim }
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Features at timestep `t` (0-based).
    pub fn step(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Intermediates of one timestep: pre-activations and blended states for
/// each of the K inner steps.
#[derive(Debug, Clone)]
pub struct InnerTrace {
    /// g_t⁽ᵏ⁾ for the exemplar; the tanh argument h⁽ᵏ⁻¹⁾ + c_t for the toy
    /// cell; the plain pre-activation for the vanilla RNN.
    pub pre: Vec<DenseVector>,
    /// h_t⁽ᵏ⁾, k = 1..K.
    pub states: Vec<DenseVector>,
}

/// Everything the backward pass needs to replay a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// h_t⁽⁰⁾ = h_{t−1} per timestep (h_0 = 0).
    pub h_init: Vec<DenseVector>,
    pub steps: Vec<InnerTrace>,
}

impl ForwardTape {
    pub fn seq_len(&self) -> usize {
        self.steps.len()
    }

    pub fn inner_steps(&self) -> usize {
        self.steps.first().map_or(0, |s| s.states.len())
    }

    /// h_t = h_t⁽ᴷ⁾.
    pub fn state(&self, t: usize) -> &DenseVector {
        self.steps[t].states.last().expect("empty inner trace")
    }

    pub fn final_state(&self) -> &DenseVector {
        self.state(self.steps.len() - 1)
    }
}

/// Output of a full-sequence forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: DenseVector,
    pub tape: ForwardTape,
}

/// V h_prev + W x + b.
fn affine(params: &ErnnParams, h: &[f64], x: &[f64]) -> DenseVector {
    let mut a = params.v.matvec(h);
    let wx = params.w.matvec(x);
    for ((ai, wi), bi) in a.data_mut().iter_mut().zip(wx.iter()).zip(params.b.iter()) {
        *ai += wi + bi;
    }
    a
}

/// One vanilla step: tanh(V h_prev + W x + b).
pub fn rnn_step(params: &ErnnParams, h_prev: &DenseVector, x: &[f64]) -> DenseVector {
    let mut z = affine(params, h_prev, x);
    for v in z.data_mut() {
        *v = v.tanh();
    }
    z
}

/// K residual-blend steps toward the equilibrium of
/// h = tanh(h + V h_prev + W x + b). Returns h_t⁽ᴷ⁾ and the inner trace.
pub fn ernn_toy_step(
    params: &ErnnParams,
    t: usize,
    h_prev: &DenseVector,
    x: &[f64],
    k_steps: usize,
) -> (DenseVector, InnerTrace) {
    assert_eq!(k_steps, params.inner_steps(), "k_steps must equal K");
    let n = params.hidden_dim();
    let c = affine(params, h_prev, x);
    let mut trace = InnerTrace {
        pre: Vec::with_capacity(k_steps),
        states: Vec::with_capacity(k_steps),
    };
    let mut h = h_prev.clone();
    for k in 0..k_steps {
        let eta = params.eta[(t, k)];
        let mut pre = DenseVector::zeros(n);
        let mut next = DenseVector::zeros(n);
        for i in 0..n {
            let z = h[i] + c[i];
            pre.data_mut()[i] = z;
            next.data_mut()[i] = (1.0 - eta) * h[i] + eta * z.tanh();
        }
        trace.pre.push(pre);
        h = next;
        trace.states.push(h.clone());
    }
    (h, trace)
}

/// K residual-blend steps of the exemplar cell: per inner step,
/// g = (I + U)(V h⁽ᵏ⁻¹⁾ + W x + b) and
/// h⁽ᵏ⁾ = (1 − η) h⁽ᵏ⁻¹⁾ + η σ(g).
pub fn ernn_exemplar_step(
    params: &ErnnParams,
    t: usize,
    h_prev: &DenseVector,
    x: &[f64],
    k_steps: usize,
) -> (DenseVector, InnerTrace) {
    assert_eq!(k_steps, params.inner_steps(), "k_steps must equal K");
    let n = params.hidden_dim();
    let act = params.activation;
    let mut trace = InnerTrace {
        pre: Vec::with_capacity(k_steps),
        states: Vec::with_capacity(k_steps),
    };
    let mut h = h_prev.clone();
    for k in 0..k_steps {
        let eta = params.eta[(t, k)];
        let a = affine(params, &h, x);
        let mut g = params.u.matvec(&a);
        for (gi, ai) in g.data_mut().iter_mut().zip(a.iter()) {
            *gi += ai;
        }
        let mut next = DenseVector::zeros(n);
        for i in 0..n {
            next.data_mut()[i] = (1.0 - eta) * h[i] + eta * act.apply(g[i]);
        }
        trace.pre.push(g);
        h = next;
        trace.states.push(h.clone());
    }
    (h, trace)
}

/// FastRNN step: the exemplar path with U = 0 and K = 1. Shares the code
/// path, so outputs are bit-identical to `ernn_exemplar_step`.
pub fn fastrnn_step(
    params: &ErnnParams,
    t: usize,
    h_prev: &DenseVector,
    x: &[f64],
) -> (DenseVector, InnerTrace) {
    debug_assert_eq!(params.cell_kind, CellKind::FastRnn);
    ernn_exemplar_step(params, t, h_prev, x, 1)
}

/// Runs the configured cell over a whole sequence from h_0 = 0, stashing
/// every intermediate, and applies the linear classifier to the final
/// state. Panics on sequence/parameter shape mismatch; callers validate
/// dataset compatibility once via [`check_compatible`].
pub fn forward_sequence(params: &ErnnParams, xs: &SequenceView) -> Forward {
    assert_eq!(
        xs.seq_len(),
        params.seq_len(),
        "sequence length {} != eta rows {}",
        xs.seq_len(),
        params.seq_len()
    );
    assert_eq!(
        xs.dim(),
        params.input_dim(),
        "feature dim {} != W cols {}",
        xs.dim(),
        params.input_dim()
    );
    let t_len = xs.seq_len();
    let k_steps = params.inner_steps();
    let mut tape = ForwardTape {
        h_init: Vec::with_capacity(t_len),
        steps: Vec::with_capacity(t_len),
    };
    let mut h = DenseVector::zeros(params.hidden_dim());
    for t in 0..t_len {
        tape.h_init.push(h.clone());
        let x = xs.step(t);
        let (next, inner) = match params.cell_kind {
            CellKind::VanillaRnn => {
                let out = rnn_step(params, &h, x);
                let pre = affine(params, &h, x);
                (
                    out.clone(),
                    InnerTrace {
                        pre: vec![pre],
                        states: vec![out],
                    },
                )
            }
            CellKind::ErnnToy => ernn_toy_step(params, t, &h, x, k_steps),
            CellKind::ErnnExemplar => ernn_exemplar_step(params, t, &h, x, k_steps),
            CellKind::FastRnn => fastrnn_step(params, t, &h, x),
        };
        tape.steps.push(inner);
        h = next;
    }
    let mut logits = params.classifier_weights.matvec(&h);
    for (l, cb) in logits.data_mut().iter_mut().zip(params.classifier_bias.iter()) {
        *l += cb;
    }
    Forward { logits, tape }
}

/// Checks that a dataset shape matches the model; the per-sample forward
/// and backward paths then run assertion-checked.
pub fn check_compatible(params: &ErnnParams, seq_len: usize, dim: usize, classes: usize) -> Result<()> {
    if seq_len != params.seq_len() {
        return Err(Error::ShapeMismatch(format!(
            "dataset sequence length {} != model T {}",
            seq_len,
            params.seq_len()
        )));
    }
    if dim != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset feature dim {} != model d {}",
            dim,
            params.input_dim()
        )));
    }
    if classes > params.class_count() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes but model emits {}",
            classes,
            params.class_count()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_params(cell: CellKind, n: usize, d: usize, t_len: usize, k: usize) -> ErnnParams {
        let mut cfg = ModelConfig::new(cell, n, d, t_len);
        cfg.inner_steps = k;
        cfg.eta_init = 0.0;
        let mut p = ErnnParams::init(&cfg).unwrap();
        for id in [TensorId::U, TensorId::V, TensorId::W, TensorId::ClassifierWeights] {
            if cell == CellKind::FastRnn && id == TensorId::U {
                continue;
            }
            for v in p.tensor_mut(id) {
                *v = 0.0;
            }
        }
        p
    }

    #[test]
    fn rnn_step_zero_params_is_zero() {
        let p = zero_params(CellKind::VanillaRnn, 3, 2, 1, 1);
        let h = rnn_step(&p, &DenseVector::zeros(3), &[1.0, -4.0]);
        assert_eq!(h.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rnn_step_scalar_tanh() {
        let mut p = zero_params(CellKind::VanillaRnn, 1, 1, 1, 1);
        p.w[(0, 0)] = 1.0;
        let h = rnn_step(&p, &DenseVector::zeros(1), &[10.0]);
        assert_abs_diff_eq!(h[0], 10f64.tanh(), epsilon = 1e-15);
        assert!(h[0] > 0.99999);
    }

    #[test]
    fn rnn_step_outputs_bounded() {
        let cfg = ModelConfig::new(CellKind::VanillaRnn, 8, 3, 1);
        let p = ErnnParams::init(&cfg).unwrap();
        let mut rng = Xoshiro256::seed_from(5);
        for _ in 0..50 {
            let h_prev =
                DenseVector::from_raw((0..8).map(|_| rng.next_range(-1.0, 1.0)).collect());
            let x: Vec<f64> = (0..3).map(|_| rng.next_range(-30.0, 30.0)).collect();
            let h = rnn_step(&p, &h_prev, &x);
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn toy_step_zero_eta_keeps_state() {
        let mut cfg = ModelConfig::new(CellKind::ErnnToy, 4, 2, 3);
        cfg.inner_steps = 2;
        cfg.eta_init = 0.0;
        let p = ErnnParams::init(&cfg).unwrap();
        let h_prev = DenseVector::from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let (h, _) = ernn_toy_step(&p, 0, &h_prev, &[1.0, 2.0], 2);
        assert_eq!(h, h_prev);
    }

    #[test]
    fn toy_step_full_eta_from_zero_state_matches_rnn() {
        // With h_prev = 0 the self-feedback term vanishes and a full step
        // recovers the vanilla update.
        let cfg = ModelConfig::new(CellKind::ErnnToy, 5, 2, 1);
        let mut p = ErnnParams::init(&cfg).unwrap();
        for v in p.tensor_mut(TensorId::Eta) {
            *v = 1.0;
        }
        let h0 = DenseVector::zeros(5);
        let x = [0.7, -1.3];
        let (h, _) = ernn_toy_step(&p, 0, &h0, &x, 1);
        let reference = rnn_step(&p, &h0, &x);
        assert_eq!(h, reference);
    }

    #[test]
    fn toy_step_fixed_point_is_invariant() {
        // c = artanh(h*) - h* makes h* the equilibrium of h = tanh(h + c);
        // starting the inner state there, any eta leaves it unchanged.
        let n = 3;
        let h_star = DenseVector::from_slice(&[0.4, -0.6, 0.1]);
        let mut cfg = ModelConfig::new(CellKind::ErnnToy, n, 1, 1);
        cfg.inner_steps = 4;
        let mut p = ErnnParams::init(&cfg).unwrap();
        for id in [TensorId::V, TensorId::W] {
            for v in p.tensor_mut(id) {
                *v = 0.0;
            }
        }
        for i in 0..n {
            p.b.data_mut()[i] = h_star[i].atanh() - h_star[i];
        }
        for (k, v) in p.tensor_mut(TensorId::Eta).iter_mut().enumerate() {
            *v = [-0.5, 0.3, 1.0, 1.7][k];
        }
        let (h, _) = ernn_toy_step(&p, 0, &h_star, &[0.0], 4);
        for i in 0..n {
            assert_abs_diff_eq!(h[i], h_star[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn exemplar_scalar_hand_evaluation() {
        // n = d = 1, U = 0.1, V = 0.5, W = 1, b = 0, h_prev = 0, x = 1,
        // eta = 1, relu: g = 1.1, h = 1.1.
        let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 1, 1, 1);
        cfg.eta_init = 1.0;
        let mut p = ErnnParams::init(&cfg).unwrap();
        p.u[(0, 0)] = 0.1;
        p.v[(0, 0)] = 0.5;
        p.w[(0, 0)] = 1.0;
        p.b.data_mut()[0] = 0.0;
        let (h, trace) = ernn_exemplar_step(&p, 0, &DenseVector::zeros(1), &[1.0], 1);
        assert_abs_diff_eq!(trace.pre[0][0], 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(h[0], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn exemplar_zero_eta_keeps_state() {
        let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 4, 2, 1);
        cfg.eta_init = 0.0;
        let p = ErnnParams::init(&cfg).unwrap();
        let h_prev = DenseVector::from_slice(&[1.0, 2.0, -3.0, 0.5]);
        let (h, _) = ernn_exemplar_step(&p, 0, &h_prev, &[1.0, 1.0], 1);
        assert_eq!(h, h_prev);
    }

    #[test]
    fn fastrnn_matches_exemplar_bitwise() {
        let mut rng = Xoshiro256::seed_from(99);
        for case in 0..100 {
            let n = 1 + (case % 5);
            let d = 1 + (case % 3);
            let mut cfg = ModelConfig::new(CellKind::FastRnn, n, d, 1);
            cfg.seed = case as u64;
            cfg.eta_init = rng.next_range(-0.5, 1.5);
            let pf = ErnnParams::init(&cfg).unwrap();
            let mut pe = pf.clone();
            pe.cell_kind = CellKind::ErnnExemplar;
            let h_prev =
                DenseVector::from_raw((0..n).map(|_| rng.next_range(-2.0, 2.0)).collect());
            let x: Vec<f64> = (0..d).map(|_| rng.next_range(-2.0, 2.0)).collect();
            let (hf, _) = fastrnn_step(&pf, 0, &h_prev, &x);
            let (he, _) = ernn_exemplar_step(&pe, 0, &h_prev, &x, 1);
            assert_eq!(hf.as_slice(), he.as_slice(), "case {case}");
        }
    }

    #[test]
    fn fastrnn_half_eta_inactive_region() {
        // relu output 0 leaves h = 0.5 * 2 = 1.
        let mut cfg = ModelConfig::new(CellKind::FastRnn, 1, 1, 1);
        cfg.eta_init = 0.5;
        let mut p = ErnnParams::init(&cfg).unwrap();
        p.v[(0, 0)] = 0.0;
        p.w[(0, 0)] = 1.0;
        let (h, _) = fastrnn_step(&p, 0, &DenseVector::from_slice(&[2.0]), &[-5.0]);
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fastrnn_rejects_k2() {
        let mut cfg = ModelConfig::new(CellKind::FastRnn, 2, 1, 1);
        cfg.inner_steps = 2;
        assert!(ErnnParams::init(&cfg).is_err());
    }

    #[test]
    fn forward_single_timestep_matches_step() {
        let cfg = ModelConfig::new(CellKind::ErnnExemplar, 4, 2, 1);
        let p = ErnnParams::init(&cfg).unwrap();
        let x = [0.3, -0.8];
        let fwd = forward_sequence(&p, &SequenceView::new(&x, 1, 2));
        let (h, _) = ernn_exemplar_step(&p, 0, &DenseVector::zeros(4), &x, 1);
        assert_eq!(fwd.tape.final_state(), &h);
    }

    #[test]
    fn forward_zero_everything_yields_bias_logits() {
        let mut p = zero_params(CellKind::ErnnToy, 3, 2, 4, 1);
        p.classifier_bias.data_mut()[0] = 0.25;
        p.classifier_bias.data_mut()[1] = -1.5;
        let xs = vec![0.0; 4 * 2];
        let fwd = forward_sequence(&p, &SequenceView::new(&xs, 4, 2));
        assert_eq!(fwd.logits.as_slice(), &[0.25, -1.5]);
    }

    #[test]
    fn forward_k2_with_zero_second_eta_equals_k1() {
        let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 4, 2, 3);
        cfg.inner_steps = 2;
        cfg.seed = 17;
        let mut p2 = ErnnParams::init(&cfg).unwrap();
        for t in 0..3 {
            p2.eta[(t, 0)] = 0.37;
            p2.eta[(t, 1)] = 0.0;
        }
        let mut cfg1 = cfg.clone();
        cfg1.inner_steps = 1;
        let mut p1 = ErnnParams::init(&cfg1).unwrap();
        // Same weights; only the eta table differs in shape.
        p1.u = p2.u.clone();
        p1.v = p2.v.clone();
        p1.w = p2.w.clone();
        p1.b = p2.b.clone();
        p1.classifier_weights = p2.classifier_weights.clone();
        for t in 0..3 {
            p1.eta[(t, 0)] = 0.37;
        }
        let mut rng = Xoshiro256::seed_from(4);
        let xs: Vec<f64> = (0..6).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let f2 = forward_sequence(&p2, &SequenceView::new(&xs, 3, 2));
        let f1 = forward_sequence(&p1, &SequenceView::new(&xs, 3, 2));
        assert_eq!(f1.logits, f2.logits);
    }

    #[test]
    fn tape_seam_and_determinism() {
        let mut cfg = ModelConfig::new(CellKind::ErnnToy, 5, 2, 6);
        cfg.inner_steps = 2;
        cfg.seed = 3;
        let p = ErnnParams::init(&cfg).unwrap();
        let mut rng = Xoshiro256::seed_from(8);
        let xs: Vec<f64> = (0..12).map(|_| rng.next_gaussian()).collect();
        let view = SequenceView::new(&xs, 6, 2);
        let f1 = forward_sequence(&p, &view);
        let f2 = forward_sequence(&p, &view);
        assert_eq!(f1.logits, f2.logits);
        for t in 0..6 {
            assert_eq!(f1.tape.h_init[t], f2.tape.h_init[t]);
            if t > 0 {
                // h_t^(0) == h_{t-1}
                assert_eq!(&f1.tape.h_init[t], f1.tape.state(t - 1));
            }
            // tanh cell keeps states strictly inside (-1, 1) for eta in (0,1).
            assert!(f1.tape.state(t).iter().all(|v| v.abs() < 1.0));
        }
        assert!(f1.tape.h_init[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compatibility_check() {
        let cfg = ModelConfig::new(CellKind::ErnnExemplar, 4, 2, 3);
        let p = ErnnParams::init(&cfg).unwrap();
        assert!(check_compatible(&p, 3, 2, 2).is_ok());
        assert!(check_compatible(&p, 4, 2, 2).is_err());
        assert!(check_compatible(&p, 3, 3, 2).is_err());
        assert!(check_compatible(&p, 3, 2, 5).is_err());
    }

    #[test]
    fn toy_requires_tanh() {
        let mut cfg = ModelConfig::new(CellKind::ErnnToy, 2, 1, 1);
        cfg.activation = Activation::Relu;
        assert!(ErnnParams::init(&cfg).is_err());
    }
}
