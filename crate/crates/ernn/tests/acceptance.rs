//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them as they finish).
//!
//! The random-walk experiments (criteria 1–3) use per-step Gaussian
//! covariance sigma·I with sigma in {0.1, 1}, i.e. generator standard
//! deviations (sqrt(0.1), 1), ten thousand walks per class, T = 100, a
//! 10-dimensional hidden state, and a 50/50 stratified split. Training:
//! Adam, lr 1e-2, eta init 1e-2, batch 128, halving period 50; 60 epochs
//! for the accuracy/loss/stability comparison (both cells converge or
//! plateau well before that) and 20 for the K = 1 vs K = 2 comparison.
//! The vanilla RNN's learning rate was tuned over {3e-3, 1e-2, 3e-2}
//! (grid winner by mean test accuracy: 1e-2).

use std::sync::OnceLock;

use ernn::cells::{
    ernn_exemplar_step, fastrnn_step, forward_sequence, Activation, CellKind, ErnnParams,
    ModelConfig, SequenceView, TensorId,
};
use ernn::checkpoint::save_checkpoint;
use ernn::data::{gen_random_walks, split};
use ernn::diagnostics::{
    discriminability_trace, eta_report, inner_residual_profile, model_distance_trace_store,
};
use ernn::fixed_point::{
    inexact_newton_solve, linear_fixed_point_approx, linear_fixed_point_exact, phi_curve,
    phi_derivative, phi_scalar, ResidualSystem,
};
use ernn::linalg::{spectral_norm, sub, DenseMatrix, DenseVector};
use ernn::rng::Xoshiro256;
use ernn::train::{evaluate, finite_diff_gradcheck, train, TrainConfig};

const SIGMA0: f64 = 0.31622776601683794; // sqrt(0.1): covariance 0.1 I
const SIGMA1: f64 = 1.0;
const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 60;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion:2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

struct ToySeedRun {
    ernn_acc: f64,
    rnn_acc: f64,
    ernn_loss: f64,
    rnn_loss: f64,
    /// Mean parameter distance to the final epoch over the last 25% of
    /// epochs, per model.
    ernn_h1_tail: f64,
    rnn_h1_tail: f64,
    /// Final-timestep intra/inter class distance ratio on a test subset.
    ernn_h2_final: f64,
    rnn_h2_final: f64,
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 128,
        epochs: EPOCHS,
        lr_half_period: 50,
        seed,
        keep_checkpoints: true,
        ..TrainConfig::default()
    }
}

fn run_toy_cell(cell: CellKind, seed: u64) -> (f64, f64, f64, f64) {
    let ds = gen_random_walks(10_000, 100, SIGMA0, SIGMA1, seed).unwrap();
    let (train_set, test_set) = split(&ds, 0.5, seed).unwrap();
    let mut cfg = ModelConfig::new(cell, 10, 2, 100);
    cfg.seed = seed;
    let params = ErnnParams::init(&cfg).unwrap();
    let out = train(params, &train_set, &test_set, &toy_config(seed)).unwrap();
    let acc = evaluate(&out.params, &test_set);
    let loss = out.records.last().unwrap().train_loss;
    let h1 = model_distance_trace_store(&out.checkpoints).unwrap();
    let tail_len = (h1.len() / 4).max(1);
    let tail = h1[h1.len() - tail_len..].iter().sum::<f64>() / tail_len as f64;
    // Final-timestep discriminability on a fixed test subset.
    let subset: Vec<usize> = (0..test_set.len()).step_by(5).collect();
    let h2 = discriminability_trace(&out.params, &test_set.subset(&subset)).unwrap();
    (acc, loss, tail, *h2.last().unwrap())
}

fn toy_runs() -> &'static Vec<ToySeedRun> {
    static RUNS: OnceLock<Vec<ToySeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let (ernn_acc, ernn_loss, ernn_h1_tail, ernn_h2_final) =
                    run_toy_cell(CellKind::ErnnToy, seed);
                let (rnn_acc, rnn_loss, rnn_h1_tail, rnn_h2_final) =
                    run_toy_cell(CellKind::VanillaRnn, seed);
                println!(
                    "info: seed {seed}: ernn-toy acc={ernn_acc:.4} loss={ernn_loss:.5} \
                     h1-tail={ernn_h1_tail:.4} h2-final={ernn_h2_final:.4} | rnn \
                     acc={rnn_acc:.4} loss={rnn_loss:.5} h1-tail={rnn_h1_tail:.4} \
                     h2-final={rnn_h2_final:.4}"
                );
                ToySeedRun {
                    ernn_acc,
                    rnn_acc,
                    ernn_loss,
                    rnn_loss,
                    ernn_h1_tail,
                    rnn_h1_tail,
                    ernn_h2_final,
                    rnn_h2_final,
                }
            })
            .collect()
    })
}

#[test]
fn c01_toy_accuracy_gap() {
    let runs = toy_runs();
    let ok = runs
        .iter()
        .filter(|r| r.ernn_acc >= 0.97 && r.rnn_acc <= 0.93 && r.ernn_acc - r.rnn_acc >= 0.05)
        .count();
    let detail = runs
        .iter()
        .enumerate()
        .map(|(i, r)| format!("seed{i}: ernn={:.4} rnn={:.4}", r.ernn_acc, r.rnn_acc))
        .collect::<Vec<_>>()
        .join("; ");
    report(
        1,
        "toy accuracy gap (ernn >= 0.97, rnn <= 0.93, gap >= 0.05 on >= 2/3 seeds)",
        ok >= 2,
        &format!("{ok}/3 seeds qualify — {detail}"),
    );

    // Parameter-trajectory stability (soft companion of the accuracy gap):
    // late-training distance to the final model should be smaller for the
    // equilibrated cell in most seeds.
    let h1_ok = runs
        .iter()
        .filter(|r| r.ernn_h1_tail < r.rnn_h1_tail)
        .count();
    println!(
        "info: late-epoch parameter drift smaller for ernn in {h1_ok}/3 seeds (soft check)"
    );
    // Discriminability of the final state (lower ratio = better separated).
    let h2_ok = runs
        .iter()
        .filter(|r| r.ernn_h2_final < r.rnn_h2_final)
        .count();
    println!(
        "info: final-state class-separation ratio better for ernn in {h2_ok}/3 seeds (soft check)"
    );
    assert!(h1_ok >= 2, "parameter-trajectory stability held in {h1_ok}/3 seeds");
}

#[test]
fn c02_training_loss_comparison() {
    let runs = toy_runs();
    let ok = runs.iter().filter(|r| r.ernn_loss < r.rnn_loss).count();
    let detail = runs
        .iter()
        .enumerate()
        .map(|(i, r)| format!("seed{i}: ernn={:.5} rnn={:.5}", r.ernn_loss, r.rnn_loss))
        .collect::<Vec<_>>()
        .join("; ");
    report(
        2,
        "final training loss lower for ernn at matched epochs (>= 2/3 seeds)",
        ok >= 2,
        &format!("{ok}/3 seeds — {detail}"),
    );
}

#[test]
fn c03_k2_non_inferiority() {
    let mut accs = [[0.0f64; 3]; 2];
    let mut residual_fraction = 0.0;
    for (ki, k) in [1usize, 2].iter().enumerate() {
        for (si, &seed) in SEEDS.iter().enumerate() {
            let ds = gen_random_walks(10_000, 100, SIGMA0, SIGMA1, seed).unwrap();
            let (train_set, test_set) = split(&ds, 0.5, seed).unwrap();
            let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 10, 2, 100);
            cfg.inner_steps = *k;
            cfg.seed = seed;
            let params = ErnnParams::init(&cfg).unwrap();
            let config = TrainConfig {
                keep_checkpoints: false,
                epochs: 20,
                ..toy_config(seed)
            };
            let out = train(params, &train_set, &test_set, &config).unwrap();
            accs[ki][si] = evaluate(&out.params, &test_set);
            if *k == 2 && seed == 0 {
                // Empirical inner fixed-point claim: the second inner step
                // should not increase the residual on most timesteps.
                let prof = inner_residual_profile(&out.params, &test_set, 64).unwrap();
                let better = prof.iter().filter(|r| r[1] <= r[0]).count();
                residual_fraction = better as f64 / prof.len() as f64;
            }
        }
    }
    let mean = |xs: &[f64; 3]| xs.iter().sum::<f64>() / 3.0;
    let (m1, m2) = (mean(&accs[0]), mean(&accs[1]));
    println!(
        "info: K=2 inner residual non-increasing on {:.0}% of timesteps (reported, not asserted)",
        100.0 * residual_fraction
    );
    report(
        3,
        "exemplar K=2 mean accuracy >= K=1 mean accuracy - 0.002",
        m2 >= m1 - 0.002,
        &format!(
            "mean K=1 = {m1:.4} {:?}, mean K=2 = {m2:.4} {:?}, improvement {:+.4}",
            accs[0],
            accs[1],
            m2 - m1
        ),
    );
}

#[test]
fn c04_inexact_newton_linear_rate() {
    let a = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -2.0]]).unwrap();
    let eta = 0.4;
    // tau = ||I + eta A||_2 from the power-iteration estimate.
    let mut m = DenseMatrix::identity(2);
    for i in 0..2 {
        m[(i, i)] += eta * a[(i, i)];
    }
    let tau = spectral_norm(&m, 1000, 1e-13).unwrap().value;

    // z* = 0 keeps every iterate purely multiplicative, so the measured
    // ratios stay meaningful over the whole horizon.
    let z_star = DenseVector::zeros(2);
    let sys = ResidualSystem::linear(a, z_star.clone());
    let z0 = DenseVector::from_slice(&[1.0, 2.0]);
    let (_, trace) = inexact_newton_solve(&sys, &z0, &[eta], 25, 0.0, false).unwrap();
    assert_eq!(trace.iterates.len(), 26);

    let mut worst_rate: f64 = 0.0;
    let mut worst_c1: f64 = 0.0;
    let mut worst_c2: f64 = 0.0;
    for k in 1..trace.iterates.len() {
        let prev = sub(&trace.iterates[k - 1], &z_star);
        let cur = sub(&trace.iterates[k], &z_star);
        worst_rate = worst_rate.max(cur.norm2() - tau * prev.norm2());
        worst_c1 = worst_c1.max((cur[0] / prev[0] - 0.6).abs());
        worst_c2 = worst_c2.max((cur[1] / prev[1] - 0.2).abs());
    }
    let pass = worst_rate <= 1e-12 && worst_c1 <= 1e-12 && worst_c2 <= 1e-12;
    report(
        4,
        "linear rate ||e_{k+1}|| <= tau ||e_k|| with per-coordinate ratios 0.6 / 0.2",
        pass,
        &format!(
            "tau = {tau:.12}, max excess {worst_rate:.2e}, ratio errors {worst_c1:.2e} / {worst_c2:.2e} over 25 steps"
        ),
    );
}

#[test]
fn c05_phi_divergence_and_residuals() {
    // Independent oracle: plain fixed-point iteration of h <- tanh(h + a),
    // a contraction for a != 0.
    let oracle = |alpha: f64| {
        let mut h = 0.0;
        for _ in 0..400 {
            h = (h + alpha).tanh();
        }
        h
    };
    let curve = phi_curve(-3.0, 3.0, 601, 1e-12).unwrap();
    let max_residual = curve
        .iter()
        .map(|p| (p.phi - (p.phi + p.alpha).tanh()).abs())
        .fold(0.0f64, f64::max);
    let d4 = phi_derivative(1e-4, 1e-13).unwrap();
    let d6 = phi_derivative(1e-6, 1e-13).unwrap();
    let phi1 = phi_scalar(1.0, 1e-12);
    let gap = (phi1 - oracle(1.0)).abs();
    let pass = max_residual <= 1e-10 && d4 > 100.0 && d6 > 2000.0 && gap <= 1e-4;
    report(
        5,
        "phi sweep residuals and unbounded derivative at the origin",
        pass,
        &format!(
            "max residual {max_residual:.2e}; dphi(1e-4)={d4:.1}; dphi(1e-6)={d6:.1}; \
             phi(1)={phi1:.6} vs oracle gap {gap:.2e}"
        ),
    );
}

#[test]
fn c06_neumann_approximation() {
    let n = 3;
    let mut rng = Xoshiro256::seed_from(0xA11CE);
    let v = DenseMatrix::from_fn(n, n, |_, _| rng.next_range(-1.0, 1.0));
    let w = DenseMatrix::from_fn(n, 2, |_, _| rng.next_range(-1.0, 1.0));
    let b = DenseVector::from_slice(&[0.3, -0.2, 0.5]);
    let h_prev = DenseVector::from_slice(&[0.4, 0.1, -0.6]);
    let x = DenseVector::from_slice(&[1.2, -0.7]);

    let mut rels = Vec::new();
    for c in [0.2, 0.1, 0.05] {
        let u = DenseMatrix::from_fn(n, n, |i, j| if i == j { c } else { 0.0 });
        let exact = linear_fixed_point_exact(&u, &v, &w, &b, &h_prev, &x).unwrap();
        let approx = linear_fixed_point_approx(&u, &v, &w, &b, &h_prev, &x);
        let rel = sub(&exact, &approx).norm2() / exact.norm2();
        let bound = c * c / (1.0 - c);
        assert!(rel <= bound, "relative error {rel} exceeds bound {bound} at c={c}");
        rels.push(rel);
    }
    let r1 = rels[0] / rels[1];
    let r2 = rels[1] / rels[2];
    let pass = (r1 - 4.0).abs() <= 0.5 && (r2 - 4.0).abs() <= 0.5;
    report(
        6,
        "Neumann gap shrinks quadratically (ratio 4 +- 0.5 per halving, within c^2/(1-c))",
        pass,
        &format!(
            "rel errors {:.5e} / {:.5e} / {:.5e}, ratios {r1:.3} and {r2:.3}",
            rels[0], rels[1], rels[2]
        ),
    );
}

#[test]
fn c07_fastrnn_reduction() {
    let mut rng = Xoshiro256::seed_from(0xFA57);
    let mut max_bits_diff = 0u64;
    for case in 0..100u64 {
        let n = 1 + (case as usize % 6);
        let d = 1 + (case as usize % 4);
        let mut cfg = ModelConfig::new(CellKind::FastRnn, n, d, 1);
        cfg.seed = case;
        cfg.eta_init = rng.next_range(-0.5, 1.5);
        let mut pf = ErnnParams::init(&cfg).unwrap();
        for slot in pf.tensor_mut(TensorId::B) {
            *slot = rng.next_gaussian();
        }
        let mut pe = pf.clone();
        pe.cell_kind = CellKind::ErnnExemplar;
        let h_prev = DenseVector::from_slice(
            &(0..n).map(|_| rng.next_gaussian()).collect::<Vec<_>>(),
        );
        let x: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        let (hf, _) = fastrnn_step(&pf, 0, &h_prev, &x);
        let (he, _) = ernn_exemplar_step(&pe, 0, &h_prev, &x, 1);
        for (a, b) in hf.iter().zip(he.iter()) {
            max_bits_diff = max_bits_diff.max(a.to_bits().abs_diff(b.to_bits()));
        }
    }
    report(
        7,
        "fastrnn_step == ernn_exemplar_step(U=0, K=1) bitwise on 100 random instances",
        max_bits_diff == 0,
        &format!("max representation difference {max_bits_diff} ulps"),
    );
}

#[test]
fn c08_gradient_exactness() {
    let mut rng = Xoshiro256::seed_from(0x6AD);
    let mut worst_tanh: f64 = 0.0;
    let mut worst_relu: f64 = 0.0;
    let mut instances = 0;
    let kinds = [
        (CellKind::VanillaRnn, Activation::Tanh),
        (CellKind::ErnnToy, Activation::Tanh),
        (CellKind::ErnnExemplar, Activation::Tanh),
        (CellKind::ErnnExemplar, Activation::Relu),
        (CellKind::FastRnn, Activation::Relu),
    ];
    'outer: for round in 0..4u64 {
        for (cell, act) in kinds {
            let mut attempt = 0u64;
            loop {
                let n = 2 + rng.next_below(5); // 2..=6
                let d = 1 + rng.next_below(3);
                let t_len = 1 + rng.next_below(6); // 1..=6
                let k = match cell {
                    CellKind::VanillaRnn | CellKind::FastRnn => 1,
                    _ => 1 + rng.next_below(3), // 1..=3
                };
                let mut cfg = ModelConfig::new(cell, n, d, t_len);
                cfg.activation = act;
                cfg.inner_steps = k;
                cfg.class_count = 3;
                cfg.eta_init = 0.3;
                cfg.seed = round * 1000 + attempt;
                let mut params = ErnnParams::init(&cfg).unwrap();
                for id in [TensorId::B, TensorId::ClassifierBias] {
                    for slot in params.tensor_mut(id) {
                        *slot = 0.3 * rng.next_gaussian();
                    }
                }
                if params.cell_kind.uses_eta() {
                    for slot in params.tensor_mut(TensorId::Eta) {
                        *slot = rng.next_range(-0.2, 0.8);
                    }
                }
                let xs: Vec<f64> = (0..t_len * d).map(|_| rng.next_gaussian()).collect();
                let view = SequenceView::new(&xs, t_len, d);
                if act == Activation::Relu {
                    // Kink filter: resample when any preactivation is
                    // within 1e-3 of the relu corner.
                    let fwd = forward_sequence(&params, &view);
                    let clear = fwd
                        .tape
                        .steps
                        .iter()
                        .all(|s| s.pre.iter().all(|g| g.iter().all(|v| v.abs() > 1e-3)));
                    if !clear {
                        attempt += 1;
                        continue;
                    }
                }
                let label = rng.next_below(3);
                let err = finite_diff_gradcheck(&params, &view, label, 1e-5).unwrap();
                match act {
                    Activation::Tanh => worst_tanh = worst_tanh.max(err),
                    Activation::Relu => worst_relu = worst_relu.max(err),
                }
                instances += 1;
                if instances >= 20 {
                    break 'outer;
                }
                break;
            }
        }
    }
    let pass = worst_tanh <= 1e-5 && worst_relu <= 1e-4;
    report(
        8,
        "gradcheck over 20 random instances (tanh <= 1e-5, kink-filtered relu <= 1e-4)",
        pass,
        &format!("worst tanh {worst_tanh:.2e}, worst relu {worst_relu:.2e}"),
    );
}

#[test]
fn c09_reproducibility() {
    let run = || {
        let ds = gen_random_walks(150, 12, SIGMA0, SIGMA1, 99).unwrap();
        let (train_set, test_set) = split(&ds, 0.5, 99).unwrap();
        let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 6, 2, 12);
        cfg.seed = 99;
        let params = ErnnParams::init(&cfg).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 32,
            seed: 99,
            ..TrainConfig::default()
        };
        let out = train(params, &train_set, &test_set, &config).unwrap();
        let losses: Vec<f64> = out.records.iter().map(|r| r.train_loss).collect();
        let mut ckpt = Vec::new();
        save_checkpoint(&out.params, &mut ckpt).unwrap();
        (ds, losses, ckpt)
    };
    let (ds_a, losses_a, ckpt_a) = run();
    let (ds_b, losses_b, ckpt_b) = run();
    let pass = ds_a == ds_b && losses_a == losses_b && ckpt_a == ckpt_b;
    report(
        9,
        "same seed => bit-identical dataset, loss trace, and checkpoint bytes",
        pass,
        &format!(
            "dataset {}, losses {}, checkpoint bytes {}",
            ds_a == ds_b,
            losses_a == losses_b,
            ckpt_a == ckpt_b
        ),
    );
}

#[test]
fn c10_diagnostics_invariants() {
    // (a) Distance trace ends at exactly 0 and is nonnegative, from a real
    // training run's checkpoint store.
    let ds = gen_random_walks(60, 8, SIGMA0, SIGMA1, 5).unwrap();
    let (train_set, test_set) = split(&ds, 0.5, 5).unwrap();
    let mut cfg = ModelConfig::new(CellKind::ErnnExemplar, 4, 2, 8);
    cfg.seed = 5;
    let params = ErnnParams::init(&cfg).unwrap();
    let config = TrainConfig {
        epochs: 4,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(params, &train_set, &test_set, &config).unwrap();
    let h1 = model_distance_trace_store(&out.checkpoints).unwrap();
    let h1_ok = *h1.last().unwrap() == 0.0 && h1.iter().all(|&d| d >= 0.0);

    // (b) Discriminability ratio is invariant to scaling all hidden states
    // by 3 (relu positive homogeneity through W and b).
    let mut scaled = out.params.clone();
    for id in [TensorId::W, TensorId::B] {
        for v in scaled.tensor_mut(id) {
            *v *= 3.0;
        }
    }
    let base = discriminability_trace(&out.params, &test_set).unwrap();
    let after = discriminability_trace(&scaled, &test_set).unwrap();
    let h2_gap = base
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // (c) Eta least-squares residuals are orthogonal to (1, t).
    let mut p = out.params;
    let mut rng = Xoshiro256::seed_from(31);
    for v in p.tensor_mut(TensorId::Eta) {
        *v = rng.next_range(-0.2, 0.4);
    }
    let rep = eta_report(&p);
    let fit = rep.fits[0];
    let mut r_sum = 0.0;
    let mut rt_sum = 0.0;
    for t in 0..p.seq_len() {
        let x = (t + 1) as f64;
        let r = p.eta[(t, 0)] - (fit.slope * x + fit.intercept);
        r_sum += r;
        rt_sum += r * x;
    }
    let eta_ok = r_sum.abs() <= 1e-8 && rt_sum.abs() <= 1e-8;

    let pass = h1_ok && h2_gap <= 1e-10 && eta_ok;
    report(
        10,
        "diagnostics invariants (h1 final 0; h2 scale-invariant at c=3; eta residuals orthogonal)",
        pass,
        &format!(
            "h1 final {} ok={h1_ok}; h2 max gap {h2_gap:.2e}; eta residual sums {:.2e}/{:.2e}",
            h1.last().unwrap(),
            r_sum,
            rt_sum
        ),
    );
}
