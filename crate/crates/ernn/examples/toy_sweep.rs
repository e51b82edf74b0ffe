//! Runs the random-walk task end to end for one cell configuration and
//! prints per-seed results. Handy for picking training budgets:
//!
//! ```text
//! cargo run --release -p ernn --example toy_sweep -- \
//!     ernn-toy 1 40 0.01 0,1,2 [n_per_class] [T] [hidden] [half_period] [eta0] [sigma0] [sigma1]
//! ```

use ernn::cells::{CellKind, ModelConfig};
use ernn::data::{gen_random_walks, split};
use ernn::train::{evaluate, train, TrainConfig};
use ernn::ErnnParams;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 5 {
        eprintln!(
            "usage: toy_sweep <cell> <K> <epochs> <lr> <seeds,csv> \
             [n_per_class] [T] [hidden] [half_period] [eta0] [sigma0] [sigma1]"
        );
        std::process::exit(2);
    }
    let cell = match args[0].as_str() {
        "rnn" => CellKind::VanillaRnn,
        "ernn-toy" => CellKind::ErnnToy,
        "ernn" => CellKind::ErnnExemplar,
        "fastrnn" => CellKind::FastRnn,
        other => panic!("unknown cell {other}"),
    };
    let k: usize = args[1].parse().unwrap();
    let epochs: usize = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let seeds: Vec<u64> = args[4].split(',').map(|s| s.parse().unwrap()).collect();
    let n_per_class: usize = args.get(5).map_or(10_000, |s| s.parse().unwrap());
    let t_len: usize = args.get(6).map_or(100, |s| s.parse().unwrap());
    let hidden: usize = args.get(7).map_or(10, |s| s.parse().unwrap());
    let half_period: usize = args.get(8).map_or(50, |s| s.parse().unwrap());
    let eta0: f64 = args.get(9).map_or(1e-2, |s| s.parse().unwrap());
    // Per-step standard deviations. For per-step covariance c·I pass
    // sqrt(c); the reference experiment uses stds (sqrt(0.1), 1).
    let sigma0: f64 = args.get(10).map_or(0.1, |s| s.parse().unwrap());
    let sigma1: f64 = args.get(11).map_or(1.0, |s| s.parse().unwrap());

    for &seed in &seeds {
        let started = std::time::Instant::now();
        let ds = gen_random_walks(n_per_class, t_len, sigma0, sigma1, seed).unwrap();
        let (train_set, test_set) = split(&ds, 0.5, seed).unwrap();
        let mut cfg = ModelConfig::new(cell, hidden, 2, t_len);
        cfg.inner_steps = k;
        cfg.eta_init = eta0;
        cfg.seed = seed;
        let params = ErnnParams::init(&cfg).unwrap();
        let config = TrainConfig {
            learning_rate: lr,
            epochs,
            lr_half_period: half_period,
            seed,
            keep_checkpoints: false,
            ..TrainConfig::default()
        };
        let out = train(params, &train_set, &test_set, &config).unwrap();
        if std::env::var("SWEEP_TRACE").is_ok() {
            for r in &out.records {
                println!(
                    "  epoch {:3}: loss={:.5} acc={:.4}",
                    r.epoch, r.train_loss, r.test_acc
                );
            }
        }
        let acc = evaluate(&out.params, &test_set);
        let loss = out.records.last().map_or(f64::NAN, |r| r.train_loss);
        println!(
            "cell={} K={} seed={} epochs={} lr={} eta0={}: loss={:.5} acc={:.4} [{:.1}s]",
            args[0],
            k,
            seed,
            epochs,
            lr,
            eta0,
            loss,
            acc,
            started.elapsed().as_secs_f64()
        );
    }
}
