// Scratch calibration runs (timings, eta choices). Not part of the suite.

use std::time::Instant;

use fedsim::algorithms::{budget_schedule, AlgoParams};
use fedsim::cluster::FederationConfig;
use fedsim::harness::{run, Algorithm, ProblemSpec, RunConfig};

fn quad_config(algorithm: Algorithm, budget: u64, seed: u64) -> RunConfig {
    let problem = ProblemSpec::Quadratic {
        workers: 10,
        dim: 20,
        zeta: 0.0,
        smoothness: 1.0,
        mu: 0.1,
        sigma2: 1.0,
        examples_per_worker: 64,
    };
    let built = problem.build(seed).unwrap();
    let mut params = budget_schedule(&built, budget);
    if !algorithm.is_local() {
        params.local_steps = 1;
        params.batch = budget;
        params.eta = 0.25;
    }
    RunConfig {
        version: 1,
        algorithm,
        problem,
        params,
        federation: FederationConfig::new(10, budget, seed),
        total_rounds: 3000,
        eval_every: 1,
        target_grad_norm2: Some(1e-6),
        repeats: 5,
        seed,
        repeat_seeds: None,
    }
}

fn mlp_config(algorithm: Algorithm, q: f64, budget: u64, eta: f64, rounds: u64) -> RunConfig {
    let spec = ProblemSpec::Classification {
        q,
        classes: 10,
        samples_per_class: 100,
        feature_dim: 50,
        hidden: 32,
        l2: 5e-3,
        label_noise: 0.0,
    };
    let per_worker = 100;
    let local = algorithm.is_local();
    let params = AlgoParams {
        eta,
        local_steps: if local { budget / 16 } else { 1 },
        batch: if local { 16 } else { budget },
        snapshot_batch: per_worker,
        inner_rounds: 0,
        stages: 0,
        auto_inner_rounds: true,
    };
    RunConfig {
        version: 1,
        algorithm,
        problem: spec,
        params,
        federation: FederationConfig::new(10, budget, 1234),
        total_rounds: rounds,
        eval_every: 20,
        target_grad_norm2: None,
        repeats: 1,
        seed: 1234,
        repeat_seeds: None,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("quad");

    match mode {
        "quad" => {
            for alg in [Algorithm::BvrLSgd, Algorithm::MinibatchSarah] {
                for budget in [64, 256, 1024] {
                    let t0 = Instant::now();
                    let cfg = quad_config(alg, budget, 77);
                    let out = run(&cfg).unwrap();
                    let rounds: Vec<Option<u64>> = out
                        .records()
                        .map(|r| r.rounds_to_target(1e-6))
                        .collect();
                    let mean: f64 = rounds
                        .iter()
                        .map(|r| r.map(|v| v as f64).unwrap_or(f64::NAN))
                        .sum::<f64>()
                        / rounds.len() as f64;
                    println!(
                        "{alg} B={budget}: eta={:.4} rounds_to_eps mean={mean:.1} {:?} ({:.2?})",
                        cfg.params.eta,
                        rounds,
                        t0.elapsed()
                    );
                }
            }
        }
        "mlptime" => {
            let t0 = Instant::now();
            let cfg = mlp_config(Algorithm::BvrLSgd, 0.35, 1024, 0.1, 100);
            let out = run(&cfg).unwrap();
            let last = out.repeats[0].record.rows.last().unwrap();
            println!(
                "bvr 100 rounds: {:.2?}  loss {:.4} acc {:.3} grads {}",
                t0.elapsed(),
                last.train_loss,
                last.train_acc,
                last.cum_grad_evals
            );
        }
        "mlpsweep" => {
            // eta sensitivity per algorithm at q = 0.35, B = 1024.
            let rounds = 200;
            for alg in [
                Algorithm::MinibatchSgd,
                Algorithm::MinibatchSarah,
                Algorithm::LocalSgd,
                Algorithm::Scaffold,
                Algorithm::BvrLSgd,
            ] {
                for eta in [0.01, 0.05, 0.1, 0.5, 1.0] {
                    let t0 = Instant::now();
                    let cfg = mlp_config(alg, 0.35, 1024, eta, rounds);
                    match run(&cfg) {
                        Ok(out) => {
                            let rec = &out.repeats[0].record;
                            let best = rec.best_train_loss();
                            let last = rec.rows.last().unwrap();
                            println!(
                                "{alg} eta={eta}: status={} best_loss={best:.4} last_acc={:.3} ({:.1?})",
                                rec.status.as_str(),
                                last.train_acc,
                                t0.elapsed()
                            );
                        }
                        Err(e) => println!("{alg} eta={eta}: error {e}"),
                    }
                }
            }
        }
        "duel3" => {
            for (alg, eta) in [
                (Algorithm::BvrLSgd, 0.2),
                (Algorithm::Scaffold, 0.1),
                (Algorithm::LocalSgd, 0.1),
            ] {
                for q in [0.35, 0.6, 0.85] {
                    let mut line = format!("{alg} eta={eta} q={q}:");
                    for seed in [1u64, 2] {
                        let mut cfg = mlp_config(alg, q, 1024, eta, 600);
                        cfg.seed = 1234;
                        cfg.repeat_seeds = Some(vec![seed]);
                        match run(&cfg) {
                            Ok(out) => {
                                let rec = &out.repeats[0].record;
                                line.push_str(&format!(" {:.4}({})", rec.best_train_loss(), rec.status.as_str()));
                            }
                            Err(e) => line.push_str(&format!(" ERR({e})")),
                        }
                    }
                    println!("{line}");
                }
            }
        }
        "duel2" => {
            for (alg, eta) in [
                (Algorithm::BvrLSgd, 0.1),
                (Algorithm::BvrLSgd, 0.15),
                (Algorithm::BvrLSgd, 0.2),
                (Algorithm::Scaffold, 0.1),
                (Algorithm::Scaffold, 0.15),
            ] {
                let mut line = format!("{alg} eta={eta}:");
                for seed in [1u64, 2, 3, 4, 5] {
                    let mut cfg = mlp_config(alg, 0.1, 1024, eta, 600);
                    cfg.seed = 1234;
                    cfg.repeat_seeds = Some(vec![seed]);
                    match run(&cfg) {
                        Ok(out) => {
                            let rec = &out.repeats[0].record;
                            line.push_str(&format!(" {:.4}", rec.best_train_loss()));
                        }
                        Err(e) => line.push_str(&format!(" ERR({e})")),
                    }
                }
                println!("{line}");
            }
        }
        "duel" => {
            // bvr vs scaffold at the low-heterogeneity corner.
            for (alg, etas) in [
                (Algorithm::BvrLSgd, [0.05, 0.1, 0.15]),
                (Algorithm::Scaffold, [0.05, 0.1, 0.15]),
            ] {
                for eta in etas {
                    let mut losses = vec![];
                    let t0 = Instant::now();
                    for seed in [1u64, 2, 3] {
                        let mut cfg = mlp_config(alg, 0.1, 1024, eta, 600);
                        cfg.seed = 1234; // same data
                        cfg.repeat_seeds = Some(vec![seed]);
                        match run(&cfg) {
                            Ok(out) => losses.push(out.repeats[0].record.best_train_loss()),
                            Err(e) => { println!("{alg} eta={eta}: error {e}"); }
                        }
                    }
                    let n = losses.len() as f64;
                    let mean = losses.iter().sum::<f64>() / n;
                    let std = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                    println!("{alg} eta={eta}: best_loss mean={mean:.4} std={std:.4} ({:.1?})", t0.elapsed());
                }
            }
        }
        "mlpq" => {
            // Direction check across q with chosen etas.
            let etas = [
                (Algorithm::MinibatchSgd, 1.0),
                (Algorithm::MinibatchSarah, 1.0),
                (Algorithm::LocalSgd, 0.1),
                (Algorithm::Scaffold, 0.1),
                (Algorithm::BvrLSgd, 0.1),
            ];
            for (alg, eta) in etas {
                for q in [0.1, 0.85] {
                    let t0 = Instant::now();
                    let cfg = mlp_config(alg, q, 1024, eta, 600);
                    let out = run(&cfg).unwrap();
                    let rec = &out.repeats[0].record;
                    println!(
                        "{alg} q={q}: best_loss={:.4} status={} ({:.1?})",
                        rec.best_train_loss(),
                        rec.status.as_str(),
                        t0.elapsed()
                    );
                }
            }
        }
        other => eprintln!("unknown pilot mode {other}"),
    }
}
