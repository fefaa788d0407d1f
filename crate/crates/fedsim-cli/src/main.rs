//! Command line front end: dataset generation, single runs, learning-rate
//! sweeps, experiment grids, the verification suite and chart rendering.
//!
//! Exit codes: 0 success, 2 divergence, 3 budget violation, 4 configuration
//! error, 1 anything else.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedsim::harness::{
    self, experiment_grid, run, sweep_eta, write_grid_outputs, GridConfig, HarnessError,
    RunConfig, Series, DEFAULT_ETA_GRID,
};
use fedsim::problems::{
    export_dataset, export_test_set, gen_classification, mlp_objective, ClassPartitionConfig,
    DEFAULT_L2,
};
use fedsim::record::RunStatus;
use fedsim::verify::run_suite;

const EXIT_OK: i32 = 0;
const EXIT_OTHER: i32 = 1;
const EXIT_DIVERGED: i32 = 2;
const EXIT_BUDGET: i32 = 3;
const EXIT_CONFIG: i32 = 4;

#[derive(Parser)]
#[command(name = "fedsim", about = "Deterministic federated optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a partitioned classification dataset in the flat binary
    /// format.
    GenData {
        /// Workers; equals the class count.
        #[arg(long, default_value_t = 10)]
        workers: usize,
        #[arg(long, default_value_t = 100)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 50)]
        features: usize,
        /// Dominant-class fraction in [1/P, 1].
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train partition output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional held-out test set output path.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Execute one run configuration (JSON) and write records + summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Record format: csv or jsonl.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Also write the per-repeat fabric traces (JSON lines).
        #[arg(long)]
        trace: bool,
    },
    /// Sweep the learning rate over a grid and report the stability-optimal
    /// choice.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated grid; the paper grid by default.
        #[arg(long)]
        etas: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a full experiment grid (JSON config) and emit views + charts.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the estimator property checks; exit 0 iff all pass.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional JSON-lines report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a summary CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of train_loss, train_acc, test_loss, test_acc, grad_norm2.
        #[arg(long, default_value = "train_loss")]
        metric: String,
        #[arg(long)]
        log_y: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli));
}

fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::GenData {
            workers,
            samples_per_class,
            features,
            q,
            label_noise,
            seed,
            out,
            test_out,
        } => gen_data(
            workers,
            samples_per_class,
            features,
            q,
            label_noise,
            seed,
            out,
            test_out,
        ),
        Command::Run {
            config,
            seed,
            out_dir,
            format,
            trace,
        } => cmd_run(config, seed, out_dir, format, trace),
        Command::Sweep {
            config,
            etas,
            seed,
            out_dir,
        } => cmd_sweep(config, etas, seed, out_dir),
        Command::Grid {
            config,
            seed,
            out_dir,
        } => cmd_grid(config, seed, out_dir),
        Command::Verify { seed, out } => cmd_verify(seed, out),
        Command::Plot {
            input,
            out,
            metric,
            log_y,
        } => cmd_plot(input, out, metric, log_y),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) | HarnessError::Json(_) | HarnessError::Problem(_) => {
                    EXIT_CONFIG
                }
                HarnessError::Run(fedsim::cluster::RunError::InvalidParams(_))
                | HarnessError::Run(fedsim::cluster::RunError::Incompatible(_)) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gen_data(
    workers: usize,
    samples_per_class: usize,
    features: usize,
    q: f64,
    label_noise: f64,
    seed: u64,
    out: PathBuf,
    test_out: Option<PathBuf>,
) -> Result<i32, HarnessError> {
    let cfg = ClassPartitionConfig {
        q,
        num_classes: workers,
        samples_per_class,
        feature_dim: features,
        label_noise,
    };
    // The binary format stores data only; the model family is irrelevant
    // here but required to assemble the problem.
    let model = mlp_objective(1, DEFAULT_L2)?;
    let (problem, summary) = gen_classification(&cfg, &model, seed)?;
    export_dataset(&problem, &out)?;
    println!(
        "wrote {} ({} workers x {} examples, {} discarded by the split)",
        out.display(),
        workers,
        summary.per_worker,
        summary.discarded
    );
    if let Some(test_path) = test_out {
        export_test_set(&problem, &test_path)?;
        println!("wrote {}", test_path.display());
    }
    Ok(EXIT_OK)
}

fn read_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut config: RunConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn status_exit(statuses: &[RunStatus]) -> i32 {
    if statuses.iter().any(|s| *s == RunStatus::BudgetViolation) {
        EXIT_BUDGET
    } else if statuses.iter().any(|s| *s == RunStatus::Diverged) {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    }
}

fn cmd_run(
    config: PathBuf,
    seed: Option<u64>,
    out_dir: PathBuf,
    format: String,
    trace: bool,
) -> Result<i32, HarnessError> {
    let config = read_config(&config, seed)?;
    let output = run(&config)?;
    std::fs::create_dir_all(&out_dir)?;
    for (i, repeat) in output.repeats.iter().enumerate() {
        let (ext, body) = match format.as_str() {
            "jsonl" => ("jsonl", repeat.record.to_jsonl()),
            "csv" => ("csv", repeat.record.to_csv()),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown format '{other}' (expected csv or jsonl)"
                )))
            }
        };
        let path = out_dir.join(format!("run_r{i}.{ext}"));
        std::fs::write(&path, body)?;
        if trace {
            let path = out_dir.join(format!("trace_r{i}.jsonl"));
            std::fs::write(&path, repeat.ledger.to_jsonl())?;
        }
    }
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, output.summary.to_csv())?;
    for (i, repeat) in output.repeats.iter().enumerate() {
        let last = repeat.record.rows.last();
        println!(
            "repeat {i}: status {} rounds {} train_loss {}",
            repeat.record.status.as_str(),
            last.map(|r| r.round).unwrap_or(0),
            last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        );
    }
    println!("wrote {}", summary_path.display());
    Ok(status_exit(&output.statuses()))
}

fn cmd_sweep(
    config: PathBuf,
    etas: Option<String>,
    seed: Option<u64>,
    out_dir: PathBuf,
) -> Result<i32, HarnessError> {
    let config = read_config(&config, seed)?;
    let etas: Vec<f64> = match etas {
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| HarnessError::Config(format!("bad eta '{v}': {e}")))
            })
            .collect::<Result<_, _>>()?,
        None => DEFAULT_ETA_GRID.to_vec(),
    };
    let outcome = sweep_eta(&config, &etas)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut csv = String::from("eta,criterion,statuses\n");
    for o in &outcome.per_eta {
        let statuses: Vec<&str> = o.statuses.iter().map(|s| s.as_str()).collect();
        csv.push_str(&format!("{},{},{}\n", o.eta, o.criterion, statuses.join("|")));
        std::fs::write(
            out_dir.join(format!("sweep_eta{}.summary.csv", o.eta)),
            o.summary.to_csv(),
        )?;
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    match outcome.chosen {
        Some(eta) => {
            println!("chosen eta: {eta}");
            Ok(EXIT_OK)
        }
        None => {
            println!("no stable eta: every candidate diverged");
            Ok(EXIT_DIVERGED)
        }
    }
}

fn cmd_grid(config: PathBuf, seed: Option<u64>, out_dir: PathBuf) -> Result<i32, HarnessError> {
    let text = std::fs::read_to_string(&config)?;
    let mut grid: GridConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        grid.base.seed = s;
    }
    let output = experiment_grid(&grid)?;
    let written = write_grid_outputs(&grid, &output, &out_dir)?;
    let mut failed = 0;
    for (key, outcome) in &output.cells {
        if let harness::CellOutcome::Failed(e) = outcome {
            eprintln!("cell {} q={} B={} failed: {e}", key.algorithm, key.q, key.budget);
            failed += 1;
        }
    }
    println!(
        "grid complete: {} cells, {} failed, {} files",
        output.cells.len(),
        failed,
        written.len()
    );
    Ok(if failed == 0 { EXIT_OK } else { EXIT_OTHER })
}

fn cmd_verify(seed: u64, out: Option<PathBuf>) -> Result<i32, HarnessError> {
    let reports = run_suite(seed);
    let mut all_pass = true;
    for report in &reports {
        println!("{}", report.summary_line());
        all_pass &= report.passed();
    }
    if let Some(path) = out {
        let mut body = String::new();
        for report in &reports {
            body.push_str(&serde_json::to_string(report)?);
            body.push('\n');
        }
        std::fs::write(&path, body)?;
        println!("wrote {}", path.display());
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_OTHER })
}

fn cmd_plot(
    input: PathBuf,
    out: PathBuf,
    metric: String,
    log_y: bool,
) -> Result<i32, HarnessError> {
    let text = std::fs::read_to_string(&input)?;
    let summary = harness::RunSummary::from_csv(&text)?;
    let pick = |m: &harness::MetricStats| -> f64 {
        match metric.as_str() {
            "train_loss" => m.train_loss,
            "train_acc" => m.train_acc,
            "test_loss" => m.test_loss,
            "test_acc" => m.test_acc,
            "grad_norm2" => m.grad_norm2,
            _ => f64::NAN,
        }
    };
    if summary.rows.iter().all(|r| pick(&r.mean).is_nan()) {
        return Err(HarnessError::Config(format!(
            "metric '{metric}' is undefined in {}",
            input.display()
        )));
    }
    let series = vec![Series {
        label: metric.clone(),
        points: summary
            .rows
            .iter()
            .map(|r| (r.round as f64, pick(&r.mean)))
            .collect(),
        band: Some(
            summary
                .rows
                .iter()
                .map(|r| {
                    (
                        r.round as f64,
                        pick(&r.mean) - pick(&r.std),
                        pick(&r.mean) + pick(&r.std),
                    )
                })
                .collect(),
        ),
    }];
    let svg = harness::line_chart(
        &format!("{metric} vs communication rounds"),
        "communication round",
        &metric,
        &series,
        log_y,
    );
    std::fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}
