use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dscfl::harness::{
    build_groups, emit_report, load_run, prepare, run_experiment, save_run, ChannelMode, MetricsLog, ReportFormat,
    RunConfig, Scenario,
};
use dscfl::theory::{BoundParams, BoundReport};

#[derive(Parser)]
#[command(name = "dscfl", version, about = "Hierarchical wireless federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario and write metrics, groups and traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// dsc, data-only, comm-only or fedavg.
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// ideal or noisy.
        #[arg(long)]
        channel: Option<ChannelMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster only and print the group structure as JSON.
    Cluster {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
    },
    /// Evaluate the convergence bound against a finished run.
    Bound {
        /// Run directory written by `run`.
        #[arg(long)]
        trace: PathBuf,
        /// Strong-convexity constant; taken from the run for the quadratic dataset.
        #[arg(long)]
        mu: Option<f64>,
        /// Smoothness constant; taken from the run for the quadratic dataset.
        #[arg(long)]
        lipschitz: Option<f64>,
        /// Initial optimality gap; defaults to the initial loss minus the optimum.
        #[arg(long)]
        initial_gap: Option<f64>,
    },
    /// Render metrics from one or more run directories.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// csv or svg.
        #[arg(long, default_value = "svg")]
        format: ReportFormat,
        /// Output directory; defaults to the first input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(
    config: &Path,
    scenario: Option<Scenario>,
    seed: Option<u64>,
    rounds: Option<usize>,
    channel: Option<ChannelMode>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(r) = rounds {
        cfg.rounds = r;
    }
    if let Some(c) = channel {
        cfg.channel = c;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.scenario.name(), cfg.master_seed)));
    let log = run_experiment(&cfg)?;
    save_run(&log, &cfg, &dir)?;
    let last = log.records.last();
    println!(
        "{}: {} rounds, {} groups, final loss {}, final accuracy {} -> {}",
        cfg.scenario.name(),
        log.records.len(),
        log.grouping.groups.groups.len(),
        last.map_or("n/a".into(), |r| format!("{:.6}", r.train_loss)),
        log.final_accuracy().map_or("n/a".into(), |a| format!("{a:.4}")),
        dir.display()
    );
    if let Some(f) = &log.failure {
        bail!("run stopped early: {f}");
    }
    Ok(())
}

fn cluster(config: &Path, scenario: Option<Scenario>) -> Result<()> {
    let cfg = load_config(config)?;
    let setup = prepare(&cfg)?;
    let grouping = build_groups(&setup, scenario.unwrap_or(cfg.scenario), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&grouping)?);
    Ok(())
}

fn bound(dir: &Path, mu: Option<f64>, lipschitz: Option<f64>, initial_gap: Option<f64>) -> Result<()> {
    let log = load_run(dir).with_context(|| format!("reading run {}", dir.display()))?;
    let quad = log.quadratic;
    let mu = mu.or(quad.map(|q| q.mu)).context("--mu is required for non-quadratic runs")?;
    let lipschitz = lipschitz.or(quad.map(|q| q.lipschitz)).context("--lipschitz is required for non-quadratic runs")?;
    let f_star = quad.map(|q| q.f_star);
    let initial_gap = match (initial_gap, f_star) {
        (Some(g), _) => g,
        (None, Some(f)) => log.initial_loss - f,
        (None, None) => bail!("--initial-gap is required for non-quadratic runs"),
    };
    let factors = log.factors.clone().context("the run has no completed rounds")?;
    let params = BoundParams {
        mu,
        lipschitz,
        lambda: log.learning_rate,
        delta_intra: factors.delta_intra,
        delta_inter: factors.delta_inter,
        sigma_intra: factors.sigma_intra,
        sigma_inter: factors.sigma_inter,
        weights: factors.weights,
        initial_gap,
    };
    let gaps: Option<Vec<f64>> = f_star.map(|f| {
        std::iter::once(log.initial_loss).chain(log.records.iter().map(|r| r.train_loss)).map(|l| l - f).collect()
    });
    let report = BoundReport::new(params, log.records.len().max(1), gaps.as_deref())?;
    let path = dir.join("bound.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "A = {:.6}{}, lambda = {}, lambda_max = {:.6}, violations = {} -> {}",
        report.a,
        if report.divergent { " (divergent)" } else { "" },
        report.lambda,
        report.lambda_max,
        report.violations(1e-9).len(),
        path.display()
    );
    Ok(())
}

fn report(inputs: &[PathBuf], format: ReportFormat, out: Option<PathBuf>) -> Result<()> {
    let logs: Vec<(String, MetricsLog)> = inputs
        .iter()
        .map(|d| {
            let log = load_run(d).with_context(|| format!("reading run {}", d.display()))?;
            let name = d.file_name().map_or_else(|| log.scenario.name().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, log))
        })
        .collect::<Result<_>>()?;
    let out = out.unwrap_or_else(|| inputs[0].clone());
    let path = emit_report(&logs, format, &out)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, scenario, seed, rounds, channel, out } => run(&config, scenario, seed, rounds, channel, out),
        Command::Cluster { config, scenario } => cluster(&config, scenario),
        Command::Bound { trace, mu, lipschitz, initial_gap } => bound(&trace, mu, lipschitz, initial_gap),
        Command::Report { input, format, out } => report(&input, format, out),
    }
}
