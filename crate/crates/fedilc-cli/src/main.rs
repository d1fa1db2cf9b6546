//! Experiment runner: seed-batched runs, lambda sweeps, and the
//! process-separated server/client modes.
//!
//! Configuration comes from a flat `key = value` file (`--config`) with
//! flag overrides on top. Exit codes: 0 success, 1 runtime failure,
//! 2 invalid configuration.

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fedilc::error::Error;
use fedilc::experiment::{run, sweep_lambda, ExperimentConfig};
use fedilc::federation::http::{run_wire_client, serve_experiment};

#[derive(Parser, Debug)]
#[command(name = "fedilc", version, about = "Federated gradient-aggregation experiments")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dataset: color_digits | rotated | synth_spurious | synth_clinical | clinical_csv.
    #[arg(long)]
    dataset: Option<String>,

    /// Algorithm: fed_sgd | geometric | fed_curv | fishr_inter_geo |
    /// fishr_intra_arith | fishr_intra_geo.
    #[arg(long)]
    algo: Option<String>,

    #[arg(long)]
    rounds: Option<usize>,

    /// Fishr regularization strength.
    #[arg(long)]
    lambda: Option<f64>,

    /// Comma-separated seed list, e.g. 1,2,3,4,5.
    #[arg(long)]
    seeds: Option<String>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Extra config overrides as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Sweep mode: comma-separated lambda values.
    #[arg(long)]
    sweep: Option<String>,

    /// Run as the federation server, binding this address (host:port).
    #[arg(long, conflicts_with = "connect")]
    serve: Option<String>,

    /// Run as a federation client against this server URL.
    #[arg(long)]
    connect: Option<String>,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => match &cli.dataset {
            // no file: start from the dataset's preset
            Some(d) => {
                ExperimentConfig::preset(fedilc::experiment::DatasetKind::parse(d)?)
            }
            None => ExperimentConfig::default(),
        },
    };
    if let Some(d) = &cli.dataset {
        cfg.apply("dataset", d)?;
    }
    if let Some(a) = &cli.algo {
        cfg.apply("algo", a)?;
    }
    if let Some(r) = cli.rounds {
        cfg.rounds = r;
    }
    if let Some(l) = cli.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = &cli.seeds {
        cfg.apply("seeds", s)?;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    for kv in &cli.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?} is not key=value")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_lambdas(raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sweep lambda {s:?}")))
        })
        .collect()
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Error> {
    if let Some(url) = &cli.connect {
        let seed = cfg.seeds[0];
        let data = cfg.build_dataset(seed)?;
        let spec = cfg.model_spec(&data)?;
        let id = run_wire_client(url, &data, &spec, &cfg.round_config(seed))?;
        println!("client {id} finished {} rounds", cfg.rounds);
        return Ok(());
    }
    if let Some(addr) = &cli.serve {
        let seed = cfg.seeds[0];
        let data = cfg.build_dataset(seed)?;
        let spec = cfg.model_spec(&data)?;
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Wire(format!("cannot bind {addr}: {e}")))?;
        eprintln!("serving {} clients on {addr}", data.n_clients());
        let log = serve_experiment(&data, &spec, &cfg.round_config(seed), listener)?;
        std::fs::create_dir_all(&cfg.out_dir)?;
        let path = cfg
            .out_dir
            .join(format!("{}_{}_seed{seed}.csv", cfg.dataset, cfg.mode));
        std::fs::write(&path, log.to_csv())?;
        println!("{}", path.display());
        return Ok(());
    }
    if let Some(raw) = &cli.sweep {
        let lambdas = parse_lambdas(raw)?;
        let path = sweep_lambda(cfg, &lambdas)?;
        println!("{}", path.display());
        return Ok(());
    }
    let summary = run(cfg)?;
    let std = summary
        .ood_loss
        .std
        .map_or_else(String::new, |s| format!(" +- {s:.6}"));
    println!(
        "{} {}: min-OOD loss {:.6}{std} over {} seed(s)",
        summary.dataset,
        summary.mode,
        summary.ood_loss.mean,
        summary.outcomes.len()
    );
    println!("{}", summary.summary_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::InvalidSpec(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
