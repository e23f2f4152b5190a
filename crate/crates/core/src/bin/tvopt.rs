use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tvopt::adomplus::{auto_consensus_steps, derive_params, effective_chi, theoretical_rate};
use tvopt::harness::{self, ExperimentConfig, ProblemConfig, SweepAxis};
use tvopt::lowerbound::{self, curve_csv, lower_bound_curve};
use tvopt::netmodel::{validate_gossip, GossipSequence};
use tvopt::Error;

#[derive(Parser)]
#[command(name = "tvopt", version, about = "Decentralized optimization over time-varying networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary as JSON.
    Run { config: PathBuf },
    /// Repeat an experiment over values of one axis and print the table as CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check the gossip axioms on the configured schedule.
    ValidateGossip {
        config: PathBuf,
        /// Rounds to check; defaults to one schedule period.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Lower-bound curve for a hard-instance config, optionally certifying an ADOM+ run.
    Lowerbound {
        config: PathBuf,
        #[arg(long)]
        certify: bool,
        /// Write the curve as CSV here.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Largest round index on the curve when not certifying.
        #[arg(long, default_value_t = 1000)]
        q_max: usize,
    },
    /// Print the derived parameter schedule.
    Params {
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        chi: f64,
        /// Consensus steps per iteration; "auto" picks ⌈χ ln 2⌉.
        #[arg(long = "T", default_value = "1")]
        t: String,
    },
}

enum Outcome {
    Ok,
    Failed,
}

fn print_json(value: &impl serde::Serialize) -> tvopt::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cmd: Command) -> tvopt::Result<Outcome> {
    match cmd {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let result = harness::run_experiment(&cfg)?;
            print_json(&result.summary)?;
            let failed = result.summary.certification.as_ref().is_some_and(|c| !c.passed);
            Ok(if failed { Outcome::Failed } else { Outcome::Ok })
        }
        Command::Sweep { config, axis, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = harness::sweep(&cfg, axis, &values)?;
            print!("{}", harness::sweep_csv(&rows));
            Ok(Outcome::Ok)
        }
        Command::ValidateGossip { config, rounds } => {
            let cfg = ExperimentConfig::load(&config)?;
            let schedule = cfg.schedule()?;
            let seq = GossipSequence::new(&schedule)?;
            let chi = match cfg.topology.chi {
                harness::ChiSetting::Declared(c) => c,
                harness::ChiSetting::Keyword(_) => seq.chi()?,
            };
            let rounds = rounds.unwrap_or(schedule.period());
            let mut all = true;
            for q in 0..rounds {
                let w = schedule.gossip(q)?;
                let report = validate_gossip(&w, schedule.edges(q), chi);
                all &= report.all_passed();
                println!("{}", serde_json::to_string(&report)?);
            }
            eprintln!("chi = {chi}, rounds = {rounds}, {}", if all { "all axioms hold" } else { "violations found" });
            Ok(if all { Outcome::Ok } else { Outcome::Failed })
        }
        Command::Lowerbound { config, certify, curve, q_max } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let ProblemConfig::HardInstance { chi, l, mu, .. } = cfg.problem else {
                return Err(Error::Config("lowerbound needs a hard_instance problem".into()));
            };
            let kappa = l / mu;
            let eps = cfg.stop.target_eps.filter(|e| *e > 0.0 && e.is_finite()).unwrap_or(1e-6);
            eprintln!(
                "rho = {}, reference communication count chi*sqrt(kappa)*ln(1/eps) = {:.1}, \
                 reference computation count sqrt(kappa)*ln(1/eps) = {:.1}",
                lowerbound::rho(l, mu),
                lowerbound::communication_reference(chi, kappa, eps),
                lowerbound::computation_reference(kappa, eps),
            );
            let (points, outcome) = if certify {
                cfg.certify = true;
                let result = harness::run_experiment(&cfg)?;
                let report = result.certificate.expect("certification was requested");
                print_json(&harness::CertSummary::from(&report))?;
                let outcome = if report.passed { Outcome::Ok } else { Outcome::Failed };
                (report.curve, outcome)
            } else {
                let points = lower_bound_curve(chi, l, mu, q_max)?;
                (points, Outcome::Ok)
            };
            match curve {
                Some(path) => std::fs::write(path, curve_csv(&points))?,
                None if !certify => print!("{}", curve_csv(&points)),
                None => {}
            }
            Ok(outcome)
        }
        Command::Params { l, mu, chi, t } => {
            let t = match t.as_str() {
                "auto" => auto_consensus_steps(chi),
                other => other
                    .parse()
                    .ok()
                    .filter(|t| *t >= 1)
                    .ok_or_else(|| Error::InvalidArgument(format!("T must be a positive integer or auto, got {other}")))?,
            };
            let chi_eff = effective_chi(chi, t);
            let params = derive_params(l, mu, chi_eff)?;
            print_json(&serde_json::json!({
                "L": l,
                "mu": mu,
                "chi": chi,
                "T": t,
                "chi_eff": chi_eff,
                "rate": theoretical_rate(l, mu, chi_eff),
                "params": params,
            }))?;
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
