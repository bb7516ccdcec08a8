//! `audit`: command-line front end for the membership-inference audit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mia_forge::accountant::{calibrate_sigma, epsilon_for, AccountantQuery};
use mia_forge::data::generate_scenario;
use mia_forge::eval::{validate_report, Report};
use mia_forge::fl::{export_curves, run_federated, split_population, FlConfig};
use mia_forge::pipeline::{
    attack_external, fl_population, fl_privacy, run_all, write_scenario, RunConfig, SEED_FL,
};
use mia_forge::stacking::write_decisions_csv;
use mia_forge::util::{init_threads_from_env, mix_seed};

#[derive(Parser)]
#[command(name = "audit", version, about = "Membership-inference audit for federated classifiers")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated tier names (e.g. nodp,lowdp,highdp).
    #[arg(long, global = true, value_delimiter = ',')]
    tiers: Option<Vec<String>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic scenario (pools and hidden ground truth).
    Generate,
    /// Train targets per tier, run all attacks, simulate FL and write the report.
    RunAll,
    /// Run the stacking attack on exported prediction files.
    AttackExternal {
        /// Directory written by `generate` (or `<out>/pools` of a run).
        #[arg(long)]
        pools: PathBuf,
        /// Directory holding `client{c}.csv` prediction files.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// FedAvg simulation for one tier.
    FlSim {
        #[arg(long)]
        tier: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Privacy accounting: epsilon for a noise level, or the noise for a budget.
    Accountant {
        #[arg(long, conflicts_with = "epsilon")]
        sigma: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
    /// Validate a report and print its accuracy table.
    Report {
        /// Defaults to `<out>/report.json`.
        path: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = &cli.tiers {
        cfg.select_tiers(t)?;
    }
    Ok(cfg)
}

fn print_accuracy_table(report: &Report) {
    println!("random floor {:.4}", report.scenario.random_floor);
    println!("{:<10} {:<16} {:>8} {:>8} {:>8}", "tier", "attack", "acc", "tpr@1%", "tpr@3%");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for t in &report.tiers {
        for a in &t.attacks {
            println!(
                "{:<10} {:<16} {:>8.4} {:>8} {:>8}",
                t.tier,
                a.attack,
                a.challenge_accuracy,
                opt(a.tpr_at_1pct_fpr),
                opt(a.tpr_at_3pct_fpr)
            );
        }
        for f in &t.fl {
            println!("{:<10} fl E={:<11} {:>8.4}", t.tier, f.local_epochs, f.final_accuracy);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads_from_env()?;
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate => {
            cfg.validate()?;
            let seeded = cfg.seeded();
            let bundle = generate_scenario(&seeded.scenario).context("scenario generation")?;
            write_scenario(&bundle, &cfg.output_dir)?;
            println!("client  relevant  external  train");
            for (c, p) in bundle.clients.iter().enumerate() {
                println!("{c:>6}  {:>8}  {:>8}  {:>5}", p.relevant.len(), p.external.len(), p.train.len());
            }
            println!("challenge {}", bundle.challenge.len());
        }
        Command::RunAll => {
            let art = run_all(&cfg)?;
            print_accuracy_table(&art.report);
            println!("report written to {}", cfg.output_dir.join("report.json").display());
        }
        Command::AttackExternal {
            pools,
            predictions,
            percentile,
            lambda,
        } => {
            if let Some(p) = percentile {
                cfg.attack.rule.percentile = p;
            }
            if let Some(l) = lambda {
                cfg.attack.rule.lambda = l;
            }
            cfg.attack.seed = mix_seed(cfg.seed, mia_forge::pipeline::SEED_ATTACK);
            let (_, outcome) = attack_external(&pools, &predictions, &cfg.attack)?;
            std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            write_decisions_csv(&outcome.decisions, &outcome.scores.clients, &cfg.output_dir.join("decisions.csv"))?;
            let prov = cfg.output_dir.join("provenance.json");
            std::fs::write(&prov, serde_json::to_string_pretty(&outcome.provenance)? + "\n")
                .with_context(|| format!("writing {}", prov.display()))?;
            let members = outcome.decisions.iter().filter(|d| d.assignment.is_member()).count();
            println!("{} decisions, {members} assigned to a client", outcome.decisions.len());
        }
        Command::FlSim { tier, epochs, rounds } => {
            if let Some(t) = tier {
                cfg.select_tiers(&[t])?;
            }
            if let Some(e) = epochs {
                cfg.fl.local_epochs = vec![e];
            }
            if let Some(r) = rounds {
                cfg.fl.rounds = r;
            }
            cfg.validate()?;
            let seeded = cfg.seeded();
            let bundle = generate_scenario(&seeded.scenario)?;
            let fl_seed = mix_seed(cfg.seed, SEED_FL);
            let (parts, holdout) =
                split_population(&fl_population(&bundle), bundle.num_clients(), cfg.fl.train_fraction, fl_seed)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            for t in &seeded.tiers {
                for &e in &seeded.fl.local_epochs {
                    let privacy = fl_privacy(t, &seeded.train, &parts, seeded.fl.rounds, e)?;
                    let fc = FlConfig {
                        rounds: seeded.fl.rounds,
                        local_epochs: e,
                        tier: privacy.clone(),
                        train_fraction: seeded.fl.train_fraction,
                        seed: fl_seed,
                    };
                    let logs = run_federated(&parts, &holdout, &seeded.train, &fc)?;
                    let path = cfg.output_dir.join(format!("fl_{}_E{e}.csv", t.name));
                    export_curves(&logs, &t.name, bundle.config.classes, &path)?;
                    println!(
                        "{} E={e} sigma={:.4} final accuracy {:.4} -> {}",
                        t.name,
                        privacy.noise_multiplier,
                        logs.last().unwrap().accuracy,
                        path.display()
                    );
                }
            }
        }
        Command::Accountant {
            sigma,
            epsilon,
            steps,
            delta,
        } => match (sigma, epsilon) {
            (Some(sigma), None) => {
                let eps = epsilon_for(&AccountantQuery { sigma, steps, delta })?;
                println!("epsilon {eps}");
            }
            (None, Some(eps)) => {
                let sigma = calibrate_sigma(eps, steps, delta)?;
                let spent = epsilon_for(&AccountantQuery { sigma, steps, delta })?;
                println!("sigma {sigma}\nepsilon {spent}");
            }
            _ => bail!("give exactly one of --sigma or --epsilon"),
        },
        Command::Report { path } => {
            let p = path.unwrap_or_else(|| cfg.output_dir.join("report.json"));
            let text = read(&p)?;
            let report = validate_report(&text).with_context(|| format!("validating {}", p.display()))?;
            print_accuracy_table(&report);
        }
    }
    Ok(())
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
