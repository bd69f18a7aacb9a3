use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oosm_core::harness::{self, HarnessError, Theorem1Params};
use oosm_core::ScenarioConfig;

/// Monte-Carlo benchmarks for particle filters with out-of-sequence
/// measurements.
#[derive(Parser)]
#[command(name = "oosm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmarked filters and write rms.csv and stats.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated filters: PFall, PFmis, SEPF-EKS, PF-GS, PF-SEL, or "all".
        #[arg(long, default_value = "all")]
        filters: String,
    },
    /// Sweep the selective filter's cost budget and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated budgets; defaults to `c_ave_sweep` from the config.
        #[arg(long, value_delimiter = ',')]
        c_ave: Option<Vec<f64>>,
    },
    /// Compare exact and block-diagonal utilities on random linear
    /// systems and write theorem1.csv.
    Theorem1 {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        systems: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        sigmas: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the default scenario config as JSON.
    Config,
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON); missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_path(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.runs = runs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { common, filters } => {
            let cfg = common.scenario()?;
            let filters = harness::parse_filters(&filters)?;
            let report = harness::run_benchmark(&cfg, &filters)?;
            harness::write_file(&common.out, "rms.csv", &harness::rms_csv(&report))?;
            harness::write_file(&common.out, "stats.csv", &harness::stats_csv(&report))?;
            print_summary(&report);
            announce(&common.out, &["rms.csv", "stats.csv"]);
        }
        Command::Sweep { common, c_ave } => {
            let cfg = common.scenario()?;
            let c_aves = c_ave.unwrap_or_else(|| cfg.c_ave_sweep.clone());
            let points = harness::complexity_sweep(&cfg, &c_aves)?;
            let csv = harness::sweep_csv(&points, &cfg.sweep_report_steps);
            harness::write_file(&common.out, "sweep.csv", &csv)?;
            println!("{:>8} {:>12} {:>12}", "c_ave", "sweeps/step", "mean rms");
            for p in &points {
                println!(
                    "{:>8} {:>12.4} {:>12.2}",
                    harness::fmt_sig(p.c_ave),
                    p.report.sweeps_per_step,
                    p.report.mean_rms(1, p.report.rms.len())
                );
            }
            announce(&common.out, &["sweep.csv"]);
        }
        Command::Theorem1 {
            seed,
            systems,
            sigmas,
            out,
        } => {
            let params = Theorem1Params {
                seed,
                systems,
                sigmas,
                ..Theorem1Params::default()
            };
            let rows = harness::theorem1_study(&params)?;
            harness::write_file(&out, "theorem1.csv", &harness::theorem1_csv(&rows))?;
            announce(&out, &["theorem1.csv"]);
        }
        Command::Config => {
            let json = serde_json::to_string_pretty(&ScenarioConfig::default())
                .expect("config serializes");
            println!("{json}");
        }
    }
    Ok(())
}

fn print_summary(report: &harness::RunReport) {
    println!(
        "{} runs x {} steps; {} measurements generated, {} dropped",
        report.runs, report.steps, report.generated, report.dropped
    );
    println!(
        "{:<9} {:>10} {:>10} {:>10} {:>8} {:>11}",
        "filter", "rms 10-40", "adm(grp)", "adm(ind)", "garp", "sweeps/step"
    );
    for f in &report.filters {
        let from = 10.min(f.rms.len());
        println!(
            "{:<9} {:>10.2} {:>10.4} {:>10.4} {:>8.4} {:>11.4}",
            f.kind.name(),
            f.mean_rms(from, f.rms.len()),
            f.admitted_frac_groups,
            f.admitted_frac_individual,
            f.garp_frac,
            f.sweeps_per_step
        );
    }
}

fn announce(dir: &Path, files: &[&str]) {
    for f in files {
        eprintln!("wrote {}", dir.join(f).display());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
