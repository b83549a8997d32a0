use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phyauth::harness::{self, csv, selftest, HarnessError, Scenario, ScenarioConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "phyauth", version, about = "Kalman-filter spoofing detection on OFDM channel state information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and write its per-step detection records.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trial index within the master seed's stream.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value = "records.csv")]
        out: PathBuf,
    },
    /// ROC curves of the configured detectors.
    Roc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "roc.csv")]
        out: PathBuf,
    },
    /// Detection rate against SNR.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        /// SNR values in dB, increasing.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5.0, 10.0, 15.0])]
        values: Vec<f64>,
        #[arg(long, default_value = "snr.csv")]
        out: PathBuf,
    },
    /// Detection rate against normalized Doppler.
    SweepDoppler {
        #[command(flatten)]
        common: Common,
        /// Normalized Doppler values f_d T_s, increasing.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 5e-3, 1e-2, 2e-2])]
        values: Vec<f64>,
        #[arg(long, default_value = "doppler.csv")]
        out: PathBuf,
    },
    /// Run the acceptance property suite.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Trials per SNR point for the sweep-based criteria.
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    doppler: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut cfg = ScenarioConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("snr_db", self.snr_db.map(|v| v.to_string())),
            ("doppler", self.doppler.map(|v| v.to_string())),
            ("num_trials", self.trials.map(|v| v.to_string())),
            ("num_steps", self.steps.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for s in &self.sets {
            cfg.set_assignment(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn wrote(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Simulate { common, trial, out } => {
            let cfg = common.resolve()?;
            let result = Scenario::new(&cfg)?.run_trial(trial)?;
            let records: Vec<_> = cfg.detectors.iter().flat_map(|&k| result.records(k).iter().copied()).collect();
            csv::write_records_csv(&records, &cfg.hash(), cfg.seed, &out)?;
            wrote(&out);
        }
        Command::Roc { common, out } => {
            let cfg = common.resolve()?;
            csv::write_roc_csv(&harness::roc(&cfg)?, &out)?;
            wrote(&out);
        }
        Command::SweepSnr { common, values, out } => {
            let cfg = common.resolve()?;
            csv::write_sweep_csv(&harness::sweep(&cfg, SweepAxis::SnrDb, &values)?, &out)?;
            wrote(&out);
        }
        Command::SweepDoppler { common, values, out } => {
            let cfg = common.resolve()?;
            csv::write_sweep_csv(&harness::sweep(&cfg, SweepAxis::NormalizedDoppler, &values)?, &out)?;
            wrote(&out);
        }
        Command::Selftest { seed, trials } => {
            let reports = selftest::run_all(seed, trials, |r| println!("{r}"))?;
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", reports.len() - failed);
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
