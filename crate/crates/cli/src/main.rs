use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qmeter_cli::config::{
    apply_overrides, ConfigError, Override, Pipeline, ScenarioConfig, StatsSpec,
};
use qmeter_cli::output::Outputs;
use qmeter_cli::pipeline::{self, CliError};
use qmeter_cli::presets;

/// Quantum trajectories of a particle under continuous position and
/// momentum detection.
#[derive(Parser)]
#[command(name = "qmeter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its clicks.
    Trajectory {
        #[command(flatten)]
        common: Common,
        /// Trajectory index (selects the RNG stream).
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run an ensemble and write clicks and binned statistics.
    Ensemble {
        #[command(flatten)]
        common: Common,
    },
    /// Intensities and first-click density of the initial detector.
    Renewal {
        #[command(flatten)]
        common: Common,
    },
    /// Two meters without a Hamiltonian against the closed form.
    TwoDetector {
        #[command(flatten)]
        common: Common,
    },
    /// Dense master equation against MCWF ensemble averages.
    LindbladCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Run the pipeline named in the config or preset.
    Scenario {
        #[command(flatten)]
        common: Common,
    },
    /// List the presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// JSON scenario file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (see `qmeter presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; replaces `run.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `KEY=VALUE` override of a dotted config path; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self, default_preset: &str) -> Result<ScenarioConfig, ConfigError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                ScenarioConfig::from_json(&text)
            }
            (None, Some(name)) => presets::preset(name),
            (None, None) => presets::preset(default_preset),
        }
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn prepare(
    common: &Common,
    default_preset: &str,
    adapt: impl FnOnce(&mut ScenarioConfig),
) -> Result<(ScenarioConfig, Vec<Override>), CliError> {
    let mut cfg = common.load(default_preset)?;
    adapt(&mut cfg);
    if let Some(seed) = common.seed {
        cfg.run.master_seed = seed;
    }
    let overrides = common
        .overrides
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<Override>, _>>()?;
    for o in &overrides {
        eprintln!("override {} = {}", o.key, o.value);
    }
    let cfg = apply_overrides(&cfg, &overrides)?;
    cfg.validate()?;
    Ok((cfg, overrides))
}

fn finish(
    common: &Common,
    cfg: &ScenarioConfig,
    overrides: &[Override],
    out: &Outputs,
) -> Result<(), CliError> {
    out.write(&common.out, cfg, overrides)?;
    eprintln!(
        "wrote {} files to {}",
        out.names().count() + 1,
        common.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(())
        }
        Command::Trajectory { common, index } => {
            let (cfg, ov) = prepare(&common, "fig2-free", |_| {})?;
            let mut out = Outputs::new(&cfg);
            let rec = pipeline::single_trajectory(&cfg, index, &mut out)?;
            eprintln!(
                "{} clicks, {:?} at t = {}",
                rec.events.len(),
                rec.reason,
                rec.t_end
            );
            finish(&common, &cfg, &ov, &out)
        }
        Command::Ensemble { common } => {
            let (cfg, ov) = prepare(&common, "fig2-free", |c| {
                if !matches!(c.pipeline, Pipeline::Ensemble { .. }) {
                    c.pipeline = Pipeline::Ensemble {
                        stats: Some(StatsSpec {
                            fit_window: None,
                            click_histogram: false,
                        }),
                        renewal: false,
                        sector: None,
                    };
                }
            })?;
            scenario(&common, &cfg, &ov)
        }
        Command::Renewal { common } => {
            let (cfg, ov) = prepare(&common, "fig4", |_| {})?;
            let mut out = Outputs::new(&cfg);
            let report = pipeline::renewal(&cfg, &mut out)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            finish(&common, &cfg, &ov, &out)
        }
        Command::TwoDetector { common } => {
            let (cfg, ov) = prepare(&common, "two-detector", |c| {
                if !matches!(c.pipeline, Pipeline::TwoDetector { .. }) {
                    c.pipeline = Pipeline::TwoDetector {
                        periods: 2.0,
                        dt: 1e-3,
                    };
                }
            })?;
            scenario(&common, &cfg, &ov)
        }
        Command::LindbladCheck { common } => {
            let (cfg, ov) = prepare(&common, "lindblad-check", |c| {
                if !matches!(c.pipeline, Pipeline::LindbladCheck { .. }) {
                    c.pipeline = Pipeline::LindbladCheck {
                        ensembles: vec![1_000, 10_000],
                        dt: 1e-3,
                    };
                }
            })?;
            scenario(&common, &cfg, &ov)
        }
        Command::Scenario { common } => {
            if common.config.is_none() && common.preset.is_none() {
                return Err(
                    ConfigError::Invalid("scenario needs --config or --preset".into()).into(),
                );
            }
            let (cfg, ov) = prepare(&common, "", |_| {})?;
            scenario(&common, &cfg, &ov)
        }
    }
}

fn scenario(common: &Common, cfg: &ScenarioConfig, overrides: &[Override]) -> Result<(), CliError> {
    let mut out = Outputs::new(cfg);
    let mut report = pipeline::run_scenario(cfg, common.workers(), &mut out)?;
    if let Some(map) = report.as_object_mut() {
        map.remove("_header");
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    finish(common, cfg, overrides, &out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
