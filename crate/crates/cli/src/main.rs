use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causalnet::experiment::{self, ExperimentConfig, NoiseCalibration, Seeds};
use causalnet::model::{CausalNet, Mode};
use causalnet::tensor::{load_checkpoint, save_checkpoint};
use causalnet::{checks, image, scm, Error};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "causalnet",
    version,
    about = "Collider-aware prognosis experiments on synthetic images"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory. Every file is written below it.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Derive every seed from this base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Cap on training epochs.
    #[arg(long)]
    epochs: Option<usize>,

    /// Network input side (51 for full resolution, up to 50 for a downsampled canvas).
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training and validation cohorts from the structural model.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write a single cohort of this many subjects instead.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Render the training and validation image pools.
    BuildPool {
        #[command(flatten)]
        common: Common,
    },
    /// Train one network and save its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// causal, biased or calibration; defaults to the config's model_mode.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Train the ground-truth run and report the x and z read-out errors.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Score saved networks against the regression baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding causal.ckpt, biased.ckpt and calibration.json.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Run the whole pipeline for several seed replicates.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference checks of every gradient rule.
    Gradcheck {
        /// Also run a fixture with a deliberately wrong backward rule.
        #[arg(long, hide = true)]
        include_corrupted: bool,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) | Error::Param(_) | Error::Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(c: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    if let Some(e) = c.epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = c.image_size {
        cfg.image_size = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn out_dir(c: &Common) -> std::result::Result<PathBuf, Failure> {
    std::fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    Ok(c.out.clone())
}

fn simulate(c: &Common, n: Option<usize>) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    match n {
        Some(n) => {
            let cohort = scm::sample_cohort(&cfg.scm, n, cfg.seeds.scm)?;
            cohort.write(&dir, "cohort")?;
        }
        None => {
            let data = experiment::assemble_cohorts(&cfg)?;
            data.0.write(&dir, "train")?;
            data.1.write(&dir, "val")?;
        }
    }
    write(&dir.join("config.json"), cfg.to_json())
}

fn build_pool(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    for (stem, seed) in [
        ("pool_train", cfg.seeds.pool_train),
        ("pool_val", cfg.seeds.pool_val),
    ] {
        let pool = image::build_pool(cfg.pool_size, seed)?;
        pool.save(&dir, stem)?;
        log::info!("{stem}: {} images", pool.len());
    }
    write(&dir.join("config.json"), cfg.to_json())
}

fn save_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    mode: Mode,
    run: &experiment::TrainOutcome,
) -> Outcome {
    save_checkpoint(&dir.join(format!("{}.ckpt", mode.name())), &run.net.params)?;
    write(
        &dir.join(format!("training_log_{}.csv", mode.name())),
        experiment::training_log_csv(&run.log),
    )?;
    write(&dir.join("config.json"), cfg.to_json())
}

fn train(c: &Common, mode: Option<Mode>) -> Outcome {
    let cfg = load_config(c)?;
    let mode = mode.unwrap_or(cfg.model_mode);
    let dir = out_dir(c)?;
    let data = experiment::assemble_dataset(&cfg)?;
    let run = experiment::train(&cfg, &data, mode)?;
    println!(
        "{}: best epoch {} of {}, validation loss {:.4}",
        mode.name(),
        run.best_epoch + 1,
        run.epochs_run,
        run.log[run.best_epoch].val.total
    );
    save_run(&dir, &cfg, mode, &run)
}

fn calibrate(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    let data = experiment::assemble_dataset(&cfg)?;
    let (cal, run) = experiment::calibrate_noise(&cfg, &data)?;
    println!("mse_x {:.6} mse_z {:.6}", cal.mse_x, cal.mse_z);
    write(
        &dir.join("calibration.json"),
        serde_json::to_string_pretty(&cal).map_err(Error::from)?,
    )?;
    save_run(&dir, &cfg, Mode::Calibration, &run)
}

fn load_net(
    dir: &Path,
    cfg: &ExperimentConfig,
    mode: Mode,
) -> std::result::Result<CausalNet<f32>, Failure> {
    let ck = load_checkpoint::<f32>(&dir.join(format!("{}.ckpt", mode.name())))?;
    Ok(CausalNet::from_checkpoint(cfg.net_config(mode), ck)?)
}

fn evaluate(c: &Common, ckpts: &Path) -> Outcome {
    let cfg = load_config(c)?;
    let causal = load_net(ckpts, &cfg, Mode::Causal)?;
    let biased = load_net(ckpts, &cfg, Mode::Biased)?;
    let cal_path = ckpts.join("calibration.json");
    let cal_text = std::fs::read_to_string(&cal_path).map_err(|e| Error::io(&cal_path, e))?;
    let cal: NoiseCalibration = serde_json::from_str(&cal_text).map_err(Error::from)?;
    let dir = out_dir(c)?;
    let data = experiment::assemble_dataset(&cfg)?;
    let mut rows =
        experiment::run_baselines(&data.train.cohort, &data.val.cohort, &cal, cfg.seeds.noise)?;
    let (net_rows, _, _) = experiment::evaluate_nets(&causal, &biased, &data)?;
    rows.extend(net_rows);
    let csv = experiment::results_csv(&rows)?;
    print!("{csv}");
    write(&dir.join("results.csv"), csv)
}

fn reproduce(c: &Common, k: usize, jobs: usize) -> Outcome {
    let cfg = load_config(c)?;
    let (dir, results) = experiment::reproduce(&cfg, k, jobs, &c.out)?;
    print!(
        "{}",
        experiment::aggregate_csv(&experiment::aggregate(&results))
    );
    println!("reports in {}", dir.display());
    Ok(())
}

fn gradcheck(include_corrupted: bool) -> Outcome {
    let mut results = checks::run_suite()?;
    if include_corrupted {
        results.push(checks::check_corrupted_op()?);
    }
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:4} {:45} max rel err {:.3e} (tol {:.0e}, {} entries, {:.2}s)",
            r.name, r.report.max_rel_error, r.tolerance, r.report.entries, r.seconds
        );
        if !r.passed() {
            failed.push(format!("{} ({:.3e})", r.name, r.report.max_rel_error));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.print_default_config {
        println!("{}", ExperimentConfig::default().to_json());
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(EXIT_CONFIG);
    };
    let res = match &cmd {
        Command::Simulate { common, n } => simulate(common, *n),
        Command::BuildPool { common } => build_pool(common),
        Command::Train { common, mode } => train(common, *mode),
        Command::Calibrate { common } => calibrate(common),
        Command::Evaluate {
            common,
            checkpoints,
        } => evaluate(common, checkpoints),
        Command::Reproduce {
            common,
            replicates,
            jobs,
        } => reproduce(common, *replicates, *jobs),
        Command::Gradcheck { include_corrupted } => gradcheck(*include_corrupted),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
