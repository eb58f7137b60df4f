use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confseg::dataio::{split_folds, CohortManifest};
use confseg::experiment::{
    eval_task_runs, gradcheck_suite, run, threshold_sweep, threshold_tool, train_task_runs, write_report,
    write_results, ExperimentConfig, ExperimentError, RunContext, Task, DATA_DIR_ENV,
};
use confseg::label::ConfidenceThreshold;
use confseg::phantom::gen_cohort;

#[derive(Parser)]
#[command(name = "confseg", version, about = "Confidence-threshold segmentation experiments on ultrasound-style data")]
struct Cli {
    /// Experiment config (JSON); defaults are shown by `print-config`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the task: seg, sf_change, sf_regress or readmission.
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Cohort directory; falls back to the config, then $CONFSEG_DATA_DIR.
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort into --out.
    PhantomGen {
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Write the patient-wise fold split (folds.json) into the cohort directory.
    Split,
    /// Train one segmenter per (threshold, fold).
    TrainSeg,
    /// Evaluate saved segmenters on the held-out test patients.
    EvalSeg,
    /// Train the --task model per (threshold, fold).
    TrainTask,
    /// Evaluate saved --task models on the held-out test patients.
    EvalTask,
    /// Rebuild tables and plots from the results CSV of --task.
    Report,
    /// Train, evaluate and report --task in one go.
    Run,
    /// Write per-channel binary masks of a .cmap file.
    Threshold {
        #[arg(long)]
        cmap: PathBuf,
        /// Threshold level (0, 20, 40, 50, 60, 80 or 100).
        #[arg(long, short = 't', required_unless_present = "sweep")]
        level: Option<u8>,
        /// Write masks for every threshold level.
        #[arg(long, conflicts_with = "level")]
        sweep: bool,
    },
    /// Finite-difference gradient checks of every primitive and model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Serve the annotation API (and optional UI assets).
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = confseg_annotate::DEFAULT_BIND)]
        bind: SocketAddr,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Print the default experiment config.
    PrintConfig,
}

fn config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    if let Some(t) = cli.task {
        c.task = t;
    }
    if let Some(d) = &cli.cohort {
        c.cohort = Some(d.clone());
    }
    c.validate()?;
    Ok(c)
}

fn execute(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::PrintConfig => println!("{}", ExperimentConfig::default().to_json()),
        Command::PhantomGen { patients } => {
            let c = config(cli)?;
            let out = cli.out.clone().ok_or_else(|| ExperimentError::Config("phantom-gen needs --out".into()))?;
            let n = patients.unwrap_or(c.patients);
            let manifest = gen_cohort(c.seed, n, &c.phantom, &out)?;
            println!("wrote {} patients, {} videos to {}", manifest.patients.len(), manifest.video_count(), out.display());
        }
        Command::Split => {
            let c = config(cli)?;
            let dir = c.cohort_dir()?;
            let manifest = CohortManifest::load(&dir.join("cohort.json"))?;
            let split = split_folds(&manifest, c.folds, c.test_patients, c.seed)?;
            let path = dir.join("folds.json");
            split.save(&path)?;
            println!("wrote {} ({} test patients, {} folds)", path.display(), split.held_out_test.len(), split.folds.len());
        }
        Command::TrainSeg => train_task_runs(&RunContext::open(config(cli)?)?, Task::Seg)?,
        Command::TrainTask => {
            let c = config(cli)?;
            let task = c.task;
            train_task_runs(&RunContext::open(c)?, task)?;
        }
        Command::EvalSeg | Command::EvalTask => {
            let mut c = config(cli)?;
            if matches!(cli.command, Command::EvalSeg) {
                c.task = Task::Seg;
            }
            let task = c.task;
            let ctx = RunContext::open(c)?;
            let rows = eval_task_runs(&ctx, task)?;
            let path = write_results(&ctx.config.out_dir, task, &rows)?;
            println!("wrote {}", path.display());
        }
        Command::Report => {
            let c = config(cli)?;
            let files = write_report(&c, c.task)?;
            println!("wrote {} and {}", files.table_txt.display(), files.plot.display());
        }
        Command::Run => {
            let files = run(&RunContext::open(config(cli)?)?)?;
            print!("{}", std::fs::read_to_string(&files.table_txt)?);
        }
        Command::Threshold { cmap, level, sweep } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let written = if *sweep {
                threshold_sweep(cmap, &out)?
            } else {
                threshold_tool(cmap, level.expect("clap enforces --level or --sweep"), &out)?
            };
            println!("wrote {} masks to {}", written.len(), out.display());
        }
        Command::Gradcheck { tolerance } => {
            let seed = cli.seed.unwrap_or(0);
            let mut failed = Vec::new();
            for e in gradcheck_suite(seed, *tolerance)? {
                let r = &e.report;
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<34} worst rel err {:.3e} at {} ({} checked)", e.name, r.worst_rel_error, r.worst_entry, r.checked);
                if !r.passed {
                    failed.push(e.name.to_string());
                }
            }
            if !failed.is_empty() {
                return Err(ExperimentError::SubRuns { total: failed.len(), failed });
            }
        }
        Command::Serve { data, bind, static_dir } => {
            let cfg = confseg_annotate::ServiceConfig { data_dir: data.clone(), static_dir: static_dir.clone(), bind: *bind };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(confseg_annotate::serve(cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    if let Command::Threshold { level: Some(t), .. } = cli.command {
        if ConfidenceThreshold::new(t).is_err() {
            eprintln!("error: threshold {t} is not one of 0, 20, 40, 50, 60, 80, 100");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(ExperimentError::Config(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("hint: cohort directory comes from --cohort, the config, or ${DATA_DIR_ENV}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
