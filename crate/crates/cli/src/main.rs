use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rlbf::agent::TrainConfig;
use rlbf::backfill::BackfillStrategy;
use rlbf::harness::{self, HarnessError, ModelStore, NamedTrace, Sampling};
use rlbf::policy::PolicyKind;
use rlbf::workload::{generate_synthetic, sample_sequence, SyntheticSpec, EXPERIMENT_PREFIX_JOBS};

#[derive(Parser)]
#[command(
    name = "rlbf",
    version,
    about = "HPC batch scheduling simulator with EASY and learned backfilling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print trace statistics as JSON.
    ParseStats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        cluster_size: Option<u32>,
        /// Only use the first N jobs (all jobs when omitted).
        #[arg(long)]
        first: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic SWF trace.
    GenTrace(GenTraceArgs),
    /// Schedule a trace (or a sampled window of it) and write per-job results.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "fcfs")]
        policy: PolicyKind,
        /// none | easy:req | easy:ar | easy:noisy:<pct> | rl:<model-file>
        #[arg(long, default_value = "easy:req")]
        backfill: BackfillStrategy,
        /// Sample a window of this many jobs instead of using the whole prefix.
        #[arg(long)]
        sample_length: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = EXPERIMENT_PREFIX_JOBS)]
        first: usize,
        /// Per-job CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate JSON output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// EASY with inflated actual runtimes, per policy and noise level.
    NoiseSweep {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "fcfs,sjf,wfp3,f1")]
        policies: Vec<PolicyKind>,
        /// Noise levels in percent.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,40,100")]
        noise: Vec<f64>,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a learned backfilling agent with PPO.
    Train(TrainArgs),
    /// Mean bsld per trace and policy+strategy column.
    Evaluate {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "fcfs")]
        policies: Vec<PolicyKind>,
        #[arg(long = "backfill", required = true)]
        strategies: Vec<BackfillStrategy>,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate models trained on some traces against every trace.
    CrossEval {
        /// name=path/to/model.bin
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "fcfs,sjf")]
        policies: Vec<PolicyKind>,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert a training run's epoch log into a plot-ready CSV.
    ExportCurve {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = harness::DEFAULT_SAMPLE_LENGTH)]
    sample_length: usize,
    #[arg(long, default_value_t = harness::DEFAULT_SAMPLE_COUNT)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = EXPERIMENT_PREFIX_JOBS)]
    first: usize,
}

impl SamplingArgs {
    fn sampling(&self) -> Sampling {
        Sampling {
            length: self.sample_length,
            count: self.samples,
            base_seed: self.seed,
        }
    }
}

#[derive(Args)]
struct GenTraceArgs {
    /// lublin1 | lublin2; explicit flags override preset values.
    #[arg(long, default_value = "lublin1")]
    preset: String,
    #[arg(long, default_value_t = 10_000)]
    jobs: usize,
    #[arg(long)]
    cluster_size: Option<u32>,
    #[arg(long)]
    mean_interarrival: Option<f64>,
    #[arg(long)]
    runtime_log_mean: Option<f64>,
    #[arg(long)]
    runtime_log_sigma: Option<f64>,
    #[arg(long)]
    max_node_power: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "fcfs")]
    policy: PolicyKind,
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trajectories_per_epoch: Option<usize>,
    #[arg(long)]
    jobs_per_trajectory: Option<usize>,
    #[arg(long)]
    update_iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    target_kl: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = EXPERIMENT_PREFIX_JOBS)]
    first: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    quiet: bool,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_traces(paths: &[PathBuf], first: usize) -> Result<Vec<NamedTrace>, HarnessError> {
    paths
        .iter()
        .map(|p| harness::load_trace(p, Some(first), None))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ParseStats {
            trace,
            cluster_size,
            first,
            out,
        } => {
            let t = harness::load_trace(&trace, Some(first.unwrap_or(usize::MAX)), cluster_size)?;
            let json = serde_json::to_string_pretty(&t.trace.stats())?;
            match out {
                Some(path) => write(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::GenTrace(args) => {
            let mut spec = match args.preset.as_str() {
                "lublin1" => SyntheticSpec::lublin_like_1(args.jobs),
                "lublin2" => SyntheticSpec::lublin_like_2(args.jobs),
                other => bail!("unknown preset {other:?}"),
            };
            spec.cluster_size = args.cluster_size.unwrap_or(spec.cluster_size);
            spec.mean_interarrival = args.mean_interarrival.unwrap_or(spec.mean_interarrival);
            spec.runtime_log_mean = args.runtime_log_mean.unwrap_or(spec.runtime_log_mean);
            spec.runtime_log_sigma = args.runtime_log_sigma.unwrap_or(spec.runtime_log_sigma);
            spec.max_node_power = args.max_node_power.unwrap_or(spec.max_node_power);
            let trace = generate_synthetic(&spec, args.seed).map_err(HarnessError::from)?;
            write(&args.out, &trace.to_swf())?;
        }
        Command::Simulate {
            trace,
            policy,
            backfill,
            sample_length,
            seed,
            first,
            out,
            summary,
        } => {
            let named = harness::load_trace(&trace, Some(first), None)?;
            let sequence = match sample_length {
                Some(len) => {
                    sample_sequence(&named.trace, len, seed).map_err(HarnessError::from)?
                }
                None => named.trace,
            };
            let result =
                harness::simulate(&sequence, policy, &backfill, &mut ModelStore::default())?;
            write(&out, &result.to_csv())?;
            let mut agg = result.summary_json();
            agg["policy"] = policy.name().into();
            agg["backfill"] = backfill.to_string().into();
            match summary {
                Some(path) => write(&path, &serde_json::to_string_pretty(&agg)?)?,
                None => println!("{agg}"),
            }
        }
        Command::NoiseSweep {
            trace,
            policies,
            noise,
            sampling,
            out_dir,
        } => {
            let named = harness::load_trace(&trace, Some(sampling.first), None)?;
            let levels: Vec<f64> = noise.iter().map(|p| p / 100.0).collect();
            let sweep =
                harness::run_noise_sweep(&named.trace, &policies, &levels, &sampling.sampling())?;
            write(&out_dir.join("noise_sweep.csv"), &sweep.to_csv())?;
            write(
                &out_dir.join("noise_sweep.json"),
                &serde_json::to_string_pretty(&sweep)?,
            )?;
            let spec = serde_json::json!({
                "command": "noise-sweep",
                "policies": policies,
                "noise_levels": levels,
                "sampling": sampling.sampling(),
                "first_jobs": sampling.first,
            });
            harness::write_manifest(&out_dir, spec, &[trace])?;
        }
        Command::Train(args) => {
            let mut config: TrainConfig = match &args.config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(v) = args.epochs {
                config.epochs = v;
            }
            if let Some(v) = args.trajectories_per_epoch {
                config.trajectories_per_epoch = v;
            }
            if let Some(v) = args.jobs_per_trajectory {
                config.jobs_per_trajectory = v;
            }
            if let Some(v) = args.update_iterations {
                config.update_iterations = v;
            }
            if let Some(v) = args.learning_rate {
                config.learning_rate = v;
            }
            if args.target_kl.is_some() {
                config.target_kl = args.target_kl;
            }
            if let Some(v) = args.seed {
                config.seed = v;
            }
            let named = harness::load_trace(&args.trace, Some(args.first), None)?;
            let quiet = args.quiet;
            harness::train_to_dir(&named.trace, args.policy, &config, &args.out_dir, |r| {
                if !quiet {
                    eprintln!(
                        "epoch {:>4}  reward {:>9.4}  bsld {:>9.2}  baseline {:>9.2}  violations {:>4}  steps {:>6}",
                        r.epoch, r.mean_reward, r.mean_bsld, r.mean_baseline_bsld, r.violations, r.steps
                    );
                }
            })?;
            let spec = serde_json::json!({
                "command": "train",
                "policy": args.policy,
                "config": config,
                "first_jobs": args.first,
            });
            harness::write_manifest(&args.out_dir, spec, &[args.trace])?;
        }
        Command::Evaluate {
            traces,
            policies,
            strategies,
            sampling,
            out_dir,
        } => {
            let named = load_traces(&traces, sampling.first)?;
            let matrix = harness::evaluate_traces(
                &named,
                &policies,
                &strategies,
                &sampling.sampling(),
                &mut ModelStore::default(),
            )?;
            write(&out_dir.join("evaluation.csv"), &matrix.summary_csv())?;
            write(
                &out_dir.join("evaluation_samples.csv"),
                &matrix.samples_csv(),
            )?;
            let mut inputs = traces.clone();
            inputs.extend(strategies.iter().filter_map(|s| match s {
                BackfillStrategy::Learned(p) => Some(p.clone()),
                _ => None,
            }));
            let spec = serde_json::json!({
                "command": "evaluate",
                "policies": policies,
                "strategies": strategies.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "sampling": sampling.sampling(),
                "first_jobs": sampling.first,
            });
            harness::write_manifest(&out_dir, spec, &inputs)?;
        }
        Command::CrossEval {
            models,
            traces,
            policies,
            sampling,
            out_dir,
        } => {
            let models = models
                .iter()
                .map(|m| {
                    let (name, path) = m.split_once('=').ok_or_else(|| {
                        HarnessError::Config(format!("--model expects name=path, got {m:?}"))
                    })?;
                    Ok((name.to_string(), PathBuf::from(path)))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let named = load_traces(&traces, sampling.first)?;
            let cross = harness::cross_evaluate(&models, &named, &policies, &sampling.sampling())?;
            write(&out_dir.join("cross_eval.csv"), &cross.to_csv())?;
            let mut inputs = traces.clone();
            inputs.extend(models.iter().map(|(_, p)| p.clone()));
            let spec = serde_json::json!({
                "command": "cross-eval",
                "models": models.iter().map(|(n, p)| format!("{n}={}", p.display())).collect::<Vec<_>>(),
                "policies": policies,
                "sampling": sampling.sampling(),
                "first_jobs": sampling.first,
            });
            harness::write_manifest(&out_dir, spec, &inputs)?;
        }
        Command::ExportCurve { run_dir, out } => {
            let csv = harness::export_training_curve(&run_dir)?;
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<HarnessError>()
                .map_or("error", HarnessError::kind);
            let line = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
