use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rpg_lab::adapt::ScriptedKind;
use rpg_lab::envs::RewardWeights;
use rpg_lab::harness::presets::{preset, DEFAULT_SCALE};
use rpg_lab::harness::{
    evaluate_checkpoints, finetune_population, replay, run_experiment, select_population, write_json, ExperimentConfig,
    ExperimentSummary, MatrixConfig, VerifyMatrix,
};

#[derive(Parser, Debug)]
#[command(name = "rpg-lab", version, about = "Reward-randomized policy gradient experiments")]
struct Cli {
    /// Experiment config (TOML). Without it a preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Step-budget multiplier.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PresetArg {
    /// Named preset, used when --config is absent.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo check of the matrix-game convergence bounds.
    VerifyMatrix(VerifyArgs),
    /// Train a single policy-gradient run (pg, pg_shared, pg_count or pbt).
    Train {
        #[command(flatten)]
        preset: PresetArg,
        #[arg(long)]
        algorithm: Option<String>,
    },
    /// Train a reward-randomized population.
    Rr {
        #[command(flatten)]
        preset: PresetArg,
    },
    /// Evaluate checkpoints on the original reward.
    Evaluate(EvaluateArgs),
    /// Select the best member of a population directory.
    Select {
        /// Seed directory holding population.json.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Warm-start and fine-tune the selected member of a population directory.
    Finetune {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        preset: PresetArg,
    },
    /// Population training, selection, warm start and fine-tuning.
    Rpg {
        #[command(flatten)]
        preset: PresetArg,
    },
    /// Train an adaptive policy against a set of opponents.
    Adapt(AdaptArgs),
    /// Render a recorded episode.
    Replay {
        /// Trajectory file or run directory.
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Sucker payoff; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    c: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Population sizes for the reward-randomization bound; repeatable.
    #[arg(long = "population-size")]
    population_sizes: Vec<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// One checkpoint per agent, or one shared checkpoint.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Seed directory; uses final/ checkpoints when present.
    #[arg(long, conflicts_with = "checkpoints")]
    dir: Option<PathBuf>,
    /// Comma-separated reward weights; defaults to the original game.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[command(flatten)]
    preset: PresetArg,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    /// TOML manifest of training opponents.
    #[arg(long)]
    opponents: Option<PathBuf>,
    /// TOML manifest of held-out evaluation opponents.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Scripted evaluation opponents (iterated game); repeatable.
    #[arg(long)]
    scripted: Vec<ScriptedKind>,
    #[command(flatten)]
    preset: PresetArg,
}

impl Cli {
    /// Config from --config, or the given preset, with global overrides.
    fn experiment(&self, preset_name: Option<&str>, fallback: &str) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let name = preset_name.unwrap_or(fallback);
                let out = Path::new("runs").join(name);
                preset(name, self.scale.unwrap_or(DEFAULT_SCALE), &out)?
            }
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(scale) = self.scale {
            cfg.scale = scale;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config of an existing run: --config, else `config.toml` next to `dir`.
    fn run_config(&self, dir: &Path, preset_name: Option<&str>) -> anyhow::Result<ExperimentConfig> {
        if self.config.is_none() && preset_name.is_none() {
            let found = dir.ancestors().map(|d| d.join("config.toml")).find(|p| p.is_file());
            if let Some(path) = found {
                let mut cfg = ExperimentConfig::load(&path)?;
                if let Some(scale) = self.scale {
                    cfg.scale = scale;
                }
                return Ok(cfg);
            }
            bail!("no config.toml above {}; pass --config or --preset", dir.display());
        }
        self.experiment(preset_name, "monster-hunt")
    }

    fn seed_or(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }
}

fn report(summary: &ExperimentSummary) -> ExitCode {
    for r in &summary.runs {
        let score = r.score.map_or("-".to_string(), |s| format!("{s:.4}"));
        match &r.error {
            Some(e) => eprintln!("seed {} failed: {e}", r.seed),
            None => println!(
                "seed {} score {score} steps {} dir {}",
                r.seed,
                r.env_steps,
                r.dir.display()
            ),
        }
    }
    if summary.all_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn verify_matrix(cli: &Cli, args: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let mut m = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?.matrix,
        None => MatrixConfig::default(),
    };
    if !args.c.is_empty() {
        m.c_values = args.c.clone();
    }
    m.a = args.a.unwrap_or(m.a);
    m.b = args.b.unwrap_or(m.b);
    m.d = args.d.unwrap_or(m.d);
    m.trials = args.trials.unwrap_or(m.trials);
    m.learning_rate = args.lr.unwrap_or(m.learning_rate);
    m.max_steps = args.max_steps.unwrap_or(m.max_steps);
    m.tol = args.tol.unwrap_or(m.tol);
    if !args.population_sizes.is_empty() {
        m.population_sizes = args.population_sizes.clone();
    }
    let reports = VerifyMatrix::reports(&m, cli.seed.unwrap_or(0))?;
    let pass = reports.iter().all(|r| r.passes());
    let line = serde_json::json!({ "pass": pass, "reports": reports });
    println!("{line}");
    if let Some(out) = &cli.out {
        write_json(&out.join("bound_reports.json"), &line)?;
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> anyhow::Result<ExitCode> {
    let (cfg, paths) = match &args.dir {
        Some(dir) => {
            let cfg = cli.run_config(dir, args.preset.preset.as_deref())?;
            let base = if dir.join("final").is_dir() {
                dir.join("final")
            } else {
                dir.clone()
            };
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&base)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("agent") && n.ends_with(".json"))
                })
                .collect();
            paths.sort();
            (cfg, paths)
        }
        None => (
            cli.experiment(args.preset.preset.as_deref(), "monster-hunt")?,
            args.checkpoints.clone(),
        ),
    };
    if paths.is_empty() {
        bail!("no checkpoints to evaluate");
    }
    let env = cfg.make_env()?;
    let w = match &args.weights {
        Some(w) => RewardWeights::unbounded(w.clone()),
        None => cfg.original(),
    };
    let mut spec = cfg.evaluation.clone();
    if let Some(n) = args.episodes {
        spec.episodes = n;
    }
    let ev = evaluate_checkpoints(&paths, env.as_ref(), &w, &spec, cli.seed_or(&cfg))?;
    println!("{}", serde_json::to_string(&ev)?);
    if let Some(out) = &cli.out {
        write_json(&out.join("evaluation.json"), &ev)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::VerifyMatrix(args) => verify_matrix(cli, args),
        Command::Train { preset, algorithm } => {
            let mut cfg = cli.experiment(preset.preset.as_deref(), "monster-hunt-pg")?;
            if let Some(a) = algorithm {
                cfg.algorithm = a.clone();
            }
            Ok(report(&run_experiment(&cfg)?))
        }
        Command::Rr { preset } => {
            let mut cfg = cli.experiment(preset.preset.as_deref(), "iterated")?;
            cfg.algorithm = "rr".into();
            Ok(report(&run_experiment(&cfg)?))
        }
        Command::Rpg { preset } => {
            let mut cfg = cli.experiment(preset.preset.as_deref(), "monster-hunt")?;
            cfg.algorithm = "rpg".into();
            Ok(report(&run_experiment(&cfg)?))
        }
        Command::Adapt(args) => {
            let mut cfg = cli.experiment(args.preset.preset.as_deref(), "iterated-adapt")?;
            cfg.algorithm = "adapt".into();
            if args.opponents.is_some() {
                cfg.adapt.opponents = args.opponents.clone();
            }
            if args.holdout.is_some() {
                cfg.adapt.holdout = args.holdout.clone();
            }
            if !args.scripted.is_empty() {
                cfg.adapt.scripted = args.scripted.clone();
            }
            Ok(report(&run_experiment(&cfg)?))
        }
        Command::Evaluate(args) => evaluate(cli, args),
        Command::Select { dir } => {
            let chosen = select_population(dir)?;
            println!("{}", serde_json::to_string(&chosen)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune { dir, preset } => {
            let cfg = cli.run_config(dir, preset.preset.as_deref())?;
            let ev = finetune_population(dir, &cfg, cli.seed_or(&cfg))?;
            println!("{}", serde_json::to_string(&ev)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { target, episode } => {
            let (_, text) = replay(target, *episode)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
