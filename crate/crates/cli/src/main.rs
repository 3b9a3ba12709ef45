//! Command-line front end for robust policy optimization by local reduction.
//!
//! Exit codes: 0 when the requested run finishes with a robustness
//! certificate (or the query is informational), 2 when violations remain
//! (a stalled or iteration-capped solve, or a validation/worst-case query
//! that finds a violating scenario), 1 on usage or runtime errors.

mod config;
mod dto;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locred::models::{
    compressor_problem_with, CompressorDefaults, Model, Scale,
};
use locred::ocp::{DecisionVector, ProblemDefinition};
use locred::reduction::{
    self, run_with_warm, LocalReductionConfig, RunStatus, ScenarioSet,
};
use locred::validation;

use dto::{DecisionDto, ScenarioDto, SolveReportDto};

#[derive(Parser)]
#[command(
    name = "locred",
    about = "Robust optimal control via local reduction: scenario-constrained \
             policy optimization alternated with a worst-case uncertainty search",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the local-reduction loop and write the decision and run artefacts.
    Solve(SolveArgs),
    /// Monte Carlo validation of a saved decision over the uncertainty box.
    Validate(ValidateArgs),
    /// Search for the worst-case scenario under a saved decision.
    WorstCase(WorstCaseArgs),
    /// List the built-in problem presets.
    ListPresets,
}

#[derive(Args)]
struct ProblemArgs {
    /// Preset name (see list-presets); sets the model, scale and tuning.
    #[arg(long)]
    preset: Option<String>,
    /// Model: building, compressor, or example1.
    #[arg(long)]
    model: Option<String>,
    /// Problem size: desk (reduced horizon) or paper (full horizon).
    #[arg(long)]
    scale: Option<String>,
    /// TOML configuration file (overrides the preset, overridden by flags).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TuningArgs {
    /// Scenario-similarity threshold.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Worst-case tolerance: stop once no scenario exceeds this.
    #[arg(long)]
    tol: Option<f64>,
    /// Outer-iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Start points per component in the worst-case search.
    #[arg(long)]
    multistarts: Option<usize>,
    /// RNG seed for the search start points.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Warm-start decision JSON (defaults to all zeros).
    #[arg(long)]
    warm: Option<PathBuf>,
    /// Output directory for decision.json, report.json and history.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Decision JSON produced by solve.
    #[arg(long)]
    decision: PathBuf,
    /// Number of uniform scenario samples.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for samples.csv and envelope.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct WorstCaseArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Decision JSON produced by solve.
    #[arg(long)]
    decision: PathBuf,
    /// Output directory for candidates.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

struct Preset {
    name: &'static str,
    model: Model,
    scale: Scale,
    description: &'static str,
}

const PRESETS: &[Preset] = &[
    Preset {
        name: "example1",
        model: Model::Example1,
        scale: Scale::Desk,
        description: "scalar system with a fixed input sequence and one uncertain \
                      parameter; the worst case is an interior maximum",
    },
    Preset {
        name: "building_desk",
        model: Model::Building,
        scale: Scale::Desk,
        description: "building thermal comfort control, reduced 24-step horizon",
    },
    Preset {
        name: "building_paper",
        model: Model::Building,
        scale: Scale::Paper,
        description: "building thermal comfort control, full 192-step horizon",
    },
    Preset {
        name: "compressor_desk",
        model: Model::Compressor,
        scale: Scale::Desk,
        description: "centrifugal compressor flow control, reduced horizon",
    },
    Preset {
        name: "compressor_paper",
        model: Model::Compressor,
        scale: Scale::Paper,
        description: "centrifugal compressor flow control, full horizon",
    },
];

fn find_preset(name: &str) -> Result<&'static Preset, String> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        format!("unknown preset '{name}' (available: {})", names.join(", "))
    })
}

/// Resolved problem + reduction configuration after all layering.
struct Resolved {
    problem: ProblemDefinition,
    config: LocalReductionConfig,
}

fn resolve(args: &ProblemArgs, tuning: Option<&TuningArgs>) -> Result<Resolved, String> {
    let mut model = None;
    let mut scale = Scale::Desk;
    let mut config = LocalReductionConfig::default();

    if let Some(name) = &args.preset {
        let preset = find_preset(name)?;
        model = Some(preset.model);
        scale = preset.scale;
    }

    let file = match &args.config {
        Some(path) => Some(config::load(path)?),
        None => None,
    };
    let mut compressor_defaults = CompressorDefaults::default();
    if let Some(file) = &file {
        if let Some(name) = &file.problem.model {
            model = Some(config::parse_model(name)?);
        }
        if let Some(name) = &file.problem.scale {
            scale = config::parse_scale(name)?;
        }
        file.apply_reduction(&mut config);
        file.apply_compressor(&mut compressor_defaults)?;
    }

    if let Some(name) = &args.model {
        model = Some(config::parse_model(name)?);
    }
    if let Some(name) = &args.scale {
        scale = config::parse_scale(name)?;
    }
    let model = model.ok_or("no model selected: pass --preset, --model, or a config file")?;

    if let Some(file) = &file {
        if !file.compressor.is_empty() && model != Model::Compressor {
            return Err("[compressor] overrides require model = \"compressor\"".into());
        }
    }

    if let Some(t) = tuning {
        if let Some(v) = t.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = t.tol {
            config.tol_g = v;
        }
        if let Some(v) = t.max_iter {
            config.max_iterations = v;
        }
        if let Some(v) = t.multistarts {
            config.multistarts = v;
        }
        if let Some(v) = t.seed {
            config.seed = v;
        }
        if let Some(threads) = t.threads {
            init_threads(threads)?;
        }
    }

    let problem = match model {
        Model::Compressor => compressor_problem_with(scale, compressor_defaults),
        other => other.problem(scale),
    };
    Ok(Resolved { problem, config })
}

fn init_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("cannot configure thread pool: {e}"))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn read_decision(path: &Path, problem: &ProblemDefinition) -> Result<DecisionVector, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let dto: DecisionDto = serde_json::from_str(&text)
        .map_err(|e| format!("invalid decision {}: {e}", path.display()))?;
    dto.into_core(problem)
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode, String> {
    let resolved = resolve(&args.problem, Some(&args.tuning))?;
    let problem = &resolved.problem;
    let config = &resolved.config;

    let warm = match &args.warm {
        Some(path) => read_decision(path, problem)?,
        None => DecisionVector::zeros(problem.n_q, problem.n_r),
    };

    let initial = ScenarioSet::nominal(problem, config.epsilon);
    let outcome = run_with_warm(problem, config, initial, warm).map_err(|e| e.to_string())?;

    for r in &outcome.records {
        println!(
            "iter {:>3}  worst G {:>13.6e}  gamma {:>13.6e}  scenarios {:>3}  lower {:?}  {:.1}s",
            r.iteration,
            r.g_max,
            r.gamma,
            r.scenario_count,
            r.lower_status,
            r.elapsed.as_secs_f64()
        );
    }
    println!(
        "status: {}  scenarios: {}  gamma: {:.6e}",
        dto::status_name(outcome.status),
        outcome.scenario_set.len(),
        outcome.decision.gamma
    );

    let report = SolveReportDto::from_outcome(&outcome);
    write_file(
        &args.out,
        "decision.json",
        &serde_json::to_string_pretty(&report.decision).expect("decision serializes"),
    )?;
    write_file(
        &args.out,
        "report.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(&args.out, "history.csv", &dto::history_csv(&outcome.records))?;

    Ok(match outcome.status {
        RunStatus::Success => ExitCode::SUCCESS,
        RunStatus::Stalled | RunStatus::MaxIterations => ExitCode::from(2),
    })
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode, String> {
    let resolved = resolve(&args.problem, None)?;
    if let Some(threads) = args.threads {
        init_threads(threads)?;
    }
    let problem = &resolved.problem;
    let decision = read_decision(&args.decision, problem)?;

    let report = validation::validate(problem, &decision, args.samples, args.seed);
    println!(
        "samples: {}  violation rate: {:.4}  max constraint: {:.6e}  worst G: {:.6e}",
        report.n_samples, report.violation_rate, report.max_violation, report.worst_g
    );
    println!(
        "mean cost: {:.6e}  max cost: {:.6e}  diverged: {}",
        report.mean_cost, report.max_cost, report.diverged
    );

    write_file(&args.out, "samples.csv", &validation::records_csv(&report))?;
    write_file(&args.out, "envelope.csv", &validation::envelope_csv(&report))?;
    if let Some(worst) = &report.worst_scenario {
        write_file(
            &args.out,
            "worst_sample.json",
            &serde_json::to_string_pretty(&ScenarioDto::from_core(worst))
                .expect("scenario serializes"),
        )?;
    }

    Ok(if report.violation_rate > 0.0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_worst_case(args: &WorstCaseArgs) -> Result<ExitCode, String> {
    let resolved = resolve(&args.problem, Some(&args.tuning))?;
    let problem = &resolved.problem;
    let config = &resolved.config;
    let decision = read_decision(&args.decision, problem)?;

    let candidates = reduction::find_worst_case(problem, &decision, config.epsilon, config)
        .map_err(|e| e.to_string())?;
    for (rank, (scenario, g)) in candidates.iter().take(5).enumerate() {
        println!(
            "candidate {rank}: G = {g:.6e}, d = {:?}",
            scenario.d.iter().copied().collect::<Vec<f64>>()
        );
    }
    write_file(&args.out, "candidates.csv", &dto::candidates_csv(&candidates))?;

    let worst = candidates.first().map_or(f64::NEG_INFINITY, |c| c.1);
    Ok(if worst > config.tol_g { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_list_presets() -> ExitCode {
    for p in PRESETS {
        println!("{:<18} {}", p.name, p.description);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Validate(args) => cmd_validate(args),
        Command::WorstCase(args) => cmd_worst_case(args),
        Command::ListPresets => Ok(cmd_list_presets()),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
