use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use wolcan::harness::{
    emit_report, run_lca_scenario, run_weight_scenario, ScenarioConfig, ScenarioReport,
};
use wolcan::io::{
    merge_toml, read_weights, write_classes, write_estimates, write_odds_ratios, write_weights,
    Table,
};
use wolcan::outcome_reg::{fit_outcome_draws, LogitConfig, OutcomeDesign};
use wolcan::par::ExecMode;
use wolcan::pseudo_weights::{
    estimate_pseudo_weights, select_weight_draws, NonProbabilitySampleData, ProbabilitySampleData,
    PseudoWeightConfig,
};
use wolcan::wolca::{fit_wolca, WolcaConfig};
use wolcan::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wolcan",
    version,
    about = "Weighted latent class analysis for non-probability samples"
)]
struct Cli {
    /// Run chains and replicates on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pseudo-weight simulation scenario (1A, 1B).
    SimulateWeights(SimulateArgs),
    /// Run a latent class simulation scenario (2A to 2J).
    SimulateLca(SimulateArgs),
    /// Estimate BART pseudo-weights for a non-probability sample.
    EstimateWeights(EstimateArgs),
    /// Fit the weighted latent class model.
    FitWolcan(FitWolcanArgs),
    /// Weighted logistic regression of an outcome on latent classes.
    FitOutcome(FitOutcomeArgs),
    /// Rebuild report tables from saved scenario results.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    /// Start from the full-size configuration instead of the quick one.
    #[arg(long)]
    full_scale: bool,
    /// TOML file whose keys replace configuration values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Non-probability sample CSV.
    #[arg(long)]
    nps: PathBuf,
    /// Probability sample CSV.
    #[arg(long)]
    ps: PathBuf,
    /// Auxiliary columns present in both files.
    #[arg(long, value_delimiter = ',', required = true)]
    aux: Vec<String>,
    /// Probability sample column holding inclusion probabilities.
    #[arg(long, default_value = "inclusion")]
    inclusion: String,
    #[arg(long, default_value = "id")]
    id: String,
    /// Posterior draws per BART model.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Weight sets written out.
    #[arg(long, default_value_t = 20)]
    select: usize,
    /// Trimming constant; 0 disables trimming.
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    nps_coverage: f64,
    #[arg(long, default_value_t = 1.0)]
    ps_coverage: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "weights.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct FitWolcanArgs {
    /// CSV with the categorical items, coded 1..R.
    #[arg(long)]
    items: PathBuf,
    /// Item columns are those whose names start with this prefix.
    #[arg(long, default_value = "item")]
    item_prefix: String,
    /// Weight file from estimate-weights; unit weights when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "id")]
    id: String,
    #[arg(long)]
    no_adjust: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "wolcan_out")]
    out: PathBuf,
}

#[derive(Args)]
struct FitOutcomeArgs {
    /// CSV with the outcome and confounders.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Class file from fit-wolcan, matched to `data` by row.
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, value_delimiter = ',')]
    confounders: Vec<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    no_adjust: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "odds_ratios.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding scenario_*.json files.
    #[arg(long, default_value = "results")]
    input: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(
    base: T,
    path: Option<&Path>,
) -> Result<T> {
    match path {
        Some(p) => merge_toml(&base, &fs::read_to_string(p)?),
        None => Ok(base),
    }
}

fn simulate(args: &SimulateArgs, exec: ExecMode, weights: bool) -> Result<()> {
    let base = if args.full_scale {
        ScenarioConfig::full_scale(&args.scenario)?
    } else {
        ScenarioConfig::desk(&args.scenario)?
    };
    let mut cfg = overlay(base, args.config.as_deref())?;
    if cfg.is_weight_scenario() != weights {
        return Err(Error::Config(format!(
            "scenario {} belongs to the other simulation set",
            cfg.id
        )));
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.exec = exec;
    info!(
        "running scenario {} with {} replicates",
        cfg.id, cfg.replicates
    );
    let report = if weights {
        run_weight_scenario(&cfg)?
    } else {
        run_lca_scenario(&cfg)?
    };
    fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(args.out.join(format!("scenario_{}.json", cfg.id)), json)?;
    for f in emit_report(std::slice::from_ref(&report), &args.out)? {
        println!("{}", f.display());
    }
    for f in &report.failures {
        error!("replicate {} failed: {}", f.replicate, f.message);
    }
    if report.records.is_empty() {
        return Err(Error::NonConvergence(format!(
            "every replicate of {} failed",
            cfg.id
        )));
    }
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let nps_t = Table::read(&args.nps)?;
    let ps_t = Table::read(&args.ps)?;
    let nps = NonProbabilitySampleData {
        aux_names: args.aux.clone(),
        aux: nps_t.matrix(&args.aux)?,
        items: None,
        coverage: args.nps_coverage,
    };
    let ps = ProbabilitySampleData {
        aux_names: args.aux.clone(),
        aux: ps_t.matrix(&args.aux)?,
        inclusion: ps_t.column_f64(&args.inclusion)?,
        coverage: args.ps_coverage,
    };
    let mut cfg = overlay(
        PseudoWeightConfig::default().with_draws(args.draws),
        args.config.as_deref(),
    )?;
    if let Some(c) = args.trim {
        cfg.trim_c = (c > 0.0).then_some(c);
    }
    let w = estimate_pseudo_weights(&nps, &ps, &cfg, args.seed)?;
    let selected: Vec<Vec<f64>> = select_weight_draws(&w, args.select)?
        .into_iter()
        .map(|d| d.weights)
        .collect();
    let ids = if nps_t.has_column(&args.id) {
        nps_t.column_u64(&args.id)?
    } else {
        (0..nps_t.len() as u64).collect()
    };
    write_weights(&args.out, &ids, &w.means, &selected)?;
    println!("{}", args.out.display());
    Ok(())
}

fn fit_lca(args: &FitWolcanArgs, exec: ExecMode) -> Result<()> {
    let t = Table::read(&args.items)?;
    let items = t.items(&t.prefixed(&args.item_prefix))?;
    let ids = if t.has_column(&args.id) {
        t.column_u64(&args.id)?
    } else {
        (0..t.len() as u64).collect()
    };
    let (draws, means) = match &args.weights {
        Some(p) => {
            let f = read_weights(p)?;
            if f.ids != ids {
                return Err(Error::InvalidInput(
                    "weight file ids do not match the item file".into(),
                ));
            }
            (f.draws, f.means)
        }
        None => (vec![vec![1.0; t.len()]], vec![1.0; t.len()]),
    };
    let mut cfg = overlay(WolcaConfig::default(), args.config.as_deref())?;
    cfg.exec = exec;
    if args.no_adjust || args.weights.is_none() {
        cfg.adjust = false;
    }
    let fit = fit_wolca(&items, &draws, &means, Some(&ids), &cfg, args.seed)?;
    fs::create_dir_all(&args.out)?;
    write_estimates(&args.out.join("estimates.csv"), &fit.estimates)?;
    if let Some(raw) = &fit.unadjusted {
        write_estimates(&args.out.join("estimates_unadjusted.csv"), raw)?;
    }
    write_classes(&args.out.join("classes.csv"), &ids, &fit.assignment.classes)?;
    let manifest =
        serde_json::to_string_pretty(&fit.manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(args.out.join("manifest.json"), manifest)?;
    println!("selected K = {}", fit.k_hat);
    if fit.manifest.converged.iter().any(|c| !c) {
        error!(
            "some chains retained too few iterations with K = {}",
            fit.k_hat
        );
    }
    Ok(())
}

fn fit_outcome(args: &FitOutcomeArgs, exec: ExecMode) -> Result<()> {
    let t = Table::read(&args.data)?;
    let y: Vec<u8> = t
        .column_u32(&args.outcome)?
        .into_iter()
        .map(|v| u8::try_from(v).ok().filter(|&b| b <= 1))
        .collect::<Option<_>>()
        .ok_or_else(|| {
            Error::InvalidInput(format!("outcome {} must be coded 0/1", args.outcome))
        })?;
    let ct = Table::read(&args.classes)?;
    let classes: Vec<usize> = ct
        .column_u32("class")?
        .into_iter()
        .map(|c| c.saturating_sub(1) as usize)
        .collect();
    let k = classes.iter().copied().max().map_or(0, |c| c + 1);
    let conf = if args.confounders.is_empty() {
        None
    } else {
        Some(t.matrix(&args.confounders)?)
    };
    let design = OutcomeDesign::from_classes(
        y,
        &classes,
        k,
        conf.as_ref().map(|m| (m, args.confounders.as_slice())),
    )?;
    let draws = match &args.weights {
        Some(p) => read_weights(p)?.draws,
        None => vec![vec![1.0; t.len()]],
    };
    let mut cfg = overlay(LogitConfig::default(), args.config.as_deref())?;
    cfg.exec = exec;
    if args.no_adjust {
        cfg.adjust = false;
    }
    let post = fit_outcome_draws(&design, &draws, &cfg, args.seed)?;
    write_odds_ratios(&args.out, &post.rows)?;
    for r in &post.rows {
        println!(
            "{:<14} OR {:.3} [{:.3}, {:.3}] PP {:.3}",
            r.name, r.odds_ratio, r.lower, r.upper, r.direction_probability
        );
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scenario_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scenario results in {}",
            args.input.display()
        )));
    }
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<ScenarioReport>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    for f in emit_report(&reports, &args.out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let result = match &cli.command {
        Command::SimulateWeights(a) => simulate(a, exec, true),
        Command::SimulateLca(a) => simulate(a, exec, false),
        Command::EstimateWeights(a) => estimate(a),
        Command::FitWolcan(a) => fit_lca(a, exec),
        Command::FitOutcome(a) => fit_outcome(a, exec),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
