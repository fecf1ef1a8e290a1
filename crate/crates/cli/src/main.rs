use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rigidpack::io::{format_trajectory_xyz, read_assembly, write_assembly_xyz, write_transforms, TemplateSource};
use rigidpack::{
    cost_matrix, default_reg, fit_assembly, flow_trajectory, lsa_solve, metric_star, plan_round, sinkhorn, Assembly,
    AssignmentMode, CostKind, FitConfig, LossKind, MetricKind, DEFAULT_ALPHA, DEFAULT_FLOW_STEPS,
};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "RIGIDPACK_THREADS";

#[derive(Parser)]
#[command(name = "rigidpack", version, about = "Metrics, assignment and fitting for assemblies of identical rigid molecules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a predicted assembly with the ground truth.
    Metrics(MetricsArgs),
    /// Pair ground-truth molecules with predicted ones.
    Assign(AssignArgs),
    /// Optimize per-molecule transforms of an initial assembly toward a target.
    Fit(FitArgs),
    /// Write the straight-line SE(3) trajectory between two assemblies.
    Interp(InterpArgs),
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MetricArg {
    PmAtom,
    PmCenter,
    RmsdAtom,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AssignArg {
    None,
    Exact,
    Sinkhorn,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    Exact,
    Sinkhorn,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CostArg {
    /// Squared rigid RMSD between paired molecules.
    Rmsd,
    /// Squared distance between paired centers of mass.
    Center,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LossArg {
    Ml,
    Rmsd,
    Geom,
}

#[derive(Args)]
struct Common {
    /// Sinkhorn regularization; defaults to 5% of the median pair cost.
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a result row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(long = "assign", value_enum, default_value = "none")]
    assignment: AssignArg,
    /// Pair cost used for the assignment; defaults to center distances for
    /// pm_center and rigid RMSD otherwise.
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "rmsd")]
    cost: CostArg,
    #[arg(long, value_enum, default_value = "exact")]
    method: MethodArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "rmsd")]
    loss: LossArg,
    #[arg(long = "assign", value_enum, default_value = "exact")]
    assignment: AssignArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Reference molecule of the geometric loss; defaults to the last one.
    #[arg(long)]
    ref_index: Option<usize>,
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// Write the fitted transforms here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the fitted assembly here.
    #[arg(long)]
    out_xyz: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct InterpArgs {
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FLOW_STEPS)]
    steps: usize,
    /// Multi-frame XYZ output.
    #[arg(long)]
    out: PathBuf,
}

/// Six significant digits; exact zero prints as `0.000000`.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.000000".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

fn assignment_mode(a: AssignArg) -> AssignmentMode {
    match a {
        AssignArg::None => AssignmentMode::None,
        AssignArg::Exact => AssignmentMode::Exact,
        AssignArg::Sinkhorn => AssignmentMode::Sinkhorn,
    }
}

fn cost_kind(c: CostArg) -> CostKind {
    match c {
        CostArg::Rmsd => CostKind::RigidRmsdSq,
        CostArg::Center => CostKind::CenterDistSq,
    }
}

/// Ground truth with its own template, prediction registered onto it.
fn load_pair(pred: &Path, gt: &Path) -> anyhow::Result<(Assembly, Assembly)> {
    let gt = read_assembly(gt, &TemplateSource::default())?.assembly;
    let pred = read_assembly(pred, &TemplateSource::Given(Arc::clone(gt.shared_template())))?.assembly;
    Ok((pred, gt))
}

struct CsvRow<'a> {
    metric: &'a str,
    value: f64,
    assignment: AssignmentMode,
    alpha: Option<f64>,
    reg: Option<f64>,
    seed: u64,
}

fn append_csv(path: &Path, row: &CsvRow) -> anyhow::Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(file, "metric,value,assignment,alpha,reg,seed")?;
    }
    writeln!(
        file,
        "{},{},{},{},{},{}",
        row.metric,
        sig6(row.value),
        row.assignment,
        row.alpha.map(sig6).unwrap_or_default(),
        row.reg.map(sig6).unwrap_or_default(),
        row.seed
    )?;
    Ok(())
}

fn run_metrics(args: &MetricsArgs) -> anyhow::Result<()> {
    let (pred, gt) = load_pair(&args.pred, &args.gt)?;
    let kind = match args.metric {
        MetricArg::PmAtom => MetricKind::PmAtom,
        MetricArg::PmCenter => MetricKind::PmCenter,
        MetricArg::RmsdAtom => MetricKind::RmsdAtom,
    };
    let mode = assignment_mode(args.assignment);
    let costs = args.cost.map(cost_kind).unwrap_or(kind.matching_cost());
    let reg = match mode {
        AssignmentMode::Sinkhorn => Some(match args.common.reg {
            Some(r) => r,
            None => default_reg(&cost_matrix(&pred, &gt, costs)?),
        }),
        _ => None,
    };
    let report = metric_star(kind, &pred, &gt, mode, costs, reg)?;
    println!("{}", sig6(report.value));
    if let Some(path) = &args.common.csv {
        append_csv(
            path,
            &CsvRow {
                metric: kind.name(),
                value: report.value,
                assignment: mode,
                alpha: None,
                reg,
                seed: args.common.seed,
            },
        )?;
    }
    Ok(())
}

fn run_assign(args: &AssignArgs) -> anyhow::Result<()> {
    let (pred, gt) = load_pair(&args.pred, &args.gt)?;
    let cost = cost_matrix(&pred, &gt, cost_kind(args.cost))?;
    let (perm, total, mode, reg) = match args.method {
        MethodArg::Exact => {
            let (p, total) = lsa_solve(&cost)?;
            (p, total, AssignmentMode::Exact, None)
        }
        MethodArg::Sinkhorn => {
            let reg = args.common.reg.unwrap_or_else(|| default_reg(&cost));
            let plan = sinkhorn(&cost, reg)?;
            if !plan.converged {
                log::warn!("sinkhorn stopped after {} iterations without converging", plan.iterations);
            }
            let p = plan_round(&plan);
            let total = cost.assignment_cost(&p);
            (p, total, AssignmentMode::Sinkhorn, Some(reg))
        }
    };
    let line: Vec<String> = perm.as_slice().iter().map(usize::to_string).collect();
    println!("{}", line.join(" "));
    println!("cost {}", sig6(total));
    if let Some(r) = reg {
        println!("reg {}", sig6(r));
    }
    if let Some(path) = &args.common.csv {
        append_csv(
            path,
            &CsvRow {
                metric: "assignment_cost",
                value: total,
                assignment: mode,
                alpha: None,
                reg,
                seed: args.common.seed,
            },
        )?;
    }
    Ok(())
}

fn run_fit(args: &FitArgs) -> anyhow::Result<()> {
    let target = read_assembly(&args.target, &TemplateSource::default())?.assembly;
    let init = read_assembly(&args.init, &TemplateSource::Given(Arc::clone(target.shared_template())))?.assembly;
    let loss = match args.loss {
        LossArg::Ml => LossKind::Ml { alpha: args.alpha },
        LossArg::Rmsd => LossKind::Rmsd,
        LossArg::Geom => LossKind::Geom {
            ref_index: args.ref_index.unwrap_or(target.len().saturating_sub(1)),
        },
    };
    let mode = assignment_mode(args.assignment);
    let config = FitConfig {
        reg: args.common.reg,
        step_size: args.step_size,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
        seed: args.common.seed,
        ..FitConfig::new(loss, mode)
    };
    let result = fit_assembly(&init, &target, &config)?;
    println!("{} {}", loss.name(), sig6(result.final_loss));
    println!("iterations {}", result.iterations);
    println!("converged {}", result.converged);
    if let Some(p) = &result.assignment {
        let line: Vec<String> = p.as_slice().iter().map(usize::to_string).collect();
        println!("assignment {}", line.join(" "));
    }
    if let Some(path) = &args.out {
        write_transforms(path, &result.transforms)?;
    }
    if let Some(path) = &args.out_xyz {
        write_assembly_xyz(&init.with_transforms(result.transforms.clone())?, path)?;
    }
    if let Some(path) = &args.common.csv {
        append_csv(
            path,
            &CsvRow {
                metric: loss.name(),
                value: result.final_loss,
                assignment: mode,
                alpha: match loss {
                    LossKind::Ml { alpha } => Some(alpha),
                    _ => None,
                },
                reg: args.common.reg,
                seed: args.common.seed,
            },
        )?;
    }
    Ok(())
}

fn run_interp(args: &InterpArgs) -> anyhow::Result<()> {
    let target = read_assembly(&args.target, &TemplateSource::default())?.assembly;
    let init = read_assembly(&args.init, &TemplateSource::Given(Arc::clone(target.shared_template())))?.assembly;
    let frames = flow_trajectory(&init, &target, args.steps)?;
    std::fs::write(&args.out, format_trajectory_xyz(&frames)).with_context(|| format!("writing {}", args.out.display()))?;
    println!("frames {}", frames.len());
    Ok(())
}

fn run_selftest(seed: u64) -> anyhow::Result<()> {
    let report = rigidpack::selftest::run(seed);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("passed {} failed {}", report.passed(), report.failed());
    if !report.all_passed() {
        bail!("{} selftest check(s) failed", report.failed());
    }
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Metrics(a) => run_metrics(a),
        Command::Assign(a) => run_assign(a),
        Command::Fit(a) => run_fit(a),
        Command::Interp(a) => run_interp(a),
        Command::Selftest { seed } => run_selftest(*seed),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
