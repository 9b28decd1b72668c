//! Command-line driver: runs the adaptive loops on the built-in benchmark
//! problems and writes convergence CSVs, mesh snapshots, and SVG plots.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use goafem::driver::{run_adaptive, RunConfig, Strategy};
use goafem::problem::ProblemName;

#[derive(Parser)]
#[command(
    name = "goafem",
    version,
    about = "Adaptive finite elements with maximum and Dörfler marking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an adaptive refinement loop and write its outputs.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Zshape,
    #[value(name = "goal_square", alias = "goal-square")]
    GoalSquare,
    #[value(name = "smooth_square", alias = "smooth-square")]
    SmoothSquare,
}

impl From<ProblemArg> for ProblemName {
    fn from(p: ProblemArg) -> ProblemName {
        match p {
            ProblemArg::Zshape => ProblemName::ZShape,
            ProblemArg::GoalSquare => ProblemName::GoalSquare,
            ProblemArg::SmoothSquare => ProblemName::SmoothSquare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Maximum,
    Doerfler,
    #[value(name = "goafem_maximum", alias = "goafem-maximum")]
    GoafemMaximum,
    Ms,
    Fpz,
    Bet,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Maximum => Strategy::Maximum,
            StrategyArg::Doerfler => Strategy::Doerfler,
            StrategyArg::GoafemMaximum => Strategy::GoafemMaximum,
            StrategyArg::Ms => Strategy::Ms,
            StrategyArg::Fpz => Strategy::Fpz,
            StrategyArg::Bet => Strategy::Bet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SvgArg {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in benchmark problem.
    #[arg(long, value_enum)]
    problem: ProblemArg,

    /// Polynomial degree of the Lagrange elements.
    #[arg(long, default_value_t = 1)]
    p: usize,

    /// Marking strategy.
    #[arg(long, value_enum, default_value = "maximum")]
    strategy: StrategyArg,

    /// Maximum-criterion parameter in (0, 1]. Dörfler-based strategies use
    /// the bulk parameter 1 - theta.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,

    /// Cardinality factor of the goal-oriented maximum criterion.
    #[arg(long, default_value_t = 1.0)]
    cmin: f64,

    /// Stop once the number of free dofs reaches this bound.
    #[arg(long, default_value_t = 50_000)]
    max_dofs: usize,

    /// Stop after this many refinement steps.
    #[arg(long, default_value_t = 60)]
    max_iters: usize,

    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write a mesh snapshot every k-th iteration (0: final mesh only).
    #[arg(long, default_value_t = 0)]
    snapshot_every: usize,

    /// Whether to render SVG plots.
    #[arg(long, value_enum, default_value = "on")]
    svg: SvgArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut config = RunConfig::new(args.problem.into(), args.p, args.strategy.into());
    config.theta = args.theta;
    config.c_min = args.cmin;
    config.max_dofs = args.max_dofs;
    config.max_iters = args.max_iters;
    if let Err(err) = config.validate() {
        eprintln!("error: {err}");
        eprintln!(
            "usage: goafem run --problem <zshape|goal_square|smooth_square> [--p 1|2] \
             [--strategy <maximum|doerfler|goafem_maximum|ms|fpz|bet>] [--theta T] [--cmin C] \
             [--max-dofs N] [--max-iters N] [--out DIR] [--snapshot-every K] [--svg on|off]"
        );
        return ExitCode::from(2);
    }

    let out_dir = args.out.unwrap_or_else(|| {
        PathBuf::from(format!(
            "runs/{}-{}-p{}",
            config.problem, config.strategy, config.degree
        ))
    });
    if let Err(err) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {err}", out_dir.display());
        return ExitCode::from(1);
    }

    let svg_on = matches!(args.svg, SvgArg::On);
    let snapshot_every = args.snapshot_every;
    let mut io_error: Option<String> = None;
    let mut final_mesh: Option<goafem::Mesh> = None;
    println!("# goafem run: {} {} p={} theta={} cmin={}", config.problem, config.strategy, config.degree, config.theta, config.c_min);
    println!("# iter ntri ndof eta eta_star goal nmarked");
    let result = run_adaptive(&config, |view| {
        let r = view.record;
        println!(
            "{:4} {:8} {:8} {:13.6e} {:13.6e} {:+.9e} {:6}",
            r.iter,
            r.n_triangles,
            r.n_dofs,
            r.eta_sq.sqrt(),
            r.eta_star_sq.sqrt(),
            r.goal,
            r.n_marked
        );
        let is_final = view.marks.is_none();
        if snapshot_every > 0 && r.iter % snapshot_every == 0 && !is_final {
            let path = out_dir.join(format!("mesh_{:04}.txt", r.iter));
            if let Err(err) = std::fs::write(&path, view.mesh.to_text()) {
                io_error = Some(format!("{}: {err}", path.display()));
            }
            if svg_on {
                let path = out_dir.join(format!("level_{:04}.svg", r.iter));
                if let Err(err) = std::fs::write(&path, output::level_svg(view.mesh)) {
                    io_error = Some(format!("{}: {err}", path.display()));
                }
            }
        }
        if is_final {
            final_mesh = Some(view.mesh.clone());
        }
    });

    let records = match result {
        Ok(records) => records,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(1);
        }
    };
    if let Some(err) = io_error {
        eprintln!("error: {err}");
        return ExitCode::from(1);
    }

    let write = |path: PathBuf, content: String| -> Result<(), String> {
        std::fs::write(&path, content).map_err(|e| format!("{}: {e}", path.display()))
    };
    let outcome = (|| -> Result<(), String> {
        output::write_csv(&records, &out_dir.join("convergence.csv"))
            .map_err(|e| format!("convergence.csv: {e}"))?;
        let mesh = final_mesh.as_ref().expect("final mesh recorded");
        write(out_dir.join("mesh_final.txt"), mesh.to_text())?;
        if svg_on {
            write(out_dir.join("level_final.svg"), output::level_svg(mesh))?;
            write(
                out_dir.join("convergence.svg"),
                output::convergence_svg(
                    &records,
                    config.degree,
                    config.strategy.is_goal_oriented(),
                ),
            )?;
        }
        Ok(())
    })();
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        return ExitCode::from(1);
    }

    let last = records.last().expect("at least one record");
    println!(
        "# done: {} iterations, {} elements, {} dofs -> {}",
        last.iter,
        last.n_triangles,
        last.n_dofs,
        out_dir.display()
    );
    ExitCode::SUCCESS
}
