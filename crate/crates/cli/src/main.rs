use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use geodom::convexity::Hypothesis;
use geodom::gallery;
use geodom::problem::{self, HypothesesDef, Problem, ProblemDef, RunBundle};
use geodom::{GeodomError, Result};

macro_rules! say {
    ($buf:expr, $($arg:tt)*) => {{
        $buf.push_str(&format!($($arg)*));
        $buf.push('\n');
    }};
}

#[derive(Parser)]
#[command(name = "geodom", version, about = "Geodesics in open domains by barrier penalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a geodesic between the problem's endpoints.
    Solve(RunArgs),
    /// Sample the boundary-convexity hypotheses.
    CheckHypotheses(RunArgs),
    /// Compute a fixed-energy trajectory through the Jacobi metric.
    Jacobi(RunArgs),
    /// Bundled example problems.
    #[command(subcommand)]
    Gallery(GalleryCommand),
}

#[derive(Subcommand)]
enum GalleryCommand {
    /// Print the names of the bundled problems.
    List,
    /// Run every applicable command on every bundled problem.
    RunAll {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Problem file, or the name of a gallery problem.
    problem: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for artifacts [default: out/<problem name>].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of barrier levels.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    k_nodes: Option<usize>,
    /// Comma-separated hypotheses to check, e.g. t1,t2.
    #[arg(long, value_delimiter = ',', value_parser = parse_hypothesis)]
    checks: Option<Vec<Hypothesis>>,
}

fn parse_hypothesis(s: &str) -> std::result::Result<Hypothesis, String> {
    Hypothesis::ALL.into_iter().find(|h| h.name() == s).ok_or_else(|| {
        let known: Vec<&str> = Hypothesis::ALL.iter().map(|h| h.name()).collect();
        format!("unknown hypothesis `{s}` (known: {})", known.join(", "))
    })
}

fn load_def(arg: &str) -> Result<ProblemDef> {
    let path = Path::new(arg);
    if path.exists() {
        ProblemDef::load(path)
    } else if arg.ends_with(".json") {
        Err(GeodomError::Io(format!("{arg}: no such file")))
    } else {
        gallery::load(arg)
    }
}

impl RunArgs {
    fn apply(&self, def: &mut ProblemDef) {
        if let Some(seed) = self.seed {
            apply_seed(def, seed);
        }
        if let Some(levels) = self.levels {
            def.barrier.levels = levels;
        }
        if let Some(eps0) = self.eps0 {
            def.solver.eps0 = eps0;
        }
        if let Some(k) = self.k_nodes {
            def.solver.k_nodes = k;
        }
        if let Some(checks) = &self.checks {
            def.hypotheses.get_or_insert_with(HypothesesDef::default).checks = checks.clone();
        }
    }

    fn prepare(&self) -> Result<(Problem, PathBuf)> {
        let mut def = load_def(&self.problem)?;
        self.apply(&mut def);
        let dir = self.out_dir.clone().unwrap_or_else(|| default_dir(&def, &self.problem));
        Ok((def.build()?, dir))
    }
}

fn apply_seed(def: &mut ProblemDef, seed: u64) {
    def.solver.seed = seed;
    def.hypotheses.get_or_insert_with(HypothesesDef::default).seed = seed;
}

fn default_dir(def: &ProblemDef, arg: &str) -> PathBuf {
    let name = if def.name.is_empty() {
        Path::new(arg).file_stem().map_or("problem".into(), |s| s.to_string_lossy().into_owned())
    } else {
        def.name.clone()
    };
    Path::new("out").join(name)
}

fn cmd_solve(problem: &Problem, dir: &Path) -> Result<(i32, String)> {
    let mut text = String::new();
    let out = problem::run_solve(problem)?;
    problem::write_solve_artifacts(dir, problem, &out)?;
    let mut bundle = RunBundle::new(&problem.def);
    bundle.solve = Some(out.report.clone());
    bundle.multiplicity = out.multiplicity.clone();
    problem::write_bundle(dir, &bundle)?;
    let r = &out.report;
    say!(
        text,
        "{}: {:?} f = {:.10} length = {:.10} el_residual = {:.3e} beta = {:.4e} stages = {}",
        problem.def.name,
        r.status,
        r.f_value,
        r.length,
        r.el_residual,
        r.beta,
        r.history.len()
    );
    if let Some(reason) = &r.failure_reason {
        say!(text, "  reason: {reason}");
    }
    if let Some(m) = &out.multiplicity {
        for g in &m.geodesics {
            say!(text, "  winding {:?}: f = {:.10} length = {:.10}", g.winding, g.f_value, g.length);
        }
        for d in &m.dropped {
            say!(text, "  winding {:?}: dropped ({})", d.winding, d.reason);
        }
    }
    Ok((r.status.exit_code(), text))
}

fn cmd_check(problem: &Problem, dir: &Path) -> Result<(i32, String)> {
    let mut text = String::new();
    let report = problem::run_check(problem)?;
    problem::write_check_artifacts(dir, &report)?;
    let mut bundle = RunBundle::new(&problem.def);
    bundle.hypotheses = Some(report.clone());
    problem::write_bundle(dir, &bundle)?;
    text.push_str(&report.to_table());
    Ok((report.exit_code(), text))
}

fn cmd_jacobi(problem: &Problem, dir: &Path) -> Result<(i32, String)> {
    let mut text = String::new();
    let out = problem::run_jacobi(problem)?;
    problem::write_jacobi_artifacts(dir, problem, &out)?;
    let mut bundle = RunBundle::new(&problem.def);
    bundle.solve = Some(out.solve.clone());
    bundle.jacobi = Some(out.checks.clone());
    problem::write_bundle(dir, &bundle)?;
    let c = &out.checks;
    say!(
        text,
        "{}: {:?} jhes_defect = {:.3e} rep = {:?} (M' = {:.4e})",
        problem.def.name, out.solve.status, c.jhes_defect, c.rep.verdict.status, c.rep.m_prime
    );
    if let (Some(spread), Some(res), Some(t)) = (c.energy_spread, c.ode_residual, c.duration) {
        say!(text, "  energy spread = {spread:.3e} ode residual = {res:.3e} duration = {t:.10}");
    }
    if let Some(e) = &c.reparam_error {
        say!(text, "  reparametrization failed: {e}");
    }
    if let Some(reason) = &out.solve.failure_reason {
        say!(text, "  reason: {reason}");
    }
    Ok((out.exit_code(), text))
}

fn run_gallery_entry(name: &str, out_dir: &Path, seed: Option<u64>) -> Result<(Vec<(&'static str, i32)>, String)> {
    let mut def = gallery::load(name)?;
    if let Some(seed) = seed {
        apply_seed(&mut def, seed);
    }
    let problem = def.build()?;
    let dir = out_dir.join(name);
    let mut runs = vec![("solve", cmd_solve(&problem, &dir.join("solve"))?)];
    if problem.def.hypotheses.is_some() {
        runs.push(("check-hypotheses", cmd_check(&problem, &dir.join("check"))?));
    }
    if problem.lagrangian.is_some() {
        runs.push(("jacobi", cmd_jacobi(&problem, &dir.join("jacobi"))?));
    }
    let text = runs.iter().map(|(_, (_, t))| t.as_str()).collect();
    Ok((runs.into_iter().map(|(c, (e, _))| (c, e)).collect(), text))
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("GEODOM_THREADS") {
        let n: usize = value
            .parse()
            .map_err(|_| GeodomError::Input(format!("GEODOM_THREADS: expected a positive integer, got `{value}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| GeodomError::Input(format!("GEODOM_THREADS: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::Solve(args) => {
            let (p, dir) = args.prepare()?;
            let (code, text) = cmd_solve(&p, &dir)?;
            print!("{text}");
            Ok(code)
        }
        Command::CheckHypotheses(args) => {
            let (p, dir) = args.prepare()?;
            let (code, text) = cmd_check(&p, &dir)?;
            print!("{text}");
            Ok(code)
        }
        Command::Jacobi(args) => {
            let (p, dir) = args.prepare()?;
            let (code, text) = cmd_jacobi(&p, &dir)?;
            print!("{text}");
            Ok(code)
        }
        Command::Gallery(GalleryCommand::List) => {
            for name in gallery::names() {
                let def = gallery::load(name)?;
                println!("{name:32} {}", def.description);
            }
            Ok(0)
        }
        Command::Gallery(GalleryCommand::RunAll { out_dir, seed }) => {
            let names: Vec<&str> = gallery::names().collect();
            let results: Vec<_> = names
                .par_iter()
                .map(|name| (*name, run_gallery_entry(name, &out_dir, seed)))
                .collect();
            let mut code = 0;
            for (name, res) in results {
                match res {
                    Ok((codes, text)) => {
                        print!("{text}");
                        let list: Vec<String> = codes.iter().map(|(c, e)| format!("{c}={e}")).collect();
                        println!("{name:32} {}", list.join(" "));
                    }
                    Err(e) => {
                        eprintln!("{name}: error: {e}");
                        code = 1;
                    }
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
