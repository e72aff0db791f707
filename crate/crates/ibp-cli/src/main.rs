//! Command-line interface for block tariff design.
//!
//! Exit codes: 0 success, 1 scenario error, 2 solver stopped without an
//! incumbent, 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Output that tolerates a closed pipe (`ibp ... | head` must not panic).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}
macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

use ibp::bb::{solve, SolveOptions};
use ibp::milp::{build_milp, compute_big_m, extract_solution, validate_big_m};
use ibp::report::{emit_profiles, emit_sweep_csv, metrics, run_summary, SolverSummary};
use ibp::scenario::{derive, ScenarioConfig};
use ibp::search::{default_xi_large, lower_bound, oracle_grid, sweep, SweepSpec};
use ibp::synth::{generate_scenario, Template};

#[derive(Parser)]
#[command(name = "ibp", version, about = "Design intraday block pricing tariffs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Relative optimality gap.
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    /// Wall-clock limit per solve in seconds (ignored with --deterministic).
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// Node limit per solve.
    #[arg(long, default_value_t = 2000)]
    node_limit: u64,
    /// Fixed-order, clock-free exploration; identical runs produce
    /// byte-identical artifacts.
    #[arg(long)]
    deterministic: bool,
    /// Per-node progress lines on stderr.
    #[arg(long)]
    verbose: bool,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            gap_tol: self.gap,
            time_limit: Some(self.time_limit),
            node_limit: Some(self.node_limit),
            deterministic: self.deterministic,
            log: self.verbose,
            ..SolveOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a scenario, print derived quantities and the big-M derivation.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Increment used for the big-M derivation log.
        #[arg(long, default_value_t = 0.03)]
        xi: f64,
    },
    /// Solve one (xi, blocks) tariff design problem.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        xi: f64,
        /// Block count; defaults to the scenario's.
        #[arg(long)]
        blocks: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Solve across an increment grid and emit the sweep table.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Increment grid (comma separated). Default 0,0.005,...,0.06.
        #[arg(long, value_delimiter = ',')]
        xi: Vec<f64>,
        /// Block counts (comma separated). Default 2,3.
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<usize>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Iterate the first breakpoint under a punitive increment: PAR lower
    /// bound and attainable-demand envelopes.
    LowerBound {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Breakpoint step; defaults to span/500.
        #[arg(long)]
        eps: Option<f64>,
        /// Punitive increment; defaults to a derived sufficient value.
        #[arg(long)]
        xi_large: Option<f64>,
    },
    /// Cross-check one (xi, blocks) point against the breakpoint grid.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        xi: f64,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        /// Breakpoint grid step; defaults to span/200.
        #[arg(long)]
        q_step: Option<f64>,
    },
    /// Export the MILP in MPS fixed format.
    ExportMps {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        xi: f64,
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Generate a deterministic synthetic scenario file.
    Generate {
        /// Output path for the scenario document.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// peaked, bimodal, or flat.
        #[arg(long, default_value = "peaked")]
        template: String,
        #[arg(long, default_value_t = 24)]
        slots: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
    },
}

enum Failure {
    Scenario(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Scenario(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Scenario(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ibp::Error> for Failure {
    fn from(e: ibp::Error) -> Self {
        match e {
            ibp::Error::Scenario { .. } => Failure::Scenario(e.to_string()),
            ibp::Error::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::from_path(path).map_err(Failure::from)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn default_xi_grid() -> Vec<f64> {
    (0..=12).map(|k| k as f64 * 0.005).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario, xi } => {
            let cfg = load(&scenario)?;
            let derived = derive(&cfg)?;
            let big_m = compute_big_m(&cfg, xi)?;
            say!("scenario: {}", cfg.label);
            say!("slots: {}", cfg.horizon);
            say!("clusters: {}", cfg.cluster_count());
            say!("flat_price: {:.6}", derived.flat_price);
            say!("baseline_par: {:.6}", derived.baseline_par);
            say!("total_demand: {:.6}", derived.total_demand);
            say!(
                "breakpoint_bounds: [{:.6}, {:.6}]",
                derived.default_bounds.0,
                derived.default_bounds.1
            );
            say!("\nbig-M derivation (xi = {xi}):");
            say!("{}", big_m.derivation_log);
            Ok(())
        }
        Command::Solve {
            scenario,
            out,
            xi,
            blocks,
            solver,
        } => {
            let mut cfg = load(&scenario)?;
            if let Some(f) = blocks {
                cfg.block_count = f;
                cfg.validate().map_err(Failure::from)?;
            }
            ensure_dir(&out)?;
            let big_m = compute_big_m(&cfg, xi)?;
            let model = build_milp(&cfg, xi, &big_m)?;
            let outcome = solve(&model, &solver.options(), None)?;
            eprintln!("solver: {}", outcome.summary());
            let Some(assignment) = outcome.assignment.clone() else {
                return Err(Failure::Solver(format!(
                    "no incumbent found ({})",
                    outcome.status
                )));
            };
            let audit = validate_big_m(&model, &assignment, &big_m);
            if !audit.is_clean() {
                eprintln!(
                    "warning: {} quantities within 1% of their big-M bound; result untrustworthy",
                    audit.flags.len()
                );
            }
            let (prices, response, _, _) = extract_solution(&model, &assignment)?;
            let mut report = metrics(&cfg, &prices, &response)?;
            report.solver = Some(SolverSummary {
                status: outcome.status.to_string(),
                bound: outcome.bound,
                gap: outcome.gap,
                node_count: outcome.node_count,
                lp_count: outcome.lp_count,
            });
            emit_profiles(&cfg, &report.response, None, &out.join("profiles.csv"))?;
            let summary = run_summary(&cfg, Some(&report))?;
            write_text(&out.join("summary.txt"), &summary)?;
            say_raw!("{summary}");
            Ok(())
        }
        Command::Sweep {
            scenario,
            out,
            xi,
            blocks,
            solver,
        } => {
            let cfg = load(&scenario)?;
            ensure_dir(&out)?;
            let spec = SweepSpec {
                xi_values: if xi.is_empty() { default_xi_grid() } else { xi },
                block_counts: if blocks.is_empty() {
                    vec![2, 3]
                } else {
                    blocks
                },
                options: solver.options(),
            };
            let points = sweep(&cfg, &spec)?;
            emit_sweep_csv(&points, &out.join("sweep.csv"))?;
            let best = points
                .iter()
                .filter_map(|p| p.outcome.as_ref().ok())
                .min_by(|a, b| a.par.total_cmp(&b.par));
            let summary = run_summary(&cfg, best)?;
            write_text(&out.join("summary.txt"), &summary)?;
            say_raw!("{summary}");
            let failures = points.iter().filter(|p| p.outcome.is_err()).count();
            if failures > 0 {
                eprintln!("{failures} grid point(s) failed; see the status column");
            }
            Ok(())
        }
        Command::LowerBound {
            scenario,
            out,
            eps,
            xi_large,
        } => {
            let cfg = load(&scenario)?;
            ensure_dir(&out)?;
            let derived = derive(&cfg)?;
            let span = derived.default_bounds.1 - derived.default_bounds.0;
            let eps = eps.unwrap_or(span / 500.0).max(f64::MIN_POSITIVE);
            let xi_large = match xi_large {
                Some(v) => v,
                None => default_xi_large(&cfg)?,
            };
            let lb = lower_bound(&cfg, eps, xi_large)?;
            if lb.degenerate_step {
                eprintln!("warning: step covers the whole breakpoint range; single iteration");
            }

            let mut iter_csv = String::from("q1,peak,par\n");
            for step in &lb.per_iteration {
                iter_csv.push_str(&format!("{},{},{}\n", step.q1, step.peak, step.par));
            }
            write_text(&out.join("lower_bound.csv"), &iter_csv)?;

            // Profiles at the bound-attaining breakpoint.
            let mut cfg2 = cfg.clone();
            cfg2.block_count = 2;
            let prices = ibp::PriceStructure::new(0.0, lb.xi_large, vec![lb.q1_star]);
            let (resp, _) = ibp::solve_response(&cfg2, &prices, 1e-9)?;
            emit_profiles(&cfg, &resp, Some(&lb.envelopes), &out.join("profiles.csv"))?;

            let mut summary = run_summary(&cfg, None)?;
            summary.push_str(&format!(
                "\n[lower_bound]\npar_lower = {:.6}\n",
                lb.par_lower
            ));
            summary.push_str(&format!("q1_star = {:.6}\n", lb.q1_star));
            summary.push_str(&format!("xi_large = {:.6}\n", lb.xi_large));
            summary.push_str(&format!("iterations = {}\n", lb.per_iteration.len()));
            write_text(&out.join("summary.txt"), &summary)?;
            say_raw!("{summary}");
            Ok(())
        }
        Command::Oracle {
            scenario,
            out,
            xi,
            blocks,
            q_step,
        } => {
            let cfg = load(&scenario)?;
            ensure_dir(&out)?;
            let derived = derive(&cfg)?;
            let span = derived.default_bounds.1 - derived.default_bounds.0;
            let q_step = q_step.unwrap_or(span / 200.0).max(f64::MIN_POSITIVE);
            let res = oracle_grid(&cfg, xi, blocks, q_step)?;
            let mut summary = run_summary(&cfg, Some(&res.report))?;
            summary.push_str(&format!(
                "\n[oracle]\ngrid_points = {}\nfeasible_points = {}\n",
                res.grid_points, res.feasible_points
            ));
            summary.push_str(&format!(
                "lambda1_interval = [{:.6}, {:.6}]\n",
                res.lambda1_interval.0, res.lambda1_interval.1
            ));
            write_text(&out.join("summary.txt"), &summary)?;
            say_raw!("{summary}");
            Ok(())
        }
        Command::ExportMps {
            scenario,
            out,
            xi,
            blocks,
        } => {
            let mut cfg = load(&scenario)?;
            if let Some(f) = blocks {
                cfg.block_count = f;
                cfg.validate().map_err(Failure::from)?;
            }
            ensure_dir(&out)?;
            let big_m = compute_big_m(&cfg, xi)?;
            let model = build_milp(&cfg, xi, &big_m)?;
            ibp::mps::export_exchange_format(&model, &out.join("model.mps"))?;
            let stats = model.stats();
            write_text(&out.join("model_stats.txt"), &format!("{stats}\n"))?;
            say!("{stats}");
            Ok(())
        }
        Command::Generate {
            scenario,
            seed,
            template,
            slots,
            clusters,
        } => {
            let template: Template = template.parse().map_err(Failure::Scenario)?;
            if slots < 2 || clusters < 1 {
                return Err(Failure::Scenario(
                    "need at least 2 slots and 1 cluster".into(),
                ));
            }
            let cfg = generate_scenario(seed, template, slots, clusters);
            if let Some(dir) = scenario.parent() {
                if !dir.as_os_str().is_empty() {
                    ensure_dir(dir)?;
                }
            }
            write_text(&scenario, &cfg.to_toml_string())?;
            say!("wrote {}", scenario.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
