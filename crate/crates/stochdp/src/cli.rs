//! Command-line front door: argument parsing and subcommand dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use stochdp_core::bellman::{check_assumptions, extract_policy, optimum_value, solve_be, verify_optimality, Policy};
use stochdp_core::control::{control_policy, riccati, riccati_display_delta, solve_oc};
use stochdp_core::convexfn::Sampled1D;
use stochdp_core::extensive::{flatten, solve_extensive};
use stochdp_core::hedging::{
    ae_estimate, exp_utility, na_check, solve_alm, support_diagnostics, AlmOptions, LossFn, MarketModel, NaVerdict,
};
use stochdp_core::lagrange::{check_lagrange_bounds, solve_lagrange};
use stochdp_core::stopping::{markov_check, optimal_stop, snell};
use stochdp_core::tree::ShadowPrice;
use stochdp_core::{AdaptedProcess, ScenarioTree};

use crate::format::{Instance, ProblemKind, TreeFile};
use crate::instances;
use crate::report::{assumption_json, lagrange_json, matrix_json, Compare, Format, Report};
use crate::{gen, CliError};

#[derive(Debug, Clone, Parser)]
#[command(name = "stochdp", version, about = "Convex dynamic programming on scenario trees")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// tree file (JSON)
    #[arg(short, long, global = true)]
    pub input: Option<PathBuf>,
    /// tolerance for optimality residuals and oracle agreement
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// worker threads (0 = all cores)
    #[arg(long, global = true, env = "STOCH_BELLMAN_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Backward recursion, policy, per-stage values and assumption report.
    Solve {
        /// ε of the lower-bound certificates
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Recursion and deterministic-equivalent solve side by side.
    Oracle,
    /// Optimal stopping of the reward `R`.
    Stop,
    /// Riccati tables and control policy for `A, B, W, Q, R` data.
    Control,
    /// Value of a problem of Lagrange.
    Lagrange {
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Hedge the leaf claim `c` with assets priced by `s`.
    Hedge {
        /// quad, exp, or grid:<file> with {knots, values}
        #[arg(long, default_value = "quad")]
        loss: String,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 0.0)]
        wealth: f64,
        #[arg(long)]
        allow_arbitrage: bool,
        #[arg(long, default_value_t = 801)]
        grid_points: usize,
    },
    /// Assumption diagnostics without solving.
    Check {
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Write a seeded random instance as a tree file.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Lagrange,
    Lq,
    Market,
    Reward,
    MarkovReward,
}

/// Run one command; returns the exit code and the text to print (stdout on
/// success, stderr otherwise).
pub fn run(cfg: &RunConfig) -> (i32, String) {
    let threads = cfg.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return (2, format!("error: thread pool: {e}\n")),
    };
    match pool.install(|| dispatch(cfg)) {
        Ok(out) => (0, out),
        Err(e) => (e.exit_code(), format!("error: {e}\n")),
    }
}

fn load(cfg: &RunConfig) -> Result<Instance, CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Validation("--input is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    TreeFile::parse(&text)?.load()
}

fn dispatch(cfg: &RunConfig) -> Result<String, CliError> {
    let report = match &cfg.command {
        Command::Gen { kind, horizon, branching, dim, output } => {
            let file = generate(*kind, cfg.seed, *horizon, *branching, *dim);
            let text = file.to_json() + "\n";
            return match output {
                Some(path) => {
                    std::fs::write(path, &text)?;
                    Ok(String::new())
                }
                None => Ok(text),
            };
        }
        Command::Solve { eps } => solve(&load(cfg)?, cfg.tol, *eps)?,
        Command::Oracle => oracle(&load(cfg)?, cfg.tol)?,
        Command::Stop => stop(&load(cfg)?)?,
        Command::Control => control(&load(cfg)?, cfg.tol)?,
        Command::Lagrange { eps } => lagrange(&load(cfg)?, cfg.tol, *eps)?,
        Command::Hedge { loss, rho, wealth, allow_arbitrage, grid_points } => {
            let opts = AlmOptions { allow_arbitrage: *allow_arbitrage, grid_points: *grid_points, grid: None };
            hedge(&load(cfg)?, &parse_loss(loss, *rho)?, *wealth, &opts)?
        }
        Command::Check { eps } => check(&load(cfg)?, *eps)?,
    };
    Ok(report.render(cfg.format))
}

pub fn generate(kind: GenKind, seed: u64, horizon: usize, branching: usize, dim: usize) -> TreeFile {
    match kind {
        GenKind::Lagrange => gen::lagrange_file(&gen::quadratic_lagrange(seed, horizon, branching, dim)),
        GenKind::Lq => {
            let (sys, costs) = gen::lq_control(seed, horizon, branching, dim, dim.max(1));
            gen::control_file(&sys, &costs)
        }
        GenKind::Market => gen::market_file(&gen::binomial_market(seed, horizon)),
        GenKind::Reward => {
            let (tree, r) = gen::reward_tree(seed, horizon, branching);
            gen::reward_file(&tree, &r)
        }
        GenKind::MarkovReward => {
            let (tree, r) = gen::markov_reward_tree(seed, horizon, branching);
            gen::reward_file(&tree, &r)
        }
    }
}

fn parse_loss(text: &str, rho: f64) -> Result<LossFn, CliError> {
    let loss = match text {
        "quad" => LossFn::Quadratic { scale: 1.0 },
        "exp" => LossFn::Exponential { rho },
        other => match other.strip_prefix("grid:") {
            Some(path) => {
                #[derive(serde::Deserialize)]
                struct Grid {
                    knots: Vec<f64>,
                    values: Vec<f64>,
                    #[serde(default = "yes")]
                    extrapolate: bool,
                }
                fn yes() -> bool {
                    true
                }
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{path}: {e}")))?;
                let g: Grid = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{path}: {e}")))?;
                LossFn::Sampled(Sampled1D::new(g.knots, g.values, g.extrapolate)?)
            }
            None => return Err(CliError::Validation(format!("unknown loss {other:?}"))),
        },
    };
    loss.validate()?;
    Ok(loss)
}

fn labels(tree: &ScenarioTree, ids: impl IntoIterator<Item = stochdp_core::NodeId>) -> Vec<String> {
    ids.into_iter().map(|id| tree.label(id).to_string()).collect()
}

fn solve(inst: &Instance, tol: f64, eps: f64) -> Result<Report, CliError> {
    let p = instances::stage_problem(inst)?;
    let sol = solve_be(&p)?;
    let policy = extract_policy(&sol)?;
    let mut r = Report::new("solve");
    r.value = Some(sol.value());
    r.per_stage_values = (0..=inst.tree.horizon()).map(|t| optimum_value(&sol, t)).collect::<Result<_, _>>()?;
    r.set_policy(&inst.tree, &policy);
    r.detail("verified", json!(verify_optimality(&policy.decisions, &sol, tol)?));
    r.assumption_report = Some(assumption_json(&inst.tree, &check_assumptions(&p, None, eps)?));
    Ok(r)
}

fn oracle(inst: &Instance, tol: f64) -> Result<Report, CliError> {
    let mut r = Report::new("oracle");
    let (dp, ext) = if inst.kind()? == ProblemKind::Hedge {
        let m = instances::market(inst)?;
        let opts = AlmOptions { allow_arbitrage: true, ..AlmOptions::default() };
        let dp = solve_alm(&m, &LossFn::Quadratic { scale: 1.0 }, 0.0, &opts)?;
        r.set_rows(&m.tree, &dp.positions);
        let (fp, _) = instances::quadratic_hedge_program(&m, 1.0)?;
        (dp.value, solve_extensive(&fp)?)
    } else {
        let p = instances::stage_problem(inst)?;
        let sol = solve_be(&p)?;
        r.set_policy(&inst.tree, &extract_policy(&sol)?);
        (sol.value(), solve_extensive(&flatten(&p))?)
    };
    let delta = (dp - ext.value).abs();
    r.value = Some(dp);
    r.compare = Some(Compare {
        dp,
        extensive: ext.value,
        delta,
        method: format!("{:?}", ext.method),
        within_tol: delta <= tol * (1.0 + dp.abs()),
    });
    Ok(r)
}

fn stop(inst: &Instance) -> Result<Report, CliError> {
    let tree = &inst.tree;
    let reward = instances::reward(inst)?;
    let s = snell(tree, &reward);
    let tau = optimal_stop(tree, &reward, &s);
    let mut r = Report::new("stop");
    r.value = Some(s[tree.root()]);
    r.set_rows(tree, &tau.indicator(tree).map(|_, v| vec![*v]));
    r.detail("stop_set", json!(labels(tree, tau.stop_set())));
    r.detail("snell", json!(tree.nodes().map(|id| json!([tree.label(id), s[id]])).collect::<Vec<_>>()));
    match markov_check(tree, &reward) {
        Ok(tables) => r.detail("psi", json!(tables.psi)),
        Err(e) => r.notes.push(format!("no ψ tables: {e}")),
    }
    Ok(r)
}

fn control(inst: &Instance, tol: f64) -> Result<Report, CliError> {
    let (sys, costs) = instances::control(inst)?;
    let tree = &sys.tree;
    let data = riccati(&sys, &costs)?;
    let vf = solve_oc(&sys, &costs.to_convex(&sys)?)?;
    let path = control_policy(&sys, &vf)?;
    let mut r = Report::new("control");
    r.value = Some(match &sys.initial_state {
        Some(x0) => data.value_at(x0),
        None => path.value,
    });
    r.set_rows(tree, &path.controls);
    r.detail("K", json!(tree.nodes().map(|id| json!([tree.label(id), matrix_json(&data.k[id.0])])).collect::<Vec<_>>()));
    r.detail(
        "Lambda",
        json!(tree.nodes().map(|id| json!([tree.label(id), matrix_json(&data.lambda[id.0])])).collect::<Vec<_>>()),
    );
    let delta = riccati_display_delta(&sys, &costs)?;
    let worst = delta.iter().map(|d| d.amax()).fold(0.0, f64::max);
    r.detail("display_delta_max", json!(worst));
    r.notes.push(format!(
        "K uses the full cross term G H⁻¹ G'; halving it changes K by up to {worst:e} on this instance"
    ));
    // feedback policy check against the generic engine
    let p = stochdp_core::control::oc_as_stage_problem(&sys, &costs.to_convex(&sys)?)?;
    let sol = solve_be(&p)?;
    let x0 = path.states[tree.root()].clone();
    let feedback = AdaptedProcess::full(tree, |id| {
        let x = DVector::from_vec(path.states[id].clone());
        let u = -(&data.lambda[id.0] * &x) - &data.kappa[id.0];
        x.iter().chain(u.iter()).copied().collect::<Vec<f64>>()
    });
    r.detail("initial_state", json!(x0));
    r.detail("feedback_verified", json!(verify_optimality(&feedback, &sol, tol)?));
    Ok(r)
}

fn lagrange(inst: &Instance, tol: f64, eps: f64) -> Result<Report, CliError> {
    let li = instances::lagrange(inst)?;
    let tree = &li.tree;
    let v = solve_lagrange(&li)?;
    let policy: Policy = extract_policy(&v.solution)?;
    let mut r = Report::new("lagrange");
    r.value = Some(v.value());
    r.set_policy(tree, &policy);
    r.detail("verified", json!(verify_optimality(&policy.decisions, &v.solution, tol)?));
    let zero = ShadowPrice::zero(tree, &vec![li.dim; tree.horizon() + 1]);
    let y = AdaptedProcess::full(tree, |_| vec![0.0; li.dim]);
    r.assumption_report = Some(lagrange_json(tree, &check_lagrange_bounds(&li, &zero, &y, eps)?));
    Ok(r)
}

fn na_json(m: &MarketModel, v: &NaVerdict) -> serde_json::Value {
    json!({
        "pass": v.pass,
        "expected_gain": v.expected_gain,
        "arbitrage": v.arbitrage.as_ref().map(|x| x.iter().map(|(id, p)| json!([m.tree.label(id), p])).collect::<Vec<_>>()),
    })
}

fn hedge(inst: &Instance, loss: &LossFn, wealth: f64, opts: &AlmOptions) -> Result<Report, CliError> {
    let m = instances::market(inst)?;
    let tree = &m.tree;
    let mut r = Report::new("hedge");
    let verdict = na_check(&m)?;
    r.detail("no_arbitrage", na_json(&m, &verdict));
    let sol = solve_alm(&m, loss, wealth, opts)?;
    r.value = Some(sol.value);
    r.set_rows(tree, &sol.positions);
    r.detail("method", json!(format!("{:?}", sol.method)));
    r.detail("wealth", json!(tree.nodes().map(|id| json!([tree.label(id), sol.wealth[id]])).collect::<Vec<_>>()));
    if let LossFn::Exponential { rho } = loss {
        let e = exp_utility(&m, *rho)?;
        r.detail("alpha", json!(tree.nodes().map(|id| json!([tree.label(id), e.alpha[id]])).collect::<Vec<_>>()));
        r.detail(
            "exp_positions",
            json!(tree.nodes().filter(|&id| !tree.is_leaf(id)).map(|id| json!([tree.label(id), e.positions[id]])).collect::<Vec<_>>()),
        );
    }
    if !matches!(loss, LossFn::Quadratic { .. }) {
        if let Ok(ae) = ae_estimate(loss, 10.0, 30.0, 9) {
            r.detail("asymptotic_elasticity", json!({"minus": ae.minus, "plus": ae.plus, "reasonable": ae.reasonable}));
        }
    }
    Ok(r)
}

/// JSON has no infinity; unbounded support values print as `"inf"`.
fn number_or_inf(x: f64) -> serde_json::Value {
    if x == f64::INFINITY {
        json!("inf")
    } else {
        json!(x)
    }
}

fn check(inst: &Instance, eps: f64) -> Result<Report, CliError> {
    let mut r = Report::new("check");
    match inst.kind()? {
        ProblemKind::Hedge => {
            let m = instances::market(inst)?;
            let v = na_check(&m)?;
            let ones = AdaptedProcess::full(&m.tree, |_| 1.0);
            let sigma = support_diagnostics(&m, &ones)?;
            r.assumption_report = Some(json!({
                "pass": v.pass,
                "no_arbitrage": na_json(&m, &v),
                "support_values": sigma.iter().map(|(id, s)| json!([m.tree.label(*id), number_or_inf(*s)])).collect::<Vec<_>>(),
            }));
        }
        ProblemKind::Lagrange => {
            let li = instances::lagrange(inst)?;
            let tree = &li.tree;
            let zero = ShadowPrice::zero(tree, &vec![li.dim; tree.horizon() + 1]);
            let y = AdaptedProcess::full(tree, |_| vec![0.0; li.dim]);
            r.assumption_report = Some(lagrange_json(tree, &check_lagrange_bounds(&li, &zero, &y, eps)?));
        }
        _ => {
            let p = instances::stage_problem(inst)?;
            r.assumption_report = Some(assumption_json(&inst.tree, &check_assumptions(&p, None, eps)?));
        }
    }
    Ok(r)
}
