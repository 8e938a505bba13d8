use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use robust_fm::attacker::{run_hwa, summarize, AttackState};
use robust_fm::error::Error;
use robust_fm::fm::{fixed_point, simulate, sinr, GainProfile};
use robust_fm::game::{find_qmax, run_hig, EquilibriumResult, GameConfig, QmaxResult};
use robust_fm::robust::{assemble_p2, verify_certificate, Coupling, UncertaintyStructure};
use robust_fm::topology::{matrix_norms, pagerank};

use crate::config::{topology_to_toml, AttackTarget, Setup};
use crate::error::CliError;
use crate::output::{Cell, OutDir, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Write the configured topology as a TOML document.
    GenTopology,
    /// Iterate the power-control update from `simulate.p0`.
    Simulate,
    /// Solve the stand-alone robust stabilization program.
    Solve,
    /// Largest 2-norm attack bound the game can certify.
    Qmax,
    /// Run the round-robin game to equilibrium.
    Equilibrium,
    /// Greedy worst-case edge-adding attack.
    Attack,
    /// Equilibrium cost and attack over a grid of 2-norm bounds.
    Sweep,
    /// Per-node investments at equilibrium against PageRank.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenTopology => "gen-topology",
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Qmax => "qmax",
            Command::Equilibrium => "equilibrium",
            Command::Attack => "attack",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

/// Per-run bookkeeping that ends up in the manifest.
pub struct Run {
    pub out: OutDir,
    pub warnings: Vec<String>,
    timings: Vec<(String, f64)>,
    summary: serde_json::Map<String, Value>,
}

impl Run {
    pub fn new(out: OutDir) -> Self {
        Self {
            out,
            warnings: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let v = f();
        self.timings.push((label.to_string(), start.elapsed().as_secs_f64()));
        v
    }

    fn note(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }

    pub fn manifest(&self, command: Command, setup: &Setup) -> Value {
        let config = setup.config.to_toml();
        let hash = Sha256::digest(config.as_bytes());
        json!({
            "command": command.name(),
            "config_sha256": format!("{hash:x}"),
            "seed": setup.config.seed,
            "versions": {
                "robust-fm": robust_fm::VERSION,
                "robust-fm-cli": env!("CARGO_PKG_VERSION"),
            },
            "nodes": setup.topology.n(),
            "timings_s": self.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "summary": self.summary,
            "outputs": self.out.written,
            "warnings": self.warnings,
        })
    }
}

pub fn execute(command: Command, setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    if !setup.game.coprime() {
        run.warnings.push(format!(
            "update frequencies c1 = {} and c2 = {} are not coprime",
            setup.game.c1, setup.game.c2
        ));
    }
    match command {
        Command::GenTopology => gen_topology(setup, run),
        Command::Simulate => command_simulate(setup, run),
        Command::Solve => command_solve(setup, run),
        Command::Qmax => command_qmax(setup, run).map(|_| ()),
        Command::Equilibrium => command_equilibrium(setup, run).map(|_| ()),
        Command::Attack => command_attack(setup, run),
        Command::Sweep => command_sweep(setup, run),
        Command::Report => command_report(setup, run),
    }
}

fn gen_topology(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let t = &setup.topology;
    run.note("edges", json!(t.edges().len()));
    run.note("connected", json!(t.is_connected()));
    run.out.write("topology.toml", topology_to_toml(t).as_bytes())
}

fn command_simulate(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let s = &setup.config.simulate;
    let (params, a) = (&setup.params, setup.topology.adjacency());
    // The dynamics do not care about the cost box.
    let gains = GainProfile::unbounded(setup.theta0.h.clone(), setup.theta0.g.clone())?;
    let traj = run.timed("simulate", || simulate(params, &gains, a, &setup.p0, s.tol, s.max_steps, s.record_every))?;
    let n = params.n();

    let mut columns = vec!["step".to_string()];
    columns.extend((1..=n).map(|i| format!("p_{i}")));
    let mut trajectory = Table {
        name: "trajectory".into(),
        columns,
        rows: Vec::new(),
    };
    let last = traj.powers.len() - 1;
    for (k, p) in traj.powers.iter().enumerate() {
        let step = if k == last { traj.steps } else { k * s.record_every };
        let mut row = vec![Cell::from(step)];
        row.extend(p.iter().map(|&v| Cell::from(v)));
        trajectory.push(row);
    }

    let fixed = fixed_point(params, &gains, a).ok();
    let sinr_final = sinr(params, &gains, a, traj.last())?;
    let mut powers = Table::new("powers", &["node", "final_power", "fixed_point", "sinr"]);
    for i in 0..n {
        powers.push(vec![
            (i + 1).into(),
            traj.last()[i].into(),
            fixed.as_ref().map_or(f64::NAN, |f| f[i]).into(),
            sinr_final[i].into(),
        ]);
    }
    run.note("steps", json!(traj.steps));
    run.note("converged", json!(traj.converged));
    if !traj.converged {
        run.warnings.push(format!("simulation stopped at the step cap {}", s.max_steps));
    }
    run.out.table(&trajectory)?;
    run.out.table(&powers)
}

fn command_solve(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let (n, r) = (setup.topology.n(), &setup.config.robust);
    let sigma = r.sigma.unwrap_or(setup.game.varsigma);
    let unc = UncertaintyStructure::diagonal(n, Coupling::identity(n), Coupling::GainDiagonal, r.eps1, r.eps2, sigma, sigma);
    let a = setup.topology.adjacency();
    let prog = assemble_p2(&setup.params, a, &unc, &setup.cost, &[])?;
    let sol = run.timed("solve", || prog.solve(&setup.game.solve_options(), setup.cost.bounds))?;
    let report = match (&sol.gains, r.verify_samples) {
        (Some(g), s) if s > 0 => Some(run.timed("verify", || verify_certificate(&setup.params, g, a, &unc, s, setup.config.seed))?),
        _ => None,
    };

    let status = serde_json::to_value(sol.solution.status).expect("serializable");
    let status = status.as_str().unwrap_or("unknown");
    let mut summary = Table::new(
        "solve",
        &["status", "objective", "cost", "kkt_residual", "iterations", "phase1_value", "samples", "worst_abscissa", "violations"],
    );
    let cost = sol.gains.as_ref().map(|g| setup.cost.cost(g, 0..n)).transpose()?;
    summary.push(vec![
        status.into(),
        sol.solution.objective_value.into(),
        cost.unwrap_or(f64::NAN).into(),
        sol.solution.kkt_residual.into(),
        sol.solution.iterations.into(),
        sol.solution.phase1_value.unwrap_or(f64::NAN).into(),
        report.as_ref().map_or(0, |r| r.samples).into(),
        report.as_ref().map_or(f64::NAN, |r| r.worst_abscissa).into(),
        report.as_ref().map_or(0, |r| r.violations).into(),
    ]);
    run.out.table(&summary)?;
    run.note("status", json!(status));

    let Some(gains) = &sol.gains else {
        return Err(Error::Infeasible(format!("robust program ended with status {status}")).into());
    };
    run.out.table(&gains_table("gains", setup, gains)?)
}

fn gains_table(name: &str, setup: &Setup, gains: &GainProfile) -> Result<Table, CliError> {
    let pr = pagerank(&setup.topology, setup.config.report.damping)?;
    let mut t = Table::new(name, &["node", "network", "g", "h", "pagerank"]);
    for i in 0..setup.topology.n() {
        t.push(vec![
            (i + 1).into(),
            usize::from(setup.topology.network_of(i)).into(),
            gains.g[i].into(),
            gains.h[i].into(),
            pr[i].into(),
        ]);
    }
    Ok(t)
}

fn qmax(setup: &Setup, run: &mut Run) -> Result<QmaxResult, CliError> {
    let s = setup;
    Ok(run.timed("qmax", || find_qmax(&s.params, &s.topology, &s.game, &s.cost, &s.theta0))?)
}

fn norm_a(setup: &Setup) -> f64 {
    matrix_norms(setup.topology.adjacency()).two_norm
}

fn command_qmax(setup: &Setup, run: &mut Run) -> Result<QmaxResult, CliError> {
    let q = qmax(setup, run)?;
    let na = norm_a(setup);
    let mut t = Table::new("qmax", &["q2_star", "q2_net1", "q2_net2", "norm_a", "q2_star_over_normA"]);
    t.push(vec![q.q2_star.into(), q.per_network[0].into(), q.per_network[1].into(), na.into(), (q.q2_star / na).into()]);
    run.note("q2_star", json!(q.q2_star));
    run.out.table(&t)?;
    Ok(q)
}

/// Game configuration with the `"qmax"` keyword resolved.
fn resolved_game(setup: &Setup, run: &mut Run) -> Result<GameConfig, CliError> {
    let mut game = setup.game.clone();
    if setup.wants_qmax() {
        game.q2_bar = qmax(setup, run)?.q2_star;
    }
    run.note("q2_bar", json!(game.q2_bar));
    Ok(game)
}

fn equilibrium(setup: &Setup, game: &GameConfig, run: &mut Run) -> Result<EquilibriumResult, CliError> {
    let s = setup;
    let eq = run.timed("equilibrium", || run_hig(&s.params, &s.topology, game, &s.cost, &s.theta0))?;
    run.note("rounds", json!(eq.rounds_used));
    run.note("converged", json!(eq.converged));
    if !eq.converged {
        run.warnings.push(format!("game did not converge within {} cycles", game.max_cycles));
    }
    Ok(eq)
}

fn command_equilibrium(setup: &Setup, run: &mut Run) -> Result<EquilibriumResult, CliError> {
    let game = resolved_game(setup, run)?;
    let eq = equilibrium(setup, &game, run)?;
    let mut traj = Table::new("cost_trajectory", &["round", "owner", "cost_net1", "cost_net2", "cost_total", "shifted_total"]);
    for c in &eq.cost_trajectory {
        traj.push(vec![
            c.round.into(),
            usize::from(c.owner).into(),
            c.cost_net1.into(),
            c.cost_net2.into(),
            (c.cost_net1 + c.cost_net2).into(),
            c.total.into(),
        ]);
    }
    let f = eq.final_cost();
    let mut summary = Table::new("equilibrium", &["q2_bar", "cost_net1", "cost_net2", "cost_total", "rounds", "converged"]);
    summary.push(vec![
        game.q2_bar.into(),
        f.cost_net1.into(),
        f.cost_net2.into(),
        (f.cost_net1 + f.cost_net2).into(),
        eq.rounds_used.into(),
        eq.converged.into(),
    ]);
    run.out.table(&traj)?;
    run.out.table(&gains_table("theta_star", setup, &eq.theta_star)?)?;
    run.out.table(&summary)?;
    Ok(eq)
}

fn attack_tables(prefix: &str, state: &AttackState) -> Table {
    let mut edges = Table::new(&format!("{prefix}_edges"), &["i", "j", "weight"]);
    for e in &state.added {
        edges.push(vec![(e.i + 1).into(), (e.j + 1).into(), e.weight.into()]);
    }
    edges
}

fn command_attack(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let game = resolved_game(setup, run)?;
    let theta = match setup.config.attack.target {
        AttackTarget::Initial => setup.theta0.clone(),
        AttackTarget::Equilibrium => equilibrium(setup, &game, run)?.theta_star,
    };
    let s = setup;
    let state = run.timed("attack", || run_hwa(&s.params, &s.topology, &theta, game.q1_bar, game.q2_bar))?;
    let sum = summarize(&s.params, &theta, &s.topology, &state)?;
    let mut summary = Table::new(
        "attack_summary",
        &["q1_bar", "q2_bar", "edges", "one_norm", "two_norm", "abscissa_before", "abscissa_after", "saturated"],
    );
    summary.push(vec![
        game.q1_bar.into(),
        game.q2_bar.into(),
        state.added.len().into(),
        sum.one_norm.into(),
        sum.two_norm.into(),
        sum.abscissa_before.into(),
        sum.abscissa_after.into(),
        state.saturated.into(),
    ]);
    run.note("abscissa_after", json!(sum.abscissa_after));
    run.out.table(&attack_tables("attack", &state))?;
    run.out.table(&summary)
}

struct SweepPoint {
    q2: f64,
    outcome: Result<(EquilibriumResult, robust_fm::attacker::AttackSummary), Error>,
}

fn command_sweep(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let grid = match &setup.config.game.sweep_grid {
        Some(g) => g.clone(),
        None => {
            let q = command_qmax(setup, run)?.q2_star;
            let k = setup.config.game.sweep_points;
            if k == 1 {
                vec![0.0]
            } else {
                (0..k).map(|i| q * i as f64 / (k - 1) as f64).collect()
            }
        }
    };
    let workers = setup.config.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::io(&run.out.path, e))?;
    let s = setup;
    let points: Vec<SweepPoint> = run.timed("sweep", || {
        pool.install(|| {
            grid.par_iter()
                .map(|&q2| {
                    let game = GameConfig { q2_bar: q2, ..s.game.clone() };
                    let outcome = run_hig(&s.params, &s.topology, &game, &s.cost, &s.theta0).and_then(|eq| {
                        let state = run_hwa(&s.params, &s.topology, &eq.theta_star, game.q1_bar, q2)?;
                        let sum = summarize(&s.params, &eq.theta_star, &s.topology, &state)?;
                        Ok((eq, sum))
                    });
                    SweepPoint { q2, outcome }
                })
                .collect()
        })
    });

    let na = norm_a(setup);
    let mut costs = Table::new(
        "sweep",
        &["q2_over_normA", "cost_net1", "cost_net2", "cost_total", "rounds", "converged", "status"],
    );
    let mut attacks = Table::new(
        "sweep_attacks",
        &["q2_over_normA", "one_norm", "two_norm", "abscissa_before", "abscissa_after"],
    );
    let mut flagged = 0;
    for p in &points {
        let x = p.q2 / na;
        match &p.outcome {
            Ok((eq, sum)) => {
                let f = eq.final_cost();
                costs.push(vec![
                    x.into(),
                    f.cost_net1.into(),
                    f.cost_net2.into(),
                    (f.cost_net1 + f.cost_net2).into(),
                    eq.rounds_used.into(),
                    eq.converged.into(),
                    "ok".into(),
                ]);
                attacks.push(vec![x.into(), sum.one_norm.into(), sum.two_norm.into(), sum.abscissa_before.into(), sum.abscissa_after.into()]);
            }
            Err(e) => {
                flagged += 1;
                let status = match e {
                    Error::RoundInfeasible { .. } | Error::Infeasible(_) => "infeasible",
                    _ => "failed",
                };
                run.warnings.push(format!("sweep point q2 = {}: {e}", p.q2));
                let nan = Cell::from(f64::NAN);
                costs.push(vec![x.into(), nan.clone(), nan.clone(), nan, 0usize.into(), false.into(), status.into()]);
            }
        }
    }
    run.note("points", json!(points.len()));
    run.note("flagged", json!(flagged));
    run.note("workers", json!(workers));
    run.out.table(&costs)?;
    run.out.table(&attacks)
}

fn command_report(setup: &Setup, run: &mut Run) -> Result<(), CliError> {
    let game = resolved_game(setup, run)?;
    let eq = equilibrium(setup, &game, run)?;
    let pr = pagerank(&setup.topology, setup.config.report.damping)?;
    let (theta, cost) = (&eq.theta_star, &setup.cost);
    let mut t = Table::new(
        "report",
        &["node", "pagerank", "alpha_cost", "beta_cost", "total_investment", "is_border_node"],
    );
    for i in 0..setup.topology.n() {
        let a = cost.alpha(theta.g[i])?;
        let b = cost.beta(theta.h[i])?;
        t.push(vec![(i + 1).into(), pr[i].into(), a.into(), b.into(), (a + b).into(), setup.topology.is_border_node(i).into()]);
    }
    run.out.table(&t)
}
