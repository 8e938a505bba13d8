//! Experiment configuration. One TOML document; every key is optional and
//! falls back to the reference experiment's value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robust_fm::fm::{FmParams, GainBounds, GainProfile};
use robust_fm::game::{CostModel, GameConfig};
use robust_fm::topology::{generate, GeneratorSpec, Topology, TopologyDoc};

use crate::error::{CliError, FieldError};

/// A per-node quantity: one value for every node, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    All(f64),
    Each(Vec<f64>),
}

impl PerNode {
    fn values(&self) -> Vec<f64> {
        match self {
            PerNode::All(v) => vec![*v],
            PerNode::Each(v) => v.clone(),
        }
    }

    fn resolve(&self, n: usize, field: &str, errors: &mut Vec<FieldError>) -> Vec<f64> {
        match self {
            PerNode::All(v) => vec![*v; n],
            PerNode::Each(v) if v.len() == n => v.clone(),
            PerNode::Each(v) => {
                errors.push(FieldError::new(field, format!("has {} entries, topology has {n} nodes", v.len())));
                vec![f64::NAN; n]
            }
        }
    }
}

/// 2-norm attack bound: a number, or `"qmax"` for the largest bound the
/// game can certify at the initial gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Q2Bar {
    Value(f64),
    Keyword(String),
}

pub const QMAX_KEYWORD: &str = "qmax";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n1: usize,
    pub n2: usize,
    pub p_net1: f64,
    pub p_net2: f64,
    pub intra_edges: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let d = GeneratorSpec::default();
        Self {
            n1: d.n1,
            n2: d.n2,
            p_net1: d.p_net1,
            p_net2: d.p_net2,
            intra_edges: d.intra_edges,
        }
    }
}

/// Where the graph comes from: a topology file, an inline edge list, or
/// (when neither is given) the seeded generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
    /// 1-based `[i, j, w]` triples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmConfig {
    pub k: PerNode,
    pub gamma_bar: PerNode,
    pub nu: PerNode,
}

impl Default for FmConfig {
    fn default() -> Self {
        Self {
            k: PerNode::All(1.0),
            gamma_bar: PerNode::All(1.0),
            nu: PerNode::All(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub p: f64,
    pub q: f64,
    pub g_lo: f64,
    pub g_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        let d = CostModel::default();
        Self {
            p: d.p_exp,
            q: d.q_exp,
            g_lo: d.bounds.g_lo,
            g_hi: d.bounds.g_hi,
            h_lo: d.bounds.h_lo,
            h_hi: d.bounds.h_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub c1: usize,
    pub c2: usize,
    pub tol: f64,
    pub varsigma: f64,
    pub q1_bar: f64,
    pub q2_bar: Q2Bar,
    pub max_cycles: usize,
    pub gap_tol: f64,
    /// Evenly spaced sweep points over `[0, q2*]`, used without `sweep_grid`.
    pub sweep_points: usize,
    /// Explicit, strictly increasing 2-norm bounds to sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_grid: Option<Vec<f64>>,
}

impl Default for GameSection {
    fn default() -> Self {
        let d = GameConfig::default();
        Self {
            c1: d.c1,
            c2: d.c2,
            tol: d.tol,
            varsigma: d.varsigma,
            q1_bar: d.q1_bar,
            q2_bar: Q2Bar::Value(d.q2_bar),
            max_cycles: d.max_cycles,
            gap_tol: d.gap_tol,
            sweep_points: 8,
            sweep_grid: None,
        }
    }
}

/// Initial gains; box midpoints where absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<PerNode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<PerNode>,
}

/// Stand-alone robust program (`solve`): diagonal uncertainty with
/// `E = I`, `F = G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub eps1: f64,
    pub eps2: f64,
    /// Stability margin; the game's `varsigma` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Random perturbations checked against a found certificate; 0 skips.
    pub verify_samples: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            eps1: 0.5,
            eps2: 0.5,
            sigma: None,
            verify_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub p0: PerNode,
    pub tol: f64,
    pub max_steps: usize,
    pub record_every: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            p0: PerNode::All(0.0),
            tol: robust_fm::fm::SIM_TOL,
            max_steps: robust_fm::fm::SIM_MAX_STEPS,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTarget {
    /// Attack the initial gains directly.
    Initial,
    /// Attack the equilibrium gains of the game at the configured bounds.
    #[default]
    Equilibrium,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub target: AttackTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub damping: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { damping: 0.85 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Concurrent sweep points; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub topology: TopologyConfig,
    pub fm: FmConfig,
    pub cost: CostConfig,
    pub game: GameSection,
    pub gains: GainsConfig,
    pub robust: RobustConfig,
    pub simulate: SimulateConfig,
    pub attack: AttackConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            workers: None,
            topology: TopologyConfig::default(),
            fm: FmConfig::default(),
            cost: CostConfig::default(),
            game: GameSection::default(),
            gains: GainsConfig::default(),
            robust: RobustConfig::default(),
            simulate: SimulateConfig::default(),
            attack: AttackConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Everything a command needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub params: FmParams,
    pub cost: CostModel,
    /// `q2_bar` is 0 here when the config asks for `"qmax"`.
    pub game: GameConfig,
    pub theta0: GainProfile,
    pub p0: Vec<f64>,
}

impl Setup {
    pub fn wants_qmax(&self) -> bool {
        matches!(self.config.game.q2_bar, Q2Bar::Keyword(_))
    }
}

struct Checker {
    errors: Vec<FieldError>,
}

impl Checker {
    fn check(&mut self, ok: bool, field: &str, problem: impl Into<String>) {
        if !ok {
            self.errors.push(FieldError::new(field, problem));
        }
    }

    fn positive(&mut self, v: f64, field: &str) {
        self.check(v > 0.0 && v.is_finite(), field, format!("must be positive and finite, got {v}"));
    }

    fn nonnegative(&mut self, v: f64, field: &str) {
        self.check(v >= 0.0 && v.is_finite(), field, format!("must be nonnegative and finite, got {v}"));
    }

    fn open_unit(&mut self, v: f64, field: &str) {
        self.check(v > 0.0 && v < 1.0, field, format!("must lie in (0, 1), got {v}"));
    }

    fn each(&mut self, p: &PerNode, field: &str, ok: impl Fn(f64) -> bool, what: &str) {
        if let Some(v) = p.values().into_iter().find(|&v| !ok(v)) {
            self.errors.push(FieldError::new(field, format!("{what}, got {v}")));
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(s) => format!("<document> line {}", text[..s.start].matches('\n').count() + 1),
                None => "<document>".to_string(),
            };
            CliError::Config(vec![FieldError::new(&field, e.message().to_string())])
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// Every problem that does not depend on the node count, in one pass.
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut c = Checker { errors: Vec::new() };
        c.check(self.seed <= i64::MAX as u64, "seed", "must be below 2^63");
        if let Some(w) = self.workers {
            c.check(w >= 1, "workers", "must be at least 1");
        }

        let t = &self.topology;
        let inline = t.edges.is_some() || t.n_total.is_some() || t.split_index.is_some();
        c.check(!(t.file.is_some() && inline), "topology.file", "cannot be combined with an inline edge list");
        if inline {
            c.check(t.edges.is_some(), "topology.edges", "required with an inline topology");
            c.check(t.n_total.is_some(), "topology.n_total", "required with an inline topology");
            c.check(t.split_index.is_some(), "topology.split_index", "required with an inline topology");
        }
        let g = &t.generator;
        c.check(g.n1 >= 1, "topology.generator.n1", "must be at least 1");
        c.check(g.n2 >= 1, "topology.generator.n2", "must be at least 1");
        for (v, f) in [(g.p_net1, "topology.generator.p_net1"), (g.p_net2, "topology.generator.p_net2")] {
            c.check((0.0..=1.0).contains(&v), f, format!("must lie in [0, 1], got {v}"));
        }
        c.check(
            g.intra_edges >= 1 && g.intra_edges <= g.n1 * g.n2,
            "topology.generator.intra_edges",
            format!("must lie in [1, n1 * n2], got {}", g.intra_edges),
        );

        c.each(&self.fm.k, "fm.k", |v| v > 0.0 && v <= 1.0, "entries must lie in (0, 1]");
        c.each(&self.fm.gamma_bar, "fm.gamma_bar", |v| v >= 0.0 && v.is_finite(), "entries must be nonnegative");
        c.each(&self.fm.nu, "fm.nu", |v| v > 0.0 && v.is_finite(), "entries must be positive");

        let k = &self.cost;
        c.positive(k.p, "cost.p");
        c.positive(k.q, "cost.q");
        c.positive(k.g_lo, "cost.g_lo");
        c.positive(k.h_lo, "cost.h_lo");
        c.check(k.g_lo < k.g_hi && k.g_hi.is_finite(), "cost.g_hi", format!("must exceed g_lo = {}", k.g_lo));
        c.check(k.h_lo < k.h_hi && k.h_hi.is_finite(), "cost.h_hi", format!("must exceed h_lo = {}", k.h_lo));

        let gm = &self.game;
        c.check(gm.c1 >= 1, "game.c1", "must be at least 1");
        c.check(gm.c2 >= 1, "game.c2", "must be at least 1");
        c.positive(gm.tol, "game.tol");
        c.open_unit(gm.varsigma, "game.varsigma");
        c.nonnegative(gm.q1_bar, "game.q1_bar");
        match &gm.q2_bar {
            Q2Bar::Value(v) => c.nonnegative(*v, "game.q2_bar"),
            Q2Bar::Keyword(s) => c.check(s == QMAX_KEYWORD, "game.q2_bar", format!("must be a number or \"{QMAX_KEYWORD}\", got \"{s}\"")),
        }
        c.check(gm.max_cycles >= 1, "game.max_cycles", "must be at least 1");
        c.positive(gm.gap_tol, "game.gap_tol");
        match &gm.sweep_grid {
            Some(grid) => {
                c.check(!grid.is_empty(), "game.sweep_grid", "must not be empty");
                c.check(grid.iter().all(|v| *v >= 0.0 && v.is_finite()), "game.sweep_grid", "entries must be nonnegative");
                c.check(grid.windows(2).all(|w| w[0] < w[1]), "game.sweep_grid", "must be strictly increasing");
            }
            None => c.check(gm.sweep_points >= 1, "game.sweep_points", "must be at least 1"),
        }

        let in_box = |lo: f64, hi: f64| move |v: f64| v >= lo && v <= hi;
        if let Some(p) = &self.gains.g {
            c.each(p, "gains.g", in_box(k.g_lo, k.g_hi), &format!("entries must lie in [{}, {}]", k.g_lo, k.g_hi));
        }
        if let Some(p) = &self.gains.h {
            c.each(p, "gains.h", in_box(k.h_lo, k.h_hi), &format!("entries must lie in [{}, {}]", k.h_lo, k.h_hi));
        }

        c.nonnegative(self.robust.eps1, "robust.eps1");
        c.nonnegative(self.robust.eps2, "robust.eps2");
        if let Some(s) = self.robust.sigma {
            c.open_unit(s, "robust.sigma");
        }

        c.each(&self.simulate.p0, "simulate.p0", |v| v >= 0.0 && v.is_finite(), "entries must be nonnegative");
        c.positive(self.simulate.tol, "simulate.tol");
        c.check(self.simulate.max_steps >= 1, "simulate.max_steps", "must be at least 1");
        c.check(self.simulate.record_every >= 1, "simulate.record_every", "must be at least 1");

        c.open_unit(self.report.damping, "report.damping");
        c.errors
    }

    fn topology(&self) -> Result<Topology, CliError> {
        let t = &self.topology;
        if let Some(path) = &t.file {
            return load_topology(path);
        }
        if let (Some(n), Some(split), Some(edges)) = (t.n_total, t.split_index, &t.edges) {
            let doc = TopologyDoc {
                n_total: n,
                split_index: split,
                edges: edges.clone(),
            };
            return Topology::from_doc(&doc).map_err(|e| CliError::Config(vec![FieldError::new("topology.edges", e.to_string())]));
        }
        let g = &t.generator;
        let spec = GeneratorSpec {
            n1: g.n1,
            n2: g.n2,
            p_net1: g.p_net1,
            p_net2: g.p_net2,
            intra_edges: g.intra_edges,
        };
        Ok(generate(&spec, self.seed)?)
    }

    /// Validates everything in one pass and builds the library objects.
    pub fn setup(self) -> Result<Setup, CliError> {
        let mut errors = self.field_errors();
        let topology = match self.topology() {
            Ok(t) => Some(t),
            Err(CliError::Config(e)) => {
                errors.extend(e);
                None
            }
            Err(e) if errors.is_empty() => return Err(e),
            Err(e) => {
                errors.push(FieldError::new("topology", e.to_string()));
                None
            }
        };
        let Some(topology) = topology else {
            return Err(CliError::Config(errors));
        };
        let n = topology.n();
        let k = self.fm.k.resolve(n, "fm.k", &mut errors);
        let gamma_bar = self.fm.gamma_bar.resolve(n, "fm.gamma_bar", &mut errors);
        let nu = self.fm.nu.resolve(n, "fm.nu", &mut errors);
        let bounds = GainBounds {
            g_lo: self.cost.g_lo,
            g_hi: self.cost.g_hi,
            h_lo: self.cost.h_lo,
            h_hi: self.cost.h_hi,
        };
        let g0 = match &self.gains.g {
            Some(p) => p.resolve(n, "gains.g", &mut errors),
            None => vec![0.5 * (bounds.g_lo + bounds.g_hi); n],
        };
        let h0 = match &self.gains.h {
            Some(p) => p.resolve(n, "gains.h", &mut errors),
            None => vec![0.5 * (bounds.h_lo + bounds.h_hi); n],
        };
        let p0 = self.simulate.p0.resolve(n, "simulate.p0", &mut errors);
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }

        let params = FmParams::new(k, gamma_bar, nu)?;
        let cost = CostModel {
            p_exp: self.cost.p,
            q_exp: self.cost.q,
            bounds,
        };
        let gm = &self.game;
        let game = GameConfig {
            c1: gm.c1,
            c2: gm.c2,
            tol: gm.tol,
            varsigma: gm.varsigma,
            q1_bar: gm.q1_bar,
            q2_bar: match gm.q2_bar {
                Q2Bar::Value(v) => v,
                Q2Bar::Keyword(_) => 0.0,
            },
            max_cycles: gm.max_cycles,
            gap_tol: gm.gap_tol,
        };
        let theta0 = GainProfile::new(h0, g0, bounds)?;
        Ok(Setup {
            config: self,
            topology,
            params,
            cost,
            game,
            theta0,
            p0,
        })
    }
}

pub fn load_topology(path: &Path) -> Result<Topology, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: TopologyDoc = toml::from_str(&text).map_err(|e| {
        CliError::Config(vec![FieldError::new("topology.file", format!("{}: {}", path.display(), e.message()))])
    })?;
    Topology::from_doc(&doc).map_err(|e| CliError::Config(vec![FieldError::new("topology.file", format!("{}: {e}", path.display()))]))
}

pub fn topology_to_toml(topology: &Topology) -> String {
    toml::to_string(&topology.to_doc()).expect("topology is always representable as TOML")
}
