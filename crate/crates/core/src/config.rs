//! Run configuration: a TOML file with a `[problem]` section and optional
//! solver sections per subcommand. Unknown keys are rejected and every
//! error carries the dotted path of the offending key.

use crate::cell::{BoxParams, PhysicalHamiltonian, TorusGrid};
use crate::effective::MomentumGrid;
use crate::error::{Error, Result};
use crate::field::{Coord, PotentialSpec, QuasiComponent, TrigSum, TrigTerm};
use crate::hamiltonians::{
    lift_closed_form, ClosedFormSpec, ControlHamiltonianSpec, ControlSet, CostTerm, DriftTerm, Family, HamiltonianSpec,
};
use crate::homogenizer::InitialDatum;
use crate::scales::{Ratio, ScaleSystem, DEFAULT_BUDGET, DEFAULT_SEARCH_BOUND, DEFAULT_TOLERANCE};
use crate::scheme::{Flux, SchemeOptions, Sweep};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_SEED: u64 = 20_240_601;

fn cfg<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { key: key.to_string(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub resonance: ResonanceConfig,
    #[serde(default)]
    pub cell: CellConfig,
    pub table: Option<TableConfig>,
    pub average: Option<AverageConfig>,
    #[serde(rename = "box")]
    pub box_: Option<BoxConfig>,
    pub homogenize: Option<HomogenizeConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    /// `a·|p| − V`
    Eikonal,
    /// `a·|p|² − V`
    Quadratic,
    /// `|p|^m − V`
    Plain,
    /// `sup_α {−a·⟨α, p⟩ − V − |α|²/(4k)}` over a sampled control set.
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub hamiltonian: HamiltonianKind,
    /// Exponent of the plain family.
    pub exponent: Option<u8>,
    /// Slow variable (defaults to the origin).
    pub x: Option<Vec<f64>>,
    /// Coefficient `a`; defaults to 1.
    pub coefficient: Option<TrigConfig>,
    pub potential: PotentialConfig,
    pub scales: Option<ScalesConfig>,
    /// Control set of the control-form Hamiltonian.
    pub controls: Option<ControlsConfig>,
    /// Kinetic coefficient `k` of the control form.
    pub kinetic: Option<TrigConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrigConfig {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variable {
    /// Fast variable `y^scale_axis`.
    #[default]
    Y,
    /// Slow variable `x_axis`.
    X,
}

/// `amp · sin(2π · freq · var + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    #[serde(default)]
    pub var: Variable,
    #[serde(default)]
    pub scale: usize,
    #[serde(default)]
    pub axis: usize,
    pub freq: f64,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

impl TrigConfig {
    fn build(&self, key: &str) -> Result<TrigSum> {
        if !self.constant.is_finite() {
            return cfg(&format!("{key}.constant"), "must be finite");
        }
        let mut t = TrigSum::constant(self.constant);
        for (i, term) in self.terms.iter().enumerate() {
            if !(term.freq.is_finite() && term.amp.is_finite() && term.phase.is_finite()) {
                return cfg(&format!("{key}.terms[{i}]"), "frequency, amplitude and phase must be finite");
            }
            let coord = match term.var {
                Variable::Y => Coord::Y { scale: term.scale, axis: term.axis },
                Variable::X => Coord::X(term.axis),
            };
            t = t.with_term(TrigTerm { coord, freq: term.freq, amp: term.amp, phase: term.phase });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// 1-periodic trig sum in the fast variables.
    Periodic {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        terms: Vec<TermConfig>,
    },
    /// Sum of components, component `n` periodic with period `periods[n]`
    /// in the physical fast variable (terms use scale 0).
    QuasiPeriodic { components: Vec<QuasiConfig> },
    /// `center + (outer − center)·min(|y|/radius, 1)`.
    CompactDeformation { center: f64, outer: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiConfig {
    pub periods: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

/// A scale ratio: `"p/q"`, an integer, a decimal, `"sqrt(k)"`, or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioConfig {
    Number(f64),
    Text(String),
}

impl RatioConfig {
    fn build(&self, key: &str) -> Result<Ratio> {
        match self {
            RatioConfig::Number(v) => {
                if v.fract() == 0.0 && v.abs() < 9e15 {
                    Ratio::parse(&format!("{}", *v as i64))
                } else {
                    Ok(Ratio::Float(*v))
                }
            }
            RatioConfig::Text(s) => {
                let t = s.trim();
                if let Some(inner) = t.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
                    let k = Ratio::parse(inner).map_err(|e| Error::Config { key: key.into(), message: e.to_string() })?;
                    return Ok(Ratio::Float(k.value().sqrt()));
                }
                Ratio::parse(t).map_err(|e| Error::Config { key: key.into(), message: e.to_string() })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesConfig {
    /// Row `n` holds `(γⁿ₁, …, γⁿ_d)`; row 0 must be all ones.
    pub gamma: Vec<Vec<RatioConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlsConfig {
    Enumerated {
        samples: Vec<Vec<f64>>,
        #[serde(default)]
        rest: bool,
    },
    UnitDirections {
        count: usize,
        #[serde(default)]
        rest: bool,
    },
    BoxGrid { per_axis: usize, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceConfig {
    #[serde(default = "default_bound")]
    pub bound: u64,
    #[serde(default = "default_res_tol")]
    pub tolerance: f64,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_bound() -> u64 {
    DEFAULT_SEARCH_BOUND
}
fn default_res_tol() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        ResonanceConfig { bound: DEFAULT_SEARCH_BOUND, tolerance: DEFAULT_TOLERANCE, budget: DEFAULT_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Momentum (defaults to 0).
    pub p: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub lambda0: f64,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    /// Cells per torus axis.
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_flux")]
    pub flux: Flux,
    #[serde(default = "default_sweep")]
    pub sweep: Sweep,
    #[serde(default = "yes")]
    pub accelerate: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_lambda_min() -> f64 {
    1e-3
}
fn default_cells() -> usize {
    128
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    1_000_000
}
fn default_flux() -> Flux {
    Flux::Upwind
}
fn default_sweep() -> Sweep {
    Sweep::GaussSeidel
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            p: None,
            lambda0: 1.0,
            lambda_min: default_lambda_min(),
            cells: default_cells(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            flux: Flux::Upwind,
            sweep: Sweep::GaussSeidel,
            accelerate: true,
        }
    }
}

impl CellConfig {
    pub fn scheme(&self) -> SchemeOptions {
        SchemeOptions { flux: self.flux, sweep: self.sweep, accelerate: self.accelerate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    /// Tolerance of the property checks (defaults to twice the scheme error).
    pub property_tol: Option<f64>,
}

impl TableConfig {
    pub fn grid(&self) -> Result<MomentumGrid> {
        MomentumGrid::new(self.lo.clone(), self.hi.clone(), self.counts.clone())
            .map_err(|e| Error::Config { key: "table".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Constant,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageConfig {
    pub lambda: f64,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Start point on the product torus (`N·d` values, default 0).
    pub y0: Option<Vec<f64>>,
    /// Unit directions for the ray-average certificate (compact deformations).
    #[serde(default = "default_rays")]
    pub rays: usize,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Constant
}
fn default_rays() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub radius: f64,
    pub cells: usize,
    pub lambda: f64,
    #[serde(default = "default_shells")]
    pub shells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_shells() -> usize {
    16
}

impl BoxConfig {
    pub fn params(&self) -> BoxParams {
        BoxParams { shells: self.shells, ..BoxParams::new(self.radius, self.cells) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectiveKind {
    Torus,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    Trig {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        terms: Vec<TermConfig>,
    },
    Cone { center: Vec<f64>, slope: f64, #[serde(default)] offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    pub eps: Vec<f64>,
    pub mu: Option<f64>,
    pub horizon: Option<f64>,
    pub u0: Option<InitialConfig>,
    /// Evolution box.
    pub lo: Option<Vec<f64>>,
    pub length: Option<Vec<f64>>,
    #[serde(default = "default_cells_per_eps")]
    pub cells_per_eps: usize,
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    #[serde(default = "default_hom_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_effective")]
    pub effective: EffectiveKind,
}

fn default_cells_per_eps() -> usize {
    crate::homogenizer::CELLS_PER_OSCILLATION
}
fn default_cfl() -> f64 {
    0.8
}
fn default_hom_tol() -> f64 {
    1e-10
}
fn default_effective() -> EffectiveKind {
    EffectiveKind::Torus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also dump grid functions as CSV.
    #[serde(default)]
    pub fields: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), fields: false }
    }
}

/// How the cell problem of a config is posed.
#[derive(Debug, Clone, PartialEq)]
pub enum CellSetting {
    /// Periodic data on the product torus.
    Torus { ham: HamiltonianSpec, scales: ScaleSystem },
    /// Quasi-periodic closed form: lifted to the torus, also solvable on a box.
    Lifted { ham: HamiltonianSpec, scales: ScaleSystem, physical: PhysicalHamiltonian },
    /// Compact deformation: box only.
    Box { physical: PhysicalHamiltonian },
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config { key: "<root>".into(), message: e.to_string() })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config { key: if key.is_empty() || key == "." { "<root>".into() } else { key }, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config { key: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
        Self::from_toml(&text)
    }

    /// Semantic checks; run before any computation.
    pub fn validate(&self) -> Result<()> {
        let d = self.problem.dim;
        if d == 0 || d > crate::hamiltonians::MAX_DIM {
            return cfg("problem.dim", "must be between 1 and 8");
        }
        check_len("problem.x", self.problem.x.as_deref(), d)?;
        check_len("cell.p", self.cell.p.as_deref(), d)?;
        positive("cell.lambda0", self.cell.lambda0)?;
        positive("cell.lambda_min", self.cell.lambda_min)?;
        if self.cell.lambda_min > self.cell.lambda0 {
            return cfg("cell.lambda_min", "must not exceed cell.lambda0");
        }
        positive("cell.tol", self.cell.tol)?;
        if self.cell.cells < 8 {
            return cfg("cell.cells", "need at least 8 cells per axis");
        }
        positive("resonance.tolerance", self.resonance.tolerance)?;
        if let Some(t) = &self.table {
            if t.lo.len() != d || t.hi.len() != d || t.counts.len() != d {
                return cfg("table", format!("lo, hi and counts need {d} entries"));
            }
            t.grid()?;
        }
        if let Some(a) = &self.average {
            positive("average.lambda", a.lambda)?;
            positive("average.horizon", a.horizon)?;
            positive("average.dt", a.dt)?;
        }
        if let Some(b) = &self.box_ {
            positive("box.radius", b.radius)?;
            positive("box.lambda", b.lambda)?;
            positive("box.tol", b.tol)?;
            if b.cells < 2 || b.cells % 2 != 0 {
                return cfg("box.cells", "must be even and at least 2");
            }
        }
        if let Some(h) = &self.homogenize {
            if h.eps.is_empty() {
                return cfg("homogenize.eps", "needs at least one value");
            }
            for (i, e) in h.eps.iter().enumerate() {
                positive(&format!("homogenize.eps[{i}]"), *e)?;
            }
            if h.eps.windows(2).any(|w| w[1] >= w[0]) {
                return cfg("homogenize.eps", "must be strictly decreasing");
            }
            match (h.mu, h.horizon) {
                (Some(mu), None) => positive("homogenize.mu", mu)?,
                (None, Some(t)) => {
                    positive("homogenize.horizon", t)?;
                    if h.u0.is_none() {
                        return cfg("homogenize.u0", "evolution problems need an initial datum");
                    }
                }
                _ => return cfg("homogenize", "set exactly one of mu (stationary) or horizon (evolution)"),
            }
            if h.effective == EffectiveKind::Box && self.box_.is_none() {
                return cfg("homogenize.effective", "box tables need a [box] section");
            }
            if self.table.is_none() {
                return cfg("table", "homogenize needs a [table] momentum grid");
            }
        }
        self.setting()?;
        Ok(())
    }

    pub fn x(&self) -> Vec<f64> {
        self.problem.x.clone().unwrap_or_else(|| vec![0.0; self.problem.dim])
    }

    pub fn p(&self) -> Vec<f64> {
        self.cell.p.clone().unwrap_or_else(|| vec![0.0; self.problem.dim])
    }

    pub fn scales(&self) -> Result<ScaleSystem> {
        let d = self.problem.dim;
        match &self.problem.scales {
            None => Ok(ScaleSystem::single(d)),
            Some(s) => {
                let mut rows = Vec::new();
                for (n, row) in s.gamma.iter().enumerate() {
                    let mut r = Vec::new();
                    for (i, g) in row.iter().enumerate() {
                        r.push(g.build(&format!("problem.scales.gamma[{n}][{i}]"))?);
                    }
                    rows.push(r);
                }
                ScaleSystem::new(d, rows).map_err(|e| Error::Config { key: "problem.scales.gamma".into(), message: e.to_string() })
            }
        }
    }

    fn potential(&self) -> Result<PotentialSpec> {
        let key = "problem.potential";
        Ok(match &self.problem.potential {
            PotentialConfig::Periodic { constant, terms } => {
                PotentialSpec::Periodic(TrigConfig { constant: *constant, terms: terms.clone() }.build(key)?)
            }
            PotentialConfig::QuasiPeriodic { components } => {
                let mut out = Vec::new();
                for (n, c) in components.iter().enumerate() {
                    let k = format!("{key}.components[{n}]");
                    if c.periods.len() != self.problem.dim || c.periods.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                        return cfg(&format!("{k}.periods"), "need one positive period per axis");
                    }
                    let field = TrigConfig { constant: c.constant, terms: c.terms.clone() }.build(&k)?;
                    out.push(QuasiComponent { periods: c.periods.clone(), field });
                }
                PotentialSpec::QuasiPeriodic(out)
            }
            PotentialConfig::CompactDeformation { center, outer, radius } => {
                positive(&format!("{key}.radius"), *radius)?;
                PotentialSpec::CompactDeformation { center: *center, outer: *outer, radius: *radius }
            }
        })
    }

    /// The Hamiltonian as written, with one scale per configured row.
    fn raw_hamiltonian(&self, num_scales: usize) -> Result<HamiltonianSpec> {
        let pr = &self.problem;
        let d = pr.dim;
        let a = pr.coefficient.clone().unwrap_or(TrigConfig { constant: 1.0, terms: vec![] }).build("problem.coefficient")?;
        let v = self.potential()?;
        let wrap = |e: Error| match e {
            Error::Config { .. } => e,
            other => Error::Config { key: "problem".into(), message: other.to_string() },
        };
        let family = match pr.hamiltonian {
            HamiltonianKind::Eikonal => Some(Family::Eikonal),
            HamiltonianKind::Quadratic => Some(Family::Quadratic),
            HamiltonianKind::Plain => match pr.exponent {
                Some(m @ (1 | 2)) => Some(Family::Plain(m)),
                _ => return cfg("problem.exponent", "plain Hamiltonians need exponent 1 or 2"),
            },
            HamiltonianKind::Control => None,
        };
        if let Some(f) = family {
            if pr.controls.is_some() || pr.kinetic.is_some() {
                return cfg("problem.controls", "controls and kinetic apply to control-form Hamiltonians only");
            }
            return ClosedFormSpec::new(d, num_scales, f, a, v).map(HamiltonianSpec::Closed).map_err(wrap);
        }
        let controls = match &pr.controls {
            None => return cfg("problem.controls", "control-form Hamiltonians need a control set"),
            Some(ControlsConfig::Enumerated { samples, rest }) => {
                let s = ControlSet::enumerated(samples.clone()).map_err(|e| Error::Config { key: "problem.controls".into(), message: e.to_string() })?;
                if *rest {
                    s.with_rest()
                } else {
                    s
                }
            }
            Some(ControlsConfig::UnitDirections { count, rest }) => {
                let s = ControlSet::unit_directions(d, *count).map_err(|e| Error::Config { key: "problem.controls".into(), message: e.to_string() })?;
                if *rest {
                    s.with_rest()
                } else {
                    s
                }
            }
            Some(ControlsConfig::BoxGrid { per_axis, radius }) => {
                ControlSet::box_grid(d, *per_axis, *radius).map_err(|e| Error::Config { key: "problem.controls".into(), message: e.to_string() })?
            }
        };
        let mut cost = vec![CostTerm::Potential(v)];
        if let Some(k) = &pr.kinetic {
            cost.push(CostTerm::Kinetic(k.build("problem.kinetic")?));
        }
        let spec = ControlHamiltonianSpec { dim: d, num_scales, drift: vec![DriftTerm::Scaled(a)], cost, controls };
        spec.validate().map_err(wrap)?;
        Ok(HamiltonianSpec::Control(spec))
    }

    /// Classifies the problem by its potential.
    pub fn setting(&self) -> Result<CellSetting> {
        let scales = self.scales()?;
        match &self.problem.potential {
            PotentialConfig::Periodic { .. } => Ok(CellSetting::Torus { ham: self.raw_hamiltonian(scales.n)?, scales }),
            PotentialConfig::QuasiPeriodic { .. } | PotentialConfig::CompactDeformation { .. } => {
                if self.problem.scales.is_some() {
                    return cfg("problem.scales", "non-periodic potentials carry their own scales; remove this section");
                }
                let physical = match self.raw_hamiltonian(1)? {
                    HamiltonianSpec::Closed(c) => PhysicalHamiltonian::Closed(c),
                    HamiltonianSpec::Control(c) => PhysicalHamiltonian::Control(c),
                };
                match (&self.problem.potential, &physical) {
                    (PotentialConfig::QuasiPeriodic { .. }, PhysicalHamiltonian::Closed(c)) => {
                        let (l, s) = lift_closed_form(c).map_err(|e| Error::Config { key: "problem.potential".into(), message: e.to_string() })?;
                        Ok(CellSetting::Lifted { ham: HamiltonianSpec::Closed(l), scales: s, physical })
                    }
                    (PotentialConfig::QuasiPeriodic { .. }, _) => {
                        cfg("problem.hamiltonian", "quasi-periodic potentials are supported with closed-form Hamiltonians")
                    }
                    _ => Ok(CellSetting::Box { physical }),
                }
            }
        }
    }

    pub fn torus(&self, factors: usize) -> Result<TorusGrid> {
        TorusGrid::uniform(factors, self.problem.dim, self.cell.cells).map_err(|e| Error::Config { key: "cell.cells".into(), message: e.to_string() })
    }

    pub fn initial_datum(&self) -> Result<Option<InitialDatum>> {
        let Some(h) = &self.homogenize else { return Ok(None) };
        Ok(match &h.u0 {
            None => None,
            Some(InitialConfig::Trig { constant, terms }) => {
                if terms.iter().any(|t| t.var != Variable::X) {
                    return cfg("homogenize.u0.terms", "initial data depend on x only (set var = \"x\")");
                }
                Some(InitialDatum::Trig(TrigConfig { constant: *constant, terms: terms.clone() }.build("homogenize.u0")?))
            }
            Some(InitialConfig::Cone { center, slope, offset }) => {
                check_len("homogenize.u0.center", Some(center), self.problem.dim)?;
                Some(InitialDatum::Cone { center: center.clone(), slope: *slope, offset: *offset })
            }
        })
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        cfg(key, format!("must be positive and finite, got {v}"))
    }
}

fn check_len(key: &str, v: Option<&[f64]>, d: usize) -> Result<()> {
    match v {
        Some(v) if v.len() != d => cfg(key, format!("needs {d} entries, got {}", v.len())),
        Some(v) if v.iter().any(|x| !x.is_finite()) => cfg(key, "entries must be finite"),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EIKONAL: &str = r#"
[problem]
dim = 1
hamiltonian = "eikonal"
[problem.potential]
kind = "periodic"
constant = 2.0
terms = [{ freq = 1.0, amp = 1.0 }]
"#;

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_toml(EIKONAL).unwrap();
        assert_eq!(c.seed, DEFAULT_SEED);
        assert!(matches!(c.setting().unwrap(), CellSetting::Torus { .. }));
    }

    #[test]
    fn unknown_key_is_rejected_with_its_path() {
        let text = format!("{EIKONAL}\n[cell]\nlambda_mni = 0.1\n");
        match RunConfig::from_toml(&text) {
            Err(Error::Config { key, message }) => {
                assert!(key.contains("cell"), "{key}");
                assert!(message.contains("lambda_mni"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonpositive_lambda_points_at_the_key() {
        let text = format!("{EIKONAL}\n[cell]\nlambda_min = 0.0\n");
        match RunConfig::from_toml(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "cell.lambda_min"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_type_errors_carry_the_path() {
        let text = EIKONAL.replace("amp = 1.0", "amp = \"big\"");
        match RunConfig::from_toml(&text) {
            Err(Error::Config { key, .. }) => assert!(key.starts_with("problem.potential"), "{key}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ratios_accept_fractions_roots_and_numbers() {
        let text = EIKONAL.replace("[problem.potential]", "[problem.scales]\ngamma = [[1], [\"sqrt(2)\"]]\n[problem.potential]");
        let c = RunConfig::from_toml(&text).unwrap();
        let s = c.scales().unwrap();
        assert!((s.gamma_f64(1, 0) - 2f64.sqrt()).abs() < 1e-15);
        let text = EIKONAL.replace("[problem.potential]", "[problem.scales]\ngamma = [[\"1\"], [\"1/2\"]]\n[problem.potential]");
        assert!(RunConfig::from_toml(&text).unwrap().scales().unwrap().gamma[1][0].is_exact());
    }

    #[test]
    fn compact_deformation_is_a_box_problem() {
        let text = r#"
[problem]
dim = 1
hamiltonian = "plain"
exponent = 1
[problem.potential]
kind = "compact-deformation"
center = 0.0
outer = 1.0
radius = 1.0
"#;
        assert!(matches!(RunConfig::from_toml(text).unwrap().setting().unwrap(), CellSetting::Box { .. }));
    }
}
