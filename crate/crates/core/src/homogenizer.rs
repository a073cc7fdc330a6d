//! Oscillatory problems `μu + H(x, x/ε¹, …, x/εᴺ, Du) = 0` on `(0,1)^d` with
//! zero Dirichlet data and `u_t + H(x, x/ε, Du) = 0` on a periodic box, their
//! effective counterparts driven by an [`EffectiveTable`], and ε-convergence
//! studies comparing the two.

use crate::cell::{closed_gradient_radius, solve_cell_unbounded, BoxParams, CellProblem, PhysicalHamiltonian, TorusGrid};
use crate::effective::{build_table, EffectiveTable, MomentumGrid};
use crate::error::{invalid, Error, Result};
use crate::field::{Coord, PotentialSpec, TrigSum};
use crate::hamiltonians::{CostTerm, DriftTerm, HamiltonianSpec, MAX_DIM};
use crate::scales::{realize_epsilon, ScaleSystem};
use crate::scheme::{solve, Flux, Grid, Local, Operator, SchemeOptions, Source, Sweep};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Cells per finest oscillation required of an oscillatory grid.
pub const CELLS_PER_OSCILLATION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// `[0,1]^d` with boundary nodes pinned to zero.
    UnitDirichlet,
    /// `Π [lo_k, lo_k + L_k)` with periodic wrap.
    PeriodicBox,
}

/// Spatial grid of a physical-space solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub domain: Domain,
    /// Cells per axis (`cells + 1` nodes for the Dirichlet box).
    pub cells: Vec<usize>,
    pub lo: Vec<f64>,
    pub length: Vec<f64>,
}

impl SpatialGrid {
    pub fn unit(d: usize, cells: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM || cells < 2 {
            return invalid("unit grid needs 1 ≤ d ≤ 8 and at least two cells");
        }
        Ok(SpatialGrid { domain: Domain::UnitDirichlet, cells: vec![cells; d], lo: vec![0.0; d], length: vec![1.0; d] })
    }

    pub fn periodic(cells: Vec<usize>, lo: Vec<f64>, length: Vec<f64>) -> Result<Self> {
        let d = cells.len();
        if d == 0 || d > MAX_DIM || lo.len() != d || length.len() != d {
            return invalid("periodic grid axes do not match");
        }
        if cells.iter().any(|&c| c < 2) || length.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return invalid("periodic grid needs ≥ 2 cells and positive lengths per axis");
        }
        Ok(SpatialGrid { domain: Domain::PeriodicBox, cells, lo, length })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn h(&self) -> Vec<f64> {
        self.cells.iter().zip(&self.length).map(|(&c, l)| l / c as f64).collect()
    }

    pub fn h_max(&self) -> f64 {
        self.h().into_iter().fold(0.0, f64::max)
    }

    /// Same domain with `factor` times fewer cells, if that divides evenly.
    pub fn coarsened(&self, factor: usize) -> Option<Self> {
        if factor == 0 || self.cells.iter().any(|&c| c % factor != 0 || c / factor < 2) {
            return None;
        }
        Some(SpatialGrid { cells: self.cells.iter().map(|c| c / factor).collect(), ..self.clone() })
    }

    pub fn grid(&self) -> Result<Grid> {
        match self.domain {
            Domain::UnitDirichlet => {
                if self.cells.iter().any(|&c| c != self.cells[0]) {
                    return invalid("unit grid must have equal cells on every axis");
                }
                Grid::unit_dirichlet(self.dim(), self.cells[0])
            }
            Domain::PeriodicBox => Grid::periodic_box(&self.cells, &self.lo, &self.length),
        }
    }

    /// Coordinates of every node, in grid order.
    pub fn nodes(&self) -> Result<Vec<Vec<f64>>> {
        let g = self.grid()?;
        let mut c = vec![0.0; self.dim()];
        Ok((0..g.len)
            .map(|j| {
                g.coords(j, &mut c);
                c.clone()
            })
            .collect())
    }

    /// Multilinear interpolation of a nodal field at `x` (periodic wrap on
    /// a periodic box, clamped on the unit box). Exact at nodes.
    pub fn sample(&self, u: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let nodes: Vec<usize> = match self.domain {
            Domain::UnitDirichlet => self.cells.iter().map(|c| c + 1).collect(),
            Domain::PeriodicBox => self.cells.clone(),
        };
        let h = self.h();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for k in 0..d {
            let mut t = (x[k] - self.lo[k]) / h[k];
            let r = t.round();
            if (t - r).abs() < 1e-9 {
                t = r;
            }
            match self.domain {
                Domain::UnitDirichlet => {
                    let t = t.clamp(0.0, self.cells[k] as f64);
                    let i = (t.floor() as usize).min(self.cells[k] - 1);
                    base[k] = i;
                    frac[k] = t - i as f64;
                }
                Domain::PeriodicBox => {
                    let n = self.cells[k] as f64;
                    let t = t.rem_euclid(n);
                    let i = (t.floor() as usize).min(self.cells[k] - 1);
                    base[k] = i;
                    frac[k] = t - i as f64;
                }
            }
        }
        let mut s = 0.0;
        for corner in 0..(1usize << d) {
            let mut wgt = 1.0;
            let mut lin = 0usize;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                let f = if up { frac[k] } else { 1.0 - frac[k] };
                if f == 0.0 {
                    wgt = 0.0;
                    break;
                }
                wgt *= f;
                let i = if up { (base[k] + 1) % nodes[k] } else { base[k] };
                lin = lin * nodes[k] + i;
            }
            if wgt != 0.0 {
                s += wgt * u[lin];
            }
        }
        s
    }
}

/// Initial datum of an evolution problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDatum {
    /// Trigonometric sum in `x` (terms must use `Coord::X`).
    Trig(TrigSum),
    /// `offset − slope·|x − center|`.
    Cone { center: Vec<f64>, slope: f64, offset: f64 },
}

impl InitialDatum {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InitialDatum::Trig(t) => t.eval(x, &[], x.len()),
            InitialDatum::Cone { center, slope, offset } => {
                let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                offset - slope * r
            }
        }
    }

    /// Lipschitz constant (Euclidean norm).
    pub fn lipschitz(&self) -> f64 {
        match self {
            InitialDatum::Trig(t) => t.terms.iter().map(|t| TAU * (t.freq * t.amp).abs()).sum(),
            InitialDatum::Cone { slope, .. } => slope.abs(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            InitialDatum::Trig(t) => {
                if t.terms.iter().any(|t| !matches!(t.coord, Coord::X(i) if i < d)) {
                    return invalid("initial datum terms must depend on x components only");
                }
            }
            InitialDatum::Cone { center, slope, offset } => {
                if center.len() != d || !slope.is_finite() || !offset.is_finite() {
                    return invalid("cone initial datum does not match the dimension");
                }
            }
        }
        Ok(())
    }
}

/// Stationary (`μ > 0`) or evolution (`T > 0`, `u₀`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProblemKind {
    Stationary { mu: f64 },
    Evolution { horizon: f64, u0: InitialDatum },
}

impl ProblemKind {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            ProblemKind::Stationary { mu } => {
                if !(*mu > 0.0 && mu.is_finite()) {
                    return invalid(format!("mu must be positive, got {mu}"));
                }
            }
            ProblemKind::Evolution { horizon, u0 } => {
                if !(*horizon > 0.0 && horizon.is_finite()) {
                    return invalid(format!("horizon must be positive, got {horizon}"));
                }
                u0.validate(d)?;
            }
        }
        Ok(())
    }
}

/// `H(x, x/ε¹, …, x/εᴺ, Du)` with `εⁿᵢ = ε/γⁿᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryProblem {
    pub ham: HamiltonianSpec,
    pub scales: ScaleSystem,
    pub eps: f64,
    pub kind: ProblemKind,
    pub scheme: SchemeOptions,
}

impl OscillatoryProblem {
    pub fn new(ham: HamiltonianSpec, scales: ScaleSystem, eps: f64, kind: ProblemKind) -> Result<Self> {
        let p = OscillatoryProblem { ham, scales, eps, kind, scheme: SchemeOptions::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_scheme(mut self, scheme: SchemeOptions) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ham.validate()?;
        let d = self.ham.dim();
        if self.scales.d != d || self.scales.n != self.ham.num_scales() {
            return invalid("scale system does not match the Hamiltonian");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return invalid(format!("eps must be positive, got {}", self.eps));
        }
        self.kind.validate(d)
    }

    /// Smallest realized `εⁿᵢ`.
    pub fn eps_min(&self) -> Result<f64> {
        Ok(realize_epsilon(&self.scales, self.eps)?.into_iter().flatten().fold(f64::INFINITY, f64::min))
    }

    fn check_resolution(&self, grid: &SpatialGrid) -> Result<()> {
        let limit = self.eps_min()? / CELLS_PER_OSCILLATION as f64;
        let h = grid.h_max();
        if h > limit * (1.0 + 1e-12) {
            return Err(Error::Resolution { h, limit });
        }
        Ok(())
    }

    /// Momentum radius bounding `|Du|` for the exact solution, padded.
    fn gradient_radius(&self) -> f64 {
        match (&self.ham, &self.kind) {
            (HamiltonianSpec::Closed(c), ProblemKind::Stationary { .. }) => {
                // a₀|Du|^θ ≤ V − μu ≤ sup V + sup|V|.
                let top = (c.v.upper_bound() + c.v.sup_abs()).max(0.0);
                1.25 * (top / c.a0()).powf(1.0 / c.theta() as f64) + 0.25
            }
            (HamiltonianSpec::Closed(c), ProblemKind::Evolution { u0, .. }) => {
                let mut p = vec![0.0; c.dim];
                p[0] = u0.lipschitz();
                closed_gradient_radius(c, &p)
            }
            (HamiltonianSpec::Control(_), ProblemKind::Stationary { .. }) => 1e3,
            (HamiltonianSpec::Control(_), ProblemKind::Evolution { u0, .. }) => 1e3 * (1.0 + u0.lipschitz()),
        }
    }

    fn operator(&self, grid: &SpatialGrid, lambda: f64) -> Result<Operator> {
        let d = self.ham.dim();
        if grid.dim() != d {
            return invalid("grid dimension does not match the Hamiltonian");
        }
        let g = grid.grid()?;
        let nd = self.scales.n * d;
        let inv: Vec<f64> = self.scales.gamma_flat().iter().map(|gm| gm / self.eps).collect();
        let gref = &g;
        let point = |j: usize, x: &mut [f64], ys: &mut [f64]| {
            gref.coords(j, x);
            for k in 0..nd {
                ys[k] = x[k % d] * inv[k];
            }
        };
        let local = match &self.ham {
            HamiltonianSpec::Closed(c) => Local::build(Source::Closed(c), g.len, d, nd, point),
            HamiltonianSpec::Control(c) => Local::build(Source::Control(c), g.len, d, nd, point),
        };
        let r = self.gradient_radius();
        Operator::new(g, d, (0..d).collect(), vec![1.0; d], vec![0.0; d], lambda, local, self.scheme.flux, Some(vec![(-r, r); d]))
    }

    /// `sup_{x,y} |H(x, y, 0)|`.
    pub fn sup_h0(&self) -> f64 {
        self.ham.lambda_w_bound(&vec![0.0; self.ham.dim()])
    }
}

/// A grid function with its solve statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSolution {
    pub grid: SpatialGrid,
    pub u: Vec<f64>,
    /// Sweeps (stationary) or time steps (evolution).
    pub iterations: usize,
    /// Final residual (stationary) or 0 (evolution).
    pub residual: f64,
    /// Time step (evolution) or 0.
    pub dt: f64,
    /// Evolution on a periodic box: `T < min L / (2·max speed)`, so the
    /// padding does not reach the centre region.
    pub padding_valid: bool,
}

impl FieldSolution {
    pub fn sample(&self, x: &[f64]) -> f64 {
        self.grid.sample(&self.u, x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Monotone fixed-point iteration of `μu + H_num(x, x/ε, Du) = 0`, `u = 0`
/// on the boundary.
pub fn solve_oscillatory_stationary(prob: &OscillatoryProblem, grid: &SpatialGrid, tol: f64, max_iter: usize) -> Result<FieldSolution> {
    prob.validate()?;
    let mu = match prob.kind {
        ProblemKind::Stationary { mu } => mu,
        _ => return invalid("stationary solve needs a stationary problem"),
    };
    if grid.domain != Domain::UnitDirichlet {
        return invalid("stationary problems live on the unit Dirichlet box");
    }
    prob.check_resolution(grid)?;
    let op = prob.operator(grid, mu)?;
    stationary(op, grid, &prob.scheme, tol, max_iter)
}

fn stationary(op: Operator, grid: &SpatialGrid, opts: &SchemeOptions, tol: f64, max_iter: usize) -> Result<FieldSolution> {
    let mut u = vec![0.0; op.grid.len];
    let st = solve(&op, &mut u, opts, tol, max_iter).map_err(|e| name_worst_node(e, &op, grid, &u))?;
    Ok(FieldSolution {
        grid: grid.clone(),
        u,
        iterations: st.iterations,
        residual: st.residual.max_abs,
        dt: 0.0,
        padding_valid: true,
    })
}

/// Explicit monotone time stepping of `u_t + H_num(x, x/ε, Du) = 0` to the
/// horizon on a periodic box.
pub fn solve_oscillatory_evolution(prob: &OscillatoryProblem, grid: &SpatialGrid, dt: f64) -> Result<FieldSolution> {
    prob.validate()?;
    let (horizon, u0) = match &prob.kind {
        ProblemKind::Evolution { horizon, u0 } => (*horizon, u0),
        _ => return invalid("evolution solve needs an evolution problem"),
    };
    if grid.domain != Domain::PeriodicBox {
        return invalid("evolution problems live on a periodic box");
    }
    prob.check_resolution(grid)?;
    let op = prob.operator(grid, 0.0)?;
    evolve(&op, grid, u0, horizon, dt)
}

/// Largest stable time step `0.9 / Σ σ_k/h_k` of an operator.
pub fn cfl_limit(op: &Operator) -> f64 {
    op.tau()
}

fn evolve(op: &Operator, grid: &SpatialGrid, u0: &InitialDatum, horizon: f64, dt: f64) -> Result<FieldSolution> {
    let limit = cfl_limit(op);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let nodes = grid.nodes()?;
    let mut u: Vec<f64> = nodes.iter().map(|x| u0.eval(x)).collect();
    let mut r = vec![0.0; u.len()];
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut t = 0.0;
    for s in 0..steps {
        let step = if s + 1 == steps { horizon - t } else { dt };
        op.residual(&u, &mut r).map_err(|e| name_worst_node(e, op, grid, &u))?;
        for (v, rv) in u.iter_mut().zip(&r) {
            *v -= step * rv;
        }
        t += step;
    }
    let speed = op.sigma.iter().fold(0.0f64, |m, s| m.max(*s));
    let lmin = grid.length.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FieldSolution {
        grid: grid.clone(),
        u,
        iterations: steps,
        residual: 0.0,
        dt,
        padding_valid: horizon * 2.0 * speed < lmin,
    })
}

/// Rewrites a validity error to name the node whose central gradient
/// leaves the momentum box by the most.
fn name_worst_node(e: Error, op: &Operator, grid: &SpatialGrid, u: &[f64]) -> Error {
    let (Error::OutOfValidity(_), Some(qb)) = (&e, &op.q_box) else {
        return e;
    };
    let d = op.d;
    let g = &op.grid;
    let mut worst: Option<(f64, usize, usize, f64)> = None;
    for j in 0..g.len {
        for k in 0..d {
            let (wp, wm) = (g.plus(k, j).map(|i| u[i]), g.minus(k, j).map(|i| u[i]));
            let q = match (wp, wm) {
                (Some(a), Some(b)) => (a - b) / (2.0 * g.h[k]),
                (Some(a), None) => (a - u[j]) / g.h[k],
                (None, Some(b)) => (u[j] - b) / g.h[k],
                (None, None) => 0.0,
            };
            let (lo, hi) = qb[k];
            let excess = (lo - q).max(q - hi);
            if excess > 0.0 && worst.is_none_or(|w| excess > w.0) {
                worst = Some((excess, j, k, q));
            }
        }
    }
    match worst {
        Some((_, j, k, q)) => {
            let mut x = vec![0.0; d];
            g.coords(j, &mut x);
            let (lo, hi) = qb[k];
            Error::OutOfValidity(format!(
                "gradient component {k} = {q:.6} leaves [{lo:.4}, {hi:.4}] at node {j} (x = {x:?}); worst over the grid, h = {:.3e}",
                grid.h_max()
            ))
        }
        None => e,
    }
}

fn effective_operator(table: &EffectiveTable, grid: &SpatialGrid, lambda: f64) -> Result<Operator> {
    if !table.is_complete() {
        return invalid("effective table has failed entries");
    }
    let d = table.dim();
    if grid.dim() != d {
        return invalid("grid dimension does not match the table");
    }
    let g = grid.grid()?;
    Operator::new(g, d, (0..d).collect(), vec![1.0; d], vec![0.0; d], lambda, Local::Table(table.clone()), Flux::LaxFriedrichs, Some(table.grid.as_box()))
}

/// Effective scheme options: Lax–Friedrichs on the interpolated table.
pub fn effective_scheme() -> SchemeOptions {
    SchemeOptions { flux: Flux::LaxFriedrichs, sweep: Sweep::GaussSeidel, accelerate: false }
}

/// `μū + H̄(Dū) = 0` on the unit box with `ū = 0` on the boundary.
pub fn solve_effective_stationary(table: &EffectiveTable, mu: f64, grid: &SpatialGrid, tol: f64, max_iter: usize) -> Result<FieldSolution> {
    if !(mu > 0.0 && mu.is_finite()) {
        return invalid(format!("mu must be positive, got {mu}"));
    }
    if grid.domain != Domain::UnitDirichlet {
        return invalid("stationary problems live on the unit Dirichlet box");
    }
    let op = effective_operator(table, grid, mu)?;
    stationary(op, grid, &effective_scheme(), tol, max_iter)
}

/// `ū_t + H̄(Dū) = 0` on a periodic box up to `horizon`.
pub fn solve_effective_evolution(table: &EffectiveTable, u0: &InitialDatum, horizon: f64, grid: &SpatialGrid, dt: f64) -> Result<FieldSolution> {
    ProblemKind::Evolution { horizon, u0: u0.clone() }.validate(table.dim())?;
    if grid.domain != Domain::PeriodicBox {
        return invalid("evolution problems live on a periodic box");
    }
    let op = effective_operator(table, grid, 0.0)?;
    evolve(&op, grid, u0, horizon, dt)
}

/// CFL limit of the effective scheme on `grid`.
pub fn effective_cfl_limit(table: &EffectiveTable, grid: &SpatialGrid) -> Result<f64> {
    Ok(cfl_limit(&effective_operator(table, grid, 0.0)?))
}

/// CFL limit of the oscillatory scheme on `grid`.
pub fn oscillatory_cfl_limit(prob: &OscillatoryProblem, grid: &SpatialGrid) -> Result<f64> {
    Ok(cfl_limit(&prob.operator(grid, 0.0)?))
}

/// How the effective table of a study is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EffectiveSource {
    Given(EffectiveTable),
    /// Discounted cell problems on the product torus.
    Torus { p_grid: MomentumGrid, torus: TorusGrid, schedule: Vec<f64>, tol: f64, max_iter: usize },
    /// Truncated-box cell problems (single scale, non-periodic potentials).
    Box { p_grid: MomentumGrid, params: BoxParams, lambda: f64, tol: f64, max_iter: usize },
}

/// Everything a convergence study needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSetup {
    pub ham: HamiltonianSpec,
    pub scales: ScaleSystem,
    /// Strictly decreasing `ε¹` values.
    pub eps: Vec<f64>,
    pub kind: ProblemKind,
    /// Evolution box `[lo, lo + L)`; ignored for stationary problems.
    pub lo: Vec<f64>,
    pub length: Vec<f64>,
    /// Cells per smallest oscillation (`h = ε_min / cells_per_eps`), ≥ 8.
    pub cells_per_eps: usize,
    /// Evolution time step as a fraction of the smaller CFL limit.
    pub cfl_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub effective: EffectiveSource,
    pub scheme: SchemeOptions,
}

impl ConvergenceSetup {
    pub fn stationary(ham: HamiltonianSpec, scales: ScaleSystem, eps: Vec<f64>, mu: f64, effective: EffectiveSource) -> Self {
        let d = ham.dim();
        ConvergenceSetup {
            ham,
            scales,
            eps,
            kind: ProblemKind::Stationary { mu },
            lo: vec![0.0; d],
            length: vec![1.0; d],
            cells_per_eps: CELLS_PER_OSCILLATION,
            cfl_fraction: 0.8,
            tol: 1e-10,
            max_iter: 100_000,
            effective,
            scheme: SchemeOptions::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn evolution(
        ham: HamiltonianSpec,
        scales: ScaleSystem,
        eps: Vec<f64>,
        horizon: f64,
        u0: InitialDatum,
        lo: Vec<f64>,
        length: Vec<f64>,
        effective: EffectiveSource,
    ) -> Self {
        ConvergenceSetup {
            ham,
            scales,
            eps,
            kind: ProblemKind::Evolution { horizon, u0 },
            lo,
            length,
            cells_per_eps: CELLS_PER_OSCILLATION,
            cfl_fraction: 0.8,
            tol: 1e-10,
            max_iter: 100_000,
            effective,
            scheme: SchemeOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.ham.dim();
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return invalid("eps schedule must be non-empty and positive");
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("eps schedule must be strictly decreasing");
        }
        if self.cells_per_eps < CELLS_PER_OSCILLATION {
            return invalid(format!("cells_per_eps must be at least {CELLS_PER_OSCILLATION}"));
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return invalid("cfl_fraction must lie in (0, 1]");
        }
        if matches!(self.kind, ProblemKind::Evolution { .. }) && (self.lo.len() != d || self.length.len() != d) {
            return invalid("evolution box does not match the dimension");
        }
        if depends_on_x(&self.ham) {
            return invalid("convergence studies use one effective table, so H must not depend on the slow variable x");
        }
        OscillatoryProblem::new(self.ham.clone(), self.scales.clone(), self.eps[0], self.kind.clone())?;
        Ok(())
    }

    /// Spatial grid of the entry `eps` under the resolution rule.
    pub fn grid_for(&self, eps: f64) -> Result<SpatialGrid> {
        let emin = realize_epsilon(&self.scales, eps)?.into_iter().flatten().fold(f64::INFINITY, f64::min);
        let h = emin / self.cells_per_eps as f64;
        match self.kind {
            ProblemKind::Stationary { .. } => SpatialGrid::unit(self.ham.dim(), (1.0 / h - 1e-9).ceil() as usize),
            ProblemKind::Evolution { .. } => SpatialGrid::periodic(
                self.length.iter().map(|l| (l / h - 1e-9).ceil() as usize).collect(),
                self.lo.clone(),
                self.length.clone(),
            ),
        }
    }

    fn build_effective(&self) -> Result<EffectiveTable> {
        let d = self.ham.dim();
        match &self.effective {
            EffectiveSource::Given(t) => Ok(t.clone()),
            EffectiveSource::Torus { p_grid, torus, schedule, tol, max_iter } => {
                let lam = *schedule.last().ok_or_else(|| Error::InvalidInput("empty discount schedule".into()))?;
                let tpl = CellProblem::new(self.ham.clone(), vec![0.0; d], vec![0.0; d], self.scales.clone(), lam)?;
                build_table(&tpl, p_grid, torus, schedule, *tol, *max_iter)
            }
            EffectiveSource::Box { p_grid, params, lambda, tol, max_iter } => {
                if self.scales.n != 1 {
                    return invalid("box tables take single-scale Hamiltonians");
                }
                let f = match &self.ham {
                    HamiltonianSpec::Closed(c) => PhysicalHamiltonian::Closed(c.clone()),
                    HamiltonianSpec::Control(c) => PhysicalHamiltonian::Control(c.clone()),
                };
                box_table(&f, &vec![0.0; d], p_grid, params, *lambda, *tol, *max_iter)
            }
        }
    }
}

/// Effective table from truncated-box solves; the entry error estimate is
/// `2h + e^{−λR}`: twice the grid spacing plus the influence of the box edge
/// after discounting over the radius at unit speed.
pub fn box_table(
    f: &PhysicalHamiltonian,
    x: &[f64],
    p_grid: &MomentumGrid,
    params: &BoxParams,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EffectiveTable> {
    let values: Result<Vec<f64>> = (0..p_grid.len())
        .into_par_iter()
        .map(|j| solve_cell_unbounded(f, x, &p_grid.point(j), lambda, params, tol, max_iter).map(|s| s.effective_value))
        .collect();
    let mut t = EffectiveTable::from_values(x.to_vec(), p_grid.clone(), values?)?;
    t.scheme_error = 4.0 * params.radius / params.cells as f64 + (-lambda * params.radius).exp();
    Ok(t)
}

fn trig_has_x(t: &TrigSum) -> bool {
    t.terms.iter().any(|t| matches!(t.coord, Coord::X(_)) && t.amp != 0.0)
}

fn potential_has_x(v: &PotentialSpec) -> bool {
    match v {
        PotentialSpec::Periodic(t) => trig_has_x(t),
        PotentialSpec::QuasiPeriodic(c) => c.iter().any(|c| trig_has_x(&c.field)),
        PotentialSpec::CompactDeformation { .. } => false,
    }
}

fn depends_on_x(ham: &HamiltonianSpec) -> bool {
    match ham {
        HamiltonianSpec::Closed(c) => trig_has_x(&c.a) || potential_has_x(&c.v),
        HamiltonianSpec::Control(c) => {
            c.drift.iter().any(|t| match t {
                DriftTerm::Scaled(s) => trig_has_x(s),
                DriftTerm::Field(f) => f.iter().any(trig_has_x),
            }) || c.cost.iter().any(|t| match t {
                CostTerm::Potential(v) => potential_has_x(v),
                CostTerm::Kinetic(s) => trig_has_x(s),
            })
        }
    }
}

/// Per-ε errors of an ε-convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    pub cells: Vec<usize>,
    pub h: Vec<f64>,
    /// `‖u_ε − ū‖∞` on the node set of the coarsest grid; `None` on failure.
    pub errors: Vec<Option<f64>>,
    /// Error at nodes farther than `2ε` from the boundary (stationary).
    pub interior_errors: Vec<Option<f64>>,
    /// Error at nodes within `2ε` of the boundary (stationary; 0 otherwise).
    pub boundary_errors: Vec<Option<f64>>,
    /// `‖ū_h − ū_{2h}‖∞` plus the propagated table error.
    pub scheme_errors: Vec<Option<f64>>,
    /// Error within `3 ×` scheme error: further decrease is not meaningful.
    pub floor_reached: Vec<bool>,
    /// `log(e_{k−1}/e_k) / log(ε_{k−1}/ε_k)`; entry 0 is `None`.
    pub observed_orders: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
    pub table_scheme_error: f64,
    pub table: EffectiveTable,
}

impl ConvergenceReport {
    /// Errors strictly decrease from each entry not yet at the h-floor to
    /// the next; requires at least one successful entry.
    pub fn decreasing_until_floor(&self) -> bool {
        if self.errors.iter().all(Option::is_none) {
            return false;
        }
        for k in 0..self.errors.len().saturating_sub(1) {
            if self.floor_reached[k] {
                break;
            }
            match (self.errors[k], self.errors[k + 1]) {
                (Some(a), Some(b)) if b < a => {}
                _ => return false,
            }
        }
        true
    }
}

struct EntryResult {
    error: f64,
    interior: f64,
    boundary: f64,
    scheme: f64,
}

/// Builds the effective table once, then for every ε solves the oscillatory
/// and effective problems on the grid dictated by the resolution rule and
/// compares them on the coarsest grid's nodes. Per-ε failures are recorded
/// and the remaining entries still reported.
pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceReport> {
    setup.validate()?;
    let table = setup.build_effective()?;
    let grids: Vec<SpatialGrid> = setup.eps.iter().map(|&e| setup.grid_for(e)).collect::<Result<_>>()?;
    let common = grids[0].nodes()?;
    let results: Vec<Result<EntryResult>> = setup
        .eps
        .par_iter()
        .zip(grids.par_iter())
        .map(|(&eps, grid)| study_entry(setup, &table, eps, grid, &common))
        .collect();
    let n = setup.eps.len();
    let mut rep = ConvergenceReport {
        eps: setup.eps.clone(),
        cells: grids.iter().map(|g| g.cells[0]).collect(),
        h: grids.iter().map(SpatialGrid::h_max).collect(),
        errors: vec![None; n],
        interior_errors: vec![None; n],
        boundary_errors: vec![None; n],
        scheme_errors: vec![None; n],
        floor_reached: vec![false; n],
        observed_orders: vec![None; n],
        failures: Vec::new(),
        table_scheme_error: table.scheme_error,
        table,
    };
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => {
                rep.errors[k] = Some(e.error);
                rep.interior_errors[k] = Some(e.interior);
                rep.boundary_errors[k] = Some(e.boundary);
                rep.scheme_errors[k] = Some(e.scheme);
                rep.floor_reached[k] = e.error <= 3.0 * e.scheme;
            }
            Err(err) => rep.failures.push((k, err.to_string())),
        }
    }
    for k in 1..n {
        if let (Some(a), Some(b)) = (rep.errors[k - 1], rep.errors[k]) {
            if a > 0.0 && b > 0.0 {
                rep.observed_orders[k] = Some((a / b).ln() / (setup.eps[k - 1] / setup.eps[k]).ln());
            }
        }
    }
    Ok(rep)
}

fn study_entry(setup: &ConvergenceSetup, table: &EffectiveTable, eps: f64, grid: &SpatialGrid, common: &[Vec<f64>]) -> Result<EntryResult> {
    let prob = OscillatoryProblem::new(setup.ham.clone(), setup.scales.clone(), eps, setup.kind.clone())?.with_scheme(setup.scheme);
    let coarse = grid.coarsened(2);
    let (u, ubar, ubar2, table_err) = match &setup.kind {
        ProblemKind::Stationary { mu } => {
            let u = solve_oscillatory_stationary(&prob, grid, setup.tol, setup.max_iter)?;
            let ub = solve_effective_stationary(table, *mu, grid, setup.tol, setup.max_iter)?;
            let ub2 = match &coarse {
                Some(g) => Some(solve_effective_stationary(table, *mu, g, setup.tol, setup.max_iter)?),
                None => None,
            };
            (u, ub, ub2, table.scheme_error / mu)
        }
        ProblemKind::Evolution { horizon, u0 } => {
            let lim = oscillatory_cfl_limit(&prob, grid)?.min(effective_cfl_limit(table, grid)?);
            let dt = setup.cfl_fraction * lim;
            let u = solve_oscillatory_evolution(&prob, grid, dt)?;
            let ub = solve_effective_evolution(table, u0, *horizon, grid, dt)?;
            let ub2 = match &coarse {
                Some(g) => Some(solve_effective_evolution(table, u0, *horizon, g, setup.cfl_fraction * effective_cfl_limit(table, g)?)?),
                None => None,
            };
            (u, ub, ub2, table.scheme_error * horizon)
        }
    };
    let stationary = matches!(setup.kind, ProblemKind::Stationary { .. });
    let band = 2.0 * eps;
    let (mut err, mut interior, mut boundary) = (0.0f64, 0.0f64, 0.0f64);
    for x in common {
        let e = (u.sample(x) - ubar.sample(x)).abs();
        err = err.max(e);
        let dist = x.iter().map(|v| v.min(1.0 - v)).fold(f64::INFINITY, f64::min);
        if stationary && dist < band {
            boundary = boundary.max(e);
        } else {
            interior = interior.max(e);
        }
    }
    let mut scheme = table_err;
    if let Some(ub2) = &ubar2 {
        let nodes = ub2.grid.nodes()?;
        scheme += nodes.iter().map(|x| (ubar.sample(x) - ub2.sample(x)).abs()).fold(0.0, f64::max);
    }
    Ok(EntryResult { error: err, interior, boundary, scheme })
}

/// Hopf–Lax value `min_{|z−x|≤t} u₀(z)` for `H(p) = |p|` on a sample set.
pub fn hopf_lax_eikonal(u0: &InitialDatum, x: &[f64], t: f64, samples: &[Vec<f64>]) -> f64 {
    samples
        .iter()
        .filter(|z| z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= t + 1e-12)
        .map(|z| u0.eval(z))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigTerm;
    use crate::hamiltonians::{ClosedFormSpec, ControlHamiltonianSpec, ControlSet, Family};
    use proptest::prelude::*;

    fn eikonal(v: PotentialSpec) -> HamiltonianSpec {
        HamiltonianSpec::Closed(ClosedFormSpec::new(1, 1, Family::Eikonal, TrigSum::constant(1.0), v).unwrap())
    }

    fn oscillating(c: f64) -> PotentialSpec {
        PotentialSpec::Periodic(TrigSum::constant(c).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)))
    }

    fn stationary(ham: HamiltonianSpec, eps: f64, mu: f64) -> OscillatoryProblem {
        OscillatoryProblem::new(ham, ScaleSystem::single(1), eps, ProblemKind::Stationary { mu }).unwrap()
    }

    fn evolution(ham: HamiltonianSpec, horizon: f64, u0: InitialDatum) -> OscillatoryProblem {
        OscillatoryProblem::new(ham, ScaleSystem::single(1), 1.0, ProblemKind::Evolution { horizon, u0 }).unwrap()
    }

    fn exact_unit(x: f64) -> f64 {
        1.0 - (-x.min(1.0 - x)).exp()
    }

    fn linear_table(offset: f64, r: f64) -> EffectiveTable {
        EffectiveTable::from_fn(vec![0.0], MomentumGrid::symmetric(1, r, 81).unwrap(), |p| p[0].abs() - offset).unwrap()
    }

    #[test]
    fn stationary_eikonal_matches_closed_form() {
        let prob = stationary(eikonal(PotentialSpec::constant(1.0)), 1.0, 1.0);
        for cells in [32, 64, 128] {
            let g = SpatialGrid::unit(1, cells).unwrap();
            let s = solve_oscillatory_stationary(&prob, &g, 1e-12, 10_000).unwrap();
            let nodes = g.nodes().unwrap();
            let err = nodes.iter().zip(&s.u).map(|(x, u)| (u - exact_unit(x[0])).abs()).fold(0.0, f64::max);
            assert!(err <= 1.0 / cells as f64, "cells {cells}: {err}");
            assert_eq!(s.u[0], 0.0);
            assert_eq!(*s.u.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn eps_independent_problem_does_not_see_eps() {
        let g = SpatialGrid::unit(1, 64).unwrap();
        let a = solve_oscillatory_stationary(&stationary(eikonal(PotentialSpec::constant(1.5)), 0.25, 1.0), &g, 1e-12, 10_000).unwrap();
        let b = solve_oscillatory_stationary(&stationary(eikonal(PotentialSpec::constant(1.5)), 0.125, 1.0), &g, 1e-12, 10_000).unwrap();
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn resolution_rule_is_enforced() {
        let prob = stationary(eikonal(oscillating(2.0)), 0.25, 1.0);
        let coarse = SpatialGrid::unit(1, 16).unwrap();
        assert!(matches!(solve_oscillatory_stationary(&prob, &coarse, 1e-10, 1000), Err(Error::Resolution { .. })));
        assert!(solve_oscillatory_stationary(&prob, &SpatialGrid::unit(1, 32).unwrap(), 1e-10, 10_000).is_ok());
    }

    #[test]
    fn stationary_bound_holds() {
        for mu in [0.5, 1.0, 3.0] {
            let prob = stationary(eikonal(oscillating(2.0)), 1.0 / 8.0, mu);
            let s = solve_oscillatory_stationary(&prob, &SpatialGrid::unit(1, 128).unwrap(), 1e-11, 100_000).unwrap();
            assert!(s.sup_norm() <= prob.sup_h0() / mu + 1e-9);
            assert!(s.u.iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn zero_hamiltonian_keeps_initial_datum() {
        let zero = HamiltonianSpec::Control(ControlHamiltonianSpec {
            dim: 1,
            num_scales: 1,
            drift: vec![],
            cost: vec![],
            controls: ControlSet::enumerated(vec![vec![0.0]]).unwrap(),
        });
        let u0 = InitialDatum::Trig(TrigSum::constant(0.3).with_term(TrigTerm { coord: Coord::X(0), freq: 1.0, amp: 1.0, phase: 0.5 }));
        let g = SpatialGrid::periodic(vec![64], vec![0.0], vec![1.0]).unwrap();
        let s = solve_oscillatory_evolution(&evolution(zero, 0.7, u0.clone()), &g, 0.01).unwrap();
        for (x, u) in g.nodes().unwrap().iter().zip(&s.u) {
            assert_eq!(*u, u0.eval(x));
        }
    }

    #[test]
    fn cone_shrinks_by_hopf_lax() {
        let u0 = InitialDatum::Cone { center: vec![0.5], slope: 1.0, offset: 0.0 };
        let t = 0.25;
        let g = SpatialGrid::periodic(vec![256], vec![-1.5], vec![4.0]).unwrap();
        let prob = evolution(eikonal(PotentialSpec::constant(0.0)), t, u0.clone());
        let dt = 0.5 * oscillatory_cfl_limit(&prob, &g).unwrap();
        let s = solve_oscillatory_evolution(&prob, &g, dt).unwrap();
        assert!(s.padding_valid);
        let nodes = g.nodes().unwrap();
        for (x, u) in nodes.iter().zip(&s.u) {
            if (0.0..=1.0).contains(&x[0]) {
                let oracle = hopf_lax_eikonal(&u0, x, t, &nodes);
                assert!((u - oracle).abs() <= 1e-9, "x = {}: {u} vs {oracle}", x[0]);
                assert!((oracle + (x[0] - 0.5).abs() + t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_datum_is_stationary_when_h0_vanishes() {
        let u0 = InitialDatum::Trig(TrigSum::constant(-0.4));
        let g = SpatialGrid::periodic(vec![64], vec![0.0], vec![1.0]).unwrap();
        let prob = evolution(eikonal(PotentialSpec::constant(0.0)), 1.0, u0);
        let s = solve_oscillatory_evolution(&prob, &g, 0.01).unwrap();
        assert!(s.u.iter().all(|v| *v == -0.4));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let u0 = InitialDatum::Trig(TrigSum::constant(0.0));
        let g = SpatialGrid::periodic(vec![64], vec![0.0], vec![1.0]).unwrap();
        let prob = evolution(eikonal(PotentialSpec::constant(0.0)), 1.0, u0);
        let lim = oscillatory_cfl_limit(&prob, &g).unwrap();
        assert!(matches!(solve_oscillatory_evolution(&prob, &g, 1.5 * lim), Err(Error::Cfl { .. })));
    }

    #[test]
    fn effective_linear_table_matches_closed_form() {
        let t = linear_table(1.0, 3.0);
        for cells in [32, 64, 128] {
            let g = SpatialGrid::unit(1, cells).unwrap();
            let s = solve_effective_stationary(&t, 1.0, &g, 1e-12, 100_000).unwrap();
            let err = g.nodes().unwrap().iter().zip(&s.u).map(|(x, u)| (u - exact_unit(x[0])).abs()).fold(0.0, f64::max);
            assert!(err <= 3.0 / cells as f64, "cells {cells}: {err}");
        }
    }

    #[test]
    fn effective_constant_table_gives_constant_over_mu() {
        // Wide box: the Dirichlet data makes a jump of size c/μ at the boundary.
        let t = EffectiveTable::from_fn(vec![0.0], MomentumGrid::symmetric(1, 50.0, 9).unwrap(), |_| -0.6).unwrap();
        let g = SpatialGrid::unit(1, 64).unwrap();
        let s = solve_effective_stationary(&t, 2.0, &g, 1e-13, 100_000).unwrap();
        for u in &s.u[1..64] {
            assert!((u - 0.3).abs() < 1e-9, "{u}");
        }
        let gp = SpatialGrid::periodic(vec![32], vec![0.0], vec![1.0]).unwrap();
        let u0 = InitialDatum::Trig(TrigSum::constant(0.0));
        let e = solve_effective_evolution(&t, &u0, 1.0, &gp, 0.05).unwrap();
        assert!(e.u.iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn effective_kinked_table_is_symmetric_and_nonnegative() {
        let t = EffectiveTable::from_fn(vec![0.0], MomentumGrid::symmetric(1, 4.0, 33).unwrap(), |p| (p[0].abs() - 2.0).max(-1.0)).unwrap();
        let g = SpatialGrid::unit(1, 128).unwrap();
        let s = solve_effective_stationary(&t, 1.0, &g, 1e-12, 100_000).unwrap();
        let n = s.u.len();
        for j in 0..n {
            assert!(s.u[j] >= -1e-12);
            assert!((s.u[j] - s.u[n - 1 - j]).abs() < 1e-9);
        }
    }

    #[test]
    fn leaving_the_table_box_names_the_worst_node() {
        let t = linear_table(1.0, 0.5);
        let g = SpatialGrid::unit(1, 64).unwrap();
        match solve_effective_stationary(&t, 1.0, &g, 1e-12, 100_000) {
            Err(Error::OutOfValidity(m)) => assert!(m.contains("worst") && m.contains("node"), "{m}"),
            other => panic!("expected out-of-validity, got {other:?}"),
        }
    }

    #[test]
    fn sample_is_exact_at_nodes_and_wraps() {
        let g = SpatialGrid::periodic(vec![8], vec![0.0], vec![1.0]).unwrap();
        let u: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(g.sample(&u, &[0.375]), 3.0);
        assert_eq!(g.sample(&u, &[1.375]), 3.0);
        assert!((g.sample(&u, &[0.9375]) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn schedule_must_decrease() {
        let t = linear_table(1.0, 3.0);
        let setup = ConvergenceSetup::stationary(eikonal(oscillating(2.0)), ScaleSystem::single(1), vec![0.25, 0.25], 1.0, EffectiveSource::Given(t));
        assert!(convergence_study(&setup).is_err());
    }

    #[test]
    fn eps_independent_study_sits_on_the_floor() {
        let t = linear_table(1.0, 3.0);
        let setup = ConvergenceSetup::stationary(
            eikonal(PotentialSpec::constant(1.0)),
            ScaleSystem::single(1),
            vec![0.25, 0.125, 0.0625],
            1.0,
            EffectiveSource::Given(t),
        );
        let rep = convergence_study(&setup).unwrap();
        for (e, s) in rep.errors.iter().zip(&rep.scheme_errors) {
            assert!(e.unwrap() <= 2.0 * s.unwrap(), "{e:?} vs {s:?}");
        }
        assert!(rep.floor_reached.iter().all(|f| *f));
        assert!(rep.failures.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stationary_comparison(c in 1.2f64..3.0, shift in 0.0f64..1.0, mu in 0.5f64..2.0) {
            let g = SpatialGrid::unit(1, 64).unwrap();
            let lo = solve_oscillatory_stationary(&stationary(eikonal(oscillating(c)), 0.125, mu), &g, 1e-12, 100_000).unwrap();
            let hi = solve_oscillatory_stationary(&stationary(eikonal(oscillating(c + shift)), 0.125, mu), &g, 1e-12, 100_000).unwrap();
            prop_assert!(lo.u.iter().zip(&hi.u).all(|(a, b)| a <= &(b + 1e-10)));
        }

        #[test]
        fn evolution_comparison_and_contraction(a in -1.0f64..1.0, b in 0.0f64..1.0, ph in 0.0f64..6.0) {
            let g = SpatialGrid::periodic(vec![64], vec![0.0], vec![1.0]).unwrap();
            let u0 = InitialDatum::Trig(TrigSum::constant(a).with_term(TrigTerm { coord: Coord::X(0), freq: 1.0, amp: 0.5, phase: ph }));
            let v0 = InitialDatum::Trig(TrigSum::constant(a + b).with_term(TrigTerm { coord: Coord::X(0), freq: 2.0, amp: 0.2, phase: 0.0 }).with_term(TrigTerm { coord: Coord::X(0), freq: 1.0, amp: 0.5, phase: ph }));
            let ham = eikonal(oscillating(2.0));
            let mut prev = f64::INFINITY;
            for t in [0.1, 0.2, 0.4] {
                let pu = OscillatoryProblem::new(ham.clone(), ScaleSystem::single(1), 0.125, ProblemKind::Evolution { horizon: t, u0: u0.clone() }).unwrap();
                let pv = OscillatoryProblem::new(ham.clone(), ScaleSystem::single(1), 0.125, ProblemKind::Evolution { horizon: t, u0: v0.clone() }).unwrap();
                let dt = 0.5 * oscillatory_cfl_limit(&pu, &g).unwrap().min(oscillatory_cfl_limit(&pv, &g).unwrap());
                // A common step so the three horizons share one discrete trajectory.
                let dt = 0.1 / (0.1 / dt).ceil();
                let u = solve_oscillatory_evolution(&pu, &g, dt).unwrap();
                let v = solve_oscillatory_evolution(&pv, &g, dt).unwrap();
                let gap = u.u.iter().zip(&v.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                if b >= 0.2 {
                    prop_assert!(u.u.iter().zip(&v.u).all(|(x, y)| x <= &(y + 1e-12)));
                }
                prop_assert!(gap <= prev + 1e-12);
                prev = gap;
            }
        }
    }
}
