//! Discounted cell problems on the product torus and on truncated boxes,
//! λ-continuation for the effective value, and diagonal restriction of
//! torus correctors.

use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{box_radius, ClosedFormSpec, ControlHamiltonianSpec, HamiltonianSpec, PBox, QuasiPeriodicSpec, MAX_DIM};
use crate::scales::{check_condition_a, ResonanceReport, ScaleSystem, DEFAULT_BUDGET, DEFAULT_SEARCH_BOUND, DEFAULT_TOLERANCE};
use crate::scheme::{solve, Flux, Grid, Local, Operator, SchemeOptions, Source, Sweep};
use serde::{Deserialize, Serialize};

/// Cells per axis of each torus factor (`N` rows of `d` counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub factor_dims: Vec<Vec<usize>>,
}

impl TorusGrid {
    pub fn new(factor_dims: Vec<Vec<usize>>) -> Result<Self> {
        if factor_dims.is_empty() || factor_dims[0].is_empty() {
            return invalid("torus grid needs at least one factor and axis");
        }
        let d = factor_dims[0].len();
        if factor_dims.iter().any(|r| r.len() != d) {
            return invalid("torus factors must share the dimension d");
        }
        if factor_dims.iter().flatten().any(|&c| c < 8) {
            return invalid("torus grids need at least 8 cells per axis");
        }
        Ok(TorusGrid { factor_dims })
    }

    pub fn uniform(n: usize, d: usize, cells: usize) -> Result<Self> {
        TorusGrid::new(vec![vec![cells; d]; n])
    }

    pub fn flat_dims(&self) -> Vec<usize> {
        self.factor_dims.iter().flatten().copied().collect()
    }

    pub fn total(&self) -> usize {
        self.flat_dims().iter().product()
    }

    pub fn h(&self) -> Vec<f64> {
        self.flat_dims().iter().map(|&c| 1.0 / c as f64).collect()
    }

    pub fn h_max(&self) -> f64 {
        self.h().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProblem {
    pub ham: HamiltonianSpec,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub scales: ScaleSystem,
    pub lambda: f64,
    pub scheme: SchemeOptions,
}

impl CellProblem {
    pub fn new(ham: HamiltonianSpec, x: Vec<f64>, p: Vec<f64>, scales: ScaleSystem, lambda: f64) -> Result<Self> {
        let pr = CellProblem { ham, x, p, scales, lambda, scheme: SchemeOptions::default() };
        pr.validate()?;
        Ok(pr)
    }

    pub fn with_scheme(mut self, scheme: SchemeOptions) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ham.validate()?;
        let d = self.ham.dim();
        if self.x.len() != d || self.p.len() != d || self.scales.d != d || self.scales.n != self.ham.num_scales() {
            return invalid("cell problem dimensions do not match the Hamiltonian");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.p.iter().chain(&self.x).any(|v| !v.is_finite()) {
            return invalid("non-finite momentum or slow variable");
        }
        Ok(())
    }

    /// Momentum box holding `p + Σ Γⁿ∇w` for the exact solution, padded.
    ///
    /// Constants bracket the solution, `min_y H(y,p) ≤ −λw ≤ max_y H(y,p)`,
    /// so `a₀|q|^θ ≤ a_max|p|^θ − inf V + sup V`.
    pub fn q_box(&self) -> PBox {
        let d = self.ham.dim();
        let pmax = self.p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = match &self.ham {
            HamiltonianSpec::Closed(c) => closed_gradient_radius(c, &self.p),
            // Control forms are globally Lipschitz in q; any box works.
            HamiltonianSpec::Control(_) => 1e3 * (1.0 + pmax),
        };
        vec![(-r, r); d]
    }

    /// Discrete operator of this problem on `grid`.
    pub fn operator(&self, grid: &TorusGrid) -> Result<Operator> {
        self.validate()?;
        let d = self.ham.dim();
        if grid.factor_dims.len() != self.scales.n || grid.factor_dims[0].len() != d {
            return invalid("torus grid shape does not match N × d");
        }
        let g = Grid::torus(&grid.flat_dims())?;
        let nd = self.scales.n * d;
        let x = self.x.clone();
        let gref = &g;
        let point = |j: usize, xx: &mut [f64], ys: &mut [f64]| {
            xx.copy_from_slice(&x);
            gref.coords(j, ys);
        };
        let local = match &self.ham {
            HamiltonianSpec::Closed(c) => Local::build(Source::Closed(c), g.len, d, nd, point),
            HamiltonianSpec::Control(c) => Local::build(Source::Control(c), g.len, d, nd, point),
        };
        let axis_q = (0..nd).map(|k| k % d).collect();
        let axis_gamma = self.scales.gamma_flat();
        Operator::new(g, d, axis_q, axis_gamma, self.p.clone(), self.lambda, local, self.scheme.flux, Some(self.q_box()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub dims: Vec<usize>,
    pub w: Vec<f64>,
    pub lambda: f64,
    pub residual: f64,
    pub lam_w_mean: f64,
    pub lam_w_min: f64,
    pub lam_w_max: f64,
    pub lam_w_osc: f64,
    pub iterations: usize,
}

impl CellSolution {
    fn from_w(dims: Vec<usize>, w: Vec<f64>, lambda: f64, residual: f64, iterations: usize) -> Self {
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &w {
            let lv = lambda * v;
            sum += lv;
            lo = lo.min(lv);
            hi = hi.max(lv);
        }
        let mean = sum / w.len() as f64;
        CellSolution { dims, w, lambda, residual, lam_w_mean: mean, lam_w_min: lo, lam_w_max: hi, lam_w_osc: hi - lo, iterations }
    }

    /// Multilinear interpolation of `w` at a torus point (reduced mod 1).
    pub fn interpolate(&self, z: &[f64]) -> f64 {
        let k = self.dims.len();
        let mut base = [0usize; 2 * MAX_DIM];
        let mut frac = [0.0f64; 2 * MAX_DIM];
        for a in 0..k {
            let n = self.dims[a];
            let s = z[a].rem_euclid(1.0) * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut strides = vec![1usize; k];
        for a in (0..k.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << k) {
            let mut wgt = 1.0;
            let mut j = 0;
            for a in 0..k {
                let up = (corner >> a) & 1 == 1;
                let i = if up { (base[a] + 1) % self.dims[a] } else { base[a] };
                wgt *= if up { frac[a] } else { 1.0 - frac[a] };
                j += i * strides[a];
            }
            if wgt != 0.0 {
                acc += wgt * self.w[j];
            }
        }
        acc
    }
}

/// Solves the cell problem from `w ≡ 0`.
pub fn solve_cell(problem: &CellProblem, grid: &TorusGrid, tol: f64, max_iter: usize) -> Result<CellSolution> {
    solve_cell_from(problem, grid, tol, max_iter, None)
}

/// Solves the cell problem from an optional initial guess.
pub fn solve_cell_from(
    problem: &CellProblem,
    grid: &TorusGrid,
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<CellSolution> {
    let op = problem.operator(grid)?;
    solve_with(&op, problem, grid, tol, max_iter, init)
}

fn solve_with(
    op: &Operator,
    problem: &CellProblem,
    grid: &TorusGrid,
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<CellSolution> {
    let mut w = match init {
        Some(v) if v.len() == op.grid.len => v.to_vec(),
        Some(_) => return invalid("initial guess has the wrong length"),
        None => vec![0.0; op.grid.len],
    };
    let st = solve(op, &mut w, &problem.scheme, tol, max_iter)?;
    Ok(CellSolution::from_w(grid.flat_dims(), w, problem.lambda, st.residual.max_abs, st.iterations))
}

/// `λ₀·0.5^k` while above `λ_min`, then `λ_min`.
pub fn geometric_schedule(lambda0: f64, lambda_min: f64) -> Result<Vec<f64>> {
    if !(lambda_min > 0.0 && lambda0 >= lambda_min && lambda0.is_finite()) {
        return invalid("schedule needs 0 < λ_min ≤ λ₀");
    }
    let mut s = Vec::new();
    let mut l = lambda0;
    while l > lambda_min * (1.0 + 1e-12) {
        s.push(l);
        l *= 0.5;
    }
    s.push(lambda_min);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub lambda: f64,
    pub lam_w_mean: f64,
    pub lam_w_osc: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveValue {
    pub hbar: f64,
    pub flatness: f64,
    pub levels: Vec<LevelStat>,
    pub solution: CellSolution,
}

/// Runs the schedule with warm starts; returns `H̄ = −mean(λ_min w)` and the
/// flatness `osc(λ_min w)`.
pub fn effective_value(
    problem: &CellProblem,
    grid: &TorusGrid,
    schedule: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EffectiveValue> {
    effective_value_from(problem, grid, schedule, tol, max_iter, None)
}

/// As [`effective_value`], warm-starting the first level from `init`.
pub fn effective_value_from(
    problem: &CellProblem,
    grid: &TorusGrid,
    schedule: &[f64],
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<EffectiveValue> {
    if schedule.is_empty() || schedule.iter().any(|l| !(*l > 0.0)) || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("schedule must be positive and strictly decreasing");
    }
    let mut prob = problem.clone();
    prob.lambda = schedule[0];
    let mut op = prob.operator(grid)?;
    let mut levels = Vec::with_capacity(schedule.len());
    let mut hist: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut last = None;
    for (k, &lam) in schedule.iter().enumerate() {
        prob.lambda = lam;
        op.lambda = lam;
        let is_last = k + 1 == schedule.len();
        let tol_k = if is_last { tol } else { tol.max(1e-2 * lam) };
        let guess = warm_start(&hist, lam).or_else(|| init.map(|v| v.to_vec()));
        let sol = solve_with(&op, &prob, grid, tol_k, max_iter, guess.as_deref())?;
        levels.push(LevelStat { lambda: lam, lam_w_mean: sol.lam_w_mean, lam_w_osc: sol.lam_w_osc, iterations: sol.iterations });
        hist.push((lam, sol.w.clone()));
        if hist.len() > 2 {
            hist.remove(0);
        }
        last = Some(sol);
    }
    let sol = last.expect("non-empty schedule");
    Ok(EffectiveValue { hbar: -sol.lam_w_mean, flatness: sol.lam_w_osc, levels, solution: sol })
}

/// Extrapolates `w_λ ≈ −H̄/λ + v` from the last two levels (or shifts the
/// mean from the last one).
fn warm_start(hist: &[(f64, Vec<f64>)], lam: f64) -> Option<Vec<f64>> {
    match hist {
        [] => None,
        [(l1, w1)] => {
            let mean = w1.iter().sum::<f64>() / w1.len() as f64;
            Some(w1.iter().map(|v| v + mean * (l1 / lam - 1.0)).collect())
        }
        [.., (l1, w1), (l2, w2)] => {
            let v: Vec<f64> = w1.iter().zip(w2).map(|(a, b)| (l1 * a - l2 * b) / (l1 - l2)).collect();
            let c = w2.iter().zip(&v).map(|(b, vv)| l2 * vv - l2 * b).sum::<f64>() / w2.len() as f64;
            Some(v.iter().map(|vv| -c / lam + vv).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSample {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_p50: f64,
    pub residual_p95: f64,
    pub residual_max: f64,
    /// Achieved δ, taken as the 95th percentile of the residual.
    pub delta: f64,
    pub hbar: f64,
    /// `λ·osc(w)` of the underlying solution.
    pub flatness: f64,
    pub h: f64,
    /// `(p95 − flatness)/h`, clipped at 0.
    pub measured_c: f64,
}

/// Restricts `w` to the diagonal `v(y) = w(Γ¹y, …, Γᴺy)` on `samples`
/// points per axis of `[0, R]^d`, and measures `|H(y, Γy, p + Dv) − H̄|`
/// with one-sided differences of step `h` combined by the upwind rule
/// (Rouy–Tourin for closed forms, drift-upwinding for control forms), the
/// finite-difference reading of the viscosity inequalities at kinks.
pub fn restrict_diagonal(
    sol: &CellSolution,
    problem: &CellProblem,
    grid: &TorusGrid,
    box_r: f64,
    samples: usize,
) -> Result<CorrectorSample> {
    let d = problem.ham.dim();
    let scales = &problem.scales;
    if samples < 2 || !(box_r > 0.0) {
        return invalid("restriction needs ≥ 2 samples and R > 0");
    }
    let h = grid.h_max();
    let total = samples.checked_pow(d as u32).ok_or_else(|| Error::InvalidInput("too many samples".into()))?;
    let hbar = -sol.lam_w_mean;
    let v_at = |y: &[f64]| sol.interpolate(&scales.diagonal_point(y));
    let mut points = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    let mut res = Vec::with_capacity(total);
    let mut y = vec![0.0; d];
    let mut fwd = vec![0.0; d];
    let mut bwd = vec![0.0; d];
    let mut b = vec![0.0; d];
    for mut c in 0..total {
        for i in (0..d).rev() {
            y[i] = box_r * (c % samples) as f64 / (samples - 1) as f64;
            c /= samples;
        }
        let v0 = v_at(&y);
        let mut t = y.clone();
        for i in 0..d {
            t[i] = y[i] + h;
            fwd[i] = problem.p[i] + (v_at(&t) - v0) / h;
            t[i] = y[i] - h;
            bwd[i] = problem.p[i] + (v0 - v_at(&t)) / h;
            t[i] = y[i];
        }
        let ys = scales.diagonal_point(&y);
        let hv = match &problem.ham {
            HamiltonianSpec::Closed(cf) => {
                let q: Vec<f64> = (0..d).map(|i| bwd[i].max(-fwd[i]).max(0.0)).collect();
                cf.eval(&problem.x, &ys, &q)
            }
            HamiltonianSpec::Control(cs) => {
                let mut best = f64::NEG_INFINITY;
                for alpha in &cs.controls.samples {
                    let g = cs.drift_cost(&problem.x, &ys, alpha, &mut b);
                    let s: f64 = (0..d).map(|i| b[i] * if b[i] > 0.0 { fwd[i] } else { bwd[i] }).sum();
                    best = best.max(-s - g);
                }
                best
            }
        };
        points.push(y.clone());
        values.push(v0);
        res.push((hv - hbar).abs());
    }
    let mut sorted = res.clone();
    sorted.sort_by(f64::total_cmp);
    let pct = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let p95 = pct(0.95);
    Ok(CorrectorSample {
        points,
        values,
        residual_p50: pct(0.5),
        residual_p95: p95,
        residual_max: *sorted.last().unwrap(),
        residuals: res,
        delta: p95,
        hbar,
        flatness: sol.lam_w_osc,
        h,
        measured_c: ((p95 - sol.lam_w_osc) / h).max(0.0),
    })
}

/// A Hamiltonian on the physical fast variable, for box problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhysicalHamiltonian {
    Closed(ClosedFormSpec),
    Quasi(QuasiPeriodicSpec),
    Control(ControlHamiltonianSpec),
}

impl PhysicalHamiltonian {
    pub fn dim(&self) -> usize {
        match self {
            PhysicalHamiltonian::Closed(c) => c.dim,
            PhysicalHamiltonian::Quasi(q) => q.dim,
            PhysicalHamiltonian::Control(c) => c.dim,
        }
    }

    fn deformation_radius(&self) -> Option<f64> {
        match self {
            PhysicalHamiltonian::Closed(c) => c.v.deformation_radius(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCellSolution {
    pub radius: f64,
    pub h: f64,
    pub cells: usize,
    pub lambda: f64,
    /// `v = w − w(0)`.
    pub v: Vec<f64>,
    /// `λ·w(0)`; the effective value estimate is its negative.
    pub lam_w_origin: f64,
    pub effective_value: f64,
    pub shell_radii: Vec<f64>,
    pub shell_slopes: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Parameters of the truncated-box solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    pub radius: f64,
    pub cells: usize,
    pub shells: usize,
    pub sweep: Sweep,
    /// Add the resting control to sampled control sets, so that every
    /// boundary node keeps an admissible control.
    pub include_rest: bool,
}

impl BoxParams {
    pub fn new(radius: f64, cells: usize) -> Self {
        BoxParams {
            radius,
            cells,
            shells: 16,
            sweep: Sweep::GaussSeidel,
            include_rest: true,
        }
    }
}

/// Discounted problem `λv + F(x, y, p + ∇v) = 0` on `[−R, R]^d` with the
/// upwind flux and state constraints (no control may leave the box).
pub fn solve_cell_unbounded(
    f: &PhysicalHamiltonian,
    x: &[f64],
    p: &[f64],
    lambda: f64,
    params: &BoxParams,
    tol: f64,
    max_iter: usize,
) -> Result<BoxCellSolution> {
    let d = f.dim();
    if x.len() != d || p.len() != d {
        return invalid("box problem dimensions do not match");
    }
    if !(lambda > 0.0) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    if let Some(rv) = f.deformation_radius() {
        if params.radius < 4.0 * rv {
            return invalid(format!("box radius {} must be at least 4·R_V = {}", params.radius, 4.0 * rv));
        }
    }
    let grid = Grid::centered_box(d, params.cells, params.radius)?;
    let h = grid.h[0];
    let gref = &grid;
    let xx = x.to_vec();
    let point = |j: usize, xo: &mut [f64], ys: &mut [f64]| {
        xo.copy_from_slice(&xx);
        gref.coords(j, &mut ys[..d]);
    };
    let mut q_box = None;
    let local = match f {
        PhysicalHamiltonian::Closed(c) => {
            if c.num_scales != 1 {
                return invalid("box problems take single-scale Hamiltonians");
            }
            let r = closed_gradient_radius(c, p);
            q_box = Some(vec![(-r, r); d]);
            Local::build(Source::Closed(c), grid.len, d, d, point)
        }
        PhysicalHamiltonian::Quasi(q) => {
            let mut q = q.clone();
            if params.include_rest {
                q.controls = q.controls.with_rest();
            }
            Local::build(Source::Quasi(&q), grid.len, d, d, point)
        }
        PhysicalHamiltonian::Control(c) => {
            if c.num_scales != 1 {
                return invalid("box problems take single-scale Hamiltonians");
            }
            let mut c = c.clone();
            if params.include_rest {
                c.controls = c.controls.with_rest();
            }
            Local::build(Source::Control(&c), grid.len, d, d, point)
        }
    };
    let op = Operator::new(grid, d, (0..d).collect(), vec![1.0; d], p.to_vec(), lambda, local, Flux::Upwind, q_box)?;
    let opts = SchemeOptions { flux: Flux::Upwind, sweep: params.sweep, accelerate: false };
    // Start from the constant supersolution `max_y(−F(y, p))/λ`: the
    // iteration then decreases monotonically and minima travel a whole
    // sweep at a time, instead of ramping up by `h·V` per sweep from below.
    let mut top = f64::NEG_INFINITY;
    for j in 0..op.grid.len {
        top = top.max(-op.local.eval(j, p)?);
    }
    let mut w = vec![top / lambda; op.grid.len];
    let st = solve(&op, &mut w, &opts, tol, max_iter)?;
    let center = op.grid.linear(&vec![params.cells / 2; d]);
    let w0 = w[center];
    let v: Vec<f64> = w.iter().map(|x| x - w0).collect();
    let shells = params.shells.max(1);
    let width = params.radius / shells as f64;
    let mut slopes = vec![0.0f64; shells];
    let mut c = vec![0.0; d];
    for j in 0..op.grid.len {
        op.grid.coords(j, &mut c);
        let r = c.iter().map(|t| t * t).sum::<f64>().sqrt();
        if r == 0.0 || r > params.radius {
            continue;
        }
        let s = ((r / width).ceil() as usize).clamp(1, shells) - 1;
        slopes[s] = slopes[s].max(v[j].abs() / r);
    }
    Ok(BoxCellSolution {
        radius: params.radius,
        h,
        cells: params.cells,
        lambda,
        lam_w_origin: lambda * w0,
        effective_value: -lambda * w0,
        v,
        shell_radii: (1..=shells).map(|s| s as f64 * width).collect(),
        shell_slopes: slopes,
        residual: st.residual.max_abs,
        iterations: st.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub p: Vec<f64>,
    pub torus_value: f64,
    pub torus_flatness: f64,
    pub box_value: f64,
    pub difference: f64,
    pub resonance: ResonanceReport,
    pub note: Option<String>,
}

/// Effective value of a quasi-periodic Hamiltonian computed on the lifted
/// torus and on a truncated box.
#[allow(clippy::too_many_arguments)]
pub fn quasi_torus_consistency(
    f: &PhysicalHamiltonian,
    x: &[f64],
    p: &[f64],
    torus: &TorusGrid,
    schedule: &[f64],
    scheme: SchemeOptions,
    box_lambda: f64,
    box_params: &BoxParams,
    tol: f64,
    max_iter: usize,
) -> Result<ConsistencyReport> {
    let (lifted, scales) = match f {
        PhysicalHamiltonian::Closed(c) => {
            let (l, s) = crate::hamiltonians::lift_closed_form(c)?;
            (HamiltonianSpec::Closed(l), s)
        }
        PhysicalHamiltonian::Quasi(q) => {
            let (l, s) = crate::hamiltonians::lift_quasi_periodic(q)?;
            (HamiltonianSpec::Control(l), s)
        }
        PhysicalHamiltonian::Control(_) => return invalid("consistency check needs a quasi-periodic Hamiltonian"),
    };
    let resonance = check_condition_a(&scales, DEFAULT_SEARCH_BOUND, DEFAULT_TOLERANCE, DEFAULT_BUDGET)?;
    let prob = CellProblem::new(lifted, x.to_vec(), p.to_vec(), scales, schedule[schedule.len() - 1])?.with_scheme(scheme);
    let ev = effective_value(&prob, torus, schedule, tol, max_iter)?;
    let bx = solve_cell_unbounded(f, x, p, box_lambda, box_params, tol, max_iter)?;
    let note = resonance
        .any_resonant()
        .then(|| "resonant scales: the lift is valid but regularity of the effective value in (x, p) is not guaranteed".to_string());
    Ok(ConsistencyReport {
        p: p.to_vec(),
        torus_value: ev.hbar,
        torus_flatness: ev.flatness,
        box_value: bx.effective_value,
        difference: (ev.hbar - bx.effective_value).abs(),
        resonance,
        note,
    })
}

/// `1.25·max(|p|, ((a_max|p|^θ + osc V)/a₀)^{1/θ}) + 0.25`.
pub(crate) fn closed_gradient_radius(c: &ClosedFormSpec, p: &[f64]) -> f64 {
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let th = c.theta() as i32;
    let top = c.coefficient().upper_bound() * pn.powi(th) + c.v.upper_bound() - c.v.lower_bound();
    let grad = (top.max(0.0) / c.a0()).powf(1.0 / th as f64);
    1.25 * grad.max(pn) + 0.25
}

/// Radius used by [`CellProblem::q_box`], exposed for diagnostics.
pub fn q_box_radius(problem: &CellProblem) -> f64 {
    box_radius(&problem.q_box())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PotentialSpec, TrigSum, TrigTerm};
    use crate::hamiltonians::Family;
    use crate::scales::Ratio;

    fn eikonal(v: PotentialSpec, n: usize) -> HamiltonianSpec {
        HamiltonianSpec::Closed(ClosedFormSpec::new(1, n, Family::Eikonal, TrigSum::constant(1.0), v).unwrap())
    }

    fn v_sin() -> PotentialSpec {
        PotentialSpec::Periodic(TrigSum::constant(2.0).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)))
    }

    #[test]
    fn y_independent_quadratic_is_constant() {
        let h = HamiltonianSpec::Closed(ClosedFormSpec::new(2, 1, Family::Plain(2), TrigSum::constant(1.0), PotentialSpec::constant(0.0)).unwrap());
        let pr = CellProblem::new(h, vec![0.0; 2], vec![1.0, 1.0], ScaleSystem::single(2), 0.5).unwrap();
        let g = TorusGrid::uniform(1, 2, 8).unwrap();
        let s = solve_cell(&pr, &g, 1e-12, 1000).unwrap();
        assert!(s.w.iter().all(|v| (v + 4.0).abs() < 1e-12));
        assert!(s.lam_w_osc == 0.0);
    }

    #[test]
    fn one_d_eikonal_p0_and_p4() {
        let g = TorusGrid::uniform(1, 1, 256).unwrap();
        for (p, want) in [(0.0, -1.0), (4.0, 2.0)] {
            let pr = CellProblem::new(eikonal(v_sin(), 1), vec![0.0], vec![p], ScaleSystem::single(1), 0.01).unwrap();
            let sched = geometric_schedule(1.0, 0.01).unwrap();
            let ev = effective_value(&pr, &g, &sched, 1e-6, 2_000_000).unwrap();
            assert!((ev.hbar - want).abs() < 3e-2, "p = {p}: {}", ev.hbar);
            let s = &ev.solution;
            // |λw| ≤ sup|g| + |p| sup|b|.
            let bound = pr.ham.lambda_w_bound(&pr.p);
            assert!(s.w.iter().all(|v| (s.lambda * v).abs() <= bound + 1e-9));
        }
    }

    #[test]
    fn schedule_shape() {
        let s = geometric_schedule(1.0, 1e-3).unwrap();
        assert_eq!(s.len(), 11);
        assert_eq!(s[9], 0.5f64.powi(9));
        assert_eq!(*s.last().unwrap(), 1e-3);
        assert!(geometric_schedule(1.0, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_lambda_and_grid() {
        assert!(CellProblem::new(eikonal(v_sin(), 1), vec![0.0], vec![0.0], ScaleSystem::single(1), 0.0).is_err());
        assert!(TorusGrid::uniform(1, 1, 4).is_err());
    }

    #[test]
    fn restriction_of_single_scale_matches_grid() {
        let pr = CellProblem::new(eikonal(v_sin(), 1), vec![0.0], vec![0.5], ScaleSystem::single(1), 0.05).unwrap();
        let g = TorusGrid::uniform(1, 1, 64).unwrap();
        let s = solve_cell(&pr, &g, 1e-9, 1_000_000).unwrap();
        // Identity embedding: nodes are reproduced exactly.
        for j in 0..64 {
            assert!((s.interpolate(&[j as f64 / 64.0]) - s.w[j]).abs() < 1e-12);
        }
        let cs = restrict_diagonal(&s, &pr, &g, 1.0, 101).unwrap();
        assert_eq!(cs.points.len(), 101);
        assert!(cs.residual_p50.is_finite());
    }

    #[test]
    fn constant_w_restricts_to_constant() {
        let h = HamiltonianSpec::Closed(ClosedFormSpec::new(1, 2, Family::Plain(1), TrigSum::constant(1.0), PotentialSpec::constant(1.0)).unwrap());
        let sc = ScaleSystem::two_scale(1, Ratio::Float(std::f64::consts::SQRT_2)).unwrap();
        let pr = CellProblem::new(h, vec![0.0], vec![0.5], sc, 0.1).unwrap();
        let g = TorusGrid::uniform(2, 1, 16).unwrap();
        let s = solve_cell(&pr, &g, 1e-12, 1000).unwrap();
        let cs = restrict_diagonal(&s, &pr, &g, 3.0, 50).unwrap();
        assert!(cs.values.iter().all(|v| (v - s.w[0]).abs() < 1e-12));
        assert!(cs.residual_max <= 1e-10);
    }

    #[test]
    fn box_constant_potential() {
        let f = PhysicalHamiltonian::Closed(ClosedFormSpec::new(1, 1, Family::Eikonal, TrigSum::constant(1.0), PotentialSpec::constant(1.5)).unwrap());
        let b = solve_cell_unbounded(&f, &[0.0], &[0.0], 0.1, &BoxParams::new(4.0, 64), 1e-10, 10_000).unwrap();
        assert!(b.v.iter().all(|v| v.abs() < 1e-9));
        assert!((b.effective_value + 1.5).abs() < 1e-9);
    }

    #[test]
    fn box_radius_rule_for_deformations() {
        let f = PhysicalHamiltonian::Closed(
            ClosedFormSpec::new(1, 1, Family::Plain(1), TrigSum::constant(1.0), PotentialSpec::CompactDeformation { center: 0.0, outer: 1.0, radius: 1.0 }).unwrap(),
        );
        assert!(solve_cell_unbounded(&f, &[0.0], &[0.0], 0.1, &BoxParams::new(3.0, 60), 1e-8, 100).is_err());
    }
}
