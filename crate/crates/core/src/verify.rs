//! The acceptance suite: ten oracle- and property-based criteria, each a
//! library function returning a [`CriterionResult`]. Expensive runs shared
//! between criteria are cached in a [`Context`].

use crate::average::{b1_certificate, discounted_value, Policy};
use crate::cell::{
    effective_value, geometric_schedule, quasi_torus_consistency, restrict_diagonal, solve_cell, solve_cell_unbounded, BoxParams,
    CellProblem, EffectiveValue, PhysicalHamiltonian, TorusGrid,
};
use crate::effective::{b0_limit_table, build_table, check_properties, EffectiveTable, MomentumGrid};
use crate::error::{Error, Result};
use crate::field::{PotentialSpec, QuasiComponent, TrigSum, TrigTerm};
use crate::hamiltonians::{ClosedFormSpec, ControlHamiltonianSpec, ControlSet, CostTerm, DriftTerm, Family, HamiltonianSpec};
use crate::homogenizer::{convergence_study, ConvergenceSetup, EffectiveSource};
use crate::scales::{Ratio, ScaleSystem};
use crate::scheme::{solve, Flux, Grid, Local, Operator, SchemeOptions, Sweep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "constant-potential exactness"),
    (2, "1D quadrature oracle"),
    (3, "two-scale ergodic flatness"),
    (4, "diagonal corrector residual"),
    (5, "effective Hamiltonian properties"),
    (6, "homogenization convergence"),
    (7, "quasi-periodic torus/box consistency"),
    (8, "class B1 truncated box"),
    (9, "class B0 perturbation sequence"),
    (10, "scheme property suite"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    /// Compute time, including shared runs this criterion depends on.
    #[serde(skip_serializing, default)]
    pub seconds: f64,
    pub runtime_limit: Option<f64>,
}

impl CriterionResult {
    /// `PASS`/`FAIL` line for logs.
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} ({}): {} [{:.1} s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub results: Vec<CriterionResult>,
    pub passed: usize,
    pub failed: usize,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}

struct Timed<T> {
    value: T,
    seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> Timed<T> {
    let t = Instant::now();
    let value = f();
    Timed { value, seconds: t.elapsed().as_secs_f64() }
}

struct Tables1D {
    eikonal: EffectiveTable,
    quadratic: EffectiveTable,
}

struct TwoScale {
    problem: CellProblem,
    torus: TorusGrid,
    non_resonant: EffectiveValue,
    resonant: EffectiveValue,
}

/// Seed and cached shared runs.
pub struct Context {
    pub seed: u64,
    tables_1d: OnceLock<Timed<std::result::Result<Tables1D, String>>>,
    two_scale: OnceLock<Timed<std::result::Result<TwoScale, String>>>,
}

impl Context {
    pub fn new(seed: u64) -> Self {
        Context { seed, tables_1d: OnceLock::new(), two_scale: OnceLock::new() }
    }

    fn tables_1d(&self) -> (std::result::Result<&Tables1D, String>, f64) {
        let t = self.tables_1d.get_or_init(|| timed(|| build_tables_1d().map_err(|e| e.to_string())));
        (t.value.as_ref().map_err(Clone::clone), t.seconds)
    }

    fn two_scale(&self) -> (std::result::Result<&TwoScale, String>, f64) {
        let t = self.two_scale.get_or_init(|| timed(|| run_two_scale().map_err(|e| e.to_string())));
        (t.value.as_ref().map_err(Clone::clone), t.seconds)
    }
}

/// Process-wide context with the default seed.
pub fn shared() -> &'static Context {
    static CTX: OnceLock<Context> = OnceLock::new();
    CTX.get_or_init(|| Context::new(crate::config::DEFAULT_SEED))
}

/// Runs the criteria in `ids` (all when empty).
pub fn run_suite(ctx: &Context, ids: &[u8]) -> VerifyReport {
    let results: Vec<CriterionResult> =
        CRITERIA.iter().filter(|(id, _)| ids.is_empty() || ids.contains(id)).map(|(id, _)| run_criterion(ctx, *id)).collect();
    let passed = results.iter().filter(|r| r.pass).count();
    VerifyReport { seed: ctx.seed, failed: results.len() - passed, passed, results }
}

/// Runs one criterion; solver errors become failing results.
pub fn run_criterion(ctx: &Context, id: u8) -> CriterionResult {
    let name = CRITERIA.iter().find(|(i, _)| *i == id).map_or("unknown", |(_, n)| n).to_string();
    let limit = match id {
        1 => Some(5.0),
        2 | 8 => Some(120.0),
        3 | 7 => Some(180.0),
        6 => Some(300.0),
        _ => None,
    };
    let start = Instant::now();
    let out = match id {
        1 => criterion_1(),
        2 => criterion_2(ctx),
        3 => criterion_3(ctx),
        4 => criterion_4(ctx),
        5 => criterion_5(ctx),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(ctx.seed),
        _ => Err(Error::InvalidInput(format!("no criterion {id}"))),
    };
    let own = start.elapsed().as_secs_f64();
    let mut r = match out {
        Ok(o) => CriterionResult { id, name, pass: o.pass, detail: o.detail, metrics: o.metrics, seconds: own, runtime_limit: limit },
        Err(e) => CriterionResult { id, name, pass: false, detail: format!("error: {e}"), metrics: BTreeMap::new(), seconds: own, runtime_limit: limit },
    };
    // Shared runs are charged to every criterion that uses them.
    let shared_secs = match id {
        2 => ctx.tables_1d.get().map_or(0.0, |t| t.seconds),
        3 | 4 => ctx.two_scale.get().map_or(0.0, |t| t.seconds),
        _ => 0.0,
    };
    if shared_secs > r.seconds {
        r.seconds = shared_secs.max(own);
    }
    if let Some(l) = limit {
        if r.seconds > l {
            r.pass = false;
            r.detail.push_str(&format!("; runtime {:.1} s exceeds {l} s", r.seconds));
        }
    }
    r
}

struct Outcome {
    pass: bool,
    detail: String,
    metrics: BTreeMap<String, f64>,
}

fn metrics<const K: usize>(kv: [(&str, f64); K]) -> BTreeMap<String, f64> {
    kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn sine_potential(constant: f64, amp: f64) -> PotentialSpec {
    PotentialSpec::Periodic(TrigSum::constant(constant).with_term(TrigTerm::y(0, 0, 1.0, amp, 0.0)))
}

fn closed(d: usize, n: usize, family: Family, v: PotentialSpec) -> Result<HamiltonianSpec> {
    Ok(HamiltonianSpec::Closed(ClosedFormSpec::new(d, n, family, TrigSum::constant(1.0), v)?))
}

const LAMBDA_MIN: f64 = 1e-3;
const TOL: f64 = 1e-10;
const MAX_ITER: usize = 5_000_000;

fn criterion_1() -> Result<Outcome> {
    let c0 = 1.5;
    let torus = TorusGrid::uniform(1, 2, 16)?;
    let schedule = geometric_schedule(1.0, LAMBDA_MIN)?;
    let mut worst_err = 0.0f64;
    let mut worst_flat = 0.0f64;
    for theta in [1u8, 2] {
        let ham = closed(2, 1, Family::Plain(theta), PotentialSpec::constant(c0))?;
        for k in 0..3 {
            let p = vec![k as f64, 0.0];
            let pr = CellProblem::new(ham.clone(), vec![0.0; 2], p, ScaleSystem::single(2), LAMBDA_MIN)?;
            let ev = effective_value(&pr, &torus, &schedule, 1e-12, MAX_ITER)?;
            let exact = (k as f64).powi(theta as i32) - c0;
            worst_err = worst_err.max((ev.hbar - exact).abs());
            worst_flat = worst_flat.max(ev.flatness);
        }
    }
    let pass = worst_err <= 1e-6 && worst_flat <= 1e-8;
    Ok(Outcome {
        pass,
        detail: format!("max error {worst_err:.2e} (≤ 1e-6), max flatness {worst_flat:.2e} (≤ 1e-8)"),
        metrics: metrics([("max_error", worst_err), ("max_flatness", worst_flat)]),
    })
}

fn build_tables_1d() -> Result<Tables1D> {
    let grid = MomentumGrid::new(vec![-4.0], vec![4.0], vec![33])?;
    let torus = TorusGrid::uniform(1, 1, 256)?;
    let schedule = geometric_schedule(1.0, LAMBDA_MIN)?;
    let mk = |family| -> Result<EffectiveTable> {
        let pr = CellProblem::new(closed(1, 1, family, sine_potential(2.0, 1.0))?, vec![0.0], vec![0.0], ScaleSystem::single(1), LAMBDA_MIN)?;
        build_table(&pr, &grid, &torus, &schedule, TOL, MAX_ITER)
    };
    Ok(Tables1D { eikonal: mk(Family::Eikonal)?, quadratic: mk(Family::Quadratic)? })
}

/// `∫₀¹ √(c + 2 + sin 2πy) dy` by composite Simpson.
fn sqrt_integral(c: f64) -> f64 {
    let n = 1 << 14;
    let f = |y: f64| (c + 2.0 + (2.0 * std::f64::consts::PI * y).sin()).max(0.0).sqrt();
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Effective value of `|q|² − (2 + sin 2πy)`: `−1` on the flat part,
/// otherwise the root of `∫√(c + V) = |p|`.
pub fn quadratic_oracle(p: f64) -> f64 {
    let p = p.abs();
    if p <= sqrt_integral(-1.0) {
        return -1.0;
    }
    let (mut lo, mut hi) = (-1.0, p * p + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sqrt_integral(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sup_error(t: &EffectiveTable, oracle: impl Fn(f64) -> f64) -> f64 {
    (0..t.grid.len()).map(|j| (t.values[j] - oracle(t.grid.point(j)[0])).abs()).fold(0.0, f64::max)
}

fn criterion_2(ctx: &Context) -> Result<Outcome> {
    let (t, _) = ctx.tables_1d();
    let t = t.map_err(Error::InvalidInput)?;
    if !t.eikonal.is_complete() || !t.quadratic.is_complete() {
        return Err(Error::NonConvergence { iterations: MAX_ITER, residual: f64::NAN });
    }
    let e1 = sup_error(&t.eikonal, |p| (p.abs() - 2.0).max(-1.0));
    let e2 = sup_error(&t.quadratic, quadratic_oracle);
    Ok(Outcome {
        pass: e1 <= 3e-2 && e2 <= 5e-2,
        detail: format!("eikonal sup error {e1:.2e} (≤ 3e-2), quadratic sup error {e2:.2e} (≤ 5e-2)"),
        metrics: metrics([
            ("eikonal_sup_error", e1),
            ("quadratic_sup_error", e2),
            ("eikonal_scheme_error", t.eikonal.scheme_error),
            ("quadratic_scheme_error", t.quadratic.scheme_error),
        ]),
    })
}

fn two_scale_potential() -> PotentialSpec {
    PotentialSpec::Periodic(
        TrigSum::constant(2.0).with_term(TrigTerm::y(0, 0, 1.0, 0.5, 0.0)).with_term(TrigTerm::y(1, 0, 1.0, 0.5, 0.0)),
    )
}

fn two_scale_problem(gamma: Ratio, p: f64) -> Result<CellProblem> {
    let ham = closed(1, 2, Family::Eikonal, two_scale_potential())?;
    CellProblem::new(ham, vec![0.0], vec![p], ScaleSystem::two_scale(1, gamma)?, LAMBDA_MIN)
}

fn run_two_scale() -> Result<TwoScale> {
    let torus = TorusGrid::uniform(2, 1, 128)?;
    let schedule = geometric_schedule(1.0, LAMBDA_MIN)?;
    let problem = two_scale_problem(Ratio::Float(2f64.sqrt()), 0.0)?;
    let non_resonant = effective_value(&problem, &torus, &schedule, 1e-9, MAX_ITER)?;
    let resonant = effective_value(&two_scale_problem(Ratio::parse("1/2")?, 0.0)?, &torus, &schedule, 1e-9, MAX_ITER)?;
    Ok(TwoScale { problem, torus, non_resonant, resonant })
}

fn criterion_3(ctx: &Context) -> Result<Outcome> {
    let (r, _) = ctx.two_scale();
    let r = r.map_err(Error::InvalidInput)?;
    let fn_ = r.non_resonant.flatness;
    let fr = r.resonant.flatness;
    let hbar = r.non_resonant.hbar;
    // Trajectory oracle: greedy policy of the torus solution for the
    // control form sup_{α=±1} (−αq − V) of the same Hamiltonian.
    let ctrl = ControlHamiltonianSpec {
        dim: 1,
        num_scales: 2,
        drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))],
        cost: vec![CostTerm::Potential(two_scale_potential())],
        controls: ControlSet::enumerated(vec![vec![-1.0], vec![1.0]])?,
    };
    let lam = r.problem.lambda;
    let horizon = 5.0 / lam;
    let dt = 0.9 / (128.0 * 2f64.sqrt());
    let traj = discounted_value(&ctrl, &r.problem.scales, &[0.0], &[0.0], &[0.0, 0.0], lam, Policy::Greedy(&r.non_resonant.solution), dt, horizon)?;
    let oracle = -traj.value;
    let pass = fn_ <= 0.5 * fr && (hbar + 1.0).abs() <= 5e-2 && (oracle + 1.0).abs() <= 5e-2;
    Ok(Outcome {
        pass,
        detail: format!(
            "flatness √2 {fn_:.3e} vs 1/2 {fr:.3e} (ratio {:.3} ≤ 0.5); H̄ = {hbar:.4}, trajectory oracle {oracle:.4} (target −1 ± 5e-2)",
            fn_ / fr
        ),
        metrics: metrics([
            ("flatness_non_resonant", fn_),
            ("flatness_resonant", fr),
            ("flatness_ratio", fn_ / fr),
            ("hbar_non_resonant", hbar),
            ("hbar_resonant", r.resonant.hbar),
            ("trajectory_oracle", oracle),
        ]),
    })
}

fn criterion_4(ctx: &Context) -> Result<Outcome> {
    let (r, _) = ctx.two_scale();
    let r = r.map_err(Error::InvalidInput)?;
    let s = restrict_diagonal(&r.non_resonant.solution, &r.problem, &r.torus, 10.0, 2001)?;
    Ok(Outcome {
        pass: s.measured_c <= 10.0,
        detail: format!(
            "p95 residual {:.3e}, λ·osc(w) {:.3e}, h {:.3e}: measured C = {:.2} (≤ 10)",
            s.residual_p95, s.flatness, s.h, s.measured_c
        ),
        metrics: metrics([
            ("residual_p50", s.residual_p50),
            ("residual_p95", s.residual_p95),
            ("residual_max", s.residual_max),
            ("flatness", s.flatness),
            ("h", s.h),
            ("measured_c", s.measured_c),
        ]),
    })
}

fn property_check(name: &str, t: &EffectiveTable, theta: f64, m: &mut BTreeMap<String, f64>) -> Result<Option<String>> {
    let rep = check_properties(t, 2.0 * t.scheme_error)?;
    let fit = rep.coercivity_fit.unwrap_or(f64::NAN);
    m.insert(format!("{name}_coercivity_fit"), fit);
    m.insert(format!("{name}_lipschitz"), rep.lipschitz_estimate);
    m.insert(format!("{name}_convexity_violations"), rep.convexity_violations.len() as f64);
    let ok = rep.pass && (fit - theta).abs() <= 0.15;
    Ok((!ok).then(|| format!("{name}: {} convexity violations, lipschitz {:.3}, fit {fit:.3} vs θ = {theta}", rep.convexity_violations.len(), rep.lipschitz_estimate)))
}

fn criterion_5(ctx: &Context) -> Result<Outcome> {
    let mut m = BTreeMap::new();
    let mut bad = Vec::new();
    let mut count = 0;
    // Criterion-1 family on a 2D momentum box.
    let g2 = MomentumGrid::new(vec![-3.0; 2], vec![3.0; 2], vec![13; 2])?;
    let t8 = TorusGrid::uniform(1, 2, 8)?;
    let sched = geometric_schedule(1.0, LAMBDA_MIN)?;
    for theta in [1u8, 2] {
        let pr = CellProblem::new(closed(2, 1, Family::Plain(theta), PotentialSpec::constant(1.5))?, vec![0.0; 2], vec![0.0; 2], ScaleSystem::single(2), LAMBDA_MIN)?;
        let t = build_table(&pr, &g2, &t8, &sched, 1e-12, MAX_ITER)?;
        bad.extend(property_check(&format!("constant_theta{theta}"), &t, theta as f64, &mut m)?);
        count += 1;
    }
    let (t, _) = ctx.tables_1d();
    let t = t.map_err(Error::InvalidInput)?;
    bad.extend(property_check("sine_eikonal", &t.eikonal, 1.0, &mut m)?);
    bad.extend(property_check("sine_quadratic", &t.quadratic, 2.0, &mut m)?);
    count += 2;
    // Two-scale eikonal on a coarser torus.
    let pr = two_scale_problem(Ratio::Float(2f64.sqrt()), 0.0)?;
    let g1 = MomentumGrid::new(vec![-4.0], vec![4.0], vec![17])?;
    let t = build_table(&pr, &g1, &TorusGrid::uniform(2, 1, 64)?, &sched, 1e-9, MAX_ITER)?;
    if !t.is_complete() {
        return Err(Error::NonConvergence { iterations: MAX_ITER, residual: f64::NAN });
    }
    bad.extend(property_check("two_scale_eikonal", &t, 1.0, &mut m)?);
    count += 1;
    Ok(Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() { format!("{count} tables: convex within 2·scheme error, Lipschitz, growth exponent within 0.15") } else { bad.join("; ") },
        metrics: m,
    })
}

fn criterion_6() -> Result<Outcome> {
    let ham = closed(1, 1, Family::Eikonal, sine_potential(2.0, 1.0))?;
    let src = EffectiveSource::Torus {
        p_grid: MomentumGrid::new(vec![-3.0], vec![3.0], vec![25])?,
        torus: TorusGrid::uniform(1, 1, 256)?,
        schedule: geometric_schedule(1.0, LAMBDA_MIN)?,
        tol: TOL,
        max_iter: MAX_ITER,
    };
    let setup = ConvergenceSetup::stationary(ham, ScaleSystem::single(1), vec![0.25, 0.125, 0.0625, 0.03125], 1.0, src);
    let rep = convergence_study(&setup)?;
    let strict = rep.errors.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a));
    let pass = rep.failures.is_empty() && rep.decreasing_until_floor() && strict;
    let mut m = BTreeMap::new();
    for (k, e) in rep.errors.iter().enumerate() {
        m.insert(format!("error_eps{k}"), e.unwrap_or(f64::NAN));
        m.insert(format!("floor_eps{k}"), if rep.floor_reached[k] { 1.0 } else { 0.0 });
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "errors {:?}, floor flags {:?}, decreasing until floor: {}, strictly decreasing: {strict}",
            rep.errors.iter().map(|e| e.map_or("failed".to_string(), |e| format!("{e:.3e}"))).collect::<Vec<_>>(),
            rep.floor_reached,
            rep.decreasing_until_floor()
        ),
        metrics: m,
    })
}

fn quasi_eikonal() -> Result<ClosedFormSpec> {
    let v = PotentialSpec::QuasiPeriodic(vec![
        QuasiComponent { periods: vec![1.0], field: TrigSum::constant(2.0).with_term(TrigTerm::y(0, 0, 1.0, 0.5, 0.0)) },
        QuasiComponent { periods: vec![2f64.sqrt()], field: TrigSum::constant(0.0).with_term(TrigTerm::y(0, 0, 1.0, 0.5, 0.0)) },
    ]);
    ClosedFormSpec::new(1, 1, Family::Eikonal, TrigSum::constant(1.0), v)
}

fn criterion_7() -> Result<Outcome> {
    let f = PhysicalHamiltonian::Closed(quasi_eikonal()?);
    let torus = TorusGrid::uniform(2, 1, 64)?;
    let schedule = geometric_schedule(1.0, 1e-2)?;
    let params = BoxParams::new(500.0, 32_000);
    let mut m = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for p in [0.0, 1.0, 2.0] {
        let r = quasi_torus_consistency(&f, &[0.0], &[p], &torus, &schedule, SchemeOptions::default(), 1e-2, &params, 1e-9, MAX_ITER)?;
        m.insert(format!("torus_p{p}"), r.torus_value);
        m.insert(format!("box_p{p}"), r.box_value);
        worst = worst.max(r.difference);
        parts.push(format!("p={p}: torus {:.4}, box {:.4}", r.torus_value, r.box_value));
    }
    m.insert("max_difference".into(), worst);
    Ok(Outcome { pass: worst <= 5e-2, detail: format!("{}; max difference {worst:.3e} (≤ 5e-2)", parts.join(", ")), metrics: m })
}

fn criterion_8() -> Result<Outcome> {
    let v = PotentialSpec::CompactDeformation { center: 0.0, outer: 1.0, radius: 1.0 };
    let f = PhysicalHamiltonian::Closed(ClosedFormSpec::new(1, 1, Family::Eikonal, TrigSum::constant(1.0), v.clone())?);
    let params = BoxParams::new(500.0, 20_000);
    let rays = vec![(vec![0.0], vec![1.0]), (vec![0.0], vec![-1.0]), (vec![3.0], vec![1.0]), (vec![-3.0], vec![-1.0])];
    let mut m = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut monotone = true;
    let mut parts = Vec::new();
    for p in [0.0, 0.5, 2.0] {
        let b = solve_cell_unbounded(&f, &[0.0], &[p], 1e-2, &params, 1e-9, MAX_ITER)?;
        let cert = b1_certificate(&v, &[0.0], &rays, &[1e3], 1e-2, &[p])?;
        let target = p.abs() - 1.0;
        let err = (b.effective_value - target).abs();
        worst = worst.max(err);
        let beyond: Vec<f64> = b.shell_radii.iter().zip(&b.shell_slopes).filter(|(r, _)| **r - params.radius / params.shells as f64 >= 1.0).map(|(_, s)| *s).collect();
        let mono = beyond.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        monotone &= mono;
        m.insert(format!("box_p{p}"), b.effective_value);
        m.insert(format!("constant_control_p{p}"), cert.constant_control_value);
        m.insert(format!("error_p{p}"), err);
        parts.push(format!("p={p}: box {:.4} vs |p|−1 = {target} (constant-control oracle {:.4}){}", b.effective_value, cert.constant_control_value, if mono { "" } else { ", slopes not monotone" }));
    }
    m.insert("max_error".into(), worst);
    Ok(Outcome {
        pass: worst <= 5e-2 && monotone,
        detail: format!("{}; max error {worst:.3e} (≤ 5e-2); shell slopes monotone beyond R_V: {monotone}", parts.join(", ")),
        metrics: m,
    })
}

fn criterion_9() -> Result<Outcome> {
    let grid = MomentumGrid::new(vec![-2.0], vec![2.0], vec![9])?;
    let torus = TorusGrid::uniform(1, 1, 256)?;
    let schedule = geometric_schedule(1.0, LAMBDA_MIN)?;
    let mut seq = Vec::new();
    let mut v = TrigSum::constant(2.0);
    for n in 1..=6 {
        v = v.with_term(TrigTerm::y(0, 0, n as f64, 0.5f64.powi(n), 0.0));
        let ham = closed(1, 1, Family::Eikonal, PotentialSpec::Periodic(v.clone()))?;
        seq.push(CellProblem::new(ham, vec![0.0], vec![0.0], ScaleSystem::single(1), LAMBDA_MIN)?);
    }
    let lim = b0_limit_table(&seq, &grid, &torus, &schedule, TOL, MAX_ITER)?;
    let se = lim.table.scheme_error;
    let mut m = metrics([("scheme_error", se), ("uniform_bound", lim.uniform_bound)]);
    let mut pass = lim.cauchy_gaps.len() == 5;
    for (k, g) in lim.cauchy_gaps.iter().enumerate() {
        let n = k + 1;
        let bound = 0.5f64.powi(n as i32) + 2.0 * se;
        pass &= *g <= bound;
        m.insert(format!("gap_N{n}"), *g);
        m.insert(format!("bound_N{n}"), bound);
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "gaps {:?} vs 2^-N + 2·{se:.2e}",
            lim.cauchy_gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()
        ),
        metrics: m,
    })
}

// ---------------------------------------------------------------- scheme probes

pub const PROBES: usize = 1000;

fn random_operator(rng: &mut ChaCha8Rng, flux: Flux, control: bool) -> Result<Operator> {
    let d = rng.gen_range(1..=2usize);
    let cells: Vec<usize> = (0..d).map(|_| rng.gen_range(6..=12)).collect();
    let g = Grid::torus(&cells)?;
    let n = g.len;
    let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let lambda = rng.gen_range(0.05..1.0);
    let local = if control {
        let nc = 3;
        let mut b = Vec::with_capacity(n * nc * d);
        let mut gg = Vec::with_capacity(n * nc);
        for _ in 0..n {
            for _ in 0..nc {
                for _ in 0..d {
                    b.push(rng.gen_range(-1.5..1.5));
                }
                gg.push(rng.gen_range(0.0..3.0));
            }
        }
        Local::Control { nc, b, g: gg }
    } else {
        let m = rng.gen_range(1..=2u8);
        Local::Closed { m, a: (0..n).map(|_| rng.gen_range(0.5..2.0)).collect(), v: (0..n).map(|_| rng.gen_range(0.5..3.0)).collect() }
    };
    Operator::new(g, d, (0..d).collect(), vec![1.0; d], p, lambda, local, flux, Some(vec![(-50.0, 50.0); d]))
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
}

fn flux_and_form(k: usize) -> (Flux, bool) {
    match k % 3 {
        0 => (Flux::LaxFriedrichs, false),
        1 => (Flux::Upwind, false),
        _ => (Flux::Upwind, true),
    }
}

/// Counts monotonicity violations: `H_num` nonincreasing in each
/// neighbour, `λw_j + H_num` nondecreasing in `w_j`, local solve
/// nondecreasing in the neighbours.
pub fn monotonicity_probes(seed: u64, probes: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for k in 0..probes {
        let (flux, control) = flux_and_form(k);
        let op = random_operator(&mut rng, flux, control)?;
        let n = op.grid.len;
        let w = random_field(&mut rng, n, 0.5);
        let j = rng.gen_range(0..n);
        let axis = rng.gen_range(0..op.grid.axes());
        let nb = if rng.gen_bool(0.5) { op.grid.plus(axis, j) } else { op.grid.minus(axis, j) }.expect("torus");
        let delta = rng.gen_range(1e-3..0.5);
        let mut up = w.clone();
        up[nb] += delta;
        let mut own = w.clone();
        own[j] += delta;
        let h0 = op.hnum(&w, j)?;
        let eps = 1e-10 * (1.0 + h0.abs());
        if op.hnum(&up, j)? > h0 + eps {
            bad += 1;
        }
        if op.lambda * own[j] + op.hnum(&own, j)? < op.lambda * w[j] + h0 - eps {
            bad += 1;
        }
        if op.local_solve(&up, j)? < op.local_solve(&w, j)? - 1e-10 {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Counts comparison violations: potentials `V₁ ≤ V₂` must give solutions
/// `w₁ ≤ w₂` of the discounted problem.
pub fn comparison_probes(seed: u64, probes: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let mut bad = 0;
    let tol = 1e-11;
    for k in 0..probes {
        let (flux, control) = flux_and_form(k);
        let op1 = random_operator(&mut rng, flux, control)?;
        let n = op1.grid.len;
        let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        // A larger potential (or running cost) lowers H.
        let local2 = match &op1.local {
            Local::Closed { m, a, v } => Local::Closed { m: *m, a: a.clone(), v: v.iter().zip(&shift).map(|(x, s)| x + s).collect() },
            Local::Control { nc, b, g } => Local::Control { nc: *nc, b: b.clone(), g: g.iter().enumerate().map(|(i, x)| x + shift[i / nc]).collect() },
            Local::Table(_) => unreachable!(),
        };
        let op2 = Operator::new(op1.grid.clone(), op1.d, op1.axis_q.clone(), op1.axis_gamma.clone(), op1.p.clone(), op1.lambda, local2, flux, Some(vec![(-50.0, 50.0); op1.d]))?;
        let opts = SchemeOptions { flux, sweep: Sweep::GaussSeidel, accelerate: true };
        let mut w1 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        solve(&op1, &mut w1, &opts, tol, 1_000_000)?;
        solve(&op2, &mut w2, &opts, tol, 1_000_000)?;
        let slack = 2.0 * tol / op1.lambda + 1e-12;
        if w1.iter().zip(&w2).any(|(a, b)| *a > *b + slack) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Counts Jacobi steps whose sup-norm Lipschitz factor exceeds `1/(1 + λτ)`.
pub fn contraction_probes(seed: u64, probes: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let mut bad = 0;
    for k in 0..probes {
        let (flux, control) = flux_and_form(k);
        let op = random_operator(&mut rng, flux, control)?;
        let n = op.grid.len;
        let tau = op.tau();
        let u = random_field(&mut rng, n, 0.5);
        let v = random_field(&mut rng, n, 0.5);
        let (mut tu, mut tv, mut r) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        op.jacobi_step(&u, &mut tu, &mut r, tau)?;
        op.jacobi_step(&v, &mut tv, &mut r, tau)?;
        let before = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let after = tu.iter().zip(&tv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if after > before / (1.0 + op.lambda * tau) * (1.0 + 1e-12) + 1e-14 {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Counts cell solutions with `max|λw| > lambda_w_bound(p)`.
pub fn lambda_w_probes(seed: u64, probes: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0004);
    let mut bad = 0;
    let tol = 1e-10;
    for k in 0..probes {
        let mut v = TrigSum::constant(rng.gen_range(-1.0..3.0));
        for _ in 0..rng.gen_range(1..=3) {
            v = v.with_term(TrigTerm::y(0, 0, rng.gen_range(1..=3) as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)));
        }
        let v = PotentialSpec::Periodic(v);
        let p = vec![rng.gen_range(-2.0..2.0)];
        let ham = if k % 2 == 0 {
            let fam = if rng.gen_bool(0.5) { Family::Eikonal } else { Family::Quadratic };
            let a = TrigSum::constant(rng.gen_range(0.5..2.0));
            HamiltonianSpec::Closed(ClosedFormSpec::new(1, 1, fam, a, v)?)
        } else {
            HamiltonianSpec::Control(ControlHamiltonianSpec {
                dim: 1,
                num_scales: 1,
                drift: vec![DriftTerm::Scaled(TrigSum::constant(rng.gen_range(0.5..2.0)))],
                cost: vec![CostTerm::Potential(v)],
                controls: ControlSet::enumerated(vec![vec![-1.0], vec![0.0], vec![1.0]])?,
            })
        };
        let bound = ham.lambda_w_bound(&p);
        let lambda = rng.gen_range(0.05..1.0);
        let pr = CellProblem::new(ham, vec![0.0], p, ScaleSystem::single(1), lambda)?;
        let sol = solve_cell(&pr, &TorusGrid::uniform(1, 1, 16)?, tol, 1_000_000)?;
        let top = sol.lam_w_max.abs().max(sol.lam_w_min.abs());
        if top > bound + 2.0 * tol {
            bad += 1;
        }
    }
    Ok(bad)
}

fn criterion_10(seed: u64) -> Result<Outcome> {
    let mono = monotonicity_probes(seed, PROBES)?;
    let comp = comparison_probes(seed, PROBES)?;
    let contr = contraction_probes(seed, PROBES)?;
    let bound = lambda_w_probes(seed, PROBES)?;
    let total = mono + comp + contr + bound;
    Ok(Outcome {
        pass: total == 0,
        detail: format!(
            "violations over {PROBES} probes each (seed {seed}): monotonicity {mono}, comparison {comp}, contraction {contr}, λw bound {bound}"
        ),
        metrics: metrics([
            ("probes", PROBES as f64),
            ("monotonicity_violations", mono as f64),
            ("comparison_violations", comp as f64),
            ("contraction_violations", contr as f64),
            ("lambda_w_violations", bound as f64),
        ]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_oracle_limits() {
        assert_eq!(quadratic_oracle(0.0), -1.0);
        // ∫√(1 + sin) = 2√2/π.
        assert!((sqrt_integral(-1.0) - 2.0 * 2f64.sqrt() / std::f64::consts::PI).abs() < 1e-6);
        // Large |p|: c ≈ p² − 2 + O(1/p²).
        assert!((quadratic_oracle(20.0) - 398.0).abs() < 1e-2);
        let c = quadratic_oracle(2.0);
        assert!((sqrt_integral(c) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn small_probe_batches_are_clean() {
        assert_eq!(monotonicity_probes(7, 60).unwrap(), 0);
        assert_eq!(contraction_probes(7, 60).unwrap(), 0);
        assert_eq!(comparison_probes(7, 30).unwrap(), 0);
        assert_eq!(lambda_w_probes(7, 30).unwrap(), 0);
    }

    #[test]
    fn unknown_criterion_fails_cleanly() {
        let r = run_criterion(&Context::new(1), 42);
        assert!(!r.pass && r.detail.starts_with("error"));
    }
}
