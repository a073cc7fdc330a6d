//! Hamiltonians in control form `H = sup_α {−⟨b,p⟩ − g}` and in closed form
//! `a·|p|^θ − V`, their monotone discretization, and the quasi-periodic lift.

use crate::error::{invalid, Error, Result};
use crate::field::{PotentialSpec, QuasiComponent, TrigSum};
use crate::scales::{Ratio, ScaleSystem};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest supported spatial dimension (keeps per-node scratch on the stack).
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlKind {
    Enumerated,
    UnitBallDirections(usize),
    BoxGrid { per_axis: usize, radius: f64 },
}

/// A finite sample of the control set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub samples: Vec<Vec<f64>>,
    pub kind: ControlKind,
}

impl ControlSet {
    pub fn enumerated(samples: Vec<Vec<f64>>) -> Result<Self> {
        let s = ControlSet { samples, kind: ControlKind::Enumerated };
        s.validate()?;
        Ok(s)
    }

    /// `m` equally spaced unit vectors (d = 1: `{−1, +1}` regardless of `m`).
    pub fn unit_directions(d: usize, m: usize) -> Result<Self> {
        let samples = match d {
            1 => vec![vec![-1.0], vec![1.0]],
            2 => {
                if m < 3 {
                    return invalid("need at least 3 directions in 2D");
                }
                (0..m)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / m as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect()
            }
            _ => return invalid("unit-direction sampling is implemented for d ≤ 2"),
        };
        let m = samples.len();
        Ok(ControlSet { samples, kind: ControlKind::UnitBallDirections(m) })
    }

    /// Tensor grid with `per_axis` nodes on `[−radius, radius]^d`.
    pub fn box_grid(d: usize, per_axis: usize, radius: f64) -> Result<Self> {
        if per_axis < 2 || !(radius > 0.0 && radius.is_finite()) || d == 0 {
            return invalid("box grid needs ≥ 2 nodes per axis and a positive radius");
        }
        let total = per_axis.checked_pow(d as u32).ok_or_else(|| Error::InvalidInput("control grid too large".into()))?;
        let step = 2.0 * radius / (per_axis - 1) as f64;
        let mut samples = Vec::with_capacity(total);
        for mut k in 0..total {
            let mut a = vec![0.0; d];
            for ai in a.iter_mut().rev() {
                let j = k % per_axis;
                k /= per_axis;
                // Symmetric nodes: exact zero when per_axis is odd.
                *ai = (2.0 * j as f64 - (per_axis - 1) as f64) * 0.5 * step;
            }
            samples.push(a);
        }
        Ok(ControlSet { samples, kind: ControlKind::BoxGrid { per_axis, radius } })
    }

    /// Appends the rest control `α = 0` if absent.
    pub fn with_rest(mut self) -> Self {
        let d = self.dim();
        if !self.samples.iter().any(|a| a.iter().all(|v| *v == 0.0)) {
            self.samples.push(vec![0.0; d]);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |a| a.len())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return invalid("control set is empty");
        }
        let d = self.dim();
        if d == 0 || self.samples.iter().any(|a| a.len() != d || a.iter().any(|v| !v.is_finite())) {
            return invalid("control samples must share one positive dimension and be finite");
        }
        if let ControlKind::UnitBallDirections(_) = self.kind {
            if self.samples.iter().any(|a| a.iter().map(|v| v * v).sum::<f64>() > 1.0 + 1e-12) {
                return invalid("unit-ball control with norm > 1");
            }
        }
        Ok(())
    }
}

/// Contribution to the drift `b(x, y, α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriftTerm {
    /// `coef(x, y) · α` (control dimension equals `d`).
    Scaled(TrigSum),
    /// A control-independent vector field.
    Field(Vec<TrigSum>),
}

/// Contribution to the running cost `g(x, y, α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CostTerm {
    Potential(PotentialSpec),
    /// `|α|² / (4·a(x, y))`.
    Kinetic(TrigSum),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlHamiltonianSpec {
    pub dim: usize,
    pub num_scales: usize,
    pub drift: Vec<DriftTerm>,
    pub cost: Vec<CostTerm>,
    pub controls: ControlSet,
}

impl ControlHamiltonianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM || self.num_scales == 0 {
            return invalid(format!("dimension must be in 1..={MAX_DIM} with at least one scale"));
        }
        self.controls.validate()?;
        for t in &self.drift {
            match t {
                DriftTerm::Scaled(c) => {
                    if self.controls.dim() != self.dim {
                        return invalid("scaled drift needs control dimension equal to d");
                    }
                    PotentialSpec::Periodic(c.clone()).validate(self.dim, self.num_scales, self.dim)?;
                }
                DriftTerm::Field(fs) => {
                    if fs.len() != self.dim {
                        return invalid("drift field needs d components");
                    }
                    for f in fs {
                        PotentialSpec::Periodic(f.clone()).validate(self.dim, self.num_scales, self.dim)?;
                    }
                }
            }
        }
        for t in &self.cost {
            match t {
                CostTerm::Potential(v) => v.validate(self.dim, self.num_scales, self.dim)?,
                CostTerm::Kinetic(a) => {
                    if a.lower_bound() <= 0.0 {
                        return invalid("kinetic coefficient must be bounded below by a positive constant");
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `b(x, ys, α)` into `b` and returns `g(x, ys, α)`.
    #[inline]
    pub fn drift_cost(&self, x: &[f64], ys: &[f64], alpha: &[f64], b: &mut [f64]) -> f64 {
        let d = self.dim;
        b[..d].iter_mut().for_each(|v| *v = 0.0);
        for t in &self.drift {
            match t {
                DriftTerm::Scaled(c) => {
                    let k = c.eval(x, ys, d);
                    for i in 0..d {
                        b[i] += k * alpha[i];
                    }
                }
                DriftTerm::Field(fs) => {
                    for i in 0..d {
                        b[i] += fs[i].eval(x, ys, d);
                    }
                }
            }
        }
        let mut g = 0.0;
        for t in &self.cost {
            g += match t {
                CostTerm::Potential(v) => v.eval(x, ys, d),
                CostTerm::Kinetic(a) => alpha.iter().map(|v| v * v).sum::<f64>() / (4.0 * a.eval(x, ys, d)),
            };
        }
        g
    }

    /// `sup |b|` over the torus and the control sample (analytic bound).
    pub fn sup_drift(&self) -> f64 {
        let amax = self.controls.samples.iter().map(|a| norm(a)).fold(0.0, f64::max);
        self.drift
            .iter()
            .map(|t| match t {
                DriftTerm::Scaled(c) => c.sup_abs() * amax,
                DriftTerm::Field(fs) => fs.iter().map(|f| f.sup_abs().powi(2)).sum::<f64>().sqrt(),
            })
            .sum()
    }

    /// `sup |g|` over the torus and the control sample (analytic bound).
    pub fn sup_cost(&self) -> f64 {
        let a2 = self.controls.samples.iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
        self.cost
            .iter()
            .map(|t| match t {
                CostTerm::Potential(v) => v.sup_abs(),
                CostTerm::Kinetic(a) => a2 / (4.0 * a.lower_bound()),
            })
            .sum()
    }

    /// Lipschitz constant `L(x, α)` of `(b, g)` in the fast variables.
    pub fn lipschitz(&self, alpha: &[f64]) -> f64 {
        let an = norm(alpha);
        let a2 = an * an;
        let mut l = 0.0;
        for t in &self.drift {
            l += match t {
                DriftTerm::Scaled(c) => c.lipschitz_y() * an,
                DriftTerm::Field(fs) => fs.iter().map(|f| f.lipschitz_y()).sum(),
            };
        }
        for t in &self.cost {
            l += match t {
                CostTerm::Potential(v) => v.lipschitz_y(),
                CostTerm::Kinetic(a) => {
                    let lo = a.lower_bound();
                    a2 * a.lipschitz_y() / (4.0 * lo * lo)
                }
            };
        }
        l
    }

    pub fn eval(&self, x: &[f64], ys: &[f64], p: &[f64]) -> f64 {
        let mut b = [0.0; MAX_DIM];
        let mut best = f64::NEG_INFINITY;
        for a in &self.controls.samples {
            let g = self.drift_cost(x, ys, a, &mut b);
            let v = -dot(&b[..self.dim], p) - g;
            // Strict comparison keeps the first maximizer.
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Index of the first maximizing control at `(x, ys, p)`.
    pub fn argmax(&self, x: &[f64], ys: &[f64], p: &[f64]) -> usize {
        let mut b = [0.0; MAX_DIM];
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, a) in self.controls.samples.iter().enumerate() {
            let g = self.drift_cost(x, ys, a, &mut b);
            let v = -dot(&b[..self.dim], p) - g;
            if v > best {
                best = v;
                arg = k;
            }
        }
        arg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// `a·|p|² − V`
    Quadratic,
    /// `a·|p| − V`
    Eikonal,
    /// `|p|^m − V`, `m ∈ {1, 2}`
    Plain(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormSpec {
    pub dim: usize,
    pub num_scales: usize,
    pub family: Family,
    pub a: TrigSum,
    pub v: PotentialSpec,
}

impl ClosedFormSpec {
    pub fn new(dim: usize, num_scales: usize, family: Family, a: TrigSum, v: PotentialSpec) -> Result<Self> {
        let s = ClosedFormSpec { dim, num_scales, family, a, v };
        s.validate()?;
        Ok(s)
    }

    /// Coercivity exponent θ.
    pub fn theta(&self) -> u8 {
        match self.family {
            Family::Quadratic => 2,
            Family::Eikonal => 1,
            Family::Plain(m) => m,
        }
    }

    /// Effective coefficient field (`1` for the plain family).
    pub fn coefficient(&self) -> TrigSum {
        match self.family {
            Family::Plain(_) => TrigSum::constant(1.0),
            _ => self.a.clone(),
        }
    }

    /// Lower bound `a₀` of the coefficient.
    pub fn a0(&self) -> f64 {
        self.coefficient().lower_bound()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM || self.num_scales == 0 {
            return invalid(format!("dimension must be in 1..={MAX_DIM} with at least one scale"));
        }
        if let Family::Plain(m) = self.family {
            if m != 1 && m != 2 {
                return invalid("plain family needs exponent 1 or 2");
            }
        }
        PotentialSpec::Periodic(self.a.clone()).validate(self.dim, self.num_scales, self.dim)?;
        if self.a0() <= 0.0 {
            return invalid("coefficient a must be bounded below by a₀ > 0");
        }
        self.v.validate(self.dim, self.num_scales, self.dim)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], ys: &[f64], p: &[f64]) -> f64 {
        let d = self.dim;
        let v = self.v.eval(x, ys, d);
        let n2: f64 = p.iter().map(|q| q * q).sum();
        match self.family {
            Family::Quadratic => self.a.eval(x, ys, d) * n2 - v,
            Family::Eikonal => self.a.eval(x, ys, d) * n2.sqrt() - v,
            Family::Plain(1) => n2.sqrt() - v,
            Family::Plain(_) => n2 - v,
        }
    }
}

/// Either representation of a Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HamiltonianSpec {
    Closed(ClosedFormSpec),
    Control(ControlHamiltonianSpec),
}

impl HamiltonianSpec {
    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSpec::Closed(c) => c.dim,
            HamiltonianSpec::Control(c) => c.dim,
        }
    }

    pub fn num_scales(&self) -> usize {
        match self {
            HamiltonianSpec::Closed(c) => c.num_scales,
            HamiltonianSpec::Control(c) => c.num_scales,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HamiltonianSpec::Closed(c) => c.validate(),
            HamiltonianSpec::Control(c) => c.validate(),
        }
    }

    /// `sup|g| + |p|·sup|b|`, the bound on `|λw|` for the discounted problem.
    pub fn lambda_w_bound(&self, p: &[f64]) -> f64 {
        let pn = norm(p);
        match self {
            HamiltonianSpec::Control(c) => c.sup_cost() + pn * c.sup_drift(),
            HamiltonianSpec::Closed(c) => {
                let amax = c.coefficient().sup_abs();
                let h0 = match c.theta() {
                    1 => amax * pn,
                    _ => amax * pn * pn,
                };
                c.v.sup_abs() + h0
            }
        }
    }
}

/// Evaluates `H(x, y¹..yᴺ, p)`; `ys` is the flat `N·d` fast point.
pub fn eval_hamiltonian(spec: &HamiltonianSpec, x: &[f64], ys: &[f64], p: &[f64]) -> Result<f64> {
    let d = spec.dim();
    if x.len() != d || p.len() != d || ys.len() != spec.num_scales() * d {
        return invalid(format!(
            "dimension mismatch: d = {d}, N = {}, got |x| = {}, |ys| = {}, |p| = {}",
            spec.num_scales(),
            x.len(),
            ys.len(),
            p.len()
        ));
    }
    Ok(match spec {
        HamiltonianSpec::Closed(c) => c.eval(x, ys, p),
        HamiltonianSpec::Control(c) => c.eval(x, ys, p),
    })
}

/// How finely [`closed_to_control`] samples the control set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlResolution {
    /// Number of directions for the eikonal family in 2D.
    pub directions: usize,
    /// Nodes per axis of the box grid for the quadratic family.
    pub per_axis: usize,
    /// Add the rest control `α = 0`.
    pub include_rest: bool,
}

impl Default for ControlResolution {
    fn default() -> Self {
        ControlResolution { directions: 32, per_axis: 65, include_rest: false }
    }
}

/// Momentum box `Π [lo_i, hi_i]`.
pub type PBox = Vec<(f64, f64)>;

pub fn box_radius(b: &PBox) -> f64 {
    b.iter().map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2)).sum::<f64>().sqrt()
}

fn box_sup_axis(b: &PBox) -> f64 {
    b.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max)
}

/// Rewrites a closed form as a control Hamiltonian agreeing with it on `p_box`
/// up to the returned bound.
pub fn closed_to_control(
    spec: &ClosedFormSpec,
    p_box: &PBox,
    res: &ControlResolution,
) -> Result<(ControlHamiltonianSpec, f64)> {
    spec.validate()?;
    if p_box.len() != spec.dim || p_box.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return invalid("p_box must be a bounded box of dimension d");
    }
    let d = spec.dim;
    let a = spec.coefficient();
    let v = CostTerm::Potential(spec.v.clone());
    let (controls, drift, cost, err) = match spec.theta() {
        1 => {
            let cs = ControlSet::unit_directions(d, res.directions)?;
            let err = if d == 1 {
                0.0
            } else {
                a.upper_bound() * box_radius(p_box) * (1.0 - (PI / cs.len() as f64).cos())
            };
            (cs, vec![DriftTerm::Scaled(a)], vec![v], err)
        }
        _ => {
            let pmax = box_sup_axis(p_box);
            let radius = (2.0 * a.upper_bound() * pmax).max(1e-12);
            let cs = ControlSet::box_grid(d, res.per_axis, radius)?;
            let step = 2.0 * radius / (res.per_axis - 1) as f64;
            let err = d as f64 * step * step / (16.0 * a.lower_bound());
            (cs, vec![DriftTerm::Scaled(TrigSum::constant(1.0))], vec![v, CostTerm::Kinetic(a)], err)
        }
    };
    let controls = if res.include_rest { controls.with_rest() } else { controls };
    let c = ControlHamiltonianSpec { dim: d, num_scales: spec.num_scales, drift, cost, controls };
    c.validate()?;
    Ok((c, err))
}

/// Artificial-viscosity coefficients of the Lax–Friedrichs flux and the box
/// on which they are valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericalHamiltonianParams {
    pub sigma: Vec<f64>,
    pub p_box: PBox,
}

/// Safety factor applied to the probed `|∂H/∂pᵢ|`.
pub const SIGMA_SAFETY: f64 = 1.2;

/// Probes `|∂H/∂pᵢ|` by central differences over the sample points and a
/// lattice of momenta in `p_box`, then applies the safety factor.
pub fn estimate_dissipation(
    spec: &HamiltonianSpec,
    x: &[f64],
    y_samples: &[Vec<f64>],
    p_box: &PBox,
) -> Result<NumericalHamiltonianParams> {
    let d = spec.dim();
    if p_box.len() != d || p_box.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return invalid("p_box must be a bounded box of dimension d");
    }
    if y_samples.is_empty() {
        return invalid("need at least one fast-variable sample");
    }
    let per = 5usize;
    let count = per.pow(d as u32);
    let mut probes = Vec::with_capacity(count);
    for mut k in 0..count {
        let mut p = vec![0.0; d];
        for i in (0..d).rev() {
            let j = k % per;
            k /= per;
            let (lo, hi) = p_box[i];
            p[i] = lo + (hi - lo) * j as f64 / (per - 1) as f64;
        }
        probes.push(p);
    }
    let width = p_box.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max).max(1.0);
    let delta = 1e-5 * width;
    let mut sigma = vec![0.0f64; d];
    let mut q = vec![0.0; d];
    for ys in y_samples {
        for p in &probes {
            for i in 0..d {
                q.copy_from_slice(p);
                q[i] = p[i] + delta;
                let hp = eval_hamiltonian(spec, x, ys, &q)?;
                q[i] = p[i] - delta;
                let hm = eval_hamiltonian(spec, x, ys, &q)?;
                sigma[i] = sigma[i].max(((hp - hm) / (2.0 * delta)).abs());
            }
        }
    }
    for s in &mut sigma {
        *s = (*s * SIGMA_SAFETY).max(1e-12);
    }
    Ok(NumericalHamiltonianParams { sigma, p_box: p_box.clone() })
}

/// `H(x, ys, (p⁻+p⁺)/2) − Σ σᵢ (p⁺ᵢ − p⁻ᵢ)/2`.
pub fn lf_numerical_hamiltonian(
    spec: &HamiltonianSpec,
    params: &NumericalHamiltonianParams,
    x: &[f64],
    ys: &[f64],
    p_minus: &[f64],
    p_plus: &[f64],
) -> Result<f64> {
    let d = spec.dim();
    if p_minus.len() != d || p_plus.len() != d || params.sigma.len() != d {
        return invalid("dimension mismatch in numerical Hamiltonian");
    }
    for i in 0..d {
        let (lo, hi) = params.p_box[i];
        for v in [p_minus[i], p_plus[i]] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::OutOfValidity(format!("p[{i}] = {v} outside [{lo}, {hi}]")));
            }
        }
    }
    let mid: Vec<f64> = p_minus.iter().zip(p_plus).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut h = eval_hamiltonian(spec, x, ys, &mid)?;
    for i in 0..d {
        h -= params.sigma[i] * (p_plus[i] - p_minus[i]) * 0.5;
    }
    Ok(h)
}

/// One periodic piece of a quasi-periodic control Hamiltonian. Terms refer to
/// scale 0 and are 1-periodic in the local coordinate `y ⊙ (1/T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiControlComponent {
    pub periods: Vec<f64>,
    pub drift: Vec<DriftTerm>,
    pub cost: Vec<CostTerm>,
}

/// `F(x, y, p) = sup_α {−⟨Σ bⁿ, p⟩ − Σ gⁿ}` with `(bⁿ, gⁿ)` of period `Tⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiPeriodicSpec {
    pub dim: usize,
    pub controls: ControlSet,
    pub components: Vec<QuasiControlComponent>,
}

impl QuasiPeriodicSpec {
    /// Drift and cost of `F` at the physical point `y`, accumulated in the
    /// same order as the lifted Hamiltonian.
    pub fn drift_cost(&self, x: &[f64], y: &[f64], alpha: &[f64], b: &mut [f64]) -> f64 {
        let d = self.dim;
        let lifted = self.lift_unchecked();
        let mut ys = vec![0.0; d * self.components.len()];
        for (n, c) in self.components.iter().enumerate() {
            for i in 0..d {
                ys[n * d + i] = y[i] * (1.0 / c.periods[i]);
            }
        }
        lifted.drift_cost(x, &ys, alpha, b)
    }

    /// Drift and cost of component `n` alone at the physical point `y`.
    pub fn component_drift_cost(&self, n: usize, x: &[f64], y: &[f64], alpha: &[f64], b: &mut [f64]) -> f64 {
        let c = &self.components[n];
        let d = self.dim;
        let local: Vec<f64> = (0..d).map(|i| y[i] * (1.0 / c.periods[i])).collect();
        let single = ControlHamiltonianSpec {
            dim: d,
            num_scales: 1,
            drift: c.drift.clone(),
            cost: c.cost.clone(),
            controls: self.controls.clone(),
        };
        single.drift_cost(x, &local, alpha, b)
    }

    fn lift_unchecked(&self) -> ControlHamiltonianSpec {
        let mut drift = Vec::new();
        let mut cost = Vec::new();
        for (n, c) in self.components.iter().enumerate() {
            drift.extend(c.drift.iter().map(|t| remap_drift(t, n)));
            cost.extend(c.cost.iter().map(|t| remap_cost(t, n)));
        }
        ControlHamiltonianSpec {
            dim: self.dim,
            num_scales: self.components.len(),
            drift,
            cost,
            controls: self.controls.clone(),
        }
    }
}

fn remap_drift(t: &DriftTerm, n: usize) -> DriftTerm {
    match t {
        DriftTerm::Scaled(c) => DriftTerm::Scaled(c.remap_scale(n)),
        DriftTerm::Field(fs) => DriftTerm::Field(fs.iter().map(|f| f.remap_scale(n)).collect()),
    }
}

fn remap_cost(t: &CostTerm, n: usize) -> CostTerm {
    match t {
        CostTerm::Potential(PotentialSpec::Periodic(f)) => CostTerm::Potential(PotentialSpec::Periodic(f.remap_scale(n))),
        CostTerm::Potential(other) => CostTerm::Potential(other.clone()),
        CostTerm::Kinetic(a) => CostTerm::Kinetic(a.remap_scale(n)),
    }
}

fn check_periods(periods: &[Vec<f64>], d: usize) -> Result<()> {
    if periods.is_empty() {
        return invalid("quasi-periodic spec has no components");
    }
    for (n, t) in periods.iter().enumerate() {
        if t.len() != d {
            return invalid(format!("component {n} needs {d} periods"));
        }
        if let Some(bad) = t.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return invalid(format!("component {n} has non-positive period {bad}"));
        }
    }
    if periods[0].iter().any(|v| *v != 1.0) {
        return invalid("first component must have unit periods (normalize first)");
    }
    Ok(())
}

fn scale_system_from_periods(periods: &[Vec<f64>], d: usize) -> Result<ScaleSystem> {
    let gamma = periods
        .iter()
        .map(|t| t.iter().map(|v| Ratio::from_f64_guess(1.0 / v)).collect())
        .collect();
    ScaleSystem::new(d, gamma)
}

/// Lifts a quasi-periodic control Hamiltonian to the product torus. The
/// returned scale system has `Γⁿ = diag(1/Tⁿ)`, so that evaluating the lift at
/// `(Γ¹y, …, Γᴺy)` reproduces `F(y)` bit for bit.
pub fn lift_quasi_periodic(f: &QuasiPeriodicSpec) -> Result<(ControlHamiltonianSpec, ScaleSystem)> {
    let periods: Vec<Vec<f64>> = f.components.iter().map(|c| c.periods.clone()).collect();
    check_periods(&periods, f.dim)?;
    for c in &f.components {
        let single = ControlHamiltonianSpec {
            dim: f.dim,
            num_scales: 1,
            drift: c.drift.clone(),
            cost: c.cost.clone(),
            controls: f.controls.clone(),
        };
        single.validate()?;
        for t in &c.cost {
            if let CostTerm::Potential(v) = t {
                if !v.is_torus_periodic() {
                    return invalid("quasi-periodic components must be periodic trig sums");
                }
            }
        }
    }
    let h = f.lift_unchecked();
    h.validate()?;
    Ok((h, scale_system_from_periods(&periods, f.dim)?))
}

/// Lifts a closed form whose potential is quasi-periodic to a closed form on
/// the product torus, with the same orientation as [`lift_quasi_periodic`].
pub fn lift_closed_form(spec: &ClosedFormSpec) -> Result<(ClosedFormSpec, ScaleSystem)> {
    let comps: &[QuasiComponent] = match &spec.v {
        PotentialSpec::QuasiPeriodic(c) => c,
        _ => return invalid("closed-form lift needs a quasi-periodic potential"),
    };
    if spec.num_scales != 1 || !spec.a.terms.is_empty() {
        return invalid("closed-form lift needs a single-scale spec with constant coefficient");
    }
    let periods: Vec<Vec<f64>> = comps.iter().map(|c| c.periods.clone()).collect();
    check_periods(&periods, spec.dim)?;
    let mut terms = Vec::new();
    let mut constant = 0.0;
    for (n, c) in comps.iter().enumerate() {
        let r = c.field.remap_scale(n);
        constant += r.constant;
        terms.extend(r.terms);
    }
    let v = PotentialSpec::Periodic(TrigSum { constant, terms });
    let lifted = ClosedFormSpec::new(spec.dim, comps.len(), spec.family, spec.a.clone(), v)?;
    Ok((lifted, scale_system_from_periods(&periods, spec.dim)?))
}

/// Largest `|φ(y + eᵢ) − φ(y)|` over random samples, for every drift/cost
/// component and control; zero up to rounding for a periodic spec.
pub fn periodicity_defect(spec: &ControlHamiltonianSpec, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim;
    let nd = d * spec.num_scales;
    let mut worst = 0.0f64;
    let mut b0 = [0.0; MAX_DIM];
    let mut b1 = [0.0; MAX_DIM];
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..nd).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = &spec.controls.samples[rng.gen_range(0..spec.controls.len())];
        let g0 = spec.drift_cost(&x, &ys, a, &mut b0);
        for k in 0..nd {
            let mut ys1 = ys.clone();
            ys1[k] += 1.0;
            let g1 = spec.drift_cost(&x, &ys1, a, &mut b1);
            worst = worst.max((g1 - g0).abs());
            for i in 0..d {
                worst = worst.max((b1[i] - b0[i]).abs());
            }
        }
    }
    worst
}

/// Largest ratio `|φ(y) − φ(y′)| / (L·|y − y′|)` over random pairs; ≤ 1 when
/// the Lipschitz bound holds.
pub fn lipschitz_ratio(spec: &ControlHamiltonianSpec, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim;
    let nd = d * spec.num_scales;
    let mut worst = 0.0f64;
    let mut b0 = [0.0; MAX_DIM];
    let mut b1 = [0.0; MAX_DIM];
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..nd).map(|_| rng.gen_range(0.0..1.0)).collect();
        let yp: Vec<f64> = ys.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        let a = &spec.controls.samples[rng.gen_range(0..spec.controls.len())];
        let dist = ys.iter().zip(&yp).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let g0 = spec.drift_cost(&x, &ys, a, &mut b0);
        let g1 = spec.drift_cost(&x, &yp, a, &mut b1);
        let l = spec.lipschitz(a).max(1e-300);
        worst = worst.max((g1 - g0).abs() / (l * dist));
        for i in 0..d {
            worst = worst.max((b1[i] - b0[i]).abs() / (l * dist));
        }
    }
    worst
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigTerm;
    use proptest::prelude::*;

    fn v_sin() -> PotentialSpec {
        PotentialSpec::Periodic(TrigSum::constant(2.0).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)))
    }

    fn eikonal_1d() -> ClosedFormSpec {
        ClosedFormSpec::new(1, 1, Family::Eikonal, TrigSum::constant(1.0), v_sin()).unwrap()
    }

    #[test]
    fn closed_quadratic_zero_potential() {
        let s = HamiltonianSpec::Closed(
            ClosedFormSpec::new(2, 1, Family::Plain(2), TrigSum::constant(1.0), PotentialSpec::constant(0.0)).unwrap(),
        );
        assert_eq!(eval_hamiltonian(&s, &[0.0, 0.0], &[0.1, 0.2], &[3.0, 4.0]).unwrap(), 25.0);
    }

    #[test]
    fn control_eikonal_1d() {
        let c = ControlHamiltonianSpec {
            dim: 1,
            num_scales: 1,
            drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))],
            cost: vec![CostTerm::Potential(v_sin())],
            controls: ControlSet::enumerated(vec![vec![-1.0], vec![1.0]]).unwrap(),
        };
        let h = eval_hamiltonian(&HamiltonianSpec::Control(c), &[0.0], &[0.25], &[5.0]).unwrap();
        assert!((h - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eight_directions_bracket_norm() {
        let closed = ClosedFormSpec::new(2, 1, Family::Eikonal, TrigSum::constant(1.0), PotentialSpec::constant(0.5)).unwrap();
        let res = ControlResolution { directions: 8, ..Default::default() };
        let (c, err) = closed_to_control(&closed, &vec![(-1.0, 1.0); 2], &res).unwrap();
        let h = c.eval(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]);
        // Enumerated sup over the eight samples.
        let want = (0..8)
            .map(|k| -(2.0 * PI * k as f64 / 8.0).cos() - 0.5)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(h, want);
        assert!(h >= (PI / 8.0).cos() - 0.5 - 1e-12 && h <= 0.5 + 1e-12);
        assert!(err >= 1.0 - (PI / 8.0).cos() - 1e-12);
    }

    #[test]
    fn eikonal_rewrite_is_exact_in_1d() {
        let s = eikonal_1d();
        let (c, err) = closed_to_control(&s, &vec![(-4.0, 4.0)], &ControlResolution::default()).unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(c.controls.samples, vec![vec![-1.0], vec![1.0]]);
        for k in 0..50 {
            let p = -4.0 + 8.0 * k as f64 / 49.0;
            let y = k as f64 * 0.037;
            assert!((c.eval(&[0.0], &[y], &[p]) - s.eval(&[0.0], &[y], &[p])).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_rewrite_error_bound() {
        let s = ClosedFormSpec::new(1, 1, Family::Quadratic, TrigSum::constant(1.0), PotentialSpec::constant(0.0)).unwrap();
        let res = ControlResolution { per_axis: 9, ..Default::default() };
        let (c, err) = closed_to_control(&s, &vec![(-2.0, 2.0)], &res).unwrap();
        let step = 8.0 / 8.0;
        assert!(err <= step * step / 4.0);
        // Dense enumeration of the continuum maximum.
        let mut worst = 0.0f64;
        for k in 0..=400 {
            let p = -2.0 + 4.0 * k as f64 / 400.0;
            let dense = (0..=8000)
                .map(|j| {
                    let a = -4.0 + 8.0 * j as f64 / 8000.0;
                    -a * p - a * a / 4.0
                })
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(dense - c.eval(&[0.0], &[0.0], &[p]));
        }
        assert!(worst <= err + 1e-9, "worst {worst} bound {err}");
        assert!((c.eval(&[0.0], &[0.0], &[0.0])).abs() < 1e-15);
    }

    #[test]
    fn unbounded_box_rejected() {
        let s = eikonal_1d();
        assert!(closed_to_control(&s, &vec![(f64::NEG_INFINITY, 1.0)], &Default::default()).is_err());
    }

    #[test]
    fn lf_examples() {
        let s = HamiltonianSpec::Closed(
            ClosedFormSpec::new(1, 1, Family::Plain(1), TrigSum::constant(1.0), PotentialSpec::constant(0.0)).unwrap(),
        );
        let params = NumericalHamiltonianParams { sigma: vec![1.0], p_box: vec![(-3.0, 3.0)] };
        assert_eq!(lf_numerical_hamiltonian(&s, &params, &[0.0], &[0.0], &[0.0], &[2.0]).unwrap(), 0.0);
        assert_eq!(lf_numerical_hamiltonian(&s, &params, &[0.0], &[0.0], &[1.5], &[1.5]).unwrap(), 1.5);
        assert!(matches!(
            lf_numerical_hamiltonian(&s, &params, &[0.0], &[0.0], &[0.0], &[4.0]),
            Err(Error::OutOfValidity(_))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let s = HamiltonianSpec::Closed(eikonal_1d());
        assert!(matches!(eval_hamiltonian(&s, &[0.0], &[0.0, 0.0], &[1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lift_identity_and_sqrt2() {
        let s2 = std::f64::consts::SQRT_2;
        let sinus = |amp: f64| TrigSum::constant(0.0).with_term(TrigTerm::y(0, 0, 1.0, amp, 0.0));
        let q = QuasiPeriodicSpec {
            dim: 1,
            controls: ControlSet::enumerated(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap(),
            components: vec![
                QuasiControlComponent {
                    periods: vec![1.0],
                    drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))],
                    cost: vec![CostTerm::Potential(PotentialSpec::Periodic(sinus(1.0)))],
                },
                QuasiControlComponent {
                    periods: vec![s2],
                    drift: vec![],
                    cost: vec![CostTerm::Potential(PotentialSpec::Periodic(sinus(1.0)))],
                },
            ],
        };
        let (h, sc) = lift_quasi_periodic(&q).unwrap();
        assert_eq!(h.num_scales, 2);
        assert_eq!(sc.gamma_f64(1, 0), 1.0 / s2);
        let mut b = [0.0; MAX_DIM];
        let mut bq = [0.0; MAX_DIM];
        for y in [0.0, 0.3, 1.7] {
            let ys = [y * (1.0 / 1.0), y * (1.0 / s2)];
            for a in &q.controls.samples {
                let g = h.drift_cost(&[0.0], &ys, a, &mut b);
                let gq = q.drift_cost(&[0.0], &[y], a, &mut bq);
                assert_eq!(g, gq);
                assert_eq!(b[0], bq[0]);
                let sum = q.component_drift_cost(0, &[0.0], &[y], a, &mut bq)
                    + q.component_drift_cost(1, &[0.0], &[y], a, &mut bq);
                assert!((g - sum).abs() < 1e-15);
                let want = (2.0 * PI * y).sin() + (2.0 * PI * y / s2).sin();
                assert!((g - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lift_single_component_is_identity() {
        let q = QuasiPeriodicSpec {
            dim: 1,
            controls: ControlSet::enumerated(vec![vec![-1.0], vec![1.0]]).unwrap(),
            components: vec![QuasiControlComponent {
                periods: vec![1.0],
                drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))],
                cost: vec![CostTerm::Potential(v_sin())],
            }],
        };
        let (h, sc) = lift_quasi_periodic(&q).unwrap();
        assert_eq!(sc.n, 1);
        assert_eq!(h.cost, q.components[0].cost);
        assert_eq!(h.drift, q.components[0].drift);
    }

    #[test]
    fn lift_resonant_and_bad_period() {
        let mk = |t: f64| QuasiPeriodicSpec {
            dim: 1,
            controls: ControlSet::enumerated(vec![vec![-1.0], vec![1.0]]).unwrap(),
            components: vec![
                QuasiControlComponent { periods: vec![1.0], drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))], cost: vec![] },
                QuasiControlComponent { periods: vec![t], drift: vec![], cost: vec![CostTerm::Potential(v_sin())] },
            ],
        };
        let (_, sc) = lift_quasi_periodic(&mk(2.0)).unwrap();
        assert_eq!(sc.gamma[1][0], Ratio::Exact(num_rational::Rational64::new(1, 2)));
        let rep = crate::scales::check_condition_a(&sc, 10_000, 1e-8, crate::scales::DEFAULT_BUDGET).unwrap();
        assert!(rep.axes[0].resonant);
        assert!(matches!(lift_quasi_periodic(&mk(0.0)), Err(Error::InvalidInput(_))));
        assert!(matches!(lift_quasi_periodic(&mk(-1.0)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lifted_spec_is_periodic_and_lipschitz() {
        let s = eikonal_1d();
        let (c, _) = closed_to_control(&s, &vec![(-2.0, 2.0)], &Default::default()).unwrap();
        assert!(periodicity_defect(&c, 200, 1) < 1e-12);
        assert!(lipschitz_ratio(&c, 500, 2) <= 1.0 + 1e-9);
    }

    proptest! {
        #[test]
        fn lf_is_monotone(y in 0.0f64..1.0, pm in -3.0f64..3.0, pp in -3.0f64..3.0, bump in 0.0f64..1.0) {
            let spec = HamiltonianSpec::Closed(eikonal_1d());
            let ys: Vec<Vec<f64>> = (0..16).map(|k| vec![k as f64 / 16.0]).collect();
            let params = estimate_dissipation(&spec, &[0.0], &ys, &vec![(-4.0, 4.0)]).unwrap();
            let base = lf_numerical_hamiltonian(&spec, &params, &[0.0], &[y], &[pm], &[pp]).unwrap();
            let up = lf_numerical_hamiltonian(&spec, &params, &[0.0], &[y], &[pm], &[pp + bump]).unwrap();
            let dn = lf_numerical_hamiltonian(&spec, &params, &[0.0], &[y], &[pm + bump], &[pp]).unwrap();
            prop_assert!(up <= base + 1e-12);
            prop_assert!(dn >= base - 1e-12);
        }

        #[test]
        fn coercivity_growth(p in 1.0f64..20.0, y in 0.0f64..1.0, quad in proptest::bool::ANY) {
            let fam = if quad { Family::Quadratic } else { Family::Eikonal };
            let a = TrigSum::constant(1.5).with_term(TrigTerm::y(0, 0, 2.0, 0.5, 0.1));
            let s = ClosedFormSpec::new(1, 1, fam, a, v_sin()).unwrap();
            let th = s.theta() as i32;
            let a0 = s.a0();
            let h1 = s.eval(&[0.0], &[y], &[p]);
            let h2 = s.eval(&[0.0], &[y], &[2.0 * p]);
            prop_assert!(h2 >= h1 + a0 * (2f64.powi(th) - 1.0) * p.powi(th) - 1e-9);
            prop_assert!(h1 >= a0 * p.powi(th) - s.v.upper_bound() - 1e-12);
        }

        #[test]
        fn torus_periodicity(y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let v = PotentialSpec::Periodic(
                TrigSum::constant(2.0)
                    .with_term(TrigTerm::y(0, 0, 1.0, 0.5, 0.0))
                    .with_term(TrigTerm::y(1, 0, 2.0, 0.5, 0.7)),
            );
            let base = v.eval(&[], &[y, z], 1);
            prop_assert!((v.eval(&[], &[y + 1.0, z], 1) - base).abs() < 1e-12);
            prop_assert!((v.eval(&[], &[y, z + 1.0], 1) - base).abs() < 1e-12);
        }
    }
}
