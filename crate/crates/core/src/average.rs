//! Trajectory oracles: discounted payoffs of explicit control policies and
//! ray averages of potentials.

use crate::cell::CellSolution;
use crate::error::{invalid, Result};
use crate::field::PotentialSpec;
use crate::hamiltonians::{dot, norm, ControlHamiltonianSpec, MAX_DIM};
use crate::scales::ScaleSystem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest distance a trajectory may move in one step under constant
/// controls.
pub const MAX_STEP_LENGTH: f64 = 0.05;
/// Largest `λ·dt`.
pub const MAX_DISCOUNT_STEP: f64 = 0.1;
const MAX_STORED_STATES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub start_time: f64,
    /// Index into the control sample list.
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRun {
    pub dt: f64,
    pub horizon: f64,
    /// Evenly subsampled states `(t, Y(t))`.
    pub states: Vec<(f64, Vec<f64>)>,
    pub control_sequence: Vec<ControlSegment>,
    /// `λ∫₀^∞ e^{−λt}(g + ⟨b,p⟩)dt`, with the integrand frozen after `T`.
    pub discounted_payoff: f64,
    /// `(1/T)∫₀ᵀ (g + ⟨b,p⟩)dt`.
    pub running_average: f64,
}

/// Where the controls come from.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Every sample of the control set, held constant.
    ConstantControls,
    /// At each step the control maximizing the upwind cell Hamiltonian of
    /// the given torus solution at the current state.
    Greedy(&'a CellSolution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedValue {
    /// Smallest discounted payoff found: an upper bound on `λw(y₀)`.
    pub value: f64,
    pub best: TrajectoryRun,
    pub runs: usize,
}

/// Discounted payoff of explicit policies for the embedded dynamics
/// `d/dt yⁿ = Γⁿ b(x, y, α)` started at `y₀` (flattened `N·d` coordinates).
#[allow(clippy::too_many_arguments)]
pub fn discounted_value(
    ham: &ControlHamiltonianSpec,
    scales: &ScaleSystem,
    x: &[f64],
    p: &[f64],
    y0: &[f64],
    lambda: f64,
    policy: Policy<'_>,
    dt: f64,
    horizon: f64,
) -> Result<DiscountedValue> {
    ham.validate()?;
    let d = ham.dim;
    let nd = d * ham.num_scales;
    if x.len() != d || p.len() != d || y0.len() != nd || scales.d != d || scales.n != ham.num_scales {
        return invalid("trajectory oracle dimensions do not match");
    }
    if !(lambda > 0.0) || !(horizon > 0.0) || lambda * horizon < 5.0 {
        return invalid(format!("need λ·T ≥ 5, got λ = {lambda}, T = {horizon}"));
    }
    if !(dt > 0.0) || lambda * dt > MAX_DISCOUNT_STEP {
        return invalid(format!("unstable time step dt = {dt}: need 0 < λ·dt ≤ {MAX_DISCOUNT_STEP}"));
    }
    let gamma = scales.gamma_flat();
    let speed = ham.sup_drift() * gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let limit = match policy {
        Policy::ConstantControls => MAX_STEP_LENGTH,
        Policy::Greedy(sol) => {
            if sol.dims.len() != nd {
                return invalid("cell solution does not live on this product torus");
            }
            sol.dims.iter().map(|&n| 1.0 / n as f64).fold(f64::INFINITY, f64::min)
        }
    };
    if dt * speed > limit {
        return invalid(format!("unstable time step dt = {dt}: a step moves {} > {limit}", dt * speed));
    }
    let steps = (horizon / dt).ceil() as usize;
    let sim = Sim { ham, gamma: &gamma, x, p, lambda, dt, steps };
    let runs: Vec<TrajectoryRun> = match policy {
        Policy::ConstantControls => (0..ham.controls.len()).into_par_iter().map(|c| sim.run(y0, |_| c)).collect(),
        Policy::Greedy(sol) => vec![sim.run(y0, |y| greedy_control(ham, &gamma, x, p, sol, y))],
    };
    let n = runs.len();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.discounted_payoff < a.discounted_payoff { b } else { a })
        .expect("non-empty control set");
    Ok(DiscountedValue { value: best.discounted_payoff, best, runs: n })
}

struct Sim<'a> {
    ham: &'a ControlHamiltonianSpec,
    gamma: &'a [f64],
    x: &'a [f64],
    p: &'a [f64],
    lambda: f64,
    dt: f64,
    steps: usize,
}

impl Sim<'_> {
    fn run(&self, y0: &[f64], mut pick: impl FnMut(&[f64]) -> usize) -> TrajectoryRun {
        let d = self.ham.dim;
        let mut y = y0.to_vec();
        let mut b = [0.0; MAX_DIM];
        let decay = (-self.lambda * self.dt).exp();
        let mut disc = 1.0;
        let mut payoff = 0.0;
        let mut total = 0.0;
        let mut segments: Vec<ControlSegment> = Vec::new();
        let stride = (self.steps / MAX_STORED_STATES).max(1);
        let mut states = Vec::new();
        let mut last = 0.0;
        for k in 0..=self.steps {
            let t = k as f64 * self.dt;
            let c = pick(&y);
            if segments.last().is_none_or(|s| s.control != c) {
                segments.push(ControlSegment { start_time: t, control: c });
            }
            let g = self.ham.drift_cost(self.x, &y, &self.ham.controls.samples[c], &mut b);
            let f = g + dot(&b[..d], self.p);
            if k % stride == 0 || k == self.steps {
                states.push((t, y.clone()));
            }
            if k == self.steps {
                last = f;
                break;
            }
            payoff += disc * (1.0 - decay) * f;
            total += f * self.dt;
            disc *= decay;
            for (kk, yk) in y.iter_mut().enumerate() {
                *yk += self.dt * self.gamma[kk] * b[kk % d];
            }
        }
        let horizon = self.steps as f64 * self.dt;
        TrajectoryRun {
            dt: self.dt,
            horizon,
            states,
            control_sequence: segments,
            discounted_payoff: payoff + disc * last,
            running_average: total / horizon,
        }
    }
}

/// Control maximizing `−⟨b,p⟩ − g − Σ_k a_k D_k w` at an off-grid point,
/// with `a_k = γ_k b_{q_k}` and one-sided differences of the interpolant
/// taken in the upwind direction. Ties go to the first control.
fn greedy_control(ham: &ControlHamiltonianSpec, gamma: &[f64], x: &[f64], p: &[f64], sol: &CellSolution, y: &[f64]) -> usize {
    let d = ham.dim;
    let kk = y.len();
    let w0 = sol.interpolate(y);
    let mut fwd = vec![0.0; kk];
    let mut bwd = vec![0.0; kk];
    let mut z = y.to_vec();
    for k in 0..kk {
        let h = 1.0 / sol.dims[k] as f64;
        z[k] = y[k] + h;
        fwd[k] = (sol.interpolate(&z) - w0) / h;
        z[k] = y[k] - h;
        bwd[k] = (w0 - sol.interpolate(&z)) / h;
        z[k] = y[k];
    }
    let mut b = [0.0; MAX_DIM];
    let mut best = (0usize, f64::NEG_INFINITY);
    for (c, al) in ham.controls.samples.iter().enumerate() {
        let g = ham.drift_cost(x, y, al, &mut b);
        let mut s = -dot(&b[..d], p) - g;
        for k in 0..kk {
            let a = gamma[k] * b[k % d];
            s -= a * if a > 0.0 { fwd[k] } else { bwd[k] };
        }
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// `(1/T)∫₀ᵀ V(x, y₀ + tz)dt` by the composite midpoint rule with step ≤ `dt`.
pub fn ray_average(v: &PotentialSpec, x: &[f64], y0: &[f64], z: &[f64], horizon: f64, dt: f64) -> Result<f64> {
    if y0.len() != z.len() || y0.is_empty() || y0.len() > MAX_DIM {
        return invalid("ray start and direction dimensions differ");
    }
    if (norm(z) - 1.0).abs() > 1e-9 {
        return invalid(format!("ray direction must be a unit vector, |z| = {}", norm(z)));
    }
    if !(horizon > 0.0) || !(dt > 0.0) {
        return invalid("horizon and step must be positive");
    }
    let n = (horizon / dt).ceil().max(1.0) as usize;
    let step = horizon / n as f64;
    let mut y = vec![0.0; y0.len()];
    let mut acc = 0.0;
    for k in 0..n {
        let t = (k as f64 + 0.5) * step;
        for i in 0..y.len() {
            y[i] = y0[i] + t * z[i];
        }
        acc += v.eval(x, &y, y.len());
    }
    Ok(acc / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySample {
    pub y0: Vec<f64>,
    pub z: Vec<f64>,
    /// One average per horizon.
    pub averages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayAverageReport {
    pub horizons: Vec<f64>,
    pub samples: Vec<RaySample>,
    /// Common limit estimate at the largest horizon (midrange of the sample).
    pub c: f64,
    /// `max |average − c|` at the largest horizon.
    pub deviation: f64,
    pub deviation_by_horizon: Vec<f64>,
    pub p: Vec<f64>,
    /// Smallest constant with `c + ⟨p,z⟩ − c(x,p) ≤ 0` over the sampled `z`.
    pub c_p: f64,
    /// `max over samples of (average + ⟨p,z⟩) − c(x,p)`; positive values
    /// measure how far the sample is from satisfying the inequality.
    pub margin: f64,
    /// `−min_z (c + ⟨p,z⟩)`: the value of the best constant unit control.
    pub constant_control_value: f64,
}

/// Estimates the direction-uniform ray-average limit of `V` and evaluates
/// the cancellation inequality `c(x,α) + ⟨p,α⟩ − c(x,p) ≤ 0` over the
/// sampled unit directions.
pub fn b1_certificate(
    v: &PotentialSpec,
    x: &[f64],
    samples: &[(Vec<f64>, Vec<f64>)],
    horizons: &[f64],
    dt: f64,
    p: &[f64],
) -> Result<RayAverageReport> {
    if samples.is_empty() || horizons.is_empty() {
        return invalid("certificate needs at least one ray and one horizon");
    }
    if samples.iter().any(|(y, z)| y.len() != p.len() || z.len() != p.len()) {
        return invalid("ray samples and momentum dimensions differ");
    }
    let rays: Vec<RaySample> = samples
        .par_iter()
        .map(|(y0, z)| {
            let averages = horizons.iter().map(|&t| ray_average(v, x, y0, z, t, dt)).collect::<Result<Vec<_>>>()?;
            Ok(RaySample { y0: y0.clone(), z: z.clone(), averages })
        })
        .collect::<Result<_>>()?;
    let spread = |k: usize| {
        let lo = rays.iter().map(|r| r.averages[k]).fold(f64::INFINITY, f64::min);
        let hi = rays.iter().map(|r| r.averages[k]).fold(f64::NEG_INFINITY, f64::max);
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    };
    let last = horizons.len() - 1;
    let deviation_by_horizon: Vec<f64> = (0..horizons.len()).map(|k| spread(k).1).collect();
    let (c, deviation) = spread(last);
    let c_p = rays.iter().map(|r| c + dot(p, &r.z)).fold(f64::NEG_INFINITY, f64::max);
    let margin = rays.iter().map(|r| r.averages[last] + dot(p, &r.z) - c_p).fold(f64::NEG_INFINITY, f64::max);
    let best = rays.iter().map(|r| c + dot(p, &r.z)).fold(f64::INFINITY, f64::min);
    Ok(RayAverageReport {
        horizons: horizons.to_vec(),
        samples: rays,
        c,
        deviation,
        deviation_by_horizon,
        p: p.to_vec(),
        c_p,
        margin,
        constant_control_value: -best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{TrigSum, TrigTerm};
    use crate::hamiltonians::{ControlSet, CostTerm, DriftTerm};
    use proptest::prelude::*;

    fn eikonal_control(v: PotentialSpec, controls: Vec<Vec<f64>>) -> ControlHamiltonianSpec {
        ControlHamiltonianSpec {
            dim: 1,
            num_scales: 1,
            drift: vec![DriftTerm::Scaled(TrigSum::constant(1.0))],
            cost: vec![CostTerm::Potential(v)],
            controls: ControlSet::enumerated(controls).unwrap(),
        }
    }

    fn v_sin() -> PotentialSpec {
        PotentialSpec::Periodic(TrigSum::constant(2.0).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)))
    }

    #[test]
    fn constant_control_optimum_is_minus_abs_p() {
        let h = eikonal_control(PotentialSpec::constant(0.0), vec![vec![-1.0], vec![1.0]]);
        let r = discounted_value(&h, &ScaleSystem::single(1), &[0.0], &[1.0], &[0.0], 0.1, Policy::ConstantControls, 0.01, 100.0).unwrap();
        assert!((r.value + 1.0).abs() < 1e-12);
        assert_eq!(r.best.control_sequence[0].control, 0);
    }

    #[test]
    fn constant_potential_gives_c0() {
        let h = eikonal_control(PotentialSpec::constant(1.7), vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let r = discounted_value(&h, &ScaleSystem::single(1), &[0.0], &[0.0], &[0.3], 0.05, Policy::ConstantControls, 0.01, 200.0).unwrap();
        assert!((r.value - 1.7).abs() < 1e-12);
    }

    #[test]
    fn resting_at_the_minimum() {
        let h = eikonal_control(v_sin(), vec![vec![0.0]]);
        let r = discounted_value(&h, &ScaleSystem::single(1), &[0.0], &[0.0], &[0.75], 0.01, Policy::ConstantControls, 0.01, 600.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_short_horizon_and_large_step() {
        let h = eikonal_control(v_sin(), vec![vec![1.0]]);
        let s = ScaleSystem::single(1);
        assert!(discounted_value(&h, &s, &[0.0], &[0.0], &[0.0], 0.01, Policy::ConstantControls, 0.01, 100.0).is_err());
        assert!(discounted_value(&h, &s, &[0.0], &[0.0], &[0.0], 0.01, Policy::ConstantControls, 0.2, 600.0).is_err());
    }

    #[test]
    fn ray_average_examples() {
        assert_eq!(ray_average(&PotentialSpec::constant(1.0), &[0.0], &[0.3], &[1.0], 7.0, 0.1).unwrap(), 1.0);
        let well = PotentialSpec::CompactDeformation { center: 0.0, outer: 1.0, radius: 1.0 };
        let a = ray_average(&well, &[0.0], &[0.0], &[1.0], 100.0, 0.01).unwrap();
        assert!((a - 0.995).abs() < 1e-12);
        let b = ray_average(&v_sin(), &[0.0], &[0.0], &[1.0], 1000.0, 0.01).unwrap();
        assert!((b - 2.0).abs() < 1e-3);
        assert!(ray_average(&v_sin(), &[0.0], &[0.0], &[0.5], 1.0, 0.1).is_err());
    }

    #[test]
    fn certificate_for_constant_and_well() {
        let s: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![0.0], vec![1.0]), (vec![0.5], vec![-1.0]), (vec![-3.0], vec![1.0])];
        let r = b1_certificate(&PotentialSpec::constant(0.4), &[0.0], &s, &[10.0], 0.01, &[0.0]).unwrap();
        assert!(r.deviation < 1e-12);
        assert!((r.c - 0.4).abs() < 1e-12);
        let well = PotentialSpec::CompactDeformation { center: 0.0, outer: 1.0, radius: 1.0 };
        let r = b1_certificate(&well, &[0.0], &s, &[100.0, 1000.0], 0.01, &[0.5]).unwrap();
        assert!((r.c - 1.0).abs() < 2e-3 && r.deviation <= 2.0 / 1000.0);
        assert!((r.constant_control_value - (0.5 - r.c)).abs() < 1e-12);
        assert!(r.margin <= r.deviation + 1e-12);
    }

    proptest! {
        #[test]
        fn ray_average_is_linear(a in -2.0..2.0f64, c1 in -1.0..1.0f64, c2 in -1.0..1.0f64, f in 1u32..4, y0 in -1.0..1.0f64) {
            let v1 = TrigSum::constant(c1).with_term(TrigTerm::y(0, 0, f as f64, 1.0, 0.3));
            let v2 = TrigSum::constant(c2).with_term(TrigTerm::y(0, 0, 1.0, 0.5, 0.0));
            let mut sum = TrigSum::constant(c1 + a * c2).with_term(TrigTerm::y(0, 0, f as f64, 1.0, 0.3));
            sum = sum.with_term(TrigTerm::y(0, 0, 1.0, 0.5 * a, 0.0));
            let r = |v: TrigSum| ray_average(&PotentialSpec::Periodic(v), &[0.0], &[y0], &[1.0], 13.0, 0.05).unwrap();
            prop_assert!((r(sum) - (r(v1) + a * r(v2))).abs() < 1e-10);
        }

        #[test]
        fn payoff_bounded_by_sup_g_and_drift(p in -3.0..3.0f64, y0 in 0.0..1.0f64) {
            let h = eikonal_control(v_sin(), vec![vec![-1.0], vec![0.0], vec![1.0]]);
            let r = discounted_value(&h, &ScaleSystem::single(1), &[0.0], &[p], &[y0], 0.5, Policy::ConstantControls, 0.01, 12.0).unwrap();
            let bound = h.sup_cost() + p.abs() * h.sup_drift();
            prop_assert!(r.value.abs() <= bound + 1e-12);
        }
    }
}
