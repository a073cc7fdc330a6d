//! Scalar fields over the slow variable `x` and the fast variables `y¹..yᴺ`.
//!
//! Fast variables are passed around as one flat slice of length `N·d`,
//! scale-major: component `i` of `yⁿ` lives at `ys[n * d + i]` (0-based `n`).

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Which variable a trigonometric term depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coord {
    X(usize),
    Y { scale: usize, axis: usize },
}

/// `amp · sin(2π · freq · coord + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coord: Coord,
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
}

impl TrigTerm {
    pub fn y(scale: usize, axis: usize, freq: f64, amp: f64, phase: f64) -> Self {
        TrigTerm { coord: Coord::Y { scale, axis }, freq, amp, phase }
    }
}

/// `constant + Σ terms`, summed in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrigSum {
    pub constant: f64,
    pub terms: Vec<TrigTerm>,
}

impl TrigSum {
    pub fn constant(c: f64) -> Self {
        TrigSum { constant: c, terms: Vec::new() }
    }

    pub fn with_term(mut self, t: TrigTerm) -> Self {
        self.terms.push(t);
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64], ys: &[f64], d: usize) -> f64 {
        let mut s = self.constant;
        for t in &self.terms {
            let c = match t.coord {
                Coord::X(i) => x[i],
                Coord::Y { scale, axis } => ys[scale * d + axis],
            };
            s += t.amp * (TAU * t.freq * c + t.phase).sin();
        }
        s
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.amp == 0.0)
    }

    /// Analytic bounds `constant ∓ Σ|amp|`.
    pub fn lower_bound(&self) -> f64 {
        self.constant - self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    pub fn upper_bound(&self) -> f64 {
        self.constant + self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    pub fn sup_abs(&self) -> f64 {
        self.lower_bound().abs().max(self.upper_bound().abs())
    }

    /// Lipschitz constant in the fast variables (Euclidean norm on `ys`).
    pub fn lipschitz_y(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| matches!(t.coord, Coord::Y { .. }))
            .map(|t| TAU * (t.freq * t.amp).abs())
            .sum()
    }

    /// True when every fast-variable term has an integer frequency, i.e. the
    /// field is 1-periodic in every `yⁿᵢ`.
    pub fn is_unit_periodic(&self) -> bool {
        self.terms.iter().all(|t| match t.coord {
            Coord::Y { .. } => t.freq.fract() == 0.0,
            Coord::X(_) => true,
        })
    }

    /// Largest scale index and axis index referenced by fast terms.
    pub fn max_y_index(&self) -> Option<(usize, usize)> {
        self.terms
            .iter()
            .filter_map(|t| match t.coord {
                Coord::Y { scale, axis } => Some((scale, axis)),
                _ => None,
            })
            .fold(None, |acc, (s, a)| match acc {
                None => Some((s, a)),
                Some((s0, a0)) => Some((s0.max(s), a0.max(a))),
            })
    }

    pub fn max_x_index(&self) -> Option<usize> {
        self.terms
            .iter()
            .filter_map(|t| match t.coord {
                Coord::X(i) => Some(i),
                _ => None,
            })
            .max()
    }

    /// Same field with every scale-0 fast coordinate moved to scale `n`.
    pub fn remap_scale(&self, n: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| match t.coord {
                Coord::Y { scale: 0, axis } => TrigTerm { coord: Coord::Y { scale: n, axis }, ..*t },
                _ => *t,
            })
            .collect();
        TrigSum { constant: self.constant, terms }
    }
}

/// One component of a quasi-periodic potential: a 1-periodic trig sum in the
/// local coordinate `y ⊙ (1/T)`, hence `T`-periodic in the physical `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiComponent {
    pub periods: Vec<f64>,
    pub field: TrigSum,
}

impl QuasiComponent {
    pub fn inv_periods(&self) -> Vec<f64> {
        self.periods.iter().map(|t| 1.0 / t).collect()
    }
}

/// The potential kinds used by the examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialSpec {
    /// 1-periodic in each fast coordinate.
    Periodic(TrigSum),
    /// `Σₙ Vⁿ(y)` with `Vⁿ` periodic of period `Tⁿ`; `y` is the physical fast
    /// variable (scale 0).
    QuasiPeriodic(Vec<QuasiComponent>),
    /// `center + (outer − center)·min(|y|/radius, 1)`: equal to `outer`
    /// outside the ball of radius `radius`.
    CompactDeformation { center: f64, outer: f64, radius: f64 },
}

impl PotentialSpec {
    pub fn constant(c: f64) -> Self {
        PotentialSpec::Periodic(TrigSum::constant(c))
    }

    /// Evaluates at `(x, ys)`. Non-periodic kinds read the physical fast
    /// variable from `ys[..d]`.
    #[inline]
    pub fn eval(&self, x: &[f64], ys: &[f64], d: usize) -> f64 {
        match self {
            PotentialSpec::Periodic(f) => f.eval(x, ys, d),
            PotentialSpec::QuasiPeriodic(comps) => {
                let mut local = [0.0f64; 8];
                let mut s = 0.0;
                for c in comps {
                    for i in 0..d {
                        local[i] = ys[i] * (1.0 / c.periods[i]);
                    }
                    s += c.field.eval(x, &local[..d], d);
                }
                s
            }
            PotentialSpec::CompactDeformation { center, outer, radius } => {
                let r = ys[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                center + (outer - center) * (r / radius).min(1.0)
            }
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            PotentialSpec::Periodic(f) => f.lower_bound(),
            PotentialSpec::QuasiPeriodic(c) => c.iter().map(|c| c.field.lower_bound()).sum(),
            PotentialSpec::CompactDeformation { center, outer, .. } => center.min(*outer),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            PotentialSpec::Periodic(f) => f.upper_bound(),
            PotentialSpec::QuasiPeriodic(c) => c.iter().map(|c| c.field.upper_bound()).sum(),
            PotentialSpec::CompactDeformation { center, outer, .. } => center.max(*outer),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.lower_bound().abs().max(self.upper_bound().abs())
    }

    pub fn lipschitz_y(&self) -> f64 {
        match self {
            PotentialSpec::Periodic(f) => f.lipschitz_y(),
            PotentialSpec::QuasiPeriodic(comps) => comps
                .iter()
                .map(|c| {
                    let inv = c.periods.iter().fold(0.0f64, |m, t| m.max(1.0 / t));
                    c.field.lipschitz_y() * inv
                })
                .sum(),
            PotentialSpec::CompactDeformation { center, outer, radius } => (outer - center).abs() / radius,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            PotentialSpec::Periodic(f) => f.is_constant(),
            PotentialSpec::QuasiPeriodic(c) => c.iter().all(|c| c.field.is_constant()),
            PotentialSpec::CompactDeformation { center, outer, .. } => center == outer,
        }
    }

    /// Only the periodic kind lives on a torus.
    pub fn is_torus_periodic(&self) -> bool {
        matches!(self, PotentialSpec::Periodic(f) if f.is_unit_periodic())
    }

    /// Radius outside which a compact deformation is constant.
    pub fn deformation_radius(&self) -> Option<f64> {
        match self {
            PotentialSpec::CompactDeformation { radius, .. } => Some(*radius),
            _ => None,
        }
    }

    pub(crate) fn validate(&self, d: usize, n_scales: usize, x_dim: usize) -> crate::Result<()> {
        let check = |f: &TrigSum, max_scale: usize| -> crate::Result<()> {
            if let Some((s, a)) = f.max_y_index() {
                if s >= max_scale || a >= d {
                    return crate::error::invalid(format!(
                        "potential term references y[{s}][{a}] outside {max_scale} scales × {d} axes"
                    ));
                }
            }
            if let Some(i) = f.max_x_index() {
                if i >= x_dim {
                    return crate::error::invalid(format!("potential term references x[{i}] with dim {x_dim}"));
                }
            }
            for t in &f.terms {
                if !(t.freq.is_finite() && t.amp.is_finite() && t.phase.is_finite()) {
                    return crate::error::invalid("non-finite trig term");
                }
            }
            Ok(())
        };
        match self {
            PotentialSpec::Periodic(f) => {
                check(f, n_scales)?;
                if !f.is_unit_periodic() {
                    return crate::error::invalid("periodic potential needs integer fast frequencies");
                }
            }
            PotentialSpec::QuasiPeriodic(comps) => {
                if comps.is_empty() {
                    return crate::error::invalid("quasi-periodic potential has no components");
                }
                for c in comps {
                    check(&c.field, 1)?;
                    if c.periods.len() != d || c.periods.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                        return crate::error::invalid("quasi-periodic periods must be d positive reals");
                    }
                    if !c.field.is_unit_periodic() {
                        return crate::error::invalid("quasi-periodic component needs integer local frequencies");
                    }
                }
            }
            PotentialSpec::CompactDeformation { center, outer, radius } => {
                if !(center.is_finite() && outer.is_finite() && radius.is_finite() && *radius > 0.0) {
                    return crate::error::invalid("compact deformation needs finite values and radius > 0");
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_sum_periodic_shift() {
        let f = TrigSum::constant(2.0)
            .with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0))
            .with_term(TrigTerm::y(1, 0, 3.0, 0.5, 0.3));
        let a = f.eval(&[], &[0.31, 0.77], 1);
        let b = f.eval(&[], &[1.31, 0.77], 1);
        let c = f.eval(&[], &[0.31, 1.77], 1);
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        assert_eq!(f.upper_bound(), 3.5);
        assert_eq!(f.lower_bound(), 0.5);
    }

    #[test]
    fn compact_deformation_profile() {
        let v = PotentialSpec::CompactDeformation { center: 0.0, outer: 1.0, radius: 1.0 };
        assert_eq!(v.eval(&[], &[0.0], 1), 0.0);
        assert_eq!(v.eval(&[], &[-0.25], 1), 0.25);
        assert_eq!(v.eval(&[], &[7.0], 1), 1.0);
        assert_eq!(v.eval(&[], &[0.6, 0.8], 2), 1.0);
    }

    #[test]
    fn quasi_periodic_sum() {
        let s2 = std::f64::consts::SQRT_2;
        let v = PotentialSpec::QuasiPeriodic(vec![
            QuasiComponent { periods: vec![1.0], field: TrigSum::constant(0.0).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)) },
            QuasiComponent { periods: vec![s2], field: TrigSum::constant(0.0).with_term(TrigTerm::y(0, 0, 1.0, 1.0, 0.0)) },
        ]);
        let y = 0.3;
        let want = (TAU * y).sin() + (TAU * y / s2).sin();
        assert!((v.eval(&[], &[y], 1) - want).abs() < 1e-14);
        assert!(v.validate(1, 1, 0).is_ok());
    }

    #[test]
    fn rejects_fractional_frequency() {
        let v = PotentialSpec::Periodic(TrigSum::constant(0.0).with_term(TrigTerm::y(0, 0, 0.5, 1.0, 0.0)));
        assert!(v.validate(1, 1, 0).is_err());
    }
}
