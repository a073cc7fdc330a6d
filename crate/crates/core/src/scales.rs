//! Scale ratios `γⁿᵢ`, the non-resonance test and orbit-density diagnostics.
//!
//! The operative non-resonance condition is rational independence of
//! `{1} ∪ {γⁿᵢ : n ≥ 2}` on every axis `i`: no nonzero integer tuple
//! `(z², …, zᴺ)` makes `Σₙ γⁿᵢ zⁿ` an integer. The first scale is excluded
//! because `Γ¹ = I` would otherwise produce a relation for every system.

use crate::error::{invalid, Error, Result};
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

pub const DEFAULT_SEARCH_BOUND: u64 = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Default cap on enumerated integer tuples across all axes.
pub const DEFAULT_BUDGET: u64 = 50_000_000;

pub const INTERPRETATION_NOTE: &str = "relations are searched among {1} ∪ {γⁿᵢ : n ≥ 2} per axis; \
the trivial family with only z¹ nonzero is excluded since Γ¹ = I; floating results hold only up to \
the reported search bound and tolerance";

/// A scale ratio: exact rational or a float treated as an irrational candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Exact(Rational64),
    Float(f64),
}

impl Ratio {
    pub fn value(&self) -> f64 {
        match self {
            Ratio::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Ratio::Float(v) => *v,
        }
    }

    /// Parses `"p/q"`, an integer, or a decimal (the latter becomes a float).
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some((p, q)) = t.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| Error::InvalidInput(format!("bad numerator in `{t}`")))?;
            let q: i64 = q.trim().parse().map_err(|_| Error::InvalidInput(format!("bad denominator in `{t}`")))?;
            if q == 0 {
                return invalid(format!("zero denominator in `{t}`"));
            }
            return Ok(Ratio::Exact(Rational64::new(p, q)));
        }
        if let Ok(n) = t.parse::<i64>() {
            return Ok(Ratio::Exact(Rational64::from_integer(n)));
        }
        t.parse::<f64>()
            .map(Ratio::Float)
            .map_err(|_| Error::InvalidInput(format!("cannot parse ratio `{t}`")))
    }

    /// Exact when `v·q` is an exact integer for some `q ≤ 1024`.
    pub fn from_f64_guess(v: f64) -> Self {
        for q in 1..=1024i64 {
            let s = v * q as f64;
            if s.fract() == 0.0 && s.abs() < 9.0e15 {
                return Ratio::Exact(Rational64::new(s as i64, q));
            }
        }
        Ratio::Float(v)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Ratio::Exact(_))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Exact(r) if *r.denom() == 1 => write!(f, "{}", r.numer()),
            Ratio::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Ratio::Float(v) => write!(f, "{v:?}"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ratio::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `N` diagonal scale matrices; row `n` holds `(γⁿ₁, …, γⁿ_d)` and row 0 is
/// all ones. `Γⁿ = diag(γⁿ)` maps the physical fast variable to factor `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSystem {
    pub d: usize,
    pub n: usize,
    pub gamma: Vec<Vec<Ratio>>,
}

impl ScaleSystem {
    pub fn new(d: usize, gamma: Vec<Vec<Ratio>>) -> Result<Self> {
        if d == 0 || gamma.is_empty() {
            return invalid("scale system needs d ≥ 1 and N ≥ 1");
        }
        for (n, row) in gamma.iter().enumerate() {
            if row.len() != d {
                return invalid(format!("gamma row {n} has {} entries, expected {d}", row.len()));
            }
            for (i, g) in row.iter().enumerate() {
                let v = g.value();
                if !v.is_finite() || v == 0.0 {
                    return invalid(format!("gamma[{n}][{i}] must be finite and nonzero"));
                }
                if n == 0 && v != 1.0 {
                    return invalid(format!("gamma[0][{i}] must be 1 (first scale is the reference)"));
                }
            }
        }
        Ok(ScaleSystem { d, n: gamma.len(), gamma })
    }

    /// Single scale, `Γ¹ = I`.
    pub fn single(d: usize) -> Self {
        ScaleSystem { d, n: 1, gamma: vec![vec![Ratio::Exact(Rational64::from_integer(1)); d]] }
    }

    /// Two scales with the same ratio on every axis.
    pub fn two_scale(d: usize, g: Ratio) -> Result<Self> {
        let one = Ratio::Exact(Rational64::from_integer(1));
        ScaleSystem::new(d, vec![vec![one; d], vec![g; d]])
    }

    #[inline]
    pub fn gamma_f64(&self, n: usize, i: usize) -> f64 {
        self.gamma[n][i].value()
    }

    /// Flat `N·d` vector of `γⁿᵢ` (scale-major).
    pub fn gamma_flat(&self) -> Vec<f64> {
        self.gamma.iter().flat_map(|r| r.iter().map(|g| g.value())).collect()
    }

    /// `(Γ¹y, …, Γᴺy)` as a flat scale-major vector, not reduced mod 1.
    pub fn diagonal_point(&self, y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.d);
        for n in 0..self.n {
            for i in 0..self.d {
                out.push(y[i] * self.gamma_f64(n, i));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arithmetic {
    Exact,
    Floating { tolerance: f64 },
}

/// Integer relation `Σₙ≥₂ γⁿᵢ zⁿ = m`; `z` lists `(z², …, zᴺ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub z: Vec<i64>,
    pub m: i64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResonance {
    pub axis: usize,
    pub resonant: bool,
    pub witness: Option<Witness>,
    pub arithmetic: Arithmetic,
    /// False when the search for this axis was cut short by the budget.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub axes: Vec<AxisResonance>,
    pub search_bound: u64,
    pub tolerance: f64,
    pub candidates_checked: u64,
    pub interpretation_note: String,
}

impl ResonanceReport {
    pub fn any_resonant(&self) -> bool {
        self.axes.iter().any(|a| a.resonant)
    }
}

/// Decides the non-resonance condition axis by axis. Exact rationals are
/// decided exactly; floats by enumerating `|zⁿ| ≤ bound` in shells of
/// increasing `max|zⁿ|`, so the first witness found is a smallest one.
pub fn check_condition_a(scales: &ScaleSystem, bound: u64, tol: f64, budget: u64) -> Result<ResonanceReport> {
    if bound == 0 {
        return invalid("search bound must be ≥ 1");
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return invalid("tolerance must be finite and ≥ 0");
    }
    let mut report = ResonanceReport {
        axes: Vec::with_capacity(scales.d),
        search_bound: bound,
        tolerance: tol,
        candidates_checked: 0,
        interpretation_note: INTERPRETATION_NOTE.to_string(),
    };
    for i in 0..scales.d {
        let col: Vec<Ratio> = (1..scales.n).map(|n| scales.gamma[n][i]).collect();
        if col.is_empty() {
            report.axes.push(AxisResonance { axis: i, resonant: false, witness: None, arithmetic: Arithmetic::Exact, complete: true });
            continue;
        }
        // Any exact rational p/q gives the relation q·(p/q) = p.
        let exact = col
            .iter()
            .enumerate()
            .filter_map(|(k, g)| match g {
                Ratio::Exact(r) => Some((k, *r)),
                _ => None,
            })
            .min_by_key(|(_, r)| *r.denom());
        if let Some((k, r)) = exact {
            let mut z = vec![0; col.len()];
            z[k] = *r.denom();
            report.axes.push(AxisResonance {
                axis: i,
                resonant: true,
                witness: Some(Witness { z, m: *r.numer(), defect: 0.0 }),
                arithmetic: Arithmetic::Exact,
                complete: true,
            });
            continue;
        }
        if tol == 0.0 {
            return invalid("tolerance 0 is only allowed when all ratios are exact rationals");
        }
        let vals: Vec<f64> = col.iter().map(|g| g.value()).collect();
        let mut z = vec![0i64; vals.len()];
        let mut found = None;
        let mut exhausted = false;
        'shells: for s in 1..=bound as i64 {
            let mut stop = false;
            shell(&mut z, 0, s, false, &mut |z| {
                if report.candidates_checked >= budget {
                    exhausted = true;
                    stop = true;
                    return true;
                }
                report.candidates_checked += 1;
                let sum: f64 = z.iter().zip(&vals).map(|(a, g)| *a as f64 * g).sum();
                let m = sum.round();
                if (sum - m).abs() <= tol {
                    found = Some(Witness { z: z.to_vec(), m: m as i64, defect: (sum - m).abs() });
                    stop = true;
                    return true;
                }
                false
            });
            if stop {
                break 'shells;
            }
        }
        let axis = AxisResonance {
            axis: i,
            resonant: found.is_some(),
            witness: found,
            arithmetic: Arithmetic::Floating { tolerance: tol },
            complete: !exhausted,
        };
        report.axes.push(axis);
        if exhausted {
            return Err(Error::BudgetExceeded { checked: report.candidates_checked, partial: Box::new(report) });
        }
    }
    Ok(report)
}

/// Visits every tuple with `max|zⱼ| = s` whose first nonzero entry is
/// positive. Returns true when the visitor asked to stop.
fn shell(z: &mut [i64], j: usize, s: i64, hit: bool, visit: &mut dyn FnMut(&[i64]) -> bool) -> bool {
    if j == z.len() {
        if !hit {
            return false;
        }
        if z.iter().find(|v| **v != 0).is_some_and(|v| *v < 0) {
            return false;
        }
        return visit(z);
    }
    let last = j + 1 == z.len();
    for v in -s..=s {
        if last && !hit && v.abs() != s {
            continue;
        }
        z[j] = v;
        if shell(z, j + 1, s, hit || v.abs() == s, visit) {
            return true;
        }
    }
    z[j] = 0;
    false
}

/// `εⁿᵢ = ε¹/γⁿᵢ`.
pub fn realize_epsilon(scales: &ScaleSystem, eps1: f64) -> Result<Vec<Vec<f64>>> {
    if !(eps1 > 0.0 && eps1.is_finite()) {
        return invalid("eps1 must be positive");
    }
    Ok(scales
        .gamma
        .iter()
        .enumerate()
        .map(|(n, row)| row.iter().map(|g| if n == 0 { eps1 } else { eps1 / g.value() }).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitStats {
    pub k: usize,
    /// Sup-norm covering radius (exact in 1D, bucket estimate otherwise).
    pub covering_radius: f64,
    /// Largest gap between sorted orbit points (1D only).
    pub max_gap: Option<f64>,
    pub distinct_points: usize,
}

/// Orbit `{k·ω mod 1 : 0 ≤ k < K}` of the rotation by `ω` on `Tᴹ`.
///
/// In 1D the covering radius is exactly half the largest gap. In higher
/// dimensions the orbit is binned on a grid of side `G = ⌈K^{1/M}⌉`; with
/// `D` the largest Chebyshev bucket distance from an empty bucket to an
/// occupied one, the estimate is `(D + ½)/G`, capped at ½.
pub fn orbit_gap(omega: &[f64], k: usize) -> Result<OrbitStats> {
    if k < 2 {
        return invalid("orbit needs K ≥ 2");
    }
    if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) {
        return invalid("omega must be a finite non-empty vector");
    }
    let m = omega.len();
    if m == 1 {
        let mut pts: Vec<f64> = (0..k).map(|j| (j as f64 * omega[0]).rem_euclid(1.0)).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if pts.len() > 1 && (pts[0] + 1.0 - pts[pts.len() - 1]) < 1e-12 {
            pts.pop();
        }
        let mut gap = pts[0] + 1.0 - pts[pts.len() - 1];
        for w in pts.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        return Ok(OrbitStats { k, covering_radius: gap / 2.0, max_gap: Some(gap), distinct_points: pts.len() });
    }
    let mut g = 1usize;
    while g.checked_pow(m as u32).is_some_and(|c| c < k) {
        g += 1;
    }
    let cells = g.checked_pow(m as u32).ok_or_else(|| Error::InvalidInput("orbit grid too large".into()))?;
    let mut dist = vec![u32::MAX; cells];
    let mut queue = VecDeque::new();
    let mut distinct = 0;
    for j in 0..k {
        let mut idx = 0;
        for w in omega {
            let c = ((j as f64 * w).rem_euclid(1.0) * g as f64) as usize;
            idx = idx * g + c.min(g - 1);
        }
        if dist[idx] != 0 {
            dist[idx] = 0;
            distinct += 1;
            queue.push_back(idx);
        }
    }
    let mut coords = vec![0usize; m];
    let mut dmax = 0u32;
    while let Some(c) = queue.pop_front() {
        let dc = dist[c];
        dmax = dmax.max(dc);
        let mut r = c;
        for a in (0..m).rev() {
            coords[a] = r % g;
            r /= g;
        }
        for off in 0..3usize.pow(m as u32) {
            let mut o = off;
            let mut idx = 0;
            for &ca in coords.iter() {
                let step = o % 3;
                o /= 3;
                let v = (ca + g + step - 1) % g;
                idx = idx * g + v;
            }
            if dist[idx] == u32::MAX {
                dist[idx] = dc + 1;
                queue.push_back(idx);
            }
        }
    }
    let est = ((dmax as f64 + 0.5) / g as f64).min(0.5);
    Ok(OrbitStats { k, covering_radius: est, max_gap: None, distinct_points: distinct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(p: i64, q: i64) -> Ratio {
        Ratio::Exact(Rational64::new(p, q))
    }

    fn one() -> Ratio {
        r(1, 1)
    }

    #[test]
    fn parse_ratios() {
        assert_eq!(Ratio::parse("1/2").unwrap(), r(1, 2));
        assert_eq!(Ratio::parse("3").unwrap(), r(3, 1));
        assert_eq!(Ratio::parse("1.4142135623730951").unwrap(), Ratio::Float(std::f64::consts::SQRT_2));
        assert!(Ratio::parse("1/0").is_err());
        assert!(Ratio::parse("abc").is_err());
    }

    #[test]
    fn rejects_degenerate_scales() {
        assert!(ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(0.0)]]).is_err());
        assert!(ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(f64::INFINITY)]]).is_err());
        assert!(ScaleSystem::new(1, vec![vec![r(2, 1)]]).is_err());
    }

    #[test]
    fn half_is_resonant() {
        let s = ScaleSystem::new(1, vec![vec![one()], vec![r(1, 2)]]).unwrap();
        let rep = check_condition_a(&s, 10, 1e-8, DEFAULT_BUDGET).unwrap();
        let w = rep.axes[0].witness.as_ref().unwrap();
        assert!(rep.axes[0].resonant);
        assert_eq!((w.z.clone(), w.m), (vec![2], 1));
        assert_eq!(rep.axes[0].arithmetic, Arithmetic::Exact);
    }

    #[test]
    fn sqrt2_non_resonant_up_to_bound() {
        let s = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(std::f64::consts::SQRT_2)]]).unwrap();
        let rep = check_condition_a(&s, 10_000, 1e-8, DEFAULT_BUDGET).unwrap();
        assert!(!rep.axes[0].resonant);
        assert!(rep.axes[0].complete);
        assert_eq!(rep.candidates_checked, 10_000);
        // Independent check: the closest approach of z√2 to an integer.
        let best = (1..=10_000)
            .map(|z| {
                let v = z as f64 * std::f64::consts::SQRT_2;
                (v - v.round()).abs()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best > 1e-8);
    }

    #[test]
    fn constructed_three_scale_relation() {
        let s2 = std::f64::consts::SQRT_2;
        let s = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(s2)], vec![Ratio::Float(s2 + 3.0)]]).unwrap();
        let rep = check_condition_a(&s, 100, 1e-8, DEFAULT_BUDGET).unwrap();
        let w = rep.axes[0].witness.as_ref().unwrap();
        assert_eq!((w.z.clone(), w.m), (vec![1, -1], -3));
    }

    #[test]
    fn single_scale_is_trivially_non_resonant() {
        let rep = check_condition_a(&ScaleSystem::single(3), 5, 1e-8, DEFAULT_BUDGET).unwrap();
        assert!(rep.axes.iter().all(|a| !a.resonant && a.complete));
    }

    #[test]
    fn budget_exceeded_carries_partial_report() {
        let s2 = std::f64::consts::SQRT_2;
        let s3 = 3f64.sqrt();
        let s = ScaleSystem::new(2, vec![vec![one(), one()], vec![Ratio::Float(s2), Ratio::Float(s3)]]).unwrap();
        match check_condition_a(&s, 1000, 1e-12, 1500) {
            Err(Error::BudgetExceeded { checked, partial }) => {
                assert_eq!(checked, 1500);
                assert_eq!(partial.axes.len(), 2);
                assert!(partial.axes[0].complete);
                assert!(!partial.axes[1].complete);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn zero_tolerance_needs_exact() {
        let s = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(0.7)]]).unwrap();
        assert!(check_condition_a(&s, 10, 0.0, DEFAULT_BUDGET).is_err());
    }

    #[test]
    fn epsilon_realization() {
        let s = ScaleSystem::new(1, vec![vec![one()], vec![r(2, 1)]]).unwrap();
        let e = realize_epsilon(&s, 0.1).unwrap();
        assert_eq!(e[0][0], 0.1);
        assert!((e[1][0] - 0.05).abs() < 1e-15);
        let s = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(std::f64::consts::SQRT_2)]]).unwrap();
        let e = realize_epsilon(&s, 1.0 / 16.0).unwrap();
        assert!((e[1][0] - 0.0441941738).abs() < 1e-10);
        assert!(realize_epsilon(&s, 0.0).is_err());
    }

    #[test]
    fn two_point_orbit() {
        let o = orbit_gap(&[0.5], 100).unwrap();
        assert_eq!(o.distinct_points, 2);
        assert_eq!(o.max_gap, Some(0.5));
        assert_eq!(o.covering_radius, 0.25);
    }

    #[test]
    fn golden_orbit_is_dense() {
        let o = orbit_gap(&[0.6180339887], 1000).unwrap();
        assert!(o.covering_radius <= 3.0 / 1000.0, "{o:?}");
    }

    #[test]
    fn rational_axis_in_2d() {
        let o = orbit_gap(&[1.0 / 3.0, 0.41421356], 300).unwrap();
        assert!(o.covering_radius >= 1.0 / 6.0, "{o:?}");
        assert!(o.covering_radius <= 0.5);
    }

    #[test]
    fn two_d_estimate_monotone_at_fixed_grid() {
        // 401..=441 all use G = 21.
        let w = [0.7548776662, 0.5698402910];
        let mut prev = f64::INFINITY;
        for k in 401..=441 {
            let c = orbit_gap(&w, k).unwrap().covering_radius;
            assert!(c <= prev);
            prev = c;
        }
    }

    proptest! {
        #[test]
        fn rational_orbit_has_q_points(p in 1i64..40, q in 2i64..40) {
            let g = Rational64::new(p, q);
            let q = *g.denom();
            let w = *g.numer() as f64 / q as f64;
            let o = orbit_gap(&[w], 4 * q as usize + 3).unwrap();
            prop_assert_eq!(o.distinct_points as i64, q);
            prop_assert!((o.covering_radius - 0.5 / q as f64).abs() < 1e-9);
        }

        #[test]
        fn covering_monotone_1d(w in 0.0f64..1.0, k in 2usize..400) {
            let a = orbit_gap(&[w], k).unwrap().covering_radius;
            let b = orbit_gap(&[w], k + 1).unwrap().covering_radius;
            prop_assert!(b <= a + 1e-12);
            prop_assert!(a > 0.0 && a <= 0.5);
        }

        #[test]
        fn exact_and_float_paths_agree(p in 1i64..50, q in 1i64..50) {
            let g = Rational64::new(p, q);
            let v = *g.numer() as f64 / *g.denom() as f64;
            let exact = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Exact(g)]]).unwrap();
            let float = ScaleSystem::new(1, vec![vec![one()], vec![Ratio::Float(v)]]).unwrap();
            let tol = 0.49 / *g.denom() as f64;
            let a = check_condition_a(&exact, 100, tol, DEFAULT_BUDGET).unwrap();
            let b = check_condition_a(&float, 100, tol, DEFAULT_BUDGET).unwrap();
            prop_assert_eq!(a.axes[0].resonant, b.axes[0].resonant);
            for rep in [&a, &b] {
                let w = rep.axes[0].witness.as_ref().unwrap();
                prop_assert!((w.z[0] as f64 * v - w.m as f64).abs() < 1e-9);
            }
        }
    }
}
