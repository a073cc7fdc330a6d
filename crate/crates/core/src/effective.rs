//! Sampled effective-Hamiltonian tables: construction, interpolation,
//! structural checks and limits of Hamiltonian sequences.

use crate::cell::{effective_value, CellProblem, TorusGrid};
use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{HamiltonianSpec, PBox, MAX_DIM};
use crate::scheme::SchemeOptions;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Tensor momentum grid: `counts[i]` equispaced nodes on `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl MomentumGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != counts.len() || lo.len() > MAX_DIM {
            return invalid("momentum grid dimensions do not match");
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) || counts.iter().any(|&c| c < 2) {
            return invalid("momentum grid needs lo < hi and at least 2 nodes per axis");
        }
        Ok(MomentumGrid { lo, hi, counts })
    }

    /// `[−r, r]^d` with `n` nodes per axis.
    pub fn symmetric(d: usize, r: f64, n: usize) -> Result<Self> {
        MomentumGrid::new(vec![-r; d], vec![r; d], vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / (self.counts[i] - 1) as f64
    }

    pub fn node(&self, i: usize, k: usize) -> f64 {
        if k + 1 == self.counts[i] {
            self.hi[i]
        } else {
            self.lo[i] + k as f64 * self.step(i)
        }
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for a in (0..d - 1).rev() {
            s[a] = s[a + 1] * self.counts[a + 1];
        }
        s
    }

    /// Multi-index of entry `j` (row-major, last axis fastest).
    pub fn multi_index(&self, mut j: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = j % self.counts[a];
            j /= self.counts[a];
        }
        idx
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        self.multi_index(j).iter().enumerate().map(|(i, &k)| self.node(i, k)).collect()
    }

    pub fn as_box(&self) -> PBox {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (*a, *b)).collect()
    }
}

/// How a table was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schedule: Vec<f64>,
    pub torus: Vec<Vec<usize>>,
    pub tol: f64,
    pub scheme: SchemeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTable {
    pub x: Vec<f64>,
    pub grid: MomentumGrid,
    pub values: Vec<f64>,
    pub flatness: Vec<f64>,
    /// Entries whose solve failed, with the error message.
    pub failures: Vec<(usize, String)>,
    /// Bound on the discretization error of a single entry.
    pub scheme_error: f64,
    pub provenance: Option<Provenance>,
}

impl EffectiveTable {
    /// Table from explicit values (flatness 0, no provenance).
    pub fn from_values(x: Vec<f64>, grid: MomentumGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.iter().any(|v| !v.is_finite()) {
            return invalid("table values must be finite and match the grid");
        }
        let n = values.len();
        Ok(EffectiveTable { x, grid, values, flatness: vec![0.0; n], failures: Vec::new(), scheme_error: 0.0, provenance: None })
    }

    /// Tabulates `f` on the grid.
    pub fn from_fn(x: Vec<f64>, grid: MomentumGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|j| f(&grid.point(j))).collect();
        EffectiveTable::from_values(x, grid, values)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Multilinear interpolation; exact at nodes.
    pub fn interpolate(&self, q: &[f64]) -> Result<f64> {
        let d = self.dim();
        if q.len() != d {
            return invalid("interpolation point has the wrong dimension");
        }
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for i in 0..d {
            let (lo, hi) = (self.grid.lo[i], self.grid.hi[i]);
            if !(lo..=hi).contains(&q[i]) {
                return Err(Error::OutOfValidity(format!(
                    "extrapolation: momentum component {i} = {:.6} outside the table box [{lo}, {hi}]",
                    q[i]
                )));
            }
            let s = (q[i] - lo) / self.grid.step(i);
            let k = (s.floor() as usize).min(self.grid.counts[i] - 2);
            base[i] = k;
            frac[i] = (s - k as f64).clamp(0.0, 1.0);
        }
        let strides = self.grid.strides();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut wgt = 1.0;
            let mut j = 0;
            for i in 0..d {
                let up = (corner >> i) & 1 == 1;
                wgt *= if up { frac[i] } else { 1.0 - frac[i] };
                j += (base[i] + up as usize) * strides[i];
            }
            if wgt != 0.0 {
                let v = self.values[j];
                if !v.is_finite() {
                    return Err(Error::OutOfValidity(format!("table entry {j} failed to converge")));
                }
                acc += wgt * v;
            }
        }
        Ok(acc)
    }

    /// Lipschitz constant of `q ↦ interpolate(q)` in each axis.
    pub fn axis_slopes(&self) -> Vec<f64> {
        let d = self.dim();
        let strides = self.grid.strides();
        let mut s = vec![0.0f64; d];
        for j in 0..self.values.len() {
            let idx = self.grid.multi_index(j);
            for i in 0..d {
                if idx[i] + 1 < self.grid.counts[i] {
                    let dv = (self.values[j + strides[i]] - self.values[j]).abs() / self.grid.step(i);
                    if dv.is_finite() {
                        s[i] = s[i].max(dv);
                    }
                }
            }
        }
        s
    }

    /// CSV: momentum columns, value, flatness.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("p{i}")).collect();
        header.push("value".into());
        header.push("flatness".into());
        wr.write_record(&header).map_err(csv_err)?;
        for j in 0..self.values.len() {
            let mut row: Vec<String> = self.grid.point(j).iter().map(|v| v.to_string()).collect();
            row.push(self.values[j].to_string());
            row.push(self.flatness[j].to_string());
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); the grid is
    /// reconstructed from the distinct node coordinates.
    pub fn read_csv<R: std::io::Read>(x: Vec<f64>, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(csv_err)?.clone();
        let d = headers.len().checked_sub(2).filter(|&d| d >= 1).ok_or_else(|| Error::InvalidInput("table CSV needs p-columns, value and flatness".into()))?;
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        let mut flat = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            pts.push(nums[..d].to_vec());
            vals.push(nums[d]);
            flat.push(nums[d + 1]);
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut counts = vec![0; d];
        for i in 0..d {
            let mut c: Vec<f64> = pts.iter().map(|p| p[i]).collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            lo[i] = c[0];
            hi[i] = *c.last().unwrap();
            counts[i] = c.len();
        }
        let grid = MomentumGrid::new(lo, hi, counts)?;
        if grid.len() != vals.len() {
            return invalid("table CSV is not a complete tensor grid");
        }
        let mut t = EffectiveTable::from_values(x, grid, vals)?;
        t.flatness = flat;
        Ok(t)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Runs the effective-value continuation at every node of `p_grid`.
/// Failed entries are recorded in `failures` (value NaN); if every entry
/// fails the first error is returned.
pub fn build_table(
    template: &CellProblem,
    p_grid: &MomentumGrid,
    torus: &TorusGrid,
    schedule: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EffectiveTable> {
    if p_grid.dim() != template.ham.dim() {
        return invalid("momentum grid dimension does not match the Hamiltonian");
    }
    let results: Vec<Result<(f64, f64)>> = (0..p_grid.len())
        .into_par_iter()
        .map(|j| {
            let mut pr = template.clone();
            pr.p = p_grid.point(j);
            let ev = effective_value(&pr, torus, schedule, tol, max_iter)?;
            Ok((ev.hbar, ev.flatness))
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut flatness = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut first_err = None;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok((v, f)) => {
                values.push(v);
                flatness.push(f);
            }
            Err(e) => {
                values.push(f64::NAN);
                flatness.push(f64::NAN);
                failures.push((j, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if failures.len() == values.len() {
        return Err(first_err.expect("non-empty grid"));
    }
    let max_flat = flatness.iter().copied().filter(|f| f.is_finite()).fold(0.0, f64::max);
    let scheme_error = max_flat + torus.h_max() * momentum_lipschitz(template, p_grid);
    Ok(EffectiveTable {
        x: template.x.clone(),
        grid: p_grid.clone(),
        values,
        flatness,
        failures,
        scheme_error,
        provenance: Some(Provenance { schedule: schedule.to_vec(), torus: torus.factor_dims.clone(), tol, scheme: template.scheme }),
    })
}

/// Bound on `|∂H/∂q|` over the momenta a table solve can reach.
fn momentum_lipschitz(template: &CellProblem, p_grid: &MomentumGrid) -> f64 {
    let pmax = p_grid.lo.iter().chain(&p_grid.hi).fold(0.0f64, |m, v| m.max(v.abs()));
    match &template.ham {
        HamiltonianSpec::Closed(c) => {
            let mut pr = template.clone();
            pr.p = vec![pmax; c.dim];
            let r = crate::cell::q_box_radius(&pr) * (c.dim as f64).sqrt();
            c.coefficient().upper_bound() * c.theta() as f64 * r.powi(c.theta() as i32 - 1)
        }
        HamiltonianSpec::Control(c) => c.sup_drift(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityViolation {
    pub p: Vec<f64>,
    pub p_prime: Vec<f64>,
    /// `H̄(mid) − (H̄(p) + H̄(p′))/2`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub lipschitz_estimate: f64,
    pub convexity_violations: Vec<ConvexityViolation>,
    /// Estimated growth exponent at large `|p|`.
    pub coercivity_fit: Option<f64>,
    pub coercivity_samples: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Lipschitz, midpoint-convexity and growth checks on a complete table.
///
/// The growth exponent is fitted from the radial slope: along each half
/// axis through the box centre, `log ∂_r H̄` is regressed on `log r` over
/// `r ≥ 2/3` of the half-width, and the exponent is the slope plus one.
pub fn check_properties(table: &EffectiveTable, tol: f64) -> Result<PropertyReport> {
    if !table.is_complete() {
        return invalid(format!("table has {} failed entries", table.failures.len()));
    }
    let d = table.dim();
    let g = &table.grid;
    let strides = g.strides();
    let lipschitz_estimate = table.axis_slopes().into_iter().fold(0.0, f64::max);
    let mut viol = Vec::new();
    for j in 0..table.values.len() {
        let idx = g.multi_index(j);
        for i in 0..d {
            let n = g.counts[i];
            for m in 1..n {
                if idx[i] + 2 * m >= n {
                    break;
                }
                let mid = table.values[j + m * strides[i]];
                let far = table.values[j + 2 * m * strides[i]];
                let margin = mid - 0.5 * (table.values[j] + far);
                if margin > tol {
                    viol.push(ConvexityViolation { p: g.point(j), p_prime: g.point(j + 2 * m * strides[i]), margin });
                }
            }
        }
    }
    let (coercivity_fit, coercivity_samples) = coercivity_fit(table);
    let pass = viol.is_empty() && lipschitz_estimate.is_finite();
    Ok(PropertyReport { lipschitz_estimate, convexity_violations: viol, coercivity_fit, coercivity_samples, tol, pass })
}

fn coercivity_fit(table: &EffectiveTable) -> (Option<f64>, usize) {
    let g = &table.grid;
    let d = g.dim();
    let center: Vec<f64> = (0..d).map(|i| 0.5 * (g.lo[i] + g.hi[i])).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..d {
        let half = 0.5 * (g.hi[i] - g.lo[i]);
        let step = g.step(i);
        for sign in [-1.0, 1.0] {
            let mut r = half;
            let mut prev: Option<(f64, f64)> = None;
            let mut pts = Vec::new();
            while r >= 2.0 / 3.0 * half - 1e-12 {
                pts.push(r);
                r -= step;
            }
            pts.reverse();
            for r in pts {
                let mut q = center.clone();
                q[i] += sign * r;
                let Ok(v) = table.interpolate(&q) else { continue };
                if let Some((r0, v0)) = prev {
                    let slope = (v - v0) / (r - r0);
                    if slope > 0.0 {
                        xs.push((0.5 * (r + r0)).ln());
                        ys.push(slope.ln());
                    }
                }
                prev = Some((r, v));
            }
        }
    }
    let n = xs.len();
    if n < 2 {
        return (None, n);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return (None, n);
    }
    (Some(sxy / sxx + 1.0), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B0Limit {
    pub table: EffectiveTable,
    /// `‖F̄^{N+1} − F̄^N‖∞` for consecutive members.
    pub cauchy_gaps: Vec<f64>,
    /// Largest `sup|g|`-type bound over the sequence.
    pub uniform_bound: f64,
}

/// Tables for a sequence of Hamiltonians `F¹, F², …`; returns the last one
/// and the successive sup-gaps.
pub fn b0_limit_table(
    sequence: &[CellProblem],
    p_grid: &MomentumGrid,
    torus: &TorusGrid,
    schedule: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<B0Limit> {
    if sequence.is_empty() {
        return invalid("empty Hamiltonian sequence");
    }
    let zero = vec![0.0; p_grid.dim()];
    let bounds: Vec<f64> = sequence.iter().map(|s| s.ham.lambda_w_bound(&zero)).collect();
    let uniform_bound = bounds.iter().copied().fold(0.0, f64::max);
    if !uniform_bound.is_finite() {
        return invalid("sequence is not uniformly bounded");
    }
    let mut prev: Option<EffectiveTable> = None;
    let mut gaps = Vec::new();
    for pr in sequence {
        let t = build_table(pr, p_grid, torus, schedule, tol, max_iter)?;
        if !t.is_complete() {
            return Err(Error::NonConvergence { iterations: max_iter, residual: f64::NAN });
        }
        if let Some(p) = &prev {
            gaps.push(p.values.iter().zip(&t.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        prev = Some(t);
    }
    Ok(B0Limit { table: prev.expect("non-empty"), cauchy_gaps: gaps, uniform_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PotentialSpec, TrigSum};
    use crate::hamiltonians::{ClosedFormSpec, Family};
    use crate::scales::ScaleSystem;
    use proptest::prelude::*;

    fn sq_table(n: usize) -> EffectiveTable {
        EffectiveTable::from_fn(vec![0.0], MomentumGrid::symmetric(1, 4.0, n).unwrap(), |p| p[0] * p[0]).unwrap()
    }

    #[test]
    fn nodes_and_midpoints() {
        let t = sq_table(9);
        assert_eq!(t.interpolate(&[1.0]).unwrap(), 1.0);
        assert_eq!(t.interpolate(&[0.5]).unwrap(), 0.5);
        assert_eq!(t.interpolate(&[4.0]).unwrap(), 16.0);
        assert!(matches!(t.interpolate(&[4.5]), Err(Error::OutOfValidity(_))));
        let lin = EffectiveTable::from_fn(vec![0.0; 2], MomentumGrid::symmetric(2, 1.0, 3).unwrap(), |p| 2.0 * p[0] - p[1]).unwrap();
        assert!((lin.interpolate(&[0.5, -0.25]).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn square_and_eikonal_properties() {
        let t = sq_table(33);
        let r = check_properties(&t, 1e-12).unwrap();
        assert!(r.pass);
        assert!((r.coercivity_fit.unwrap() - 2.0).abs() < 0.1);
        let e = EffectiveTable::from_fn(vec![0.0], MomentumGrid::symmetric(1, 4.0, 33).unwrap(), |p| (p[0].abs() - 2.0).max(-1.0)).unwrap();
        let r = check_properties(&e, 1e-12).unwrap();
        assert!(r.pass);
        assert!((r.coercivity_fit.unwrap() - 1.0).abs() < 0.1);
        assert!((r.lipschitz_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corrupted_entry_is_caught() {
        let mut t = sq_table(33);
        t.values[20] += 1.0;
        let r = check_properties(&t, 1e-9).unwrap();
        assert!(!r.pass && !r.convexity_violations.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let t = EffectiveTable::from_fn(vec![0.0; 2], MomentumGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![3, 5]).unwrap(), |p| p[0] * 0.1 + p[1] / 3.0).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = EffectiveTable::read_csv(vec![0.0; 2], buf.as_slice()).unwrap();
        assert_eq!(back.grid, t.grid);
        assert_eq!(back.values, t.values);
    }

    #[test]
    fn y_independent_table_is_exact() {
        let h = HamiltonianSpec::Closed(ClosedFormSpec::new(1, 1, Family::Plain(2), TrigSum::constant(1.0), PotentialSpec::constant(0.0)).unwrap());
        let pr = CellProblem::new(h, vec![0.0], vec![0.0], ScaleSystem::single(1), 1e-3).unwrap();
        let g = MomentumGrid::symmetric(1, 2.0, 5).unwrap();
        let t = build_table(&pr, &g, &TorusGrid::uniform(1, 1, 8).unwrap(), &[1.0, 1e-3], 1e-10, 10_000).unwrap();
        for j in 0..5 {
            let p = g.point(j)[0];
            assert!((t.values[j] - p * p).abs() < 1e-9);
            assert_eq!(t.flatness[j], 0.0);
        }
    }

    #[test]
    fn identical_sequence_has_zero_gaps() {
        let h = HamiltonianSpec::Closed(ClosedFormSpec::new(1, 1, Family::Plain(1), TrigSum::constant(1.0), PotentialSpec::constant(0.5)).unwrap());
        let pr = CellProblem::new(h, vec![0.0], vec![0.0], ScaleSystem::single(1), 1e-3).unwrap();
        let g = MomentumGrid::symmetric(1, 1.0, 3).unwrap();
        let r = b0_limit_table(&[pr.clone(), pr.clone(), pr], &g, &TorusGrid::uniform(1, 1, 8).unwrap(), &[1.0, 1e-2], 1e-10, 10_000).unwrap();
        assert_eq!(r.cauchy_gaps, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn interpolation_is_exact_on_affine_data(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, q0 in -2.0..2.0f64, q1 in -2.0..2.0f64) {
            let t = EffectiveTable::from_fn(vec![0.0; 2], MomentumGrid::symmetric(2, 2.0, 7).unwrap(), |p| a * p[0] + b * p[1] + c).unwrap();
            prop_assert!((t.interpolate(&[q0, q1]).unwrap() - (a * q0 + b * q1 + c)).abs() < 1e-12);
        }

        #[test]
        fn interpolation_stays_within_node_range(vals in proptest::collection::vec(-5.0..5.0f64, 9), q in -1.0..1.0f64) {
            let t = EffectiveTable::from_values(vec![0.0], MomentumGrid::symmetric(1, 1.0, 9).unwrap(), vals.clone()).unwrap();
            let v = t.interpolate(&[q]).unwrap();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
