//! Monotone finite-difference operator shared by the cell, box and
//! homogenization solvers.
//!
//! A grid has `K` axes. Axis `k` contributes `γ_k · D_k w` to momentum
//! component `q_k` of the Hamiltonian argument `q = p + Σ_k γ_k e_{q_k} D_k w`.
//! On the product torus `K = N·d` with axis `n·d + i` feeding `qᵢ` with `γⁿᵢ`;
//! on a physical grid `K = d` and `γ = 1`.

use crate::effective::EffectiveTable;
use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{ClosedFormSpec, ControlHamiltonianSpec, PBox, QuasiPeriodicSpec, MAX_DIM, SIGMA_SAFETY};
use serde::{Deserialize, Serialize};

/// Numerical flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flux {
    /// `H(central q) − Σ σ_k (D⁺ − D⁻)/2`.
    LaxFriedrichs,
    /// Upwinding along the drift of each control; exact for closed forms.
    Upwind,
}

/// Fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Pseudo-time step `w ← (w − τ H_num(w)) / (1 + λτ)` on all nodes at once.
    Jacobi,
    /// In-place exact local solves with alternating orderings.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub flux: Flux,
    pub sweep: Sweep,
    /// Remove a nearly uniform residual by a constant shift `w -= mean(r)/λ`.
    pub accelerate: bool,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { flux: Flux::Upwind, sweep: Sweep::GaussSeidel, accelerate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    /// Boundary nodes are pinned to zero.
    Dirichlet,
    /// Controls pointing out of the box are not admissible at the boundary.
    StateConstraint,
}

const NONE: u32 = u32::MAX;

/// Tensor grid with precomputed neighbour tables.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dims: Vec<usize>,
    pub h: Vec<f64>,
    pub origin: Vec<f64>,
    pub boundary: Boundary,
    pub len: usize,
    strides: Vec<usize>,
    plus: Vec<Vec<u32>>,
    minus: Vec<Vec<u32>>,
    fixed: Vec<bool>,
}

impl Grid {
    fn build(dims: Vec<usize>, h: Vec<f64>, origin: Vec<f64>, boundary: Boundary) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&n| n < 2) {
            return invalid("grid needs at least two nodes per axis");
        }
        let len = dims.iter().try_fold(1usize, |a, &n| a.checked_mul(n)).filter(|&l| l < NONE as usize);
        let len = len.ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        let k = dims.len();
        let mut strides = vec![1; k];
        for a in (0..k - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let mut plus = vec![vec![NONE; len]; k];
        let mut minus = vec![vec![NONE; len]; k];
        let mut fixed = vec![false; len];
        for j in 0..len {
            for a in 0..k {
                let i = (j / strides[a]) % dims[a];
                let n = dims[a];
                match boundary {
                    Boundary::Periodic => {
                        plus[a][j] = (j - i * strides[a] + ((i + 1) % n) * strides[a]) as u32;
                        minus[a][j] = (j - i * strides[a] + ((i + n - 1) % n) * strides[a]) as u32;
                    }
                    _ => {
                        if i + 1 < n {
                            plus[a][j] = (j + strides[a]) as u32;
                        }
                        if i > 0 {
                            minus[a][j] = (j - strides[a]) as u32;
                        }
                        if boundary == Boundary::Dirichlet && (i == 0 || i + 1 == n) {
                            fixed[j] = true;
                        }
                    }
                }
            }
        }
        Ok(Grid { dims, h, origin, boundary, len, strides, plus, minus, fixed })
    }

    /// Periodic grid on `[0,1)^K` with `cells[k]` nodes on axis `k`.
    pub fn torus(cells: &[usize]) -> Result<Self> {
        let h = cells.iter().map(|&n| 1.0 / n as f64).collect();
        Grid::build(cells.to_vec(), h, vec![0.0; cells.len()], Boundary::Periodic)
    }

    /// Periodic grid on `Π [lo_k, lo_k + L_k)`.
    pub fn periodic_box(cells: &[usize], lo: &[f64], length: &[f64]) -> Result<Self> {
        let h = cells.iter().zip(length).map(|(&n, l)| l / n as f64).collect();
        Grid::build(cells.to_vec(), h, lo.to_vec(), Boundary::Periodic)
    }

    /// `[−R, R]^d` with `cells` intervals per axis and state constraints.
    pub fn centered_box(d: usize, cells: usize, radius: f64) -> Result<Self> {
        if !cells.is_multiple_of(2) {
            return invalid("box grid needs an even cell count so that 0 is a node");
        }
        Grid::build(vec![cells + 1; d], vec![2.0 * radius / cells as f64; d], vec![-radius; d], Boundary::StateConstraint)
    }

    /// `[0,1]^d` including boundary nodes, which are pinned (Dirichlet).
    pub fn unit_dirichlet(d: usize, cells: usize) -> Result<Self> {
        Grid::build(vec![cells + 1; d], vec![1.0 / cells as f64; d], vec![0.0; d], Boundary::Dirichlet)
    }

    pub fn axes(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn plus(&self, k: usize, j: usize) -> Option<usize> {
        let v = self.plus[k][j];
        (v != NONE).then_some(v as usize)
    }

    #[inline]
    pub fn minus(&self, k: usize, j: usize) -> Option<usize> {
        let v = self.minus[k][j];
        (v != NONE).then_some(v as usize)
    }

    #[inline]
    pub fn is_fixed(&self, j: usize) -> bool {
        self.fixed[j]
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        (j / self.strides[k]) % self.dims[k]
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of node `j`.
    pub fn coords(&self, j: usize, out: &mut [f64]) {
        for k in 0..self.axes() {
            out[k] = self.origin[k] + self.index(j, k) as f64 * self.h[k];
        }
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node visiting order for Gauss–Seidel ordering `o` (bit `k` reverses axis `k`).
    fn ordered(&self, o: usize, pos: usize) -> usize {
        let mut rem = pos;
        let mut j = 0;
        for k in 0..self.axes() {
            let i = (rem / self.strides[k]) % self.dims[k];
            rem -= i * self.strides[k];
            let i = if (o >> k) & 1 == 1 { self.dims[k] - 1 - i } else { i };
            j += i * self.strides[k];
        }
        j
    }
}

/// Per-node Hamiltonian data.
#[derive(Debug, Clone)]
pub enum Local {
    /// `a_j·|q|^m − v_j`.
    Closed { m: u8, a: Vec<f64>, v: Vec<f64> },
    /// `max_α {−⟨b_{jα}, q⟩ − g_{jα}}`; `b` is node × control × d.
    Control { nc: usize, b: Vec<f64>, g: Vec<f64> },
    /// Node-independent interpolated table.
    Table(EffectiveTable),
}

/// Where per-node Hamiltonian data comes from.
pub enum Source<'a> {
    Closed(&'a ClosedFormSpec),
    Control(&'a ControlHamiltonianSpec),
    Quasi(&'a QuasiPeriodicSpec),
    Table(&'a EffectiveTable),
}

impl Local {
    /// Samples `src` at every node; `point(j, x, ys)` fills the slow and fast
    /// variables of node `j`.
    pub fn build(src: Source<'_>, nodes: usize, d: usize, nd: usize, point: impl Fn(usize, &mut [f64], &mut [f64])) -> Self {
        let mut x = vec![0.0; d];
        let mut ys = vec![0.0; nd.max(d)];
        match src {
            Source::Closed(c) => {
                let coef = c.coefficient();
                let m = c.theta();
                let mut a = Vec::with_capacity(nodes);
                let mut v = Vec::with_capacity(nodes);
                for j in 0..nodes {
                    point(j, &mut x, &mut ys);
                    a.push(coef.eval(&x, &ys, d));
                    v.push(c.v.eval(&x, &ys, d));
                }
                Local::Closed { m, a, v }
            }
            Source::Control(c) => {
                let nc = c.controls.len();
                let mut b = Vec::with_capacity(nodes * nc * d);
                let mut g = Vec::with_capacity(nodes * nc);
                let mut bb = [0.0; MAX_DIM];
                for j in 0..nodes {
                    point(j, &mut x, &mut ys);
                    for al in &c.controls.samples {
                        g.push(c.drift_cost(&x, &ys, al, &mut bb));
                        b.extend_from_slice(&bb[..d]);
                    }
                }
                Local::Control { nc, b, g }
            }
            Source::Quasi(q) => {
                let nc = q.controls.len();
                let mut b = Vec::with_capacity(nodes * nc * d);
                let mut g = Vec::with_capacity(nodes * nc);
                let mut bb = [0.0; MAX_DIM];
                for j in 0..nodes {
                    point(j, &mut x, &mut ys);
                    for al in &q.controls.samples {
                        g.push(q.drift_cost(&x, &ys[..d], al, &mut bb));
                        b.extend_from_slice(&bb[..d]);
                    }
                }
                Local::Control { nc, b, g }
            }
            Source::Table(t) => Local::Table(t.clone()),
        }
    }

    /// `H` at node `j` and momentum `q`.
    #[inline]
    pub fn eval(&self, j: usize, q: &[f64]) -> Result<f64> {
        match self {
            Local::Closed { m, a, v } => {
                let n2: f64 = q.iter().map(|x| x * x).sum();
                Ok(match m {
                    1 => a[j] * n2.sqrt() - v[j],
                    _ => a[j] * n2 - v[j],
                })
            }
            Local::Control { nc, b, g } => {
                let d = q.len();
                let mut best = f64::NEG_INFINITY;
                for c in 0..*nc {
                    let bb = &b[(j * nc + c) * d..(j * nc + c + 1) * d];
                    let val = -bb.iter().zip(q).map(|(u, v)| u * v).sum::<f64>() - g[j * nc + c];
                    if val > best {
                        best = val;
                    }
                }
                Ok(best)
            }
            Local::Table(t) => t.interpolate(q),
        }
    }

    /// Bound on `sup |g|` and `sup |b|` over the nodes (control data only).
    pub fn control_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Local::Control { nc, b, g } => {
                let gs = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let d = if *nc == 0 { 1 } else { b.len() / g.len() };
                let bs = b.chunks(d.max(1)).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0f64, f64::max);
                Some((gs, bs))
            }
            _ => None,
        }
    }

    /// Central-difference probe of `|∂H/∂qᵢ|` over sampled nodes and a
    /// lattice in `q_box`, times the safety factor.
    pub fn probe_sigma(&self, nodes: usize, q_box: &PBox) -> Result<Vec<f64>> {
        let d = q_box.len();
        let per = 7usize;
        let count = per.pow(d as u32);
        let stride = (nodes / 512).max(1);
        let width = q_box.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max).max(1.0);
        let delta = 1e-5 * width;
        let mut sigma = vec![0.0f64; d];
        let mut p = vec![0.0; d];
        let mut q = vec![0.0; d];
        for j in (0..nodes).step_by(stride) {
            for mut c in 0..count {
                for i in (0..d).rev() {
                    let t = c % per;
                    c /= per;
                    let (lo, hi) = q_box[i];
                    p[i] = lo + (hi - lo) * t as f64 / (per - 1) as f64;
                }
                for i in 0..d {
                    q.copy_from_slice(&p);
                    // Stay inside the box for interpolated tables.
                    let (lo, hi) = q_box[i];
                    let up = (p[i] + delta).min(hi);
                    let dn = (p[i] - delta).max(lo);
                    q[i] = up;
                    let hp = self.eval(j, &q)?;
                    q[i] = dn;
                    let hm = self.eval(j, &q)?;
                    sigma[i] = sigma[i].max(((hp - hm) / (up - dn)).abs());
                }
            }
            if matches!(self, Local::Table(_)) {
                break;
            }
        }
        Ok(sigma.into_iter().map(|s| (s * SIGMA_SAFETY).max(1e-12)).collect())
    }
}

/// Residual statistics over the free nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// The discrete operator `w ↦ λw + H_num(w)` on a grid.
#[derive(Debug, Clone)]
pub struct Operator {
    pub grid: Grid,
    pub d: usize,
    pub axis_q: Vec<usize>,
    pub axis_gamma: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: f64,
    pub local: Local,
    pub flux: Flux,
    /// Lax–Friedrichs viscosity per grid axis.
    pub sigma: Vec<f64>,
    /// Validity box for the central momentum (Lax–Friedrichs).
    pub q_box: Option<PBox>,
    /// Upwind (control data): per node and control, `−⟨b,p⟩ − g`.
    up_c0: Vec<f64>,
    /// Upwind: per node, control and axis, `γ_k b_{q_k}` (0 if inadmissible
    /// direction handled via `up_ok`).
    up_a: Vec<f64>,
    up_ok: Vec<bool>,
    up_nc: usize,
}

impl Operator {
    /// Builds the operator. `q_box` is required for Lax–Friedrichs and sets
    /// both the validity region and the probed viscosity.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid,
        d: usize,
        axis_q: Vec<usize>,
        axis_gamma: Vec<f64>,
        p: Vec<f64>,
        lambda: f64,
        local: Local,
        flux: Flux,
        q_box: Option<PBox>,
    ) -> Result<Self> {
        let kk = grid.axes();
        if axis_q.len() != kk || axis_gamma.len() != kk || p.len() != d || axis_q.iter().any(|&q| q >= d) {
            return invalid("operator axis map does not match grid and dimension");
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid("discount must be finite and ≥ 0");
        }
        let mut op = Operator {
            grid,
            d,
            axis_q,
            axis_gamma,
            p,
            lambda,
            local,
            flux,
            sigma: vec![0.0; kk],
            q_box: None,
            up_c0: Vec::new(),
            up_a: Vec::new(),
            up_ok: Vec::new(),
            up_nc: 0,
        };
        match flux {
            Flux::LaxFriedrichs => {
                let qb = q_box.ok_or_else(|| Error::InvalidInput("Lax–Friedrichs flux needs a momentum box".into()))?;
                if qb.len() != d {
                    return invalid("momentum box dimension mismatch");
                }
                let sq = op.local.probe_sigma(op.grid.len, &qb)?;
                for k in 0..kk {
                    op.sigma[k] = op.axis_gamma[k].abs() * sq[op.axis_q[k]];
                }
                op.q_box = Some(qb);
            }
            Flux::Upwind => op.prepare_upwind(q_box)?,
        }
        Ok(op)
    }

    fn prepare_upwind(&mut self, q_box: Option<PBox>) -> Result<()> {
        let (nc, b, g) = match &self.local {
            Local::Control { nc, b, g } => (*nc, b, g),
            Local::Closed { .. } => {
                // Exact upwinding of the convex closed form; σ only sets τ.
                let qb = q_box.ok_or_else(|| Error::InvalidInput("closed-form upwind flux needs a momentum box".into()))?;
                let sq = self.local.probe_sigma(self.grid.len, &qb)?;
                for k in 0..self.grid.axes() {
                    self.sigma[k] = self.axis_gamma[k].abs() * sq[self.axis_q[k]];
                }
                return Ok(());
            }
            Local::Table(_) => return invalid("upwind flux needs control-form or closed-form data"),
        };
        let kk = self.grid.axes();
        let d = self.d;
        let n = self.grid.len;
        self.up_nc = nc;
        self.up_c0 = vec![0.0; n * nc];
        self.up_a = vec![0.0; n * nc * kk];
        self.up_ok = vec![true; n * nc];
        let mut sig = vec![0.0f64; kk];
        for j in 0..n {
            let mut any = false;
            for c in 0..nc {
                let bb = &b[(j * nc + c) * d..(j * nc + c + 1) * d];
                let bp: f64 = bb.iter().zip(&self.p).map(|(u, v)| u * v).sum();
                self.up_c0[j * nc + c] = -bp - g[j * nc + c];
                let mut ok = true;
                for k in 0..kk {
                    let a = self.axis_gamma[k] * bb[self.axis_q[k]];
                    self.up_a[(j * nc + c) * kk + k] = a;
                    if (a > 0.0 && self.grid.plus(k, j).is_none()) || (a < 0.0 && self.grid.minus(k, j).is_none()) {
                        ok = false;
                    }
                    sig[k] = sig[k].max(a.abs());
                }
                self.up_ok[j * nc + c] = ok;
                any |= ok;
            }
            if !any && !self.grid.is_fixed(j) {
                return invalid(format!("no admissible control at boundary node {j}"));
            }
        }
        self.sigma = sig;
        Ok(())
    }

    /// Closed-form upwinding at node `j`. In the Legendre representation the
    /// optimal drift component along `qᵢ` has one of two signs; each sign
    /// upwinds every axis feeding `qᵢ`. With `t` in place of `w_j` the
    /// argument of `a|·|^m` is `rᵢ = max(0, Bᵢ + Sᵢt)`; this fills `(B, S)`,
    /// with `Bᵢ = −∞` when neither sign is admissible.
    #[inline]
    fn godunov_terms(&self, w: &[f64], j: usize, bt: &mut [f64], st: &mut [f64]) {
        let d = self.d;
        let mut cp = [0.0f64; MAX_DIM];
        let mut cm = [0.0f64; MAX_DIM];
        let mut okp = [true; MAX_DIM];
        let mut okm = [true; MAX_DIM];
        for i in 0..d {
            cp[i] = -self.p[i];
            cm[i] = self.p[i];
            st[i] = 0.0;
        }
        for k in 0..self.grid.axes() {
            let i = self.axis_q[k];
            let gk = self.axis_gamma[k];
            let h = self.grid.h[k];
            let wp = self.grid.plus(k, j).map(|n| w[n]);
            let wm = self.grid.minus(k, j).map(|n| w[n]);
            st[i] += gk.abs() / h;
            let (fwd, bwd) = if gk > 0.0 { (wp, wm) } else { (wm, wp) };
            match fwd {
                Some(v) => cp[i] -= gk.abs() * v / h,
                None => okp[i] = false,
            }
            match bwd {
                Some(v) => cm[i] -= gk.abs() * v / h,
                None => okm[i] = false,
            }
        }
        for i in 0..d {
            let a = if okp[i] { cp[i] } else { f64::NEG_INFINITY };
            let b = if okm[i] { cm[i] } else { f64::NEG_INFINITY };
            bt[i] = a.max(b);
        }
    }

    #[inline]
    fn closed_parts(&self, j: usize) -> (u8, f64, f64) {
        match &self.local {
            Local::Closed { m, a, v } => (*m, a[j], v[j]),
            _ => unreachable!("closed-form data"),
        }
    }

    /// Pseudo-time step `τ = 0.9 / Σ_k σ_k/h_k`.
    pub fn tau(&self) -> f64 {
        let s: f64 = self.sigma.iter().zip(&self.grid.h).map(|(s, h)| s / h).sum();
        if s <= 0.0 {
            1e12
        } else {
            0.9 / s
        }
    }

    #[inline]
    fn nb(&self, w: &[f64], k: usize, j: usize) -> (Option<f64>, Option<f64>) {
        (self.grid.plus(k, j).map(|i| w[i]), self.grid.minus(k, j).map(|i| w[i]))
    }

    /// Central momentum at node `j`.
    #[inline]
    fn central_q(&self, w: &[f64], j: usize, q: &mut [f64]) -> Result<()> {
        q[..self.d].copy_from_slice(&self.p);
        for k in 0..self.grid.axes() {
            let (wp, wm) = self.nb(w, k, j);
            let (wp, wm) = (wp.unwrap_or(w[j]), wm.unwrap_or(w[j]));
            let den = if self.grid.plus(k, j).is_some() && self.grid.minus(k, j).is_some() { 2.0 } else { 1.0 };
            q[self.axis_q[k]] += self.axis_gamma[k] * (wp - wm) / (den * self.grid.h[k]);
        }
        if let Some(qb) = &self.q_box {
            for i in 0..self.d {
                let (lo, hi) = qb[i];
                if !(lo..=hi).contains(&q[i]) {
                    return Err(Error::OutOfValidity(format!(
                        "momentum component {i} = {:.6} outside [{lo:.4}, {hi:.4}] at node {j}",
                        q[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Numerical Hamiltonian at node `j`.
    pub fn hnum(&self, w: &[f64], j: usize) -> Result<f64> {
        let kk = self.grid.axes();
        match self.flux {
            Flux::LaxFriedrichs => {
                let mut q = [0.0; MAX_DIM];
                self.central_q(w, j, &mut q[..self.d])?;
                let mut h = self.local.eval(j, &q[..self.d])?;
                for k in 0..kk {
                    let (wp, wm) = self.nb(w, k, j);
                    let (wp, wm) = (wp.unwrap_or(w[j]), wm.unwrap_or(w[j]));
                    h -= self.sigma[k] * (wp - 2.0 * w[j] + wm) / (2.0 * self.grid.h[k]);
                }
                Ok(h)
            }
            Flux::Upwind if matches!(self.local, Local::Closed { .. }) => {
                let (m, a, v) = self.closed_parts(j);
                let mut bt = [0.0; MAX_DIM];
                let mut st = [0.0; MAX_DIM];
                self.godunov_terms(w, j, &mut bt[..self.d], &mut st[..self.d]);
                let mut n2 = 0.0;
                for i in 0..self.d {
                    let r = (bt[i] + st[i] * w[j]).max(0.0);
                    n2 += r * r;
                }
                Ok(if m == 1 { a * n2.sqrt() - v } else { a * n2 - v })
            }
            Flux::Upwind => {
                let nc = self.up_nc;
                let mut best = f64::NEG_INFINITY;

                for c in 0..nc {
                    if !self.up_ok[j * nc + c] {
                        continue;
                    }
                    let mut s = self.up_c0[j * nc + c];
                    let a = &self.up_a[(j * nc + c) * kk..(j * nc + c + 1) * kk];
                    for k in 0..kk {
                        let ak = a[k];
                        if ak > 0.0 {
                            let wp = w[self.grid.plus[k][j] as usize];
                            s -= ak * (wp - w[j]) / self.grid.h[k];
                        } else if ak < 0.0 {
                            let wm = w[self.grid.minus[k][j] as usize];
                            s -= ak * (w[j] - wm) / self.grid.h[k];
                        }
                    }
                    if s > best {
                        best = s;
                    }
                }
                Ok(best)
            }
        }
    }

    /// Value at node `j` that zeroes its residual given the neighbours.
    pub fn local_solve(&self, w: &[f64], j: usize) -> Result<f64> {
        let kk = self.grid.axes();
        match self.flux {
            Flux::LaxFriedrichs => {
                let mut q = [0.0; MAX_DIM];
                self.central_q(w, j, &mut q[..self.d])?;
                let h = self.local.eval(j, &q[..self.d])?;
                let mut num = -h;
                let mut den = self.lambda;
                for k in 0..kk {
                    let (wp, wm) = self.nb(w, k, j);
                    match (wp, wm) {
                        (Some(a), Some(b)) => {
                            num += self.sigma[k] * (a + b) / (2.0 * self.grid.h[k]);
                            den += self.sigma[k] / self.grid.h[k];
                        }
                        (Some(a), None) | (None, Some(a)) => {
                            num += self.sigma[k] * a / (2.0 * self.grid.h[k]);
                            den += self.sigma[k] / (2.0 * self.grid.h[k]);
                        }
                        (None, None) => {}
                    }
                }
                if den <= 0.0 {
                    return invalid("degenerate local solve (λ = 0 and no viscosity)");
                }
                Ok(num / den)
            }
            Flux::Upwind if matches!(self.local, Local::Closed { .. }) => {
                let (m, a, v) = self.closed_parts(j);
                let mut bt = [0.0; MAX_DIM];
                let mut st = [0.0; MAX_DIM];
                self.godunov_terms(w, j, &mut bt[..self.d], &mut st[..self.d]);
                closed_local_root(self.lambda, m, a, v, &bt[..self.d], &st[..self.d])
            }
            Flux::Upwind => {
                let nc = self.up_nc;
                let mut best = f64::INFINITY;

                for c in 0..nc {
                    if !self.up_ok[j * nc + c] {
                        continue;
                    }
                    let mut num = -self.up_c0[j * nc + c];
                    let mut den = self.lambda;
                    let a = &self.up_a[(j * nc + c) * kk..(j * nc + c + 1) * kk];
                    for k in 0..kk {
                        let ak = a[k];
                        if ak > 0.0 {
                            num += ak * w[self.grid.plus[k][j] as usize] / self.grid.h[k];
                            den += ak / self.grid.h[k];
                        } else if ak < 0.0 {
                            num -= ak * w[self.grid.minus[k][j] as usize] / self.grid.h[k];
                            den -= ak / self.grid.h[k];
                        }
                    }
                    if den <= 0.0 {
                        // λ = 0 and a resting control: no information.
                        continue;
                    }
                    let v = num / den;
                    if v < best {
                        best = v;
                    }
                }
                if best.is_finite() {
                    Ok(best)
                } else {
                    invalid("degenerate local solve")
                }
            }
        }
    }

    /// Residual `λw + H_num(w)` at every free node (0 on pinned nodes).
    pub fn residual(&self, w: &[f64], r: &mut [f64]) -> Result<ResidualStats> {
        for j in 0..self.grid.len {
            r[j] = if self.grid.is_fixed(j) { 0.0 } else { self.lambda * w[j] + self.hnum(w, j)? };
        }
        Ok(self.stats(r))
    }

    fn stats(&self, r: &[f64]) -> ResidualStats {
        let mut s = ResidualStats { max_abs: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY, mean: 0.0 };
        let mut n = 0usize;
        for j in 0..self.grid.len {
            if self.grid.is_fixed(j) {
                continue;
            }
            let v = r[j];
            s.max_abs = s.max_abs.max(v.abs());
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            s.mean += v;
            n += 1;
        }
        s.mean /= n.max(1) as f64;
        s
    }

    /// One Jacobi pseudo-time step from `w` into `out`; returns the residual
    /// statistics of `w` (the input).
    pub fn jacobi_step(&self, w: &[f64], out: &mut [f64], r: &mut [f64], tau: f64) -> Result<ResidualStats> {
        let st = self.residual(w, r)?;
        let f = tau / (1.0 + self.lambda * tau);
        for j in 0..self.grid.len {
            out[j] = if self.grid.is_fixed(j) { w[j] } else { w[j] - f * r[j] };
        }
        Ok(st)
    }

    /// One in-place Gauss–Seidel sweep with ordering `o`.
    pub fn gs_sweep(&self, w: &mut [f64], o: usize) -> Result<()> {
        for pos in 0..self.grid.len {
            let j = self.grid.ordered(o, pos);
            if self.grid.is_fixed(j) {
                continue;
            }
            w[j] = self.local_solve(w, j)?;
        }
        Ok(())
    }
}

/// Root of `f(t) = λt + a·N(t)^m − v` with `N(t)² = Σ max(0, Bᵢ + Sᵢt)²`;
/// `f` is continuous and strictly increasing.
fn closed_local_root(lambda: f64, m: u8, a: f64, v: f64, bt: &[f64], st: &[f64]) -> Result<f64> {
    let f = |t: f64| {
        let mut n2 = 0.0;
        for i in 0..bt.len() {
            let r = (bt[i] + st[i] * t).max(0.0);
            n2 += r * r;
        }
        lambda * t + if m == 1 { a * n2.sqrt() } else { a * n2 } - v
    };
    if bt.len() == 1 && lambda > 0.0 {
        // One component: below the breakpoint τ the argument vanishes.
        if !(bt[0].is_finite() && st[0] > 0.0) {
            return Ok(v / lambda);
        }
        let tau = -bt[0] / st[0];
        let e = v - lambda * tau;
        if e <= 0.0 {
            return Ok(v / lambda);
        }
        let k = a * st[0];
        return Ok(tau
            + if m == 1 {
                e / (lambda + k)
            } else {
                let k2 = k * st[0];
                2.0 * e / (lambda + (lambda * lambda + 4.0 * k2 * e).sqrt())
            });
    }
    let mut brk = [0.0f64; MAX_DIM];
    let mut nb = 0;
    for i in 0..bt.len() {
        if bt[i].is_finite() && st[i] > 0.0 {
            brk[nb] = -bt[i] / st[i];
            nb += 1;
        }
    }
    let brk = &mut brk[..nb];
    brk.sort_by(f64::total_cmp);
    // The active set is fixed between consecutive breakpoints.
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &t in brk.iter() {
        if f(t) >= 0.0 {
            hi = t;
            break;
        }
        lo = t;
    }
    if lambda == 0.0 && !lo.is_finite() {
        return invalid("degenerate local solve (λ = 0 and no upwind neighbours)");
    }
    // Solve for the offset s = t − lo to avoid cancellation near the kink.
    let t0 = if lo.is_finite() { lo } else { 0.0 };
    let vs = v - lambda * t0;
    let (mut al, mut be, mut c) = (0.0, 0.0, 0.0);
    if lo.is_finite() {
        for i in 0..bt.len() {
            if bt[i].is_finite() && st[i] > 0.0 && -bt[i] / st[i] <= lo {
                let b0 = bt[i] + st[i] * t0;
                al += st[i] * st[i];
                be += b0 * st[i];
                c += b0 * b0;
            }
        }
    }
    let (qa, qb, qc) = if m == 1 {
        // a²N² = (v − λt)² on the branch v − λt ≥ 0.
        (a * a * al - lambda * lambda, 2.0 * (a * a * be + vs * lambda), a * a * c - vs * vs)
    } else {
        (a * al, lambda + 2.0 * a * be, a * c - vs)
    };
    let mut cands = [f64::NAN; 2];
    if al == 0.0 {
        cands[0] = vs / lambda;
    } else if qa != 0.0 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let qq = -0.5 * (qb + qb.signum() * disc.sqrt());
            cands = [qq / qa, if qq != 0.0 { qc / qq } else { f64::NAN }];
        }
    } else if qb != 0.0 {
        cands[0] = -qc / qb;
    }
    let scale = 1.0 + v.abs() + lo.abs().min(1e12) + hi.abs().min(1e12);
    let slack = 1e-10 * scale;
    let mut best: Option<(f64, f64)> = None;
    for s in cands {
        let t = t0 + s;
        if s.is_finite() && t >= lo - slack && t <= hi + slack && (m != 1 || vs - lambda * s >= -slack) {
            let t = t.clamp(lo, hi);
            let r = f(t).abs();
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((t, r));
            }
        }
    }
    if let Some((t, _)) = best {
        return Ok(t);
    }
    // Fallback: bracket and bisect.
    if !lo.is_finite() {
        let mut step = 1.0;
        lo = hi.min(0.0) - step;
        while f(lo) > 0.0 {
            step *= 2.0;
            lo -= step;
            if !lo.is_finite() {
                return invalid("degenerate local solve");
            }
        }
    }
    if !hi.is_finite() {
        let mut step = 1.0;
        hi = lo.max(0.0) + step;
        while f(hi) < 0.0 {
            step *= 2.0;
            hi += step;
            if !hi.is_finite() {
                return invalid("degenerate local solve");
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {

    pub iterations: usize,
    pub residual: ResidualStats,
}

/// Iterates to `max|λw + H_num(w)| ≤ tol`, starting from `w`.
pub fn solve(op: &Operator, w: &mut Vec<f64>, opts: &SchemeOptions, tol: f64, max_iter: usize) -> Result<SolveStats> {
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let n = op.grid.len;
    if w.len() != n {
        return invalid("initial guess has the wrong length");
    }
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let tau = op.tau();
    let orderings = 1usize << op.grid.axes();
    let mut last = None;
    let mut it = 0usize;
    while it <= max_iter {
        let st = match opts.sweep {
            Sweep::Jacobi => op.jacobi_step(w, &mut tmp, &mut r, tau)?,
            Sweep::GaussSeidel => op.residual(w, &mut r)?,
        };
        if !st.max_abs.is_finite() {
            return Err(Error::NonConvergence { iterations: it, residual: st.max_abs });
        }
        last = Some(st);
        if st.max_abs <= tol.max(roundoff_floor(op, w)) {
            return Ok(SolveStats { iterations: it, residual: st });
        }
        if it == max_iter {
            break;
        }
        let uniform = opts.accelerate
            && op.lambda > 0.0
            && !op.grid.fixed.iter().any(|f| *f)
            && (st.max - st.min) <= 0.25 * st.mean.abs();
        if uniform {
            let shift = st.mean / op.lambda;
            w.iter_mut().for_each(|v| *v -= shift);
            it += 1;
            continue;
        }
        match opts.sweep {
            Sweep::Jacobi => {
                std::mem::swap(w, &mut tmp);
                it += 1;
            }
            Sweep::GaussSeidel => {
                for o in 0..orderings {
                    op.gs_sweep(w, o)?;
                }
                it += orderings;
            }
        }
    }
    Err(Error::NonConvergence { iterations: it, residual: last.map_or(f64::INFINITY, |s| s.max_abs) })
}


/// Residual level below which rounding in `λw` and the difference
/// quotients dominates: `4·ε_mach·max|w|·(λ + Σ_k σ_k/h_k)`.
fn roundoff_floor(op: &Operator, w: &[f64]) -> f64 {
    let wmax = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s: f64 = op.sigma.iter().zip(&op.grid.h).map(|(s, h)| s / h).sum();
    4.0 * f64::EPSILON * wmax * (op.lambda + s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_local(n: usize, a: f64, v: f64, m: u8) -> Local {
        Local::Closed { m, a: vec![a; n], v: vec![v; n] }
    }

    #[test]
    fn neighbours_wrap_and_clip() {
        let g = Grid::torus(&[4, 3]).unwrap();
        assert_eq!(g.len, 12);
        assert_eq!(g.plus(0, g.linear(&[3, 1])), Some(g.linear(&[0, 1])));
        assert_eq!(g.minus(1, g.linear(&[2, 0])), Some(g.linear(&[2, 2])));
        let b = Grid::centered_box(1, 4, 1.0).unwrap();
        assert_eq!(b.plus(0, 4), None);
        assert_eq!(b.minus(0, 0), None);
        let mut c = [0.0];
        b.coords(2, &mut c);
        assert_eq!(c[0], 0.0);
        let dg = Grid::unit_dirichlet(1, 8).unwrap();
        assert!(dg.is_fixed(0) && dg.is_fixed(8) && !dg.is_fixed(4));
    }

    #[test]
    fn orderings_visit_every_node_once() {
        let g = Grid::torus(&[3, 4, 2]).unwrap();
        for o in 0..8 {
            let mut seen = vec![false; g.len];
            for pos in 0..g.len {
                seen[g.ordered(o, pos)] = true;
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn constant_solution_is_exact() {
        let g = Grid::torus(&[8, 8]).unwrap();
        let n = g.len;
        let op = Operator::new(g, 2, vec![0, 1], vec![1.0, 1.0], vec![1.0, 1.0], 0.5, flat_local(n, 1.0, 0.0, 2), Flux::LaxFriedrichs, Some(vec![(-5.0, 5.0); 2])).unwrap();
        for sweep in [Sweep::Jacobi, Sweep::GaussSeidel] {
            let mut w = vec![0.0; n];
            let st = solve(&op, &mut w, &SchemeOptions { sweep, ..Default::default() }, 1e-12, 10_000).unwrap();
            assert!(w.iter().all(|v| (v + 4.0).abs() < 1e-11), "{:?}", &w[..3]);
            assert!(st.residual.max_abs <= 1e-12);
        }
    }

    #[test]
    fn lf_local_solve_zeroes_residual() {
        let g = Grid::torus(&[16]).unwrap();
        let n = g.len;
        let v: Vec<f64> = (0..n).map(|j| 2.0 + (j as f64 * 0.7).sin()).collect();
        let op = Operator::new(g, 1, vec![0], vec![1.0], vec![0.3], 0.1, Local::Closed { m: 1, a: vec![1.0; n], v }, Flux::LaxFriedrichs, Some(vec![(-20.0, 20.0)])).unwrap();
        let mut w: Vec<f64> = (0..n).map(|j| (j as f64).cos()).collect();
        let j = 5;
        w[j] = op.local_solve(&w, j).unwrap();
        let r = op.lambda * w[j] + op.hnum(&w, j).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn upwind_local_solve_zeroes_residual() {
        let g = Grid::torus(&[8, 8]).unwrap();
        let n = g.len;
        let nc = 3;
        let mut b = Vec::new();
        let mut gg = Vec::new();
        for j in 0..n {
            for c in 0..nc {
                b.push(c as f64 - 1.0);
                gg.push(2.0 + 0.1 * (j as f64).sin());
            }
        }
        let op = Operator::new(g, 1, vec![0, 0], vec![1.0, 0.5], vec![0.2], 0.05, Local::Control { nc, b, g: gg }, Flux::Upwind, None).unwrap();
        let mut w: Vec<f64> = (0..n).map(|j| (j as f64 * 0.3).sin()).collect();
        for j in [0, 9, 63] {
            w[j] = op.local_solve(&w, j).unwrap();
            let r = op.lambda * w[j] + op.hnum(&w, j).unwrap();
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn lf_validity_box_enforced() {
        let g = Grid::torus(&[8]).unwrap();
        let op = Operator::new(g, 1, vec![0], vec![1.0], vec![0.0], 1.0, flat_local(8, 1.0, 0.0, 1), Flux::LaxFriedrichs, Some(vec![(-1.0, 1.0)])).unwrap();
        let w: Vec<f64> = (0..8).map(|j| if j == 3 { 10.0 } else { 0.0 }).collect();
        assert!(matches!(op.hnum(&w, 2), Err(Error::OutOfValidity(_))));
    }

    #[test]
    fn state_constraint_excludes_outward_controls() {
        let g = Grid::centered_box(1, 4, 1.0).unwrap();
        let n = g.len;
        let b: Vec<f64> = (0..n).flat_map(|_| [-1.0, 1.0]).collect();
        let gg = vec![1.0; 2 * n];
        let op = Operator::new(g, 1, vec![0], vec![1.0], vec![5.0], 1.0, Local::Control { nc: 2, b, g: gg }, Flux::Upwind, None).unwrap();
        // At the right edge only α = −1 is admissible: H = −(−1)(5) − 1 + D⁻ term.
        let w = vec![0.0; n];
        assert_eq!(op.hnum(&w, n - 1).unwrap(), 4.0);
        // At the left edge only α = +1: H = −5 − 1.
        assert_eq!(op.hnum(&w, 0).unwrap(), -6.0);
    }

    #[test]
    fn closed_upwind_matches_three_control_form() {
        // a|q| − v with a ≡ 1 is sup over α ∈ {−1, 0, 1} of −αq − v.
        let g = Grid::torus(&[8, 8]).unwrap();
        let n = g.len;
        let v: Vec<f64> = (0..n).map(|j| 2.0 + (j as f64 * 0.37).sin()).collect();
        let gam = vec![1.0, -0.7];
        let closed = Operator::new(g.clone(), 1, vec![0, 0], gam.clone(), vec![0.4], 0.1, Local::Closed { m: 1, a: vec![1.0; n], v: v.clone() }, Flux::Upwind, Some(vec![(-50.0, 50.0)])).unwrap();
        let b: Vec<f64> = (0..n).flat_map(|_| [-1.0, 0.0, 1.0]).collect();
        let gg: Vec<f64> = v.iter().flat_map(|x| [*x; 3]).collect();
        let ctrl = Operator::new(g, 1, vec![0, 0], gam, vec![0.4], 0.1, Local::Control { nc: 3, b, g: gg }, Flux::Upwind, None).unwrap();
        let w: Vec<f64> = (0..n).map(|j| 3.0 * (j as f64 * 1.3).cos()).collect();
        for j in 0..n {
            let a = closed.hnum(&w, j).unwrap();
            let c = ctrl.hnum(&w, j).unwrap();
            assert!((a - c).abs() < 1e-12, "{a} {c}");
            let s1 = closed.local_solve(&w, j).unwrap();
            let s2 = ctrl.local_solve(&w, j).unwrap();
            assert!((s1 - s2).abs() < 1e-10, "{s1} {s2}");
        }
    }

    #[test]
    fn closed_upwind_local_solve_zeroes_residual() {
        let g = Grid::torus(&[8, 6, 8, 6]).unwrap();
        let n = g.len;
        let v: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * (j as f64 * 0.11).sin()).collect();
        let a: Vec<f64> = (0..n).map(|j| 1.0 + 0.3 * (j as f64 * 0.07).cos()).collect();
        let w0: Vec<f64> = (0..n).map(|j| 5.0 * (j as f64 * 0.9).sin()).collect();
        for m in [1u8, 2] {
            for lambda in [1e-3, 0.5] {
                let op = Operator::new(g.clone(), 2, vec![0, 1, 0, 1], vec![1.0, 1.0, 1.4, -0.5], vec![0.3, -1.2], lambda, Local::Closed { m, a: a.clone(), v: v.clone() }, Flux::Upwind, Some(vec![(-10.0, 10.0); 2])).unwrap();
                let mut w = w0.clone();
                for j in (0..n).step_by(97) {
                    w[j] = op.local_solve(&w, j).unwrap();
                    let r = op.lambda * w[j] + op.hnum(&w, j).unwrap();
                    assert!(r.abs() < 1e-8 * (1.0 + w[j].abs()), "m={m} λ={lambda} r={r}");
                }
            }
        }
    }

    #[test]
    fn closed_upwind_at_box_edge_uses_inward_data_only() {
        let g = Grid::centered_box(1, 4, 1.0).unwrap();
        let n = g.len;
        let op = Operator::new(g, 1, vec![0], vec![1.0], vec![0.0], 1.0, Local::Closed { m: 1, a: vec![1.0; n], v: vec![1.0; n] }, Flux::Upwind, Some(vec![(-5.0, 5.0)])).unwrap();
        let mut w = vec![0.0; n];
        w[n - 2] = -2.0;
        // Right edge: only the drift pointing inward (backward difference).
        assert_eq!(op.hnum(&w, n - 1).unwrap(), 4.0 - 1.0);
        w[n - 2] = 2.0;
        assert_eq!(op.hnum(&w, n - 1).unwrap(), -1.0);
    }
}
