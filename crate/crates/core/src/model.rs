//! Lattice potentials with exact derivatives up to third order.
//!
//! Every bundled potential is a sum of a pair term over neighbouring sites,
//! a pair term against pinned boundary sites (fixed ends), and an on-site term:
//!
//! ```text
//! V(q) = Σ_<ij> φ(q_j − q_i) + Σ_walls φ(q_s) + Σ_i u(q_i)
//! ```
//!
//! so the Hessian is nonzero only on the diagonal and on neighbour pairs, and a
//! third partial ∂³_ijk V is nonzero only when i, j, k sit on a single bond.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Boundary sites couple to pinned ghost sites at q = 0.
    Fixed,
    Periodic,
}

/// Hypercubic lattice of `sites_per_side^dimension` sites, one degree of
/// freedom per site.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeTopology {
    dimension: usize,
    sites_per_side: usize,
    boundary: Boundary,
    bonds: Vec<(usize, usize)>,
    walls: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    site_bonds: Vec<Vec<usize>>,
}

impl LatticeTopology {
    pub fn new(dimension: usize, sites_per_side: usize, boundary: Boundary) -> Result<Self> {
        if !(1..=2).contains(&dimension) {
            return Err(invalid("dimension", "must be 1 or 2"));
        }
        if sites_per_side == 0 {
            return Err(invalid("sites_per_side", "must be positive"));
        }
        if boundary == Boundary::Periodic && sites_per_side < 3 {
            return Err(invalid(
                "sites_per_side",
                "periodic lattices need at least 3 sites per side",
            ));
        }
        let m = sites_per_side;
        let n = m.pow(dimension as u32);
        let mut bonds = Vec::new();
        let mut walls = Vec::new();
        let site = |x: usize, y: usize| x + m * y;
        let rows = if dimension == 1 { 1 } else { m };
        for y in 0..rows {
            for x in 0..m {
                let s = site(x, y);
                // bond to the right
                if x + 1 < m {
                    bonds.push((s, site(x + 1, y)));
                } else if boundary == Boundary::Periodic {
                    bonds.push((site(0, y), s));
                }
                if dimension == 2 {
                    if y + 1 < m {
                        bonds.push((s, site(x, y + 1)));
                    } else if boundary == Boundary::Periodic {
                        bonds.push((site(x, 0), s));
                    }
                }
                if boundary == Boundary::Fixed {
                    if x == 0 {
                        walls.push(s);
                    }
                    if x + 1 == m {
                        walls.push(s);
                    }
                    if dimension == 2 {
                        if y == 0 {
                            walls.push(s);
                        }
                        if y + 1 == m {
                            walls.push(s);
                        }
                    }
                }
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut site_bonds = vec![Vec::new(); n];
        for (b, &(i, j)) in bonds.iter().enumerate() {
            neighbors[i].push(j);
            neighbors[j].push(i);
            site_bonds[i].push(b);
            site_bonds[j].push(b);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            dimension,
            sites_per_side,
            boundary,
            bonds,
            walls,
            neighbors,
            site_bonds,
        })
    }

    pub fn chain(n: usize, boundary: Boundary) -> Result<Self> {
        Self::new(1, n, boundary)
    }

    /// Number of degrees of freedom.
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn sites_per_side(&self) -> usize {
        self.sites_per_side
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Interior bonds `(i, j)`; the bond variable is `q_j − q_i`.
    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    /// Sites coupled to a pinned ghost site, one entry per wall bond.
    pub fn walls(&self) -> &[usize] {
        &self.walls
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Coordination number n_p of the lattice, counting pinned ghosts.
    pub fn coordination(&self) -> usize {
        2 * self.dimension
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// V = ½ Σ q_i². Validation oracle only.
    Harmonic,
    /// V = Σ_bonds [1 − cos(Δ)].
    CoupledRotators,
    /// V = Σ_bonds [½Δ² + (λ/4)Δ⁴].
    Fpu { lambda: f64 },
    /// V = Σ_bonds ½Δ² + Σ_i [(r/2) q_i² + (u/4) q_i⁴].
    Phi4 { r: f64, u: f64 },
    /// V = c Σ q_i. Zero Hessian everywhere; test hook, not a standard potential.
    Linear { slope: f64 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Harmonic => "harmonic",
            ModelKind::CoupledRotators => "coupled-rotators",
            ModelKind::Fpu { .. } => "fpu",
            ModelKind::Phi4 { .. } => "phi4",
            ModelKind::Linear { .. } => "linear",
        }
    }

    /// Pair function and its first three derivatives.
    #[inline]
    fn pair(&self, d: f64) -> Option<[f64; 4]> {
        match *self {
            ModelKind::CoupledRotators => {
                let (s, c) = d.sin_cos();
                Some([1.0 - c, s, c, -s])
            }
            ModelKind::Fpu { lambda } => {
                let d2 = d * d;
                Some([
                    0.5 * d2 + 0.25 * lambda * d2 * d2,
                    d + lambda * d2 * d,
                    1.0 + 3.0 * lambda * d2,
                    6.0 * lambda * d,
                ])
            }
            ModelKind::Phi4 { .. } => Some([0.5 * d * d, d, 1.0, 0.0]),
            ModelKind::Harmonic | ModelKind::Linear { .. } => None,
        }
    }

    /// On-site function and its first three derivatives.
    #[inline]
    fn onsite(&self, x: f64) -> Option<[f64; 4]> {
        match *self {
            ModelKind::Harmonic => Some([0.5 * x * x, x, 1.0, 0.0]),
            ModelKind::Phi4 { r, u } => {
                let x2 = x * x;
                Some([
                    0.5 * r * x2 + 0.25 * u * x2 * x2,
                    r * x + u * x2 * x,
                    r + 3.0 * u * x2,
                    6.0 * u * x,
                ])
            }
            ModelKind::Linear { slope } => Some([slope * x, slope, 0.0, 0.0]),
            ModelKind::CoupledRotators | ModelKind::Fpu { .. } => None,
        }
    }
}

/// A point of configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl Deref for Configuration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Configuration {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Sparse symmetric Hessian: diagonal plus one entry per bond.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHessian {
    diag: Vec<f64>,
    off: Vec<(usize, usize, f64)>,
}

impl SparseHessian {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn off_diagonal(&self) -> &[(usize, usize, f64)] {
        &self.off
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.off
            .iter()
            .filter(|&&(a, b, _)| (a == i && b == j) || (a == j && b == i))
            .map(|e| e.2)
            .sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, x)| d * x).collect();
        for &(i, j, h) in &self.off {
            y[i] += h * x[j];
            y[j] += h * x[i];
        }
        y
    }

    /// xᵀ H y
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s: f64 = self
            .diag
            .iter()
            .zip(x.iter().zip(y))
            .map(|(d, (a, b))| d * a * b)
            .sum();
        for &(i, j, h) in &self.off {
            s += h * (x[i] * y[j] + x[j] * y[i]);
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag));
        for &(i, j, h) in &self.off {
            m[(i, j)] += h;
            m[(j, i)] += h;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }
}

/// A lattice potential V_N with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    topology: LatticeTopology,
    kind: ModelKind,
}

impl PotentialModel {
    pub fn new(topology: LatticeTopology, kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Fpu { lambda } if !lambda.is_finite() => {
                return Err(invalid("lambda", "must be finite"))
            }
            ModelKind::Phi4 { r, u } if !(r.is_finite() && u.is_finite() && u >= 0.0) => {
                return Err(invalid("u", "quartic coefficient must be finite and >= 0"))
            }
            ModelKind::Linear { slope } if !slope.is_finite() => {
                return Err(invalid("slope", "must be finite"))
            }
            _ => {}
        }
        Ok(Self { topology, kind })
    }

    pub fn harmonic(n: usize) -> Self {
        Self::chain(n, ModelKind::Harmonic)
    }

    /// Fixed-end rotator chain, q_0 = q_{N+1} = 0.
    pub fn coupled_rotators(n: usize) -> Self {
        Self::chain(n, ModelKind::CoupledRotators)
    }

    pub fn fpu(n: usize, lambda: f64) -> Self {
        Self::chain(n, ModelKind::Fpu { lambda })
    }

    pub fn phi4(n: usize, r: f64, u: f64) -> Self {
        Self::chain(n, ModelKind::Phi4 { r, u })
    }

    pub fn linear(n: usize, slope: f64) -> Self {
        Self::chain(n, ModelKind::Linear { slope })
    }

    fn chain(n: usize, kind: ModelKind) -> Self {
        let topology = LatticeTopology::chain(n, Boundary::Fixed).expect("n > 0");
        Self::new(topology, kind).expect("valid parameters")
    }

    pub fn topology(&self) -> &LatticeTopology {
        &self.topology
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    /// Coordinates are angles living on a torus.
    pub fn is_angular(&self) -> bool {
        matches!(self.kind, ModelKind::CoupledRotators)
    }

    /// Rotators on a periodic lattice carry a uniform-shift zero mode.
    pub fn has_shift_zero_mode(&self) -> bool {
        self.is_angular() && self.topology.boundary == Boundary::Periodic
    }

    /// Lower bound B with V_N ≥ −N·B, or `None` for potentials unbounded below.
    pub fn stability_bound(&self) -> Option<f64> {
        match self.kind {
            ModelKind::Harmonic | ModelKind::CoupledRotators => Some(0.0),
            ModelKind::Fpu { lambda } => (lambda >= 0.0).then_some(0.0),
            ModelKind::Phi4 { r, u } => {
                if r >= 0.0 {
                    Some(0.0)
                } else if u > 0.0 {
                    Some(r * r / (4.0 * u))
                } else {
                    None
                }
            }
            ModelKind::Linear { .. } => None,
        }
    }

    /// Smallest and largest attainable values of V, where known in closed form.
    pub fn energy_range(&self) -> (f64, f64) {
        let n = self.n() as f64;
        match self.kind {
            ModelKind::CoupledRotators => {
                let bonds = (self.topology.bonds.len() + self.topology.walls.len()) as f64;
                (0.0, 2.0 * bonds)
            }
            ModelKind::Linear { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (
                -n * self.stability_bound().unwrap_or(f64::INFINITY),
                f64::INFINITY,
            ),
        }
    }

    /// Wrap angular coordinates to (−π, π]; no-op otherwise.
    pub fn normalize(&self, q: &mut [f64]) {
        if self.is_angular() {
            for x in q.iter_mut() {
                *x = wrap_angle(*x);
            }
        }
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(self.evaluate_unchecked(q))
    }

    pub(crate) fn evaluate_unchecked(&self, q: &[f64]) -> f64 {
        let mut v = 0.0;
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                v += p[0];
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                v += p[0];
            }
        }
        for &x in q {
            if let Some(o) = self.kind.onsite(x) {
                v += o[0];
            }
        }
        v
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        let mut g = vec![0.0; q.len()];
        self.gradient_into(q, &mut g);
        Ok(g)
    }

    pub(crate) fn gradient_into(&self, q: &[f64], g: &mut [f64]) {
        for (gi, &x) in g.iter_mut().zip(q) {
            *gi = self.kind.onsite(x).map_or(0.0, |o| o[1]);
        }
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                g[j] += p[1];
                g[i] -= p[1];
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                g[s] += p[1];
            }
        }
    }

    /// Energy and gradient in one pass.
    pub(crate) fn energy_gradient(&self, q: &[f64], g: &mut [f64]) -> f64 {
        let mut v = 0.0;
        for (gi, &x) in g.iter_mut().zip(q) {
            *gi = 0.0;
            if let Some(o) = self.kind.onsite(x) {
                v += o[0];
                *gi = o[1];
            }
        }
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                v += p[0];
                g[j] += p[1];
                g[i] -= p[1];
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                v += p[0];
                g[s] += p[1];
            }
        }
        v
    }

    pub fn hessian(&self, q: &[f64]) -> Result<SparseHessian> {
        self.check(q)?;
        Ok(self.hessian_unchecked(q))
    }

    pub(crate) fn hessian_unchecked(&self, q: &[f64]) -> SparseHessian {
        let mut diag: Vec<f64> = q
            .iter()
            .map(|&x| self.kind.onsite(x).map_or(0.0, |o| o[2]))
            .collect();
        let mut off = Vec::with_capacity(self.topology.bonds.len());
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                diag[i] += p[2];
                diag[j] += p[2];
                off.push((i, j, -p[2]));
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                diag[s] += p[2];
            }
        }
        SparseHessian { diag, off }
    }

    /// ∂³V/∂q_i∂q_j∂q_k.
    pub fn third_partial(&self, q: &[f64], i: usize, j: usize, k: usize) -> Result<f64> {
        self.check(q)?;
        let n = self.n();
        for idx in [i, j, k] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        let mut t = 0.0;
        if i == j && j == k {
            if let Some(o) = self.kind.onsite(q[i]) {
                t += o[3];
            }
            let walls = self.topology.walls.iter().filter(|&&s| s == i).count();
            if walls > 0 {
                if let Some(p) = self.kind.pair(q[i]) {
                    t += walls as f64 * p[3];
                }
            }
        }
        for &b in &self.topology.site_bonds[i] {
            let (a, c) = self.topology.bonds[b];
            let sign = |x: usize| {
                if x == c {
                    Some(1.0)
                } else if x == a {
                    Some(-1.0)
                } else {
                    None
                }
            };
            if let (Some(si), Some(sj), Some(sk)) = (sign(i), sign(j), sign(k)) {
                if let Some(p) = self.kind.pair(q[c] - q[a]) {
                    t += si * sj * sk * p[3];
                }
            }
        }
        Ok(t)
    }

    /// Σ_ij w_i ∂³_ijj V.
    pub fn third_trace_contract(&self, q: &[f64], w: &[f64]) -> f64 {
        let mut t: f64 = q
            .iter()
            .zip(w)
            .map(|(&x, &wi)| self.kind.onsite(x).map_or(0.0, |o| o[3] * wi))
            .sum();
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                t += 2.0 * p[3] * (w[j] - w[i]);
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                t += p[3] * w[s];
            }
        }
        t
    }

    /// Σ_ijk ∂³_ijk V w_i w_j w_k.
    pub fn third_cubic_contract(&self, q: &[f64], w: &[f64]) -> f64 {
        let mut t: f64 = q
            .iter()
            .zip(w)
            .map(|(&x, &wi)| self.kind.onsite(x).map_or(0.0, |o| o[3] * wi * wi * wi))
            .sum();
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                let d = w[j] - w[i];
                t += p[3] * d * d * d;
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                t += p[3] * w[s] * w[s] * w[s];
            }
        }
        t
    }

    /// Per-bond energies in bond order followed by wall bonds (rotators:
    /// 1 − cos Δ). Empty for potentials without a pair term.
    pub fn bond_energies(&self, q: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for &(i, j) in &self.topology.bonds {
            if let Some(p) = self.kind.pair(q[j] - q[i]) {
                out.push(p[0]);
            }
        }
        for &s in &self.topology.walls {
            if let Some(p) = self.kind.pair(q[s]) {
                out.push(p[0]);
            }
        }
        out
    }
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = x % two_pi;
    if y <= -PI {
        y += two_pi;
    } else if y > PI {
        y -= two_pi;
    }
    y
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
