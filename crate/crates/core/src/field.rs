//! Space-time grids, fields on them, the cut-off heat solve, mollification
//! kernels and Hölder-type estimators.
//!
//! A grid stores values on a coarse time lattice of step `dt`; the heat solver
//! runs `stride` explicit substeps of size `k` between two stored levels.

use std::collections::HashMap;
use std::path::Path as FsPath;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::symtree::MAX_DIM;
use crate::{Error, Scalar};

#[inline]
pub(crate) fn sc<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite conversion")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// Spatial half-width: nodes run over `[-s, s]^d`.
    pub s: f64,
    pub t0: f64,
    pub t1: f64,
    pub h: f64,
    /// Solver substep.
    pub k: f64,
    /// Substeps per stored level.
    pub stride: usize,
    pub nx: usize,
    pub nt: usize,
    /// Boundary handling: always zero Dirichlet on the spatial box.
    pub boundary: String,
}

impl Grid {
    pub fn new(dim: usize, s: f64, t0: f64, t1: f64, h: f64, k: f64, stride: usize) -> Result<Grid, Error> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if !(h > 0.0 && k > 0.0 && s > 0.0 && t1 > t0 && stride > 0) {
            return Err(Error::Config("grid steps and extents must be positive".into()));
        }
        if k > h * h / (2.0 * dim as f64) * (1.0 + 1e-12) {
            return Err(Error::Config(format!("unstable time step: k = {k} > h²/(2d) = {}", h * h / (2.0 * dim as f64))));
        }
        let nx = (2.0 * s / h).round() as usize + 1;
        let dt = k * stride as f64;
        let nt = ((t1 - t0) / dt).round() as usize + 1;
        let total = nt.checked_mul(nx.pow(dim as u32)).ok_or_else(|| Error::Config("grid too large".into()))?;
        if total > 60_000_000 {
            return Err(Error::Config(format!("grid with {total} nodes exceeds memory budget")));
        }
        Ok(Grid { dim, s, t0, t1: t0 + (nt - 1) as f64 * dt, h, k, stride, nx, nt, boundary: "dirichlet0".into() })
    }

    /// Grid with `k = h²/(4d)` and stored levels every `4h²`.
    pub fn with_resolution(dim: usize, s: f64, t0: f64, t1: f64, h: f64) -> Result<Grid, Error> {
        Grid::new(dim, s, t0, t1, h, h * h / (4.0 * dim as f64), 16 * dim)
    }

    pub fn default_1d() -> Grid {
        Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 64.0).expect("default grid")
    }

    /// Half the default resolution, for the larger tree universes.
    pub fn coarse_1d() -> Grid {
        Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 32.0).expect("coarse grid")
    }

    /// Parse `default`, `coarse`, `fine`, `h,k,S` (stored levels about `4h²` apart) or `d,S,T0,T1,h`.
    pub fn parse(spec: &str, dim: usize) -> Result<Grid, Error> {
        let base = |h: f64| Grid::with_resolution(dim, 3.0, -0.5, 1.1, h);
        match spec {
            "default" => base(1.0 / 64.0),
            "coarse" => base(1.0 / 32.0),
            "fine" => base(1.0 / 128.0),
            _ => {
                let v: Vec<f64> = spec
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("grid '{spec}': {e}")))?;
                match v.len() {
                    3 => {
                        let stride = ((4.0 * v[0] * v[0] / v[1]).round() as usize).max(1);
                        Grid::new(dim, v[2], -0.5, 1.1, v[0], v[1], stride)
                    }
                    5 => Grid::with_resolution(v[0] as usize, v[1], v[2], v[3], v[4]),
                    _ => Err(Error::Parse(format!("grid '{spec}': expected h,k,S or d,S,T0,T1,h"))),
                }
            }
        }
    }

    pub fn dt(&self) -> f64 {
        self.k * self.stride as f64
    }

    pub fn spatial_len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.nt * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major stride of spatial axis `i`.
    pub fn axis_stride(&self, i: usize) -> usize {
        self.nx.pow((self.dim - 1 - i) as u32)
    }

    pub fn node(&self, n: usize, j: &[usize]) -> usize {
        n * self.spatial_len() + (0..self.dim).map(|i| j[i] * self.axis_stride(i)).sum::<usize>()
    }

    pub fn split(&self, node: usize) -> (usize, [usize; MAX_DIM]) {
        let sl = self.spatial_len();
        let (n, mut r) = (node / sl, node % sl);
        let mut j = [0; MAX_DIM];
        for i in 0..self.dim {
            let st = self.axis_stride(i);
            j[i] = r / st;
            r %= st;
        }
        (n, j)
    }

    pub fn t_of(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt()
    }

    pub fn x_of(&self, j: usize) -> f64 {
        -self.s + j as f64 * self.h
    }

    pub fn coords(&self, node: usize) -> (f64, [f64; MAX_DIM]) {
        let (n, j) = self.split(node);
        let mut x = [0.0; MAX_DIM];
        for i in 0..self.dim {
            x[i] = self.x_of(j[i]);
        }
        (self.t_of(n), x)
    }

    pub fn nearest(&self, t: f64, x: &[f64]) -> Result<usize, Error> {
        let n = ((t - self.t0) / self.dt()).round();
        if n < 0.0 || n as usize >= self.nt {
            return Err(Error::Domain(format!("time {t} outside grid")));
        }
        let mut j = [0; MAX_DIM];
        for i in 0..self.dim {
            let ji = ((x[i] + self.s) / self.h).round();
            if ji < 0.0 || ji as usize >= self.nx {
                return Err(Error::Domain(format!("coordinate {} outside grid", x[i])));
            }
            j[i] = ji as usize;
        }
        Ok(self.node(n as usize, &j))
    }

    /// Parabolic distance `max(√|t−t̄|, |x−x̄|_∞)`.
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        let (ta, xa) = self.coords(a);
        let (tb, xb) = self.coords(b);
        let mut m = (ta - tb).abs().sqrt();
        for i in 0..self.dim {
            m = m.max((xa[i] - xb[i]).abs());
        }
        m
    }

    pub fn is_boundary(&self, j: &[usize]) -> bool {
        (0..self.dim).any(|i| j[i] == 0 || j[i] + 1 == self.nx)
    }

    /// Whether the node lies in `D_R = (R², 1) × {|x| < 1 − R}`.
    pub fn in_cylinder(&self, node: usize, r: f64) -> bool {
        let (t, x) = self.coords(node);
        t > r * r - 1e-12 && t < 1.0 + 1e-12 && (0..self.dim).all(|i| x[i].abs() < 1.0 - r + 1e-12)
    }

    /// Nodes of the closed cylinder `[R², 1] × {|x| ≤ 1 − R}`.
    pub fn cylinder_nodes(&self, r: f64) -> Vec<usize> {
        (0..self.len()).filter(|&z| self.in_cylinder(z, r)).collect()
    }

    /// Sup-norm distance from the spatial box boundary, and time since `t0`.
    pub fn room(&self, node: usize) -> (f64, f64) {
        let (t, x) = self.coords(node);
        let mut m = f64::INFINITY;
        for i in 0..self.dim {
            m = m.min(self.s - x[i].abs());
        }
        (m, t - self.t0)
    }

    /// Whether `D` and its 2-enlargement fit in the grid (spatially and in time).
    pub fn contains_enlarged_domain(&self) -> (bool, bool) {
        (self.s >= 3.0 - 1e-12, self.t0 <= -2.0 && self.t1 >= 3.0)
    }
}

/// Smooth step: 0 for `r ≤ 0`, 1 for `r ≥ 1`.
fn smooth_step(r: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let (a, b) = (f(r), f(1.0 - r));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Spatial cut-off: 1 for `|x_i| ≤ 1.5` in every coordinate, 0 once some `|x_i| ≥ 2`.
/// Constant in time on any grid that stays within `(−1, 2)`.
pub fn rho(x: &[f64]) -> f64 {
    x.iter().map(|&xi| smooth_step((2.0 - xi.abs()) / 0.5)).product()
}

#[derive(Clone, Debug)]
pub struct Field<S: Scalar = f64> {
    pub grid: Arc<Grid>,
    pub data: Vec<S>,
}

impl<S: Scalar> Field<S> {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Field { grid: grid.clone(), data: vec![S::zero(); grid.len()] }
    }

    pub fn constant(grid: &Arc<Grid>, c: S) -> Self {
        Field { grid: grid.clone(), data: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, &[f64]) -> S) -> Self {
        let data = (0..grid.len())
            .map(|z| {
                let (t, x) = grid.coords(z);
                f(t, &x[..grid.dim])
            })
            .collect();
        Field { grid: grid.clone(), data }
    }

    pub fn from_vec(grid: &Arc<Grid>, data: Vec<S>) -> Result<Self, Error> {
        if data.len() != grid.len() {
            return Err(Error::Config(format!("field length {} != grid length {}", data.len(), grid.len())));
        }
        Ok(Field { grid: grid.clone(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, z: usize) -> S {
        self.data[z]
    }

    pub fn axpy(&mut self, a: S, o: &Field<S>) {
        for (x, y) in self.data.iter_mut().zip(&o.data) {
            *x += a * *y;
        }
    }

    pub fn scaled(&self, a: S) -> Field<S> {
        self.map(|v| v * a)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Field<S> {
        Field { grid: self.grid.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, o: &Field<S>, f: impl Fn(S, S) -> S) -> Field<S> {
        Field { grid: self.grid.clone(), data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn mul(&self, o: &Field<S>) -> Field<S> {
        self.zip_with(o, |a, b| a * b)
    }

    pub fn add(&self, o: &Field<S>) -> Field<S> {
        self.zip_with(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Field<S>) -> Field<S> {
        self.zip_with(o, |a, b| a - b)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_on(&self, nodes: &[usize]) -> S {
        nodes.iter().fold(S::zero(), |m, &z| m.max(self.data[z].abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap()).collect()
    }
}

/// Discrete Laplacian at spatial offset `base` of a time slice.
fn laplacian_at<S: Scalar>(g: &Grid, u: &[S], p: usize, inv_h2: S) -> S {
    let two: S = sc(2.0);
    let mut acc = S::zero();
    for i in 0..g.dim {
        let st = g.axis_stride(i);
        acc += u[p + st] + u[p - st] - two * u[p];
    }
    acc * inv_h2
}

/// Interior spatial offsets of a time slice (no index on the box boundary).
fn interior_offsets(g: &Grid) -> Vec<usize> {
    (0..g.spatial_len())
        .filter(|&p| {
            let (_, j) = g.split(p);
            !g.is_boundary(&j[..g.dim])
        })
        .collect()
}

/// Solve `(∂_t − Δ)u = ρ f` from zero data at `t0`, with zero values on the spatial boundary.
pub fn heat_solve<S: Scalar>(f: &Field<S>) -> Result<Field<S>, Error> {
    let g = &*f.grid;
    if g.k > g.h * g.h / (2.0 * g.dim as f64) * (1.0 + 1e-12) {
        return Err(Error::Numerical("explicit scheme unstable for this grid".into()));
    }
    let sl = g.spatial_len();
    let interior = interior_offsets(g);
    let rho_s: Vec<S> = (0..sl)
        .map(|p| {
            let (_, x) = g.coords(p);
            sc(rho(&x[..g.dim]))
        })
        .collect();
    let k: S = sc(g.k);
    let inv_h2: S = sc(1.0 / (g.h * g.h));
    let mut out = Field::zeros(&f.grid);
    let mut u = vec![S::zero(); sl];
    let mut next = vec![S::zero(); sl];
    for n in 0..g.nt - 1 {
        let (fa, fb) = (&f.data[n * sl..(n + 1) * sl], &f.data[(n + 1) * sl..(n + 2) * sl]);
        for m in 0..g.stride {
            let th: S = sc(m as f64 / g.stride as f64);
            for &p in &interior {
                let src = rho_s[p] * ((S::one() - th) * fa[p] + th * fb[p]);
                next[p] = u[p] + k * (laplacian_at(g, &u, p, inv_h2) + src);
            }
            std::mem::swap(&mut u, &mut next);
        }
        out.data[(n + 1) * sl..(n + 2) * sl].copy_from_slice(&u);
    }
    if !out.is_finite() {
        return Err(Error::Numerical("heat solve produced non-finite values".into()));
    }
    Ok(out)
}

/// Discrete residual `(∂_t − Δ)u − ρ f` at stored levels, trapezoidal in time.
/// Zero on boundary nodes and at the first level.
pub fn heat_residual<S: Scalar>(u: &Field<S>, f: &Field<S>) -> Field<S> {
    let g = &*u.grid;
    let sl = g.spatial_len();
    let inv_h2: S = sc(1.0 / (g.h * g.h));
    let half: S = sc(0.5);
    let dt: S = sc(g.dt());
    let mut r = Field::zeros(&u.grid);
    for p in interior_offsets(g) {
        let (_, x) = g.coords(p);
        let rh: S = sc(rho(&x[..g.dim]));
        for n in 0..g.nt - 1 {
            let (a, b) = (&u.data[n * sl..(n + 1) * sl], &u.data[(n + 1) * sl..(n + 2) * sl]);
            let lap = half * (laplacian_at(g, a, p, inv_h2) + laplacian_at(g, b, p, inv_h2));
            let src = half * rh * (f.data[n * sl + p] + f.data[(n + 1) * sl + p]);
            r.data[(n + 1) * sl + p] = (b[p] - a[p]) / dt - lap - src;
        }
    }
    r
}

/// Centered difference in direction `i`, one-sided on the box boundary.
pub fn grad<S: Scalar>(f: &Field<S>, i: usize) -> Field<S> {
    let g = &*f.grid;
    let st = g.axis_stride(i);
    let (h, h2): (S, S) = (sc(g.h), sc(2.0 * g.h));
    let mut out = Field::zeros(&f.grid);
    for z in 0..g.len() {
        let (_, j) = g.split(z);
        out.data[z] = if j[i] == 0 {
            (f.data[z + st] - f.data[z]) / h
        } else if j[i] + 1 == g.nx {
            (f.data[z] - f.data[z - st]) / h
        } else {
            (f.data[z + st] - f.data[z - st]) / h2
        };
    }
    out
}

/// One kernel tap: weight applied to the value `s` stored levels earlier at spatial offset `off`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub s: usize,
    pub off: [i32; MAX_DIM],
    pub w: f64,
}

/// A discrete space-time kernel supported in the past.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub scale: f64,
    pub depth: usize,
    pub taps: Vec<Tap>,
    /// Largest `s` and largest `|off_i|` over all taps.
    pub reach: (usize, usize),
}

impl Kernel {
    fn from_map(scale: f64, depth: usize, m: HashMap<(usize, [i32; MAX_DIM]), f64>) -> Kernel {
        let mut taps: Vec<Tap> = m.into_iter().map(|((s, off), w)| Tap { s, off, w }).collect();
        taps.sort_by(|a, b| (a.s, a.off).cmp(&(b.s, b.off)));
        let reach = taps.iter().fold((0, 0), |(rs, rx), t| {
            (rs.max(t.s), rx.max(t.off.iter().map(|o| o.unsigned_abs() as usize).max().unwrap_or(0)))
        });
        Kernel { scale, depth, taps, reach }
    }

    pub fn identity() -> Kernel {
        Kernel { scale: 0.0, depth: 0, taps: vec![Tap { s: 0, off: [0; MAX_DIM], w: 1.0 }], reach: (0, 0) }
    }

    /// Base profile `Φ_L`: `(1 − q)⁴₊` with `q² = t/L² + |x|²/L²`, `t ≥ 0`, normalized to sum 1.
    pub fn phi(g: &Grid, l: f64) -> Result<Kernel, Error> {
        if l < 2.0 * g.h * (1.0 - 1e-9) {
            return Err(Error::Config(format!("scale {l} below resolution 2h = {}", 2.0 * g.h)));
        }
        let dt = g.dt();
        let jmax = (l / g.h).ceil() as i32;
        let smax = (l * l / dt).ceil() as usize;
        let width = (2 * jmax + 1) as usize;
        let mut m = HashMap::new();
        let mut total = 0.0;
        for s in 0..=smax {
            for flat in 0..width.pow(g.dim as u32) {
                let mut off = [0i32; MAX_DIM];
                let mut r = flat;
                let mut q2 = s as f64 * dt / (l * l);
                for o in off.iter_mut().take(g.dim) {
                    *o = (r % width) as i32 - jmax;
                    r /= width;
                    q2 += (*o as f64 * g.h / l).powi(2);
                }
                if q2 < 1.0 {
                    let w = (1.0 - q2.sqrt()).powi(4);
                    total += w;
                    m.insert((s, off), w);
                }
            }
        }
        for w in m.values_mut() {
            *w /= total;
        }
        Ok(Kernel::from_map(l, 1, m))
    }

    /// Sparse convolution of two kernels.
    pub fn compose(&self, o: &Kernel) -> Kernel {
        let mut m: HashMap<(usize, [i32; MAX_DIM]), f64> = HashMap::new();
        for a in &self.taps {
            for b in &o.taps {
                let mut off = a.off;
                for i in 0..MAX_DIM {
                    off[i] += b.off[i];
                }
                *m.entry((a.s + b.s, off)).or_default() += a.w * b.w;
            }
        }
        Kernel::from_map(self.scale.max(o.scale), self.depth + o.depth, m)
    }

    /// Largest `n` with `L 2^{-n} ≥ 2h`.
    pub fn default_depth(g: &Grid, l: f64) -> Result<usize, Error> {
        if l < 2.0 * g.h * (1.0 - 1e-9) {
            return Err(Error::Config(format!("scale {l} below resolution 2h = {}", 2.0 * g.h)));
        }
        Ok(((l / (2.0 * g.h)).log2() + 1e-9).floor() as usize)
    }

    /// `Ψ_{L,n} = Φ_{L/2} ∗ … ∗ Φ_{L/2ⁿ}`; `n = 0` is the identity.
    pub fn psi(g: &Grid, l: f64, n: usize) -> Result<Kernel, Error> {
        let mut k = Kernel::identity();
        for m in 1..=n {
            k = k.compose(&Kernel::phi(g, l / f64::powi(2.0, m as i32))?);
        }
        k.scale = l;
        k.depth = n;
        Ok(k)
    }

    pub fn psi_default(g: &Grid, l: f64) -> Result<Kernel, Error> {
        Kernel::psi(g, l, Kernel::default_depth(g, l)?)
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|t| t.w).sum()
    }

    /// Parabolic radius of the support.
    pub fn radius(&self, g: &Grid) -> f64 {
        self.taps.iter().fold(0.0f64, |r, t| {
            let x = t.off.iter().take(g.dim).map(|o| (*o as f64 * g.h).abs()).fold(0.0, f64::max);
            r.max(x).max((t.s as f64 * g.dt()).sqrt())
        })
    }

    /// Whether every tap applied at `z` stays inside the grid.
    pub fn fits(&self, g: &Grid, z: usize) -> bool {
        let (n, j) = g.split(z);
        n >= self.reach.0 && (0..g.dim).all(|i| j[i] >= self.reach.1 && j[i] + self.reach.1 < g.nx)
    }

    /// Flat node offset of a tap.
    pub fn offset(g: &Grid, t: &Tap) -> isize {
        -(t.s as isize) * g.spatial_len() as isize
            - (0..g.dim).map(|i| t.off[i] as isize * g.axis_stride(i) as isize).sum::<isize>()
    }

    /// `(f)` at one node; `None` if the support leaves the grid.
    pub fn apply_at<S: Scalar>(&self, f: &Field<S>, z: usize) -> Option<S> {
        let g = &*f.grid;
        if !self.fits(g, z) {
            return None;
        }
        let mut acc = S::zero();
        for t in &self.taps {
            acc += sc::<S>(t.w) * f.data[(z as isize + Kernel::offset(g, t)) as usize];
        }
        Some(acc)
    }

    /// Convolution over the whole grid, treating values outside the grid as zero.
    pub fn apply<S: Scalar>(&self, f: &Field<S>) -> Field<S> {
        let g = &*f.grid;
        let mut out = Field::zeros(&f.grid);
        let taps: Vec<(S, usize, [i32; MAX_DIM])> = self.taps.iter().map(|t| (sc(t.w), t.s, t.off)).collect();
        for z in 0..g.len() {
            let (n, j) = g.split(z);
            if self.fits(g, z) {
                let mut acc = S::zero();
                for (t, tap) in taps.iter().zip(&self.taps) {
                    acc += t.0 * f.data[(z as isize + Kernel::offset(g, tap)) as usize];
                }
                out.data[z] = acc;
                continue;
            }
            let mut acc = S::zero();
            'tap: for &(w, s, off) in &taps {
                if s > n {
                    continue;
                }
                let mut jj = [0usize; MAX_DIM];
                for i in 0..g.dim {
                    let v = j[i] as i64 - off[i] as i64;
                    if v < 0 || v >= g.nx as i64 {
                        continue 'tap;
                    }
                    jj[i] = v as usize;
                }
                acc += w * f.data[g.node(n - s, &jj[..g.dim])];
            }
            out.data[z] = acc;
        }
        out
    }
}

/// `(f)_{L,n}` over the whole grid by iterated convolution with `Φ_{L/2}, …, Φ_{L/2ⁿ}`.
pub fn mollify<S: Scalar>(f: &Field<S>, l: f64, n: Option<usize>) -> Result<Field<S>, Error> {
    let n = match n {
        Some(n) => n,
        None => Kernel::default_depth(&f.grid, l)?,
    };
    let mut out = f.clone();
    for m in (1..=n).rev() {
        out = Kernel::phi(&f.grid, l / f64::powi(2.0, m as i32))?.apply(&out);
    }
    Ok(out)
}

/// `(f)_L` at a node with the default depth.
pub fn mollify_at<S: Scalar>(f: &Field<S>, l: f64, z: usize) -> Result<Option<S>, Error> {
    Ok(Kernel::psi_default(&f.grid, l)?.apply_at(f, z))
}

/// `max |(f)_L − ((f)_{L2^{-n}})_{L,n}|` over the probe nodes where both sides fit.
pub fn semigroup_residual(f: &Field<f64>, l: f64, n: usize, probes: &[usize]) -> Result<f64, Error> {
    let g = &*f.grid;
    let big = Kernel::default_depth(g, l)?;
    if n > big {
        return Err(Error::Config(format!("semigroup depth {n} exceeds resolvable depth {big}")));
    }
    let lhs = Kernel::psi(g, l, big)?;
    let inner = mollify(f, l / f64::powi(2.0, n as i32), Some(big - n))?;
    let outer = Kernel::psi(g, l, n)?;
    let mut worst = 0.0f64;
    let mut seen = false;
    for &z in probes {
        if let (Some(a), Some(b)) = (lhs.apply_at(f, z), outer.apply_at(&inner, z)) {
            if inner_fits(g, &outer, &lhs, z) {
                worst = worst.max((a - b).abs());
                seen = true;
            }
        }
    }
    if !seen {
        return Err(Error::Domain("no probe node admits the semigroup comparison".into()));
    }
    Ok(worst)
}

/// The inner mollification treats out-of-grid values as zero; only compare where it never has to.
fn inner_fits(g: &Grid, outer: &Kernel, full: &Kernel, z: usize) -> bool {
    let (n, j) = g.split(z);
    let _ = outer;
    n >= full.reach.0 && (0..g.dim).all(|i| j[i] >= full.reach.1 && j[i] + full.reach.1 < g.nx)
}

/// Deterministic subsample of nodes in a region, at most `max` of them.
pub fn probe_nodes(g: &Grid, keep: impl Fn(f64, &[f64]) -> bool, max: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..g.len())
        .filter(|&z| {
            let (t, x) = g.coords(z);
            keep(t, &x[..g.dim])
        })
        .collect();
    if all.len() <= max || max == 0 {
        return all;
    }
    let step = all.len() as f64 / max as f64;
    (0..max).map(|i| all[(i as f64 * step) as usize]).collect()
}

/// Probe nodes in the closed domain `[0,1] × {|x| ≤ 1}`.
pub fn domain_probes(g: &Grid, max: usize) -> Vec<usize> {
    probe_nodes(g, |t, x| (-1e-12..=1.0 + 1e-12).contains(&t) && x.iter().all(|v| v.abs() <= 1.0 + 1e-12), max)
}

/// `max_L sup_z |(f)_L(z)| L^{-α}` over probe nodes whose kernel support stays in the grid.
pub fn neg_holder_seminorm_on(f: &Field<f64>, alpha: f64, scales: &[f64], probes: &[usize]) -> Result<f64, Error> {
    let mut best = 0.0f64;
    let mut seen = false;
    for &l in scales {
        let k = Kernel::psi_default(&f.grid, l)?;
        for &z in probes {
            if let Some(v) = k.apply_at(f, z) {
                best = best.max(v.abs() * l.powf(-alpha));
                seen = true;
            }
        }
    }
    if !seen {
        return Err(Error::Domain("no admissible node for any scale".into()));
    }
    Ok(best)
}

pub fn neg_holder_seminorm(f: &Field<f64>, alpha: f64, scales: &[f64]) -> Result<f64, Error> {
    let probes = domain_probes(&f.grid, 2048);
    neg_holder_seminorm_on(f, alpha, scales, &probes)
}

/// Pairs `(z, z̄)` at dyadic parabolic separations `2^m h` around each probe, along every axis
/// and backwards in time.
pub fn dyadic_pairs(g: &Grid, probes: &[usize], max_sep: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let sl = g.spatial_len() as isize;
    for &z in probes {
        let (n, j) = g.split(z);
        let mut r = g.h;
        while r <= max_sep * (1.0 + 1e-9) {
            let m = (r / g.h).round() as usize;
            for i in 0..g.dim {
                if j[i] + m < g.nx {
                    out.push((z, z + m * g.axis_stride(i)));
                }
                if j[i] >= m {
                    out.push((z, z - m * g.axis_stride(i)));
                }
            }
            let s = (r * r / g.dt()).round() as usize;
            if s >= 1 && n >= s {
                out.push((z, (z as isize - s as isize * sl) as usize));
            }
            r *= 2.0;
        }
    }
    out
}

/// Estimated `[f]_α`: for `α < 1` the plain Hölder quotient, for `1 < α < 2` the
/// quotient of `f(z̄) − f(z) − ∇f(z)·(x̄ − x)` with the centered gradient as `ν`.
pub fn holder_norms(f: &Field<f64>, alpha: f64) -> Result<f64, Error> {
    if !(alpha > 0.0 && alpha < 2.0) || (alpha - 1.0).abs() < 1e-12 {
        return Err(Error::Config(format!("Hölder exponent {alpha} not in (0,1)∪(1,2)")));
    }
    let g = &*f.grid;
    let probes = domain_probes(g, 4096);
    let grads: Vec<Field<f64>> = if alpha > 1.0 { (0..g.dim).map(|i| grad(f, i)).collect() } else { vec![] };
    let mut best = 0.0f64;
    for (z, w) in dyadic_pairs(g, &probes, 0.5) {
        let d = g.dist(z, w);
        let mut diff = f.data[w] - f.data[z];
        if alpha > 1.0 {
            let (_, xz) = g.coords(z);
            let (_, xw) = g.coords(w);
            for i in 0..g.dim {
                diff -= grads[i].data[z] * (xw[i] - xz[i]);
            }
        }
        best = best.max(diff.abs() / d.powf(alpha));
    }
    Ok(best)
}

/// Noise fixtures for the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Zero,
    /// Smooth deterministic trigonometric field with the given amplitude.
    Smooth { amplitude: f64 },
    /// Gaussian white noise on the stored lattice, mollified with `Φ_ε` (`ε = 0` keeps it raw).
    Gaussian { seed: u64, eps: f64 },
}

impl std::str::FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize, d: f64| -> Result<f64, Error> {
            parts.get(i).map_or(Ok(d), |p| p.parse().map_err(|_| Error::Parse(format!("noise '{s}'"))))
        };
        match parts[0] {
            "zero" => Ok(NoiseSpec::Zero),
            "smooth" => Ok(NoiseSpec::Smooth { amplitude: num(1, 1.0)? }),
            "gaussian" => {
                let seed = parts.get(1).map_or(Ok(0), |p| p.parse().map_err(|_| Error::Parse(format!("noise '{s}'"))))?;
                Ok(NoiseSpec::Gaussian { seed, eps: num(2, 1.0 / 32.0)? })
            }
            _ => Err(Error::Parse(format!("unknown noise '{s}' (zero | smooth[:A] | gaussian[:seed[:eps]])"))),
        }
    }
}

pub fn smooth_noise(g: &Arc<Grid>, amplitude: f64) -> Field<f64> {
    Field::from_fn(g, |t, x| {
        let mut v = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let p = 0.7 * i as f64;
            v += (2.0 * std::f64::consts::PI * xi - 1.3 + p).sin() * (std::f64::consts::PI * t).cos()
                + 0.5 * (3.0 * xi + 2.0 * t + p).cos()
                + 0.3 * (5.0 * xi - p).sin() * (1.0 + t * t).recip();
        }
        amplitude * v
    })
}

pub fn gaussian_noise(g: &Arc<Grid>, seed: u64, eps: f64) -> Result<Field<f64>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (g.dt() * g.h.powi(g.dim as i32)).sqrt();
    let data: Vec<f64> = (0..g.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    let raw = Field::from_vec(g, data)?;
    if eps == 0.0 {
        return Ok(raw);
    }
    Ok(Kernel::phi(g, eps)?.apply(&raw))
}

pub fn generate_noise(g: &Arc<Grid>, spec: &NoiseSpec) -> Result<Field<f64>, Error> {
    match *spec {
        NoiseSpec::Zero => Ok(Field::zeros(g)),
        NoiseSpec::Smooth { amplitude } => Ok(smooth_noise(g, amplitude)),
        NoiseSpec::Gaussian { seed, eps } => gaussian_noise(g, seed, eps),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub grid: Grid,
    pub len: usize,
    pub sha256: String,
    pub meta: serde_json::Value,
}

fn encode(f: &Field<f64>) -> Vec<u8> {
    f.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(b: &[u8]) -> String {
    Sha256::digest(b).iter().map(|x| format!("{x:02x}")).collect()
}

/// Write `stem.bin` (little-endian `f64`) and `stem.json`.
pub fn save_field(f: &Field<f64>, stem: &FsPath, meta: serde_json::Value) -> Result<(), Error> {
    let bytes = encode(f);
    let side = Sidecar { grid: (*f.grid).clone(), len: f.len(), sha256: sha_hex(&bytes), meta };
    std::fs::write(stem.with_extension("bin"), &bytes)?;
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side).expect("sidecar json"))?;
    Ok(())
}

pub fn load_field(stem: &FsPath) -> Result<(Field<f64>, serde_json::Value), Error> {
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)
        .map_err(|e| Error::Parse(format!("sidecar: {e}")))?;
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    if sha_hex(&bytes) != side.sha256 {
        return Err(Error::Parse("checksum mismatch".into()));
    }
    if bytes.len() != side.len * 8 || side.len != side.grid.len() {
        return Err(Error::Parse("length mismatch".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Field { grid: Arc::new(side.grid), data }, side.meta))
}
