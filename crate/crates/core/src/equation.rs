//! Tree expansions, renormalised products, the remainder equation and the
//! modelled-distribution quantities `U`, `V`, `V²`, `V^(i)`.
//!
//! Everything here works in `f64` on top of a [`Path`]. Quantities that do not
//! depend on `v` (diagonal values `P_τ = X_{z,z}τ`, the `ν` corrections of
//! `D^X`) are tabulated once per node set in [`RemainderTables`], grouped by
//! the monomial of `(v_1, v_X)` that multiplies them.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_traits::{Num, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coalgebra::{cplus, Forest};
use crate::coeffs::{classify_utau, gamma_is_resonant, IndexSets, UtauKind};
use crate::field::{grad, Field, Grid, Kernel};
use crate::lift::CountertermMap;
use crate::path::{loglog_slope, order_scan, separated, Centering, Pair, Path, Sides, ThreePointResidual};
use crate::report::{relative_residual, Report};
use crate::symtree::{i_of, plus, product_raw, to_f64, Edge, Tree, TreeSet, TreeUniverse};
use crate::{Error, Rational};

/// A coefficient map `z ↦ Θ_z(·)` on `N ∪ W`.
pub trait Coefficients {
    fn theta(&self, t: Tree, z: usize) -> f64;
}

/// `Θ_z(τ) = Υ(τ)[v_1(z), v_X(z)]` on `N`; on `W` the constant `Υ(w)` when
/// `with_w` is set and zero otherwise.
#[derive(Clone, Debug)]
pub struct TreeExpansion {
    pub universe: Arc<TreeUniverse>,
    pub v1: Field,
    pub vx: Vec<Field>,
    pub with_w: bool,
}

impl TreeExpansion {
    pub fn new(universe: &Arc<TreeUniverse>, v1: Field, vx: Vec<Field>, with_w: bool) -> Result<Self, Error> {
        if vx.len() != universe.dim {
            return Err(Error::Config(format!("{} derivative fields for dimension {}", vx.len(), universe.dim)));
        }
        if vx.iter().any(|f| f.grid != v1.grid) {
            return Err(Error::Config("v_1 and v_X live on different grids".into()));
        }
        Ok(TreeExpansion { universe: universe.clone(), v1, vx, with_w })
    }

    /// `Υ(τ)` at `z`, ignoring set membership.
    pub fn upsilon(&self, t: Tree, z: usize) -> f64 {
        let mut v = t.sign() as f64;
        let m1 = t.m_one();
        if m1 > 0 {
            v *= self.v1.data[z].powi(m1 as i32);
        }
        for (i, f) in self.vx.iter().enumerate() {
            let k = t.m_x(i + 1);
            if k > 0 {
                v *= f.data[z].powi(k as i32);
            }
        }
        v
    }
}

impl Coefficients for TreeExpansion {
    fn theta(&self, t: Tree, z: usize) -> f64 {
        let u = &self.universe;
        if u.contains(TreeSet::W, t) {
            return if self.with_w { t.sign() as f64 } else { 0.0 };
        }
        if !u.contains(TreeSet::N, t) {
            return 0.0;
        }
        self.upsilon(t, z)
    }
}

/// The expansion of `X_•I(w)`: coefficient 1 on `w`, zero elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct Planted(pub Tree);

impl Coefficients for Planted {
    fn theta(&self, t: Tree, _z: usize) -> f64 {
        if t == self.0 {
            1.0
        } else {
            0.0
        }
    }
}

fn product_sets(u: &TreeUniverse) -> impl Iterator<Item = Tree> + '_ {
    u.set(TreeSet::NRing).iter().chain(u.set(TreeSet::WRing)).copied()
}

fn renorm_product_over(
    path: &Path<'_>,
    trees: impl Iterator<Item = Tree>,
    th: [&dyn Coefficients; 3],
    cz: &Centering,
) -> Result<f64, Error> {
    let z = cz.node;
    let p = path.pair(z, cz, cz);
    let mut acc = 0.0;
    for t in trees {
        let inner = t.inner().expect("product tree");
        let k = th[0].theta(inner[0], z) * th[1].theta(inner[1], z) * th[2].theta(inner[2], z);
        if k != 0.0 {
            acc += k * p.eval(t)?;
        }
    }
    Ok(acc)
}

/// `Σ_{τ = I(τ₁)I(τ₂)I(τ₃) ∈ N̊ ∪ W̊} Θ¹_z(τ₁)Θ²_z(τ₂)Θ³_z(τ₃) X_{z,z}τ`.
pub fn renorm_product(
    path: &Path<'_>,
    a: &dyn Coefficients,
    b: &dyn Coefficients,
    c: &dyn Coefficients,
    cz: &Centering,
) -> Result<f64, Error> {
    renorm_product_over(path, product_sets(path.universe()), [a, b, c], cz)
}

/// `X_{z,z}Θ(z) = Σ_{τ ∈ N ∪ W} Θ_z(τ) X_{z,z}I(τ)`: the function a coefficient map represents.
pub fn reconstruct_at(path: &Path<'_>, th: &dyn Coefficients, cz: &Centering) -> Result<f64, Error> {
    let z = cz.node;
    let p = path.pair(z, cz, cz);
    let u = path.universe();
    let mut acc = 0.0;
    for &t in u.set(TreeSet::N).iter().chain(u.set(TreeSet::W)) {
        let k = th.theta(t, z);
        if k != 0.0 {
            acc += k * p.eval(i_of(t))?;
        }
    }
    Ok(acc)
}

/// `φ = v + Σ_{w ∈ W} Υ(w) X_•I(w)` on the whole grid.
pub fn assemble_phi(path: &Path<'_>, v: &Field) -> Result<Field, Error> {
    let mut phi = v.clone();
    for &w in path.universe().set(TreeSet::W) {
        phi.axpy(w.sign() as f64, path.lp.g_field(w)?);
    }
    Ok(phi)
}

/// `∂_i φ` with the same centered difference used for `D^X` (`i` 1-based).
pub fn assemble_dphi(path: &Path<'_>, v: &Field, i: usize) -> Result<Field, Error> {
    let mut d = grad(v, i - 1);
    for &w in path.universe().set(TreeSet::W) {
        d.axpy(w.sign() as f64, path.lp.dg_field(w, i)?);
    }
    Ok(d)
}

/// Signed sums of counterterms over `Q`, grouped by the polynomial leaves of the tree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenormConstants<T> {
    pub r1: T,
    pub r_phi: T,
    pub r_phi2: T,
    /// One entry per direction.
    pub r_dphi: Vec<T>,
    /// Patterns `(m_1, m_x)` outside the four named groups.
    pub other: Vec<(u32, Vec<u32>, T)>,
}

fn signed_sums<T: Num + Copy + std::ops::Neg<Output = T>>(u: &TreeUniverse, r: impl Fn(Tree) -> T) -> RenormConstants<T> {
    let mut rc = RenormConstants {
        r1: T::zero(),
        r_phi: T::zero(),
        r_phi2: T::zero(),
        r_dphi: vec![T::zero(); u.dim],
        other: Vec::new(),
    };
    for &q in u.set(TreeSet::Q) {
        let v = r(q);
        if v.is_zero() {
            continue;
        }
        let v = if q.sign() > 0 { v } else { -v };
        let mx = q.m_x_vec(u.dim);
        let nx: u32 = mx.iter().sum();
        match (q.m_one(), nx) {
            (0, 0) => rc.r1 = rc.r1 + v,
            (1, 0) => rc.r_phi = rc.r_phi + v,
            (2, 0) => rc.r_phi2 = rc.r_phi2 + v,
            (0, 1) => {
                let i = mx.iter().position(|&k| k == 1).expect("one X leaf");
                rc.r_dphi[i] = rc.r_dphi[i] + v;
            }
            (m1, _) => match rc.other.iter_mut().find(|e| e.0 == m1 && e.1 == mx) {
                Some(e) => e.2 = e.2 + v,
                None => rc.other.push((m1, mx, v)),
            },
        }
    }
    rc
}

/// `r₁, r_Φ, r_Φ², r_∂Φ`: sums of `(−1)^{(m(τ̄)−1)/2} r(τ̄)` over `Q` split by `(m_1, m_x)`.
pub fn renorm_constants(u: &TreeUniverse, r: &CountertermMap) -> RenormConstants<f64> {
    signed_sums(u, |t| r.get(t))
}

/// [`renorm_constants`] for exact rational counterterms.
pub fn renorm_constants_exact(u: &TreeUniverse, r: &dyn Fn(Tree) -> Rational) -> RenormConstants<Rational> {
    signed_sums(u, r)
}

impl RenormConstants<f64> {
    /// `r₁ + r_Φ φ + r_Φ² φ² + Σ r_∂iΦ ∂_iφ` plus any further patterns.
    pub fn correction(&self, phi: f64, dphi: &[f64]) -> f64 {
        let mut c = self.r1 + self.r_phi * phi + self.r_phi2 * phi * phi;
        for (r, d) in self.r_dphi.iter().zip(dphi) {
            c += r * d;
        }
        for (m1, mx, r) in &self.other {
            let mut m = phi.powi(*m1 as i32);
            for (k, d) in mx.iter().zip(dphi) {
                m *= d.powi(*k as i32);
            }
            c += r * m;
        }
        c
    }
}

/// `v_1^{m_1} Π v_{X_i}^{m_i}`.
fn monomial(m1: u32, mx: &[u32], v: f64, vx: &[f64]) -> f64 {
    let mut m = if m1 == 0 { 1.0 } else { v.powi(m1 as i32) };
    for (k, x) in mx.iter().zip(vx) {
        if *k > 0 {
            m *= x.powi(*k as i32);
        }
    }
    m
}

/// `v`-independent data of `D^X` and of the remainder right-hand side on a node set.
pub struct RemainderTables {
    pub nodes: Vec<usize>,
    /// Per direction, `(k, a_k)` with `a_k = Σ sign(τ̄) ν^i_τ̄` over `τ̄ ∈ N̊`, `|τ̄| < −1`, `m_1(τ̄) = k`.
    dx: Vec<Vec<(u32, Field)>>,
    /// `(m_1, m_x, c)` with `c = Σ sign(τ) P_τ` over `τ ∈ N̊` of that pattern.
    rhs: Vec<(u32, Vec<u32>, Field)>,
}

impl RemainderTables {
    pub fn build(path: &Path<'_>, nodes: &[usize]) -> Result<Self, Error> {
        let u = path.universe();
        let grid = &path.lp.grid;
        let m1 = Rational::from_integer(-1);
        let corr: Vec<Tree> = u.set(TreeSet::NRing).iter().copied().filter(|t| u.order(*t) < m1).collect();
        if let Some(t) = corr.iter().find(|t| t.m_x_total() > 0) {
            return Err(Error::Domain(format!("D^X correction tree {t} carries an X leaf")));
        }
        let mut dx_keys: Vec<u32> = corr.iter().map(|t| t.m_one()).collect();
        dx_keys.sort();
        dx_keys.dedup();
        let mut dx: Vec<Vec<(u32, Field)>> =
            (0..u.dim).map(|_| dx_keys.iter().map(|&k| (k, Field::zeros(grid))).collect()).collect();
        let mut pats: Vec<(u32, Vec<u32>)> = u.set(TreeSet::NRing).iter().map(|t| (t.m_one(), t.m_x_vec(u.dim))).collect();
        pats.sort();
        pats.dedup();
        let mut rhs: Vec<(u32, Vec<u32>, Field)> = pats.into_iter().map(|(a, b)| (a, b, Field::zeros(grid))).collect();
        let slot: HashMap<Tree, usize> = u
            .set(TreeSet::NRing)
            .iter()
            .map(|&t| {
                let key = (t.m_one(), t.m_x_vec(u.dim));
                (t, rhs.iter().position(|e| e.0 == key.0 && e.1 == key.1).expect("pattern"))
            })
            .collect();
        for &z in nodes {
            let c = path.centering(z);
            let p = path.pair(z, &c, &c);
            for &t in u.set(TreeSet::NRing) {
                rhs[slot[&t]].2.data[z] += t.sign() as f64 * p.eval(t)?;
            }
            for &t in &corr {
                let k = dx_keys.iter().position(|&k| k == t.m_one()).expect("key");
                for (i, row) in dx.iter_mut().enumerate() {
                    row[k].1.data[z] += t.sign() as f64 * path.nu(t, i + 1, &c)?;
                }
            }
        }
        Ok(RemainderTables { nodes: nodes.to_vec(), dx, rhs })
    }

    /// `Σ_{τ̄} Υ_z(τ̄) ν^i_τ̄(z)` for `v_1(z) = v`.
    pub fn dx_correction(&self, z: usize, i: usize, v: f64) -> f64 {
        self.dx[i - 1].iter().map(|(k, a)| a.data[z] * v.powi(*k as i32)).sum()
    }

    /// `Σ_{τ ∈ N̊} Υ_z(τ) P_τ(z)` for the point values `v`, `v_X`.
    pub fn rhs_at(&self, z: usize, v: f64, vx: &[f64]) -> f64 {
        self.rhs.iter().map(|(m1, mx, c)| c.data[z] * monomial(*m1, mx, v, vx)).sum()
    }

    /// Monomial patterns present in the right-hand side.
    pub fn patterns(&self) -> Vec<(u32, Vec<u32>)> {
        self.rhs.iter().map(|(a, b, _)| (*a, b.clone())).collect()
    }

    /// `D^X v` on the table nodes (zero elsewhere), with centered differences for `∂_i v`.
    pub fn dx_map(&self, v: &Field) -> Vec<Field> {
        let dim = self.dx.len();
        (1..=dim)
            .map(|i| {
                let g = grad(v, i - 1);
                let mut out = Field::zeros(&v.grid);
                for &z in &self.nodes {
                    out.data[z] = g.data[z] - self.dx_correction(z, i, v.data[z]);
                }
                out
            })
            .collect()
    }

    /// The remainder right-hand side on the table nodes, with `v_X = D^X v`.
    pub fn rhs(&self, v: &Field) -> Field {
        let vx = self.dx_map(v);
        let mut out = Field::zeros(&v.grid);
        let mut buf = vec![0.0; vx.len()];
        for &z in &self.nodes {
            for (b, f) in buf.iter_mut().zip(&vx) {
                *b = f.data[z];
            }
            out.data[z] = self.rhs_at(z, v.data[z], &buf);
        }
        out
    }
}

/// Nodes of the closed domain `[0, 1] × [−1, 1]^d`.
pub fn domain_nodes(g: &Grid) -> Vec<usize> {
    crate::field::domain_probes(g, 0)
}

/// `D^X v`: `∂_i v − Σ_{τ̄ ∈ N̊, |τ̄| < −1} Υ(τ̄) ν^i_τ̄` on the domain nodes.
pub fn dx_map(path: &Path<'_>, v1: &Field) -> Result<Vec<Field>, Error> {
    Ok(RemainderTables::build(path, &domain_nodes(path.grid()))?.dx_map(v1))
}

/// Per-node values entering the cube-formula comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CubeRow {
    pub node: usize,
    pub direct: f64,
    pub formula: f64,
    pub residual: f64,
}

/// `φ^{∘3}` evaluated through the diagonal path against `φ³ − r₁ − r_Φφ − r_Φ²φ² − Σ r_∂iΦ ∂_iφ`,
/// with `v_X = D^X v` and `r` taken from the lift.
pub fn cube_formula_check(path: &Path<'_>, v: &Field, probes: &[usize], tol: f64) -> Result<(Report, Vec<CubeRow>), Error> {
    let u = &path.lp.universe;
    let tables = RemainderTables::build(path, probes)?;
    let vx = tables.dx_map(v);
    let phi_exp = TreeExpansion::new(u, v.clone(), vx, true)?;
    let rc = renorm_constants(u, &path.lp.r);
    let phi = assemble_phi(path, v)?;
    let dphi: Vec<Field> = (1..=u.dim).map(|i| assemble_dphi(path, v, i)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut rep = Report::new();
    let mut worst: Option<CubeRow> = None;
    for &z in probes {
        let c = path.centering(z);
        let direct = renorm_product(path, &phi_exp, &phi_exp, &phi_exp, &c)?;
        let p = phi.data[z];
        let d: Vec<f64> = dphi.iter().map(|f| f.data[z]).collect();
        let corr = rc.correction(p, &d);
        let formula = p * p * p - corr;
        let scale = (p * p * p).abs() + corr.abs();
        let row = CubeRow { node: z, direct, formula, residual: relative_residual(direct, formula, scale) };
        if worst.is_none_or(|w| row.residual > w.residual) {
            worst = Some(row);
        }
        rows.push(row);
    }
    if let Some(w) = worst {
        rep.push_residual("cube_formula", format!("node {}", w.node), w.direct, w.formula, w.residual, tol);
    }
    Ok((rep, rows))
}

/// Ordered triples of `W` whose product lies in `∂W`, selected by the order filter
/// `|w₁| + |w₂| + |w₃| > −8` and by the truncation `|I(w₁)I(w₂)I(w₃)| ≤ 0`.
pub fn dw_by_filter(u: &TreeUniverse) -> Vec<Tree> {
    let ws = u.set(TreeSet::W);
    let bound = Rational::from_integer(-8);
    let mut out = Vec::new();
    for &a in ws {
        for &b in ws {
            for &c in ws {
                if u.order(a) + u.order(b) + u.order(c) <= bound {
                    continue;
                }
                let t = product_raw([i_of(a), i_of(b), i_of(c)]).expect("planted children");
                if u.order(t) <= Rational::zero() {
                    out.push(t);
                }
            }
        }
    }
    out.sort_by(|a, b| a.cmp_structural(*b));
    out
}

/// The right-hand side at one node assembled from its four groups:
/// `−(v∘v∘v + 3Σ Υ(w) v∘v∘I(w) + 3Σ Υ(w₁)Υ(w₂) v∘I(w₁)∘I(w₂) + Σ_{∂W} Υ(w₁)Υ(w₂)Υ(w₃) X_•τ)`,
/// each product summed over `N̊`.
pub fn remainder_rhs_grouped(path: &Path<'_>, v: &TreeExpansion, cz: &Centering) -> Result<f64, Error> {
    let u = path.universe();
    let nring = || u.set(TreeSet::NRing).iter().copied();
    let ws = u.set(TreeSet::W);
    let mut g = renorm_product_over(path, nring(), [v, v, v], cz)?;
    for &w in ws {
        g += 3.0 * w.sign() as f64 * renorm_product_over(path, nring(), [v, v, &Planted(w)], cz)?;
    }
    for &w1 in ws {
        for &w2 in ws {
            let s = (w1.sign() * w2.sign()) as f64;
            g += 3.0 * s * renorm_product_over(path, nring(), [v, &Planted(w1), &Planted(w2)], cz)?;
        }
    }
    let p = path.pair(cz.node, cz, cz);
    for &t in u.set(TreeSet::DW) {
        let inner = t.inner().expect("product");
        let s: i64 = inner.iter().map(|w| w.sign()).product();
        g += s as f64 * p.eval(t)?;
    }
    Ok(-g)
}

/// Direct and grouped right-hand sides at the probes, with `v_X = D^X v`.
pub fn rhs_consistency(path: &Path<'_>, v: &Field, probes: &[usize], tol: f64) -> Result<Report, Error> {
    let u = &path.lp.universe;
    let tables = RemainderTables::build(path, probes)?;
    let vx = tables.dx_map(v);
    let direct = tables.rhs(v);
    let exp = TreeExpansion::new(u, v.clone(), vx, false)?;
    let mut rep = Report::new();
    let filt = dw_by_filter(u);
    let mut set: Vec<Tree> = u.set(TreeSet::DW).to_vec();
    set.sort_by(|a, b| a.cmp_structural(*b));
    rep.push("dw_filter", "dW", filt == set, filt.len(), set.len());
    let mut worst = (0.0f64, 0usize, 0.0, 0.0);
    for &z in probes {
        let c = path.centering(z);
        let g = remainder_rhs_grouped(path, &exp, &c)?;
        let d = direct.data[z];
        let r = relative_residual(d, g, d.abs().max(g.abs()));
        if r >= worst.0 {
            worst = (r, z, d, g);
        }
    }
    rep.push_residual("rhs_grouped", format!("node {}", worst.1), worst.2, worst.3, worst.0, tol);
    Ok(rep)
}

/// Dirichlet data on the parabolic boundary of `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryData {
    Zero,
    Constant { value: f64 },
    /// A smooth random trace scaled so that its sup over the parabolic boundary is `amplitude`.
    Trace { seed: u64, amplitude: f64 },
}

struct TraceModes {
    modes: Vec<[f64; 5]>,
    scale: f64,
}

impl TraceModes {
    fn new(seed: u64, amplitude: f64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<[f64; 5]> = (1..=4)
            .map(|k| {
                [
                    rng.gen_range(-1.0..1.0) / k as f64,
                    k as f64 * std::f64::consts::FRAC_PI_2,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let mut tm = TraceModes { modes, scale: 1.0 };
        let mut sup = 0.0f64;
        let n = 40usize;
        let pts = (n + 1).pow(dim as u32);
        for it in 0..=100 {
            let t = it as f64 / 100.0;
            for flat in 0..pts {
                let mut x = vec![0.0; dim];
                let mut r = flat;
                for xi in x.iter_mut() {
                    *xi = -1.0 + 2.0 * (r % (n + 1)) as f64 / n as f64;
                    r /= n + 1;
                }
                if it == 0 || x.iter().any(|v| v.abs() >= 1.0) {
                    sup = sup.max(tm.raw(t, &x).abs());
                }
            }
        }
        tm.scale = if sup > 0.0 { amplitude / sup } else { 0.0 };
        tm
    }

    fn raw(&self, t: f64, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        self.modes.iter().map(|m| m[0] * (m[1] * s + m[2]).cos() * (1.0 + 0.5 * (m[3] * t * std::f64::consts::TAU + m[4]).sin())).sum()
    }
}

impl BoundaryData {
    /// `zero`, `const:<c>` or `trace:<seed>:<amplitude>`.
    pub fn parse(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|e| Error::Parse(format!("boundary '{s}': {e}")));
        match parts.as_slice() {
            ["zero"] => Ok(BoundaryData::Zero),
            ["const", c] => Ok(BoundaryData::Constant { value: num(c)? }),
            ["trace", seed, a] => Ok(BoundaryData::Trace {
                seed: seed.parse().map_err(|e| Error::Parse(format!("boundary '{s}': {e}")))?,
                amplitude: num(a)?,
            }),
            _ => Err(Error::Parse(format!("boundary '{s}': expected zero, const:c or trace:seed:amp"))),
        }
    }

    fn evaluator(&self, dim: usize) -> Box<dyn Fn(f64, &[f64]) -> f64> {
        match *self {
            BoundaryData::Zero => Box::new(|_, _| 0.0),
            BoundaryData::Constant { value } => Box::new(move |_, _| value),
            BoundaryData::Trace { seed, amplitude } => {
                let tm = TraceModes::new(seed, amplitude, dim);
                Box::new(move |t, x| tm.scale * tm.raw(t, x))
            }
        }
    }
}

/// Knobs of the remainder solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Abort once `|v|` exceeds this value.
    pub cap: f64,
    /// Largest number of splits of one substep.
    pub max_split: usize,
    /// Radii `R` at which `‖v‖_{D_R}` is reported.
    pub radii: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { cap: 1e6, max_split: 1_000_000, radii: vec![0.1, 0.2, 0.25, 0.4, 0.5] }
    }
}

/// Summary of one solver run.
#[derive(Clone, Debug, Serialize)]
pub struct SolveRecord {
    pub boundary: BoundaryData,
    pub config: SolverConfig,
    pub levels: usize,
    pub substeps: usize,
    /// Total explicit updates including splits of stiff substeps.
    pub updates: usize,
    pub max_abs: f64,
    /// `(R, ‖v‖_{D_R})`.
    pub norms: Vec<(f64, f64)>,
}

/// Index bounds of `D` on the grid.
struct DomainBox {
    n0: usize,
    n1: usize,
    jlo: usize,
    jhi: usize,
}

fn domain_box(g: &Grid) -> Result<DomainBox, Error> {
    let level = |t: f64| {
        let n = (t - g.t0) / g.dt();
        if n < -1e-9 || (n - n.round()).abs() > 1e-6 || n.round() as usize >= g.nt {
            Err(Error::Config(format!("time {t} is not a stored level of the grid")))
        } else {
            Ok(n.round() as usize)
        }
    };
    let col = |x: f64| {
        let j = (x + g.s) / g.h;
        if j < -1e-9 || (j - j.round()).abs() > 1e-6 || j.round() as usize >= g.nx {
            Err(Error::Config(format!("x = {x} is not a grid column")))
        } else {
            Ok(j.round() as usize)
        }
    };
    Ok(DomainBox { n0: level(0.0)?, n1: level(1.0)?, jlo: col(-1.0)?, jhi: col(1.0)? })
}

/// Explicit time stepping of `(∂_t − Δ)v = Σ_{τ ∈ N̊} Υ(τ)P_τ` on `D`, with
/// `v_X = D^X v` recomputed at every update and Dirichlet data on the parabolic boundary.
pub fn solve_remainder(tables: &RemainderTables, grid: &Arc<Grid>, data: &BoundaryData, cfg: &SolverConfig) -> Result<(Field, SolveRecord), Error> {
    let g = &**grid;
    let bx = domain_box(g)?;
    let dim = g.dim;
    let sl = g.spatial_len();
    let bvals = data.evaluator(dim);
    let mut offs = Vec::new();
    let mut inner = Vec::new();
    for p in 0..sl {
        let (_, j) = g.split(p);
        if (0..dim).all(|i| j[i] >= bx.jlo && j[i] <= bx.jhi) {
            offs.push(p);
            if (0..dim).all(|i| j[i] > bx.jlo && j[i] < bx.jhi) {
                inner.push(p);
            }
        }
    }
    let edge: Vec<usize> = offs.iter().copied().filter(|p| !inner.contains(p)).collect();
    let xs: Vec<Vec<f64>> = (0..sl).map(|p| g.coords(p).1[..dim].to_vec()).collect();
    let covered = {
        let mut m = vec![false; g.len()];
        for &z in &tables.nodes {
            m[z] = true;
        }
        m
    };
    for n in bx.n0..=bx.n1 {
        if let Some(&p) = inner.iter().find(|&&p| !covered[n * sl + p]) {
            return Err(Error::Config(format!("remainder tables miss node {}", n * sl + p)));
        }
    }
    let mut out = Field::zeros(grid);
    let t_of = |n: usize| g.t_of(n);
    let mut u = vec![0.0; sl];
    for &p in &offs {
        u[p] = bvals(0.0, &xs[p]);
    }
    out.data[bx.n0 * sl..(bx.n0 + 1) * sl].copy_from_slice(&u);
    let inv_h2 = 1.0 / (g.h * g.h);
    let inv_2h = 0.5 / g.h;
    let strides: Vec<usize> = (0..dim).map(|i| g.axis_stride(i)).collect();
    let mut next = u.clone();
    let mut vx = vec![0.0; dim];
    let (mut substeps, mut updates) = (0usize, 0usize);
    let mut max_abs = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stiff = |tables: &RemainderTables, za: usize, u: &[f64]| -> f64 {
        let mut s = 0.0f64;
        for &p in &inner {
            let v = u[p];
            let mut d = 0.0;
            for (m1, mx, c) in &tables.rhs {
                if *m1 >= 1 && mx.iter().all(|&k| k == 0) {
                    d += (*m1 as f64 * c.data[za + p] * v.powi(*m1 as i32 - 1)).abs();
                }
            }
            s = s.max(d);
        }
        s
    };
    for n in bx.n0..bx.n1 {
        let (za, zb) = (n * sl, (n + 1) * sl);
        for m in 0..g.stride {
            let split_rate = stiff(tables, za, &u).max(stiff(tables, zb, &u));
            let split = ((g.k * split_rate / 0.5).ceil() as usize).max(1);
            if split > cfg.max_split {
                return Err(Error::Numerical(format!("step splitting {split} exceeds {} at t = {:.6}", cfg.max_split, t_of(n))));
            }
            let kk = g.k / split as f64;
            for q in 0..split {
                let th = (m as f64 + q as f64 / split as f64) / g.stride as f64;
                for &p in &inner {
                    let v = u[p];
                    let mut lap = 0.0;
                    for (i, &st) in strides.iter().enumerate() {
                        lap += u[p + st] + u[p - st] - 2.0 * v;
                        let d = (u[p + st] - u[p - st]) * inv_2h;
                        vx[i] = d - (1.0 - th) * tables.dx_correction(za + p, i + 1, v) - th * tables.dx_correction(zb + p, i + 1, v);
                    }
                    let rhs = (1.0 - th) * tables.rhs_at(za + p, v, &vx) + th * tables.rhs_at(zb + p, v, &vx);
                    next[p] = v + kk * (lap * inv_h2 + rhs);
                }
                let tn = t_of(n) + (m as f64 + (q + 1) as f64 / split as f64) * g.k;
                for &p in &edge {
                    next[p] = bvals(tn, &xs[p]);
                }
                std::mem::swap(&mut u, &mut next);
                updates += 1;
            }
            substeps += 1;
            for &p in &inner {
                let a = u[p].abs();
                if !a.is_finite() || a > cfg.cap {
                    let (t, x) = g.coords(za + p);
                    return Err(Error::Numerical(format!(
                        "|v| = {a:.3e} exceeds cap {:.1e} near t = {t:.4}, x = {:?} after {updates} updates",
                        cfg.cap,
                        &x[..dim]
                    )));
                }
                max_abs = max_abs.max(a);
            }
            max_abs = edge.iter().fold(max_abs, |m, &p| m.max(u[p].abs()));
        }
        out.data[zb..zb + sl].copy_from_slice(&u);
    }
    let norms = cfg.radii.iter().map(|&r| (r, cylinder_norm(&out, r))).collect();
    let rec = SolveRecord {
        boundary: data.clone(),
        config: cfg.clone(),
        levels: bx.n1 - bx.n0 + 1,
        substeps,
        updates,
        max_abs,
        norms,
    };
    Ok((out, rec))
}

/// `sup |v|` over stored nodes of `D_R`.
pub fn cylinder_norm(v: &Field, r: f64) -> f64 {
    let g = &*v.grid;
    (0..g.len()).filter(|&z| g.in_cylinder(z, r)).fold(0.0f64, |m, z| m.max(v.data[z].abs()))
}

/// A value together with the sum of absolute values of the terms that produced it.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Term {
    pub value: f64,
    pub scale: f64,
}

impl Term {
    fn add(&mut self, v: f64) {
        self.value += v;
        self.scale += v.abs();
    }
}

type CplusRow = Rc<Vec<(Tree, Rational, Forest)>>;

/// Evaluator of `U^τ`, `V`, `V²`, `V^(i)` for one expansion on one path.
pub struct Modelled<'p, 'a> {
    pub path: &'p Path<'a>,
    pub exp: &'p TreeExpansion,
    cplus: RefCell<HashMap<Tree, CplusRow>>,
    sets: RefCell<HashMap<Rational, Rc<IndexSets>>>,
}

impl<'p, 'a> Modelled<'p, 'a> {
    pub fn new(path: &'p Path<'a>, exp: &'p TreeExpansion) -> Self {
        Modelled { path, exp, cplus: RefCell::default(), sets: RefCell::default() }
    }

    fn theta(&self, t: Tree, z: usize) -> f64 {
        self.exp.theta(t, z)
    }

    fn sets(&self, gamma: Rational) -> Rc<IndexSets> {
        self.sets
            .borrow_mut()
            .entry(gamma)
            .or_insert_with(|| Rc::new(IndexSets::new(self.path.universe(), gamma)))
            .clone()
    }

    /// `(τ̄, |τ̄|, C₊(τ, τ̄))` over `τ̄ ∈ N` with non-zero cut.
    fn cplus_row(&self, t: Tree) -> CplusRow {
        if let Some(r) = self.cplus.borrow().get(&t) {
            return r.clone();
        }
        let u = self.path.universe();
        let row: Vec<(Tree, Rational, Forest)> = u
            .set(TreeSet::N)
            .iter()
            .filter_map(|&tb| cplus(t, tb, u.delta).map(|f| (tb, u.order(tb), f)))
            .collect();
        let row = Rc::new(row);
        self.cplus.borrow_mut().insert(t, row.clone());
        row
    }

    /// `U^τ_g(y, x) = Θ_y(τ) − Σ_{τ̄ ∈ N, |τ̄| < g} Θ_x(τ̄) X_{y,x}C₊(τ, τ̄)` for the pair `X_{y,x}`.
    pub fn u(&self, t: Tree, g: Rational, yx: &Pair<'_, '_>) -> Result<Term, Error> {
        let (y, x) = (yx.z(), yx.x());
        let mut acc = Term::default();
        acc.add(self.theta(t, y));
        for (tb, o, f) in self.cplus_row(t).iter() {
            if *o >= g {
                continue;
            }
            let k = self.theta(*tb, x);
            if k != 0.0 {
                acc.add(-k * yx.eval_forest(f)?);
            }
        }
        Ok(acc)
    }

    /// `V_γ(y, x) = Σ_{τ ∈ N, |τ| < γ − 2} Θ_x(τ) X_{y,x}I(τ)`.
    pub fn v(&self, gamma: Rational, yx: &Pair<'_, '_>) -> Result<Term, Error> {
        let x = yx.x();
        let mut acc = Term::default();
        for &t in &self.sets(gamma).v {
            let k = self.theta(t, x);
            if k != 0.0 {
                acc.add(k * yx.eval(i_of(t))?);
            }
        }
        Ok(acc)
    }

    /// `V²_γ(y, x)` over ordered pairs with `|τ₁| + |τ₂| < γ − 4`.
    pub fn v2(&self, gamma: Rational, yx: &Pair<'_, '_>) -> Result<Term, Error> {
        let x = yx.x();
        let mut acc = Term::default();
        for &(a, b) in &self.sets(gamma).v2 {
            let k = self.theta(a, x) * self.theta(b, x);
            if k != 0.0 {
                acc.add(k * yx.eval(i_of(a))? * yx.eval(i_of(b))?);
            }
        }
        Ok(acc)
    }

    /// `V^(i)_γ(y, x) = Σ_{τ ∈ Ñ ∪ {X_i}, |τ| < γ − 1} Θ_x(τ) X_{y,x}I⁺_i(τ)`, `i` 1-based.
    pub fn vi(&self, i: usize, gamma: Rational, yx: &Pair<'_, '_>) -> Result<Term, Error> {
        let x = yx.x();
        let delta = self.path.universe().delta;
        let mut acc = Term::default();
        for &t in &self.sets(gamma).vx[i - 1] {
            let k = self.theta(t, x);
            if k != 0.0 {
                let p = plus(i, t, delta).ok_or_else(|| Error::Domain(format!("I+_{i}({t}) vanishes")))?;
                acc.add(k * yx.eval(p)?);
            }
        }
        Ok(acc)
    }

    /// `U^τ_g(y, x)` through its classified form, `None` for trees outside the classification.
    pub fn u_classified(&self, t: Tree, g: Rational, yx: &Pair<'_, '_>) -> Result<Option<Term>, Error> {
        let Ok(cl) = classify_utau(self.path.universe(), t) else { return Ok(None) };
        let y = yx.z();
        let level = g - self.path.universe().order(t);
        let s = cl.sign as f64;
        let (head, tail) = match cl.kind {
            UtauKind::Zero => return Ok(Some(Term::default())),
            UtauKind::V => (self.exp.v1.data[y], self.v(level, yx)?),
            UtauKind::V2 => (self.exp.v1.data[y].powi(2), self.v2(level, yx)?),
            UtauKind::VX(i) => (self.exp.vx[i - 1].data[y], self.vi(i, level, yx)?),
        };
        Ok(Some(Term { value: s * (head - tail.value), scale: head.abs() + tail.scale }))
    }

    /// Both sides of `U^τ = ±(…)` for one pair. `None` when `τ` is not classified or
    /// `|τ| ≥ g`, where `U^τ_g = Θ_y(τ)` carries no continuity information.
    pub fn one_zero(&self, t: Tree, g: Rational, yx: &Pair<'_, '_>) -> Result<Option<Sides>, Error> {
        if self.path.universe().order(t) >= g {
            return Ok(None);
        }
        let Some(c) = self.u_classified(t, g, yx)? else { return Ok(None) };
        let d = self.u(t, g, yx)?;
        Ok(Some(Sides { lhs: d.value, rhs: c.value, scale: d.scale.max(c.scale) }))
    }

    /// `V_γ(z,x) − V_γ(z,y) + V_γ(y,y) − V_γ(y,x) = −Σ_{τ ∈ N∖{1}, |τ| < γ−2} U^τ_{γ−2}(y,x) X_{z,y}I(τ)`.
    pub fn three_point(&self, gamma: Rational, x: usize, y: usize, z: usize) -> Result<ThreePointResidual, Error> {
        let p = self.path;
        let (cx, cy, cz) = (p.centering(x), p.centering(y), p.centering(z));
        let (zx, zy, yy, yx) = (p.pair(z, &cz, &cx), p.pair(z, &cz, &cy), p.pair(y, &cy, &cy), p.pair(y, &cy, &cx));
        let mut lhs = Term::default();
        let vyx = self.v(gamma, &yx)?;
        for (sg, t) in [(1.0, self.v(gamma, &zx)?), (-1.0, self.v(gamma, &zy)?), (1.0, self.v(gamma, &yy)?), (-1.0, vyx)] {
            lhs.value += sg * t.value;
            lhs.scale += t.scale;
        }
        let mut rhs = Term::default();
        for &t in &self.sets(gamma).v {
            if t == Tree::one() {
                continue;
            }
            let uu = self.u(t, gamma - 2, &yx)?;
            let term = -uu.value * zy.eval(i_of(t))?;
            rhs.value += term;
            rhs.scale += uu.scale * zy.eval(i_of(t))?.abs();
        }
        Ok(self.tpr(x, y, z, gamma, lhs, rhs, vyx))
    }

    #[allow(clippy::too_many_arguments)]
    fn tpr(&self, x: usize, y: usize, z: usize, gamma: Rational, lhs: Term, rhs: Term, vyx: Term) -> ThreePointResidual {
        ThreePointResidual {
            x,
            y,
            z,
            gamma: gamma.to_string(),
            lhs: lhs.value,
            rhs: rhs.value,
            residual: relative_residual(lhs.value, rhs.value, lhs.scale.max(rhs.scale)),
            lambda: self.exp.v1.data[y] - vyx.value,
        }
    }

    /// For `1 < γ < 2`: the three-point combination plus `Σ_i (Θ_y(X_i) − V^(i)_{γ−1}(y,x)) X_{z,y}I(X_i)`
    /// equals `−Σ_{τ ∈ N̊, |τ| < γ−2} U^τ_{γ−2}(y,x) X_{z,y}I(τ)`.
    pub fn rel_v_prime(&self, gamma: Rational, x: usize, y: usize, z: usize) -> Result<ThreePointResidual, Error> {
        let p = self.path;
        let u = p.universe();
        let (cx, cy, cz) = (p.centering(x), p.centering(y), p.centering(z));
        let (zx, zy, yy, yx) = (p.pair(z, &cz, &cx), p.pair(z, &cz, &cy), p.pair(y, &cy, &cy), p.pair(y, &cy, &cx));
        let mut lhs = Term::default();
        let vyx = self.v(gamma, &yx)?;
        for (sg, t) in [(1.0, self.v(gamma, &zx)?), (-1.0, self.v(gamma, &zy)?), (1.0, self.v(gamma, &yy)?), (-1.0, vyx)] {
            lhs.value += sg * t.value;
            lhs.scale += t.scale;
        }
        for i in 1..=u.dim {
            let vi = self.vi(i, gamma - 1, &yx)?;
            let h = self.exp.vx[i - 1].data[y] - vi.value;
            let dyz = zy.eval(i_of(Tree::x(i)))?;
            lhs.value += h * dyz;
            lhs.scale += (self.exp.vx[i - 1].data[y].abs() + vi.scale) * dyz.abs();
        }
        let mut rhs = Term::default();
        for &t in &self.sets(gamma).v {
            if !u.contains(TreeSet::NRing, t) {
                continue;
            }
            let uu = self.u(t, gamma - 2, &yx)?;
            let xi = zy.eval(i_of(t))?;
            rhs.value -= uu.value * xi;
            rhs.scale += uu.scale * xi.abs();
        }
        Ok(self.tpr(x, y, z, gamma, lhs, rhs, vyx))
    }

    /// For `0 < γ < 1`: `Θ_y(1)² − V²_γ = Θ_y(1)(Θ_y(1) − V_γ) + Σ_{|τ| < γ−2} Θ_x(τ)X_{y,x}I(τ)(Θ_y(1) − V_{γ−|τ|−2})`.
    pub fn rel_v2(&self, gamma: Rational, x: usize, y: usize) -> Result<ThreePointResidual, Error> {
        let p = self.path;
        let u = p.universe();
        let (cx, cy) = (p.centering(x), p.centering(y));
        let yx = p.pair(y, &cy, &cx);
        let t1 = self.exp.v1.data[y];
        let v2 = self.v2(gamma, &yx)?;
        let lhs = Term { value: t1 * t1 - v2.value, scale: t1 * t1 + v2.scale };
        let vg = self.v(gamma, &yx)?;
        let mut rhs = Term { value: t1 * (t1 - vg.value), scale: t1.abs() * (t1.abs() + vg.scale) };
        for &t in &self.sets(gamma).v {
            let k = self.theta(t, x);
            if k == 0.0 {
                continue;
            }
            let a = k * yx.eval(i_of(t))?;
            let inner = self.v(gamma - u.order(t) - 2, &yx)?;
            rhs.value += a * (t1 - inner.value);
            rhs.scale += a.abs() * (t1.abs() + inner.scale);
        }
        Ok(self.tpr(x, y, y, gamma, lhs, rhs, vg))
    }
}

/// Sampled continuity data of one tree at level `γ`.
#[derive(Clone, Debug, Serialize)]
pub struct UtauRow {
    pub tree: String,
    pub class: Option<UtauKind>,
    pub exponent: f64,
    pub max_abs: f64,
    /// `max |U^τ_{γ−2}(y,x)| / d(x,y)^{γ−|τ|−2}` over the sampled pairs.
    pub seminorm: f64,
    /// Worst relative gap between the direct and the classified form.
    pub cross_check: f64,
}

/// `V`, `V²`, `V^(i)` at one sampled pair.
#[derive(Clone, Debug, Serialize)]
pub struct VSample {
    pub x: usize,
    pub y: usize,
    pub v: f64,
    pub v2: f64,
    pub vx: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelledNorms {
    pub gamma: String,
    pub rows: Vec<UtauRow>,
    pub samples: Vec<VSample>,
}

/// Continuity errors `U^τ_{γ−2}` over sampled pairs `(y, x)`, their seminorms and the
/// cross-check against the classified form.
pub fn modelled_norms(path: &Path<'_>, exp: &TreeExpansion, gamma: Rational, pairs: &[(usize, usize)]) -> Result<ModelledNorms, Error> {
    let u = path.universe();
    if gamma_is_resonant(u, gamma) {
        return Err(Error::Config(format!("level {gamma} is resonant with a tree order")));
    }
    let m = Modelled::new(path, exp);
    let g = gamma - 2;
    let trees: Vec<Tree> = u.set(TreeSet::N).to_vec();
    let mut rows: Vec<UtauRow> = trees
        .iter()
        .map(|&t| UtauRow {
            tree: t.to_string(),
            class: classify_utau(u, t).ok().map(|c| c.kind),
            exponent: to_f64(gamma - u.order(t) - 2),
            max_abs: 0.0,
            seminorm: 0.0,
            cross_check: 0.0,
        })
        .collect();
    let mut samples = Vec::new();
    for &(y, x) in pairs {
        let (cy, cx) = (path.centering(y), path.centering(x));
        let yx = path.pair(y, &cy, &cx);
        let d = path.grid().dist(x, y);
        for (row, &t) in rows.iter_mut().zip(&trees) {
            let uu = m.u(t, g, &yx)?;
            row.max_abs = row.max_abs.max(uu.value.abs());
            if d > 0.0 {
                row.seminorm = row.seminorm.max(uu.value.abs() / d.powf(row.exponent));
            }
            if let Some(sd) = m.one_zero(t, g, &yx)? {
                row.cross_check = row.cross_check.max(sd.rel());
            }
        }
        samples.push(VSample {
            x,
            y,
            v: m.v(gamma, &yx)?.value,
            v2: m.v2(gamma, &yx)?.value,
            vx: (1..=u.dim).map(|i| m.vi(i, gamma, &yx).map(|t| t.value)).collect::<Result<_, _>>()?,
        });
    }
    Ok(ModelledNorms { gamma: gamma.to_string(), rows, samples })
}

/// A two-argument family `F(y, x)` whose reconstruction gap can be measured.
pub trait TwoPointFamily {
    /// `Σ_y Ψ(x − y)(F(y, x) − F(y, y))` for the kernel `k`, `None` when the support leaves the data.
    fn gap(&self, k: &Kernel, x: usize) -> Result<Option<f64>, Error>;
}

/// A family given by a closure, summed tap by tap.
pub struct FnFamily<'g, F: Fn(usize, usize) -> f64> {
    pub grid: &'g Grid,
    pub f: F,
}

impl<F: Fn(usize, usize) -> f64> TwoPointFamily for FnFamily<'_, F> {
    fn gap(&self, k: &Kernel, x: usize) -> Result<Option<f64>, Error> {
        if !k.fits(self.grid, x) {
            return Ok(None);
        }
        let mut acc = 0.0;
        for t in &k.taps {
            let y = (x as isize + Kernel::offset(self.grid, t)) as usize;
            acc += t.w * ((self.f)(y, x) - (self.f)(y, y));
        }
        Ok(Some(acc))
    }
}

/// `F(y, x) = Σ_{τ ∈ N, |τ| < g} Υ_x(τ) X_{y,x}(I(τ)I(w₁)I(w₂))` with `g` just above
/// `−6 − |w₁| − |w₂|`.
pub struct ProductFamily<'p, 'a> {
    pub path: &'p Path<'a>,
    pub exp: &'p TreeExpansion,
    /// `(τ, I(τ)I(w₁)I(w₂))`.
    pub terms: Vec<(Tree, Tree)>,
    pub level: Rational,
    /// `F(y, y)` on the region it was built for, NaN elsewhere.
    diag: Field,
}

/// `(τ, a_τ, b_τ)`: measured scaling of `X_{•,x}τ_w` under mollification and of `U^τ` in separation.
#[derive(Clone, Debug, Serialize)]
pub struct ExponentRow {
    pub tree: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `(L, sup |(X_{•,x}τ_w)_L(x)|)`.
    pub x_samples: Vec<(f64, f64)>,
    /// `(L, sup |U^τ_g|)` at separation `L`.
    pub u_samples: Vec<(f64, f64)>,
}

/// Bound curve `L ↦ Σ_τ sup|(X τ_w)_L| · sup|U^τ_g|` at separation `L`, and its log-log slope.
pub fn predicted_decay(rows: &[ExponentRow]) -> (Vec<(f64, f64)>, Option<f64>) {
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        for &(l, x) in &r.x_samples {
            let Some(&(_, u)) = r.u_samples.iter().find(|s| s.0 == l) else { continue };
            match curve.iter_mut().find(|c| c.0 == l) {
                Some(c) => c.1 += x * u,
                None => curve.push((l, x * u)),
            }
        }
    }
    curve.sort_by(|p, q| p.0.total_cmp(&q.0));
    let slope = loglog_slope(&curve);
    (curve, slope)
}

impl<'p, 'a> ProductFamily<'p, 'a> {
    pub fn new(path: &'p Path<'a>, exp: &'p TreeExpansion, w1: Tree, w2: Tree, region: &[usize]) -> Result<Self, Error> {
        let u = path.universe();
        if !u.contains(TreeSet::W, w1) || !u.contains(TreeSet::W, w2) {
            return Err(Error::Domain(format!("{w1} and {w2} must lie in W")));
        }
        let b = Rational::from_integer(-6) - u.order(w1) - u.order(w2);
        let mut above: Vec<Rational> = u.set(TreeSet::N).iter().map(|t| u.order(*t)).filter(|o| *o > b).collect();
        above.sort();
        let eps = above.first().map_or(Rational::new(1, 20), |o| ((*o - b) / 2).min(Rational::new(1, 20)));
        let level = b + eps;
        let mut terms = Vec::new();
        for &t in u.set(TreeSet::N) {
            if u.order(t) < level {
                let tw = product_raw([i_of(t), i_of(w1), i_of(w2)])?;
                if !u.contains(TreeSet::NRing, tw) && !u.contains(TreeSet::WRing, tw) {
                    return Err(Error::Domain(format!("{tw} is outside the universe")));
                }
                terms.push((t, tw));
            }
        }
        let mut diag = Field::constant(&path.lp.grid, f64::NAN);
        for &z in region {
            let c = path.centering(z);
            let p = path.pair(z, &c, &c);
            let mut acc = 0.0;
            for &(t, tw) in &terms {
                acc += exp.upsilon(t, z) * p.eval(tw)?;
            }
            diag.data[z] = acc;
        }
        Ok(ProductFamily { path, exp, terms, level, diag })
    }

    /// `F(y, x)` at one pair.
    pub fn eval(&self, yx: &Pair<'_, '_>) -> Result<f64, Error> {
        let x = yx.x();
        let mut acc = 0.0;
        for &(t, tw) in &self.terms {
            acc += self.exp.upsilon(t, x) * yx.eval(tw)?;
        }
        Ok(acc)
    }

    /// `F(y,x₁) − F(y,x₂)` against `−Σ_τ X_{y,x₂}(τ_w) U^τ_g(x₂,x₁)`.
    pub fn chen_sides(&self, y: usize, x1: usize, x2: usize) -> Result<Sides, Error> {
        let p = self.path;
        let (cy, c1, c2) = (p.centering(y), p.centering(x1), p.centering(x2));
        let (y1, y2, x21) = (p.pair(y, &cy, &c1), p.pair(y, &cy, &c2), p.pair(x2, &c2, &c1));
        let m = Modelled::new(p, self.exp);
        let (f1, f2) = (self.eval(&y1)?, self.eval(&y2)?);
        let mut rhs = Term::default();
        for &(t, tw) in &self.terms {
            let uu = m.u(t, self.level, &x21)?;
            let a = y2.eval(tw)?;
            rhs.value -= a * uu.value;
            rhs.scale += a.abs() * uu.scale;
        }
        Ok(Sides { lhs: f1 - f2, rhs: rhs.value, scale: rhs.scale.max(f1.abs() + f2.abs()) })
    }

    /// Measured exponents `a_τ` (order scan of `τ_w`) and `b_τ` (sup of `|U^τ_g|` against separation).
    pub fn exponents(&self, basepoints: &[usize], scales: &[f64]) -> Result<Vec<ExponentRow>, Error> {
        let p = self.path;
        let g = p.grid();
        let m = Modelled::new(p, self.exp);
        let mut rows = Vec::new();
        for &(t, tw) in &self.terms {
            let scan = order_scan(p, tw, basepoints, scales)?;
            let mut samples = Vec::new();
            for &l in scales {
                let mut best: Option<f64> = None;
                for &x2 in basepoints {
                    let c2 = p.centering(x2);
                    for x1 in separated(g, x2, l) {
                        let c1 = p.centering(x1);
                        let v = m.u(t, self.level, &p.pair(x2, &c2, &c1))?.value.abs();
                        best = Some(best.unwrap_or(0.0).max(v));
                    }
                }
                if let Some(b) = best {
                    samples.push((l, b));
                }
            }
            rows.push(ExponentRow { tree: t.to_string(), a: scan.slope, b: loglog_slope(&samples), x_samples: scan.samples, u_samples: samples });
        }
        Ok(rows)
    }
}

impl TwoPointFamily for ProductFamily<'_, '_> {
    fn gap(&self, k: &Kernel, x: usize) -> Result<Option<f64>, Error> {
        let g = self.path.grid();
        if !k.fits(g, x) {
            return Ok(None);
        }
        let c = self.path.centering(x);
        let mut acc = 0.0;
        for &(t, tw) in &self.terms {
            let coef = self.exp.upsilon(t, x);
            for (fld, w) in self.path.linear_at(tw, &c)? {
                acc += coef * w * k.apply_at(fld, x).expect("kernel fits");
            }
        }
        let d = k.apply_at(&self.diag, x).expect("kernel fits");
        Ok(d.is_finite().then_some(acc - d))
    }
}

/// Decay of `sup_x |Σ Ψ_L(x − y)(F(y,x) − F(y,y))|` over scales.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub samples: Vec<(f64, f64)>,
    pub slope: Option<f64>,
}

pub fn reconstruction_check(fam: &dyn TwoPointFamily, grid: &Grid, basepoints: &[usize], scales: &[f64]) -> Result<DecayReport, Error> {
    let mut samples = Vec::new();
    for &l in scales {
        let k = Kernel::psi_default(grid, l)?;
        let mut best: Option<f64> = None;
        for &x in basepoints {
            if let Some(v) = fam.gap(&k, x)? {
                best = Some(best.unwrap_or(0.0).max(v.abs()));
            }
        }
        if let Some(b) = best {
            samples.push((l, b));
        }
    }
    if samples.len() < 3 {
        return Err(Error::Domain(format!("reconstruction check: only {} usable scales", samples.len())));
    }
    Ok(DecayReport { slope: loglog_slope(&samples), samples })
}

/// `[F, Ψ_L](x)` against its telescoping expansion
/// `([F, Ψ_{L2^{-N}}])_{L,N} + Σ_{n<N} ([F, Ψ_{L2^{-n}}] − ([F, Ψ_{L2^{-n-1}}])_{L2^{-n},1})_{L,n}`,
/// where `[F, Ψ_l](x') = Σ_y Ψ_l(x' − y) F(y, x')`.
pub fn telescoping_sides(grid: &Grid, f: &dyn Fn(usize, usize) -> f64, l: f64, levels: usize, x: usize) -> Result<Sides, Error> {
    let depth = Kernel::default_depth(grid, l)?;
    if levels > depth {
        return Err(Error::Config(format!("{levels} telescoping levels exceed the resolvable depth {depth}")));
    }
    let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
    let kernels: Vec<Kernel> = (0..=levels)
        .map(|n| Kernel::psi(grid, l / f64::powi(2.0, n as i32), depth - n))
        .collect::<Result<_, _>>()?;
    let mut bracket = |n: usize, xp: usize| -> Option<f64> {
        if let Some(v) = memo.get(&(n, xp)) {
            return Some(*v);
        }
        let k = &kernels[n];
        if !k.fits(grid, xp) {
            return None;
        }
        let v = k.taps.iter().map(|t| t.w * f((xp as isize + Kernel::offset(grid, t)) as usize, xp)).sum();
        memo.insert((n, xp), v);
        Some(v)
    };
    let outer = |n: usize| Kernel::psi(grid, l, n);
    let apply = |k: &Kernel, xp: usize, h: &mut dyn FnMut(usize) -> Option<f64>| -> Option<f64> {
        if !k.fits(grid, xp) {
            return None;
        }
        let mut acc = 0.0;
        for t in &k.taps {
            acc += t.w * h((xp as isize + Kernel::offset(grid, t)) as usize)?;
        }
        Some(acc)
    };
    let miss = || Error::Domain("telescoping support leaves the grid".into());
    let lhs = bracket(0, x).ok_or_else(miss)?;
    let mut rhs = 0.0;
    let mut scale = lhs.abs();
    for n in 0..levels {
        let phi = Kernel::phi(grid, l / f64::powi(2.0, n as i32 + 1))?;
        let kn = outer(n)?;
        let term = apply(&kn, x, &mut |xp| {
            let a = bracket(n, xp)?;
            let b = apply(&phi, xp, &mut |xq| bracket(n + 1, xq))?;
            Some(a - b)
        })
        .ok_or_else(miss)?;
        rhs += term;
        scale += term.abs();
    }
    let kn = outer(levels)?;
    let tail = apply(&kn, x, &mut |xp| bracket(levels, xp)).ok_or_else(miss)?;
    rhs += tail;
    scale += tail.abs();
    Ok(Sides { lhs, rhs, scale })
}

/// `(Θ_x(τ), τ)` with `τ = I(τ₁)I(τ₂)I(τ₃)` for printing the implicit-expansion convention.
pub fn planted_children(t: Tree) -> Option<[Tree; 3]> {
    let ch = t.children()?;
    let mut out = [Tree::one(); 3];
    for (o, c) in out.iter_mut().zip(ch) {
        match c.planted_parts() {
            Some((Edge::I, inner)) => *o = inner,
            _ => return None,
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{gamma_between, UpsilonParams};
    use crate::field::smooth_noise;
    use crate::lift::{phi43_counterterms, LocalProduct};
    use crate::path::sample_triples;
    use crate::symtree::enumerate_universe;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 16.0).unwrap())
    }

    fn lift(p: i64, q: i64, r: Option<(f64, f64)>) -> LocalProduct {
        let g = grid();
        let u = Arc::new(enumerate_universe(Rational::new(p, q), 1).unwrap());
        let xi = smooth_noise(&g, 1.0);
        match r {
            None => LocalProduct::multiplicative(&xi, &u).unwrap(),
            Some((a, b)) => LocalProduct::from_counterterms(&xi, &u, &phi43_counterterms(&u, a, b).unwrap()).unwrap(),
        }
    }

    fn smooth_v(g: &Arc<Grid>) -> Field {
        Field::from_fn(g, |t, x| 0.7 * (1.3 * x[0] + 0.4 * t).sin() + 0.2)
    }

    #[test]
    fn upsilon_matches_closed_form() {
        let lp = lift(3, 10, None);
        let g = grid();
        let v = smooth_v(&g);
        let vx = vec![Field::from_fn(&g, |t, x| t - x[0])];
        let e = TreeExpansion::new(&lp.universe, v.clone(), vx.clone(), true).unwrap();
        let z = g.nearest(0.5, &[0.3]).unwrap();
        let up = UpsilonParams::new(v.data[z], vec![vx[0].data[z]]);
        for &t in lp.universe.set(TreeSet::N) {
            assert!((e.theta(t, z) - up.upsilon(t)).abs() < 1e-14, "{t}");
        }
        for &w in lp.universe.set(TreeSet::W) {
            assert_eq!(e.theta(w, z), w.sign() as f64);
        }
    }

    #[test]
    fn multiplicative_product_is_pointwise() {
        let lp = lift(9, 20, None);
        let path = Path::new(&lp).unwrap();
        let g = grid();
        let v = smooth_v(&g);
        let vx = vec![Field::from_fn(&g, |_, x| x[0] * x[0])];
        let e = TreeExpansion::new(&lp.universe, v, vx, true).unwrap();
        let one = TreeExpansion::new(&lp.universe, Field::constant(&g, 1.5), vec![Field::zeros(&g)], false).unwrap();
        for z in [g.nearest(0.5, &[0.2]).unwrap(), g.nearest(0.9, &[-0.6]).unwrap()] {
            let c = path.centering(z);
            let th = reconstruct_at(&path, &e, &c).unwrap();
            let prod = renorm_product(&path, &e, &e, &e, &c).unwrap();
            assert!((prod - th * th * th).abs() < 1e-10 * (1.0 + th.abs().powi(3)), "{prod} vs {}", th.powi(3));
            let c3 = renorm_product(&path, &one, &one, &one, &c).unwrap();
            assert!((c3 - 1.5f64.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn phi43_constants_exact() {
        let u = enumerate_universe(Rational::new(9, 20), 1).unwrap();
        let wick = crate::lift::wick_tree().canonical();
        let sunset = crate::lift::sunset_tree().canonical();
        let r = |cw: i64, cs: i64| {
            move |t: Tree| {
                if t.canonical() == wick {
                    Rational::from_integer(-cw)
                } else if t.canonical() == sunset {
                    Rational::from_integer(-cs)
                } else {
                    Rational::zero()
                }
            }
        };
        let a = renorm_constants_exact(&u, &r(1, 0));
        let b = renorm_constants_exact(&u, &r(0, 1));
        assert_eq!(a.r_phi, Rational::from_integer(3));
        assert_eq!(b.r_phi, Rational::from_integer(-9));
        for c in [&a, &b] {
            assert!(c.r1.is_zero() && c.r_phi2.is_zero() && c.r_dphi[0].is_zero() && c.other.is_empty());
        }
        let z = renorm_constants_exact(&u, &|_| Rational::zero());
        assert!(z.r1.is_zero() && z.r_phi.is_zero() && z.r_phi2.is_zero());
    }

    #[test]
    fn cube_formula_holds_for_both_lifts() {
        let g = grid();
        for (lp, tol) in [(lift(9, 20, None), 1e-10), (lift(9, 20, Some((0.4, 0.15))), 1e-8), (lift(3, 10, Some((0.4, 0.15))), 1e-8)] {
            let path = Path::new(&lp).unwrap();
            let probes = crate::path::sample_nodes(&g, 12, 5, (0.1, 1.0), 0.9);
            let (rep, _) = cube_formula_check(&path, &smooth_v(&g), &probes, tol).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().next());
            let (rep, _) = cube_formula_check(&path, &Field::zeros(&g), &probes, tol).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().next());
        }
    }

    #[test]
    fn grouped_rhs_matches_direct_sum() {
        let g = grid();
        for lp in [lift(9, 20, Some((0.4, 0.15))), lift(3, 10, None)] {
            let path = Path::new(&lp).unwrap();
            let probes = crate::path::sample_nodes(&g, 8, 9, (0.1, 1.0), 0.9);
            let rep = rhs_consistency(&path, &smooth_v(&g), &probes, 1e-10).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn multiplicative_rhs_is_classical() {
        let lp = lift(9, 20, None);
        let path = Path::new(&lp).unwrap();
        let g = grid();
        let v = smooth_v(&g);
        let probes = crate::path::sample_nodes(&g, 10, 2, (0.1, 1.0), 0.9);
        let tables = RemainderTables::build(&path, &probes).unwrap();
        let rhs = tables.rhs(&v);
        let phi = assemble_phi(&path, &v).unwrap();
        for &z in &probes {
            let mut want = -phi.data[z].powi(3) + lp.xi().data[z];
            for &w in lp.universe.set(TreeSet::W) {
                want -= w.sign() as f64 * lp.x_field(w).unwrap().data[z];
            }
            assert!((rhs.data[z] - want).abs() < 1e-10 * (1.0 + want.abs()), "{} vs {want}", rhs.data[z]);
        }
    }

    #[test]
    fn dx_map_with_empty_correction_is_gradient() {
        let lp = lift(9, 20, None);
        let path = Path::new(&lp).unwrap();
        let g = grid();
        let v = smooth_v(&g);
        let probes = crate::path::sample_nodes(&g, 6, 1, (0.1, 1.0), 0.9);
        let tables = RemainderTables::build(&path, &probes).unwrap();
        let vx = tables.dx_map(&v);
        let gr = grad(&v, 0);
        let c1 = Rational::from_integer(-1);
        let corr: Vec<Tree> = lp.universe.set(TreeSet::NRing).iter().copied().filter(|t| lp.universe.order(*t) < c1).collect();
        for &z in &probes {
            let c = path.centering(z);
            let mut want = gr.data[z];
            for &t in &corr {
                want -= t.sign() as f64 * v.data[z].powi(t.m_one() as i32) * path.nu(t, 1, &c).unwrap();
            }
            assert!((vx[0].data[z] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
        let zero = LocalProduct::multiplicative(&Field::zeros(&g), &lp.universe).unwrap();
        let zp = Path::new(&zero).unwrap();
        let t0 = RemainderTables::build(&zp, &probes).unwrap();
        for f in t0.dx_map(&Field::zeros(&g)) {
            assert_eq!(f.max_abs(), 0.0);
        }
    }

    #[test]
    fn one_zero_and_three_point_relations() {
        for lp in [lift(3, 10, None), lift(9, 20, Some((0.4, 0.15)))] {
            let path = Path::new(&lp).unwrap();
            let g = grid();
            let v = smooth_v(&g);
            let vx = vec![Field::from_fn(&g, |t, x| 0.3 * x[0] - t)];
            let e = TreeExpansion::new(&lp.universe, v, vx, false).unwrap();
            let m = Modelled::new(&path, &e);
            let u = path.universe();
            let gs = [
                gamma_between(u, Rational::zero(), Rational::from_integer(1)).unwrap(),
                gamma_between(u, Rational::from_integer(1), Rational::from_integer(2)).unwrap(),
            ];
            for (z, y, x) in sample_triples(&g, 4, 11, 0.3) {
                for &gm in &gs {
                    let (cy, cx) = (path.centering(y), path.centering(x));
                    let yx = path.pair(y, &cy, &cx);
                    for &t in u.set(TreeSet::N) {
                        if let Some(sd) = m.one_zero(t, gm - 2, &yx).unwrap() {
                            assert!(sd.rel() < 1e-10, "{t} at {gm}: {sd:?}");
                        }
                    }
                    let r = m.three_point(gm, x, y, z).unwrap();
                    assert!(r.residual < 1e-10, "{r:?}");
                }
                let r = m.rel_v_prime(gs[1], x, y, z).unwrap();
                assert!(r.residual < 1e-10, "{r:?}");
                let r = m.rel_v2(gs[0], x, y).unwrap();
                assert!(r.residual < 1e-10, "{r:?}");
            }
        }
    }

    #[test]
    fn zero_class_vanishes_and_small_gamma_is_increment() {
        let lp = lift(9, 20, None);
        let path = Path::new(&lp).unwrap();
        let g = grid();
        let v = smooth_v(&g);
        let e = TreeExpansion::new(&lp.universe, v.clone(), vec![Field::constant(&g, 0.3)], false).unwrap();
        let m = Modelled::new(&path, &e);
        let u = path.universe();
        let (y, x) = (g.nearest(0.6, &[0.1]).unwrap(), g.nearest(0.5, &[0.3]).unwrap());
        let (cy, cx) = (path.centering(y), path.centering(x));
        let yx = path.pair(y, &cy, &cx);
        let gm = Rational::new(1, 100);
        for &t in u.set(TreeSet::N) {
            if t.m_one() == 0 && t.m_x_total() == 0 && u.order(t) < gm - 2 {
                let uu = m.u(t, gm - 2, &yx).unwrap();
                assert!(uu.value.abs() < 1e-12 * (1.0 + uu.scale), "{t}");
            }
        }
        let uu = m.u(Tree::one(), gm - 2, &yx).unwrap();
        assert!((uu.value - (v.data[y] - v.data[x])).abs() < 1e-14);
    }

    #[test]
    fn closure_family_and_telescoping() {
        let g = Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 32.0).unwrap();
        let gg = &g;
        let h = |y: usize, _x: usize| gg.coords(y).0.sin();
        let fam = FnFamily { grid: &g, f: h };
        let x = g.nearest(0.8, &[0.0]).unwrap();
        let k = Kernel::psi_default(&g, 0.25).unwrap();
        assert_eq!(fam.gap(&k, x).unwrap(), Some(0.0));
        let f = |y: usize, x: usize| {
            let (ty, xy) = gg.coords(y);
            let (tx, xx) = gg.coords(x);
            (3.0 * xy[0] + ty).cos() * (xx[0] - xy[0] + tx - ty).abs().powf(0.7)
        };
        let sd = telescoping_sides(&g, &f, 0.25, 2, x).unwrap();
        assert!(sd.rel() < 1e-12, "{sd:?}");
    }

    #[test]
    fn solver_is_trivial_without_noise_and_bounded_otherwise() {
        let g = grid();
        let u = Arc::new(enumerate_universe(Rational::new(9, 20), 1).unwrap());
        let zero = LocalProduct::multiplicative(&Field::zeros(&g), &u).unwrap();
        let path = Path::new(&zero).unwrap();
        let tables = RemainderTables::build(&path, &domain_nodes(&g)).unwrap();
        let (v, rec) = solve_remainder(&tables, &g, &BoundaryData::Zero, &SolverConfig::default()).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert!(rec.substeps > 0);
        let lp = lift(9, 20, None);
        let path = Path::new(&lp).unwrap();
        let tables = RemainderTables::build(&path, &domain_nodes(&g)).unwrap();
        let (_, rec) = solve_remainder(&tables, &g, &BoundaryData::Trace { seed: 3, amplitude: 50.0 }, &SolverConfig::default()).unwrap();
        assert!(rec.max_abs <= 50.0 * 1.05, "{}", rec.max_abs);
        assert!(rec.updates > rec.substeps);
        let cfg = SolverConfig { cap: 1.0, ..SolverConfig::default() };
        let err = solve_remainder(&tables, &g, &BoundaryData::Constant { value: 5.0 }, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn boundary_specs_parse() {
        assert_eq!(BoundaryData::parse("zero").unwrap(), BoundaryData::Zero);
        assert_eq!(BoundaryData::parse("const:2.5").unwrap(), BoundaryData::Constant { value: 2.5 });
        assert_eq!(BoundaryData::parse("trace:4:10").unwrap(), BoundaryData::Trace { seed: 4, amplitude: 10.0 });
        assert!(BoundaryData::parse("wave").is_err());
        let f = BoundaryData::Trace { seed: 1, amplitude: 10.0 }.evaluator(1);
        let sup = (0..=100).map(|k| f(k as f64 / 100.0, &[1.0]).abs().max(f(k as f64 / 100.0, &[-1.0]).abs())).fold(0.0, f64::max);
        assert!(sup <= 10.0 + 1e-9 && sup > 5.0);
    }
}
