//! The two-point path `X_{z,x}` and the centering `X^cen_x` built from a local
//! product.
//!
//! Nothing indexed by two grid points is stored. A [`Centering`] caches the
//! base-point quantities at one node (`X^cen_x`, `D_τ(x)`, `ν^i_τ(x)`); a
//! [`Pair`] evaluates `X_{z,x}σ` from global fields at `z` and a centering at
//! `x`, caching per tree.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coalgebra::{Coalgebra, Forest, TensorSum};
use crate::field::{sc, Field, Grid, Kernel};
use crate::lift::LocalProduct;
use crate::report::{relative_residual, Report};
use crate::symtree::{minus, plus, Edge, Kind, Tree, TreeSet, TreeUniverse, MAX_DIM};
use crate::{Error, Rational, Scalar};

/// Path and centering of one local product.
pub struct Path<'a, S: Scalar = f64> {
    pub lp: &'a LocalProduct<S>,
    co: Coalgebra,
}

/// Base-point data at one node, filled lazily.
pub struct Centering<S: Scalar = f64> {
    pub node: usize,
    x: [f64; MAX_DIM],
    cen: RefCell<HashMap<Tree, S>>,
    d: RefCell<HashMap<Tree, S>>,
    nu: RefCell<HashMap<(Tree, usize), S>>,
}

impl<S: Scalar> Centering<S> {
    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

/// Evaluator of `X_{z,x}` for fixed `z` (centered at `cz`) and `x` (centered at `cx`).
pub struct Pair<'p, 'a, S: Scalar = f64> {
    path: &'p Path<'a, S>,
    z: usize,
    zc: [f64; MAX_DIM],
    cz: &'p Centering<S>,
    cx: &'p Centering<S>,
    cache: RefCell<HashMap<Tree, S>>,
}

fn r2s<S: Scalar>(c: Rational) -> S {
    sc::<S>(*c.numer() as f64 / *c.denom() as f64)
}

impl<'a, S: Scalar> Path<'a, S> {
    /// Checks that every product of the universe has a table in `lp`.
    pub fn new(lp: &'a LocalProduct<S>) -> Result<Self, Error> {
        for t in lp.universe.products() {
            lp.x_field(t)?;
        }
        lp.x_field(Tree::xi())?;
        Ok(Path { lp, co: Coalgebra::for_universe(&lp.universe) })
    }

    pub fn universe(&self) -> &TreeUniverse {
        &self.lp.universe
    }

    pub fn grid(&self) -> &Grid {
        &self.lp.grid
    }

    pub fn delta(&self, s: Tree) -> Result<Rc<TensorSum>, Error> {
        self.co.delta(s)
    }

    pub fn centering(&self, node: usize) -> Centering<S> {
        let (_, x) = self.grid().coords(node);
        Centering {
            node,
            x,
            cen: RefCell::default(),
            d: RefCell::default(),
            nu: RefCell::default(),
        }
    }

    pub fn pair<'p>(&'p self, z: usize, cz: &'p Centering<S>, cx: &'p Centering<S>) -> Pair<'p, 'a, S> {
        debug_assert_eq!(cz.node, z);
        let (_, zc) = self.grid().coords(z);
        Pair { path: self, z, zc, cz, cx, cache: RefCell::default() }
    }

    fn in_ntilde(&self, t: Tree) -> bool {
        self.universe().contains(TreeSet::NTilde, t)
    }

    /// `Σ c F_a(x) X^cen_x(F)` over `Δτ`, with `F_a` the field picked by `which`.
    fn contract(&self, t: Tree, c: &Centering<S>, which: impl Fn(Tree) -> Result<&'a Field<S>, Error>) -> Result<S, Error> {
        let mut acc = S::zero();
        for (a, f, k) in self.delta(t)?.terms() {
            acc += r2s::<S>(k) * which(a)?.data[c.node] * self.cen_forest(f, c)?;
        }
        Ok(acc)
    }

    /// `D_τ(x) = L⁻¹(X_{•,x}τ)(x)`.
    pub fn d_tau(&self, t: Tree, c: &Centering<S>) -> Result<S, Error> {
        if let Some(v) = c.d.borrow().get(&t) {
            return Ok(*v);
        }
        let lp = self.lp;
        let v = self.contract(t, c, |a| lp.g_field(a))?;
        c.d.borrow_mut().insert(t, v);
        Ok(v)
    }

    /// `ν^i_τ(x) = ∂_i L⁻¹(X_{•,x}τ)(x)`, `i` 1-based.
    pub fn nu(&self, t: Tree, i: usize, c: &Centering<S>) -> Result<S, Error> {
        if let Some(v) = c.nu.borrow().get(&(t, i)) {
            return Ok(*v);
        }
        let lp = self.lp;
        let v = self.contract(t, c, |a| lp.dg_field(a, i))?;
        c.nu.borrow_mut().insert((t, i), v);
        Ok(v)
    }

    /// `X^cen_x σ` for `σ ∈ T^cen`.
    pub fn cen(&self, s: Tree, c: &Centering<S>) -> Result<S, Error> {
        if let Some(v) = c.cen.borrow().get(&s) {
            return Ok(*v);
        }
        let bad = || Error::Domain(format!("centering undefined on {s}"));
        let Kind::Planted(e, t) = s.kind() else { return Err(bad()) };
        let v = match (e, t.kind()) {
            (Edge::I, Kind::One) => S::one(),
            (Edge::I, Kind::X(i)) => -sc::<S>(c.x[i as usize - 1]),
            (Edge::Plus(i), Kind::X(j)) if i == j => S::one(),
            (Edge::I, Kind::Product(_)) if self.universe().contains(TreeSet::NRing, t) => {
                let mut v = -self.d_tau(t, c)?;
                if self.in_ntilde(t) {
                    for i in 1..=self.universe().dim {
                        v += sc::<S>(c.x[i - 1]) * self.nu(t, i, c)?;
                    }
                }
                v
            }
            (Edge::Plus(i), Kind::Product(_)) if self.in_ntilde(t) => -self.nu(t, i as usize, c)?,
            _ => return Err(bad()),
        };
        c.cen.borrow_mut().insert(s, v);
        Ok(v)
    }

    pub fn cen_forest(&self, f: &Forest, c: &Centering<S>) -> Result<S, Error> {
        f.trees().iter().try_fold(S::one(), |acc, &p| Ok(acc * self.cen(p, c)?))
    }

    /// `X_{z,x}σ` with fresh centerings. Prefer [`Path::pair`] when evaluating many trees.
    pub fn eval(&self, s: Tree, z: usize, x: usize) -> Result<S, Error> {
        let (cz, cx) = (self.centering(z), self.centering(x));
        self.pair(z, &cz, &cx).eval(s)
    }

    /// `P_τ(z) = X_{z,z}τ`.
    pub fn diag(&self, t: Tree, c: &Centering<S>) -> Result<S, Error> {
        self.pair(c.node, c, c).eval(t)
    }

    /// `P_τ` on a list of nodes, one field per tree (zero elsewhere).
    pub fn diag_fields(&self, trees: &[Tree], nodes: &[usize]) -> Result<Vec<Field<S>>, Error> {
        let mut out = vec![Field::zeros(&self.lp.grid); trees.len()];
        for &z in nodes {
            let c = self.centering(z);
            let p = self.pair(z, &c, &c);
            for (k, &t) in trees.iter().enumerate() {
                out[k].data[z] = p.eval(t)?;
            }
        }
        Ok(out)
    }

    /// Fields and coefficients with `X_{•,x}σ = Σ coef · field` on the whole grid,
    /// for `σ ∈ T_r ∪ I(W)`.
    pub fn linear_at(&self, s: Tree, c: &Centering<S>) -> Result<Vec<(&'a Field<S>, S)>, Error> {
        let u = self.universe();
        let lp = self.lp;
        match s.kind() {
            Kind::Xi => Ok(vec![(lp.x_field(s)?, S::one())]),
            Kind::Product(_) if u.contains(TreeSet::WRing, s) => Ok(vec![(lp.x_field(s)?, S::one())]),
            Kind::Product(_) if u.contains(TreeSet::NRing, s) => {
                let mut out = Vec::new();
                for (a, f, k) in self.delta(s)?.terms() {
                    out.push((lp.x_field(a)?, r2s::<S>(k) * self.cen_forest(f, c)?));
                }
                Ok(out)
            }
            Kind::Planted(Edge::I, w) if u.contains(TreeSet::W, w) => Ok(vec![(lp.g_field(w)?, S::one())]),
            _ => Err(Error::Domain(format!("{s} has no mollified order branch"))),
        }
    }
}

impl<S: Scalar> Pair<'_, '_, S> {
    pub fn z(&self) -> usize {
        self.z
    }

    pub fn x(&self) -> usize {
        self.cx.node
    }

    pub fn eval_forest(&self, f: &Forest) -> Result<S, Error> {
        f.trees().iter().try_fold(S::one(), |acc, &p| Ok(acc * self.eval(p)?))
    }

    /// `X_{z,x}σ` for `σ ∈ T⁺`, `I⁻_i(τ)` with `τ ∈ T_r`, and `Ξ`.
    pub fn eval(&self, s: Tree) -> Result<S, Error> {
        if let Some(v) = self.cache.borrow().get(&s) {
            return Ok(*v);
        }
        let v = self.compute(s)?;
        self.cache.borrow_mut().insert(s, v);
        Ok(v)
    }

    fn dz(&self, i: usize) -> S {
        sc::<S>(self.zc[i - 1] - self.cx.x[i - 1])
    }

    fn compute(&self, s: Tree) -> Result<S, Error> {
        let p = self.path;
        let lp = p.lp;
        let u = p.universe();
        let z = self.z;
        let bad = || Error::Domain(format!("path undefined on {s}"));
        match s.kind() {
            Kind::Xi => Ok(lp.x_field(s)?.data[z]),
            Kind::Product(_) if u.contains(TreeSet::WRing, s) => Ok(lp.x_field(s)?.data[z]),
            Kind::Product(_) if u.contains(TreeSet::NRing, s) => {
                let mut acc = S::zero();
                for (a, f, k) in p.delta(s)?.terms() {
                    acc += r2s::<S>(k) * lp.x_field(a)?.data[z] * p.cen_forest(f, self.cx)?;
                }
                Ok(acc)
            }
            Kind::Planted(e, t) => match (e, t.kind()) {
                (Edge::I, Kind::One) => Ok(S::one()),
                (Edge::I, Kind::X(i)) => Ok(self.dz(i as usize)),
                (Edge::Plus(i) | Edge::Minus(i), Kind::X(j)) if i == j => Ok(S::one()),
                (Edge::I, _) if u.contains(TreeSet::W, t) => Ok(lp.g_field(t)?.data[z]),
                (Edge::I, Kind::Product(_)) if u.contains(TreeSet::NRing, t) => {
                    let mut acc = S::zero();
                    for (a, f, k) in p.delta(t)?.terms() {
                        acc += r2s::<S>(k) * lp.g_field(a)?.data[z] * p.cen_forest(f, self.cx)?;
                    }
                    acc -= p.d_tau(t, self.cx)?;
                    if p.in_ntilde(t) {
                        for i in 1..=u.dim {
                            acc -= self.dz(i) * p.nu(t, i, self.cx)?;
                        }
                    }
                    Ok(acc)
                }
                (Edge::Plus(i), Kind::Product(_)) if p.in_ntilde(t) => {
                    let i = i as usize;
                    let mut acc = -p.nu(t, i, self.cx)?;
                    for (a, f, k) in p.delta(t)?.terms() {
                        if plus(i, a, u.delta).is_some() {
                            acc += r2s::<S>(k) * p.nu(a, i, self.cz)? * self.eval_forest(f)?;
                        }
                    }
                    Ok(acc)
                }
                (Edge::Minus(i), Kind::Xi | Kind::Product(_)) if u.contains(TreeSet::Tr, t) => {
                    let i = i as usize;
                    let mut acc = S::zero();
                    for (a, f, k) in p.delta(t)?.terms() {
                        acc += r2s::<S>(k) * lp.dg_field(a, i)?.data[z] * p.cen_forest(f, self.cx)?;
                    }
                    if p.in_ntilde(t) {
                        acc -= p.nu(t, i, self.cx)?;
                    }
                    Ok(acc)
                }
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// Both sides of an identity and the size of the terms entering it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
    pub scale: f64,
}

impl Sides {
    pub fn abs(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn rel(&self) -> f64 {
        relative_residual(self.lhs, self.rhs, self.scale)
    }
}

fn f<S: Scalar>(v: S) -> f64 {
    v.to_f64().unwrap()
}

/// `(X_{z,u} ⊗ X_{u,x})Δσ` against `X_{z,x}σ`.
pub fn chen_sides<S: Scalar>(path: &Path<'_, S>, s: Tree, zu: &Pair<'_, '_, S>, ux: &Pair<'_, '_, S>, zx: &Pair<'_, '_, S>) -> Result<Sides, Error> {
    let (mut lhs, mut scale) = (0.0, 0.0);
    for (a, fo, k) in path.delta(s)?.terms() {
        let term = f(r2s::<S>(k) * zu.eval(a)? * ux.eval_forest(fo)?);
        lhs += term;
        scale += term.abs();
    }
    Ok(Sides { lhs, rhs: f(zx.eval(s)?), scale })
}

/// `|(X_{z,u} ⊗ X_{u,x})Δσ − X_{z,x}σ|`.
pub fn chen_residual<S: Scalar>(path: &Path<'_, S>, s: Tree, z: usize, u: usize, x: usize) -> Result<f64, Error> {
    let (cz, cu, cx) = (path.centering(z), path.centering(u), path.centering(x));
    let sides = chen_sides(path, s, &path.pair(z, &cz, &cu), &path.pair(u, &cu, &cx), &path.pair(z, &cz, &cx))?;
    Ok(sides.abs())
}

/// `X^cen_y I(τ)` against `(X^cen_x ⊗ X_{x,y})ΔI(τ)`.
pub fn strong_chen_sides<S: Scalar>(path: &Path<'_, S>, it: Tree, cx: &Centering<S>, xy: &Pair<'_, '_, S>, cy: &Centering<S>) -> Result<Sides, Error> {
    let (mut rhs, mut scale) = (0.0, 0.0);
    for (a, fo, k) in path.delta(it)?.terms() {
        let term = f(r2s::<S>(k) * path.cen(a, cx)? * xy.eval_forest(fo)?);
        rhs += term;
        scale += term.abs();
    }
    Ok(Sides { lhs: f(path.cen(it, cy)?), rhs, scale })
}

pub fn strong_chen_residual<S: Scalar>(path: &Path<'_, S>, it: Tree, x: usize, y: usize) -> Result<f64, Error> {
    let (cx, cy) = (path.centering(x), path.centering(y));
    Ok(strong_chen_sides(path, it, &cx, &path.pair(x, &cx, &cy), &cy)?.abs())
}

/// `X_{z,x}I(τ)` against `(X_z ⊗ X^cen_x)ΔI(τ)` with `X_z` acting on the planted left factors.
pub fn coproduct_form_sides<S: Scalar>(path: &Path<'_, S>, it: Tree, zx: &Pair<'_, '_, S>, cx: &Centering<S>) -> Result<Sides, Error> {
    let g = path.grid();
    let (_, zc) = g.coords(zx.z());
    let (mut rhs, mut scale) = (0.0, 0.0);
    for (a, fo, k) in path.delta(it)?.terms() {
        let Kind::Planted(Edge::I, c) = a.kind() else {
            return Err(Error::Domain(format!("unexpected left factor {a} in the coproduct of {it}")));
        };
        let left = match c.kind() {
            Kind::One => S::one(),
            Kind::X(i) => sc::<S>(zc[i as usize - 1]),
            _ => path.lp.g_field(c)?.data[zx.z()],
        };
        let term = f(r2s::<S>(k) * left * path.cen_forest(fo, cx)?);
        rhs += term;
        scale += term.abs();
    }
    Ok(Sides { lhs: f(zx.eval(it)?), rhs, scale })
}

/// Centered difference of `z ↦ X_{z,w}I(τ)` along `i` against `X_{z,w}I⁻_i(τ)`.
/// `z` must not lie on the spatial boundary.
pub fn derivative_sides<S: Scalar>(path: &Path<'_, S>, t: Tree, i: usize, z: usize, cw: &Centering<S>) -> Result<Sides, Error> {
    let g = path.grid();
    let (_, j) = g.split(z);
    if j[i - 1] == 0 || j[i - 1] + 1 >= g.nx {
        return Err(Error::Domain("derivative check needs an interior node".into()));
    }
    let st = g.axis_stride(i - 1);
    let it = crate::symtree::i_of(t);
    let val = |zz: usize| -> Result<f64, Error> {
        let c = path.centering(zz);
        Ok(f(path.pair(zz, &c, cw).eval(it)?))
    };
    let (hi, lo) = (val(z + st)?, val(z - st)?);
    let fd = (hi - lo) / (2.0 * g.h);
    let direct = match minus(i, t) {
        None => 0.0,
        Some(m) => {
            let c = path.centering(z);
            f(path.pair(z, &c, cw).eval(m)?)
        }
    };
    Ok(Sides { lhs: fd, rhs: direct, scale: (hi.abs() + lo.abs()) / (2.0 * g.h) })
}

/// `X_{z,x}τ` against `X_{z,x}Rτ` for a lift built from counterterms.
pub fn renorm_path_sides<S: Scalar>(path: &Path<'_, S>, t: Tree, zx: &Pair<'_, '_, S>) -> Result<Sides, Error> {
    let e = crate::lift::r_expansion(path.universe(), t, &path.lp.r);
    let (mut rhs, mut scale) = (0.0, 0.0);
    for (fo, c) in &e {
        let term = c * f(zx.eval_forest(fo)?);
        rhs += term;
        scale += term.abs();
    }
    Ok(Sides { lhs: f(zx.eval(t)?), rhs, scale })
}

/// Seeded nodes with `t ∈ [t_lo, t_hi]` and `|x_i| ≤ r`.
pub fn sample_nodes(g: &Grid, n: usize, seed: u64, t_range: (f64, f64), r: f64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(t_range.0..=t_range.1);
            let x: Vec<f64> = (0..g.dim).map(|_| rng.gen_range(-r..=r)).collect();
            g.nearest(t, &x).expect("sample region inside grid")
        })
        .collect()
}

/// Seeded triples `(z, u, x)` in the domain, with `u` and `x` within `spread` of `z`.
pub fn sample_triples(g: &Grid, n: usize, seed: u64, spread: f64) -> Vec<(usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near = |rng: &mut ChaCha8Rng, z: usize| {
        let (t, x) = g.coords(z);
        let tt = (t + rng.gen_range(-spread * spread..=spread * spread)).clamp(0.0, 1.0);
        let xx: Vec<f64> = (0..g.dim).map(|i| (x[i] + rng.gen_range(-spread..=spread)).clamp(-1.0, 1.0)).collect();
        g.nearest(tt, &xx).expect("inside grid")
    };
    (0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..=1.0);
            let x: Vec<f64> = (0..g.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let z = g.nearest(t, &x).expect("inside grid");
            let u = near(&mut rng, z);
            let x = near(&mut rng, z);
            (z, u, x)
        })
        .collect()
}

/// Chen's relation over every `σ ∈ T` and every triple, at relative tolerance `tol`.
/// Only the worst triple per tree is recorded.
pub fn chen_scan<S: Scalar>(path: &Path<'_, S>, triples: &[(usize, usize, usize)], tol: f64) -> Result<Report, Error> {
    let sigmas = path.universe().set(TreeSet::T).to_vec();
    let mut worst: Vec<Option<Sides>> = vec![None; sigmas.len()];
    for &(z, u, x) in triples {
        let (cz, cu, cx) = (path.centering(z), path.centering(u), path.centering(x));
        let (zu, ux, zx) = (path.pair(z, &cz, &cu), path.pair(u, &cu, &cx), path.pair(z, &cz, &cx));
        for (k, &s) in sigmas.iter().enumerate() {
            let sd = chen_sides(path, s, &zu, &ux, &zx)?;
            if worst[k].is_none_or(|w| sd.rel() > w.rel()) {
                worst[k] = Some(sd);
            }
        }
    }
    let mut rep = Report::new();
    for (s, w) in sigmas.iter().zip(worst) {
        if let Some(w) = w {
            rep.push_residual("chen", s, w.lhs, w.rhs, w.rel(), tol);
        }
    }
    Ok(rep)
}

/// Strong Chen, the coproduct form of `X_{z,x}I(τ)`, and derivative consistency,
/// over pairs built from the triples.
pub fn path_identity_scan<S: Scalar>(path: &Path<'_, S>, triples: &[(usize, usize, usize)], tol: f64, fd_tol: f64) -> Result<Report, Error> {
    let u = path.universe();
    let nw: Vec<Tree> = u.set(TreeSet::N).to_vec();
    let ws: Vec<Tree> = u.set(TreeSet::W).to_vec();
    let mut rep = Report::new();
    let mut worst: HashMap<(&str, Tree), Sides> = HashMap::new();
    let mut keep = |name: &'static str, t: Tree, sd: Sides, rel: bool| {
        let r = if rel { sd.rel() } else { sd.abs() };
        let e = worst.entry((name, t)).or_insert(sd);
        let er = if rel { e.rel() } else { e.abs() };
        if r > er {
            *e = sd;
        }
    };
    for &(z, _, x) in triples {
        let (cz, cx) = (path.centering(z), path.centering(x));
        let zx = path.pair(z, &cz, &cx);
        let xz = path.pair(x, &cx, &cz);
        for &t in &nw {
            let it = crate::symtree::i_of(t);
            keep("strong_chen", it, strong_chen_sides(path, it, &cx, &xz, &cz)?, true);
            keep("coproduct_form", it, coproduct_form_sides(path, it, &zx, &cx)?, true);
        }
        for &t in nw.iter().chain(&ws) {
            if t.is_poly() {
                continue;
            }
            for i in 1..=u.dim {
                let m = minus(i, t).expect("I⁻ of a non-polynomial tree");
                match derivative_sides(path, t, i, z, &cx) {
                    Ok(sd) => keep("derivative", m, sd, true),
                    Err(Error::Domain(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let mut rows: Vec<_> = worst.into_iter().collect();
    rows.sort_by_key(|((n, t), _)| (n.to_string(), t.to_string()));
    for ((name, t), sd) in rows {
        let tol = if name == "derivative" { fd_tol } else { tol };
        rep.push_residual(name, t, sd.lhs, sd.rhs, sd.rel(), tol);
    }
    Ok(rep)
}

/// Which half of the order seminorm applies to a tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Mollified,
    Separation,
}

/// Measured magnitudes of one tree across scales.
#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub sigma: String,
    pub target: f64,
    pub branch: Branch,
    /// `(L, sup over base points)`.
    pub samples: Vec<(f64, f64)>,
    /// Least-squares log–log slope; `None` when every sample vanishes.
    pub slope: Option<f64>,
}

impl OrderReport {
    pub fn rows(&self) -> Vec<serde_json::Value> {
        self.samples
            .iter()
            .map(|&(l, v)| serde_json::json!({"sigma": self.sigma, "L": l, "value": v, "slope": self.slope, "target": self.target}))
            .collect()
    }

    /// Whether the slope is at least `target − margin` (vanishing trees pass).
    pub fn meets(&self, margin: f64) -> bool {
        self.slope.is_none_or(|s| s >= self.target - margin)
    }
}

/// Least-squares slope of `ln v` against `ln L` over positive samples.
pub fn loglog_slope(samples: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|p| p.1 > 0.0).map(|&(l, v)| (l.ln(), v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Nodes at parabolic distance `L` from `x`: along each spatial axis and in time.
pub fn separated(g: &Grid, x: usize, l: f64) -> Vec<usize> {
    let (n, j) = g.split(x);
    let m = (l / g.h).round() as usize;
    let s = (l * l / g.dt()).round() as usize;
    let mut out = Vec::new();
    for i in 0..g.dim {
        if j[i] + m < g.nx {
            out.push(x + m * g.axis_stride(i));
        }
        if j[i] >= m {
            out.push(x - m * g.axis_stride(i));
        }
    }
    if s >= 1 {
        if n + s < g.nt {
            out.push(x + s * g.spatial_len());
        }
        if n >= s {
            out.push(x - s * g.spatial_len());
        }
    }
    out
}

/// Order scan of `σ` over base points and scales.
pub fn order_scan<S: Scalar>(path: &Path<'_, S>, s: Tree, basepoints: &[usize], scales: &[f64]) -> Result<OrderReport, Error> {
    let u = path.universe();
    let g = path.grid();
    let branch = if u.contains(TreeSet::TCen, s) {
        Branch::Separation
    } else if u.contains(TreeSet::Tr, s) || matches!(s.planted_parts(), Some((Edge::I, w)) if u.contains(TreeSet::W, w)) {
        Branch::Mollified
    } else {
        return Err(Error::Domain(format!("{s} carries no order seminorm")));
    };
    let cens: Vec<Centering<S>> = basepoints.iter().map(|&x| path.centering(x)).collect();
    let mut samples = Vec::new();
    for &l in scales {
        let mut best: Option<f64> = None;
        match branch {
            Branch::Mollified => {
                let k = Kernel::psi_default(g, l)?;
                for c in &cens {
                    if !k.fits(g, c.node) {
                        continue;
                    }
                    let mut v = S::zero();
                    for (fld, coef) in path.linear_at(s, c)? {
                        v += coef * k.apply_at(fld, c.node).expect("kernel fits");
                    }
                    best = Some(best.unwrap_or(0.0).max(f(v).abs()));
                }
            }
            Branch::Separation => {
                for c in &cens {
                    for z in separated(g, c.node, l) {
                        let cz = path.centering(z);
                        let v = f(path.pair(z, &cz, c).eval(s)?).abs();
                        best = Some(best.unwrap_or(0.0).max(v));
                    }
                }
            }
        }
        if let Some(b) = best {
            samples.push((l, b));
        }
    }
    if samples.len() < 3 {
        return Err(Error::Domain(format!("order scan of {s}: only {} usable scales", samples.len())));
    }
    Ok(OrderReport {
        sigma: s.to_string(),
        target: crate::symtree::to_f64(u.order(s)),
        branch,
        slope: loglog_slope(&samples),
        samples,
    })
}

/// A sampled instance of a three-point identity.
#[derive(Clone, Debug, Serialize)]
pub struct ThreePointResidual {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub gamma: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `λ(y,x) = v(y) − V_γ(y,x)` at the sampled pair.
    pub lambda: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::smooth_noise;
    use crate::lift::phi43_counterterms;
    use crate::symtree::{enumerate_universe, i_of};
    use std::sync::Arc;

    fn setup(p: i64, q: i64) -> LocalProduct {
        let g = Arc::new(Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 16.0).unwrap());
        let u = Arc::new(enumerate_universe(Rational::new(p, q), 1).unwrap());
        LocalProduct::multiplicative(&smooth_noise(&g, 1.0), &u).unwrap()
    }

    #[test]
    fn polynomial_and_wild_values() {
        let lp = setup(9, 20);
        let path = Path::new(&lp).unwrap();
        let g = path.grid();
        let z = g.nearest(0.5, &[0.25]).unwrap();
        let x = g.nearest(0.3, &[-0.5]).unwrap();
        assert_eq!(path.eval(i_of(Tree::one()), z, x).unwrap(), 1.0);
        assert_eq!(path.eval(i_of(Tree::x(1)), z, x).unwrap(), 0.75);
        let cx = path.centering(x);
        assert_eq!(path.cen(i_of(Tree::x(1)), &cx).unwrap(), 0.5);
        let px = plus(1, Tree::x(1), lp.universe.delta).unwrap();
        assert_eq!(path.cen(px, &cx).unwrap(), 1.0);
        assert_eq!(path.eval(Tree::xi(), z, x).unwrap(), lp.xi().data[z]);
        let ixi = i_of(Tree::xi());
        assert_eq!(path.eval(ixi, z, x).unwrap(), lp.g_field(Tree::xi()).unwrap().data[z]);
    }

    #[test]
    fn diagonal_of_planted_trees_vanishes() {
        let lp = setup(3, 10);
        let path = Path::new(&lp).unwrap();
        let g = path.grid();
        let x = g.nearest(0.4, &[0.3]).unwrap();
        let c = path.centering(x);
        for &t in lp.universe.set(TreeSet::N) {
            if t == Tree::one() {
                continue;
            }
            let v = path.pair(x, &c, &c).eval(i_of(t)).unwrap();
            assert!(v.abs() < 1e-12, "{t}: {v}");
        }
        for &t in lp.universe.set(TreeSet::NTilde) {
            let v = path.pair(x, &c, &c).eval(minus(1, t).unwrap()).unwrap();
            assert!(v.abs() < 1e-12, "{t}: {v}");
        }
    }

    #[test]
    fn chen_on_multiplicative_and_renormalised_lifts() {
        for lp in [setup(3, 10), {
            let base = setup(9, 20);
            let r = phi43_counterterms(&base.universe, 0.3, 0.1).unwrap();
            LocalProduct::from_counterterms(base.xi(), &base.universe, &r).unwrap()
        }] {
            let path = Path::new(&lp).unwrap();
            let triples = sample_triples(path.grid(), 6, 7, 0.3);
            let rep = chen_scan(&path, &triples, 1e-10).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().next());
            let rep = path_identity_scan(&path, &triples, 1e-10, 1e-9).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().next());
        }
    }

    #[test]
    fn renormalised_path_formula() {
        let base = setup(9, 20);
        let r = phi43_counterterms(&base.universe, 0.3, 0.1).unwrap();
        let lp = LocalProduct::from_counterterms(base.xi(), &base.universe, &r).unwrap();
        let path = Path::new(&lp).unwrap();
        for (z, _, x) in sample_triples(path.grid(), 4, 3, 0.3) {
            let (cz, cx) = (path.centering(z), path.centering(x));
            let zx = path.pair(z, &cz, &cx);
            for t in lp.universe.products() {
                let sd = renorm_path_sides(&path, t, &zx).unwrap();
                assert!(sd.rel() < 1e-10, "{t}: {sd:?}");
            }
        }
    }

    #[test]
    fn separation_scan_of_coordinate_tree() {
        let lp = setup(9, 20);
        let path = Path::new(&lp).unwrap();
        let g = path.grid();
        let x = g.nearest(0.5, &[0.0]).unwrap();
        let rep = order_scan(&path, i_of(Tree::x(1)), &[x], &[0.125, 0.25, 0.5]).unwrap();
        assert_eq!(rep.branch, Branch::Separation);
        for &(l, v) in &rep.samples {
            assert_eq!(v, l);
        }
        assert!((rep.slope.unwrap() - 1.0).abs() < 1e-12);
        assert!(order_scan(&path, i_of(Tree::x(1)), &[x], &[0.25, 0.5]).is_err());
    }

    #[test]
    fn loglog_fit() {
        let s: Vec<(f64, f64)> = [0.1, 0.2, 0.4].iter().map(|&l| (l, 3.0 * l * l)).collect();
        assert!((loglog_slope(&s).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(0.1, 0.0), (0.2, 0.0)]), None);
    }
}
