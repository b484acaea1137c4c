//! Local products: tables `τ ↦ X_•τ` on a grid, their heat-solved primitives
//! `G_τ = L⁻¹X_•τ`, and the spatial gradients of those primitives.
//!
//! Tables are stored once per permutation class. Trees of `Q` are built either
//! multiplicatively or through a counterterm map; the other products follow the
//! extension rules for `X_i` and repeated `1` children.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::coalgebra::{cminus, Forest};
use crate::field::{grad, heat_solve, sc, Field, Grid};
use crate::symtree::{Edge, Kind, Tree, TreeSet, TreeUniverse};
use crate::{Error, Scalar};

/// Constants `r(τ)` on `Q`, keyed by permutation class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountertermMap {
    values: HashMap<Tree, f64>,
}

impl CountertermMap {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds the map from per-tree entries, rejecting trees outside `Q` and
    /// permutations of one tree carrying different values.
    pub fn from_entries(u: &TreeUniverse, entries: &[(Tree, f64)]) -> Result<Self, Error> {
        let mut values: HashMap<Tree, f64> = HashMap::new();
        for &(t, v) in entries {
            if !u.contains(TreeSet::Q, t) {
                return Err(Error::Config(format!("counterterm on {t}, which is not in Q")));
            }
            match values.insert(t.canonical(), v) {
                Some(old) if old != v => {
                    return Err(Error::Config(format!("counterterm map not permutation-invariant at {t}: {old} vs {v}")))
                }
                _ => {}
            }
        }
        values.retain(|_, v| *v != 0.0);
        Ok(CountertermMap { values })
    }

    pub fn get(&self, t: Tree) -> f64 {
        self.values.get(&t.canonical()).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// `(class, value)` sorted by the printed tree.
    pub fn entries(&self) -> Vec<(Tree, f64)> {
        let mut v: Vec<(Tree, f64)> = self.values.iter().map(|(&t, &x)| (t, x)).collect();
        v.sort_by_key(|e| e.0.to_string());
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.entries().into_iter().map(|(t, v)| serde_json::json!({"tree": t.to_string(), "r": v})).collect(),
        )
    }

    /// Parses the JSON written by [`CountertermMap::to_json`].
    pub fn from_json(u: &TreeUniverse, v: &serde_json::Value) -> Result<Self, Error> {
        let arr = v.as_array().ok_or_else(|| Error::Parse("counterterm file must be a JSON array".into()))?;
        let mut entries = Vec::new();
        for e in arr {
            let t: Tree = e["tree"].as_str().ok_or_else(|| Error::Parse("entry without 'tree'".into()))?.parse()?;
            let r = e["r"].as_f64().ok_or_else(|| Error::Parse(format!("entry {t} without numeric 'r'")))?;
            entries.push((t, r));
        }
        Self::from_entries(u, &entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftKind {
    Multiplicative,
    Counterterm,
    Custom,
}

/// A local product on a grid.
#[derive(Clone, Debug)]
pub struct LocalProduct<S: Scalar = f64> {
    pub universe: Arc<TreeUniverse>,
    pub grid: Arc<Grid>,
    pub kind: LiftKind,
    pub r: CountertermMap,
    x: HashMap<Tree, Field<S>>,
    g: HashMap<Tree, Field<S>>,
    dg: HashMap<Tree, Vec<Field<S>>>,
    order: Vec<Tree>,
}

/// One factor of a multiplicatively evaluated forest.
enum Factor<'a, S: Scalar> {
    Const(S),
    Coord(usize),
    Field(&'a Field<S>),
}

/// Product classes of `N̊ ∪ W̊` in building order: edges plus `X` leaves, then shape.
pub fn build_order(u: &TreeUniverse) -> Vec<Tree> {
    let mut classes: Vec<Tree> = u.products().into_iter().map(Tree::canonical).collect();
    classes.sort_by(|a, b| (a.edges() + a.m_x_total()).cmp(&(b.edges() + b.m_x_total())).then(a.cmp_structural(*b)));
    classes.dedup();
    classes
}

/// `τ` with one `I(X_i)` child replaced by `I(1)`, when the root has such a child.
fn strip_x(t: Tree) -> Option<(usize, Tree)> {
    let ch = t.children()?;
    let inner = t.inner()?;
    let k = inner.iter().position(|c| matches!(c.kind(), Kind::X(_)))?;
    let Kind::X(i) = inner[k].kind() else { unreachable!() };
    let mut c2 = ch;
    c2[k] = crate::symtree::i_of(Tree::one());
    Some((i as usize, crate::symtree::product_raw(c2).ok()?))
}

/// The third child when the other two are `I(1)`.
fn two_ones(t: Tree) -> Option<Tree> {
    let inner = t.inner()?;
    let ones: Vec<usize> = (0..3).filter(|&k| inner[k] == Tree::one()).collect();
    if ones.len() < 2 {
        return None;
    }
    let rest = (0..3).find(|k| !ones[..2].contains(k)).unwrap();
    Some(t.children()?[rest])
}

/// Expansion `Rτ = q_F τ + Σ_{τ'∈Q} r(τ') C₋(τ', τ)` as sorted `(forest, coefficient)` pairs.
pub fn r_expansion(u: &TreeUniverse, t: Tree, r: &CountertermMap) -> Vec<(Forest, f64)> {
    let mut acc: HashMap<Forest, f64> = HashMap::new();
    if let Some(ch) = t.children() {
        *acc.entry(Forest(ch.to_vec()).normalized()).or_default() += 1.0;
    }
    if !r.is_zero() {
        for &q in u.set(TreeSet::Q) {
            let rq = r.get(q);
            if rq == 0.0 {
                continue;
            }
            if let Some(f) = cminus(q, t) {
                *acc.entry(f.normalized()).or_default() += rq;
            }
        }
    }
    let mut v: Vec<(Forest, f64)> = acc.into_iter().filter(|e| e.1 != 0.0).collect();
    v.sort_by_key(|e| e.0.to_string());
    v
}

enum Mode<'a, S: Scalar> {
    Multiplicative,
    Counterterm(&'a CountertermMap),
    Custom(&'a HashMap<Tree, Field<S>>),
}

impl<S: Scalar> LocalProduct<S> {
    /// The multiplicative lift of `ξ`.
    pub fn multiplicative(xi: &Field<S>, u: &Arc<TreeUniverse>) -> Result<Self, Error> {
        Self::build(xi, u, Mode::Multiplicative)
    }

    /// The lift with `X_z τ = X_z Rτ` on `Q`.
    pub fn from_counterterms(xi: &Field<S>, u: &Arc<TreeUniverse>, r: &CountertermMap) -> Result<Self, Error> {
        Self::build(xi, u, Mode::Counterterm(r))
    }

    /// A lift with user-supplied fields on the classes of `Q`.
    pub fn custom(xi: &Field<S>, u: &Arc<TreeUniverse>, q_fields: &HashMap<Tree, Field<S>>) -> Result<Self, Error> {
        Self::build(xi, u, Mode::Custom(q_fields))
    }

    fn build(xi: &Field<S>, u: &Arc<TreeUniverse>, mode: Mode<'_, S>) -> Result<Self, Error> {
        if !xi.is_finite() {
            return Err(Error::Numerical("noise field has non-finite values".into()));
        }
        let (kind, r) = match &mode {
            Mode::Multiplicative => (LiftKind::Multiplicative, CountertermMap::zero()),
            Mode::Counterterm(r) => (LiftKind::Counterterm, (*r).clone()),
            Mode::Custom(_) => (LiftKind::Custom, CountertermMap::zero()),
        };
        if let Mode::Counterterm(r) = &mode {
            for (t, _) in r.entries() {
                if !u.contains(TreeSet::Q, t) {
                    return Err(Error::Config(format!("counterterm on {t}, which is not in Q")));
                }
            }
        }
        let mut lp = LocalProduct {
            universe: u.clone(),
            grid: xi.grid.clone(),
            kind,
            r,
            x: HashMap::new(),
            g: HashMap::new(),
            dg: HashMap::new(),
            order: Vec::new(),
        };
        lp.insert(Tree::xi(), xi.clone())?;
        for t in build_order(u) {
            let f = if u.contains(TreeSet::Q, t) {
                match &mode {
                    Mode::Multiplicative => lp.eval_expansion(&[(Forest(t.children().unwrap().to_vec()).normalized(), 1.0)])?,
                    Mode::Counterterm(r) => {
                        let e = r_expansion(u, t, r);
                        lp.check_triangular(t, &e)?;
                        lp.eval_expansion(&e)?
                    }
                    Mode::Custom(m) => {
                        let f = m.get(&t).ok_or_else(|| Error::Config(format!("custom lift lacks a field for {t}")))?;
                        if f.grid != lp.grid {
                            return Err(Error::Config(format!("custom field for {t} lives on another grid")));
                        }
                        f.clone()
                    }
                }
            } else {
                lp.extend(t)?
            };
            lp.insert(t, f)?;
        }
        Ok(lp)
    }

    fn insert(&mut self, t: Tree, f: Field<S>) -> Result<(), Error> {
        let g = heat_solve(&f)?;
        let dg = (0..self.grid.dim).map(|i| grad(&g, i)).collect();
        self.x.insert(t, f);
        self.g.insert(t, g);
        self.dg.insert(t, dg);
        self.order.push(t);
        Ok(())
    }

    /// Extension rules for products outside `Q`.
    fn extend(&self, t: Tree) -> Result<Field<S>, Error> {
        if let Some((i, rest)) = strip_x(t) {
            let base = self.x_field(rest)?;
            let g = &*self.grid;
            let data = base
                .data
                .iter()
                .enumerate()
                .map(|(z, &v)| {
                    let (_, x) = g.coords(z);
                    sc::<S>(x[i - 1]) * v
                })
                .collect();
            return Field::from_vec(&self.grid, data);
        }
        if let Some(p) = two_ones(t) {
            return self.eval_expansion(&[(Forest::single(p), 1.0)]);
        }
        Err(Error::Domain(format!("no extension rule for {t}")))
    }

    fn check_triangular(&self, t: Tree, e: &[(Forest, f64)]) -> Result<(), Error> {
        for (f, _) in e {
            for &p in f.trees() {
                let Kind::Planted(_, c) = p.kind() else {
                    return Err(Error::Config(format!("R({t}) contains unplanted factor {p}")));
                };
                if c.is_poly() {
                    continue;
                }
                if c.edges() >= t.edges() || !self.g.contains_key(&c.canonical()) {
                    return Err(Error::Config(format!("R({t}) is not triangular: factor {p}")));
                }
            }
        }
        Ok(())
    }

    fn factor(&self, p: Tree) -> Result<Factor<'_, S>, Error> {
        let bad = || Error::Domain(format!("{p} has no multiplicative value"));
        let Kind::Planted(e, c) = p.kind() else { return Err(bad()) };
        Ok(match (e, c.kind()) {
            (Edge::I, Kind::One) => Factor::Const(S::one()),
            (Edge::I, Kind::X(i)) => Factor::Coord(i as usize - 1),
            (Edge::I, _) => Factor::Field(self.g_field(c)?),
            (Edge::Plus(i) | Edge::Minus(i), Kind::X(j)) => Factor::Const(if i == j { S::one() } else { S::zero() }),
            (Edge::Minus(i), Kind::Xi | Kind::Product(_)) => Factor::Field(self.dg_field(c, i as usize)?),
            _ => return Err(bad()),
        })
    }

    /// `Σ c · Π X_• (planted factors)` over the whole grid.
    pub fn eval_expansion(&self, e: &[(Forest, f64)]) -> Result<Field<S>, Error> {
        let g = &*self.grid;
        let mut out = Field::zeros(&self.grid);
        for (f, c) in e {
            let fs: Vec<Factor<'_, S>> = f.trees().iter().map(|&p| self.factor(p)).collect::<Result<_, _>>()?;
            let c: S = sc(*c);
            for z in 0..g.len() {
                let mut v = c;
                for fac in &fs {
                    v *= match fac {
                        Factor::Const(k) => *k,
                        Factor::Coord(i) => sc(g.coords(z).1[*i]),
                        Factor::Field(fld) => fld.data[z],
                    };
                }
                out.data[z] += v;
            }
        }
        Ok(out)
    }

    /// `X_z` of a planted tree at one node, multiplicatively.
    pub fn planted_at(&self, p: Tree, z: usize) -> Result<S, Error> {
        Ok(match self.factor(p)? {
            Factor::Const(k) => k,
            Factor::Coord(i) => sc(self.grid.coords(z).1[i]),
            Factor::Field(f) => f.data[z],
        })
    }

    pub fn forest_at(&self, f: &Forest, z: usize) -> Result<S, Error> {
        f.trees().iter().try_fold(S::one(), |acc, &p| Ok(acc * self.planted_at(p, z)?))
    }

    fn lookup<'a, T>(&self, m: &'a HashMap<Tree, T>, t: Tree, what: &str) -> Result<&'a T, Error> {
        m.get(&t.canonical()).ok_or_else(|| Error::Domain(format!("local product has no {what} for {t}")))
    }

    /// `X_•τ` for `τ ∈ N̊ ∪ W̊ ∪ {Ξ}`.
    pub fn x_field(&self, t: Tree) -> Result<&Field<S>, Error> {
        self.lookup(&self.x, t, "value")
    }

    /// `G_τ = L⁻¹X_•τ`.
    pub fn g_field(&self, t: Tree) -> Result<&Field<S>, Error> {
        self.lookup(&self.g, t, "primitive")
    }

    /// `∂_i G_τ`, `i` 1-based.
    pub fn dg_field(&self, t: Tree, i: usize) -> Result<&Field<S>, Error> {
        self.lookup(&self.dg, t, "gradient").map(|v| &v[i - 1])
    }

    pub fn xi(&self) -> &Field<S> {
        &self.x[&Tree::xi()]
    }

    /// Stored classes in building order (`Ξ` first).
    pub fn classes(&self) -> &[Tree] {
        &self.order
    }

    /// Recomputes `X_z Rτ` for every product, including every permutation of
    /// every class, and compares with the stored table. Returns the worst
    /// absolute difference and the offending tree.
    pub fn check_against_r(&self) -> Result<(f64, Option<Tree>), Error> {
        let mut worst = (0.0f64, None);
        for t in self.universe.products() {
            let e = r_expansion(&self.universe, t, &self.r);
            let f = self.eval_expansion(&e)?;
            let stored = self.x_field(t)?;
            for (a, b) in f.data.iter().zip(&stored.data) {
                let d = (*a - *b).abs().to_f64().unwrap();
                let scale = a.abs().max(b.abs()).to_f64().unwrap().max(1.0);
                if d / scale > worst.0 {
                    worst = (d / scale, Some(t));
                }
            }
        }
        Ok(worst)
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "delta": self.universe.delta.to_string(),
            "dim": self.universe.dim,
            "grid": *self.grid,
            "classes": self.order.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            "counterterms": self.r.to_json(),
        })
    }
}

/// Ensemble estimates of the two constants of the `Φ⁴₃` example.
#[derive(Clone, Debug, Serialize)]
pub struct Phi43Estimate {
    pub c_wick: f64,
    pub c_sunset: f64,
    pub se_wick: f64,
    pub se_sunset: f64,
    pub samples: usize,
    pub probe_nodes: usize,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `C_wick = E[(L⁻¹ξ)²]` and `C_sunset = E[θ L⁻¹θ]` with `θ = (L⁻¹ξ)² − C_wick`,
/// expectations replaced by ensemble and space-time averages over `probe`.
/// With `max_rel_se` set, an ensemble whose standard error exceeds that fraction
/// of the estimate is rejected.
pub fn phi43_constants(xis: &[Field<f64>], probe: &[usize], max_rel_se: Option<f64>) -> Result<Phi43Estimate, Error> {
    if xis.is_empty() || probe.is_empty() {
        return Err(Error::Config("empty ensemble or probe region".into()));
    }
    let avg = |f: &Field<f64>| probe.iter().map(|&z| f.data[z]).sum::<f64>() / probe.len() as f64;
    let gs: Vec<Field<f64>> = xis.iter().map(heat_solve).collect::<Result<_, _>>()?;
    let sq: Vec<Field<f64>> = gs.iter().map(|g| g.mul(g)).collect();
    let (c_wick, se_wick) = mean_se(&sq.iter().map(avg).collect::<Vec<_>>());
    let mut sunset = Vec::new();
    for s in &sq {
        let theta = s.map(|v| v - c_wick);
        let lt = heat_solve(&theta)?;
        sunset.push(avg(&theta.mul(&lt)));
    }
    let (c_sunset, se_sunset) = mean_se(&sunset);
    if let Some(tol) = max_rel_se {
        for (c, se, name) in [(c_wick, se_wick, "C_wick"), (c_sunset, se_sunset, "C_sunset")] {
            if se > tol * c.abs() {
                return Err(Error::Config(format!(
                    "ensemble of {} too small: {name} = {c:.4e} ± {se:.2e}",
                    xis.len()
                )));
            }
        }
    }
    Ok(Phi43Estimate { c_wick, c_sunset, se_wick, se_sunset, samples: xis.len(), probe_nodes: probe.len() })
}

/// `I(1)I(Ξ)I(Ξ)`, whose three orderings form `Q_wick`.
pub fn wick_tree() -> Tree {
    use crate::symtree::{i_of, product_raw};
    product_raw([i_of(Tree::one()), i_of(Tree::xi()), i_of(Tree::xi())]).expect("planted")
}

/// `I(Ξ)I(I(Ξ)I(1)I(Ξ))I(Ξ)`, whose nine orderings form `Q_sunset`.
pub fn sunset_tree() -> Tree {
    use crate::symtree::{i_of, product_raw};
    product_raw([i_of(Tree::xi()), i_of(wick_tree()), i_of(Tree::xi())]).expect("planted")
}

/// The map `−C_wick` on `Q_wick`, `−C_sunset` on `Q_sunset`, zero elsewhere.
pub fn phi43_counterterms(u: &TreeUniverse, c_wick: f64, c_sunset: f64) -> Result<CountertermMap, Error> {
    let mut entries = Vec::new();
    for &q in u.set(TreeSet::Q) {
        if q.canonical() == wick_tree().canonical() {
            entries.push((q, -c_wick));
        } else if q.canonical() == sunset_tree().canonical() {
            entries.push((q, -c_sunset));
        }
    }
    CountertermMap::from_entries(u, &entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{smooth_noise, Grid};
    use crate::symtree::enumerate_universe;
    use crate::Rational;

    fn setup() -> (Arc<Grid>, Arc<TreeUniverse>) {
        let g = Arc::new(Grid::with_resolution(1, 3.0, -0.5, 1.1, 1.0 / 16.0).unwrap());
        let u = Arc::new(enumerate_universe(Rational::new(9, 20), 1).unwrap());
        (g, u)
    }

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn multiplicative_basics() {
        let (g, u) = setup();
        let xi = smooth_noise(&g, 1.0);
        let lp = LocalProduct::multiplicative(&xi, &u).unwrap();
        assert_eq!(lp.xi().data, xi.data);
        let gx = lp.g_field(Tree::xi()).unwrap();
        let cube = lp.x_field(t("[I(Xi) I(Xi) I(Xi)]")).unwrap();
        for z in 0..g.len() {
            assert_eq!(cube.data[z], gx.data[z] * gx.data[z] * gx.data[z]);
        }
        assert_eq!(lp.planted_at(t("I(One)"), 5).unwrap(), 1.0);
        let again = LocalProduct::multiplicative(&xi, &u).unwrap();
        for c in lp.classes() {
            assert_eq!(lp.x_field(*c).unwrap().data, again.x_field(*c).unwrap().data);
        }
    }

    #[test]
    fn extension_rules_hold() {
        let (g, u) = setup();
        let lp = LocalProduct::multiplicative(&smooth_noise(&g, 1.0), &u).unwrap();
        let with_x = lp.x_field(t("[I(X1) I(Xi) I(Xi)]")).unwrap();
        let with_one = lp.x_field(t("[I(One) I(Xi) I(Xi)]")).unwrap();
        for z in (0..g.len()).step_by(97) {
            let x = g.coords(z).1[0];
            assert_eq!(with_x.data[z], x * with_one.data[z]);
        }
        let ones = lp.x_field(t("[I(One) I(One) I(One)]")).unwrap();
        assert!(ones.data.iter().all(|&v| v == 1.0));
        let (w, _) = lp.check_against_r().unwrap();
        assert!(w < 1e-12, "{w}");
    }

    #[test]
    fn zero_counterterms_reproduce_multiplicative() {
        let (g, u) = setup();
        let xi = smooth_noise(&g, 1.0);
        let a = LocalProduct::multiplicative(&xi, &u).unwrap();
        let b = LocalProduct::from_counterterms(&xi, &u, &CountertermMap::zero()).unwrap();
        for c in a.classes() {
            assert_eq!(a.x_field(*c).unwrap().data, b.x_field(*c).unwrap().data);
        }
    }

    #[test]
    fn wick_renormalised_cube() {
        let (g, u) = setup();
        let xi = smooth_noise(&g, 1.0);
        let r = phi43_counterterms(&u, 0.7, 0.2).unwrap();
        let lp = LocalProduct::from_counterterms(&xi, &u, &r).unwrap();
        let gx = lp.g_field(Tree::xi()).unwrap();
        let cube = lp.x_field(t("[I(Xi) I(Xi) I(Xi)]")).unwrap();
        for z in (0..g.len()).step_by(31) {
            let v = gx.data[z];
            assert!((cube.data[z] - (v * v * v - 3.0 * 0.7 * v)).abs() < 1e-12);
        }
        let (w, at) = lp.check_against_r().unwrap();
        assert!(w < 1e-12, "{w} at {at:?}");
    }

    #[test]
    fn counterterm_map_validation() {
        let (_, u) = setup();
        let perms: Vec<Tree> = u.set(TreeSet::Q).iter().copied().filter(|q| q.canonical() == wick_tree().canonical()).collect();
        assert_eq!(perms.len(), 3);
        let sun = u.set(TreeSet::Q).iter().filter(|q| q.canonical() == sunset_tree().canonical()).count();
        assert_eq!(sun, 9);
        assert!(CountertermMap::from_entries(&u, &[(perms[0], 1.0), (perms[1], 2.0)]).is_err());
        assert!(CountertermMap::from_entries(&u, &[(t("[I(X1) I(Xi) I(Xi)]"), 1.0)]).is_err());
        let m = phi43_counterterms(&u, 1.0, 2.0).unwrap();
        let back = CountertermMap::from_json(&u, &m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn constants_of_zero_and_deterministic_noise() {
        let (g, _) = setup();
        let probe = crate::field::domain_probes(&g, 0);
        let e = phi43_constants(&[Field::zeros(&g)], &probe, None).unwrap();
        assert_eq!((e.c_wick, e.c_sunset), (0.0, 0.0));
        let xi = smooth_noise(&g, 1.0);
        let e = phi43_constants(std::slice::from_ref(&xi), &probe, None).unwrap();
        // direct quadrature oracle
        let gx = heat_solve(&xi).unwrap();
        let want = probe.iter().map(|&z| gx.data[z] * gx.data[z]).sum::<f64>() / probe.len() as f64;
        assert!((e.c_wick - want).abs() < 1e-14 * want.abs().max(1.0));
    }
}
