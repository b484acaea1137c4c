//! The coefficient map `Υ`, its coherence identities, and the classification
//! of the continuity errors `U^τ`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_traits::{One, Zero};
use serde::Serialize;

use crate::coalgebra::{cplus, Forest};
use crate::report::Report;
use crate::symtree::{product_of, Kind, Tree, TreeSet, TreeUniverse, MAX_DIM};
use crate::{Error, Rational, Scalar};

/// Exponents of `v_1` and `v_{X_1..X_d}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Exps {
    pub one: u32,
    pub x: [u32; MAX_DIM],
}

impl Exps {
    fn mul(self, o: Exps) -> Exps {
        let mut x = self.x;
        for i in 0..MAX_DIM {
            x[i] += o.x[i];
        }
        Exps { one: self.one + o.one, x }
    }
}

/// Polynomial in `v_1, v_X` with rational coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Monomials(pub BTreeMap<Exps, Rational>);

impl Monomials {
    pub fn constant(c: Rational) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Exps::default(), c);
        }
        Monomials(m)
    }

    pub fn mul(&self, o: &Monomials) -> Monomials {
        let mut m: BTreeMap<Exps, Rational> = BTreeMap::new();
        for (a, ca) in &self.0 {
            for (b, cb) in &o.0 {
                *m.entry(a.mul(*b)).or_insert_with(Rational::zero) += *ca * *cb;
            }
        }
        m.retain(|_, c| !c.is_zero());
        Monomials(m)
    }

    pub fn add_assign(&mut self, o: &Monomials) {
        for (e, c) in &o.0 {
            *self.0.entry(*e).or_insert_with(Rational::zero) += *c;
        }
        self.0.retain(|_, c| !c.is_zero());
    }

    pub fn scale(&self, c: Rational) -> Monomials {
        let mut m = self.0.clone();
        for v in m.values_mut() {
            *v *= c;
        }
        m.retain(|_, c| !c.is_zero());
        Monomials(m)
    }
}

impl fmt::Display for Monomials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(e, c)| {
                let mut s = format!("{c}");
                if e.one > 0 {
                    s += &format!("·v1^{}", e.one);
                }
                for (i, &k) in e.x.iter().enumerate() {
                    if k > 0 {
                        s += &format!("·vX{}^{}", i + 1, k);
                    }
                }
                s
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// `Υ(σ)` as a formal monomial, by the defining recursion.
pub fn upsilon_formal(t: Tree) -> Monomials {
    match t.kind() {
        Kind::One => {
            let mut m = BTreeMap::new();
            m.insert(Exps { one: 1, x: [0; MAX_DIM] }, Rational::one());
            Monomials(m)
        }
        Kind::X(i) => {
            let mut x = [0; MAX_DIM];
            x[i as usize - 1] = 1;
            let mut m = BTreeMap::new();
            m.insert(Exps { one: 0, x }, Rational::one());
            Monomials(m)
        }
        Kind::Xi => Monomials::constant(Rational::one()),
        Kind::Planted(_, c) => upsilon_formal(c),
        Kind::Product(ch) => {
            let mut m = Monomials::constant(-Rational::one());
            for c in ch {
                m = m.mul(&upsilon_formal(c));
            }
            m
        }
    }
}

/// Closed form `(-1)^{(m-1)/2} v_1^{m_1} ∏ v_{X_i}^{m_{x_i}}` as a formal monomial.
pub fn upsilon_closed_formal(t: Tree) -> Monomials {
    let mut x = [0; MAX_DIM];
    for (i, e) in x.iter_mut().enumerate() {
        *e = t.m_x(i + 1);
    }
    let mut m = BTreeMap::new();
    m.insert(Exps { one: t.m_one(), x }, Rational::from_integer(t.sign()));
    Monomials(m)
}

/// Multiplicative extension to forests.
pub fn upsilon_forest_formal(f: &Forest) -> Monomials {
    f.trees().iter().fold(Monomials::constant(Rational::one()), |acc, &t| acc.mul(&upsilon_formal(t)))
}

/// Point values `v_1(z)`, `v_X(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsilonParams<S> {
    pub v1: S,
    pub vx: Vec<S>,
}

impl<S: Scalar> UpsilonParams<S> {
    pub fn new(v1: S, vx: Vec<S>) -> Self {
        UpsilonParams { v1, vx }
    }

    /// `Υ(σ)` in closed form; planted trees inherit the value of their child.
    pub fn upsilon(&self, t: Tree) -> S {
        let mut v = if t.sign() > 0 { S::one() } else { -S::one() };
        v *= self.v1.powi(t.m_one() as i32);
        for (i, &x) in self.vx.iter().enumerate() {
            let k = t.m_x(i + 1);
            if k > 0 {
                v *= x.powi(k as i32);
            }
        }
        v
    }

    /// `Υ(σ)` by the defining recursion.
    pub fn upsilon_recursive(&self, t: Tree) -> S {
        match t.kind() {
            Kind::One => self.v1,
            Kind::X(i) => self.vx[i as usize - 1],
            Kind::Xi => S::one(),
            Kind::Planted(_, c) => self.upsilon_recursive(c),
            Kind::Product(ch) => -ch.iter().fold(S::one(), |acc, &c| acc * self.upsilon_recursive(c)),
        }
    }

    pub fn upsilon_forest(&self, f: &Forest) -> S {
        f.trees().iter().fold(S::one(), |acc, &t| acc * self.upsilon(t))
    }
}

/// Expands `-(Σ_{τ ∈ N ∪ W} Υ(τ) I(τ))³` with truncation and matches it against
/// `Σ_{τ ∈ N̊ ∪ W̊} Υ(τ) τ`.
pub fn check_cube_identity(u: &TreeUniverse) -> Report {
    let delta = u.delta;
    let mut keyed: Vec<(Rational, Tree)> = u.n_and_w().into_iter().map(|t| (t.order(delta) + 2, t)).collect();
    keyed.sort();
    let lo = keyed.first().map(|k| k.0).unwrap_or_else(Rational::zero);
    let mut lhs: HashMap<Tree, Monomials> = HashMap::new();
    let ups: HashMap<Tree, Monomials> = keyed.iter().map(|&(_, t)| (t, upsilon_formal(t))).collect();
    for &(oa, a) in &keyed {
        if oa + lo + lo > Rational::zero() {
            break;
        }
        for &(ob, b) in &keyed {
            if oa + ob + lo > Rational::zero() {
                break;
            }
            let ab = ups[&a].mul(&ups[&b]).scale(-Rational::one());
            for &(oc, c) in &keyed {
                if oa + ob + oc > Rational::zero() {
                    break;
                }
                let t = product_of(a, b, c, delta).expect("within truncation");
                lhs.entry(t).or_default().add_assign(&ab.mul(&ups[&c]));
            }
        }
    }
    let mut rep = Report::new();
    let products = u.products();
    for &t in &products {
        let l = lhs.remove(&t).unwrap_or_default();
        let r = upsilon_formal(t);
        rep.push("cube_identity", t, l == r, &l, &r);
    }
    for (t, l) in lhs {
        rep.push("cube_identity", t, false, l, "absent from N0 ∪ W0");
    }
    rep
}

/// `Υ(τ̄) = (-1)^{(m(τ)-1)/2} Υ(C₊(τ, τ̄))` for `τ ∈ N`, `τ̄ ∈ N̊` with `C₊(τ, τ̄) ≠ 0`,
/// together with recursive vs closed-form `Υ` on every tree.
pub fn check_coherence(u: &TreeUniverse) -> Report {
    let mut rep = Report::new();
    for &tb in u.set(TreeSet::NRing) {
        let ub = upsilon_formal(tb);
        for &t in u.set(TreeSet::N) {
            if let Some(c) = cplus(t, tb, u.delta) {
                let r = upsilon_forest_formal(&c).scale(Rational::from_integer(t.sign()));
                rep.push("coherence", format!("{t} ; {tb}"), ub == r, &ub, &r);
            }
        }
    }
    for t in u.n_and_w() {
        let (a, b) = (upsilon_formal(t), upsilon_closed_formal(t));
        rep.push("upsilon_closed_form", t, a == b, &a, &b);
    }
    rep
}

/// Which expression the continuity error `U^τ` reduces to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "class", content = "index")]
pub enum UtauKind {
    V,
    V2,
    VX(usize),
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UtauClass {
    pub kind: UtauKind,
    pub sign: i64,
}

pub fn classify_utau(u: &TreeUniverse, t: Tree) -> Result<UtauClass, Error> {
    if !u.contains(TreeSet::N, t) {
        return Err(Error::Domain(format!("{t} is not in N")));
    }
    let sign = t.sign();
    let kind = match (t.m_one(), t.m_x_total()) {
        (1, 0) => UtauKind::V,
        (2, 0) => UtauKind::V2,
        (0, 1) => UtauKind::VX((1..=u.dim).find(|&i| t.m_x(i) == 1).expect("one X leaf")),
        (0, 0) => UtauKind::Zero,
        _ => return Err(Error::Domain(format!("{t} has unexpected polynomial leaves"))),
    };
    Ok(UtauClass { kind, sign })
}

/// Classification table rows `{tree, class, sign, m_counts}`.
pub fn classification_json(u: &TreeUniverse) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = u
        .set(TreeSet::N)
        .iter()
        .filter_map(|&t| {
            let c = classify_utau(u, t).ok()?;
            Some(serde_json::json!({
                "tree": t.to_string(),
                "class": c.kind,
                "sign": c.sign,
                "m_counts": {"xi": t.m_xi(), "one": t.m_one(), "x": t.m_x_vec(u.dim)},
            }))
        })
        .collect();
    serde_json::Value::Array(rows)
}

/// Truncation index sets at a level `γ`, all selected by exact order comparisons.
#[derive(Clone, Debug)]
pub struct IndexSets {
    pub gamma: Rational,
    /// `τ ∈ N` with `|τ| < γ - 2`.
    pub v: Vec<Tree>,
    /// Ordered pairs in `N²` with `|τ_1| + |τ_2| < γ - 4`.
    pub v2: Vec<(Tree, Tree)>,
    /// Per direction: `τ ∈ Ñ ∪ {X_i}` with `|τ| < γ - 1`.
    pub vx: Vec<Vec<Tree>>,
}

impl IndexSets {
    pub fn new(u: &TreeUniverse, gamma: Rational) -> Self {
        let d = u.delta;
        let n = u.set(TreeSet::N);
        let v: Vec<Tree> = n.iter().copied().filter(|t| t.order(d) < gamma - 2).collect();
        let mut v2 = Vec::new();
        for &a in n {
            for &b in n {
                if a.order(d) + b.order(d) < gamma - 4 {
                    v2.push((a, b));
                }
            }
        }
        let vx = (1..=u.dim)
            .map(|i| {
                std::iter::once(Tree::x(i))
                    .chain(u.set(TreeSet::NTilde).iter().copied())
                    .filter(|t| t.order(d) < gamma - 1)
                    .collect()
            })
            .collect();
        IndexSets { gamma, v, v2, vx }
    }
}

/// Whether `γ` coincides with a level at which one of the truncated sums changes.
pub fn gamma_is_resonant(u: &TreeUniverse, gamma: Rational) -> bool {
    let d = u.delta;
    u.set(TreeSet::N).iter().any(|t| {
        let o = t.order(d);
        o + 2 == gamma || o == gamma || o + 1 == gamma
    })
}

/// A non-resonant level strictly inside `(lo, hi)`: the midpoint of the widest free gap.
pub fn gamma_between(u: &TreeUniverse, lo: Rational, hi: Rational) -> Option<Rational> {
    let d = u.delta;
    let mut cuts: Vec<Rational> = vec![lo, hi];
    for t in u.set(TreeSet::N) {
        let o = t.order(d);
        for c in [o + 2, o, o + 1] {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
    }
    cuts.sort();
    cuts.dedup();
    let (a, b) = cuts.windows(2).map(|w| (w[0], w[1])).max_by(|x, y| (x.1 - x.0).cmp(&(y.1 - y.0)))?;
    let g = (a + b) / 2;
    (!gamma_is_resonant(u, g)).then_some(g)
}

/// Index-set bookkeeping: nested truncations, exact bands, and the pair sets.
pub fn verify_index_sets(u: &TreeUniverse, gammas: &[Rational]) -> Report {
    let mut rep = Report::new();
    let d = u.delta;
    for &g in gammas {
        let s = IndexSets::new(u, g);
        for &beta in gammas.iter().filter(|&&b| b > Rational::zero() && b < g) {
            let lower = IndexSets::new(u, g - beta);
            let nested = lower.v.iter().all(|t| s.v.contains(t));
            let band: Vec<Tree> = s.v.iter().copied().filter(|t| !lower.v.contains(t)).collect();
            let band_ok = band.iter().all(|t| {
                let o = t.order(d);
                o >= g - beta - 2 && o < g - 2
            });
            rep.push("index_truncation", format!("gamma={g} beta={beta}"), nested && band_ok, band.len(), "");
        }
        let pairs_ok = s.v2.iter().all(|(a, b)| s.v.contains(a) || a.order(d) + b.order(d) < g - 4);
        let sym = s.v2.iter().all(|(a, b)| s.v2.contains(&(*b, *a)));
        rep.push("index_pairs", format!("gamma={g}"), pairs_ok && sym, s.v2.len(), "");
        let vx_ok = s.vx.iter().enumerate().all(|(i, v)| {
            v.iter().all(|t| t.order(d) < g - 1 && (*t == Tree::x(i + 1) || u.contains(TreeSet::NTilde, *t)))
        });
        rep.push("index_vx", format!("gamma={g}"), vx_ok, "", "");
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symtree::enumerate_universe;

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn values() {
        let p = UpsilonParams::new(2.5, vec![0.5]);
        assert_eq!(p.upsilon(t("Xi")), 1.0);
        assert_eq!(p.upsilon(t("[I(Xi) I(Xi) I(Xi)]")), -1.0);
        assert_eq!(p.upsilon(t("One")), 2.5);
        let c = t("[I(One) I(One) I(One)]");
        assert_eq!(p.upsilon(c), -15.625);
        assert_eq!(p.upsilon_recursive(c), -15.625);
        let formal = upsilon_formal(c);
        assert_eq!(formal.to_string(), "-1·v1^3");
    }

    #[test]
    fn cube_and_coherence_at_three_tenths() {
        let u = enumerate_universe(Rational::new(3, 10), 1).unwrap();
        let rep = check_cube_identity(&u);
        assert!(rep.passed(), "{:?}", rep.failures().next());
        let rep = check_coherence(&u);
        assert!(rep.passed(), "{:?}", rep.failures().next());
    }

    #[test]
    fn classification() {
        let u = enumerate_universe(Rational::new(9, 20), 1).unwrap();
        let c = classify_utau(&u, t("[I(One) I(Xi) I(Xi)]")).unwrap();
        assert_eq!(c, UtauClass { kind: UtauKind::V, sign: -1 });
        let c = classify_utau(&u, t("[I(X1) I(Xi) I(Xi)]")).unwrap();
        assert_eq!(c.kind, UtauKind::VX(1));
        let c = classify_utau(&u, t("[I(Xi) I(Xi) I([I(Xi) I(Xi) I(Xi)])]")).unwrap();
        assert_eq!(c.kind, UtauKind::Zero);
        assert!(classify_utau(&u, t("Xi")).is_err());
    }

    #[test]
    fn gamma_helpers() {
        let u = enumerate_universe(Rational::new(9, 20), 1).unwrap();
        let g = gamma_between(&u, Rational::new(1, 1), Rational::new(2, 1)).unwrap();
        assert!(!gamma_is_resonant(&u, g));
        assert!(gamma_is_resonant(&u, Rational::new(0, 1)));
        assert!(verify_index_sets(&u, &[g, Rational::new(1, 2) + Rational::new(1, 100)]).passed());
    }
}
