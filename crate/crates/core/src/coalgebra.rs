//! The coproduct `Δ`, the cut maps `C₊` and `C₋`, and exhaustive checks of the
//! identities they satisfy.
//!
//! Forests are kept in the order they are produced; tensors store them
//! sorted, since the forest algebra is commutative.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use num_traits::{One, Zero};

use crate::report::Report;
use crate::symtree::{self, i_of, leq, minus, plus, Edge, Kind, Tree, TreeSet, TreeUniverse};
use crate::{Error, Rational};

/// A product of planted trees; the empty forest is the unit.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Forest(pub Vec<Tree>);

impl Forest {
    pub fn unit() -> Forest {
        Forest(Vec::new())
    }

    pub fn single(t: Tree) -> Forest {
        Forest(vec![t])
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.0
    }

    pub fn concat(&self, other: &Forest) -> Forest {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Forest(v)
    }

    /// Multiset representative.
    pub fn normalized(&self) -> Forest {
        let mut v = self.0.clone();
        v.sort();
        Forest(v)
    }

    pub fn m_xi(&self) -> u32 {
        self.0.iter().map(|t| t.m_xi()).sum()
    }

    pub fn m_one(&self) -> u32 {
        self.0.iter().map(|t| t.m_one()).sum()
    }

    pub fn m_x(&self, i: usize) -> u32 {
        self.0.iter().map(|t| t.m_x(i)).sum()
    }

    pub fn order(&self, delta: Rational) -> Rational {
        self.0.iter().map(|t| t.order(delta)).sum()
    }
}

impl fmt::Display for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let mut v = self.0.clone();
        v.sort_by(|a, b| a.cmp_structural(*b));
        let parts: Vec<String> = v.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join("·"))
    }
}

impl fmt::Debug for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Finite linear combination of `tree ⊗ forest`.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct TensorSum {
    terms: HashMap<(Tree, Forest), Rational>,
}

impl TensorSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, t: Tree, f: Forest, c: Rational) {
        if c.is_zero() {
            return;
        }
        let key = (t, f.normalized());
        let e = self.terms.entry(key.clone()).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (Tree, &Forest, Rational)> + '_ {
        self.terms.iter().map(|((t, f), c)| (*t, f, *c))
    }

    /// Terms in a deterministic order.
    pub fn sorted_terms(&self) -> Vec<(Tree, Forest, Rational)> {
        let mut v: Vec<(Tree, Forest, Rational)> = self.terms().map(|(t, f, c)| (t, f.clone(), c)).collect();
        v.sort_by(|a, b| a.0.cmp_structural(b.0).then_with(|| a.1.to_string().cmp(&b.1.to_string())));
        v
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, t: Tree, f: &Forest) -> Rational {
        self.terms.get(&(t, f.normalized())).copied().unwrap_or_else(Rational::zero)
    }
}

fn fmt_coeff(c: Rational) -> String {
    if c.is_one() {
        String::new()
    } else {
        format!("({c})")
    }
}

impl fmt::Display for TensorSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.sorted_terms();
        if v.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = v.iter().map(|(t, fo, c)| format!("{}{t} ⊗ {fo}", fmt_coeff(*c))).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl fmt::Debug for TensorSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Linear combination of `forest ⊗ forest`.
pub type ForestTensor = HashMap<(Forest, Forest), Rational>;

/// Linear combination of `tree ⊗ forest ⊗ forest`.
pub type Tensor3 = HashMap<(Tree, Forest, Forest), Rational>;

/// Linear combination of forests.
pub type ForestSum = HashMap<Forest, Rational>;

fn add_to<K: std::hash::Hash + Eq>(m: &mut HashMap<K, Rational>, k: K, c: Rational) {
    if c.is_zero() {
        return;
    }
    let e = m.entry(k).or_insert_with(Rational::zero);
    *e += c;
}

fn prune<K: std::hash::Hash + Eq>(m: &mut HashMap<K, Rational>) {
    m.retain(|_, c| !c.is_zero());
}

/// `C₊(τ̄, τ)` from Table 1, or `None` for zero. The forest keeps positional order.
pub fn cplus(tb: Tree, t: Tree, delta: Rational) -> Option<Forest> {
    match (t.kind(), tb.kind()) {
        (Kind::One, Kind::One) => Some(Forest::single(i_of(t))),
        (Kind::X(_), Kind::One) => Some(Forest::single(i_of(t))),
        (Kind::X(_), Kind::X(i)) => plus(i as usize, t, delta).map(Forest::single),
        (Kind::Xi, Kind::Xi) => Some(Forest::unit()),
        (Kind::Product(_), Kind::One) => {
            let p = i_of(t);
            (p.order(delta) > Rational::zero()).then(|| Forest::single(p))
        }
        (Kind::Product(_), Kind::X(i)) => plus(i as usize, t, delta).map(Forest::single),
        (Kind::Product(_), Kind::Product(_)) => {
            let (a, b) = (tb.inner()?, t.inner()?);
            let mut out = Forest::unit();
            for k in 0..3 {
                out = out.concat(&cplus(a[k], b[k], delta)?);
            }
            Some(out)
        }
        _ => None,
    }
}

/// `C₋(τ̄, τ)` from Table 2: no positive-order projection and no `I⁻` vanishing on products.
pub fn cminus(tb: Tree, t: Tree) -> Option<Forest> {
    match (t.kind(), tb.kind()) {
        (Kind::One | Kind::X(_) | Kind::Xi | Kind::Product(_), Kind::One) => Some(Forest::single(i_of(t))),
        (Kind::X(_) | Kind::Xi | Kind::Product(_), Kind::X(i)) => minus(i as usize, t).map(Forest::single),
        (Kind::Xi, Kind::Xi) => Some(Forest::unit()),
        (Kind::Product(_), Kind::Product(_)) => {
            let (a, b) = (tb.inner()?, t.inner()?);
            let mut out = Forest::unit();
            for k in 0..3 {
                out = out.concat(&cminus(a[k], b[k])?);
            }
            Some(out)
        }
        _ => None,
    }
}

/// Memoised coproduct for a fixed `δ` and dimension.
pub struct Coalgebra {
    pub delta: Rational,
    pub dim: usize,
    memo: RefCell<HashMap<Tree, Rc<TensorSum>>>,
}

impl Coalgebra {
    pub fn new(delta: Rational, dim: usize) -> Self {
        Coalgebra { delta, dim, memo: RefCell::new(HashMap::new()) }
    }

    pub fn for_universe(u: &TreeUniverse) -> Self {
        Self::new(u.delta, u.dim)
    }

    fn ord(&self, t: Tree) -> Rational {
        t.order(self.delta)
    }

    /// Unplanted tree of non-positive order that is not a polynomial.
    fn in_tr(&self, t: Tree) -> bool {
        matches!(t.kind(), Kind::Xi | Kind::Product(_)) && self.ord(t) <= Rational::zero()
    }

    fn in_n_ring(&self, t: Tree) -> bool {
        t.is_product() && self.ord(t) >= Rational::from_integer(-2) && self.ord(t) <= Rational::zero()
    }

    fn in_n_tilde(&self, t: Tree) -> bool {
        t.is_product() && self.ord(t) > Rational::from_integer(-1) && self.ord(t) < Rational::zero()
    }

    /// `Δσ` on `T⁺` and on `I⁻_i(τ)` with `τ ∈ T_r`.
    pub fn delta(&self, s: Tree) -> Result<Rc<TensorSum>, Error> {
        if let Some(r) = self.memo.borrow().get(&s) {
            return Ok(r.clone());
        }
        let r = Rc::new(self.compute(s)?);
        self.memo.borrow_mut().insert(s, r.clone());
        Ok(r)
    }

    fn outside(&self, s: Tree) -> Error {
        Error::Domain(format!("coproduct undefined on {s} for delta {}", self.delta))
    }

    fn compute(&self, s: Tree) -> Result<TensorSum, Error> {
        let one = Rational::one();
        let mut out = TensorSum::new();
        match s.kind() {
            Kind::Xi => out.add(s, Forest::unit(), one),
            Kind::Product(_) => {
                if !self.in_tr(s) {
                    return Err(self.outside(s));
                }
                if self.ord(s) < Rational::from_integer(-2) {
                    out.add(s, Forest::unit(), one);
                } else {
                    let inner = s.inner().expect("product");
                    let parts: Vec<Rc<TensorSum>> =
                        inner.iter().map(|&c| self.delta(i_of(c))).collect::<Result<_, _>>()?;
                    for (a1, f1, c1) in parts[0].terms() {
                        for (a2, f2, c2) in parts[1].terms() {
                            for (a3, f3, c3) in parts[2].terms() {
                                if let Some(t) = symtree::product(a1, a2, a3, self.delta)? {
                                    out.add(t, f1.concat(f2).concat(f3), c1 * c2 * c3);
                                }
                            }
                        }
                    }
                }
            }
            Kind::Planted(Edge::I, t) => match t.kind() {
                Kind::One => out.add(s, Forest::single(s), one),
                Kind::X(i) => {
                    out.add(i_of(Tree::one()), Forest::single(s), one);
                    let p = plus(i as usize, t, self.delta).expect("I+_i(X_i)");
                    out.add(s, Forest::single(p), one);
                }
                _ if self.ord(t) < Rational::from_integer(-2) => {
                    if !self.in_tr(t) {
                        return Err(self.outside(s));
                    }
                    out.add(s, Forest::unit(), one);
                }
                _ => {
                    if !self.in_n_ring(t) {
                        return Err(self.outside(s));
                    }
                    out.add(i_of(Tree::one()), Forest::single(s), one);
                    for i in 1..=self.dim {
                        if let Some(p) = plus(i, t, self.delta) {
                            out.add(i_of(Tree::x(i)), Forest::single(p), one);
                        }
                    }
                    for (a, f, c) in self.delta(t)?.terms() {
                        out.add(i_of(a), f.clone(), c);
                    }
                }
            },
            Kind::Planted(Edge::Plus(i), t) => {
                let i = i as usize;
                let px = plus(i, Tree::x(i), self.delta).expect("I+_i(X_i)");
                match t.kind() {
                    Kind::X(j) if j as usize == i => out.add(s, Forest::single(s), one),
                    _ if self.in_n_tilde(t) => {
                        out.add(px, Forest::single(s), one);
                        for (a, f, c) in self.delta(t)?.terms() {
                            if let Some(pa) = plus(i, a, self.delta) {
                                out.add(pa, f.clone(), c);
                            }
                        }
                    }
                    _ => return Err(self.outside(s)),
                }
            }
            Kind::Planted(Edge::Minus(i), t) => {
                let i = i as usize;
                if !self.in_tr(t) {
                    return Err(self.outside(s));
                }
                for (a, f, c) in self.delta(t)?.terms() {
                    if let Some(ma) = minus(i, a) {
                        out.add(ma, f.clone(), c);
                    }
                }
                if let Some(p) = plus(i, t, self.delta) {
                    let px = plus(i, Tree::x(i), self.delta).expect("I+_i(X_i)");
                    out.add(px, Forest::single(p), one);
                }
            }
            Kind::One | Kind::X(_) => return Err(self.outside(s)),
        }
        Ok(out)
    }

    /// `Δ` on a forest, multiplicatively; `Δ1 = 1 ⊗ 1`.
    pub fn delta_forest(&self, f: &Forest) -> Result<ForestTensor, Error> {
        let mut acc: ForestTensor = HashMap::new();
        acc.insert((Forest::unit(), Forest::unit()), Rational::one());
        for &t in f.trees() {
            let d = self.delta(t)?;
            let mut next: ForestTensor = HashMap::new();
            for ((l, r), c) in &acc {
                for (a, g, c2) in d.terms() {
                    let key = (l.concat(&Forest::single(a)).normalized(), r.concat(g).normalized());
                    add_to(&mut next, key, *c * c2);
                }
            }
            prune(&mut next);
            acc = next;
        }
        Ok(acc)
    }

    /// `(Δ ⊗ Id)Δσ`.
    pub fn coassoc_left(&self, s: Tree) -> Result<Tensor3, Error> {
        let mut out = Tensor3::new();
        for (a, f, c) in self.delta(s)?.terms() {
            for (b, g, c2) in self.delta(a)?.terms() {
                add_to(&mut out, (b, g.normalized(), f.normalized()), c * c2);
            }
        }
        prune(&mut out);
        Ok(out)
    }

    /// `(Id ⊗ Δ)Δσ`.
    pub fn coassoc_right(&self, s: Tree) -> Result<Tensor3, Error> {
        let mut out = Tensor3::new();
        for (a, f, c) in self.delta(s)?.terms() {
            for ((g, h), c2) in self.delta_forest(f)? {
                add_to(&mut out, (a, g, h), c * c2);
            }
        }
        prune(&mut out);
        Ok(out)
    }
}

fn show_t3(m: &Tensor3) -> String {
    let mut v: Vec<String> = m.iter().map(|((t, f, g), c)| format!("{}{t} ⊗ {f} ⊗ {g}", fmt_coeff(*c))).collect();
    v.sort();
    if v.is_empty() {
        "0".into()
    } else {
        v.join(" + ")
    }
}

fn show_ft(m: &ForestTensor) -> String {
    let mut v: Vec<String> = m.iter().map(|((f, g), c)| format!("{}{f} ⊗ {g}", fmt_coeff(*c))).collect();
    v.sort();
    if v.is_empty() {
        "0".into()
    } else {
        v.join(" + ")
    }
}

/// Co-associativity on every `σ ∈ T`.
pub fn verify_coassoc(u: &TreeUniverse, co: &Coalgebra) -> Report {
    verify_coassoc_on(co, u.set(TreeSet::T))
}

/// Co-associativity on `I⁻_i(τ)` for `τ ∈ T_r`. Reported, not part of acceptance.
pub fn verify_coassoc_minus(u: &TreeUniverse, co: &Coalgebra) -> Report {
    let trees: Vec<Tree> =
        (1..=u.dim).flat_map(|i| u.set(TreeSet::Tr).iter().filter_map(move |&t| minus(i, t))).collect();
    verify_coassoc_on(co, &trees)
}

fn verify_coassoc_on(co: &Coalgebra, trees: &[Tree]) -> Report {
    let mut rep = Report::new();
    for &s in trees {
        match (co.coassoc_left(s), co.coassoc_right(s)) {
            (Ok(l), Ok(r)) => {
                let ok = l == r;
                let (ls, rs) = if ok { (format!("{} terms", l.len()), "equal".into()) } else { (show_t3(&l), show_t3(&r)) };
                rep.push("coassociativity", s, ok, ls, rs);
            }
            (Err(e), _) | (_, Err(e)) => rep.push("coassociativity", s, false, e, ""),
        }
    }
    rep
}

/// Explicit coproduct formula and the count identities for `C₊`.
pub fn verify_explicit_formula(u: &TreeUniverse, co: &Coalgebra) -> Report {
    let delta = u.delta;
    let mut rep = Report::new();
    let nw = u.n_and_w();
    for &t in &nw {
        // Δ I(τ) = Σ_{τ̄ ∈ N ∪ W} I(τ̄) ⊗ C₊(τ̄, τ)
        let mut rhs = TensorSum::new();
        let mut rhs_bare = TensorSum::new();
        for &tb in &nw {
            if let Some(c) = cplus(tb, t, delta) {
                let ok = lemma_counts(tb, t, &c, u.dim);
                rep.push("cplus_counts", format!("{tb} ; {t}"), ok, &c, "");
                rhs.add(i_of(tb), c.clone(), Rational::one());
                if !tb.is_poly() {
                    rhs_bare.add(tb, c, Rational::one());
                }
            }
        }
        match co.delta(i_of(t)) {
            Ok(lhs) => {
                let ok = *lhs == rhs;
                rep.push("explicit_planted", i_of(t), ok, &*lhs, if ok { "equal".to_string() } else { rhs.to_string() });
            }
            Err(e) => rep.push("explicit_planted", i_of(t), false, e, ""),
        }
        if !t.is_poly() {
            match co.delta(t) {
                Ok(lhs) => {
                    let ok = *lhs == rhs_bare;
                    rep.push("explicit_unplanted", t, ok, &*lhs, if ok { "equal".to_string() } else { rhs_bare.to_string() });
                }
                Err(e) => rep.push("explicit_unplanted", t, false, e, ""),
            }
        }
    }
    rep
}

fn lemma_counts(tb: Tree, t: Tree, c: &Forest, dim: usize) -> bool {
    let mut ok = leq(tb, t);
    ok &= t.m_xi() == tb.m_xi() + c.m_xi();
    ok &= (tb.m_one() + tb.m_x_total()) as usize == c.len();
    ok &= t.m_one() == c.m_one();
    for i in 1..=dim {
        ok &= t.m_x(i) == c.m_x(i);
    }
    ok
}

/// Left factors of `Δσ` stay in `T_l`, `N̊` and `T^cen` when `σ` does.
pub fn verify_set_preservation(u: &TreeUniverse, co: &Coalgebra) -> Report {
    let mut rep = Report::new();
    for (set, name) in [(TreeSet::Tl, "preserve_Tl"), (TreeSet::NRing, "preserve_N0"), (TreeSet::TCen, "preserve_Tcen")] {
        for &s in u.set(set) {
            let d = match co.delta(s) {
                Ok(d) => d,
                Err(e) => {
                    rep.push(name, s, false, e, "");
                    continue;
                }
            };
            let bad: Vec<String> = d.terms().filter(|(a, _, _)| !u.contains(set, *a)).map(|(a, _, _)| a.to_string()).collect();
            rep.push(name, s, bad.is_empty(), bad.join(", "), "");
        }
    }
    rep
}

/// Local renormalisation operator `R(τ) = q_F τ + Σ_{τ' ∈ Q} r(τ') C₋(τ', τ)` on products.
pub fn renorm_operator(u: &TreeUniverse, t: Tree, r: &dyn Fn(Tree) -> Rational) -> ForestSum {
    let mut out = ForestSum::new();
    if let Some(ch) = t.children() {
        add_to(&mut out, Forest(ch.to_vec()).normalized(), Rational::one());
    }
    for &q in u.set(TreeSet::Q) {
        let rq = r(q);
        if rq.is_zero() {
            continue;
        }
        if let Some(f) = cminus(q, t) {
            add_to(&mut out, f.normalized(), rq);
        }
    }
    prune(&mut out);
    out
}

/// `ΔRτ = (R ⊗ Id)Δτ` for every `τ ∈ N̊ ∪ W̊`.
pub fn verify_delta_r(u: &TreeUniverse, co: &Coalgebra, r: &dyn Fn(Tree) -> Rational) -> Report {
    let mut rep = Report::new();
    for t in u.products() {
        let res: Result<(ForestTensor, ForestTensor), Error> = (|| {
            let mut lhs = ForestTensor::new();
            for (f, c) in renorm_operator(u, t, r) {
                for ((g, h), c2) in co.delta_forest(&f)? {
                    add_to(&mut lhs, (g, h), c * c2);
                }
            }
            let mut rhs = ForestTensor::new();
            for (tb, f, c) in co.delta(t)?.terms() {
                for (g, c2) in renorm_operator(u, tb, r) {
                    add_to(&mut rhs, (g, f.normalized()), c * c2);
                }
            }
            prune(&mut lhs);
            prune(&mut rhs);
            Ok((lhs, rhs))
        })();
        match res {
            Ok((l, rr)) => {
                let ok = l == rr;
                let (ls, rs) = if ok { (format!("{} terms", l.len()), "equal".into()) } else { (show_ft(&l), show_ft(&rr)) };
                rep.push("delta_R", t, ok, ls, rs);
            }
            Err(e) => rep.push("delta_R", t, false, e, ""),
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symtree::{enumerate_universe, enumerate_universe_with, EnumOptions};

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn base_cases() {
        let co = Coalgebra::new(r(3, 10), 1);
        let d = co.delta(t("I(One)")).unwrap();
        assert_eq!(d.to_string(), "I(One) ⊗ I(One)");
        let d = co.delta(t("I(X1)")).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.coeff(t("I(One)"), &Forest::single(t("I(X1)"))), r(1, 1));
        assert_eq!(d.coeff(t("I(X1)"), &Forest::single(t("Ip1(X1)"))), r(1, 1));
        for w in ["Xi", "[I(Xi) I(Xi) I(Xi)]"] {
            assert_eq!(co.delta(t(w)).unwrap().to_string(), format!("{w} ⊗ 1"));
        }
        assert!(co.delta(t("One")).is_err());
    }

    #[test]
    fn cut_maps() {
        let d = r(3, 10);
        assert_eq!(cplus(t("Xi"), t("Xi"), d), Some(Forest::unit()));
        assert_eq!(cplus(t("One"), t("One"), d), Some(Forest::single(t("I(One)"))));
        assert_eq!(cplus(t("One"), t("X1"), d), Some(Forest::single(t("I(X1)"))));
        assert_eq!(cplus(t("X1"), t("Xi"), d), None);
        assert_eq!(cminus(t("Xi"), t("Xi")), Some(Forest::unit()));
        assert_eq!(cminus(t("One"), t("Xi")), Some(Forest::single(t("I(Xi)"))));
        let p = t("[I(Xi) I(Xi) I(Xi)]");
        assert_eq!(cminus(t("X1"), p), Some(Forest::single(t("Im1([I(Xi) I(Xi) I(Xi)])"))));
        // order of I(Ξ³) is negative at 3/10, so p₊ removes it
        assert_eq!(cplus(t("One"), p, d), None);
    }

    #[test]
    fn coassoc_small() {
        let u = enumerate_universe(r(9, 20), 1).unwrap();
        let co = Coalgebra::for_universe(&u);
        let rep = verify_coassoc(&u, &co);
        assert!(rep.passed(), "{:?}", rep.failures().next());
        let l = co.coassoc_left(t("I(X1)")).unwrap();
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn explicit_and_counts() {
        let u = enumerate_universe(r(3, 10), 1).unwrap();
        let co = Coalgebra::for_universe(&u);
        let rep = verify_explicit_formula(&u, &co);
        assert!(rep.passed(), "{:?}", rep.failures().next());
        assert!(verify_set_preservation(&u, &co).passed());
    }

    #[test]
    fn phi43_examples_of_r() {
        let opts = EnumOptions { allow_integer_orders: true, ..Default::default() };
        let u = enumerate_universe_with(r(2, 5), 1, opts).unwrap();
        let cube = t("[I(Xi) I(Xi) I(Xi)]");
        let wick = |q: Tree| {
            if q.canonical() == t("[I(One) I(Xi) I(Xi)]").canonical() {
                r(-1, 1)
            } else {
                r(0, 1)
            }
        };
        let rr = renorm_operator(&u, cube, &wick);
        assert_eq!(rr.len(), 2);
        assert_eq!(rr[&Forest(vec![t("I(Xi)"); 3])], r(1, 1));
        assert_eq!(rr[&Forest::single(t("I(Xi)"))], r(-3, 1));
    }
}
