//! Decorated trees over the generators `1`, `X_i`, `Ξ`, their orders, and the
//! finite tree sets attached to a noise exponent `δ`.
//!
//! Trees are hash-consed in a process-wide table, so a [`Tree`] is a `Copy`
//! handle and structural equality is handle equality.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{OnceLock, RwLock};

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::{Error, Rational};

/// Largest spatial dimension supported by the tree layer.
pub const MAX_DIM: usize = 4;

/// Default enumeration cap.
pub const DEFAULT_CAP: usize = 100_000;

/// Edge types. Derivative edges carry a 1-based spatial index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Edge {
    I,
    Plus(u8),
    Minus(u8),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Kind {
    One,
    X(u8),
    Xi,
    Planted(Edge, Tree),
    Product([Tree; 3]),
}

/// Interned tree handle.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tree(u32);

#[derive(Clone, Copy, Debug)]
struct Node {
    kind: Kind,
    m_xi: u16,
    m_one: u16,
    m_x: [u16; MAX_DIM],
    edges: u16,
    canon: u32,
}

#[derive(Default)]
struct Interner {
    nodes: Vec<Node>,
    ids: HashMap<Kind, u32>,
}

fn table() -> &'static RwLock<Interner> {
    static TABLE: OnceLock<RwLock<Interner>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

fn node(t: Tree) -> Node {
    table().read().expect("interner poisoned").nodes[t.0 as usize]
}

fn rank(k: &Kind) -> u8 {
    match k {
        Kind::One => 0,
        Kind::X(_) => 1,
        Kind::Xi => 2,
        Kind::Planted(..) => 3,
        Kind::Product(_) => 4,
    }
}

fn cmp_in(g: &Interner, a: u32, b: u32) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    let (na, nb) = (&g.nodes[a as usize], &g.nodes[b as usize]);
    na.edges
        .cmp(&nb.edges)
        .then_with(|| rank(&na.kind).cmp(&rank(&nb.kind)))
        .then_with(|| match (na.kind, nb.kind) {
            (Kind::X(i), Kind::X(j)) => i.cmp(&j),
            (Kind::Planted(e, c), Kind::Planted(f, d)) => e.cmp(&f).then_with(|| cmp_in(g, c.0, d.0)),
            (Kind::Product(p), Kind::Product(q)) => p
                .iter()
                .zip(q.iter())
                .map(|(x, y)| cmp_in(g, x.0, y.0))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal),
            _ => Ordering::Equal,
        })
}

fn intern_locked(g: &mut Interner, kind: Kind) -> u32 {
    if let Some(&id) = g.ids.get(&kind) {
        return id;
    }
    let mut n = Node { kind, m_xi: 0, m_one: 0, m_x: [0; MAX_DIM], edges: 0, canon: u32::MAX };
    let mut canon_kind = None;
    match kind {
        Kind::One => n.m_one = 1,
        Kind::X(i) => n.m_x[i as usize - 1] = 1,
        Kind::Xi => n.m_xi = 1,
        Kind::Planted(e, c) => {
            let cn = g.nodes[c.0 as usize];
            n.m_xi = cn.m_xi;
            n.m_one = cn.m_one;
            n.m_x = cn.m_x;
            n.edges = cn.edges + 1;
            if cn.canon != c.0 {
                canon_kind = Some(Kind::Planted(e, Tree(cn.canon)));
            }
        }
        Kind::Product(ch) => {
            for c in ch {
                let cn = g.nodes[c.0 as usize];
                n.m_xi += cn.m_xi;
                n.m_one += cn.m_one;
                for i in 0..MAX_DIM {
                    n.m_x[i] += cn.m_x[i];
                }
                n.edges += cn.edges;
            }
            let mut sorted = ch.map(|c| g.nodes[c.0 as usize].canon);
            sorted.sort_by(|a, b| cmp_in(g, *a, *b));
            if sorted != ch.map(|c| c.0) {
                canon_kind = Some(Kind::Product(sorted.map(Tree)));
            }
        }
    }
    if let Some(ck) = canon_kind {
        n.canon = intern_locked(g, ck);
    }
    let id = g.nodes.len() as u32;
    if n.canon == u32::MAX {
        n.canon = id;
    }
    g.nodes.push(n);
    g.ids.insert(kind, id);
    id
}

fn intern(kind: Kind) -> Tree {
    if let Some(&id) = table().read().expect("interner poisoned").ids.get(&kind) {
        return Tree(id);
    }
    let mut g = table().write().expect("interner poisoned");
    Tree(intern_locked(&mut g, kind))
}

impl Tree {
    pub fn one() -> Tree {
        intern(Kind::One)
    }

    /// The monomial `X_i`, 1-based.
    pub fn x(i: usize) -> Tree {
        assert!((1..=MAX_DIM).contains(&i), "spatial index {i} out of range");
        intern(Kind::X(i as u8))
    }

    pub fn xi() -> Tree {
        intern(Kind::Xi)
    }

    pub fn id(self) -> u32 {
        self.0
    }

    pub fn kind(self) -> Kind {
        node(self).kind
    }

    pub fn is_planted(self) -> bool {
        matches!(self.kind(), Kind::Planted(..))
    }

    pub fn is_product(self) -> bool {
        matches!(self.kind(), Kind::Product(_))
    }

    pub fn is_poly(self) -> bool {
        matches!(self.kind(), Kind::One | Kind::X(_))
    }

    /// Edge and child of a planted tree.
    pub fn planted_parts(self) -> Option<(Edge, Tree)> {
        match self.kind() {
            Kind::Planted(e, c) => Some((e, c)),
            _ => None,
        }
    }

    pub fn children(self) -> Option<[Tree; 3]> {
        match self.kind() {
            Kind::Product(c) => Some(c),
            _ => None,
        }
    }

    /// Inner trees of a product, i.e. `τ_k` in `I(τ_1)I(τ_2)I(τ_3)`.
    pub fn inner(self) -> Option<[Tree; 3]> {
        self.children().map(|c| c.map(|p| p.planted_parts().expect("product child is planted").1))
    }

    pub fn m_xi(self) -> u32 {
        node(self).m_xi as u32
    }

    pub fn m_one(self) -> u32 {
        node(self).m_one as u32
    }

    /// Number of `X_i` leaves, 1-based `i`.
    pub fn m_x(self, i: usize) -> u32 {
        node(self).m_x[i - 1] as u32
    }

    pub fn m_x_total(self) -> u32 {
        node(self).m_x.iter().map(|&c| c as u32).sum()
    }

    pub fn m_x_vec(self, d: usize) -> Vec<u32> {
        let n = node(self);
        (0..d).map(|i| n.m_x[i] as u32).collect()
    }

    /// Total number of leaves.
    pub fn leaves(self) -> u32 {
        let n = node(self);
        n.m_xi as u32 + n.m_one as u32 + n.m_x.iter().map(|&c| c as u32).sum::<u32>()
    }

    pub fn edges(self) -> u32 {
        node(self).edges as u32
    }

    /// Representative of the permutation class (children sorted recursively).
    pub fn canonical(self) -> Tree {
        Tree(node(self).canon)
    }

    /// Order via leaf counts: `-3 + m_Ξ δ + m_1 + 2 m_x`, shifted by the root edge.
    pub fn order(self, delta: Rational) -> Rational {
        let n = node(self);
        let mx: i64 = n.m_x.iter().map(|&c| c as i64).sum();
        let base = Rational::from_integer(-3 + n.m_one as i64 + 2 * mx) + delta * (n.m_xi as i64);
        match n.kind {
            Kind::Planted(Edge::I, _) => base + 2,
            Kind::Planted(_, _) => base + 1,
            _ => base,
        }
    }

    /// Order by the defining recursion, used to cross-check [`Tree::order`].
    pub fn order_recursive(self, delta: Rational) -> Rational {
        match self.kind() {
            Kind::One => Rational::from_integer(-2),
            Kind::X(_) => Rational::from_integer(-1),
            Kind::Xi => Rational::from_integer(-3) + delta,
            Kind::Planted(Edge::I, c) => c.order_recursive(delta) + 2,
            Kind::Planted(_, c) => c.order_recursive(delta) + 1,
            Kind::Product(ch) => ch.iter().map(|c| c.order_recursive(delta)).sum(),
        }
    }

    /// Total structural order: edge count first, then shape.
    pub fn cmp_structural(self, other: Tree) -> Ordering {
        let g = table().read().expect("interner poisoned");
        cmp_in(&g, self.0, other.0)
    }

    /// `(-1)^{(m-1)/2}` with `m` the number of leaves.
    pub fn sign(self) -> i64 {
        if ((self.leaves() as i64 - 1) / 2) % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Kind::One => write!(f, "One"),
            Kind::X(i) => write!(f, "X{i}"),
            Kind::Xi => write!(f, "Xi"),
            Kind::Planted(Edge::I, c) => write!(f, "I({c})"),
            Kind::Planted(Edge::Plus(i), c) => write!(f, "Ip{i}({c})"),
            Kind::Planted(Edge::Minus(i), c) => write!(f, "Im{i}({c})"),
            Kind::Product([a, b, c]) => write!(f, "[{a} {b} {c}]"),
        }
    }
}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for Tree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// `I(τ)` for an unplanted `τ`.
pub fn planted(child: Tree) -> Result<Tree, Error> {
    if child.is_planted() {
        return Err(Error::Domain(format!("I applied to planted tree {child}")));
    }
    Ok(intern(Kind::Planted(Edge::I, child)))
}

/// `I(τ)`, panicking on planted input. For internal recursion over unplanted trees.
pub fn i_of(child: Tree) -> Tree {
    planted(child).expect("unplanted child")
}

/// `I⁺_i(τ)`, zero unless `τ = X_i` or `τ ∈ Ñ` (a product with `-1 < |τ| < 0`).
pub fn plus(i: usize, child: Tree, delta: Rational) -> Option<Tree> {
    match child.kind() {
        Kind::X(j) if j as usize == i => Some(intern(Kind::Planted(Edge::Plus(i as u8), child))),
        Kind::Product(_) => {
            let o = child.order(delta);
            (o > Rational::from_integer(-1) && o < Rational::zero())
                .then(|| intern(Kind::Planted(Edge::Plus(i as u8), child)))
        }
        _ => None,
    }
}

/// `I⁻_i(τ)` with the conventions `I⁻_i(1) = 0`, `I⁻_i(X_j) = 0` for `j ≠ i`,
/// and `I⁻_i(X_i) = I⁺_i(X_i)`.
pub fn minus(i: usize, child: Tree) -> Option<Tree> {
    match child.kind() {
        Kind::One => None,
        Kind::X(j) if j as usize == i => Some(intern(Kind::Planted(Edge::Plus(i as u8), child))),
        Kind::X(_) => None,
        Kind::Planted(..) => None,
        _ => Some(intern(Kind::Planted(Edge::Minus(i as u8), child))),
    }
}

/// Tree product without truncation. Children must be planted.
pub fn product_raw(ch: [Tree; 3]) -> Result<Tree, Error> {
    if let Some(c) = ch.iter().find(|c| !c.is_planted()) {
        return Err(Error::Domain(format!("tree product with unplanted factor {c}")));
    }
    Ok(intern(Kind::Product(ch)))
}

/// Tree product with truncation: zero when the orders of the factors sum to a positive number.
pub fn product(a: Tree, b: Tree, c: Tree, delta: Rational) -> Result<Option<Tree>, Error> {
    let t = product_raw([a, b, c])?;
    Ok((a.order(delta) + b.order(delta) + c.order(delta) <= Rational::zero()).then_some(t))
}

/// `I(a)I(b)I(c)` for unplanted `a, b, c`, with truncation.
pub fn product_of(a: Tree, b: Tree, c: Tree, delta: Rational) -> Option<Tree> {
    product(i_of(a), i_of(b), i_of(c), delta).expect("planted factors")
}

/// Whether `tb ≤ t`: `t` arises from `tb` by substituting trees for the
/// polynomial leaves (`1` by anything, `X_i` by `X_i` or a non-polynomial tree).
pub fn leq(tb: Tree, t: Tree) -> bool {
    if tb == t {
        return true;
    }
    match (tb.kind(), t.kind()) {
        (Kind::One, k) => !matches!(k, Kind::Planted(..)),
        (Kind::X(_), Kind::Xi | Kind::Product(_)) => true,
        (Kind::Product(p), Kind::Product(q)) => p.iter().zip(q.iter()).all(|(a, b)| {
            match (a.kind(), b.kind()) {
                (Kind::Planted(e, x), Kind::Planted(f, y)) => e == f && leq(x, y),
                _ => false,
            }
        }),
        _ => false,
    }
}

/// Whether `tb ⊂ t`: `tb = t` or `I(tb)` occurs in the expression of `t`.
pub fn subset(tb: Tree, t: Tree) -> bool {
    if tb == t {
        return true;
    }
    match t.kind() {
        Kind::Product(ch) => ch.iter().any(|c| match c.kind() {
            Kind::Planted(_, inner) => subset(tb, inner),
            _ => false,
        }),
        Kind::Planted(_, inner) => subset(tb, inner),
        _ => false,
    }
}

fn parse_err(s: &str, msg: &str) -> Error {
    Error::Parse(format!("{msg} in `{s}`"))
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn index(&mut self) -> Result<usize, Error> {
        let start = self.pos;
        while self.src[self.pos..].starts_with(|c: char| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let i: usize = self.src[start..self.pos].parse().map_err(|_| parse_err(self.src, "missing index"))?;
        if !(1..=MAX_DIM).contains(&i) {
            return Err(parse_err(self.src, "index out of range"));
        }
        Ok(i)
    }

    fn tree(&mut self) -> Result<Tree, Error> {
        self.skip_ws();
        if self.eat("[") {
            let a = self.tree()?;
            let b = self.tree()?;
            let c = self.tree()?;
            if !self.eat("]") {
                return Err(parse_err(self.src, "expected `]`"));
            }
            return product_raw([a, b, c]);
        }
        if self.eat("One") {
            return Ok(Tree::one());
        }
        if self.eat("Xi") {
            return Ok(Tree::xi());
        }
        if self.eat("X") {
            return Ok(Tree::x(self.index()?));
        }
        let edge = if self.eat("Ip") {
            Edge::Plus(self.index()? as u8)
        } else if self.eat("Im") {
            Edge::Minus(self.index()? as u8)
        } else if self.eat("I") {
            Edge::I
        } else {
            return Err(parse_err(self.src, "unexpected token"));
        };
        if !self.eat("(") {
            return Err(parse_err(self.src, "expected `(`"));
        }
        let child = self.tree()?;
        if !self.eat(")") {
            return Err(parse_err(self.src, "expected `)`"));
        }
        match edge {
            Edge::I => planted(child),
            Edge::Minus(i) => minus(i as usize, child).ok_or_else(|| parse_err(self.src, "symbol is zero")),
            Edge::Plus(i) => match child.kind() {
                Kind::X(j) if j == i => Ok(intern(Kind::Planted(edge, child))),
                Kind::Product(_) => Ok(intern(Kind::Planted(edge, child))),
                _ => Err(parse_err(self.src, "symbol is zero")),
            },
        }
    }
}

impl FromStr for Tree {
    type Err = Error;

    /// Parses the text form. `I⁺` vanishing that depends on `δ` is not applied here.
    fn from_str(s: &str) -> Result<Tree, Error> {
        let mut p = Parser { src: s, pos: 0 };
        let t = p.tree()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(parse_err(s, "trailing input"));
        }
        Ok(t)
    }
}

/// Named tree sets of a universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TreeSet {
    Poly,
    W,
    WRing,
    N,
    NRing,
    NTilde,
    Q,
    DW,
    Tr,
    Tl,
    T,
    TPlus,
    TCen,
}

impl TreeSet {
    pub const ALL: [TreeSet; 13] = [
        TreeSet::Poly,
        TreeSet::W,
        TreeSet::WRing,
        TreeSet::N,
        TreeSet::NRing,
        TreeSet::NTilde,
        TreeSet::Q,
        TreeSet::DW,
        TreeSet::Tr,
        TreeSet::Tl,
        TreeSet::T,
        TreeSet::TPlus,
        TreeSet::TCen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TreeSet::Poly => "Poly",
            TreeSet::W => "W",
            TreeSet::WRing => "W0",
            TreeSet::N => "N",
            TreeSet::NRing => "N0",
            TreeSet::NTilde => "Ntilde",
            TreeSet::Q => "Q",
            TreeSet::DW => "dW",
            TreeSet::Tr => "Tr",
            TreeSet::Tl => "Tl",
            TreeSet::T => "T",
            TreeSet::TPlus => "Tplus",
            TreeSet::TCen => "Tcen",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Enumeration knobs.
#[derive(Clone, Copy, Debug)]
pub struct EnumOptions {
    pub cap: usize,
    /// Proceed even when some tree of `W ∪ N̊` other than `I(1)³` has integer order.
    pub allow_integer_orders: bool,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions { cap: DEFAULT_CAP, allow_integer_orders: false }
    }
}

/// All tree sets for a given `δ` and dimension.
#[derive(Clone, Debug)]
pub struct TreeUniverse {
    pub delta: Rational,
    pub dim: usize,
    sets: HashMap<TreeSet, Vec<Tree>>,
    member: HashMap<Tree, u16>,
    /// Trees of `W ∪ N̊` (other than `I(1)³`) whose order is an integer.
    pub integer_order_trees: Vec<Tree>,
}

fn check_delta_range(delta: Rational) -> Result<(), Error> {
    if delta <= Rational::zero() || delta >= Rational::from_integer(1) {
        return Err(Error::Config(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// All unplanted trees of non-positive order, i.e. `N ∪ W`, fully non-commutative.
fn enumerate_nw(delta: Rational, dim: usize, cap: usize) -> Result<Vec<Tree>, Error> {
    let mut all: Vec<Tree> = vec![Tree::one()];
    all.extend((1..=dim).map(Tree::x));
    all.push(Tree::xi());
    let mut seen: HashSet<Tree> = all.iter().copied().collect();
    loop {
        // sorted by the order of the planted tree I(τ)
        let mut keyed: Vec<(Rational, Tree)> = all.iter().map(|&t| (t.order(delta) + 2, t)).collect();
        keyed.sort();
        let lo = keyed[0].0;
        let mut fresh = Vec::new();
        for &(oa, a) in &keyed {
            if oa + lo + lo > Rational::zero() {
                break;
            }
            for &(ob, b) in &keyed {
                if oa + ob + lo > Rational::zero() {
                    break;
                }
                for &(oc, c) in &keyed {
                    if oa + ob + oc > Rational::zero() {
                        break;
                    }
                    let t = product_raw([i_of(a), i_of(b), i_of(c)])?;
                    if seen.insert(t) {
                        fresh.push(t);
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        all.extend(fresh);
        if all.len() > cap {
            return Err(Error::Cap { cap, delta: delta.to_string() });
        }
    }
    Ok(all)
}

fn is_integer(r: Rational) -> bool {
    r.denom().is_one()
}

fn integer_order_offenders(delta: Rational, nw: &[Tree]) -> Vec<Tree> {
    let cube = product_raw([i_of(Tree::one()); 3]).expect("planted");
    nw.iter()
        .copied()
        .filter(|&t| !t.is_poly() && t != cube && is_integer(t.order(delta)))
        .collect()
}

/// Whether no tree of `W ∪ N̊` other than `I(1)I(1)I(1)` has integer order.
///
/// The scan runs over the enumerated tree sets themselves, which are finite for
/// every `δ > 0`; the answer does not depend on the dimension.
pub fn check_delta_admissible(delta: Rational) -> bool {
    if check_delta_range(delta).is_err() {
        return false;
    }
    match enumerate_nw(delta, 1, DEFAULT_CAP) {
        Ok(nw) => integer_order_offenders(delta, &nw).is_empty(),
        Err(_) => false,
    }
}

/// Enumerates every tree set with default options.
pub fn enumerate_universe(delta: Rational, dim: usize) -> Result<TreeUniverse, Error> {
    enumerate_universe_with(delta, dim, EnumOptions::default())
}

pub fn enumerate_universe_with(delta: Rational, dim: usize, opts: EnumOptions) -> Result<TreeUniverse, Error> {
    check_delta_range(delta)?;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Config(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    let nw = enumerate_nw(delta, dim, opts.cap)?;
    let offenders = integer_order_offenders(delta, &nw);
    if !offenders.is_empty() && !opts.allow_integer_orders {
        return Err(Error::Inadmissible {
            delta: delta.to_string(),
            witness: offenders[0].to_string(),
            order: offenders[0].order(delta).to_string(),
        });
    }
    let mut u = TreeUniverse {
        delta,
        dim,
        sets: HashMap::new(),
        member: HashMap::new(),
        integer_order_trees: offenders,
    };
    let m2 = Rational::from_integer(-2);
    let m1 = Rational::from_integer(-1);
    let zero = Rational::zero();
    let add = |u: &mut TreeUniverse, s: TreeSet, t: Tree| {
        let bits = u.member.entry(t).or_insert(0);
        if *bits & s.bit() == 0 {
            *bits |= s.bit();
            u.sets.entry(s).or_default().push(t);
        }
    };
    for &t in &nw {
        let o = t.order(delta);
        if o < m2 {
            add(&mut u, TreeSet::W, t);
            if t != Tree::xi() {
                add(&mut u, TreeSet::WRing, t);
            }
        } else {
            add(&mut u, TreeSet::N, t);
            if t.is_poly() {
                add(&mut u, TreeSet::Poly, t);
            } else {
                add(&mut u, TreeSet::NRing, t);
                if o > m1 && o < zero {
                    add(&mut u, TreeSet::NTilde, t);
                }
            }
        }
    }
    for &t in &nw {
        let Some(inner) = t.inner() else { continue };
        let o = t.order(delta);
        let ones = inner.iter().filter(|c| **c == Tree::one()).count();
        let has_x = inner.iter().any(|c| matches!(c.kind(), Kind::X(_)));
        if !has_x && ones <= 1 {
            add(&mut u, TreeSet::Q, t);
        }
        if o >= m2 && inner.iter().all(|c| c.order(delta) < m2) {
            add(&mut u, TreeSet::DW, t);
        }
    }
    let tr: Vec<Tree> = nw.iter().copied().filter(|t| !t.is_poly() && *t != Tree::one()).collect();
    for &t in &tr {
        add(&mut u, TreeSet::Tr, t);
        add(&mut u, TreeSet::T, t);
        add(&mut u, TreeSet::TPlus, t);
    }
    for &t in &nw {
        if t.is_poly() || u.contains(TreeSet::Tr, t) {
            let p = i_of(t);
            add(&mut u, TreeSet::Tl, p);
            add(&mut u, TreeSet::T, p);
            add(&mut u, TreeSet::TPlus, p);
        }
        if u.contains(TreeSet::N, t) {
            add(&mut u, TreeSet::TCen, i_of(t));
        }
    }
    let mut pluses = Vec::new();
    for i in 1..=dim {
        pluses.push(plus(i, Tree::x(i), delta).expect("I+_i(X_i) is nonzero"));
        for &t in u.set(TreeSet::NTilde) {
            pluses.push(plus(i, t, delta).expect("I+ on Ñ is nonzero"));
        }
    }
    for p in pluses {
        add(&mut u, TreeSet::TPlus, p);
        add(&mut u, TreeSet::TCen, p);
    }
    for s in TreeSet::ALL {
        let v = u.sets.entry(s).or_default();
        v.sort_by(|a, b| a.cmp_structural(*b));
    }
    Ok(u)
}

impl TreeUniverse {
    pub fn set(&self, s: TreeSet) -> &[Tree] {
        self.sets.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, s: TreeSet, t: Tree) -> bool {
        self.member.get(&t).is_some_and(|b| b & s.bit() != 0)
    }

    pub fn order(&self, t: Tree) -> Rational {
        t.order(self.delta)
    }

    /// `N ∪ W` in the universe's ordering.
    pub fn n_and_w(&self) -> Vec<Tree> {
        let mut v: Vec<Tree> = self.set(TreeSet::N).iter().chain(self.set(TreeSet::W)).copied().collect();
        v.sort_by(|a, b| a.cmp_structural(*b));
        v
    }

    /// All product trees `N̊ ∪ W̊`.
    pub fn products(&self) -> Vec<Tree> {
        let mut v: Vec<Tree> = self.set(TreeSet::NRing).iter().chain(self.set(TreeSet::WRing)).copied().collect();
        v.sort_by(|a, b| a.cmp_structural(*b));
        v
    }

    /// JSON export with per-tree order, counts, and memberships.
    pub fn to_json(&self) -> serde_json::Value {
        let mut all: Vec<Tree> = self.member.keys().copied().collect();
        all.sort_by(|a, b| a.cmp_structural(*b));
        let trees: Vec<serde_json::Value> = all
            .iter()
            .map(|&t| {
                let sets: Vec<&str> =
                    TreeSet::ALL.iter().filter(|s| self.contains(**s, t)).map(|s| s.name()).collect();
                serde_json::json!({
                    "tree": t.to_string(),
                    "order": self.order(t).to_string(),
                    "m_xi": t.m_xi(),
                    "m_one": t.m_one(),
                    "m_x": t.m_x_vec(self.dim),
                    "edges": t.edges(),
                    "sets": sets,
                })
            })
            .collect();
        let sizes: serde_json::Map<String, serde_json::Value> =
            TreeSet::ALL.iter().map(|s| (s.name().to_string(), self.set(*s).len().into())).collect();
        serde_json::json!({
            "delta": self.delta.to_string(),
            "dim": self.dim,
            "sizes": sizes,
            "integer_order_trees": self.integer_order_trees.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            "trees": trees,
        })
    }
}

/// Parses `p/q` or an integer into a reduced rational.
pub fn parse_rational(s: &str) -> Result<Rational, Error> {
    let bad = || Error::Parse(format!("not a fraction: `{s}`"));
    let (p, q) = match s.trim().split_once('/') {
        Some((p, q)) => (p.trim().parse::<i64>().map_err(|_| bad())?, q.trim().parse::<i64>().map_err(|_| bad())?),
        None => (s.trim().parse::<i64>().map_err(|_| bad())?, 1),
    };
    if q == 0 {
        return Err(bad());
    }
    Ok(Rational::new(p, q))
}

/// The reduced value `|r|` as a float, for reporting.
pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Whether `r` sits strictly between two integers (used for gap checks).
pub fn is_fractional(r: Rational) -> bool {
    !r.abs().denom().is_one()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    #[test]
    fn orders_of_generators() {
        assert_eq!(Tree::xi().order(r(2, 5)), r(-13, 5));
        assert_eq!(i_of(Tree::one()).order(r(7, 19)), r(0, 1));
        let cube = product_of(Tree::xi(), Tree::xi(), Tree::xi(), r(3, 10)).unwrap();
        assert_eq!(cube.order(r(3, 10)), r(-21, 10));
    }

    #[test]
    fn truncation() {
        let d = r(2, 5);
        let one = i_of(Tree::one());
        assert!(product(one, one, one, d).unwrap().is_some());
        assert!(product(i_of(Tree::x(1)), one, one, d).unwrap().is_none());
        assert!(product(Tree::one(), one, one, d).is_err());
    }

    #[test]
    fn vanishing_conventions() {
        let d = r(2, 5);
        assert!(plus(1, Tree::x(2), d).is_none());
        assert!(minus(1, Tree::one()).is_none());
        assert!(minus(2, Tree::x(1)).is_none());
        assert_eq!(minus(1, Tree::x(1)), plus(1, Tree::x(1), d));
        // order -21/10 is outside (-1, 0)
        let cube = product_of(Tree::xi(), Tree::xi(), Tree::xi(), r(3, 10)).unwrap();
        assert!(plus(1, cube, r(3, 10)).is_none());
    }

    #[test]
    fn text_round_trip() {
        for s in ["Xi", "One", "X1", "I(Xi)", "[I(Xi) I(One) I(Xi)]", "Ip1(X1)", "Im1([I(Xi) I(Xi) I(Xi)])"] {
            let t: Tree = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert_eq!("Im1(X1)".parse::<Tree>().unwrap().to_string(), "Ip1(X1)");
        assert!("Im1(One)".parse::<Tree>().is_err());
        assert!("[Xi Xi Xi]".parse::<Tree>().is_err());
    }

    #[test]
    fn canonical_sorts_children() {
        let a: Tree = "[I(One) I(Xi) I(Xi)]".parse().unwrap();
        let b: Tree = "[I(Xi) I(One) I(Xi)]".parse().unwrap();
        assert_ne!(a, b);
        assert_eq!(a.canonical(), b.canonical());
        let c: Tree = "[I([I(Xi) I(One) I(Xi)]) I(Xi) I(Xi)]".parse().unwrap();
        let e: Tree = "[I(Xi) I(Xi) I([I(One) I(Xi) I(Xi)])]".parse().unwrap();
        assert_eq!(c.canonical(), e.canonical());
    }

    #[test]
    fn admissibility() {
        assert!(!check_delta_admissible(r(1, 3)));
        assert!(!check_delta_admissible(r(1, 2)));
        assert!(check_delta_admissible(r(3, 10)));
        assert!(check_delta_admissible(r(9, 20)));
        assert!(check_delta_admissible(r(13, 50)));
        // five noise leaves at 2/5 land on order -1
        assert!(!check_delta_admissible(r(2, 5)));
    }

    #[test]
    fn small_universes() {
        let u = enumerate_universe(r(3, 10), 1).unwrap();
        let w: Vec<String> = u.set(TreeSet::W).iter().map(|t| t.to_string()).collect();
        assert_eq!(w, vec!["Xi", "[I(Xi) I(Xi) I(Xi)]"]);
        let opts = EnumOptions { allow_integer_orders: true, ..Default::default() };
        let u = enumerate_universe_with(r(2, 5), 1, opts).unwrap();
        assert_eq!(u.set(TreeSet::W), &[Tree::xi()]);
        let poly: Vec<String> = u.set(TreeSet::Poly).iter().map(|t| t.to_string()).collect();
        assert_eq!(poly, vec!["One", "X1"]);
        assert!(u.set(TreeSet::Poly).iter().all(|&t| u.contains(TreeSet::N, t)));
        assert!(enumerate_universe(r(2, 5), 1).is_err());
    }

    #[test]
    fn relations() {
        assert!(leq(Tree::xi(), Tree::xi()));
        let a: Tree = "[I(One) I(Xi) I(Xi)]".parse().unwrap();
        let b: Tree = "[I([I(Xi) I(Xi) I(Xi)]) I(Xi) I(Xi)]".parse().unwrap();
        assert!(leq(a, b));
        assert!(!leq(b, a));
        let cube: Tree = "[I(Xi) I(Xi) I(Xi)]".parse().unwrap();
        assert!(subset(Tree::xi(), cube));
        assert!(subset(cube, b));
        assert!(!subset(b, cube));
    }

    #[test]
    fn cap_is_enforced() {
        let opts = EnumOptions { cap: 10, allow_integer_orders: true };
        assert!(matches!(enumerate_universe_with(r(13, 50), 1, opts), Err(Error::Cap { .. })));
    }
}
