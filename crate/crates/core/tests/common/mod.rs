//! Independent brute-force tree generator used as an oracle for the enumerator.
//!
//! Trees are plain boxed values generated by leaf count; orders are compared
//! after scaling by the denominator of δ, so no rational type is involved.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum B {
    One,
    X(usize),
    Xi,
    P(Box<B>, Box<B>, Box<B>),
}

impl B {
    pub fn counts(&self) -> (i64, i64, i64) {
        match self {
            B::One => (0, 1, 0),
            B::X(_) => (0, 0, 1),
            B::Xi => (1, 0, 0),
            B::P(a, b, c) => {
                let (x, y, z) = (a.counts(), b.counts(), c.counts());
                (x.0 + y.0 + z.0, x.1 + y.1 + z.1, x.2 + y.2 + z.2)
            }
        }
    }

    /// `q · |τ|` for `δ = p/q`.
    pub fn scaled_order(&self, p: i64, q: i64) -> i64 {
        match self {
            B::One => -2 * q,
            B::X(_) => -q,
            B::Xi => -3 * q + p,
            B::P(a, b, c) => 6 * q + a.scaled_order(p, q) + b.scaled_order(p, q) + c.scaled_order(p, q),
        }
    }

    pub fn text(&self) -> String {
        match self {
            B::One => "One".into(),
            B::X(i) => format!("X{i}"),
            B::Xi => "Xi".into(),
            B::P(a, b, c) => format!("[I({}) I({}) I({})]", a.text(), b.text(), c.text()),
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self, B::P(..))
    }
}

/// Every unplanted tree of non-positive order, generated by leaf count.
pub fn brute_force(p: i64, q: i64, d: usize) -> Vec<B> {
    let max_leaves = (3 * q / p + 4) as usize;
    let mut by_leaves: BTreeMap<usize, Vec<B>> = BTreeMap::new();
    let mut leaves = vec![B::One, B::Xi];
    leaves.extend((1..=d).map(B::X));
    by_leaves.insert(1, leaves);
    let mut m = 3;
    while m <= max_leaves {
        let mut out = Vec::new();
        for m1 in (1..m).step_by(2) {
            for m2 in (1..m - m1).step_by(2) {
                let m3 = m - m1 - m2;
                if m3 % 2 == 0 {
                    continue;
                }
                for a in &by_leaves[&m1] {
                    for b in &by_leaves[&m2] {
                        for c in &by_leaves[&m3] {
                            let t = B::P(Box::new(a.clone()), Box::new(b.clone()), Box::new(c.clone()));
                            if t.scaled_order(p, q) <= 0 {
                                out.push(t);
                            }
                        }
                    }
                }
            }
        }
        by_leaves.insert(m, out);
        m += 2;
    }
    by_leaves.into_values().flatten().collect()
}

/// Named sets computed from the brute-force list, as text.
pub fn oracle_sets(p: i64, q: i64, d: usize) -> BTreeMap<&'static str, BTreeSet<String>> {
    let all = brute_force(p, q, d);
    let mut s: BTreeMap<&'static str, BTreeSet<String>> = BTreeMap::new();
    for name in ["Poly", "W", "W0", "N", "N0", "Ntilde", "Q", "dW", "Tr", "Tl", "T", "Tplus", "Tcen"] {
        s.insert(name, BTreeSet::new());
    }
    let mut ins = |k: &'static str, v: String| {
        s.get_mut(k).unwrap().insert(v);
    };
    for t in &all {
        let o = t.scaled_order(p, q);
        let txt = t.text();
        let poly = matches!(t, B::One | B::X(_));
        if o < -2 * q {
            ins("W", txt.clone());
            if t.is_product() {
                ins("W0", txt.clone());
            }
        } else {
            ins("N", txt.clone());
            if poly {
                ins("Poly", txt.clone());
            } else {
                ins("N0", txt.clone());
                if o > -q && o < 0 {
                    ins("Ntilde", txt.clone());
                    for i in 1..=d {
                        ins("Tplus", format!("Ip{i}({txt})"));
                        ins("Tcen", format!("Ip{i}({txt})"));
                    }
                }
            }
            ins("Tcen", format!("I({txt})"));
        }
        if let B::P(a, b, c) = t {
            let kids = [a.as_ref(), b.as_ref(), c.as_ref()];
            let ones = kids.iter().filter(|k| matches!(k, B::One)).count();
            let xs = kids.iter().any(|k| matches!(k, B::X(_)));
            if !xs && ones <= 1 {
                ins("Q", txt.clone());
            }
            if o >= -2 * q && kids.iter().all(|k| k.scaled_order(p, q) < -2 * q) {
                ins("dW", txt.clone());
            }
        }
        if !poly {
            for k in ["Tr", "T", "Tplus"] {
                ins(k, txt.clone());
            }
        }
        for k in ["Tl", "T", "Tplus"] {
            ins(k, format!("I({txt})"));
        }
    }
    for i in 1..=d {
        ins("Tplus", format!("Ip{i}(X{i})"));
        ins("Tcen", format!("Ip{i}(X{i})"));
    }
    s
}
