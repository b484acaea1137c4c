mod common;

use std::collections::BTreeSet;

use phi4_core::coalgebra::{self, Coalgebra};
use phi4_core::coeffs;
use phi4_core::symtree::{self, enumerate_universe_with, EnumOptions, Kind, Tree, TreeSet};
use phi4_core::Rational;
use proptest::prelude::*;

const DELTAS: [(i64, i64); 4] = [(2, 5), (3, 10), (9, 20), (13, 50)];

fn opts() -> EnumOptions {
    EnumOptions { allow_integer_orders: true, ..Default::default() }
}

#[test]
fn enumerator_matches_brute_force() {
    for (p, q) in DELTAS {
        for d in [1, 2] {
            let u = enumerate_universe_with(Rational::new(p, q), d, opts()).unwrap();
            let oracle = common::oracle_sets(p, q, d);
            for s in TreeSet::ALL {
                let got: BTreeSet<String> = u.set(s).iter().map(|t| t.to_string()).collect();
                let want = &oracle[s.name()];
                assert_eq!(&got, want, "delta {p}/{q}, d={d}, set {}", s.name());
            }
        }
    }
}

#[test]
fn small_universe_sizes() {
    let u = enumerate_universe_with(Rational::new(2, 5), 1, opts()).unwrap();
    assert_eq!(u.set(TreeSet::W).len(), 1);
    let u = symtree::enumerate_universe(Rational::new(9, 20), 1).unwrap();
    assert_eq!(u.set(TreeSet::W), &[Tree::xi()]);
}

/// Number of distinct orderings of a canonical tree, counted at every product node.
fn orderings(t: &Tree) -> usize {
    let Some(ch) = t.inner() else { return 1 };
    let distinct = (ch[0] != ch[1]) as usize + (ch[1] != ch[2]) as usize + (ch[0] != ch[2]) as usize;
    let here = match distinct {
        0 => 1,
        2 => 3,
        _ => 6,
    };
    here * ch.iter().map(orderings).product::<usize>()
}

#[test]
fn permutation_multiplicity_counts() {
    // Each canonical class of N̊ ∪ W̊ appears once per distinct ordering of its factors.
    let u = symtree::enumerate_universe(Rational::new(3, 10), 1).unwrap();
    let mut classes = std::collections::HashMap::<Tree, usize>::new();
    for t in u.products() {
        *classes.entry(t.canonical()).or_default() += 1;
    }
    for (c, n) in classes {
        assert_eq!(n, orderings(&c), "class {c}");
    }
}

#[test]
fn full_algebra_scan_small_delta() {
    let u = symtree::enumerate_universe(Rational::new(9, 20), 2).unwrap();
    let co = Coalgebra::for_universe(&u);
    assert!(coalgebra::verify_coassoc(&u, &co).passed());
    assert!(coalgebra::verify_explicit_formula(&u, &co).passed());
    assert!(coalgebra::verify_set_preservation(&u, &co).passed());
    assert!(coeffs::check_cube_identity(&u).passed());
    assert!(coeffs::check_coherence(&u).passed());
}

fn arb_tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![Just(Tree::one()), Just(Tree::xi()), (1usize..=2).prop_map(Tree::x)];
    leaf.prop_recursive(3, 24, 3, |inner| {
        (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| {
            symtree::product_raw([symtree::i_of(a), symtree::i_of(b), symtree::i_of(c)]).unwrap()
        })
    })
}

fn arb_delta() -> impl Strategy<Value = Rational> {
    (1i64..20, 21i64..40).prop_map(|(p, q)| Rational::new(p, q))
}

proptest! {
    #[test]
    fn closed_order_matches_recursion(t in arb_tree(), delta in arb_delta()) {
        prop_assert_eq!(t.order(delta), t.order_recursive(delta));
    }

    #[test]
    fn text_form_round_trips(t in arb_tree()) {
        let s = t.to_string();
        prop_assert_eq!(s.parse::<Tree>().unwrap(), t);
    }

    #[test]
    fn canonical_form_is_permutation_invariant(a in arb_tree(), b in arb_tree(), c in arb_tree()) {
        let (a, b, c) = (symtree::i_of(a), symtree::i_of(b), symtree::i_of(c));
        let t1 = symtree::product_raw([a, b, c]).unwrap();
        let t2 = symtree::product_raw([c, a, b]).unwrap();
        let t3 = symtree::product_raw([b, a, c]).unwrap();
        prop_assert_eq!(t1.canonical(), t2.canonical());
        prop_assert_eq!(t1.canonical(), t3.canonical());
        prop_assert_eq!(t1.canonical().canonical(), t1.canonical());
    }

    #[test]
    fn leq_is_reflexive_and_antisymmetric(a in arb_tree(), b in arb_tree()) {
        prop_assert!(symtree::leq(a, a));
        if symtree::leq(a, b) && symtree::leq(b, a) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn subtree_relation_is_transitive(t in arb_tree()) {
        if let Some(ch) = t.inner() {
            for c in ch {
                prop_assert!(symtree::subset(c, t));
                if let Some(gc) = c.inner() {
                    for g in gc {
                        prop_assert!(symtree::subset(g, t));
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_product_respects_order(a in arb_tree(), b in arb_tree(), c in arb_tree(), delta in arb_delta()) {
        let r = symtree::product_of(a, b, c, delta);
        let raw = symtree::product_raw([symtree::i_of(a), symtree::i_of(b), symtree::i_of(c)]).unwrap();
        prop_assert_eq!(r.is_some(), raw.order(delta) <= Rational::from_integer(0));
    }

    #[test]
    fn sign_depends_on_leaf_count_only(t in arb_tree()) {
        let m = t.leaves() as i64;
        let expect = if ((m - 1) / 2) % 2 == 0 { 1 } else { -1 };
        prop_assert_eq!(t.sign(), expect);
        if let Kind::Product(_) = t.kind() {
            prop_assert_eq!(t.canonical().sign(), t.sign());
        }
    }
}
