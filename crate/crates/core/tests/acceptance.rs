//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria whose measured outcome is a known, analysed failure are listed in
//! `EXPECTED_FAIL`; the run exits non-zero if any other criterion fails or if
//! one of those starts passing, so the list stays honest.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use phi4_core::field::{domain_probes, Grid, NoiseSpec};
use phi4_core::path::{chen_scan, sample_nodes, Path};
use phi4_core::report::Report;
use phi4_core::suite::{self, Fixture, LiftSpec, Tolerances};
use phi4_core::symtree::{enumerate_universe, enumerate_universe_with, EnumOptions, TreeSet};
use phi4_core::Rational;

const DELTAS: [(i64, i64); 4] = [(2, 5), (3, 10), (9, 20), (13, 50)];

/// Criteria expected to fail on the default configuration, with the failing clause.
const EXPECTED_FAIL: [(u32, &str); 2] = [(7, "reconstruction decay"), (8, "boundary independence")];

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian() -> NoiseSpec {
    NoiseSpec::Gaussian { seed: 7, eps: 1.0 / 32.0 }
}

fn fixture(delta: (i64, i64), noise: NoiseSpec) -> Fixture {
    let u = enumerate_universe(Rational::new(delta.0, delta.1), 1).unwrap();
    Fixture::new(Grid::default_1d(), u, noise).unwrap()
}

fn first_failure(rep: &Report) -> String {
    rep.failures().next().map_or(String::new(), |r| format!("; first failure {} at {}: {} vs {}", r.identity, r.tree, r.lhs, r.rhs))
}

fn algebra() -> Outcome {
    let t0 = Instant::now();
    let mut checked = 0;
    let mut bad = Vec::new();
    for (p, q) in DELTAS {
        let u = enumerate_universe_with(Rational::new(p, q), 1, EnumOptions { allow_integer_orders: true, ..Default::default() }).unwrap();
        let rep = suite::algebra_suite(&u, 5, 11);
        checked += rep.len();
        if !rep.passed() {
            bad.push(format!("{p}/{q}{}", first_failure(&rep)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: bad.is_empty() && secs < 60.0,
        detail: format!("{checked} exact checks, {} mismatching deltas, {secs:.1} s {}", bad.len(), bad.join(" ")),
    }
}

fn oracle() -> Outcome {
    let mut mismatches = Vec::new();
    for (p, q) in DELTAS {
        for d in [1, 2] {
            let u = enumerate_universe_with(Rational::new(p, q), d, EnumOptions { allow_integer_orders: true, ..Default::default() }).unwrap();
            let want = common::oracle_sets(p, q, d);
            for s in TreeSet::ALL {
                let got: BTreeSet<String> = u.set(s).iter().map(|t| t.to_string()).collect();
                if got != want[s.name()] {
                    mismatches.push(format!("{p}/{q} d={d} {}", s.name()));
                }
            }
        }
    }
    Outcome { pass: mismatches.is_empty(), detail: format!("4 deltas x 2 dimensions x {} sets; mismatches: {mismatches:?}", TreeSet::ALL.len()) }
}

fn chen() -> Outcome {
    let tol = Tolerances::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, noise) in [("smooth", NoiseSpec::Smooth { amplitude: 1.0 }), ("gaussian", gaussian())] {
        let fx = fixture((3, 10), noise);
        let (lp, _) = fx.lift(&LiftSpec::Phi43 { constants: None }).unwrap();
        let path = Path::new(&lp).unwrap();
        let rep = chen_scan(&path, &fx.triples(200, 3), tol.chen).unwrap();
        pass &= rep.passed();
        parts.push(format!("{name}: {} trees over 200 triples, max rel {:.2e}", rep.len(), rep.max_residual));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn cube() -> Outcome {
    let tol = Tolerances::default();
    let fx = fixture((3, 10), gaussian());
    let v = suite::smooth_profile(&fx.grid);
    let probes = sample_nodes(&fx.grid, 100, 5, (0.1, 1.0), 0.9);
    let mut pass = true;
    let mut parts = Vec::new();
    for spec in [LiftSpec::Multiplicative, LiftSpec::Phi43 { constants: None }] {
        let (lp, _) = fx.lift(&spec).unwrap();
        let path = Path::new(&lp).unwrap();
        let rep = suite::products_suite(&path, &v, &probes, &tol).unwrap();
        pass &= rep.passed();
        parts.push(format!("{spec:?}: max rel {:.2e}{}", rep.max_residual, first_failure(&rep)));
    }
    let consts = suite::phi43_constant_check(&fx.universe);
    pass &= consts.passed();
    parts.push(format!("symbolic constants {} of {} exact", consts.len() - consts.failures().count(), consts.len()));
    Outcome { pass, detail: parts.join(", ") }
}

fn one_zero() -> Outcome {
    let tol = Tolerances::default();
    let fx = fixture((3, 10), gaussian());
    let (lp, _) = fx.lift(&LiftSpec::Phi43 { constants: None }).unwrap();
    let path = Path::new(&lp).unwrap();
    let v = suite::smooth_profile(&fx.grid);
    let pairs: Vec<(usize, usize)> = fx.triples(100, 9).into_iter().map(|(_, y, x)| (y, x)).collect();
    let (rep, out) = suite::onezero_suite(&path, &v, &pairs, tol.onezero).unwrap();
    Outcome {
        pass: rep.passed(),
        detail: format!(
            "{} comparisons over {} pairs at {} levels, max rel {:.2e}, unclassified {:?}{}",
            out.checked,
            out.pairs,
            out.levels.len(),
            rep.max_residual,
            out.unclassified,
            first_failure(&rep)
        ),
    }
}

fn order() -> Outcome {
    let tol = Tolerances::default();
    let fx = fixture((3, 10), gaussian());
    let (lp, _) = fx.lift(&LiftSpec::Multiplicative).unwrap();
    let path = Path::new(&lp).unwrap();
    let trees = suite::order_trees(&fx.universe, 3);
    let (rep, rows) = suite::order_suite(&path, &trees, &fx.basepoints(24, 5), &suite::dyadic(1, 4), tol.order_margin).unwrap();
    let worst = rows
        .iter()
        .filter_map(|r| r.slope.map(|s| (s - r.target, r)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(String::new(), |(m, r)| format!(", tightest slope - |sigma| = {m:.3} at {}", r.sigma));
    Outcome {
        pass: rep.passed(),
        detail: format!("{} trees (I(I(1)^3) excluded), {} below bound{worst}", rows.len(), rep.failures().count()),
    }
}

fn kernel() -> (Outcome, bool, bool) {
    let tol = Tolerances::default();
    let g = Arc::new(Grid::default_1d());
    let mut f = suite::smooth_profile(&g);
    let xi = phi4_core::field::generate_noise(&g, &gaussian()).unwrap();
    for (a, b) in f.data.iter_mut().zip(&xi.data) {
        *a += b;
    }
    let rep = suite::kernel_suite(&f, &[0.25, 0.5], 3, &domain_probes(&g, 200), &tol).unwrap();
    let semi = rep.records.iter().filter(|r| r.identity == "semigroup").count();
    let semigroup_ok = rep.passed();
    let fx = fixture((9, 20), gaussian());
    let (lp, _) = fx.lift(&LiftSpec::Multiplicative).unwrap();
    let path = Path::new(&lp).unwrap();
    let v = suite::smooth_profile(&fx.grid);
    let w = fx.universe.set(TreeSet::W)[0];
    let (rrep, out) = suite::reconstruction_suite(&path, &v, (w, w), &fx.basepoints(24, 5), &suite::dyadic(1, 4), &tol).unwrap();
    let identity_ok = rrep.records.iter().filter(|r| r.identity == "family_identity").all(|r| r.status == phi4_core::report::Status::Pass);
    let decay_ok = rrep.records.iter().filter(|r| r.identity == "reconstruction_decay").all(|r| r.status == phi4_core::report::Status::Pass);
    let detail = format!(
        "semigroup {semi} checks at n <= 3, max {:.2e}; family identity max rel {:.2e}; decay slope {} vs predicted {}",
        rep.max_residual,
        out.identity_residual,
        out.decay.slope.map_or("none".into(), |s| format!("{s:.3}")),
        out.prediction.map_or("none".into(), |s| format!("{s:.3}")),
    );
    (Outcome { pass: semigroup_ok && decay_ok && identity_ok, detail }, semigroup_ok && identity_ok, decay_ok)
}

fn apriori() -> (Outcome, bool, bool) {
    let t0 = Instant::now();
    let fx = fixture((9, 20), NoiseSpec::Smooth { amplitude: 1.0 });
    let (lp, _) = fx.lift(&LiftSpec::Multiplicative).unwrap();
    let path = Path::new(&lp).unwrap();
    let radii = [0.1, 0.2, 0.25, 0.4, 0.5];
    let rep = suite::apriori_scan(&path, &suite::default_traces(), &radii, &fx.basepoints(24, 5), &suite::dyadic(1, 4)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let dominated = rep
        .rows
        .iter()
        .flat_map(|r| r.norms.iter())
        .all(|&(r, n)| n <= rep.c_hat * (1.0 / r).max(rep.noise_scale) * (1.0 + 1e-12));
    let (m10, m100, spread) = rep.boundary_independence.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let independent = spread < Tolerances::default().boundary;
    let detail = format!(
        "{} traces, C_hat {:.4}, noise scale {:.3e}, |v|_D1/2 max {m10:.4} (amp 10) vs {m100:.4} (amp 100), spread {:.1}%, {secs:.0} s",
        rep.rows.len(),
        rep.c_hat,
        rep.noise_scale,
        100.0 * spread
    );
    (Outcome { pass: dominated && independent && secs <= 600.0, detail }, dominated && secs <= 600.0, independent)
}

fn main() {
    let mut failed: Vec<(u32, &str)> = Vec::new();
    let line = |n: u32, name: &str, o: &Outcome| {
        println!("criterion {n} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    let simple: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "exact algebra", algebra),
        (2, "enumeration oracle", oracle),
        (3, "Chen relation", chen),
        (4, "renormalised cube", cube),
        (5, "one zero", one_zero),
        (6, "order bounds", order),
    ];
    for (n, name, f) in simple {
        let o = f();
        line(n, name, &o);
        if !o.pass {
            failed.push((n, "all"));
        }
    }
    let (o, rest, decay) = kernel();
    line(7, "kernel semigroup and reconstruction", &o);
    if !rest {
        failed.push((7, "semigroup"));
    }
    if !decay {
        failed.push((7, "reconstruction decay"));
    }
    let (o, rest, independent) = apriori();
    line(8, "a priori behaviour", &o);
    if !rest {
        failed.push((8, "domination"));
    }
    if !independent {
        failed.push((8, "boundary independence"));
    }
    let unexpected: Vec<_> = failed.iter().filter(|f| !EXPECTED_FAIL.contains(f)).collect();
    let fixed: Vec<_> = EXPECTED_FAIL.iter().filter(|e| !failed.contains(e)).collect();
    println!("expected failures: {EXPECTED_FAIL:?}");
    if !unexpected.is_empty() || !fixed.is_empty() {
        println!("unexpected failures: {unexpected:?}; expected failures now passing: {fixed:?}");
        std::process::exit(1);
    }
}
