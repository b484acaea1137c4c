//! Fixtures and runners for the verification suites and scans.
//!
//! Each runner returns a [`Report`] plus whatever measurement rows a caller may
//! want to save. Nothing here writes to disk.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coalgebra::{self, Coalgebra};
use crate::coeffs::{self, classify_utau, gamma_between, UtauKind};
use crate::equation::{
    cube_formula_check, reconstruction_check, rhs_consistency, solve_remainder, telescoping_sides, BoundaryData,
    DecayReport, ExponentRow, Modelled, ProductFamily, predicted_decay, RemainderTables, SolverConfig, TreeExpansion,
};
use crate::field::{domain_probes, generate_noise, gaussian_noise, load_field, semigroup_residual, Field, Grid, NoiseSpec};
use crate::lift::{phi43_constants, phi43_counterterms, sunset_tree, wick_tree, CountertermMap, LocalProduct, Phi43Estimate};
use crate::path::{chen_scan, order_scan, path_identity_scan, sample_nodes, sample_triples, OrderReport, Path};
use crate::report::Report;
use crate::symtree::{i_of, product_raw, to_f64, Tree, TreeSet, TreeUniverse};
use crate::{Error, Rational};

/// Named tolerances with their default values.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub chen: f64,
    pub path: f64,
    /// Derivative consistency, which compares against a discrete gradient.
    pub fd: f64,
    pub cube_mult: f64,
    pub cube_renorm: f64,
    pub rhs: f64,
    pub onezero: f64,
    /// Allowed shortfall of a fitted slope below `|σ|`.
    pub order_margin: f64,
    pub semigroup: f64,
    pub telescoping: f64,
    /// Allowed gap between measured and predicted reconstruction exponents.
    pub reconstruction: f64,
    /// Allowed relative spread of `‖v‖_{D_{1/2}}` between boundary magnitudes.
    pub boundary: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            chen: 1e-8,
            path: 1e-8,
            fd: 1e-6,
            cube_mult: 1e-10,
            cube_renorm: 1e-8,
            rhs: 1e-10,
            onezero: 1e-8,
            order_margin: 0.25,
            semigroup: 1e-3,
            telescoping: 1e-10,
            reconstruction: 0.3,
            boundary: 0.1,
        }
    }
}

impl Tolerances {
    /// Applies `name=value`.
    pub fn set(&mut self, spec: &str) -> Result<(), Error> {
        let (name, value) = spec.split_once('=').ok_or_else(|| Error::Parse(format!("tolerance '{spec}': expected name=value")))?;
        let v: f64 = value.parse().map_err(|_| Error::Parse(format!("tolerance '{spec}': bad number")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("tolerance '{name}' must be positive")));
        }
        let slot = match name {
            "chen" => &mut self.chen,
            "path" => &mut self.path,
            "fd" => &mut self.fd,
            "cube_mult" => &mut self.cube_mult,
            "cube_renorm" => &mut self.cube_renorm,
            "rhs" => &mut self.rhs,
            "onezero" => &mut self.onezero,
            "order_margin" => &mut self.order_margin,
            "semigroup" => &mut self.semigroup,
            "telescoping" => &mut self.telescoping,
            "reconstruction" => &mut self.reconstruction,
            "boundary" => &mut self.boundary,
            _ => return Err(Error::Config(format!("unknown tolerance '{name}'"))),
        };
        *slot = v;
        Ok(())
    }
}

/// How the local product is built from the noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum LiftSpec {
    Multiplicative,
    /// `Φ⁴₃` counterterms; constants are estimated from a noise ensemble when absent.
    Phi43 { constants: Option<(f64, f64)> },
    /// Counterterm map read from a JSON file.
    Counterterm(PathBuf),
    /// JSON object mapping each class representative of `Q` to a saved field stem.
    Custom(PathBuf),
}

impl FromStr for LiftSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.splitn(3, ':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| Error::Parse(format!("lift '{s}'")));
        match parts.as_slice() {
            ["multiplicative"] => Ok(LiftSpec::Multiplicative),
            ["phi43"] => Ok(LiftSpec::Phi43 { constants: None }),
            ["phi43", a, b] => Ok(LiftSpec::Phi43 { constants: Some((num(a)?, num(b)?)) }),
            ["counterterm", p] => Ok(LiftSpec::Counterterm(PathBuf::from(p))),
            ["custom", p] => Ok(LiftSpec::Custom(PathBuf::from(p))),
            _ => Err(Error::Parse(format!(
                "lift '{s}': expected multiplicative | phi43[:cw:cs] | counterterm:file | custom:file"
            ))),
        }
    }
}

/// Ensemble size used to estimate the `Φ⁴₃` constants.
pub const PHI43_ENSEMBLE: u64 = 8;

/// `C_wick`, `C_sunset` for a noise fixture. Gaussian noise uses `PHI43_ENSEMBLE`
/// consecutive seeds; deterministic noise is its own ensemble.
pub fn estimate_phi43(grid: &Arc<Grid>, noise: &NoiseSpec) -> Result<Phi43Estimate, Error> {
    let xis = match *noise {
        NoiseSpec::Gaussian { seed, eps } => {
            (0..PHI43_ENSEMBLE).map(|k| gaussian_noise(grid, seed + k, eps)).collect::<Result<Vec<_>, _>>()?
        }
        _ => vec![generate_noise(grid, noise)?],
    };
    phi43_constants(&xis, &domain_probes(grid, 4000), None)
}

/// Builds the lift and a manifest describing how it was built.
pub fn build_lift(
    xi: &Field,
    u: &Arc<TreeUniverse>,
    spec: &LiftSpec,
    noise: &NoiseSpec,
) -> Result<(LocalProduct, serde_json::Value), Error> {
    let read_json = |p: &PathBuf| -> Result<serde_json::Value, Error> {
        serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
    };
    match spec {
        LiftSpec::Multiplicative => {
            let lp = LocalProduct::multiplicative(xi, u)?;
            let m = lp.manifest();
            Ok((lp, m))
        }
        LiftSpec::Phi43 { constants } => {
            let (cw, cs, est) = match constants {
                Some((a, b)) => (*a, *b, None),
                None => {
                    let e = estimate_phi43(&xi.grid, noise)?;
                    (e.c_wick, e.c_sunset, Some(e))
                }
            };
            let lp = LocalProduct::from_counterterms(xi, u, &phi43_counterterms(u, cw, cs)?)?;
            let mut m = lp.manifest();
            m["phi43"] = serde_json::json!({"c_wick": cw, "c_sunset": cs, "estimate": est});
            Ok((lp, m))
        }
        LiftSpec::Counterterm(p) => {
            let r = CountertermMap::from_json(u, &read_json(p)?)?;
            let lp = LocalProduct::from_counterterms(xi, u, &r)?;
            let m = lp.manifest();
            Ok((lp, m))
        }
        LiftSpec::Custom(p) => {
            let v = read_json(p)?;
            let obj = v.as_object().ok_or_else(|| Error::Parse(format!("{}: expected an object", p.display())))?;
            let base = p.parent().map(PathBuf::from).unwrap_or_default();
            let mut q = HashMap::new();
            for (k, stem) in obj {
                let t: Tree = k.parse()?;
                let stem = stem.as_str().ok_or_else(|| Error::Parse(format!("{k}: expected a field stem")))?;
                let (f, _) = load_field(&base.join(stem))?;
                if *f.grid != *xi.grid {
                    return Err(Error::Config(format!("field for {k} lives on a different grid")));
                }
                q.insert(t, Field { grid: xi.grid.clone(), data: f.data });
            }
            let lp = LocalProduct::custom(xi, u, &q)?;
            let m = lp.manifest();
            Ok((lp, m))
        }
    }
}

/// A permutation-invariant rational counterterm map with small random entries.
pub fn random_counterterms(u: &TreeUniverse, seed: u64) -> HashMap<Tree, Rational> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Tree> = u.set(TreeSet::Q).iter().map(|t| t.canonical()).collect();
    classes.sort_by(|a, b| a.cmp_structural(*b));
    classes.dedup();
    classes
        .into_iter()
        .map(|c| (c, Rational::new(rng.gen_range(-6..=6), rng.gen_range(1..=5))))
        .collect()
}

/// Exact symbolic identities on one universe, with `maps` random counterterm maps for `ΔR`.
pub fn algebra_suite(u: &TreeUniverse, maps: usize, seed: u64) -> Report {
    let co = Coalgebra::for_universe(u);
    let mut rep = coalgebra::verify_coassoc(u, &co);
    rep.merge(coalgebra::verify_explicit_formula(u, &co));
    rep.merge(coalgebra::verify_set_preservation(u, &co));
    rep.merge(coeffs::check_cube_identity(u));
    rep.merge(coeffs::check_coherence(u));
    for k in 0..maps {
        let r = random_counterterms(u, seed + k as u64);
        let f = |t: Tree| r.get(&t.canonical()).copied().unwrap_or_default();
        rep.merge(coalgebra::verify_delta_r(u, &co, &f));
    }
    rep
}

/// Chen's relation over `T`, then strong Chen, the coproduct form and derivative consistency.
pub fn path_suite(path: &Path<'_>, triples: &[(usize, usize, usize)], tol: &Tolerances) -> Result<Report, Error> {
    let mut rep = chen_scan(path, triples, tol.chen)?;
    rep.merge(path_identity_scan(path, triples, tol.path, tol.fd)?);
    Ok(rep)
}

/// A smooth remainder profile used wherever the checks need some `v`.
pub fn smooth_profile(grid: &Arc<Grid>) -> Field {
    Field::from_fn(grid, |t, x| {
        let s: f64 = x.iter().enumerate().map(|(i, v)| (1.3 + 0.2 * i as f64) * v).sum();
        0.7 * (s + 0.4 * t).sin() + 0.2
    })
}

/// `r_Φ` from `Q_wick` and `Q_sunset` alone, checked exactly, with the other constants zero.
pub fn phi43_constant_check(u: &TreeUniverse) -> Report {
    let (wick, sunset) = (wick_tree().canonical(), sunset_tree().canonical());
    let has = |c: Tree| u.set(TreeSet::Q).iter().any(|q| q.canonical() == c);
    let mut rep = Report::new();
    for (cw, cs) in [(1i64, 0i64), (0, 1), (2, 3), (-5, 7)] {
        let r = move |t: Tree| {
            let c = t.canonical();
            if c == wick {
                Rational::from_integer(-cw)
            } else if c == sunset {
                Rational::from_integer(-cs)
            } else {
                Rational::default()
            }
        };
        let rc = crate::equation::renorm_constants_exact(u, &r);
        let want = Rational::from_integer(3 * cw * has(wick) as i64 - 9 * cs * has(sunset) as i64);
        let label = format!("C_wick={cw}, C_sunset={cs}");
        rep.push("r_phi", &label, rc.r_phi == want, rc.r_phi, want);
        let zero = rc.r1 == Rational::default()
            && rc.r_phi2 == Rational::default()
            && rc.r_dphi.iter().all(|r| *r == Rational::default())
            && rc.other.is_empty();
        rep.push("r_other_zero", &label, zero, format!("r1={} rphi2={} rdphi={:?}", rc.r1, rc.r_phi2, rc.r_dphi), "0");
    }
    rep
}

/// Cube formula and grouped right-hand side at the probes.
pub fn products_suite(path: &Path<'_>, v: &Field, probes: &[usize], tol: &Tolerances) -> Result<Report, Error> {
    let t = if path.lp.r.is_zero() { tol.cube_mult } else { tol.cube_renorm };
    let (mut rep, _) = cube_formula_check(path, v, probes, t)?;
    rep.merge(rhs_consistency(path, v, probes, tol.rhs)?);
    rep.merge(phi43_constant_check(path.universe()));
    Ok(rep)
}

/// Non-resonant levels in `(0,1)`, `(1,3/2)` and `(3/2,2)`. Above `γ = 2` the trees `τ̄` with
/// `|τ̄| < γ − 2` would include non-negative orders, which the universe does not carry.
pub fn onezero_levels(u: &TreeUniverse) -> Vec<Rational> {
    let r = |a: i64, b: i64| Rational::new(a, b);
    [(r(0, 1), r(1, 1)), (r(1, 1), r(3, 2)), (r(3, 2), r(2, 1))]
        .into_iter()
        .filter_map(|(a, b)| gamma_between(u, a, b))
        .collect()
}

/// Expansion with `v` smooth and `v_X = D^X v`, tabulated on `nodes`.
pub fn expansion_on(path: &Path<'_>, v: &Field, nodes: &[usize]) -> Result<TreeExpansion, Error> {
    let tables = RemainderTables::build(path, nodes)?;
    let vx = tables.dx_map(v);
    TreeExpansion::new(&path.lp.universe, v.clone(), vx, false)
}

/// Outcome of the one-zero cross-check.
#[derive(Clone, Debug, Serialize)]
pub struct OneZeroOutcome {
    pub levels: Vec<String>,
    pub pairs: usize,
    /// Trees of `N` that fall outside the classification.
    pub unclassified: Vec<String>,
    /// Number of `(τ, level)` combinations checked.
    pub checked: usize,
}

/// `U^τ` computed from its definition against the classified form, for every classified
/// `τ ∈ N` below each level and every sampled pair.
pub fn onezero_suite(path: &Path<'_>, v: &Field, pairs: &[(usize, usize)], tol: f64) -> Result<(Report, OneZeroOutcome), Error> {
    let u = path.universe();
    let mut nodes: Vec<usize> = pairs.iter().flat_map(|&(y, x)| [y, x]).collect();
    nodes.sort();
    nodes.dedup();
    let exp = expansion_on(path, v, &nodes)?;
    let m = Modelled::new(path, &exp);
    let levels = onezero_levels(u);
    let mut worst: HashMap<(Tree, Rational), (f64, f64, f64)> = HashMap::new();
    let mut unclassified = Vec::new();
    for &t in u.set(TreeSet::N) {
        if classify_utau(u, t).is_err() {
            unclassified.push(t.to_string());
        }
    }
    for &(y, x) in pairs {
        let (cy, cx) = (path.centering(y), path.centering(x));
        let yx = path.pair(y, &cy, &cx);
        for &gm in &levels {
            let g = gm - 2;
            for &t in u.set(TreeSet::N) {
                if let Some(sd) = m.one_zero(t, g, &yx)? {
                    let e = worst.entry((t, gm)).or_insert((0.0, sd.lhs, sd.rhs));
                    if sd.rel() >= e.0 {
                        *e = (sd.rel(), sd.lhs, sd.rhs);
                    }
                }
            }
        }
    }
    let mut rows: Vec<_> = worst.into_iter().collect();
    rows.sort_by(|a, b| (a.0 .1, a.0 .0.to_string()).cmp(&(b.0 .1, b.0 .0.to_string())));
    let mut rep = Report::new();
    for ((t, gm), (r, l, rr)) in &rows {
        rep.push_residual("one_zero", format!("{t} @ {gm}"), *l, *rr, *r, tol);
    }
    let out = OneZeroOutcome {
        levels: levels.iter().map(|g| g.to_string()).collect(),
        pairs: pairs.len(),
        unclassified,
        checked: rows.len(),
    };
    Ok((rep, out))
}

/// Class of a tree for reporting.
pub fn utau_class(u: &TreeUniverse, t: Tree) -> Option<UtauKind> {
    classify_utau(u, t).ok().map(|c| c.kind)
}

/// Dyadic scales `2^{-k}` for `k = lo..=hi`.
pub fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 0.5f64.powi(k)).collect()
}

/// `I(I(1)I(1)I(1))`: planted on the order-zero product kept for the `v³` term. It has no
/// `I⁺` image, so its centering carries no first-order term and it is left out of the order scan.
pub fn planted_cube() -> Tree {
    i_of(product_raw([i_of(Tree::one()); 3]).expect("planted"))
}

/// Trees of `T^cen ∪ T_r` with at most `max_xi` noise leaves.
pub fn order_trees(u: &TreeUniverse, max_xi: u32) -> Vec<Tree> {
    let skip = planted_cube();
    let mut out: Vec<Tree> = u
        .set(TreeSet::TCen)
        .iter()
        .chain(u.set(TreeSet::Tr))
        .copied()
        .filter(|s| s.m_xi() <= max_xi && *s != skip)
        .collect();
    out.sort_by(|a, b| a.cmp_structural(*b));
    out.dedup();
    out
}

/// Fitted log-log slopes against `|σ| − margin`.
pub fn order_suite(path: &Path<'_>, trees: &[Tree], basepoints: &[usize], scales: &[f64], margin: f64) -> Result<(Report, Vec<OrderReport>), Error> {
    let mut rep = Report::new();
    let mut rows = Vec::new();
    for &s in trees {
        let r = order_scan(path, s, basepoints, scales)?;
        let slope = r.slope.map_or("vanishes".to_string(), |v| format!("{v:.4}"));
        rep.push("order_bound", s, r.meets(margin), slope, format!(">= {:.4}", r.target - margin));
        rows.push(r);
    }
    Ok((rep, rows))
}

/// Semigroup residuals at depths `1..=max_depth` for each scale, plus telescoping of a two-point family.
pub fn kernel_suite(f: &Field, scales: &[f64], max_depth: usize, probes: &[usize], tol: &Tolerances) -> Result<Report, Error> {
    let mut rep = Report::new();
    for &l in scales {
        for n in 1..=max_depth {
            let r = semigroup_residual(f, l, n, probes)?;
            rep.push_residual("semigroup", format!("L={l}, n={n}"), r, 0.0, r, tol.semigroup);
        }
    }
    let g = &*f.grid;
    let fam = |y: usize, x: usize| {
        let (ty, xy) = g.coords(y);
        let (tx, xx) = g.coords(x);
        f.data[y] * (1.0 + (xx[0] - xy[0]).abs().powf(0.6) + (tx - ty).abs().sqrt())
    };
    for &x in probes.iter().take(4) {
        match telescoping_sides(g, &fam, scales[0], 2, x) {
            Ok(sd) => rep.push_residual("telescoping", format!("node {x}"), sd.lhs, sd.rhs, sd.rel(), tol.telescoping),
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(rep)
}

/// Measured and predicted decay of the reconstruction gap for one product family.
#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionOutcome {
    pub w1: String,
    pub w2: String,
    pub level: String,
    pub terms: usize,
    pub decay: DecayReport,
    pub exponents: Vec<ExponentRow>,
    pub prediction: Option<f64>,
    /// Worst relative residual of the two-base-point identity for the family.
    pub identity_residual: f64,
}

/// Runs the reconstruction check on `F(y,x) = Σ Υ_x(τ) X_{y,x}(I(τ)I(w₁)I(w₂))`.
pub fn reconstruction_suite(
    path: &Path<'_>,
    v: &Field,
    w: (Tree, Tree),
    basepoints: &[usize],
    scales: &[f64],
    tol: &Tolerances,
) -> Result<(Report, ReconstructionOutcome), Error> {
    let g = path.grid();
    let lmax = scales.iter().copied().fold(0.0, f64::max);
    let region: Vec<usize> = (0..g.len())
        .filter(|&z| {
            let (t, x) = g.coords(z);
            t >= -0.01 - lmax * lmax * 4.0 && t <= 1.01 && (0..g.dim).all(|i| x[i].abs() <= 1.0 + 2.0 * lmax)
        })
        .collect();
    let exp = expansion_on(path, v, &region)?;
    let fam = ProductFamily::new(path, &exp, w.0, w.1, &region)?;
    let decay = reconstruction_check(&fam, g, basepoints, scales)?;
    let exponents = fam.exponents(basepoints, scales)?;
    let (_, prediction) = predicted_decay(&exponents);
    let mut rep = Report::new();
    let mut worst = 0.0f64;
    for (y, x1, x2) in sample_triples(g, 12, 17, 0.25) {
        let sd = fam.chen_sides(y, x1, x2)?;
        worst = worst.max(sd.rel());
        rep.push_residual("family_identity", format!("({y},{x1},{x2})"), sd.lhs, sd.rhs, sd.rel(), 1e-8);
    }
    match (decay.slope, prediction) {
        (Some(s), Some(p)) => rep.push("reconstruction_decay", format!("{} ; {}", w.0, w.1), (s - p).abs() <= tol.reconstruction, format!("{s:.4}"), format!("{p:.4}")),
        (s, p) => rep.push("reconstruction_decay", format!("{} ; {}", w.0, w.1), false, format!("{s:?}"), format!("{p:?}")),
    }
    let out = ReconstructionOutcome {
        w1: w.0.to_string(),
        w2: w.1.to_string(),
        level: fam.level.to_string(),
        terms: fam.terms.len(),
        decay,
        exponents,
        prediction,
        identity_residual: worst,
    };
    Ok((rep, out))
}

/// Traces of the a priori scan: three of magnitude 1, three of 10, four of 100.
pub fn default_traces() -> Vec<BoundaryData> {
    let amps = [1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 100.0, 100.0, 100.0, 100.0];
    amps.iter().enumerate().map(|(k, &a)| BoundaryData::Trace { seed: k as u64 + 1, amplitude: a }).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub boundary: BoundaryData,
    pub max_abs: f64,
    pub updates: usize,
    pub norms: Vec<(f64, f64)>,
}

/// A priori scan: `R ↦ ‖v‖_{D_R}` for several boundary data against `Ĉ max(1/R, [X;τ]^{1/(δ m_Ξ(τ))})`.
#[derive(Clone, Debug, Serialize)]
pub struct AprioriReport {
    pub rows: Vec<TraceRow>,
    /// `(τ, [X;τ]^{1/(δ m_Ξ(τ))})`.
    pub noise_terms: Vec<(String, f64)>,
    pub noise_scale: f64,
    /// Smallest constant that dominates every measured point.
    pub c_hat: f64,
    /// `max ‖v‖_{D_{1/2}}` over the magnitude-10 and magnitude-100 traces, and their relative spread.
    pub boundary_independence: Option<(f64, f64, f64)>,
}

/// `[X;τ] ≈ max_L sample(L) / L^{|τ|}` from an order scan.
pub fn seminorm(r: &OrderReport) -> f64 {
    r.samples.iter().map(|&(l, v)| v / l.powf(r.target)).fold(0.0, f64::max)
}

pub fn apriori_scan(
    path: &Path<'_>,
    traces: &[BoundaryData],
    radii: &[f64],
    basepoints: &[usize],
    scales: &[f64],
) -> Result<AprioriReport, Error> {
    let u = path.universe();
    let delta = to_f64(u.delta);
    let mut noise_terms = Vec::new();
    for &s in u.set(TreeSet::T) {
        if u.order(s) >= Rational::default() || s.m_xi() == 0 {
            continue;
        }
        let r = match order_scan(path, s, basepoints, scales) {
            Ok(r) => r,
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        };
        noise_terms.push((s.to_string(), seminorm(&r).powf(1.0 / (delta * s.m_xi() as f64))));
    }
    let noise_scale = noise_terms.iter().map(|t| t.1).fold(0.0, f64::max);
    let grid = path.lp.grid.clone();
    let tables = RemainderTables::build(path, &crate::equation::domain_nodes(&grid))?;
    let cfg = SolverConfig { radii: radii.to_vec(), ..SolverConfig::default() };
    let mut rows = Vec::new();
    let mut c_hat = 0.0f64;
    for b in traces {
        let (_, rec) = solve_remainder(&tables, &grid, b, &cfg)?;
        for &(r, n) in &rec.norms {
            c_hat = c_hat.max(n / (1.0 / r).max(noise_scale));
        }
        rows.push(TraceRow { boundary: b.clone(), max_abs: rec.max_abs, updates: rec.updates, norms: rec.norms });
    }
    let half = |amp: f64| {
        rows.iter()
            .filter(|r| matches!(r.boundary, BoundaryData::Trace { amplitude, .. } if amplitude == amp))
            .filter_map(|r| r.norms.iter().find(|n| (n.0 - 0.5).abs() < 1e-12).map(|n| n.1))
            .reduce(f64::max)
    };
    let boundary_independence = match (half(10.0), half(100.0)) {
        (Some(a), Some(b)) => Some((a, b, (b - a).abs() / a.max(b))),
        _ => None,
    };
    Ok(AprioriReport { rows, noise_terms, noise_scale, c_hat, boundary_independence })
}

/// Everything the harness needs for one run.
pub struct Fixture {
    pub grid: Arc<Grid>,
    pub universe: Arc<TreeUniverse>,
    pub noise: NoiseSpec,
    pub xi: Field,
}

impl Fixture {
    pub fn new(grid: Grid, universe: TreeUniverse, noise: NoiseSpec) -> Result<Self, Error> {
        let grid = Arc::new(grid);
        let xi = generate_noise(&grid, &noise)?;
        Ok(Fixture { grid, universe: Arc::new(universe), noise, xi })
    }

    pub fn lift(&self, spec: &LiftSpec) -> Result<(LocalProduct, serde_json::Value), Error> {
        build_lift(&self.xi, &self.universe, spec, &self.noise)
    }

    /// Seeded triples in the domain.
    pub fn triples(&self, n: usize, seed: u64) -> Vec<(usize, usize, usize)> {
        sample_triples(&self.grid, n, seed, 0.3)
    }

    /// Seeded base points well inside the domain.
    pub fn basepoints(&self, n: usize, seed: u64) -> Vec<usize> {
        sample_nodes(&self.grid, n, seed, (0.25, 1.0), 0.9)
    }
}
