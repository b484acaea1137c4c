//! `phi4`: enumeration, identity suites, scans and solver runs.
//!
//! Exit codes: 0 pass, 1 identity failure, 2 configuration error, 3 numerical abort.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use phi4_core::coeffs::classification_json;
use phi4_core::equation::{domain_nodes, solve_remainder, BoundaryData, RemainderTables, SolverConfig};
use phi4_core::field::{self as cfield, domain_probes, save_field};
use phi4_core::path::{self as cpath, sample_nodes};
use phi4_core::report::Report;
use phi4_core::suite::{self, Fixture};
use phi4_core::symtree::{enumerate_universe_with, parse_rational, EnumOptions, Tree, TreeSet, TreeUniverse};
use phi4_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "phi4", version, about = "Tree algebra and remainder-equation checks for the parabolic Phi^4 model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every subcommand.
#[derive(Args, Clone, Default)]
pub struct Common {
    /// Config file (key = value text or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise regularity parameter as p/q.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// default | coarse | fine | h,k,S | d,S,T0,T1,h
    #[arg(long)]
    grid: Option<String>,
    /// zero | smooth[:A] | gaussian[:seed[:eps]]
    #[arg(long)]
    noise: Option<String>,
    /// multiplicative | phi43[:cw:cs] | counterterm:FILE | custom:FILE
    #[arg(long)]
    lift: Option<String>,
    /// Directory for the JSON report and any saved fields.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a tolerance, as name=value. Repeatable.
    #[arg(long = "tol")]
    tol: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampled points, triples or pairs.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enumerate the tree universe for one delta.
    Enumerate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Keep going when a tree other than I(1)^3 has integer order.
        #[arg(long)]
        allow_integer_orders: bool,
        /// Add the U^tau classification of every tree in N.
        #[arg(long)]
        classify: bool,
    },
    /// Run identity suites.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SuiteName::All)]
        suite: SuiteName,
        /// Random counterterm maps for the algebra suite.
        #[arg(long, default_value_t = 5)]
        maps: usize,
        #[arg(long)]
        allow_integer_orders: bool,
    },
    /// Solve the remainder equation once.
    Solve {
        #[command(flatten)]
        common: Common,
        /// zero | const:c | trace:seed:amplitude
        #[arg(long, default_value = "trace:1:1")]
        boundary: String,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
    },
    /// Order-bound or a priori scans.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: ScanKind,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        /// Largest number of noise leaves in the order scan.
        #[arg(long, default_value_t = 3)]
        max_xi: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SuiteName {
    Algebra,
    Path,
    Products,
    Onezero,
    Kernel,
    Reconstruction,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanKind {
    Order,
    Apriori,
}

/// Dyadic scales used by the order, reconstruction and a priori scans.
fn scan_scales() -> Vec<f64> {
    suite::dyadic(1, 4)
}

const BASEPOINTS: usize = 24;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(2, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Enumerate { common, format, allow_integer_orders, classify } => enumerate(&common, format, allow_integer_orders, classify),
        Cmd::Verify { common, suite, maps, allow_integer_orders } => verify(&common, suite, maps, allow_integer_orders),
        Cmd::Solve { common, boundary, radii } => solve(&common, &boundary, radii),
        Cmd::Scan { common, kind, radii, max_xi } => scan(&common, kind, radii, max_xi),
    }
}

/// Prints the document and, with `--out`, writes it to `<out>/<name>.json`.
fn emit(cfg_out: Option<&PathBuf>, name: &str, doc: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    print_out(&format!("{text}\n"))?;
    if let Some(dir) = cfg_out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join(format!("{name}.json")), text + "\n")?;
    }
    Ok(())
}

/// Writes to stdout, treating a closed pipe as success.
fn print_out(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn report_json(rep: &Report) -> Value {
    let mut by_identity: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &rep.records {
        let e = by_identity.entry(&r.identity).or_default();
        e.0 += 1;
        if r.status == phi4_core::report::Status::Fail {
            e.1 += 1;
        }
    }
    let identities: BTreeMap<&str, Value> =
        by_identity.into_iter().map(|(k, (n, f))| (k, json!({"checked": n, "failed": f}))).collect();
    json!({
        "passed": rep.passed(),
        "checked": rep.len(),
        "max_residual": rep.max_residual,
        "identities": identities,
        "failures": rep.failures().collect::<Vec<_>>(),
    })
}

fn universe(common: &Common, allow_integer_orders: bool) -> anyhow::Result<TreeUniverse> {
    // Only delta and dim matter here, so the grid and noise flags are not validated.
    let file = match &common.config {
        Some(p) => config::read_file(p)?,
        None => BTreeMap::new(),
    };
    let delta_s = common.delta.clone().or_else(|| file.get("delta").cloned()).unwrap_or_else(|| "3/10".into());
    let dim = match common.dim {
        Some(d) => d,
        None => file.get("dim").map_or(Ok(1), |s| s.parse()).map_err(|_| Error::Config("dim must be a positive integer".into()))?,
    };
    let delta = parse_rational(&delta_s)?;
    let u = enumerate_universe_with(delta, dim, EnumOptions { allow_integer_orders, ..Default::default() })?;
    Ok(u)
}

fn enumerate(common: &Common, format: Format, allow: bool, classify: bool) -> anyhow::Result<bool> {
    let u = universe(common, allow)?;
    let mut doc = u.to_json();
    if classify {
        doc["classification"] = classification_json(&u);
    }
    match format {
        Format::Json => emit(common.out.as_ref(), "universe", &doc)?,
        Format::Text => {
            let mut text = format!("delta = {}, d = {}\n", u.delta, u.dim);
            for s in TreeSet::ALL {
                let trees = u.set(s);
                text += &format!("{} ({})\n", s.name(), trees.len());
                for t in trees {
                    text += &format!("  {:>8}  {}\n", u.order(*t).to_string(), t);
                }
            }
            print_out(&text)?;
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("universe.txt"), text)?;
            }
        }
    }
    Ok(true)
}

fn fixture(cfg: &RunConfig) -> anyhow::Result<Fixture> {
    let u = phi4_core::symtree::enumerate_universe(cfg.delta, cfg.dim)?;
    Ok(Fixture::new(cfg.grid.clone(), u, cfg.noise.clone())?)
}

fn verify(common: &Common, which: SuiteName, maps: usize, allow: bool) -> anyhow::Result<bool> {
    use SuiteName::*;
    if which == Algebra {
        let u = universe(common, allow)?;
        let seed = common.seed.unwrap_or(1);
        let rep = suite::algebra_suite(&u, maps, seed);
        let mut doc = json!({"suite": "algebra", "delta": u.delta.to_string(), "dim": u.dim, "maps": maps, "seed": seed});
        doc["algebra"] = report_json(&rep);
        emit(common.out.as_ref(), "verify-algebra", &doc)?;
        return Ok(rep.passed());
    }
    let cfg = RunConfig::resolve(common)?;
    let mut doc = json!({"suite": format!("{}", suite_name(which)), "config": cfg.to_json()});
    let mut ok = true;
    if which == All {
        let rep = suite::algebra_suite(&phi4_core::symtree::enumerate_universe(cfg.delta, cfg.dim)?, maps, cfg.seed);
        ok &= rep.passed();
        doc["algebra"] = report_json(&rep);
    }
    let fx = fixture(&cfg)?;
    let (lp, manifest) = fx.lift(&cfg.lift)?;
    doc["lift"] = manifest;
    let path = cpath::Path::new(&lp)?;
    let v = suite::smooth_profile(&fx.grid);
    if matches!(which, Path | All) {
        let rep = suite::path_suite(&path, &fx.triples(cfg.samples_or(200), cfg.seed), &cfg.tol)?;
        ok &= rep.passed();
        doc["path"] = report_json(&rep);
    }
    if matches!(which, Products | All) {
        let probes = sample_nodes(&fx.grid, cfg.samples_or(100), cfg.seed, (0.1, 1.0), 0.9);
        let rep = suite::products_suite(&path, &v, &probes, &cfg.tol)?;
        ok &= rep.passed();
        doc["products"] = report_json(&rep);
    }
    if matches!(which, Onezero | All) {
        let pairs: Vec<(usize, usize)> = fx.triples(cfg.samples_or(100), cfg.seed + 1).into_iter().map(|(_, y, x)| (y, x)).collect();
        let (rep, out) = suite::onezero_suite(&path, &v, &pairs, cfg.tol.onezero)?;
        ok &= rep.passed();
        doc["onezero"] = report_json(&rep);
        doc["onezero"]["outcome"] = serde_json::to_value(&out)?;
    }
    if matches!(which, Kernel | All) {
        let mut f = v.clone();
        for (a, b) in f.data.iter_mut().zip(&fx.xi.data) {
            *a += b;
        }
        let scales: Vec<f64> = [0.125, 0.25, 0.5].into_iter().filter(|&l| cfield::Kernel::default_depth(&fx.grid, l).is_ok_and(|d| d >= 3)).collect();
        if scales.is_empty() {
            return Err(Error::Config("grid too coarse for semigroup depth 3".into()).into());
        }
        let probes = domain_probes(&fx.grid, cfg.samples_or(200));
        let rep = suite::kernel_suite(&f, &scales, 3, &probes, &cfg.tol)?;
        ok &= rep.passed();
        doc["kernel"] = report_json(&rep);
    }
    if matches!(which, Reconstruction | All) {
        let w = fx.universe.set(TreeSet::W)[0];
        let bp = fx.basepoints(BASEPOINTS, cfg.seed);
        let (rep, out) = suite::reconstruction_suite(&path, &v, (w, w), &bp, &scan_scales(), &cfg.tol)?;
        ok &= rep.passed();
        doc["reconstruction"] = report_json(&rep);
        doc["reconstruction"]["outcome"] = serde_json::to_value(&out)?;
    }
    doc["passed"] = json!(ok);
    emit(cfg.out.as_ref(), &format!("verify-{}", suite_name(which)), &doc)?;
    Ok(ok)
}

fn suite_name(s: SuiteName) -> &'static str {
    match s {
        SuiteName::Algebra => "algebra",
        SuiteName::Path => "path",
        SuiteName::Products => "products",
        SuiteName::Onezero => "onezero",
        SuiteName::Kernel => "kernel",
        SuiteName::Reconstruction => "reconstruction",
        SuiteName::All => "all",
    }
}

fn solve(common: &Common, boundary: &str, radii: Option<Vec<f64>>) -> anyhow::Result<bool> {
    let cfg = RunConfig::resolve(common)?;
    let data = BoundaryData::parse(boundary)?;
    let fx = fixture(&cfg)?;
    let (lp, manifest) = fx.lift(&cfg.lift)?;
    let path = cpath::Path::new(&lp)?;
    let tables = RemainderTables::build(&path, &domain_nodes(&fx.grid))?;
    let mut sc = SolverConfig::default();
    if let Some(r) = radii {
        sc.radii = r;
    }
    let (v, rec) = solve_remainder(&tables, &fx.grid, &data, &sc)?;
    let doc = json!({"config": cfg.to_json(), "lift": manifest, "run": rec});
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        save_field(&v, &dir.join("remainder"), json!({"boundary": boundary}))?;
    }
    emit(cfg.out.as_ref(), "solve", &doc)?;
    Ok(true)
}

fn scan(common: &Common, kind: ScanKind, radii: Option<Vec<f64>>, max_xi: u32) -> anyhow::Result<bool> {
    let cfg = RunConfig::resolve(common)?;
    let fx = fixture(&cfg)?;
    let (lp, manifest) = fx.lift(&cfg.lift)?;
    let path = cpath::Path::new(&lp)?;
    let bp = fx.basepoints(cfg.samples_or(BASEPOINTS), cfg.seed);
    let mut doc = json!({"config": cfg.to_json(), "lift": manifest});
    let ok = match kind {
        ScanKind::Order => {
            let trees: Vec<Tree> = suite::order_trees(&fx.universe, max_xi);
            let (rep, rows) = suite::order_suite(&path, &trees, &bp, &scan_scales(), cfg.tol.order_margin)?;
            doc["kind"] = json!("order");
            doc["rows"] = serde_json::to_value(&rows)?;
            doc["report"] = report_json(&rep);
            rep.passed()
        }
        ScanKind::Apriori => {
            let radii = radii.unwrap_or_else(|| SolverConfig::default().radii);
            let rep = suite::apriori_scan(&path, &suite::default_traces(), &radii, &bp, &scan_scales())?;
            let ok = rep.boundary_independence.is_some_and(|b| b.2 < cfg.tol.boundary);
            doc["kind"] = json!("apriori");
            doc["table"] = apriori_table(&rep, &radii);
            doc["report"] = serde_json::to_value(&rep)?;
            doc["boundary_independent"] = json!(ok);
            ok
        }
    };
    emit(cfg.out.as_ref(), &format!("scan-{}", match kind { ScanKind::Order => "order", ScanKind::Apriori => "apriori" }), &doc)?;
    Ok(ok)
}

/// Rows `R, ‖v‖_{D_R}` per trace, ready for plotting.
fn apriori_table(rep: &suite::AprioriReport, radii: &[f64]) -> Value {
    let rows: Vec<Value> = rep
        .rows
        .iter()
        .map(|r| {
            let norms: Vec<Value> = radii
                .iter()
                .map(|&rad| r.norms.iter().find(|n| n.0 == rad).map_or(Value::Null, |n| json!(n.1)))
                .collect();
            json!({"boundary": r.boundary, "norms": norms})
        })
        .collect();
    json!({"radii": radii, "rows": rows, "c_hat": rep.c_hat, "noise_scale": rep.noise_scale})
}
