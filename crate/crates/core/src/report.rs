//! Verification records shared by the symbolic and numerical checks.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// One checked instance of an identity.
#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub identity: String,
    pub tree: String,
    pub status: Status,
    pub lhs: String,
    pub rhs: String,
}

/// Outcome of a scan over many instances of one or more identities.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub records: Vec<Record>,
    /// Largest residual seen, for numerical scans.
    pub max_residual: f64,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, identity: &str, tree: impl ToString, ok: bool, lhs: impl ToString, rhs: impl ToString) {
        self.records.push(Record {
            identity: identity.to_string(),
            tree: tree.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        });
    }

    /// Records a numerical comparison against a tolerance.
    pub fn push_residual(&mut self, identity: &str, tree: impl ToString, lhs: f64, rhs: f64, residual: f64, tol: f64) {
        if residual > self.max_residual || residual.is_nan() {
            self.max_residual = residual;
        }
        let ok = residual <= tol;
        self.push(identity, tree, ok, format!("{lhs:.17e}"), format!("{rhs:.17e}"));
    }

    pub fn merge(&mut self, other: Report) {
        self.max_residual = self.max_residual.max(other.max_residual);
        self.records.extend(other.records);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.status == Status::Fail)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none() && !self.max_residual.is_nan()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// `|a - b|` relative to the size of the terms that produced them.
pub fn relative_residual(a: f64, b: f64, scale: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / scale.max(a.abs()).max(b.abs()).max(f64::MIN_POSITIVE)
}
