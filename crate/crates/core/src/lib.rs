//! Tree algebra, local products and remainder-equation numerics for the
//! parabolic `Φ⁴` model with a regularised noise of order `-3 + δ`.
//!
//! The symbolic layer ([`symtree`], [`coalgebra`], [`coeffs`]) works in exact
//! rational arithmetic. Fields, lifts and paths ([`field`], [`lift`], [`path`])
//! are generic over a floating-point [`Scalar`]; the `*64` aliases below are
//! what [`equation`] and the harness use.

pub mod coalgebra;
pub mod coeffs;
pub mod equation;
pub mod field;
pub mod lift;
pub mod path;
pub mod report;
pub mod suite;
pub mod symtree;

use std::fmt::Debug;

/// Exact rationals for `δ`, orders and symbolic coefficients.
pub type Rational = num_rational::Ratio<i64>;

/// Floating-point scalar used by the numerical layer.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssign + Debug + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Field64 = field::Field<f64>;
pub type LocalProduct64 = lift::LocalProduct<f64>;
pub type Path64<'a> = path::Path<'a, f64>;

pub use symtree::{Tree, TreeSet, TreeUniverse};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("inadmissible delta {delta}: {witness} has integer order {order}")]
    Inadmissible { delta: String, witness: String, order: String },
    #[error("enumeration for delta {delta} exceeds the cap of {cap} trees")]
    Cap { cap: usize, delta: String },
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the harness: 2 for configuration problems, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
