use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the function it was passed to.
    #[error("{what}: argument {value} outside domain ({expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// The integrand produced a non-finite value at a quadrature node.
    #[error("integrand returned {value} at node {node}")]
    Numerical { node: f64, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A search found no admissible value.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The closed loop does not track the reference even without packet loss.
    #[error(
        "closed loop unstable without packet loss: max error {max_error} m exceeds {threshold} m"
    )]
    UnstableLoop { max_error: f64, threshold: f64 },

    /// Not a single resource element is left for a vehicle.
    #[error("insufficient resources: {pool} resource elements shared by {users} vehicles")]
    InsufficientResources { pool: u64, users: u64 },

    /// The payload does not fit the block at code rate at most one.
    #[error("rate above 1: {payload_bits} bits in a block of {blocklength} channel uses")]
    RateAboveOne { payload_bits: u64, blocklength: u64 },
}

pub(crate) fn domain(what: &'static str, value: f64, expected: &'static str) -> Error {
    Error::Domain {
        what,
        value,
        expected,
    }
}
