use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),
    #[error("tabulated fundamental solutions invalid: {0}")]
    TabulationInvalid(String),
    #[error("ODE integration failed: {0}")]
    IntegrationFailure(String),
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),
    #[error("ordering violated: need y <= x <= z, got y={y}, x={x}, z={z}")]
    OrderingViolated { y: f64, x: f64, z: f64 },
    #[error("scale is not strictly increasing near x={at}")]
    NonMonotoneScale { at: f64 },
    #[error("{value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("syntax error at {pos}: expected {}", expected.join(" or "))]
    Syntax { pos: usize, expected: Vec<String> },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("`{function}` takes {want} argument(s), got {got}")]
    ArityMismatch {
        function: String,
        got: usize,
        want: usize,
    },
    #[error("`{function}` undefined at argument {argument}")]
    EvalDomain { function: String, argument: f64 },
    #[error("growth violation: {which} = {value} > 0")]
    GrowthViolation { which: String, value: f64 },
    #[error("anchor value {value} below the limit {limit} of the function at that end")]
    AnchorBelowF { value: f64, limit: f64 },
    #[error("obstacles are not stuck together at the ends (gaps {left}, {right}); supply w0 or use the classification path")]
    EndsNotAnchored { left: f64, right: f64 },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("grid of size {n} exceeds brute-force limit {max}")]
    GridTooLarge { n: usize, max: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no finite value: {0}")]
    NoFiniteValue(String),
    #[error("G > H at x={x} (G={g}, H={h})")]
    ObstacleOrderViolation { x: f64, g: f64, h: f64 },
    #[error("Monte Carlo budget exceeded: {requested:.3e} steps > {budget:.3e}")]
    BudgetExceeded { requested: f64, budget: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
