use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("unknown station index {0}")]
    UnknownStation(usize),
    #[error("unknown link index {0}")]
    UnknownLink(usize),
    #[error("unknown producer index {0}")]
    UnknownProducer(usize),
    #[error("unknown consumer index {0}")]
    UnknownConsumer(usize),
    #[error("{what}: tariff must be finite and nonnegative, got {value}")]
    BadTariff { what: String, value: f64 },
    #[error("{what}: capacity must be positive or unlimited, got {value}")]
    BadCapacity { what: String, value: f64 },
    #[error("link {0} starts and ends at the same station")]
    SelfLoop(usize),
    #[error("route is broken: {0}")]
    BrokenRoute(String),
    #[error("no route from producer {producer} to consumer {consumer}")]
    Unreachable { producer: usize, consumer: usize },
    #[error("agents cannot reach the other side: producers {producers:?}, consumers {consumers:?}")]
    Disconnected { producers: Vec<String>, consumers: Vec<String> },
    #[error("network declares no commodities")]
    NoCommodities,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("{who}: {reason}")]
    Invalid { who: String, reason: String },
    #[error("agent table has {got} {side} entries, network has {expected}")]
    Shape { side: &'static str, got: usize, expected: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Agents(#[from] AgentError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("floors are infeasible: {0}")]
    InfeasibleFloors(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("empty tariff grid")]
    EmptyGrid,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("load {load} is outside the domain of the logarithmic cost (capacity {capacity})")]
    Domain { load: f64, capacity: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{0} has finite capacity but zero base tariff, which the smoothed costs cannot price")]
    ZeroBaseTariff(String),
    #[error("continuation failed at mu = {mu:.3e}: residual {residual:.3e}")]
    Continuation { mu: f64, residual: f64, trace: Vec<(f64, f64)> },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Agents(#[from] AgentError),
}
