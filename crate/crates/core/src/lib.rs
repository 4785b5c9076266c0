//! Freight equilibrium engine: competitive and capacity-constrained
//! equilibria of a rail network with shadow tariffs, market-power
//! benchmarks, tariff-design instruments and a path-flow potential solver.

pub mod agents;
pub mod capacitated;
pub mod equilibrium;
pub mod error;
pub mod market_power;
pub mod network;
pub mod policy;
pub mod potential;
pub mod qp;
mod transport;

pub use agents::{AgentSpec, Cost, QuadraticConsumer, QuadraticProducer, Revenue};
pub use capacitated::{
    certify_routes, equilibrium_report, solve_capacitated, CapacitatedSolution, Floor, FloorOutcome, Quotas, RouteCertificate,
};
pub use equilibrium::{solve_perfect, verify_equilibrium, ConditionResiduals, EquilibriumSolution, SolverSettings, Tariffs};
pub use error::{AgentError, MarketError, NetworkError, PotentialError, SolveError};
pub use network::{
    enumerate_routes, expand_graph, min_cost_route, route_cost, Capacity, ExpandedGraph, Network, NetworkBuilder, Resource,
    Route, Surcharges,
};
