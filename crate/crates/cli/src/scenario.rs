//! Scenario files: TOML with `format_version = 1`.
//!
//! Validation collects every problem it finds, each prefixed by the path of
//! the offending field, instead of stopping at the first one.

use railprice_core::market_power::{EdgeworthInstance, Segment};
use railprice_core::potential::{default_schedule, CostFamily};
use railprice_core::{
    AgentSpec, Capacity, Floor, Network, NetworkBuilder, QuadraticConsumer, QuadraticProducer, Quotas, Resource, SolverSettings,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Solve,
    Capacitated,
    MarketPower,
    Subsidy,
    Invest,
    Potential,
    Edgeworth,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Solve => "solve",
            Analysis::Capacitated => "capacitated",
            Analysis::MarketPower => "market-power",
            Analysis::Subsidy => "subsidy",
            Analysis::Invest => "invest",
            Analysis::Potential => "potential",
            Analysis::Edgeworth => "edgeworth",
        }
    }
}

/// Every problem found in a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioErrors(pub Vec<String>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, e) in self.0.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawCapacity {
    Value(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStation {
    name: String,
    #[serde(default)]
    handling_tariff: f64,
    capacity: Option<RawCapacity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: Option<String>,
    from: String,
    to: String,
    tariff: f64,
    capacity: Option<RawCapacity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    commodity: String,
    b: f64,
    a: f64,
    cap: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProducer {
    name: String,
    station: String,
    supply: Vec<RawCurve>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConsumer {
    name: String,
    station: String,
    demand: Vec<RawCurve>,
}

/// Solver defaults; command-line flags override `tolerance` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    /// Duality gap and residual threshold for a PASS.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Smoothed cost family for the potential analysis.
    pub family: CostFamily,
    /// Congestion gains γ to run the μ-continuation for.
    pub gammas: Vec<f64>,
    /// Decreasing μ values; defaults to 0.1 halving down to 1e-5.
    pub mu_schedule: Vec<f64>,
    /// μ used for the Frank–Wolfe, entropy and logit runs.
    pub mu: f64,
    pub eta: f64,
    pub logit_steps: usize,
    pub population: u64,
    /// Agreement required between recovered and exact surcharges.
    pub multiplier_tolerance: f64,
    /// Agreement required between smoothed and exact flows.
    pub flow_tolerance: f64,
    /// Agreement required between logit terminal shares and entropy shares.
    pub share_tolerance: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tolerance: 1e-6,
            max_iterations: 100_000,
            seed: 0,
            family: CostFamily::SteepPower,
            gammas: vec![1.0],
            mu_schedule: default_schedule(),
            mu: 0.1,
            eta: 0.1,
            logit_steps: 10_000,
            population: 1000,
            multiplier_tolerance: 1e-3,
            flow_tolerance: 1e-2,
            share_tolerance: 1e-3,
        }
    }
}

impl Settings {
    pub fn solver(&self) -> SolverSettings {
        SolverSettings { tolerance: self.tolerance, max_iterations: self.max_iterations }
    }

    fn check(&self, errors: &mut Vec<String>) {
        let mut range = |field: &str, v: f64, lo: f64, hi: f64| {
            if !(v > lo && v <= hi) {
                errors.push(format!("settings.{field}: must lie in ({lo}, {hi}], got {v}"));
            }
        };
        range("tolerance", self.tolerance, 0.0, 1e-2);
        range("mu", self.mu, 0.0, 10.0);
        range("eta", self.eta, 0.0, 1e6);
        range("multiplier_tolerance", self.multiplier_tolerance, 0.0, 1.0);
        range("flow_tolerance", self.flow_tolerance, 0.0, 1.0);
        range("share_tolerance", self.share_tolerance, 0.0, 1.0);
        for (n, g) in self.gammas.iter().enumerate() {
            range(&format!("gammas[{n}]"), *g, 0.0, 100.0);
        }
        if self.gammas.is_empty() {
            errors.push("settings.gammas: at least one value is required".into());
        }
        if self.max_iterations == 0 {
            errors.push("settings.max_iterations: must be at least 1".into());
        }
        if self.population == 0 {
            errors.push("settings.population: must be at least 1".into());
        }
        if self.mu_schedule.is_empty() || self.mu_schedule.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            errors.push("settings.mu_schedule: values must be positive and finite".into());
        } else if self.mu_schedule.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("settings.mu_schedule: must be strictly decreasing".into());
        } else if *self.mu_schedule.last().unwrap() > 1e-5 {
            errors.push(format!("settings.mu_schedule: must end at or below 1e-5, ends at {}", self.mu_schedule.last().unwrap()));
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveSection {
    #[serde(default)]
    markup: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketPowerSection {
    max_carriers: Option<u64>,
    markups: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFloor {
    consumer: String,
    producer: String,
    commodity: String,
    minimum: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuota {
    link: Option<String>,
    station: Option<String>,
    caps: HashMap<String, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsidySection {
    #[serde(default)]
    floors: Vec<RawFloor>,
    #[serde(default)]
    quotas: Vec<RawQuota>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChange {
    link: Option<String>,
    station: Option<String>,
    delta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvestSection {
    #[serde(default)]
    changes: Vec<RawChange>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PotentialSection {
    entropy: bool,
    logit: bool,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { entropy: true, logit: true }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeworthSection {
    cost_cases: Vec<Vec<f64>>,
    segments: Option<Vec<Segment>>,
    grid_max: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    format_version: u32,
    name: Option<String>,
    analysis: Analysis,
    #[serde(default)]
    settings: Settings,
    #[serde(default)]
    commodities: Vec<String>,
    #[serde(default)]
    stations: Vec<RawStation>,
    #[serde(default)]
    links: Vec<RawLink>,
    #[serde(default)]
    producers: Vec<RawProducer>,
    #[serde(default)]
    consumers: Vec<RawConsumer>,
    solve: Option<SolveSection>,
    market_power: Option<MarketPowerSection>,
    subsidy: Option<SubsidySection>,
    invest: Option<InvestSection>,
    potential: Option<PotentialSection>,
    edgeworth: Option<EdgeworthSection>,
}

#[derive(Debug, Clone)]
pub enum Request {
    Solve { markup: f64 },
    Capacitated,
    MarketPower { max_carriers: u64, markups: Option<Vec<f64>> },
    Subsidy { floors: Vec<Floor>, quotas: Option<Quotas> },
    Invest { changes: Vec<(Resource, f64)> },
    Potential { entropy: bool, logit: bool },
    Edgeworth { cases: Vec<EdgeworthInstance>, grid_max: Option<u32> },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub analysis: Analysis,
    pub settings: Settings,
    /// Absent only for Edgeworth scenarios, which need no network.
    pub network: Option<(Network, AgentSpec)>,
    pub request: Request,
    pub link_names: Vec<String>,
}

impl Scenario {
    /// Network and agents, or an error naming the analysis that needs them.
    pub fn market(&self) -> Result<(&Network, &AgentSpec), String> {
        self.network.as_ref().map(|(n, a)| (n, a)).ok_or_else(|| format!("{} needs a network", self.analysis.name()))
    }
}

fn parse_capacity(raw: &Option<RawCapacity>, path: &str, what: &str, errors: &mut Vec<String>) -> Capacity {
    match raw {
        None => Capacity::Unlimited,
        Some(RawCapacity::Text(s)) if s == "inf" => Capacity::Unlimited,
        Some(RawCapacity::Text(s)) => {
            errors.push(format!("{path}: capacity must be a number or \"inf\", got \"{s}\" ({what})"));
            Capacity::Unlimited
        }
        Some(RawCapacity::Value(v)) => {
            if !(v.is_finite() && *v > 0.0) {
                errors.push(format!("{path}: capacity must be positive or \"inf\", got {v} ({what})"));
            }
            Capacity::Finite(*v)
        }
    }
}

struct Names<'a> {
    stations: HashMap<&'a str, usize>,
    commodities: HashMap<&'a str, usize>,
    producers: HashMap<&'a str, usize>,
    consumers: HashMap<&'a str, usize>,
    links: Vec<(String, Option<&'a str>)>,
}

impl<'a> Names<'a> {
    fn lookup(map: &HashMap<&str, usize>, key: &str, path: &str, kind: &str, errors: &mut Vec<String>) -> Option<usize> {
        let hit = map.get(key).copied();
        if hit.is_none() {
            errors.push(format!("{path}: unknown {kind} \"{key}\""));
        }
        hit
    }

    /// A link by its name or as "FROM->TO" when that is unambiguous.
    fn link(&self, key: &str, path: &str, errors: &mut Vec<String>) -> Option<usize> {
        let by_name: Vec<usize> = self.links.iter().enumerate().filter(|(_, (_, n))| *n == Some(key)).map(|(l, _)| l).collect();
        let hits = if by_name.is_empty() {
            self.links.iter().enumerate().filter(|(_, (arrow, _))| arrow == key).map(|(l, _)| l).collect()
        } else {
            by_name
        };
        match hits.len() {
            1 => Some(hits[0]),
            0 => {
                errors.push(format!("{path}: unknown link \"{key}\""));
                None
            }
            _ => {
                errors.push(format!("{path}: link \"{key}\" is ambiguous, give the links names"));
                None
            }
        }
    }

    fn resource(&self, link: &Option<String>, station: &Option<String>, path: &str, errors: &mut Vec<String>) -> Option<Resource> {
        match (link, station) {
            (Some(l), None) => self.link(l, &format!("{path}.link"), errors).map(Resource::Link),
            (None, Some(s)) => Self::lookup(&self.stations, s, &format!("{path}.station"), "station", errors).map(Resource::Station),
            _ => {
                errors.push(format!("{path}: give exactly one of link or station"));
                None
            }
        }
    }
}

fn index_names<'a>(items: impl Iterator<Item = &'a str>, path: &str, errors: &mut Vec<String>) -> HashMap<&'a str, usize> {
    let mut map = HashMap::new();
    for (n, name) in items.enumerate() {
        if name.trim().is_empty() {
            errors.push(format!("{path}[{n}].name: must not be empty"));
        } else if map.insert(name, n).is_some() {
            errors.push(format!("{path}[{n}].name: duplicate name \"{name}\""));
        }
    }
    map
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioErrors> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioErrors(vec![e.message().trim().to_string()]))?;
    let mut errors = Vec::new();
    if raw.format_version != FORMAT_VERSION {
        errors.push(format!("format_version: unsupported version {} (expected {FORMAT_VERSION})", raw.format_version));
    }
    raw.settings.check(&mut errors);

    let names = Names {
        stations: index_names(raw.stations.iter().map(|s| s.name.as_str()), "stations", &mut errors),
        commodities: {
            let mut map = HashMap::new();
            for (n, c) in raw.commodities.iter().enumerate() {
                if c.trim().is_empty() || map.insert(c.as_str(), n).is_some() {
                    errors.push(format!("commodities[{n}]: names must be nonempty and unique, got \"{c}\""));
                }
            }
            map
        },
        producers: index_names(raw.producers.iter().map(|p| p.name.as_str()), "producers", &mut errors),
        consumers: index_names(raw.consumers.iter().map(|c| c.name.as_str()), "consumers", &mut errors),
        links: raw.links.iter().map(|l| (format!("{}->{}", l.from, l.to), l.name.as_deref())).collect(),
    };

    let needs_network = raw.analysis != Analysis::Edgeworth;
    let mut builder = NetworkBuilder::new();
    for (n, s) in raw.stations.iter().enumerate() {
        if !(s.handling_tariff.is_finite() && s.handling_tariff >= 0.0) {
            errors.push(format!("stations[{n}].handling_tariff: must be finite and nonnegative, got {} (station {})", s.handling_tariff, s.name));
        }
        let cap = parse_capacity(&s.capacity, &format!("stations[{n}].capacity"), &format!("station {}", s.name), &mut errors);
        builder.station(&s.name, s.handling_tariff, cap);
    }
    let mut link_names = Vec::new();
    for (n, l) in raw.links.iter().enumerate() {
        let label = l.name.clone().unwrap_or_else(|| format!("{}->{}", l.from, l.to));
        let from = Names::lookup(&names.stations, &l.from, &format!("links[{n}].from"), "station", &mut errors);
        let to = Names::lookup(&names.stations, &l.to, &format!("links[{n}].to"), "station", &mut errors);
        if !(l.tariff.is_finite() && l.tariff >= 0.0) {
            errors.push(format!("links[{n}].tariff: must be finite and nonnegative, got {} (link {label})", l.tariff));
        }
        let cap = parse_capacity(&l.capacity, &format!("links[{n}].capacity"), &format!("link {label}"), &mut errors);
        if from.is_some() && from == to {
            errors.push(format!("links[{n}]: link {label} starts and ends at the same station"));
        }
        builder.link(from.unwrap_or(0), to.unwrap_or(0), l.tariff, cap);
        link_names.push(label);
    }
    for c in &raw.commodities {
        builder.commodity(c);
    }
    let n_comm = raw.commodities.len();
    let mut producers = Vec::new();
    for (n, p) in raw.producers.iter().enumerate() {
        let st = Names::lookup(&names.stations, &p.station, &format!("producers[{n}].station"), "station", &mut errors);
        builder.producer(&p.name, st.unwrap_or(0));
        let mut row = vec![None; n_comm];
        for (m, c) in p.supply.iter().enumerate() {
            let path = format!("producers[{n}].supply[{m}]");
            let Some(k) = Names::lookup(&names.commodities, &c.commodity, &format!("{path}.commodity"), "commodity", &mut errors) else {
                continue;
            };
            match QuadraticProducer::new(c.b, c.a, c.cap) {
                Ok(g) => {
                    if row[k].replace(g).is_some() {
                        errors.push(format!("{path}.commodity: producer {} lists \"{}\" twice", p.name, c.commodity));
                    }
                }
                Err(e) => errors.push(format!("{path}: {e}")),
            }
        }
        producers.push(row);
    }
    let mut consumers = Vec::new();
    for (n, c) in raw.consumers.iter().enumerate() {
        let st = Names::lookup(&names.stations, &c.station, &format!("consumers[{n}].station"), "station", &mut errors);
        builder.consumer(&c.name, st.unwrap_or(0));
        let mut row = vec![None; n_comm];
        for (m, d) in c.demand.iter().enumerate() {
            let path = format!("consumers[{n}].demand[{m}]");
            let Some(k) = Names::lookup(&names.commodities, &d.commodity, &format!("{path}.commodity"), "commodity", &mut errors) else {
                continue;
            };
            match QuadraticConsumer::new(d.b, d.a, d.cap) {
                Ok(f) => {
                    if row[k].replace(f).is_some() {
                        errors.push(format!("{path}.commodity: consumer {} lists \"{}\" twice", c.name, d.commodity));
                    }
                }
                Err(e) => errors.push(format!("{path}: {e}")),
            }
        }
        consumers.push(row);
    }
    if needs_network {
        for (cond, msg) in [
            (raw.stations.is_empty(), "stations: at least one station is required"),
            (raw.commodities.is_empty(), "commodities: at least one commodity is required"),
            (raw.producers.is_empty(), "producers: at least one producer is required"),
            (raw.consumers.is_empty(), "consumers: at least one consumer is required"),
        ] {
            if cond {
                errors.push(msg.into());
            }
        }
    }

    let request = build_request(&raw, &names, &mut errors);
    let network = if needs_network && errors.is_empty() {
        match builder.build() {
            Ok(net) => match AgentSpec::new(&net, consumers, producers) {
                Ok(agents) => Some((net, agents)),
                Err(e) => {
                    errors.push(format!("agents: {e}"));
                    None
                }
            },
            Err(e) => {
                errors.push(format!("network: {e}"));
                None
            }
        }
    } else {
        None
    };
    if !errors.is_empty() {
        return Err(ScenarioErrors(errors));
    }
    Ok(Scenario {
        name: raw.name.clone().unwrap_or_else(|| raw.analysis.name().to_string()),
        analysis: raw.analysis,
        settings: raw.settings,
        network,
        request: request.expect("request is built when there are no errors"),
        link_names,
    })
}

fn build_request(raw: &RawScenario, names: &Names, errors: &mut Vec<String>) -> Option<Request> {
    let stray: Vec<&str> = [
        ("solve", raw.solve.is_some(), Analysis::Solve),
        ("market_power", raw.market_power.is_some(), Analysis::MarketPower),
        ("subsidy", raw.subsidy.is_some(), Analysis::Subsidy),
        ("invest", raw.invest.is_some(), Analysis::Invest),
        ("potential", raw.potential.is_some(), Analysis::Potential),
        ("edgeworth", raw.edgeworth.is_some(), Analysis::Edgeworth),
    ]
    .into_iter()
    .filter(|(_, present, a)| *present && *a != raw.analysis)
    .map(|(n, _, _)| n)
    .collect();
    for s in stray {
        errors.push(format!("{s}: section does not apply to analysis \"{}\"", raw.analysis.name()));
    }
    let n_before = errors.len();
    let req = match raw.analysis {
        Analysis::Solve => {
            let markup = raw.solve.as_ref().map_or(0.0, |s| s.markup);
            if !markup.is_finite() {
                errors.push(format!("solve.markup: must be finite, got {markup}"));
            }
            Request::Solve { markup }
        }
        Analysis::Capacitated => Request::Capacitated,
        Analysis::MarketPower => {
            let s = raw.market_power.as_ref();
            let max_carriers = s.and_then(|s| s.max_carriers).unwrap_or(50);
            if max_carriers == 0 {
                errors.push("market_power.max_carriers: must be at least 1".into());
            }
            let markups = s.and_then(|s| s.markups.clone());
            if let Some(m) = &markups {
                if m.is_empty() || m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    errors.push("market_power.markups: must be a nonempty list of nonnegative numbers".into());
                }
            }
            Request::MarketPower { max_carriers, markups }
        }
        Analysis::Subsidy => {
            let s = raw.subsidy.as_ref();
            let mut floors = Vec::new();
            for (n, f) in s.map_or(&[][..], |s| &s.floors).iter().enumerate() {
                let path = format!("subsidy.floors[{n}]");
                let i = Names::lookup(&names.consumers, &f.consumer, &format!("{path}.consumer"), "consumer", errors);
                let j = Names::lookup(&names.producers, &f.producer, &format!("{path}.producer"), "producer", errors);
                let k = Names::lookup(&names.commodities, &f.commodity, &format!("{path}.commodity"), "commodity", errors);
                if !(f.minimum.is_finite() && f.minimum >= 0.0) {
                    errors.push(format!("{path}.minimum: must be finite and nonnegative, got {}", f.minimum));
                }
                if let (Some(consumer), Some(producer), Some(commodity)) = (i, j, k) {
                    floors.push(Floor { consumer, producer, commodity, minimum: f.minimum });
                }
            }
            let raw_quotas = s.map_or(&[][..], |s| &s.quotas);
            let quotas = if raw_quotas.is_empty() {
                None
            } else {
                let mut resources = Vec::new();
                let mut caps = Vec::new();
                for (n, q) in raw_quotas.iter().enumerate() {
                    let path = format!("subsidy.quotas[{n}]");
                    let r = names.resource(&q.link, &q.station, &path, errors);
                    let mut row = vec![0.0; raw.commodities.len()];
                    let mut keys: Vec<&String> = q.caps.keys().collect();
                    keys.sort();
                    for c in keys {
                        let v = q.caps[c];
                        if let Some(k) = Names::lookup(&names.commodities, c, &format!("{path}.caps"), "commodity", errors) {
                            if !(v.is_finite() && v >= 0.0) {
                                errors.push(format!("{path}.caps.{c}: must be finite and nonnegative, got {v}"));
                            }
                            row[k] = v;
                        }
                    }
                    if let Some(r) = r {
                        resources.push(r);
                        caps.push(row);
                    }
                }
                if !floors.is_empty() {
                    errors.push("subsidy: give floors or quotas, not both".into());
                }
                Some(Quotas { resources, caps })
            };
            Request::Subsidy { floors, quotas }
        }
        Analysis::Invest => {
            let mut changes = Vec::new();
            for (n, c) in raw.invest.as_ref().map_or(&[][..], |s| &s.changes).iter().enumerate() {
                let path = format!("invest.changes[{n}]");
                if !c.delta.is_finite() {
                    errors.push(format!("{path}.delta: must be finite, got {}", c.delta));
                }
                if let Some(r) = names.resource(&c.link, &c.station, &path, errors) {
                    changes.push((r, c.delta));
                }
            }
            Request::Invest { changes }
        }
        Analysis::Potential => {
            let p = raw.potential.as_ref();
            Request::Potential { entropy: p.map_or(true, |p| p.entropy), logit: p.map_or(true, |p| p.logit) }
        }
        Analysis::Edgeworth => match &raw.edgeworth {
            None => {
                errors.push("edgeworth: section is required".into());
                Request::Edgeworth { cases: vec![], grid_max: None }
            }
            Some(e) => {
                let mut cases = Vec::new();
                if e.cost_cases.is_empty() {
                    errors.push("edgeworth.cost_cases: at least one case is required".into());
                }
                for (n, costs) in e.cost_cases.iter().enumerate() {
                    let path = format!("edgeworth.cost_cases[{n}]");
                    if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                        errors.push(format!("{path}: costs must be finite and nonnegative"));
                        continue;
                    }
                    let inst = match &e.segments {
                        Some(segments) => EdgeworthInstance { segments: segments.clone(), costs: costs.clone() },
                        None if costs.len() == 2 => EdgeworthInstance::two_wagon_types([costs[0], costs[1]]),
                        None => {
                            errors.push(format!("{path}: the built-in client groups need exactly two costs, got {}", costs.len()));
                            continue;
                        }
                    };
                    match inst.validate() {
                        Ok(()) => cases.push(inst),
                        Err(err) => errors.push(format!("{path}: {err}")),
                    }
                }
                Request::Edgeworth { cases, grid_max: e.grid_max }
            }
        },
    };
    (errors.len() == n_before).then_some(req)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q1: &str = r#"
format_version = 1
analysis = "solve"
commodities = ["grain"]

[[stations]]
name = "S"

[[stations]]
name = "T"

[[links]]
from = "S"
to = "T"
tariff = 2.0

[[producers]]
name = "P"
station = "S"
supply = [{ commodity = "grain", b = 2.0, a = 1.0, cap = 10.0 }]

[[consumers]]
name = "C"
station = "T"
demand = [{ commodity = "grain", b = 20.0, a = -1.0, cap = 10.0 }]
"#;

    #[test]
    fn desk_scenario_parses() {
        let s = parse_scenario(Q1).unwrap();
        assert_eq!(s.analysis, Analysis::Solve);
        let (net, _) = s.market().unwrap();
        assert_eq!(net.links().len(), 1);
        assert_eq!(s.link_names, vec!["S->T"]);
    }

    #[test]
    fn unknown_station_is_named_by_path() {
        let text = Q1.replacen("to = \"T\"", "to = \"Ω\"", 1);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.0, vec!["links[0].to: unknown station \"Ω\"".to_string()]);
    }

    #[test]
    fn negative_capacity_names_the_link() {
        let text = Q1.replacen("tariff = 2.0", "tariff = 2.0\ncapacity = -1.0", 1);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].starts_with("links[0].capacity") && err.0[0].contains("link S->T"), "{err}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = Q1
            .replacen("to = \"T\"", "to = \"X\"", 1)
            .replacen("station = \"S\"", "station = \"Y\"", 1)
            .replacen("format_version = 1", "format_version = 2", 1);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }
}
