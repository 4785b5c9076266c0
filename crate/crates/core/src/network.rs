//! Rail network model: stations, links, agent attachment points, routes and
//! the expanded graph used by the path-flow solvers.

use crate::error::NetworkError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;

/// Throughput limit of a link or station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Unlimited,
}

impl Capacity {
    pub fn finite(self) -> Option<f64> {
        match self {
            Capacity::Finite(v) => Some(v),
            Capacity::Unlimited => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Capacity::Finite(_))
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Capacity::Finite(v) => s.serialize_f64(*v),
            Capacity::Unlimited => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Capacity::Finite(v)),
            Raw::Text(t) if t == "inf" || t == "unlimited" => Ok(Capacity::Unlimited),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "capacity must be a number or \"inf\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub name: String,
    pub handling_tariff: f64,
    pub capacity: Capacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub tariff: f64,
    pub capacity: Capacity,
}

/// A producer or consumer and the station it ships from or receives at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub name: String,
    pub station: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    stations: Vec<Station>,
    links: Vec<Link>,
    producers: Vec<Terminal>,
    consumers: Vec<Terminal>,
    commodities: Vec<String>,
}

/// A capacitated resource of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    Link(usize),
    Station(usize),
}

fn check_tariff(what: impl Fn() -> String, v: f64) -> Result<(), NetworkError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(NetworkError::BadTariff { what: what(), value: v })
    }
}

fn check_capacity(what: impl Fn() -> String, c: Capacity) -> Result<(), NetworkError> {
    match c {
        Capacity::Finite(v) if !(v.is_finite() && v > 0.0) => Err(NetworkError::BadCapacity { what: what(), value: v }),
        _ => Ok(()),
    }
}

impl Network {
    pub fn new(
        stations: Vec<Station>,
        links: Vec<Link>,
        producers: Vec<Terminal>,
        consumers: Vec<Terminal>,
        commodities: Vec<String>,
    ) -> Result<Self, NetworkError> {
        if commodities.is_empty() {
            return Err(NetworkError::NoCommodities);
        }
        for s in &stations {
            check_tariff(|| format!("station {}", s.name), s.handling_tariff)?;
            check_capacity(|| format!("station {}", s.name), s.capacity)?;
        }
        for (l, link) in links.iter().enumerate() {
            for end in [link.from, link.to] {
                if end >= stations.len() {
                    return Err(NetworkError::UnknownStation(end));
                }
            }
            if link.from == link.to {
                return Err(NetworkError::SelfLoop(l));
            }
            check_tariff(|| format!("link {l}"), link.tariff)?;
            check_capacity(|| format!("link {l}"), link.capacity)?;
        }
        for t in producers.iter().chain(&consumers) {
            if t.station >= stations.len() {
                return Err(NetworkError::UnknownStation(t.station));
            }
        }
        Ok(Network { stations, links, producers, consumers, commodities })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }
    pub fn links(&self) -> &[Link] {
        &self.links
    }
    pub fn producers(&self) -> &[Terminal] {
        &self.producers
    }
    pub fn consumers(&self) -> &[Terminal] {
        &self.consumers
    }
    pub fn commodities(&self) -> &[String] {
        &self.commodities
    }
    pub fn n_commodities(&self) -> usize {
        self.commodities.len()
    }

    pub fn station_index(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.name == name)
    }

    pub fn capacity(&self, r: Resource) -> Capacity {
        match r {
            Resource::Link(l) => self.links[l].capacity,
            Resource::Station(s) => self.stations[s].capacity,
        }
    }

    pub fn base_tariff(&self, r: Resource) -> f64 {
        match r {
            Resource::Link(l) => self.links[l].tariff,
            Resource::Station(s) => self.stations[s].handling_tariff,
        }
    }

    /// Links and stations with finite capacity, links first.
    pub fn capacitated_resources(&self) -> Vec<Resource> {
        let links = (0..self.links.len()).map(Resource::Link);
        let stations = (0..self.stations.len()).map(Resource::Station);
        links.chain(stations).filter(|r| self.capacity(*r).is_finite()).collect()
    }

    /// Copy with one capacity replaced.
    pub fn with_capacity(&self, r: Resource, c: Capacity) -> Result<Network, NetworkError> {
        let mut net = self.clone();
        match r {
            Resource::Link(l) => net.links.get_mut(l).ok_or(NetworkError::UnknownLink(l))?.capacity = c,
            Resource::Station(s) => net.stations.get_mut(s).ok_or(NetworkError::UnknownStation(s))?.capacity = c,
        }
        check_capacity(|| format!("{r:?}"), c)?;
        Ok(net)
    }

    fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.stations.len()];
        for (l, link) in self.links.iter().enumerate() {
            out[link.from].push(l);
        }
        out
    }
}

/// Incremental constructor, convenient for tests and programmatic instances.
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    stations: Vec<Station>,
    links: Vec<Link>,
    producers: Vec<Terminal>,
    consumers: Vec<Terminal>,
    commodities: Vec<String>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn station(&mut self, name: &str, handling_tariff: f64, capacity: Capacity) -> usize {
        self.stations.push(Station { name: name.into(), handling_tariff, capacity });
        self.stations.len() - 1
    }
    pub fn link(&mut self, from: usize, to: usize, tariff: f64, capacity: Capacity) -> usize {
        self.links.push(Link { from, to, tariff, capacity });
        self.links.len() - 1
    }
    pub fn producer(&mut self, name: &str, station: usize) -> usize {
        self.producers.push(Terminal { name: name.into(), station });
        self.producers.len() - 1
    }
    pub fn consumer(&mut self, name: &str, station: usize) -> usize {
        self.consumers.push(Terminal { name: name.into(), station });
        self.consumers.len() - 1
    }
    pub fn commodity(&mut self, name: &str) -> usize {
        self.commodities.push(name.into());
        self.commodities.len() - 1
    }
    pub fn build(self) -> Result<Network, NetworkError> {
        Network::new(self.stations, self.links, self.producers, self.consumers, self.commodities)
    }
}

/// A simple path from a producer's station to a consumer's station.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub producer: usize,
    pub consumer: usize,
    pub links: Vec<usize>,
    pub stations: Vec<usize>,
}

impl Route {
    pub fn new(net: &Network, producer: usize, consumer: usize, links: Vec<usize>) -> Result<Route, NetworkError> {
        let origin = net.producers.get(producer).ok_or(NetworkError::UnknownProducer(producer))?.station;
        let dest = net.consumers.get(consumer).ok_or(NetworkError::UnknownConsumer(consumer))?.station;
        let mut stations = vec![origin];
        for &l in &links {
            let link = net.links.get(l).ok_or(NetworkError::UnknownLink(l))?;
            let here = *stations.last().unwrap();
            if link.from != here {
                return Err(NetworkError::BrokenRoute(format!("link {l} does not start at station {here}")));
            }
            if stations.contains(&link.to) {
                return Err(NetworkError::BrokenRoute(format!("station {} visited twice", link.to)));
            }
            stations.push(link.to);
        }
        if *stations.last().unwrap() != dest {
            return Err(NetworkError::BrokenRoute(format!("route ends away from consumer {consumer}")));
        }
        Ok(Route { producer, consumer, links, stations })
    }

    pub fn resources(&self) -> impl Iterator<Item = Resource> + '_ {
        self.links.iter().map(|&l| Resource::Link(l)).chain(self.stations.iter().map(|&s| Resource::Station(s)))
    }
}

/// Per-resource surcharges added on top of base tariffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surcharges {
    pub links: Vec<f64>,
    pub stations: Vec<f64>,
}

impl Surcharges {
    pub fn zero(net: &Network) -> Self {
        Surcharges { links: vec![0.0; net.links.len()], stations: vec![0.0; net.stations.len()] }
    }

    pub fn get(&self, r: Resource) -> f64 {
        match r {
            Resource::Link(l) => self.links[l],
            Resource::Station(s) => self.stations[s],
        }
    }

    pub fn set(&mut self, r: Resource, v: f64) {
        match r {
            Resource::Link(l) => self.links[l] = v,
            Resource::Station(s) => self.stations[s] = v,
        }
    }
}

/// Base tariffs plus surcharges summed along the route.
pub fn route_cost(net: &Network, route: &Route, shadow: &Surcharges) -> Result<f64, NetworkError> {
    let mut total = 0.0;
    for &l in &route.links {
        let link = net.links.get(l).ok_or(NetworkError::UnknownLink(l))?;
        total += link.tariff + shadow.links.get(l).copied().unwrap_or(0.0);
    }
    for &s in &route.stations {
        let st = net.stations.get(s).ok_or(NetworkError::UnknownStation(s))?;
        total += st.handling_tariff + shadow.stations.get(s).copied().unwrap_or(0.0);
    }
    Ok(total)
}

fn tie_eps(a: f64, b: f64) -> f64 {
    1e-12 * (1.0 + a.abs().max(b.abs()))
}

#[derive(Clone)]
struct Label {
    cost: f64,
    stations: Vec<usize>,
    links: Vec<usize>,
}

impl Label {
    fn cmp(&self, other: &Label) -> Ordering {
        if (self.cost - other.cost).abs() > tie_eps(self.cost, other.cost) {
            return self.cost.partial_cmp(&other.cost).unwrap_or(Ordering::Equal);
        }
        self.stations.cmp(&other.stations).then_with(|| self.links.cmp(&other.links))
    }
}

/// Cheapest simple route at surcharged costs; ties go to the
/// lexicographically smallest station sequence, then link sequence.
pub fn min_cost_route(net: &Network, producer: usize, consumer: usize, shadow: &Surcharges) -> Result<Route, NetworkError> {
    let origin = net.producers.get(producer).ok_or(NetworkError::UnknownProducer(producer))?.station;
    let dest = net.consumers.get(consumer).ok_or(NetworkError::UnknownConsumer(consumer))?.station;
    let n = net.stations.len();
    let station_cost = |s: usize| net.stations[s].handling_tariff + shadow.stations.get(s).copied().unwrap_or(0.0);
    let out = net.outgoing();
    let mut best: Vec<Option<Label>> = vec![None; n];
    let mut done = vec![false; n];
    best[origin] = Some(Label { cost: station_cost(origin), stations: vec![origin], links: vec![] });
    loop {
        let mut pick: Option<usize> = None;
        for v in 0..n {
            if done[v] {
                continue;
            }
            if let Some(lv) = &best[v] {
                match pick {
                    None => pick = Some(v),
                    Some(u) => {
                        if lv.cmp(best[u].as_ref().unwrap()) == Ordering::Less {
                            pick = Some(v)
                        }
                    }
                }
            }
        }
        let Some(u) = pick else { break };
        done[u] = true;
        if u == dest {
            break;
        }
        let lu = best[u].clone().unwrap();
        for &l in &out[u] {
            let link = &net.links[l];
            let v = link.to;
            if done[v] || lu.stations.contains(&v) {
                continue;
            }
            let mut cand = lu.clone();
            cand.cost += link.tariff + shadow.links.get(l).copied().unwrap_or(0.0) + station_cost(v);
            cand.stations.push(v);
            cand.links.push(l);
            let better = match &best[v] {
                None => true,
                Some(cur) => cand.cmp(cur) == Ordering::Less,
            };
            if better {
                best[v] = Some(cand);
            }
        }
    }
    match best[dest].take() {
        Some(l) if done[dest] => Ok(Route { producer, consumer, links: l.links, stations: l.stations }),
        _ => Err(NetworkError::Unreachable { producer, consumer }),
    }
}

/// Every simple route from producer to consumer, in lexicographic link order.
pub fn enumerate_routes(net: &Network, producer: usize, consumer: usize) -> Result<Vec<Route>, NetworkError> {
    let origin = net.producers.get(producer).ok_or(NetworkError::UnknownProducer(producer))?.station;
    let dest = net.consumers.get(consumer).ok_or(NetworkError::UnknownConsumer(consumer))?.station;
    let out = net.outgoing();
    let mut routes = Vec::new();
    let mut stations = vec![origin];
    let mut links = Vec::new();
    fn dfs(
        net: &Network,
        out: &[Vec<usize>],
        dest: usize,
        stations: &mut Vec<usize>,
        links: &mut Vec<usize>,
        found: &mut Vec<(Vec<usize>, Vec<usize>)>,
    ) {
        let here = *stations.last().unwrap();
        if here == dest {
            found.push((stations.clone(), links.clone()));
            return;
        }
        for &l in &out[here] {
            let next = net.links[l].to;
            if stations.contains(&next) {
                continue;
            }
            stations.push(next);
            links.push(l);
            dfs(net, out, dest, stations, links, found);
            stations.pop();
            links.pop();
        }
    }
    let mut found = Vec::new();
    dfs(net, &out, dest, &mut stations, &mut links, &mut found);
    for (s, l) in found {
        routes.push(Route { producer, consumer, links: l, stations: s });
    }
    Ok(routes)
}

/// What an arc of the expanded graph stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArcKind {
    Link(usize),
    Station(usize),
    Supply(usize),
    Demand(usize),
    Closing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub tail: usize,
    pub head: usize,
    pub kind: ArcKind,
    pub base_cost: f64,
    pub capacity: Capacity,
}

/// Stations split into entry/exit vertices joined by a handling arc, with a
/// source feeding producers, consumers draining to a sink, and one closing
/// source-sink arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedGraph {
    pub n_vertices: usize,
    pub arcs: Vec<Arc>,
    link_arc: Vec<usize>,
    station_arc: Vec<usize>,
    supply_arc: Vec<usize>,
    demand_arc: Vec<usize>,
    closing_arc: usize,
}

pub const SOURCE: usize = 0;
pub const SINK: usize = 1;

fn entry(s: usize) -> usize {
    2 + 2 * s
}
fn exit(s: usize) -> usize {
    3 + 2 * s
}

impl ExpandedGraph {
    pub fn link_arc(&self, l: usize) -> usize {
        self.link_arc[l]
    }
    pub fn station_arc(&self, s: usize) -> usize {
        self.station_arc[s]
    }
    pub fn supply_arc(&self, j: usize) -> usize {
        self.supply_arc[j]
    }
    pub fn demand_arc(&self, i: usize) -> usize {
        self.demand_arc[i]
    }
    pub fn closing_arc(&self) -> usize {
        self.closing_arc
    }

    pub fn arc_of(&self, r: Resource) -> usize {
        match r {
            Resource::Link(l) => self.link_arc[l],
            Resource::Station(s) => self.station_arc[s],
        }
    }

    pub fn resource_of(&self, arc: usize) -> Option<Resource> {
        match self.arcs[arc].kind {
            ArcKind::Link(l) => Some(Resource::Link(l)),
            ArcKind::Station(s) => Some(Resource::Station(s)),
            _ => None,
        }
    }

    /// Arc sequence of a route, from the source to the sink.
    pub fn image(&self, route: &Route) -> Vec<usize> {
        let mut arcs = vec![self.supply_arc[route.producer], self.station_arc[route.stations[0]]];
        for (k, &l) in route.links.iter().enumerate() {
            arcs.push(self.link_arc[l]);
            arcs.push(self.station_arc[route.stations[k + 1]]);
        }
        arcs.push(self.demand_arc[route.consumer]);
        arcs
    }

    pub fn path_cost(&self, arcs: &[usize]) -> f64 {
        arcs.iter().map(|&a| self.arcs[a].base_cost).sum()
    }

    /// All simple source-to-sink arc sequences.
    pub fn source_sink_paths(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices];
        for (a, arc) in self.arcs.iter().enumerate() {
            out[arc.tail].push(a);
        }
        let mut paths = Vec::new();
        let mut visited = vec![false; self.n_vertices];
        let mut stack = Vec::new();
        fn dfs(
            g: &ExpandedGraph,
            out: &[Vec<usize>],
            v: usize,
            visited: &mut [bool],
            stack: &mut Vec<usize>,
            paths: &mut Vec<Vec<usize>>,
        ) {
            if v == SINK {
                paths.push(stack.clone());
                return;
            }
            visited[v] = true;
            for &a in &out[v] {
                let h = g.arcs[a].head;
                if !visited[h] {
                    stack.push(a);
                    dfs(g, out, h, visited, stack, paths);
                    stack.pop();
                }
            }
            visited[v] = false;
        }
        dfs(self, &out, SOURCE, &mut visited, &mut stack, &mut paths);
        paths
    }
}

pub fn expand_graph(net: &Network) -> Result<ExpandedGraph, NetworkError> {
    let n_st = net.stations.len();
    let mut arcs = Vec::new();
    let push = |arcs: &mut Vec<Arc>, tail, head, kind, base_cost, capacity| {
        arcs.push(Arc { tail, head, kind, base_cost, capacity });
        arcs.len() - 1
    };
    let station_arc: Vec<usize> = (0..n_st)
        .map(|s| {
            let st = &net.stations[s];
            push(&mut arcs, entry(s), exit(s), ArcKind::Station(s), st.handling_tariff, st.capacity)
        })
        .collect();
    let link_arc: Vec<usize> = net
        .links
        .iter()
        .enumerate()
        .map(|(l, link)| push(&mut arcs, exit(link.from), entry(link.to), ArcKind::Link(l), link.tariff, link.capacity))
        .collect();
    let supply_arc: Vec<usize> = net
        .producers
        .iter()
        .enumerate()
        .map(|(j, t)| push(&mut arcs, SOURCE, entry(t.station), ArcKind::Supply(j), 0.0, Capacity::Unlimited))
        .collect();
    let demand_arc: Vec<usize> = net
        .consumers
        .iter()
        .enumerate()
        .map(|(i, t)| push(&mut arcs, exit(t.station), SINK, ArcKind::Demand(i), 0.0, Capacity::Unlimited))
        .collect();
    let closing_arc = push(&mut arcs, SOURCE, SINK, ArcKind::Closing, 0.0, Capacity::Unlimited);

    // Reachability between agent stations.
    let out = net.outgoing();
    let reach_from = |s0: usize| {
        let mut seen = vec![false; n_st];
        let mut stack = vec![s0];
        seen[s0] = true;
        while let Some(u) = stack.pop() {
            for &l in &out[u] {
                let v = net.links[l].to;
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let reach: Vec<Vec<bool>> = net.producers.iter().map(|p| reach_from(p.station)).collect();
    let bad_producers: Vec<String> = net
        .producers
        .iter()
        .enumerate()
        .filter(|(j, _)| !net.consumers.iter().any(|c| reach[*j][c.station]))
        .map(|(_, p)| p.name.clone())
        .collect();
    let bad_consumers: Vec<String> = net
        .consumers
        .iter()
        .filter(|c| !reach.iter().any(|r| r[c.station]))
        .map(|c| c.name.clone())
        .collect();
    if !bad_producers.is_empty() || !bad_consumers.is_empty() {
        return Err(NetworkError::Disconnected { producers: bad_producers, consumers: bad_consumers });
    }
    Ok(ExpandedGraph { n_vertices: 2 + 2 * n_st, arcs, link_arc, station_arc, supply_arc, demand_arc, closing_arc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Network {
        let mut b = NetworkBuilder::new();
        let s: Vec<usize> = (0..n).map(|k| b.station(&format!("s{k}"), 1.0, Capacity::Unlimited)).collect();
        for k in 0..n - 1 {
            b.link(s[k], s[k + 1], 2.0 + k as f64, Capacity::Unlimited);
        }
        b.producer("P", s[0]);
        b.consumer("C", s[n - 1]);
        b.commodity("g");
        b.build().unwrap()
    }

    fn parallel(c1: f64, c2: f64) -> Network {
        let mut b = NetworkBuilder::new();
        let a = b.station("A", 0.0, Capacity::Unlimited);
        let z = b.station("Z", 0.0, Capacity::Unlimited);
        b.link(a, z, c1, Capacity::Unlimited);
        b.link(a, z, c2, Capacity::Unlimited);
        b.producer("P", a);
        b.consumer("C", z);
        b.commodity("g");
        b.build().unwrap()
    }

    #[test]
    fn route_cost_sums_tariffs_and_surcharges() {
        let net = line(3);
        let r = Route::new(&net, 0, 0, vec![0, 1]).unwrap();
        assert_eq!(route_cost(&net, &r, &Surcharges::zero(&net)).unwrap(), 8.0);
        let shadow = Surcharges { links: vec![0.0, 4.0], stations: vec![0.0, 0.0, 2.0] };
        assert_eq!(route_cost(&net, &r, &shadow).unwrap(), 14.0);
    }

    #[test]
    fn route_cost_rejects_unknown_link() {
        let net = line(3);
        let r = Route { producer: 0, consumer: 0, links: vec![7], stations: vec![0, 1] };
        assert_eq!(route_cost(&net, &r, &Surcharges::zero(&net)), Err(NetworkError::UnknownLink(7)));
    }

    #[test]
    fn parallel_links_pick_cheaper_at_surcharged_cost() {
        let net = parallel(5.0, 7.0);
        let mut shadow = Surcharges::zero(&net);
        assert_eq!(min_cost_route(&net, 0, 0, &shadow).unwrap().links, vec![0]);
        shadow.links[0] = 3.0;
        assert_eq!(min_cost_route(&net, 0, 0, &shadow).unwrap().links, vec![1]);
    }

    #[test]
    fn ties_break_on_station_then_link_order() {
        let net = parallel(5.0, 5.0);
        assert_eq!(min_cost_route(&net, 0, 0, &Surcharges::zero(&net)).unwrap().links, vec![0]);
    }

    #[test]
    fn unreachable_pair_is_named() {
        let mut b = NetworkBuilder::new();
        let a = b.station("A", 0.0, Capacity::Unlimited);
        let z = b.station("Z", 0.0, Capacity::Unlimited);
        b.link(z, a, 1.0, Capacity::Unlimited);
        b.producer("P", a);
        b.consumer("C", z);
        b.commodity("g");
        let net = b.build().unwrap();
        assert_eq!(
            min_cost_route(&net, 0, 0, &Surcharges::zero(&net)),
            Err(NetworkError::Unreachable { producer: 0, consumer: 0 })
        );
        match expand_graph(&net) {
            Err(NetworkError::Disconnected { producers, consumers }) => {
                assert_eq!(producers, vec!["P".to_string()]);
                assert_eq!(consumers, vec!["C".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expansion_counts_and_back_map() {
        let net = line(3);
        let g = expand_graph(&net).unwrap();
        assert_eq!(g.arcs.len(), 2 + 3 + 1 + 1 + 1);
        for l in 0..2 {
            assert_eq!(g.arcs[g.link_arc(l)].kind, ArcKind::Link(l));
            assert_eq!(g.resource_of(g.link_arc(l)), Some(Resource::Link(l)));
        }
        for s in 0..3 {
            assert_eq!(g.resource_of(g.station_arc(s)), Some(Resource::Station(s)));
        }
        for a in &g.arcs {
            if a.tail == SOURCE || a.head == SINK {
                assert_eq!(a.capacity, Capacity::Unlimited);
            }
        }
        let through: Vec<_> = g
            .source_sink_paths()
            .into_iter()
            .filter(|p| (0..3).all(|s| p.contains(&g.station_arc(s))))
            .collect();
        assert_eq!(through.len(), 1);
    }

    #[test]
    fn station_arc_carries_handling_terms() {
        let mut b = NetworkBuilder::new();
        let a = b.station("A", 3.0, Capacity::Finite(5.0));
        b.producer("P", a);
        b.consumer("C", a);
        b.commodity("g");
        let net = b.build().unwrap();
        let g = expand_graph(&net).unwrap();
        let arc = &g.arcs[g.station_arc(0)];
        assert_eq!(arc.capacity, Capacity::Finite(5.0));
        assert_eq!(arc.base_cost, 3.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut b = NetworkBuilder::new();
        let a = b.station("A", 0.0, Capacity::Unlimited);
        let z = b.station("Z", 0.0, Capacity::Unlimited);
        b.link(a, z, -1.0, Capacity::Unlimited);
        b.commodity("g");
        assert!(matches!(b.build(), Err(NetworkError::BadTariff { .. })));

        let mut b = NetworkBuilder::new();
        let a = b.station("A", 0.0, Capacity::Finite(-2.0));
        b.producer("P", a);
        b.commodity("g");
        assert!(matches!(b.build(), Err(NetworkError::BadCapacity { .. })));

        let mut b = NetworkBuilder::new();
        b.station("A", 0.0, Capacity::Unlimited);
        b.producer("P", 4);
        b.commodity("g");
        assert_eq!(b.build(), Err(NetworkError::UnknownStation(4)));
    }
}
