//! Netlists: parts with typed ports wired together by nets, their wiring
//! hypergraph and netlist graph, and the translation from a DSEM.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsem::{Coefficient, DsemSpec};
use crate::maps::{Map, Term};

pub type PartId = usize;
pub type NetId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("duplicate net `{0}`")]
    DuplicateNet(String),
    #[error("duplicate part `{0}`")]
    DuplicatePart(String),
    #[error("duplicate port `{port}` on part `{part}`")]
    DuplicatePort { part: String, port: String },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
}

/// The input-output function of one output port: `map` takes the
/// concatenated input port values, whose dimensions are `input_dims`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PortFunction {
    pub input_dims: Vec<usize>,
    pub map: Map,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub ports: Vec<Port>,
    /// Keyed by output port name.
    pub functions: BTreeMap<String, PortFunction>,
}

impl Part {
    pub fn inputs(&self) -> impl Iterator<Item = (usize, &Port)> {
        self.ports
            .iter()
            .enumerate()
            .filter(|(_, p)| p.direction == Direction::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = (usize, &Port)> {
        self.ports
            .iter()
            .enumerate()
            .filter(|(_, p)| p.direction == Direction::Output)
    }

    pub fn port(&self, name: &str) -> Option<usize> {
        self.ports.iter().position(|p| p.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSpace {
    Scalar,
    Series(usize),
    Vector(usize),
}

impl ValueSpace {
    pub fn dim(&self) -> usize {
        match self {
            ValueSpace::Scalar => 1,
            ValueSpace::Series(n) | ValueSpace::Vector(n) => *n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub part: PartId,
    pub port: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Net {
    pub name: String,
    pub space: ValueSpace,
    pub ports: Vec<PortRef>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Netlist {
    pub parts: Vec<Part>,
    pub nets: Vec<Net>,
    /// Nets allowed to carry more than one output port.
    #[serde(default)]
    pub unchecked: BTreeSet<NetId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    MultiOutputNet {
        net: String,
        outputs: usize,
    },
    DanglingPort {
        part: String,
        port: String,
    },
    MultiplyConnectedPort {
        part: String,
        port: String,
        nets: Vec<String>,
    },
    ArityMismatch {
        part: String,
        port: String,
        arity: usize,
        inputs: usize,
    },
    DimensionMismatch {
        part: String,
        port: String,
        detail: String,
    },
    MissingFunction {
        part: String,
        port: String,
    },
    BadPortReference {
        net: String,
    },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::MultiOutputNet { net, outputs } => {
                write!(f, "net `{net}` has {outputs} output ports")
            }
            Diagnostic::DanglingPort { part, port } => {
                write!(f, "port `{part}.{port}` is not on any net")
            }
            Diagnostic::MultiplyConnectedPort { part, port, nets } => {
                write!(
                    f,
                    "port `{part}.{port}` is on several nets: {}",
                    nets.join(", ")
                )
            }
            Diagnostic::ArityMismatch {
                part,
                port,
                arity,
                inputs,
            } => {
                write!(f, "function of `{part}.{port}` takes {arity} arguments but the part has {inputs} input ports")
            }
            Diagnostic::DimensionMismatch { part, port, detail } => {
                write!(f, "`{part}.{port}`: {detail}")
            }
            Diagnostic::MissingFunction { part, port } => {
                write!(f, "output `{part}.{port}` has no function")
            }
            Diagnostic::BadPortReference { net } => {
                write!(f, "net `{net}` references a missing port")
            }
        }
    }
}

impl Netlist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_net(
        &mut self,
        name: impl Into<String>,
        space: ValueSpace,
    ) -> Result<NetId, NetlistError> {
        let name = name.into();
        if self.net(&name).is_some() {
            return Err(NetlistError::DuplicateNet(name));
        }
        self.nets.push(Net {
            name,
            space,
            ports: Vec::new(),
        });
        Ok(self.nets.len() - 1)
    }

    pub fn add_part(&mut self, name: impl Into<String>) -> Result<PartId, NetlistError> {
        let name = name.into();
        if self.part(&name).is_some() {
            return Err(NetlistError::DuplicatePart(name));
        }
        self.parts.push(Part {
            name,
            ports: Vec::new(),
            functions: BTreeMap::new(),
        });
        Ok(self.parts.len() - 1)
    }

    fn add_port(
        &mut self,
        part: PartId,
        name: &str,
        direction: Direction,
        net: NetId,
    ) -> Result<PortRef, NetlistError> {
        let p = &mut self.parts[part];
        if p.port(name).is_some() {
            return Err(NetlistError::DuplicatePort {
                part: p.name.clone(),
                port: name.to_string(),
            });
        }
        p.ports.push(Port {
            name: name.to_string(),
            direction,
        });
        let r = PortRef {
            part,
            port: p.ports.len() - 1,
        };
        self.nets[net].ports.push(r);
        Ok(r)
    }

    pub fn add_input(
        &mut self,
        part: PartId,
        port: &str,
        net: NetId,
    ) -> Result<PortRef, NetlistError> {
        self.add_port(part, port, Direction::Input, net)
    }

    /// Adds an output port whose function reads the part's current input ports.
    pub fn add_output(
        &mut self,
        part: PartId,
        port: &str,
        net: NetId,
        map: Map,
    ) -> Result<PortRef, NetlistError> {
        let input_dims = self.input_dims(part);
        let r = self.add_port(part, port, Direction::Output, net)?;
        self.parts[part]
            .functions
            .insert(port.to_string(), PortFunction { input_dims, map });
        Ok(r)
    }

    /// Dimensions of the nets on `part`'s input ports, in port order.
    pub fn input_dims(&self, part: PartId) -> Vec<usize> {
        self.parts[part]
            .inputs()
            .map(|(i, _)| {
                self.net_of(PortRef { part, port: i })
                    .map_or(0, |n| self.nets[n].space.dim())
            })
            .collect()
    }

    pub fn net(&self, name: &str) -> Option<NetId> {
        self.nets.iter().position(|n| n.name == name)
    }

    pub fn part(&self, name: &str) -> Option<PartId> {
        self.parts.iter().position(|p| p.name == name)
    }

    /// The first net carrying `port`.
    pub fn net_of(&self, port: PortRef) -> Option<NetId> {
        self.nets.iter().position(|n| n.ports.contains(&port))
    }

    pub fn nets_of(&self, port: PortRef) -> Vec<NetId> {
        (0..self.nets.len())
            .filter(|&n| self.nets[n].ports.contains(&port))
            .collect()
    }

    /// Moves `port` from whatever net carries it to `net`.
    pub fn rewire(&mut self, port: PortRef, net: NetId) {
        for n in &mut self.nets {
            n.ports.retain(|p| *p != port);
        }
        self.nets[net].ports.push(port);
    }

    pub fn allow_multi_output(&mut self, net: NetId) {
        self.unchecked.insert(net);
    }

    /// The part whose output port lies on `net`, if exactly one.
    pub fn producer(&self, net: NetId) -> Option<PortRef> {
        let outs: Vec<PortRef> = self.nets[net]
            .ports
            .iter()
            .copied()
            .filter(|r| self.parts[r.part].ports[r.port].direction == Direction::Output)
            .collect();
        (outs.len() == 1).then(|| outs[0])
    }

    fn direction(&self, r: PortRef) -> Option<Direction> {
        self.parts
            .get(r.part)
            .and_then(|p| p.ports.get(r.port))
            .map(|p| p.direction)
    }

    /// Lists every violation of the netlist rules; empty when valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (ni, net) in self.nets.iter().enumerate() {
            if net.ports.iter().any(|r| self.direction(*r).is_none()) {
                out.push(Diagnostic::BadPortReference {
                    net: net.name.clone(),
                });
                continue;
            }
            let outputs = net
                .ports
                .iter()
                .filter(|r| self.direction(**r) == Some(Direction::Output))
                .count();
            if outputs > 1 && !self.unchecked.contains(&ni) {
                out.push(Diagnostic::MultiOutputNet {
                    net: net.name.clone(),
                    outputs,
                });
            }
        }
        for (pi, part) in self.parts.iter().enumerate() {
            for (i, port) in part.ports.iter().enumerate() {
                let nets = self.nets_of(PortRef { part: pi, port: i });
                match nets.len() {
                    0 => out.push(Diagnostic::DanglingPort {
                        part: part.name.clone(),
                        port: port.name.clone(),
                    }),
                    1 => {}
                    _ => out.push(Diagnostic::MultiplyConnectedPort {
                        part: part.name.clone(),
                        port: port.name.clone(),
                        nets: nets.iter().map(|&n| self.nets[n].name.clone()).collect(),
                    }),
                }
            }
            let dims = self.input_dims(pi);
            for (i, port) in part.outputs() {
                let Some(func) = part.functions.get(&port.name) else {
                    out.push(Diagnostic::MissingFunction {
                        part: part.name.clone(),
                        port: port.name.clone(),
                    });
                    continue;
                };
                if func.input_dims.len() != dims.len() {
                    out.push(Diagnostic::ArityMismatch {
                        part: part.name.clone(),
                        port: port.name.clone(),
                        arity: func.input_dims.len(),
                        inputs: dims.len(),
                    });
                    continue;
                }
                let mut problems = Vec::new();
                if func.input_dims != dims {
                    problems.push(format!(
                        "argument dimensions {:?} but input nets have {:?}",
                        func.input_dims, dims
                    ));
                }
                let total: usize = func.input_dims.iter().sum();
                if func.map.input_dim() != total {
                    problems.push(format!(
                        "map takes {} values, arguments total {total}",
                        func.map.input_dim()
                    ));
                }
                if let Some(n) = self.net_of(PortRef { part: pi, port: i }) {
                    let d = self.nets[n].space.dim();
                    if func.map.output_dim() != d {
                        problems.push(format!(
                            "map yields {} values, net `{}` holds {d}",
                            func.map.output_dim(),
                            self.nets[n].name
                        ));
                    }
                }
                for detail in problems {
                    out.push(Diagnostic::DimensionMismatch {
                        part: part.name.clone(),
                        port: port.name.clone(),
                        detail,
                    });
                }
            }
        }
        out
    }

    /// `(external inputs, external outputs)`: nets with no output port and
    /// nets with no input port.
    pub fn external_io(&self) -> (Vec<NetId>, Vec<NetId>) {
        let has = |n: &Net, d: Direction| n.ports.iter().any(|r| self.direction(*r) == Some(d));
        let inputs = (0..self.nets.len())
            .filter(|&i| !has(&self.nets[i], Direction::Output))
            .collect();
        let outputs = (0..self.nets.len())
            .filter(|&i| !has(&self.nets[i], Direction::Input))
            .collect();
        (inputs, outputs)
    }

    pub fn net_names(&self, ids: &[NetId]) -> Vec<String> {
        ids.iter().map(|&i| self.nets[i].name.clone()).collect()
    }

    pub fn graph(&self) -> NetlistGraph {
        netlist_graph(self)
    }

    pub fn hypergraph(&self) -> WiringHypergraph {
        let mut hyperedges: Vec<Hyperedge> = self
            .nets
            .iter()
            .map(|n| Hyperedge {
                net: n.name.clone(),
                members: n
                    .ports
                    .iter()
                    .map(|r| {
                        let p = &self.parts[r.part].ports[r.port];
                        (r.part, p.name.clone(), p.direction)
                    })
                    .collect(),
            })
            .collect();
        for h in &mut hyperedges {
            h.members.sort();
        }
        WiringHypergraph {
            parts: self.parts.iter().map(|p| p.name.clone()).collect(),
            hyperedges,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphNode {
    Part(String),
    Net(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeLabel {
    pub port: String,
    pub direction: Direction,
}

/// Bipartite incidence graph: one vertex per part and per net, one edge
/// part -> net per connected port.
#[derive(Clone, Debug)]
pub struct NetlistGraph {
    pub graph: DiGraph<GraphNode, EdgeLabel>,
    pub part_nodes: Vec<NodeIndex>,
    pub net_nodes: Vec<NodeIndex>,
}

pub fn netlist_graph(netlist: &Netlist) -> NetlistGraph {
    let mut graph = DiGraph::new();
    let part_nodes: Vec<_> = netlist
        .parts
        .iter()
        .map(|p| graph.add_node(GraphNode::Part(p.name.clone())))
        .collect();
    let net_nodes: Vec<_> = netlist
        .nets
        .iter()
        .map(|n| graph.add_node(GraphNode::Net(n.name.clone())))
        .collect();
    for (ni, net) in netlist.nets.iter().enumerate() {
        for r in &net.ports {
            let port = &netlist.parts[r.part].ports[r.port];
            graph.add_edge(
                part_nodes[r.part],
                net_nodes[ni],
                EdgeLabel {
                    port: port.name.clone(),
                    direction: port.direction,
                },
            );
        }
    }
    NetlistGraph {
        graph,
        part_nodes,
        net_nodes,
    }
}

impl NetlistGraph {
    pub fn vertex_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn is_acyclic(&self) -> bool {
        toposort(&self.graph, None).is_ok()
    }

    pub fn is_bipartite(&self) -> bool {
        self.graph.edge_indices().all(|e| {
            let (a, b) = self.graph.edge_endpoints(e).unwrap();
            matches!(self.graph[a], GraphNode::Part(_))
                && matches!(self.graph[b], GraphNode::Net(_))
        })
    }

    pub fn to_hypergraph(&self) -> WiringHypergraph {
        let part_index: HashMap<NodeIndex, usize> = self
            .part_nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i))
            .collect();
        let parts = self
            .part_nodes
            .iter()
            .map(|&n| match &self.graph[n] {
                GraphNode::Part(s) => s.clone(),
                GraphNode::Net(s) => s.clone(),
            })
            .collect();
        let hyperedges = self
            .net_nodes
            .iter()
            .map(|&n| {
                let net = match &self.graph[n] {
                    GraphNode::Net(s) | GraphNode::Part(s) => s.clone(),
                };
                let mut members: Vec<(PartId, String, Direction)> = self
                    .graph
                    .edges_directed(n, petgraph::Direction::Incoming)
                    .map(|e| {
                        use petgraph::visit::EdgeRef;
                        (
                            part_index[&e.source()],
                            e.weight().port.clone(),
                            e.weight().direction,
                        )
                    })
                    .collect();
                members.sort();
                Hyperedge { net, members }
            })
            .collect();
        WiringHypergraph { parts, hyperedges }
    }

    /// Edges as sorted `(part, net, port, direction)` tuples, a canonical form
    /// for comparing graphs with named vertices.
    pub fn canonical_edges(&self) -> Vec<(String, String, String, Direction)> {
        let name = |n: NodeIndex| match &self.graph[n] {
            GraphNode::Part(s) | GraphNode::Net(s) => s.clone(),
        };
        let mut out: Vec<_> = self
            .graph
            .edge_indices()
            .map(|e| {
                let (a, b) = self.graph.edge_endpoints(e).unwrap();
                let w = &self.graph[e];
                (name(a), name(b), w.port.clone(), w.direction)
            })
            .collect();
        out.sort();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hyperedge {
    pub net: String,
    /// `(part, port name, direction)` of every attached port.
    pub members: Vec<(PartId, String, Direction)>,
}

/// One vertex per part, one hyperedge per net.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WiringHypergraph {
    pub parts: Vec<String>,
    pub hyperedges: Vec<Hyperedge>,
}

impl WiringHypergraph {
    pub fn to_graph(&self) -> NetlistGraph {
        let mut graph = DiGraph::new();
        let part_nodes: Vec<_> = self
            .parts
            .iter()
            .map(|p| graph.add_node(GraphNode::Part(p.clone())))
            .collect();
        let net_nodes: Vec<_> = self
            .hyperedges
            .iter()
            .map(|h| graph.add_node(GraphNode::Net(h.net.clone())))
            .collect();
        for (hi, h) in self.hyperedges.iter().enumerate() {
            for (part, port, direction) in &h.members {
                graph.add_edge(
                    part_nodes[*part],
                    net_nodes[hi],
                    EdgeLabel {
                        port: port.clone(),
                        direction: *direction,
                    },
                );
            }
        }
        NetlistGraph {
            graph,
            part_nodes,
            net_nodes,
        }
    }
}

/// Label of the scalar net carrying a free path coefficient.
pub fn coefficient_net_name(spec: &DsemSpec, edge: usize) -> String {
    let e = &spec.edges()[edge];
    format!(
        "coef:{}->{}@{}",
        spec.variables()[e.source],
        spec.variables()[e.target],
        e.lag
    )
}

/// Translates a DSEM into a netlist over length-`n` series.
///
/// Every variable becomes a net. Every variable with an inbound edge becomes a
/// part with one input port per distinct source variable (all lags of one
/// source read the same port) and one input port per free coefficient, whose
/// scalar net is named by [`coefficient_net_name`]. The output is
/// `y[t] = h * sum gamma * x_src[t - lag]`, with terms before the start of the
/// series dropped. Self-edges are not wired.
pub fn netlist_from_dsem(spec: &DsemSpec, n: usize) -> Netlist {
    let mut nl = Netlist::new();
    for v in spec.variables() {
        nl.add_net(v.clone(), ValueSpace::Series(n))
            .expect("variables are unique");
    }
    let h = spec.h();
    for (k, name) in spec.variables().iter().enumerate() {
        let edges: Vec<(usize, &crate::dsem::Edge)> =
            spec.path_edges().filter(|(_, e)| e.target == k).collect();
        if edges.is_empty() {
            continue;
        }
        let part = nl.add_part(name.clone()).expect("one part per variable");
        let mut sources: Vec<usize> = Vec::new();
        for (_, e) in &edges {
            if !sources.contains(&e.source) {
                sources.push(e.source);
            }
        }
        for &s in &sources {
            nl.add_input(part, &spec.variables()[s], s)
                .expect("distinct sources");
        }
        let mut coef_slot = HashMap::new();
        let mut next = sources.len() * n;
        for (i, e) in &edges {
            if e.coefficient.is_free() {
                let net = nl
                    .add_net(coefficient_net_name(spec, *i), ValueSpace::Scalar)
                    .expect("unique edges");
                nl.add_input(part, &format!("coef{i}"), net)
                    .expect("unique edges");
                coef_slot.insert(*i, next);
                next += 1;
            }
        }
        let mut rows = vec![Vec::new(); n];
        for (i, e) in &edges {
            let base = sources.iter().position(|&s| s == e.source).unwrap() * n;
            for (t, row) in rows.iter_mut().enumerate().skip(e.lag) {
                let x = base + t - e.lag;
                match e.coefficient {
                    Coefficient::Fixed(g) => row.push(Term::linear(h * g, x)),
                    Coefficient::Free => row.push(Term::product(h, coef_slot[i], x)),
                }
            }
        }
        let map = Map::bilinear(next, rows, vec![0.0; n]).expect("indices in range");
        nl.add_output(part, "out", k, map).expect("fresh port");
    }
    nl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsem::Coefficient::Fixed;

    #[test]
    fn single_edge_shape() {
        let spec = DsemSpec::builder(["A", "B"])
            .edge("A", "B", 0, Fixed(0.5))
            .build()
            .unwrap();
        let nl = netlist_from_dsem(&spec, 3);
        assert_eq!((nl.parts.len(), nl.nets.len()), (1, 2));
        assert!(nl.validate().is_empty());
        let (ins, outs) = nl.external_io();
        assert_eq!(nl.net_names(&ins), vec!["A"]);
        assert_eq!(nl.net_names(&outs), vec!["B"]);
        let g = nl.graph();
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(
            g.canonical_edges(),
            vec![
                ("B".into(), "A".into(), "A".into(), Direction::Input),
                ("B".into(), "B".into(), "out".into(), Direction::Output)
            ]
        );
    }

    #[test]
    fn lagged_and_free_inputs() {
        let spec = DsemSpec::builder(["A", "B"])
            .edge("A", "B", 0, Fixed(1.0))
            .edge("A", "B", 1, Coefficient::Free)
            .build()
            .unwrap();
        let nl = netlist_from_dsem(&spec, 4);
        assert!(nl.validate().is_empty());
        let f = &nl.parts[0].functions["out"];
        assert_eq!(f.input_dims, vec![4, 1]);
        // y[t] = x[t] + c * x[t - 1]
        assert_eq!(
            f.map.eval(&[1.0, 2.0, 3.0, 4.0, 10.0]),
            vec![1.0, 12.0, 23.0, 34.0]
        );
    }

    #[test]
    fn diagnostics_name_the_violation() {
        let mut nl = Netlist::new();
        let x = nl.add_net("x", ValueSpace::Scalar).unwrap();
        let p = nl.add_part("p").unwrap();
        let q = nl.add_part("q").unwrap();
        nl.add_output(p, "o", x, Map::linear(nalgebra::DMatrix::zeros(1, 0)))
            .unwrap();
        nl.add_output(q, "o", x, Map::linear(nalgebra::DMatrix::zeros(1, 0)))
            .unwrap();
        let d = nl.validate();
        assert_eq!(
            d,
            vec![Diagnostic::MultiOutputNet {
                net: "x".into(),
                outputs: 2
            }]
        );
        nl.allow_multi_output(x);
        assert!(nl.validate().is_empty());
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let mut nl = Netlist::new();
        let nets: Vec<_> = (0..4)
            .map(|i| nl.add_net(format!("n{i}"), ValueSpace::Scalar).unwrap())
            .collect();
        let p = nl.add_part("p").unwrap();
        for i in 0..3 {
            nl.add_input(p, &format!("i{i}"), nets[i]).unwrap();
        }
        nl.add_output(p, "o", nets[3], Map::linear(nalgebra::DMatrix::zeros(1, 3)))
            .unwrap();
        nl.parts[p].functions.get_mut("o").unwrap().input_dims = vec![1, 2];
        let d = nl.validate();
        assert!(matches!(
            &d[..],
            [Diagnostic::ArityMismatch {
                arity: 2,
                inputs: 3,
                ..
            }]
        ));
    }

    #[test]
    fn dangling_port_is_reported() {
        let mut nl = Netlist::new();
        let x = nl.add_net("x", ValueSpace::Scalar).unwrap();
        let p = nl.add_part("p").unwrap();
        let r = nl.add_input(p, "i", x).unwrap();
        nl.nets[x].ports.retain(|q| *q != r);
        assert_eq!(
            nl.validate(),
            vec![Diagnostic::DanglingPort {
                part: "p".into(),
                port: "i".into()
            }]
        );
    }
}
