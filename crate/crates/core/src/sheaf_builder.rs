//! Sheaf diagrams built from netlists, the observation and autoregressive
//! transformations, canonical example sheaves, and the full DSEM pipeline.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dsem::{Coefficient, DsemError, DsemSpec, TimeseriesTable};
use crate::maps::{Map, Term};
use crate::netlist::{
    netlist_from_dsem, Diagnostic, NetId, Netlist, NetlistError, PortRef, ValueSpace,
};
use crate::topology::{
    consistency_radius, Assignment, CellId, DiagramBuilder, PairScope, SheafDiagram, Stalk,
    TopologyError,
};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid netlist: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetlist(Vec<Diagnostic>),
    #[error("part `{part}` attaches to net `{net}` through more than one port")]
    ParallelPorts { part: String, net: String },
    #[error("unknown net `{0}`")]
    UnknownNet(String),
    #[error("`{0}` does not carry a length-{1} series")]
    NotSeries(String, usize),
    #[error("AR order {k} with window {window} needs a series longer than {n}")]
    OrderTooLarge { k: usize, window: usize, n: usize },
    #[error("AR order must be at least 1")]
    ZeroOrder,
    #[error("expected {expected} AR coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("series length {got} does not match the sheaf's {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("the sheaf has no observation cells")]
    NotExploded,
    #[error("data table must be complete here; `{variable}` is missing at row {row}")]
    Incomplete { variable: String, row: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dsem(#[from] DsemError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// A contiguous run of coordinates on one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Slot {
    pub cell: CellId,
    pub start: usize,
    pub len: usize,
}

/// Slots whose values are declared equal coordinatewise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TieGroup {
    pub slots: Vec<Slot>,
}

/// A netlist's sheaf with the cell of each net and part.
#[derive(Clone, Debug)]
pub struct NetlistSheaf {
    pub sheaf: SheafDiagram,
    pub ties: Vec<TieGroup>,
    pub net_cells: Vec<CellId>,
    pub part_cells: Vec<CellId>,
}

/// Label of a part's cell; nets keep their own names.
pub fn part_label(name: &str) -> String {
    format!("part:{name}")
}

/// Nets become cells with their value space as stalk; parts become cells
/// whose stalk is the product of their input nets. Restrictions run from a
/// part to each attached net: a coordinate projection for input ports and
/// the input-output function for output ports.
pub fn sheaf_from_netlist(netlist: &Netlist) -> Result<NetlistSheaf, BuildError> {
    sheaf_from_netlist_with(netlist, 2.0, PairScope::AllComparable)
}

pub fn sheaf_from_netlist_with(
    netlist: &Netlist,
    p: f64,
    scope: PairScope,
) -> Result<NetlistSheaf, BuildError> {
    let diagnostics = netlist.validate();
    if !diagnostics.is_empty() {
        return Err(BuildError::InvalidNetlist(diagnostics));
    }
    let mut b = DiagramBuilder::new();
    let mut net_cells = Vec::with_capacity(netlist.nets.len());
    for net in &netlist.nets {
        net_cells.push(b.add_cell(net.name.clone(), Stalk::new(net.space.dim()))?);
    }
    let mut part_cells = Vec::with_capacity(netlist.parts.len());
    let mut copies: BTreeMap<NetId, Vec<Slot>> = BTreeMap::new();
    for (pi, part) in netlist.parts.iter().enumerate() {
        let dims = netlist.input_dims(pi);
        let total: usize = dims.iter().sum();
        let cell = b.add_cell(part_label(&part.name), Stalk::new(total))?;
        part_cells.push(cell);
        let mut seen = std::collections::HashSet::new();
        let mut offset = 0;
        for (input_no, (port, _)) in part.inputs().enumerate() {
            let net = netlist
                .net_of(PortRef { part: pi, port })
                .expect("validated");
            if !seen.insert(net) {
                return Err(BuildError::ParallelPorts {
                    part: part.name.clone(),
                    net: netlist.nets[net].name.clone(),
                });
            }
            let d = dims[input_no];
            b.add_restriction(cell, net_cells[net], Map::block(total, offset, d))?;
            copies.entry(net).or_default().push(Slot {
                cell,
                start: offset,
                len: d,
            });
            offset += d;
        }
        for (port, p) in part.outputs() {
            let net = netlist
                .net_of(PortRef { part: pi, port })
                .expect("validated");
            if !seen.insert(net) {
                return Err(BuildError::ParallelPorts {
                    part: part.name.clone(),
                    net: netlist.nets[net].name.clone(),
                });
            }
            b.add_restriction(cell, net_cells[net], part.functions[&p.name].map.clone())?;
        }
    }
    b.p_norm(p).scope(scope);
    let sheaf = b.build()?;
    let ties = copies
        .into_iter()
        .map(|(net, mut slots)| {
            slots.insert(
                0,
                Slot {
                    cell: net_cells[net],
                    start: 0,
                    len: netlist.nets[net].space.dim(),
                },
            );
            TieGroup { slots }
        })
        .collect();
    Ok(NetlistSheaf {
        sheaf,
        ties,
        net_cells,
        part_cells,
    })
}

fn copy_into_builder(sheaf: &SheafDiagram) -> Result<DiagramBuilder, BuildError> {
    let mut b = DiagramBuilder::new();
    for c in 0..sheaf.len() {
        b.add_cell(sheaf.label(c), sheaf.stalk(c).clone())?;
    }
    for r in sheaf.restrictions() {
        b.add_restriction(r.source, r.target, r.map.clone())?;
    }
    b.p_norm(sheaf.p()).scope(sheaf.scope());
    Ok(b)
}

/// Adds one observation cell (stalk `R`) above each coordinate of each listed
/// length-`n` cell. Labels are `{coordinate label}_{cell label}`, using the
/// stalk's coordinate labels when present and the index otherwise. Existing
/// cell ids are unchanged; `result.1[i][t]` is the cell observing coordinate
/// `t` of `cells[i]`.
pub fn explode_observations(
    sheaf: &SheafDiagram,
    cells: &[CellId],
    n: usize,
) -> Result<(SheafDiagram, Vec<Vec<CellId>>), BuildError> {
    let mut b = copy_into_builder(sheaf)?;
    let mut out = Vec::with_capacity(cells.len());
    for &c in cells {
        if c >= sheaf.len() {
            return Err(TopologyError::UnknownCell(format!("cell {c}")).into());
        }
        let stalk = sheaf.stalk(c);
        if stalk.dim != n {
            return Err(BuildError::NotSeries(sheaf.label(c).to_string(), n));
        }
        let mut row = Vec::with_capacity(n);
        for t in 0..n {
            let tag = stalk
                .labels
                .as_ref()
                .map_or_else(|| t.to_string(), |l| l[t].clone());
            let obs = b.add_cell(format!("{tag}_{}", sheaf.label(c)), Stalk::new(1))?;
            b.add_restriction(c, obs, Map::block(n, t, 1))?;
            row.push(obs);
        }
        out.push(row);
    }
    Ok((b.build()?, out))
}

/// Autoregressive structure for one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct ArPartSpec {
    pub variable: String,
    pub order: usize,
    pub coefficients: Vec<Coefficient>,
    pub series_len: usize,
}

impl ArPartSpec {
    pub fn free(variable: &str, order: usize, series_len: usize) -> Self {
        ArPartSpec {
            variable: variable.into(),
            order,
            coefficients: vec![Coefficient::Free; order],
            series_len,
        }
    }
}

/// Nets and parts created by [`add_ar`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArWiring {
    pub coefficient_net: NetId,
    pub lag_net: NetId,
    pub window_net: Option<NetId>,
    pub filter_part: usize,
    pub crop_part: usize,
    pub window: usize,
}

/// Makes `spec.variable` an AR(k) sequence.
///
/// Adds a coefficient net `{v}.ar` and a filter part `{v}.lcf` reading
/// `(a, v)` whose output `y_j = sum_i a_i v[j + w - i]` goes to `{v}.lag`,
/// plus a crop part `{v}.crop` keeping the last `n - w` entries of `v`.
/// Without a producing part, the crop output also lands on `{v}.lag`, so
/// sections are exactly the AR sequences. With a producer, the crop output
/// lands on `{v}.win`, the producer gains an input port `lag` on `{v}.lag`,
/// and its output moves to `{v}.win` as `lag + f(...)[w..]`. The window `w`
/// defaults to `k` and must cover the producer's largest input lag.
pub fn add_ar(
    netlist: &mut Netlist,
    spec: &ArPartSpec,
    window: Option<usize>,
) -> Result<ArWiring, BuildError> {
    let k = spec.order;
    let n = spec.series_len;
    if k == 0 {
        return Err(BuildError::ZeroOrder);
    }
    if spec.coefficients.len() != k {
        return Err(BuildError::CoefficientCount {
            expected: k,
            got: spec.coefficients.len(),
        });
    }
    let v = netlist
        .net(&spec.variable)
        .ok_or_else(|| BuildError::UnknownNet(spec.variable.clone()))?;
    if netlist.nets[v].space != ValueSpace::Series(n) {
        return Err(BuildError::NotSeries(spec.variable.clone(), n));
    }
    let w = window.unwrap_or(k).max(k);
    if w >= n {
        return Err(BuildError::OrderTooLarge { k, window: w, n });
    }
    let name = &spec.variable;
    let coefficient_net = netlist.add_net(format!("{name}.ar"), ValueSpace::Vector(k))?;
    let lag_net = netlist.add_net(format!("{name}.lag"), ValueSpace::Vector(n - w))?;
    let producer = netlist.producer(v);

    let filter_part = netlist.add_part(format!("{name}.lcf"))?;
    netlist.add_input(filter_part, "a", coefficient_net)?;
    netlist.add_input(filter_part, "x", v)?;
    netlist.add_output(filter_part, "y", lag_net, Map::lcf(k, n, w))?;

    let crop_part = netlist.add_part(format!("{name}.crop"))?;
    netlist.add_input(crop_part, "x", v)?;
    let window_net = match producer {
        None => {
            netlist.add_output(crop_part, "y", lag_net, Map::crop(n, w))?;
            netlist.allow_multi_output(lag_net);
            None
        }
        Some(out) => {
            let win = netlist.add_net(format!("{name}.win"), ValueSpace::Vector(n - w))?;
            netlist.add_output(crop_part, "y", win, Map::crop(n, w))?;
            let part = out.part;
            let port_name = netlist.parts[part].ports[out.port].name.clone();
            let old = netlist.parts[part].functions[&port_name].clone();
            // The new input port must come after existing inputs so the
            // function's argument order matches the port order.
            netlist.add_input(part, "lag", lag_net)?;
            let mut input_dims = old.input_dims.clone();
            input_dims.push(n - w);
            let map = old.map.drop_leading_outputs(w).plus_appended_input();
            let f = netlist.parts[part]
                .functions
                .get_mut(&port_name)
                .expect("output has a function");
            f.input_dims = input_dims;
            f.map = map;
            netlist.rewire(out, win);
            netlist.allow_multi_output(win);
            Some(win)
        }
    };
    Ok(ArWiring {
        coefficient_net,
        lag_net,
        window_net,
        filter_part,
        crop_part,
        window: w,
    })
}

/// Fills cells outside the support: part cells copy their tied input nets,
/// other cells take the image of their first filled lower neighbour.
/// Returns the filled assignment; cells that cannot be reached stay empty.
pub fn propagate(sheaf: &SheafDiagram, ties: &[TieGroup], partial: &Assignment) -> Assignment {
    let mut a = partial.clone();
    loop {
        let mut changed = false;
        for c in 0..sheaf.len() {
            if a.in_support(c) {
                continue;
            }
            let dim = sheaf.dim(c);
            let mut value = vec![f64::NAN; dim];
            for g in ties {
                let Some(mine) = g.slots.iter().find(|s| s.cell == c) else {
                    continue;
                };
                if let Some(src) = g.slots.iter().find(|s| s.cell != c && a.in_support(s.cell)) {
                    let v = a.get(src.cell).unwrap();
                    value[mine.start..mine.start + mine.len]
                        .copy_from_slice(&v[src.start..src.start + src.len]);
                }
            }
            if dim > 0 && value.iter().all(|v| !v.is_nan()) && sheaf.incoming(c).next().is_none() {
                a.set(c, value).expect("dimension matches");
                changed = true;
                continue;
            }
            if dim == 0 && sheaf.incoming(c).next().is_none() {
                a.set(c, Vec::new()).expect("empty stalk");
                changed = true;
                continue;
            }
            let filled = sheaf.incoming(c).find(|r| a.in_support(r.source));
            if let Some(r) = filled {
                let img = r.map.eval(a.get(r.source).unwrap());
                a.set(c, img).expect("map shape matches stalk");
                changed = true;
            }
        }
        if !changed {
            return a;
        }
    }
}

/// The regression sheaf over `n` points with the cell of each variable.
#[derive(Clone, Debug)]
pub struct RegressionSheaf {
    pub sheaf: SheafDiagram,
    pub ties: Vec<TieGroup>,
    pub m: CellId,
    pub b: CellId,
    pub x: CellId,
    pub y: CellId,
    pub part: CellId,
}

impl RegressionSheaf {
    /// Global assignment with every part copy equal to its net.
    pub fn assignment(&self, m: f64, b: f64, x: &[f64], y: &[f64]) -> Assignment {
        let mut a = Assignment::empty(&self.sheaf);
        a.set(self.m, vec![m]).unwrap();
        a.set(self.b, vec![b]).unwrap();
        a.set(self.x, x.to_vec()).unwrap();
        a.set(self.y, y.to_vec()).unwrap();
        let mut part = vec![m, b];
        part.extend_from_slice(x);
        a.set(self.part, part).unwrap();
        a
    }
}

/// Nets `m`, `b` (scalars), `x`, `y` (length `n`) and one part reading
/// `(m, b, x)` whose output on `y` is `(m x_k + b)_k`.
pub fn regression_netlist(n: usize) -> Netlist {
    let mut nl = Netlist::new();
    let m = nl.add_net("m", ValueSpace::Scalar).unwrap();
    let b = nl.add_net("b", ValueSpace::Scalar).unwrap();
    let x = nl.add_net("x", ValueSpace::Series(n)).unwrap();
    let y = nl.add_net("y", ValueSpace::Series(n)).unwrap();
    let f = nl.add_part("f").unwrap();
    nl.add_input(f, "m", m).unwrap();
    nl.add_input(f, "b", b).unwrap();
    nl.add_input(f, "x", x).unwrap();
    let rows = (0..n)
        .map(|k| vec![Term::product(1.0, 0, 2 + k), Term::linear(1.0, 1)])
        .collect();
    nl.add_output(f, "y", y, Map::bilinear(n + 2, rows, vec![0.0; n]).unwrap())
        .unwrap();
    nl
}

pub fn regression_sheaf(n: usize) -> RegressionSheaf {
    let ns = sheaf_from_netlist(&regression_netlist(n)).expect("regression netlist is valid");
    RegressionSheaf {
        m: ns.net_cells[0],
        b: ns.net_cells[1],
        x: ns.net_cells[2],
        y: ns.net_cells[3],
        part: ns.part_cells[0],
        sheaf: ns.sheaf,
        ties: ns.ties,
    }
}

/// Value space of the feedback example's two variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackSpace {
    Real,
    IntegerGrid { lo: i64, hi: i64 },
}

/// Two scalar variables `x`, `y` with parts `F: x -> y` and `G: y -> x`.
#[derive(Clone, Debug)]
pub struct FeedbackSheaf {
    pub sheaf: SheafDiagram,
    pub ties: Vec<TieGroup>,
    pub space: FeedbackSpace,
    pub x: CellId,
    pub y: CellId,
    pub f_part: CellId,
    pub g_part: CellId,
}

pub fn feedback_sheaf(space: FeedbackSpace, f: Map, g: Map) -> Result<FeedbackSheaf, BuildError> {
    let mut nl = Netlist::new();
    let x = nl.add_net("x", ValueSpace::Scalar)?;
    let y = nl.add_net("y", ValueSpace::Scalar)?;
    let fp = nl.add_part("F")?;
    nl.add_input(fp, "x", x)?;
    nl.add_output(fp, "y", y, f)?;
    let gp = nl.add_part("G")?;
    nl.add_input(gp, "y", y)?;
    nl.add_output(gp, "x", x, g)?;
    let ns = sheaf_from_netlist(&nl)?;
    Ok(FeedbackSheaf {
        x: ns.net_cells[x],
        y: ns.net_cells[y],
        f_part: ns.part_cells[fp],
        g_part: ns.part_cells[gp],
        sheaf: ns.sheaf,
        ties: ns.ties,
        space,
    })
}

impl FeedbackSheaf {
    /// Global assignment with part copies equal to their nets.
    pub fn assignment(&self, x: f64, y: f64) -> Assignment {
        let mut a = Assignment::empty(&self.sheaf);
        a.set(self.x, vec![x]).unwrap();
        a.set(self.y, vec![y]).unwrap();
        a.set(self.f_part, vec![x]).unwrap();
        a.set(self.g_part, vec![y]).unwrap();
        a
    }

    /// Every grid pair `(x, y)` whose assignment is a section. Empty for real
    /// value spaces, which cannot be enumerated.
    pub fn grid_sections(&self) -> Vec<(i64, i64)> {
        let FeedbackSpace::IntegerGrid { lo, hi } = self.space else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for x in lo..=hi {
            for y in lo..=hi {
                let r =
                    consistency_radius(&self.sheaf, &self.assignment(x as f64, y as f64)).unwrap();
                if r == 0.0 {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// A single AR(k) variable `x` of length `n` with its filter and crop parts.
#[derive(Clone, Debug)]
pub struct ArSheaf {
    pub sheaf: SheafDiagram,
    pub ties: Vec<TieGroup>,
    pub x: CellId,
    pub coefficients: CellId,
    pub lag: CellId,
    pub filter: CellId,
    pub crop: CellId,
}

impl ArSheaf {
    /// Global assignment from coefficients and series, with the lag cell set
    /// to the cropped series.
    pub fn assignment(&self, a: &[f64], x: &[f64]) -> Assignment {
        let mut s = Assignment::empty(&self.sheaf);
        s.set(self.coefficients, a.to_vec()).unwrap();
        s.set(self.x, x.to_vec()).unwrap();
        let k = a.len();
        let mut fx = a.to_vec();
        fx.extend_from_slice(x);
        s.set(self.filter, fx).unwrap();
        s.set(self.crop, x.to_vec()).unwrap();
        s.set(self.lag, x[k..].to_vec()).unwrap();
        s
    }
}

pub fn ar_sheaf(k: usize, n: usize) -> Result<ArSheaf, BuildError> {
    let mut nl = Netlist::new();
    nl.add_net("x", ValueSpace::Series(n))?;
    let w = add_ar(&mut nl, &ArPartSpec::free("x", k, n), None)?;
    let ns = sheaf_from_netlist(&nl)?;
    Ok(ArSheaf {
        x: ns.net_cells[0],
        coefficients: ns.net_cells[w.coefficient_net],
        lag: ns.net_cells[w.lag_net],
        filter: ns.part_cells[w.filter_part],
        crop: ns.part_cells[w.crop_part],
        sheaf: ns.sheaf,
        ties: ns.ties,
    })
}

/// How many autoregressive lags each variable gets in the pipeline.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ArChoice {
    /// The spec's declared orders, raised to cover declared self-edges.
    #[default]
    Spec,
    /// The same order for every variable (0 = no AR structure).
    Uniform(usize),
    /// The order of each variable's own-history term in the DSEM update, so
    /// noiseless simulations are sections.
    Dynamics,
    PerVariable(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct DsemSheafOptions {
    pub series_len: usize,
    pub ar: ArChoice,
    pub explode: bool,
    /// Coordinate labels of every series (e.g. years); indices when absent.
    pub time_labels: Option<Vec<String>>,
    pub p: f64,
    pub scope: PairScope,
    /// Weight of each variable's observation cells (empty = all 1).
    pub observation_weights: Vec<f64>,
}

impl DsemSheafOptions {
    pub fn new(series_len: usize) -> Self {
        DsemSheafOptions {
            series_len,
            ar: ArChoice::Spec,
            explode: true,
            time_labels: None,
            p: 2.0,
            scope: PairScope::AllComparable,
            observation_weights: Vec::new(),
        }
    }

    pub fn ar(mut self, ar: ArChoice) -> Self {
        self.ar = ar;
        self
    }

    pub fn explode(mut self, explode: bool) -> Self {
        self.explode = explode;
        self
    }

    pub fn time_labels(mut self, labels: Vec<String>) -> Self {
        self.time_labels = Some(labels);
        self
    }

    pub fn scope(mut self, scope: PairScope) -> Self {
        self.scope = scope;
        self
    }
}

/// Cells of one variable's AR structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ArCells {
    pub order: usize,
    pub window: usize,
    pub coefficients: Vec<Coefficient>,
    pub coefficient_cell: CellId,
    pub lag_cell: CellId,
    pub window_cell: Option<CellId>,
}

/// A DSEM encoded as a (possibly AR-augmented, observation-exploded) sheaf.
#[derive(Clone, Debug)]
pub struct DsemSheaf {
    pub spec: DsemSpec,
    pub netlist: Netlist,
    pub sheaf: SheafDiagram,
    pub ties: Vec<TieGroup>,
    pub series_len: usize,
    pub net_cells: Vec<CellId>,
    pub part_cells: Vec<CellId>,
    pub variable_cells: Vec<CellId>,
    /// Per spec edge: the cell of its coefficient net when free.
    pub coefficient_cells: Vec<Option<CellId>>,
    pub ar: Vec<Option<ArCells>>,
    /// `[variable][t]`; empty when not exploded.
    pub observation_cells: Vec<Vec<CellId>>,
}

fn ar_orders(spec: &DsemSpec, choice: &ArChoice) -> Result<Vec<usize>, BuildError> {
    let j = spec.num_variables();
    let self_max = |v: usize| spec.self_edges(v).last().map_or(0, |e| e.0);
    Ok(match choice {
        ArChoice::Spec => (0..j)
            .map(|v| spec.ar_orders()[v].max(self_max(v)))
            .collect(),
        ArChoice::Uniform(0) => vec![0; j],
        ArChoice::Uniform(k) => (0..j).map(|v| (*k).max(self_max(v))).collect(),
        ArChoice::Dynamics => (0..j).map(|v| spec.own_lag(v)).collect(),
        ArChoice::PerVariable(orders) => {
            if orders.len() != j {
                return Err(DsemError::DimensionMismatch {
                    expected: j,
                    got: orders.len(),
                }
                .into());
            }
            orders.clone()
        }
    })
}

/// AR coefficients of `v` for order `k`: declared self-edges, zero for
/// undeclared lags; all free when no self-edge is declared.
fn ar_coefficients(spec: &DsemSpec, v: usize, k: usize) -> Vec<Coefficient> {
    let selfs = spec.self_edges(v);
    if selfs.is_empty() {
        return vec![Coefficient::Free; k];
    }
    (1..=k)
        .map(|lag| {
            selfs
                .iter()
                .find(|e| e.0 == lag)
                .map_or(Coefficient::Fixed(0.0), |e| e.1)
        })
        .collect()
}

impl DsemSheaf {
    pub fn build(spec: &DsemSpec, options: &DsemSheafOptions) -> Result<Self, BuildError> {
        let n = options.series_len;
        let mut netlist = netlist_from_dsem(spec, n);
        let orders = ar_orders(spec, &options.ar)?;
        let mut wiring = vec![None; spec.num_variables()];
        for (v, &k) in orders.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let max_in = spec.inbound(v).map(|e| e.lag).max().unwrap_or(0);
            let ar_spec = ArPartSpec {
                variable: spec.variables()[v].clone(),
                order: k,
                coefficients: ar_coefficients(spec, v, k),
                series_len: n,
            };
            let w = add_ar(&mut netlist, &ar_spec, Some(k.max(max_in)))?;
            wiring[v] = Some((ar_spec, w));
        }
        let ns = sheaf_from_netlist_with(&netlist, options.p, options.scope)?;
        let variable_cells: Vec<CellId> =
            (0..spec.num_variables()).map(|v| ns.net_cells[v]).collect();
        let mut sheaf = ns.sheaf;
        if let Some(labels) = &options.time_labels {
            if labels.len() != n {
                return Err(BuildError::LengthMismatch {
                    expected: n,
                    got: labels.len(),
                });
            }
        }
        let mut observation_cells = Vec::new();
        if options.explode {
            if let Some(labels) = &options.time_labels {
                sheaf = relabel_series(&sheaf, &variable_cells, labels)?;
            }
            let (exploded, obs) = explode_observations(&sheaf, &variable_cells, n)?;
            sheaf = exploded;
            observation_cells = obs;
            if !options.observation_weights.is_empty() {
                if options.observation_weights.len() != spec.num_variables() {
                    return Err(DsemError::DimensionMismatch {
                        expected: spec.num_variables(),
                        got: options.observation_weights.len(),
                    }
                    .into());
                }
                for (v, cells) in observation_cells.iter().enumerate() {
                    for &c in cells {
                        sheaf.set_weight(c, options.observation_weights[v])?;
                    }
                }
            }
        }
        let coefficient_cells = (0..spec.edges().len())
            .map(|i| {
                let e = &spec.edges()[i];
                (e.coefficient.is_free() && !e.is_autoregressive()).then(|| {
                    ns.net_cells[netlist
                        .net(&crate::netlist::coefficient_net_name(spec, i))
                        .unwrap()]
                })
            })
            .collect();
        let ar = wiring
            .into_iter()
            .map(|w| {
                w.map(|(s, w)| ArCells {
                    order: s.order,
                    window: w.window,
                    coefficients: s.coefficients,
                    coefficient_cell: ns.net_cells[w.coefficient_net],
                    lag_cell: ns.net_cells[w.lag_net],
                    window_cell: w.window_net.map(|x| ns.net_cells[x]),
                })
            })
            .collect();
        Ok(DsemSheaf {
            spec: spec.clone(),
            netlist,
            sheaf,
            ties: ns.ties,
            series_len: n,
            net_cells: ns.net_cells,
            part_cells: ns.part_cells,
            variable_cells,
            coefficient_cells,
            ar,
            observation_cells,
        })
    }

    pub fn is_exploded(&self) -> bool {
        !self.observation_cells.is_empty()
    }

    fn check_table(&self, table: &TimeseriesTable) -> Result<TimeseriesTable, BuildError> {
        let t = table.select(self.spec.variables())?;
        if t.len() != self.series_len {
            return Err(BuildError::LengthMismatch {
                expected: self.series_len,
                got: t.len(),
            });
        }
        Ok(t)
    }

    /// Observed entries on observation cells plus fixed AR coefficients.
    pub fn observation_assignment(
        &self,
        table: &TimeseriesTable,
    ) -> Result<Assignment, BuildError> {
        if !self.is_exploded() {
            return Err(BuildError::NotExploded);
        }
        let t = self.check_table(table)?;
        let mut a = Assignment::empty(&self.sheaf);
        for (v, cells) in self.observation_cells.iter().enumerate() {
            for (row, &c) in cells.iter().enumerate() {
                if let Some(x) = t.get(v, row) {
                    a.set(c, vec![x])?;
                }
            }
        }
        for ar in self.ar.iter().flatten() {
            if let Some(values) = ar
                .coefficients
                .iter()
                .map(|c| c.value())
                .collect::<Option<Vec<f64>>>()
            {
                a.set(ar.coefficient_cell, values)?;
            }
        }
        Ok(a)
    }

    /// The assignment induced by complete data and numeric coefficients taken
    /// from `values` (a spec with the same edges): series on variable nets,
    /// coefficients on coefficient nets, everything else pushed through the
    /// restrictions. Free AR coefficients take the spec's self-edges, or the
    /// unit shift `(1, 0, ..., 0)` when none are declared.
    pub fn induced_assignment(
        &self,
        table: &TimeseriesTable,
        values: &DsemSpec,
    ) -> Result<Assignment, BuildError> {
        let t = self.check_table(table)?;
        let mut a = Assignment::empty(&self.sheaf);
        for (v, &c) in self.variable_cells.iter().enumerate() {
            if let Some(row) = t.mask(v).iter().position(|o| !o) {
                return Err(BuildError::Incomplete {
                    variable: self.spec.variables()[v].clone(),
                    row,
                });
            }
            a.set(c, t.column(v).to_vec())?;
        }
        for (i, cell) in self.coefficient_cells.iter().enumerate() {
            if let Some(c) = cell {
                let e = &values.edges()[i];
                let val = e.coefficient.value().ok_or_else(|| {
                    DsemError::FreeCoefficientPresent(
                        values.variables()[e.source].clone(),
                        values.variables()[e.target].clone(),
                    )
                })?;
                a.set(*c, vec![val])?;
            }
        }
        for (v, ar) in self.ar.iter().enumerate() {
            if let Some(ar) = ar {
                a.set(ar.coefficient_cell, shift_or_declared(values, v, ar.order)?)?;
            }
        }
        let mut full = propagate(&self.sheaf, &self.ties, &a);
        for (v, cells) in self.observation_cells.iter().enumerate() {
            for (row, &c) in cells.iter().enumerate() {
                full.set(c, vec![t.column(v)[row]])?;
            }
        }
        Ok(full)
    }

    /// A global starting point: missing entries interpolated linearly between
    /// observed neighbours (0 beyond the ends, or when a variable is never
    /// observed), free path coefficients 0, free AR coefficients
    /// `(1, 0, ..., 0)`, derived cells pushed through the restrictions.
    pub fn initial_assignment(&self, table: &TimeseriesTable) -> Result<Assignment, BuildError> {
        let t = self.check_table(table)?;
        let mut a = Assignment::empty(&self.sheaf);
        for (v, &c) in self.variable_cells.iter().enumerate() {
            a.set(c, interpolate(t.column(v), t.mask(v)))?;
        }
        for c in self.coefficient_cells.iter().flatten() {
            a.set(*c, vec![0.0])?;
        }
        for ar in self.ar.iter().flatten() {
            let vals = ar
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| c.value().unwrap_or(if i == 0 { 1.0 } else { 0.0 }))
                .collect();
            a.set(ar.coefficient_cell, vals)?;
        }
        let mut full = propagate(&self.sheaf, &self.ties, &a);
        for (v, cells) in self.observation_cells.iter().enumerate() {
            for (row, &c) in cells.iter().enumerate() {
                let x = t
                    .get(v, row)
                    .unwrap_or(full.get(self.variable_cells[v]).unwrap()[row]);
                full.set(c, vec![x])?;
            }
        }
        Ok(full)
    }

    /// Carries a global assignment of `source`, a sheaf of the same DSEM with
    /// fewer free coefficients, over to this sheaf. Non-part cells are copied
    /// by label, coefficient cells missing from `source` take its fixed
    /// values, and part cells are rebuilt from their tied inputs, so the
    /// radius is unchanged. This makes `source`'s optimum a start for the
    /// larger problem.
    pub fn transfer(&self, source: &DsemSheaf, a: &Assignment) -> Result<Assignment, BuildError> {
        let mut out = Assignment::empty(&self.sheaf);
        for c in 0..self.sheaf.len() {
            if self.part_cells.contains(&c) {
                continue;
            }
            if let Some(v) = source
                .sheaf
                .find(self.sheaf.label(c))
                .and_then(|s| a.get(s))
            {
                out.set(c, v.to_vec())?;
            }
        }
        for (i, cell) in self.coefficient_cells.iter().enumerate() {
            if let Some(c) = cell {
                if !out.in_support(*c) {
                    let e = &source.spec.edges()[i];
                    let val = e.coefficient.value().ok_or_else(|| {
                        DsemError::FreeCoefficientPresent(
                            source.spec.variables()[e.source].clone(),
                            source.spec.variables()[e.target].clone(),
                        )
                    })?;
                    out.set(*c, vec![val])?;
                }
            }
        }
        Ok(propagate(&self.sheaf, &self.ties, &out))
    }

    /// Series on the variable nets of a global assignment.
    pub fn series(&self, a: &Assignment, times: &[i64]) -> TimeseriesTable {
        let columns = self
            .variable_cells
            .iter()
            .map(|&c| a.get(c).expect("global").to_vec())
            .collect();
        TimeseriesTable::from_columns(times.to_vec(), self.spec.variables().to_vec(), columns)
            .expect("series have the sheaf's length")
    }

    /// Path coefficient of every non-self edge: the fixed value or the value
    /// on its coefficient cell.
    pub fn path_coefficients(&self, a: &Assignment) -> Vec<(usize, f64)> {
        self.spec
            .path_edges()
            .map(|(i, e)| {
                let v = match self.coefficient_cells[i] {
                    Some(c) => a.get(c).expect("global")[0],
                    None => e.coefficient.value().expect("fixed"),
                };
                (i, v)
            })
            .collect()
    }

    /// AR coefficients `(variable, a_1..a_k)` read from the assignment.
    pub fn ar_coefficients(&self, a: &Assignment) -> Vec<(usize, Vec<f64>)> {
        self.ar
            .iter()
            .enumerate()
            .filter_map(|(v, ar)| {
                ar.as_ref()
                    .map(|ar| (v, a.get(ar.coefficient_cell).expect("global").to_vec()))
            })
            .collect()
    }

    /// Kind of a cell for reports.
    pub fn cell_kind(&self, cell: CellId) -> CellKind {
        if let Some((v, t)) = self.observation_of(cell) {
            return CellKind::Observation {
                variable: v,
                row: t,
            };
        }
        if let Some(v) = self.variable_cells.iter().position(|&c| c == cell) {
            return CellKind::Variable(v);
        }
        if self.part_cells.contains(&cell) {
            return CellKind::Part;
        }
        if self.coefficient_cells.contains(&Some(cell)) {
            return CellKind::PathCoefficient;
        }
        for (v, ar) in self.ar.iter().enumerate() {
            if let Some(ar) = ar {
                if ar.coefficient_cell == cell {
                    return CellKind::ArCoefficient(v);
                }
                if ar.lag_cell == cell || ar.window_cell == Some(cell) {
                    return CellKind::ArWindow(v);
                }
            }
        }
        CellKind::Other
    }

    /// Row of the data table that coordinate `i` of a series-shaped cell
    /// refers to: observation cells, variable series and AR window cells.
    pub fn row_of(&self, cell: CellId, i: usize) -> Option<usize> {
        match self.cell_kind(cell) {
            CellKind::Observation { row, .. } => Some(row),
            CellKind::Variable(_) => Some(i),
            CellKind::ArWindow(v) => self.ar[v].as_ref().map(|ar| i + ar.window),
            _ => None,
        }
    }

    pub fn observation_of(&self, cell: CellId) -> Option<(usize, usize)> {
        for (v, cells) in self.observation_cells.iter().enumerate() {
            if let (Some(&first), Some(&last)) = (cells.first(), cells.last()) {
                if cell >= first && cell <= last {
                    return Some((v, cell - first));
                }
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum CellKind {
    Observation { variable: usize, row: usize },
    Variable(usize),
    Part,
    PathCoefficient,
    ArCoefficient(usize),
    ArWindow(usize),
    Other,
}

fn shift_or_declared(spec: &DsemSpec, v: usize, k: usize) -> Result<Vec<f64>, BuildError> {
    let selfs = spec.self_edges(v);
    if selfs.is_empty() {
        let mut a = vec![0.0; k];
        a[0] = 1.0;
        return Ok(a);
    }
    (1..=k)
        .map(|lag| match selfs.iter().find(|e| e.0 == lag) {
            None => Ok(0.0),
            Some((_, c)) => c.value().ok_or_else(|| {
                BuildError::Dsem(DsemError::FreeCoefficientPresent(
                    spec.variables()[v].clone(),
                    spec.variables()[v].clone(),
                ))
            }),
        })
        .collect()
}

fn relabel_series(
    sheaf: &SheafDiagram,
    cells: &[CellId],
    labels: &[String],
) -> Result<SheafDiagram, BuildError> {
    let mut b = DiagramBuilder::new();
    for c in 0..sheaf.len() {
        let mut stalk = sheaf.stalk(c).clone();
        if cells.contains(&c) {
            stalk = stalk.with_labels(labels.to_vec());
        }
        b.add_cell(sheaf.label(c), stalk)?;
    }
    for r in sheaf.restrictions() {
        b.add_restriction(r.source, r.target, r.map.clone())?;
    }
    b.p_norm(sheaf.p()).scope(sheaf.scope());
    Ok(b.build()?)
}

/// Linear interpolation between observed entries; 0 outside the observed
/// range and for unobserved series.
pub fn interpolate(values: &[f64], observed: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..values.len()).filter(|&i| observed[i]).collect();
    (0..values.len())
        .map(|i| {
            if observed[i] {
                return values[i];
            }
            let before = idx.iter().rev().find(|&&j| j < i);
            let after = idx.iter().find(|&&j| j > i);
            match (before, after) {
                (Some(&a), Some(&b)) => {
                    let w = (i - a) as f64 / (b - a) as f64;
                    values[a] * (1.0 - w) + values[b] * w
                }
                _ => 0.0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{is_section, residual_breakdown};

    #[test]
    fn regression_shape_and_radius() {
        let r = regression_sheaf(3);
        assert_eq!(r.sheaf.len(), 5);
        assert_eq!(r.sheaf.dim(r.part), 5);
        assert_eq!(r.ties.len(), 3);
        let a = r.assignment(0.0, 1.0 / 3.0, &[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]);
        let radius = consistency_radius(&r.sheaf, &a).unwrap();
        assert!((radius - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let parts = residual_breakdown(&r.sheaf, &a).unwrap();
        let nonzero: Vec<_> = parts.iter().filter(|p| p.contribution > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let expect = [1.0 / 9.0, 4.0 / 9.0, 1.0 / 9.0];
        for (got, want) in nonzero[0].coordinates.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_a_section() {
        let r = regression_sheaf(3);
        let a = r.assignment(2.0, 0.0, &[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]);
        assert!(is_section(&r.sheaf, &a, 1e-9).unwrap());
    }

    #[test]
    fn feedback_sections() {
        let one_minus = Map::affine(
            nalgebra::DMatrix::from_element(1, 1, -1.0),
            nalgebra::DVector::from_element(1, 1.0),
        )
        .unwrap();
        let real =
            feedback_sheaf(FeedbackSpace::Real, one_minus.clone(), Map::identity(1)).unwrap();
        assert_eq!(
            consistency_radius(&real.sheaf, &real.assignment(0.5, 0.5)).unwrap(),
            0.0
        );
        let grid = feedback_sheaf(
            FeedbackSpace::IntegerGrid { lo: -5, hi: 5 },
            one_minus,
            Map::identity(1),
        )
        .unwrap();
        assert!(grid.grid_sections().is_empty());
        let id = feedback_sheaf(
            FeedbackSpace::IntegerGrid { lo: -2, hi: 2 },
            Map::identity(1),
            Map::identity(1),
        )
        .unwrap();
        assert_eq!(
            id.grid_sections(),
            (-2..=2).map(|v| (v, v)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn ar_examples() {
        let s = ar_sheaf(1, 4).unwrap();
        for (a, x) in [(1.0, [3.0, 3.0, 3.0, 3.0]), (2.0, [1.0, 2.0, 4.0, 8.0])] {
            assert_eq!(
                consistency_radius(&s.sheaf, &s.assignment(&[a], &x)).unwrap(),
                0.0
            );
        }
        let bad = s.assignment(&[2.0], &[1.0, 2.0, 4.0, 9.0]);
        assert_eq!(consistency_radius(&s.sheaf, &bad).unwrap(), 1.0);
        let parts = residual_breakdown(&s.sheaf, &bad).unwrap();
        assert_eq!(parts[0].coordinates, vec![0.0, 0.0, 1.0]);
        assert!(parts[1..].iter().all(|p| p.contribution == 0.0));
        assert!(matches!(
            ar_sheaf(4, 4),
            Err(BuildError::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn exploded_section_stays_a_section() {
        let r = regression_sheaf(2);
        let (d, obs) = explode_observations(&r.sheaf, &[r.x, r.y], 2).unwrap();
        assert_eq!(d.len(), 9);
        assert_eq!(d.label(obs[1][0]), "0_y");
        let base = r.assignment(2.0, 1.0, &[1.0, 2.0], &[3.0, 5.0]);
        let mut a = Assignment::empty(&d);
        for c in 0..r.sheaf.len() {
            a.set(c, base.get(c).unwrap().to_vec()).unwrap();
        }
        for (cells, vals) in obs.iter().zip([[1.0, 2.0], [3.0, 5.0]]) {
            for (&c, v) in cells.iter().zip(vals) {
                a.set(c, vec![v]).unwrap();
            }
        }
        assert_eq!(consistency_radius(&d, &a).unwrap(), 0.0);
        assert!(matches!(
            explode_observations(&r.sheaf, &[r.m], 2),
            Err(BuildError::NotSeries(..))
        ));
    }

    #[test]
    fn interpolation_fills_gaps() {
        let v = interpolate(
            &[f64::NAN, 1.0, f64::NAN, 3.0, f64::NAN],
            &[false, true, false, true, false],
        );
        assert_eq!(v, vec![0.0, 1.0, 2.0, 3.0, 0.0]);
    }

    fn bering(c: &[f64]) -> DsemSpec {
        use crate::dsem::Coefficient::Fixed;
        DsemSpec::builder([
            "SeaIce",
            "ColdPool",
            "Copepods",
            "Krill",
            "DietCopepods",
            "DietKrill",
            "Survival",
            "Spawners",
        ])
        .edge("SeaIce", "ColdPool", 0, Fixed(c[0]))
        .edge("ColdPool", "Copepods", 1, Fixed(c[1]))
        .edge("ColdPool", "Krill", 1, Fixed(c[2]))
        .edge("Copepods", "DietCopepods", 0, Fixed(c[3]))
        .edge("Krill", "DietKrill", 0, Fixed(c[4]))
        .edge("DietCopepods", "Survival", 0, Fixed(c[5]))
        .edge("DietKrill", "Survival", 0, Fixed(c[6]))
        .edge("Spawners", "Survival", 0, Fixed(c[7]))
        .build()
        .unwrap()
    }

    const COEFS: [f64; 8] = [0.6, 1.79, 0.18, 0.29, 0.06, 0.15, 0.13, -0.59];

    #[test]
    fn bering_plain_shape() {
        let spec = bering(&COEFS);
        let opts = DsemSheafOptions::new(10)
            .ar(ArChoice::Uniform(0))
            .explode(false);
        let d = DsemSheaf::build(&spec, &opts).unwrap();
        assert_eq!(d.part_cells.len(), 6);
        assert_eq!(d.net_cells.len(), 8);
        assert_eq!(d.sheaf.len(), 14);
        assert!(d.ar.iter().all(Option::is_none));
    }

    #[test]
    fn noiseless_simulation_induces_a_section() {
        let spec = bering(&COEFS);
        let init = [1.0, -0.5, 0.3, 0.2, -0.1, 0.4, 0.0, 0.7];
        let data = crate::dsem::simulate(&spec, 25, 0.0, 1, &init).unwrap();
        for explode in [false, true] {
            let opts = DsemSheafOptions::new(25)
                .ar(ArChoice::Dynamics)
                .explode(explode);
            let d = DsemSheaf::build(&spec, &opts).unwrap();
            let a = d.induced_assignment(&data, &spec).unwrap();
            assert!(a.is_global());
            assert!(consistency_radius(&d.sheaf, &a).unwrap() <= 1e-10);
        }
        let free = spec.clone().with_free_paths();
        let opts = DsemSheafOptions::new(25).ar(ArChoice::Dynamics);
        let d = DsemSheaf::build(&free, &opts).unwrap();
        assert_eq!(d.coefficient_cells.iter().flatten().count(), 8);
        let a = d.induced_assignment(&data, &spec).unwrap();
        assert!(consistency_radius(&d.sheaf, &a).unwrap() <= 1e-10);
        let got: Vec<f64> = d
            .path_coefficients(&a)
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        assert_eq!(got, COEFS.to_vec());
    }

    #[test]
    fn declared_ar_self_edges_are_sections() {
        use crate::dsem::Coefficient::Fixed;
        let spec = DsemSpec::builder(["x", "y"])
            .edge("x", "x", 1, Fixed(1.2))
            .edge("x", "x", 2, Fixed(-0.5))
            .edge("x", "y", 1, Fixed(0.7))
            .edge("y", "y", 1, Fixed(0.4))
            .h(0.5)
            .build()
            .unwrap();
        let data = crate::dsem::simulate(&spec, 12, 0.0, 3, &[1.0, -1.0]).unwrap();
        let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(12)).unwrap();
        assert_eq!(d.ar[0].as_ref().unwrap().order, 2);
        let a = d.induced_assignment(&data, &spec).unwrap();
        assert!(consistency_radius(&d.sheaf, &a).unwrap() <= 1e-10);
        let mut bent = a.clone();
        bent.get_mut(d.variable_cells[1]).unwrap()[7] += 0.1;
        assert!(consistency_radius(&d.sheaf, &bent).unwrap() > 0.0);
    }

    #[test]
    fn ties_cover_every_copy_once() {
        let spec = bering(&COEFS).with_free_paths();
        let d =
            DsemSheaf::build(&spec, &DsemSheafOptions::new(8).ar(ArChoice::Uniform(1))).unwrap();
        let mut seen = std::collections::HashSet::new();
        let inputs: usize = d.netlist.parts.iter().map(|p| p.inputs().count()).sum();
        for g in &d.ties {
            let len = g.slots[0].len;
            assert!(g.slots.iter().all(|s| s.len == len));
            for s in &g.slots[1..] {
                assert!(seen.insert(*s));
            }
        }
        assert_eq!(seen.len(), inputs);
    }

    #[test]
    fn observation_and_initial_assignments() {
        let spec = bering(&COEFS).with_free_paths();
        let mut data = crate::dsem::simulate(&bering(&COEFS), 10, 0.01, 2, &[]).unwrap();
        data.remove(2, 4);
        let d =
            DsemSheaf::build(&spec, &DsemSheafOptions::new(10).ar(ArChoice::Uniform(1))).unwrap();
        let obs = d.observation_assignment(&data).unwrap();
        assert_eq!(obs.support().len(), 8 * 10 - 1);
        let init = d.initial_assignment(&data).unwrap();
        assert!(init.is_global());
        let c = init.get(d.variable_cells[2]).unwrap();
        assert!((c[4] - 0.5 * (c[3] + c[5])).abs() < 1e-12);
        assert_eq!(
            d.cell_kind(d.observation_cells[2][4]),
            CellKind::Observation {
                variable: 2,
                row: 4
            }
        );
    }
}
