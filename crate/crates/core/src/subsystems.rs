//! Subsystems of DSEM dynamics: in-closed variable sets, the sheaf of
//! subsystems with its update endomorphism, and table-driven checks on
//! finite dynamical systems (subsystems, invariant sets and their cosheaf,
//! pullbacks, meets).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dsem::{DsemError, DsemSpec};
use crate::maps::Map;
use crate::topology::{DiagramBuilder, SheafDiagram, Stalk, TopologyError};

/// Default cap on enumerated in-closed sets.
pub const IN_CLOSED_CAP: usize = 1 << 16;
/// Default cap on the state count for invariant-set enumeration.
pub const STATE_BOUND: usize = 12;

#[derive(Debug, Error)]
pub enum SubsystemError {
    #[error("more than {cap} sets to enumerate")]
    TooLarge { cap: usize },
    #[error("{size} states exceed the bound of {bound}")]
    StateBound { size: usize, bound: usize },
    #[error("graphs with more than 64 vertices are not supported")]
    TooManyVertices,
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("table entry {index} maps to {value}, outside 0..{size}")]
    BadTable {
        index: usize,
        value: usize,
        size: usize,
    },
    #[error("projection misses element {0} of its codomain")]
    NotSurjective(usize),
    #[error("the set is not invariant: {0} leaves it")]
    NotInvariant(usize),
    #[error("(g, p) is not a subsystem: p(f({0})) != g(p({0}))")]
    NotASubsystem(usize),
    #[error("`{variable}` depends on `{source_var}`, which is outside the set")]
    NotInClosed {
        variable: String,
        source_var: String,
    },
    #[error("coefficient {0} is not an integer; table dynamics need integer coefficients")]
    NonIntegral(f64),
    #[error(transparent)]
    Dsem(#[from] DsemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Variable-level dependency graph of a DSEM with feedback loops condensed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsemDag {
    variables: Vec<String>,
    members: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    ancestors: Vec<u64>,
}

impl DsemDag {
    /// Edges of the spec with lags and self-edges dropped.
    pub fn from_spec(spec: &DsemSpec) -> Result<Self, SubsystemError> {
        let edges: Vec<(usize, usize)> = spec
            .path_edges()
            .map(|(_, e)| (e.source, e.target))
            .collect();
        Self::build(spec.variables().to_vec(), &edges)
    }

    pub fn from_edges(variables: &[&str], edges: &[(&str, &str)]) -> Result<Self, SubsystemError> {
        let names: Vec<String> = variables.iter().map(|s| s.to_string()).collect();
        let find = |n: &str| {
            names
                .iter()
                .position(|v| v == n)
                .ok_or_else(|| SubsystemError::UnknownVertex(n.into()))
        };
        let idx = edges
            .iter()
            .map(|(a, b)| Ok((find(a)?, find(b)?)))
            .collect::<Result<Vec<_>, SubsystemError>>()?;
        Self::build(names, &idx)
    }

    fn build(variables: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, SubsystemError> {
        let mut g: DiGraph<usize, ()> = DiGraph::new();
        let nodes: Vec<_> = (0..variables.len()).map(|v| g.add_node(v)).collect();
        for &(a, b) in edges {
            if a != b {
                g.add_edge(nodes[a], nodes[b], ());
            }
        }
        let mut members: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut m: Vec<usize> = c.into_iter().map(|n| g[n]).collect();
                m.sort_unstable();
                m
            })
            .collect();
        if members.len() > 64 {
            return Err(SubsystemError::TooManyVertices);
        }
        members.sort_by_key(|m| m[0]);
        let mut vertex_of = vec![0; variables.len()];
        for (i, m) in members.iter().enumerate() {
            for &v in m {
                vertex_of[v] = i;
            }
        }
        let mut dag_edges: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| (vertex_of[a], vertex_of[b]))
            .filter(|(a, b)| a != b)
            .collect();
        dag_edges.sort_unstable();
        dag_edges.dedup();
        let n = members.len();
        // Strict ancestors by fixed-point iteration; n <= 64.
        let mut ancestors = vec![0u64; n];
        loop {
            let mut changed = false;
            for &(a, b) in &dag_edges {
                let next = ancestors[b] | ancestors[a] | (1 << a);
                if next != ancestors[b] {
                    ancestors[b] = next;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(DsemDag {
            variables,
            members,
            edges: dag_edges,
            ancestors,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    /// Original variables collapsed into vertex `v`.
    pub fn members(&self, v: usize) -> &[usize] {
        &self.members[v]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self, v: usize) -> String {
        self.members[v]
            .iter()
            .map(|&i| self.variables[i].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn is_in_closed(&self, set: u64) -> bool {
        self.edges
            .iter()
            .all(|&(a, b)| set & (1 << b) == 0 || set & (1 << a) != 0)
    }

    /// Original variable indices of a vertex set, ascending.
    pub fn variables_of(&self, set: u64) -> Vec<usize> {
        let mut out: Vec<usize> = bits(set)
            .flat_map(|v| self.members[v].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn set_label(&self, set: u64) -> String {
        let names: Vec<&str> = self
            .variables_of(set)
            .into_iter()
            .map(|v| self.variables[v].as_str())
            .collect();
        format!("{{{}}}", names.join(","))
    }
}

fn bits(set: u64) -> impl Iterator<Item = usize> {
    let mut rest = set;
    std::iter::from_fn(move || {
        if rest == 0 {
            return None;
        }
        let b = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        Some(b)
    })
}

fn set_key(set: u64) -> (u32, Vec<usize>) {
    (set.count_ones(), bits(set).collect())
}

/// Every in-closed vertex set (including the empty set and all vertices),
/// sorted by size and then lexicographically by vertex index. Each set is
/// the ancestor closure of the antichain of its maximal vertices.
pub fn in_closed_sets(dag: &DsemDag) -> Result<Vec<u64>, SubsystemError> {
    in_closed_sets_capped(dag, IN_CLOSED_CAP)
}

pub fn in_closed_sets_capped(dag: &DsemDag, cap: usize) -> Result<Vec<u64>, SubsystemError> {
    fn extend(
        dag: &DsemDag,
        order: &[usize],
        from: usize,
        chosen: u64,
        closure: u64,
        cap: usize,
        out: &mut Vec<u64>,
    ) -> Result<(), SubsystemError> {
        out.push(closure);
        if out.len() > cap {
            return Err(SubsystemError::TooLarge { cap });
        }
        for (pos, &v) in order.iter().enumerate().skip(from) {
            // Later vertices in topological order are never ancestors of
            // earlier ones, so only this direction needs checking.
            if dag.ancestors[v] & chosen == 0 {
                extend(
                    dag,
                    order,
                    pos + 1,
                    chosen | (1 << v),
                    closure | dag.ancestors[v] | (1 << v),
                    cap,
                    out,
                )?;
            }
        }
        Ok(())
    }
    let mut order: Vec<usize> = (0..dag.len()).collect();
    order.sort_by_key(|&v| (dag.ancestors[v].count_ones(), v));
    let mut out = Vec::new();
    extend(dag, &order, 0, 0, 0, cap, &mut out)?;
    out.sort_by_key(|&s| set_key(s));
    Ok(out)
}

/// Covering pairs `(i, j)` of the inclusion order on `sets`: `sets[i]` is a
/// proper subset of `sets[j]` with nothing in between.
pub fn inclusion_hasse(sets: &[u64]) -> Vec<(usize, usize)> {
    let sub = |a: u64, b: u64| a != b && a & !b == 0;
    let mut out = Vec::new();
    for (i, &a) in sets.iter().enumerate() {
        for (j, &b) in sets.iter().enumerate() {
            if sub(a, b) && !sets.iter().any(|&c| sub(a, c) && sub(c, b)) {
                out.push((i, j));
            }
        }
    }
    out
}

/// The in-closed lattice in a serializable form.
#[derive(Clone, Debug, Serialize)]
pub struct SubsystemLattice {
    pub sets: Vec<Vec<String>>,
    /// `(smaller, larger)` covering pairs by index into `sets`.
    pub hasse: Vec<(usize, usize)>,
}

impl SubsystemLattice {
    pub fn new(dag: &DsemDag, sets: &[u64]) -> Self {
        SubsystemLattice {
            sets: sets
                .iter()
                .map(|&s| {
                    dag.variables_of(s)
                        .into_iter()
                        .map(|v| dag.variables[v].clone())
                        .collect()
                })
                .collect(),
            hasse: inclusion_hasse(sets),
        }
    }

    /// Graphviz rendering with larger subsystems drawn lower.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph subsystems {\n  rankdir=BT;\n");
        for (i, set) in self.sets.iter().enumerate() {
            let _ = writeln!(s, "  s{i} [label=\"{{{}}}\"];", set.join(", "));
        }
        for (a, b) in &self.hasse {
            let _ = writeln!(s, "  s{b} -> s{a};");
        }
        s.push_str("}\n");
        s
    }
}

/// Window length of each variable's state: enough past values for its own
/// update and for every lagged edge leaving it.
pub fn state_windows(spec: &DsemSpec) -> Vec<usize> {
    (0..spec.num_variables())
        .map(|v| {
            let out = spec
                .path_edges()
                .filter(|(_, e)| e.source == v)
                .map(|(_, e)| e.lag)
                .max()
                .unwrap_or(0);
            spec.own_lag(v).max(out).max(1)
        })
        .collect()
}

/// Coordinates `(variable, j)` holding `x_variable(t - j)` for a variable
/// subset, variables ascending.
pub fn state_layout(vars: &[usize], windows: &[usize]) -> Vec<(usize, usize)> {
    vars.iter()
        .flat_map(|&v| (0..windows[v]).map(move |j| (v, j)))
        .collect()
}

/// One noiseless step of the DSEM restricted to `vars` as a matrix on the
/// layout of [`state_layout`]. Fails if a member depends on a variable
/// outside `vars`.
pub fn update_matrix(
    spec: &DsemSpec,
    vars: &[usize],
    windows: &[usize],
) -> Result<DMatrix<f64>, SubsystemError> {
    spec.require_numeric()?;
    let layout = state_layout(vars, windows);
    let index: BTreeMap<(usize, usize), usize> =
        layout.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let dim = layout.len();
    let h = spec.h();
    let mut fresh: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for v in spec.lag0_order()?.into_iter().filter(|v| vars.contains(v)) {
        let mut row = DVector::zeros(dim);
        let selfs = spec.self_edges(v);
        if selfs.is_empty() {
            row[index[&(v, 0)]] += 1.0;
        }
        for (lag, c) in selfs {
            row[index[&(v, lag - 1)]] += c.value().expect("numeric");
        }
        for e in spec.inbound(v) {
            if !vars.contains(&e.source) {
                return Err(SubsystemError::NotInClosed {
                    variable: spec.variables()[v].clone(),
                    source_var: spec.variables()[e.source].clone(),
                });
            }
            let g = h * e.coefficient.value().expect("numeric");
            if e.lag == 0 {
                row += &fresh[&e.source] * g;
            } else {
                row[index[&(e.source, e.lag - 1)]] += g;
            }
        }
        fresh.insert(v, row);
    }
    let mut m = DMatrix::zeros(dim, dim);
    for (i, &(v, j)) in layout.iter().enumerate() {
        if j == 0 {
            m.set_row(i, &fresh[&v].transpose());
        } else {
            m[(i, index[&(v, j - 1)])] = 1.0;
        }
    }
    Ok(m)
}

/// The sheaf of subsystems of a DSEM: one cell per nonempty in-closed set,
/// stalk = the members' state windows, restrictions = coordinate projections
/// from larger to smaller sets. With dynamics, each cell carries its update.
#[derive(Clone, Debug)]
pub struct SubsystemSheaf {
    pub sheaf: SheafDiagram,
    pub sets: Vec<u64>,
    pub layouts: Vec<Vec<(usize, usize)>>,
    pub windows: Vec<usize>,
    pub updates: Option<Vec<Map>>,
}

pub fn subsystem_sheaf_from_dag(
    dag: &DsemDag,
    windows: &[usize],
) -> Result<SubsystemSheaf, SubsystemError> {
    let sets: Vec<u64> = in_closed_sets(dag)?
        .into_iter()
        .filter(|&s| s != 0)
        .collect();
    let layouts: Vec<Vec<(usize, usize)>> = sets
        .iter()
        .map(|&s| state_layout(&dag.variables_of(s), windows))
        .collect();
    let mut b = DiagramBuilder::new();
    for (i, &s) in sets.iter().enumerate() {
        b.add_cell(dag.set_label(s), Stalk::new(layouts[i].len()))?;
    }
    for (small, large) in inclusion_hasse(&sets) {
        let indices = layouts[small]
            .iter()
            .map(|c| {
                layouts[large]
                    .iter()
                    .position(|d| d == c)
                    .expect("subset coordinates")
            })
            .collect();
        b.add_restriction(
            large,
            small,
            Map::projection(layouts[large].len(), indices).expect("in range"),
        )?;
    }
    Ok(SubsystemSheaf {
        sheaf: b.build()?,
        sets,
        layouts,
        windows: windows.to_vec(),
        updates: None,
    })
}

/// Subsystem sheaf of a numeric DSEM with each cell's update attached.
pub fn subsystem_sheaf(spec: &DsemSpec) -> Result<SubsystemSheaf, SubsystemError> {
    let dag = DsemDag::from_spec(spec)?;
    let windows = state_windows(spec);
    let mut s = subsystem_sheaf_from_dag(&dag, &windows)?;
    let updates = s
        .sets
        .iter()
        .map(|&set| update_matrix(spec, &dag.variables_of(set), &windows).map(Map::linear))
        .collect::<Result<Vec<_>, _>>()?;
    s.updates = Some(updates);
    Ok(s)
}

impl SubsystemSheaf {
    /// Largest `|R(g_x(s)) - g_y(R(s))|` over restrictions `x -> y` and
    /// random states `s`; zero when every update square commutes.
    pub fn endomorphism_residual(&self, samples: usize, seed: u64) -> Option<f64> {
        let updates = self.updates.as_ref()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for r in self.sheaf.restrictions() {
            for _ in 0..samples {
                let s: Vec<f64> = (0..self.sheaf.dim(r.source))
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let lhs = r.map.eval(&updates[r.source].eval(&s));
                let rhs = updates[r.target].eval(&r.map.eval(&s));
                worst = lhs
                    .iter()
                    .zip(&rhs)
                    .fold(worst, |m, (a, b)| m.max((a - b).abs()));
            }
        }
        Some(worst)
    }

    /// Largest `|P f(s) - g P(s)|` between the full update `f` and each
    /// cell's own update `g` on random full states.
    pub fn commuting_residual(
        &self,
        spec: &DsemSpec,
        samples: usize,
        seed: u64,
    ) -> Result<f64, SubsystemError> {
        let all: Vec<usize> = (0..spec.num_variables()).collect();
        let full = update_matrix(spec, &all, &self.windows)?;
        let full_layout = state_layout(&all, &self.windows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for layout in &self.layouts {
            let vars: Vec<usize> = layout.iter().filter(|c| c.1 == 0).map(|c| c.0).collect();
            let g = update_matrix(spec, &vars, &self.windows)?;
            let pick: Vec<usize> = layout
                .iter()
                .map(|c| full_layout.iter().position(|d| d == c).unwrap())
                .collect();
            for _ in 0..samples {
                let s = DVector::from_fn(full_layout.len(), |_, _| rng.random_range(-1.0..1.0));
                let fs = &full * &s;
                let ps = DVector::from_fn(pick.len(), |i, _| s[pick[i]]);
                let gps = &g * ps;
                for (i, &k) in pick.iter().enumerate() {
                    worst = worst.max((fs[k] - gps[i]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// A self-map of the finite set `0..n` given as a table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FiniteDyn {
    table: Vec<usize>,
}

impl FiniteDyn {
    pub fn new(table: Vec<usize>) -> Result<Self, SubsystemError> {
        check_table(&table, table.len())?;
        Ok(FiniteDyn { table })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> usize) -> Result<Self, SubsystemError> {
        Self::new((0..n).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn apply(&self, s: usize) -> usize {
        self.table[s]
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn is_bijective(&self) -> bool {
        let mut hit = vec![false; self.len()];
        self.table
            .iter()
            .all(|&t| !std::mem::replace(&mut hit[t], true))
    }

    /// Whether `f(V) ⊆ V` for the bitmask `set`.
    pub fn is_invariant(&self, set: u64) -> bool {
        bits(set).all(|s| set & (1 << self.table[s]) != 0)
    }

    /// Forward orbit of `s`, including `s`, as a bitmask.
    pub fn orbit_closure(&self, s: usize) -> u64 {
        let mut set = 0u64;
        let mut cur = s;
        while set & (1 << cur) == 0 {
            set |= 1 << cur;
            cur = self.table[cur];
        }
        set
    }
}

fn check_table(table: &[usize], size: usize) -> Result<(), SubsystemError> {
    match table.iter().enumerate().find(|(_, &v)| v >= size) {
        Some((index, &value)) => Err(SubsystemError::BadTable { index, value, size }),
        None => Ok(()),
    }
}

/// Every invariant set of `f` as a bitmask, sorted by size and then
/// lexicographically: all unions of forward-orbit closures.
pub fn invariant_sets(f: &FiniteDyn, bound: usize) -> Result<Vec<u64>, SubsystemError> {
    if f.len() > bound.min(64) {
        return Err(SubsystemError::StateBound {
            size: f.len(),
            bound: bound.min(64),
        });
    }
    let mut closures: Vec<u64> = (0..f.len()).map(|s| f.orbit_closure(s)).collect();
    closures.sort_unstable();
    closures.dedup();
    let mut sets = vec![0u64];
    for c in closures {
        let grown: Vec<u64> = sets.iter().map(|s| s | c).collect();
        sets.extend(grown);
        sets.sort_unstable();
        sets.dedup();
    }
    sets.sort_by_key(|&s| set_key(s));
    Ok(sets)
}

pub fn set_members(set: u64) -> Vec<usize> {
    bits(set).collect()
}

pub fn set_from(members: &[usize]) -> u64 {
    members.iter().fold(0, |s, &m| s | (1 << m))
}

/// Result of testing whether a projection carries a subsystem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsystemCheck {
    /// `g` with `p ∘ f = g ∘ p`.
    Subsystem { g: Vec<usize> },
    /// `p(x) = p(y)` but `p(f(x)) != p(f(y))`.
    Witness { x: usize, y: usize },
}

impl SubsystemCheck {
    pub fn map(&self) -> Option<&[usize]> {
        match self {
            SubsystemCheck::Subsystem { g } => Some(g),
            SubsystemCheck::Witness { .. } => None,
        }
    }
}

/// Decides whether the surjection `p: S -> 0..codomain` induces a subsystem
/// of `f`, returning its map `g` or a pair of states that rules it out.
pub fn check_subsystem(
    f: &FiniteDyn,
    p: &[usize],
    codomain: usize,
) -> Result<SubsystemCheck, SubsystemError> {
    check_projection(f, p, codomain)?;
    let mut g: Vec<Option<(usize, usize)>> = vec![None; codomain];
    for s in 0..f.len() {
        let image = p[f.apply(s)];
        match g[p[s]] {
            None => g[p[s]] = Some((image, s)),
            Some((seen, witness)) if seen != image => {
                return Ok(SubsystemCheck::Witness { x: witness, y: s })
            }
            Some(_) => {}
        }
    }
    Ok(SubsystemCheck::Subsystem {
        g: g.into_iter().map(|e| e.expect("surjective").0).collect(),
    })
}

fn check_projection(f: &FiniteDyn, p: &[usize], codomain: usize) -> Result<(), SubsystemError> {
    if p.len() != f.len() {
        return Err(SubsystemError::BadTable {
            index: p.len(),
            value: f.len(),
            size: f.len(),
        });
    }
    check_table(p, codomain)?;
    let mut hit = vec![false; codomain];
    for &b in p {
        hit[b] = true;
    }
    match hit.iter().position(|h| !h) {
        Some(b) => Err(SubsystemError::NotSurjective(b)),
        None => Ok(()),
    }
}

fn verify_subsystem(f: &FiniteDyn, p: &[usize], g: &[usize]) -> Result<(), SubsystemError> {
    check_projection(f, p, g.len())?;
    check_table(g, g.len())?;
    match (0..f.len()).find(|&s| p[f.apply(s)] != g[p[s]]) {
        Some(s) => Err(SubsystemError::NotASubsystem(s)),
        None => Ok(()),
    }
}

/// `p^{-1}(V)` for a `g`-invariant `V ⊆ B` (bitmask over `B`); the result is
/// invariant under `f`.
pub fn pullback_invariant(
    f: &FiniteDyn,
    p: &[usize],
    g: &[usize],
    v: u64,
) -> Result<u64, SubsystemError> {
    verify_subsystem(f, p, g)?;
    let gd = FiniteDyn::new(g.to_vec())?;
    if let Some(b) = bits(v).find(|&b| v & (1 << gd.apply(b)) == 0) {
        return Err(SubsystemError::NotInvariant(b));
    }
    let pre = (0..f.len())
        .filter(|&s| v & (1 << p[s]) != 0)
        .fold(0u64, |acc, s| acc | (1 << s));
    assert!(
        f.is_invariant(pre),
        "preimage of an invariant set must be invariant"
    );
    Ok(pre)
}

/// The meet of two subsystems: the pushout `B3 = (B1 ⊔ B2)/~` of `p1`, `p2`
/// with its induced map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Meet {
    pub size: usize,
    /// `B1 -> B3`.
    pub q1: Vec<usize>,
    /// `B2 -> B3`.
    pub q2: Vec<usize>,
    pub p: Vec<usize>,
    pub g: Vec<usize>,
}

pub fn subsystem_meet(
    f: &FiniteDyn,
    first: (&[usize], &[usize]),
    second: (&[usize], &[usize]),
) -> Result<Meet, SubsystemError> {
    let (p1, g1) = first;
    let (p2, g2) = second;
    verify_subsystem(f, p1, g1)?;
    verify_subsystem(f, p2, g2)?;
    let n1 = g1.len();
    let mut parent: Vec<usize> = (0..n1 + g2.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for s in 0..f.len() {
        let (a, b) = (root(&mut parent, p1[s]), root(&mut parent, n1 + p2[s]));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut class = BTreeMap::new();
    let labels: Vec<usize> = (0..parent.len())
        .map(|i| {
            let r = root(&mut parent, i);
            let next = class.len();
            *class.entry(r).or_insert(next)
        })
        .collect();
    let size = class.len();
    let q1 = labels[..n1].to_vec();
    let q2 = labels[n1..].to_vec();
    let mut g = vec![usize::MAX; size];
    for (b, &c) in q1.iter().enumerate() {
        g[c] = q1[g1[b]];
    }
    // The universal property forces the two candidate maps to agree.
    for (b, &c) in q2.iter().enumerate() {
        assert_eq!(g[c], q2[g2[b]], "pushout map is well defined");
    }
    let p = (0..f.len()).map(|s| q1[p1[s]]).collect();
    Ok(Meet { size, q1, q2, p, g })
}

/// Whether `q ∘ g1 = g2 ∘ q` with `q` a bijection.
pub fn conjugates(g1: &[usize], g2: &[usize], q: &[usize]) -> bool {
    let n = g1.len();
    if g2.len() != n || q.len() != n || q.iter().any(|&v| v >= n) {
        return false;
    }
    let mut hit = vec![false; n];
    q.iter().all(|&v| !std::mem::replace(&mut hit[v], true)) && (0..n).all(|s| q[g1[s]] == g2[q[s]])
}

/// Invariant sets of `f` with inclusions as extension maps.
#[derive(Clone, Debug)]
pub struct InvariantCosheaf {
    pub f: FiniteDyn,
    pub sets: Vec<u64>,
    /// Covering inclusions `(smaller, larger)`.
    pub extensions: Vec<(usize, usize)>,
}

/// A glued cosection space: each class lists `(cover member, state)` copies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glued {
    pub classes: Vec<Vec<(usize, usize)>>,
}

impl Glued {
    /// Whether the classes biject with `target` via their underlying states.
    pub fn bijects_with(&self, target: u64) -> bool {
        let mut seen = 0u64;
        for class in &self.classes {
            let s = class[0].1;
            if class.iter().any(|c| c.1 != s) || seen & (1 << s) != 0 {
                return false;
            }
            seen |= 1 << s;
        }
        seen == target
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GluingReport {
    pub covers_checked: usize,
    pub failures: Vec<(u64, Vec<u64>)>,
    /// Invariant sets whose covers were sampled rather than exhausted.
    pub sampled_sets: usize,
}

pub fn cosheaf_of_invariants(
    f: &FiniteDyn,
    bound: usize,
) -> Result<InvariantCosheaf, SubsystemError> {
    let sets = invariant_sets(f, bound)?;
    let extensions = inclusion_hasse(&sets);
    Ok(InvariantCosheaf {
        f: f.clone(),
        sets,
        extensions,
    })
}

impl InvariantCosheaf {
    fn index(&self, set: u64) -> Option<usize> {
        self.sets.iter().position(|&s| s == set)
    }

    /// Glues the costalks of a cover (indices into `sets`): the disjoint
    /// union of the members, with points identified through the extension
    /// maps out of each pairwise overlap, which is again an invariant set.
    pub fn glue(&self, cover: &[usize]) -> Glued {
        let mut points: Vec<(usize, usize)> = Vec::new();
        let mut slot = BTreeMap::new();
        for (k, &c) in cover.iter().enumerate() {
            for s in bits(self.sets[c]) {
                slot.insert((k, s), points.len());
                points.push((k, s));
            }
        }
        let mut parent: Vec<usize> = (0..points.len()).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (k1, &c1) in cover.iter().enumerate() {
            for (k2, &c2) in cover.iter().enumerate().skip(k1 + 1) {
                let overlap = self.sets[c1] & self.sets[c2];
                debug_assert!(
                    self.index(overlap).is_some(),
                    "overlaps of invariant sets are invariant"
                );
                for s in bits(overlap) {
                    let (a, b) = (
                        root(&mut parent, slot[&(k1, s)]),
                        root(&mut parent, slot[&(k2, s)]),
                    );
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut classes: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for i in 0..points.len() {
            let r = root(&mut parent, i);
            classes.entry(r).or_default().push(points[i]);
        }
        Glued {
            classes: classes.into_values().collect(),
        }
    }

    /// Glues covers of every invariant set and checks each result against
    /// the set it covers. Covers are all subfamilies of the set's invariant
    /// subsets when there are at most `exhaustive_limit` of them; otherwise
    /// all covers of up to three members plus `samples` random ones.
    pub fn check_gluing(&self, exhaustive_limit: usize, samples: usize, seed: u64) -> GluingReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = GluingReport::default();
        for &v in &self.sets {
            let subs: Vec<usize> = (0..self.sets.len())
                .filter(|&i| self.sets[i] & !v == 0 && self.sets[i] != 0)
                .collect();
            let check = |family: Vec<usize>, report: &mut GluingReport| {
                let union = family.iter().fold(0u64, |u, &i| u | self.sets[i]);
                if union != v {
                    return;
                }
                report.covers_checked += 1;
                if !self.glue(&family).bijects_with(v) {
                    report
                        .failures
                        .push((v, family.iter().map(|&i| self.sets[i]).collect()));
                }
            };
            if subs.len() <= exhaustive_limit {
                for mask in 1u64..(1 << subs.len()) {
                    check(bits(mask).map(|b| subs[b]).collect(), &mut report);
                }
            } else {
                report.sampled_sets += 1;
                for a in 0..subs.len() {
                    check(vec![subs[a]], &mut report);
                    for b in a + 1..subs.len() {
                        check(vec![subs[a], subs[b]], &mut report);
                        for c in b + 1..subs.len() {
                            check(vec![subs[a], subs[b], subs[c]], &mut report);
                        }
                    }
                }
                for _ in 0..samples {
                    let family: Vec<usize> = subs
                        .iter()
                        .copied()
                        .filter(|_| rng.random_bool(0.5))
                        .collect();
                    check(family, &mut report);
                }
            }
        }
        report
    }

    /// Whether `f` restricts to each invariant set and commutes with every
    /// extension map.
    pub fn endomorphism_commutes(&self) -> bool {
        self.sets.iter().all(|&s| self.f.is_invariant(s))
            && self.extensions.iter().all(|&(u, v)| {
                bits(self.sets[u]).all(|x| {
                    let fx = self.f.apply(x);
                    self.sets[u] & (1 << fx) != 0 && self.sets[v] & (1 << fx) != 0
                })
            })
    }
}

/// State table of a DSEM with integer coefficients over `Z_m`, each state
/// encoding the window layout of all variables in mixed radix.
#[derive(Clone, Debug)]
pub struct DsemTable {
    pub dynamics: FiniteDyn,
    pub layout: Vec<(usize, usize)>,
    pub modulus: usize,
}

pub fn dsem_table(
    spec: &DsemSpec,
    modulus: usize,
    max_states: usize,
) -> Result<DsemTable, SubsystemError> {
    let windows = state_windows(spec);
    let all: Vec<usize> = (0..spec.num_variables()).collect();
    let layout = state_layout(&all, &windows);
    let size = (0..layout.len())
        .try_fold(1usize, |acc, _| acc.checked_mul(modulus))
        .filter(|&s| s <= max_states);
    let size = size.ok_or(SubsystemError::StateBound {
        size: usize::MAX,
        bound: max_states,
    })?;
    let m = update_matrix(spec, &all, &windows)?;
    let mut int = vec![vec![0i64; layout.len()]; layout.len()];
    for (i, row) in int.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let v = m[(i, j)];
            if (v - v.round()).abs() > 1e-9 {
                return Err(SubsystemError::NonIntegral(v));
            }
            *e = v.round() as i64;
        }
    }
    let md = modulus as i64;
    let table = (0..size)
        .map(|s| {
            let x = decode(s, layout.len(), modulus);
            let y: Vec<usize> = int
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&x)
                        .map(|(a, &b)| a * b as i64)
                        .sum::<i64>()
                        .rem_euclid(md) as usize
                })
                .collect();
            encode(&y, modulus)
        })
        .collect();
    Ok(DsemTable {
        dynamics: FiniteDyn::new(table)?,
        layout,
        modulus,
    })
}

fn decode(mut s: usize, len: usize, m: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let d = s % m;
            s /= m;
            d
        })
        .collect()
}

fn encode(x: &[usize], m: usize) -> usize {
    x.iter().rev().fold(0, |acc, &d| acc * m + d)
}

impl DsemTable {
    /// Projection keeping the coordinates of `vars`, with its codomain size.
    pub fn projection(&self, vars: &[usize]) -> (Vec<usize>, usize) {
        let keep: Vec<usize> = (0..self.layout.len())
            .filter(|&i| vars.contains(&self.layout[i].0))
            .collect();
        let p = (0..self.dynamics.len())
            .map(|s| {
                let x = decode(s, self.layout.len(), self.modulus);
                encode(
                    &keep.iter().map(|&i| x[i]).collect::<Vec<_>>(),
                    self.modulus,
                )
            })
            .collect();
        (p, self.modulus.pow(keep.len() as u32))
    }
}

/// Invariant subspaces of an invertible 2x2 matrix over `Z_q` (`q` prime)
/// next to the subspaces whose quotient projection is a subsystem of the
/// table dynamics. States are `x + q y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearCorrespondence {
    pub dynamics: FiniteDyn,
    pub subspaces: Vec<u64>,
    pub invariant: Vec<u64>,
    pub subsystem_kernels: Vec<u64>,
}

pub fn linear_correspondence(
    m: [[u64; 2]; 2],
    q: u64,
) -> Result<LinearCorrespondence, SubsystemError> {
    let n = (q * q) as usize;
    let state = |x: u64, y: u64| (x % q + q * (y % q)) as usize;
    let dynamics = FiniteDyn::from_fn(n, |s| {
        let (x, y) = (s as u64 % q, s as u64 / q);
        state(m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
    })?;
    let span = |v: (u64, u64)| (0..q).fold(0u64, |acc, t| acc | (1 << state(t * v.0, t * v.1)));
    let mut subspaces = vec![1u64, (1u64 << n) - 1];
    subspaces.push(span((0, 1)));
    subspaces.extend((0..q).map(|a| span((1, a))));
    subspaces.sort_by_key(|&s| set_key(s));
    let invariant = subspaces
        .iter()
        .copied()
        .filter(|&s| dynamics.is_invariant(s))
        .collect();
    let mut subsystem_kernels = Vec::new();
    for &k in &subspaces {
        // Cosets of k, numbered by first appearance.
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let (x, y) = (s as u64 % q, s as u64 / q);
            for t in bits(k) {
                let (a, b) = (t as u64 % q, t as u64 / q);
                label[state(x + a, y + b)] = next;
            }
            next += 1;
        }
        if let SubsystemCheck::Subsystem { .. } = check_subsystem(&dynamics, &label, next)? {
            subsystem_kernels.push(k);
        }
    }
    Ok(LinearCorrespondence {
        dynamics,
        subspaces,
        invariant,
        subsystem_kernels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsem::Coefficient::Fixed;

    fn named(dag: &DsemDag, sets: &[u64]) -> Vec<String> {
        sets.iter().map(|&s| dag.set_label(s)).collect()
    }

    #[test]
    fn chain_and_fork_and_cycle() {
        let d = DsemDag::from_edges(&["A", "B"], &[("A", "B")]).unwrap();
        assert_eq!(
            named(&d, &in_closed_sets(&d).unwrap()),
            ["{}", "{A}", "{A,B}"]
        );
        let d = DsemDag::from_edges(&["A", "B", "C"], &[("A", "B"), ("A", "C")]).unwrap();
        assert_eq!(
            named(&d, &in_closed_sets(&d).unwrap()),
            ["{}", "{A}", "{A,B}", "{A,C}", "{A,B,C}"]
        );
        let d = DsemDag::from_edges(&["A", "B"], &[("A", "B"), ("B", "A")]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(named(&d, &in_closed_sets(&d).unwrap()), ["{}", "{A,B}"]);
    }

    #[test]
    fn collider_includes_both_sources() {
        let d = DsemDag::from_edges(&["A", "B", "C"], &[("A", "C"), ("B", "C")]).unwrap();
        assert_eq!(
            named(&d, &in_closed_sets(&d).unwrap()),
            ["{}", "{A}", "{B}", "{A,B}", "{A,B,C}"]
        );
    }

    #[test]
    fn cap_is_enforced() {
        let names: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let d = DsemDag::from_edges(&refs, &[]).unwrap();
        assert_eq!(in_closed_sets(&d).unwrap().len(), 1024);
        assert!(matches!(
            in_closed_sets_capped(&d, 100),
            Err(SubsystemError::TooLarge { .. })
        ));
    }

    #[test]
    fn chain_sheaf_drops_downstream_coordinates() {
        let spec = DsemSpec::builder(["A", "B"])
            .edge("A", "A", 1, Fixed(0.5))
            .edge("A", "B", 1, Fixed(2.0))
            .build()
            .unwrap();
        let s = subsystem_sheaf(&spec).unwrap();
        assert_eq!(s.sheaf.len(), 2);
        assert_eq!(s.sheaf.restrictions().len(), 1);
        let r = &s.sheaf.restrictions()[0];
        assert_eq!(s.sheaf.label(r.source), "{A,B}");
        assert_eq!(r.map.eval(&[1.0, 2.0]), vec![1.0]);
        assert_eq!(s.endomorphism_residual(20, 1), Some(0.0));
        assert!(s.commuting_residual(&spec, 20, 2).unwrap() <= 1e-12);
    }

    #[test]
    fn pr1_is_a_subsystem_of_the_switch() {
        // f(x, y, z) = (1 - x, y(1 - x) + zx, z(1 - x) + yx) on {0,1}^3, s = 4x + 2y + z.
        let f = FiniteDyn::from_fn(8, |s| {
            let (x, y, z) = (s >> 2, (s >> 1) & 1, s & 1);
            let nx = 1 - x;
            let ny = y * (1 - x) + z * x;
            let nz = z * (1 - x) + y * x;
            4 * nx + 2 * ny + nz
        })
        .unwrap();
        let p: Vec<usize> = (0..8).map(|s| s >> 2).collect();
        assert_eq!(
            check_subsystem(&f, &p, 2).unwrap(),
            SubsystemCheck::Subsystem { g: vec![1, 0] }
        );
        let id: Vec<usize> = (0..8).collect();
        assert_eq!(
            check_subsystem(&f, &id, 8).unwrap().map().unwrap(),
            f.table()
        );
        let pz: Vec<usize> = (0..8).map(|s| s & 1).collect();
        assert!(matches!(
            check_subsystem(&f, &pz, 2).unwrap(),
            SubsystemCheck::Witness { .. }
        ));
        assert!(matches!(
            check_subsystem(&f, &pz, 3),
            Err(SubsystemError::NotSurjective(2))
        ));
    }

    #[test]
    fn invariant_set_examples() {
        let id = FiniteDyn::new((0..4).collect()).unwrap();
        assert_eq!(invariant_sets(&id, STATE_BOUND).unwrap().len(), 16);
        let cycle = FiniteDyn::new(vec![1, 2, 3, 0]).unwrap();
        assert_eq!(
            invariant_sets(&cycle, STATE_BOUND).unwrap(),
            vec![0, 0b1111]
        );
        // a = 0, b = 1 fixed; t = 2 -> a.
        let f = FiniteDyn::new(vec![0, 1, 0]).unwrap();
        let got: Vec<Vec<usize>> = invariant_sets(&f, STATE_BOUND)
            .unwrap()
            .into_iter()
            .map(set_members)
            .collect();
        assert_eq!(
            got,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![0, 1],
                vec![0, 2],
                vec![0, 1, 2]
            ]
        );
        assert!(matches!(
            invariant_sets(&FiniteDyn::new((0..13).collect()).unwrap(), 12),
            Err(SubsystemError::StateBound { .. })
        ));
    }

    #[test]
    fn gluing_examples() {
        let f = FiniteDyn::new(vec![0, 1, 0]).unwrap();
        let c = cosheaf_of_invariants(&f, STATE_BOUND).unwrap();
        let idx = |m: &[usize]| c.sets.iter().position(|&s| s == set_from(m)).unwrap();
        let g = c.glue(&[idx(&[0]), idx(&[1])]);
        assert_eq!(g.classes.len(), 2);
        assert!(g.bijects_with(set_from(&[0, 1])));
        let g = c.glue(&[idx(&[0, 2]), idx(&[0, 1])]);
        assert_eq!(g.classes.len(), 3);
        assert!(g.bijects_with(set_from(&[0, 1, 2])));
        assert!(c.check_gluing(10, 0, 0).failures.is_empty());
        assert!(c.endomorphism_commutes());
    }

    #[test]
    fn pullback_and_meet() {
        let f = FiniteDyn::new(vec![0, 1, 0]).unwrap();
        let p = vec![0, 1, 0];
        let g = vec![0, 1];
        assert_eq!(pullback_invariant(&f, &p, &g, 0b11).unwrap(), 0b111);
        assert_eq!(pullback_invariant(&f, &p, &g, 0b01).unwrap(), 0b101);
        let swap = vec![1, 0];
        assert!(matches!(
            pullback_invariant(&f, &p, &swap, 0b01),
            Err(SubsystemError::NotASubsystem(_))
        ));
        let m = subsystem_meet(&f, (&p, &g), (&p, &g)).unwrap();
        assert_eq!(m.size, 2);
        assert!(conjugates(&g, &m.g, &m.q1));
    }

    #[test]
    fn translation_subsystem_is_not_invariant() {
        // f(x, y) = (x, y + 1 mod 4) on x in 0..3, p(x, y) = (x, 0).
        let f = FiniteDyn::from_fn(12, |s| (s / 4) * 4 + (s % 4 + 1) % 4).unwrap();
        let p: Vec<usize> = (0..12).map(|s| s / 4).collect();
        assert_eq!(
            check_subsystem(&f, &p, 3).unwrap().map().unwrap(),
            &[0, 1, 2]
        );
        let b = set_from(&[0, 4, 8]);
        assert!(!f.is_invariant(b));
    }

    #[test]
    fn linear_kernels_match_invariant_subspaces() {
        for m in [
            [[1, 1], [0, 1]],
            [[2, 0], [0, 1]],
            [[0, 1], [1, 0]],
            [[0, 1], [2, 0]],
        ] {
            let c = linear_correspondence(m, 3).unwrap();
            assert_eq!(c.invariant, c.subsystem_kernels, "{m:?}");
        }
    }
}
