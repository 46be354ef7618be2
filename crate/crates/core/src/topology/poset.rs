use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::TopologyError;

pub type CellId = usize;

/// Fixed-size bit set used for the cached transitive closure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSet {
    words: Vec<u64>,
    len: usize,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + b)
            })
        })
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// A finite partial order with cached closure and Hasse diagram.
///
/// When the generating relation is acyclic, cell ids equal element ids.
/// Otherwise cycles are condensed and cells are numbered topologically.
#[derive(Clone, Debug)]
pub struct Poset {
    labels: Vec<String>,
    topo: Vec<CellId>,
    members: Vec<Vec<usize>>,
    element_cell: Vec<CellId>,
    above: Vec<BitSet>,
    below: Vec<BitSet>,
    hasse: Vec<(CellId, CellId)>,
}

impl Poset {
    /// Builds the order generated by `relations` (`(a, b)` meaning `a <= b`) on
    /// elements labelled by `labels`. Cycles are condensed into single cells
    /// whose label joins the member labels with `|`.
    pub fn from_relation(
        labels: &[String],
        relations: &[(usize, usize)],
    ) -> Result<Self, TopologyError> {
        let n = labels.len();
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, relations.len());
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for &(a, b) in relations {
            if a >= n || b >= n {
                return Err(TopologyError::UnknownCell(format!("element {}", a.max(b))));
            }
            g.add_edge(nodes[a], nodes[b], ());
        }
        // Tarjan returns components in reverse topological order.
        let mut sccs = tarjan_scc(&g);
        sccs.reverse();
        if sccs.iter().all(|c| c.len() == 1) {
            let topo: Vec<CellId> = sccs.iter().map(|c| c[0].index()).collect();
            let mut edges: Vec<(CellId, CellId)> =
                relations.iter().copied().filter(|(a, b)| a != b).collect();
            edges.sort_unstable();
            edges.dedup();
            let members = (0..n).map(|e| vec![e]).collect();
            return Ok(Self::from_dag(
                labels.to_vec(),
                members,
                (0..n).collect(),
                topo,
                &edges,
            ));
        }
        let mut element_cell = vec![0; n];
        let mut members = Vec::with_capacity(sccs.len());
        for (cell, comp) in sccs.iter().enumerate() {
            let mut m: Vec<usize> = comp.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            for &e in &m {
                element_cell[e] = cell;
            }
            members.push(m);
        }
        let cell_labels = members
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&e| labels[e].as_str())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect();
        let mut edges: Vec<(CellId, CellId)> = relations
            .iter()
            .map(|&(a, b)| (element_cell[a], element_cell[b]))
            .filter(|(a, b)| a != b)
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let topo = (0..members.len()).collect();
        Ok(Self::from_dag(
            cell_labels,
            members,
            element_cell,
            topo,
            &edges,
        ))
    }

    fn from_dag(
        labels: Vec<String>,
        members: Vec<Vec<usize>>,
        element_cell: Vec<CellId>,
        topo: Vec<CellId>,
        edges: &[(CellId, CellId)],
    ) -> Self {
        let n = labels.len();
        let mut succ = vec![Vec::new(); n];
        for &(a, b) in edges {
            succ[a].push(b);
        }
        let mut above: Vec<BitSet> = (0..n).map(|_| BitSet::new(n)).collect();
        for &x in topo.iter().rev() {
            let mut set = BitSet::new(n);
            set.insert(x);
            for &y in &succ[x] {
                set.union_with(&above[y]);
            }
            above[x] = set;
        }
        let mut below: Vec<BitSet> = (0..n).map(|_| BitSet::new(n)).collect();
        for x in 0..n {
            for y in above[x].iter() {
                below[y].insert(x);
            }
        }
        let mut hasse = Vec::new();
        for x in 0..n {
            for &y in &succ[x] {
                let covered = succ[x].iter().any(|&z| z != y && above[z].contains(y));
                if !covered {
                    hasse.push((x, y));
                }
            }
        }
        hasse.sort_unstable();
        hasse.dedup();
        Poset {
            labels,
            topo,
            members,
            element_cell,
            above,
            below,
            hasse,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Cells ordered so that `x < y` puts `x` first.
    pub fn topological_order(&self) -> &[CellId] {
        &self.topo
    }

    pub fn label(&self, cell: CellId) -> &str {
        &self.labels[cell]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn find(&self, label: &str) -> Option<CellId> {
        self.labels.iter().position(|l| l == label)
    }

    /// Original elements condensed into `cell`.
    pub fn members(&self, cell: CellId) -> &[usize] {
        &self.members[cell]
    }

    pub fn cell_of(&self, element: usize) -> CellId {
        self.element_cell[element]
    }

    pub fn leq(&self, x: CellId, y: CellId) -> bool {
        self.above[x].contains(y)
    }

    fn check(&self, cell: CellId) -> Result<(), TopologyError> {
        if cell < self.len() {
            Ok(())
        } else {
            Err(TopologyError::UnknownCell(format!("cell {cell}")))
        }
    }

    /// `{y : cell <= y}`, the smallest open set containing `cell`.
    pub fn up_set(&self, cell: CellId) -> Result<Vec<CellId>, TopologyError> {
        self.check(cell)?;
        Ok(self.above[cell].iter().collect())
    }

    pub fn down_set(&self, cell: CellId) -> Result<Vec<CellId>, TopologyError> {
        self.check(cell)?;
        Ok(self.below[cell].iter().collect())
    }

    pub(crate) fn above(&self, cell: CellId) -> &BitSet {
        &self.above[cell]
    }

    pub fn hasse_edges(&self) -> &[(CellId, CellId)] {
        &self.hasse
    }

    pub fn covers(&self, x: CellId, y: CellId) -> bool {
        self.hasse.binary_search(&(x, y)).is_ok()
    }

    /// All pairs `x < y`.
    pub fn strict_pairs(&self) -> Vec<(CellId, CellId)> {
        (0..self.len())
            .flat_map(|x| {
                self.above[x]
                    .iter()
                    .filter(move |&y| y != x)
                    .map(move |y| (x, y))
            })
            .collect()
    }

    pub fn minimal(&self) -> Vec<CellId> {
        (0..self.len())
            .filter(|&x| self.below[x].count() == 1)
            .collect()
    }

    pub fn maximal(&self) -> Vec<CellId> {
        (0..self.len())
            .filter(|&x| self.above[x].count() == 1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_up_sets() {
        let p = Poset::from_relation(&labels(&["a", "b", "c"]), &[(0, 1), (1, 2)]).unwrap();
        let a = p.find("a").unwrap();
        let c = p.find("c").unwrap();
        assert_eq!(p.up_set(a).unwrap().len(), 3);
        assert_eq!(p.up_set(c).unwrap(), vec![c]);
        assert_eq!(p.hasse_edges().len(), 2);
        assert!(p.leq(a, c) && !p.covers(a, c));
    }

    #[test]
    fn cycles_condense() {
        let p = Poset::from_relation(&labels(&["x", "y", "z"]), &[(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(p.len(), 2);
        let xy = p.find("x|y").unwrap();
        assert_eq!(p.members(xy), &[0, 1]);
        assert_eq!(p.cell_of(2), p.find("z").unwrap());
        assert!(p.leq(xy, p.cell_of(2)));
    }

    #[test]
    fn unknown_cell_is_an_error() {
        let p = Poset::from_relation(&labels(&["a"]), &[]).unwrap();
        assert!(matches!(p.up_set(3), Err(TopologyError::UnknownCell(_))));
    }
}
