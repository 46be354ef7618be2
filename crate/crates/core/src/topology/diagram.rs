use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::poset::{CellId, Poset};
use super::TopologyError;
use crate::maps::{compose_rows, Map, SparseRows};

/// The value space on a cell: `R^dim` with weight `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stalk {
    pub dim: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

fn unit_weight() -> f64 {
    1.0
}

impl Stalk {
    pub fn new(dim: usize) -> Self {
        Stalk {
            dim,
            weight: 1.0,
            labels: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.dim, "one label per coordinate");
        self.labels = Some(labels);
        self
    }
}

/// Which comparable pairs enter the consistency radius.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    #[default]
    AllComparable,
    HasseOnly,
}

/// A declared restriction from the lower cell `source` to the higher cell `target`.
#[derive(Clone, Debug)]
pub struct Restriction {
    pub source: CellId,
    pub target: CellId,
    pub map: Map,
}

#[derive(Clone, Debug, Default)]
pub struct DiagramBuilder {
    labels: Vec<String>,
    stalks: Vec<Stalk>,
    restrictions: Vec<Restriction>,
    index: HashMap<String, CellId>,
    p: Option<f64>,
    scope: PairScope,
}

impl DiagramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_cell(
        &mut self,
        label: impl Into<String>,
        stalk: Stalk,
    ) -> Result<CellId, TopologyError> {
        let label = label.into();
        if self.index.contains_key(&label) {
            return Err(TopologyError::DuplicateLabel(label));
        }
        if !(stalk.weight.is_finite() && stalk.weight > 0.0) {
            return Err(TopologyError::InvalidWeight(stalk.weight));
        }
        let id = self.labels.len();
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        self.stalks.push(stalk);
        Ok(id)
    }

    pub fn cell(&self, label: &str) -> Option<CellId> {
        self.index.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn add_restriction(
        &mut self,
        source: CellId,
        target: CellId,
        map: Map,
    ) -> Result<(), TopologyError> {
        let n = self.labels.len();
        if source >= n || target >= n {
            return Err(TopologyError::UnknownCell(format!(
                "cell {}",
                source.max(target)
            )));
        }
        if source == target {
            return Err(TopologyError::SelfRestriction(self.labels[source].clone()));
        }
        if self
            .restrictions
            .iter()
            .any(|r| r.source == source && r.target == target)
        {
            return Err(TopologyError::DuplicateRestriction(
                self.labels[source].clone(),
                self.labels[target].clone(),
            ));
        }
        let (src_dim, dst_dim) = (self.stalks[source].dim, self.stalks[target].dim);
        if map.input_dim() != src_dim || map.output_dim() != dst_dim {
            return Err(TopologyError::MapShape {
                source_cell: self.labels[source].clone(),
                target: self.labels[target].clone(),
                map_in: map.input_dim(),
                map_out: map.output_dim(),
                src_dim,
                dst_dim,
            });
        }
        self.restrictions.push(Restriction {
            source,
            target,
            map,
        });
        Ok(())
    }

    pub fn p_norm(&mut self, p: f64) -> &mut Self {
        self.p = Some(p);
        self
    }

    pub fn scope(&mut self, scope: PairScope) -> &mut Self {
        self.scope = scope;
        self
    }

    pub fn build(self) -> Result<SheafDiagram, TopologyError> {
        let p = self.p.unwrap_or(2.0);
        if !(p.is_finite() && p >= 1.0) {
            return Err(TopologyError::InvalidNorm(p));
        }
        let relation: Vec<(usize, usize)> = self
            .restrictions
            .iter()
            .map(|r| (r.source, r.target))
            .collect();
        let poset = Poset::from_relation(&self.labels, &relation)?;
        if let Some(c) = (0..poset.len()).find(|&c| poset.members(c).len() > 1) {
            return Err(TopologyError::CyclicRestrictions(
                poset.label(c).to_string(),
            ));
        }
        SheafDiagram::assemble(poset, self.stalks, self.restrictions, p, self.scope)
    }
}

/// A sheaf diagram on a finite poset: stalks on cells and restriction maps
/// on declared pairs, composed along canonical routes for other comparable
/// pairs.
#[derive(Clone, Debug)]
pub struct SheafDiagram {
    poset: Poset,
    stalks: Vec<Stalk>,
    restrictions: Vec<Restriction>,
    incoming: Vec<Vec<usize>>,
    direct: HashMap<(CellId, CellId), usize>,
    p: f64,
    scope: PairScope,
    /// For each source cell, the in-scope targets in evaluation order with the
    /// restriction used for the last hop.
    plans: Vec<Vec<(CellId, usize)>>,
    /// Last-hop restriction for every strict pair.
    via: HashMap<(CellId, CellId), usize>,
    offsets: Vec<usize>,
}

impl SheafDiagram {
    fn assemble(
        poset: Poset,
        stalks: Vec<Stalk>,
        restrictions: Vec<Restriction>,
        p: f64,
        scope: PairScope,
    ) -> Result<Self, TopologyError> {
        let n = poset.len();
        let mut incoming = vec![Vec::new(); n];
        let mut direct = HashMap::new();
        for (i, r) in restrictions.iter().enumerate() {
            incoming[r.target].push(i);
            direct.insert((r.source, r.target), i);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for s in &stalks {
            offsets.push(acc);
            acc += s.dim;
        }
        offsets.push(acc);
        let mut diagram = SheafDiagram {
            poset,
            stalks,
            restrictions,
            incoming,
            direct,
            p,
            scope,
            plans: Vec::new(),
            via: HashMap::new(),
            offsets,
        };
        diagram.plan();
        Ok(diagram)
    }

    fn plan(&mut self) {
        let n = self.poset.len();
        let mut position = vec![0; n];
        for (i, &c) in self.poset.topological_order().iter().enumerate() {
            position[c] = i;
        }
        let mut via = HashMap::new();
        for x in 0..n {
            for y in self.poset.above(x).iter().filter(|&y| y != x) {
                let r = match self.direct.get(&(x, y)) {
                    Some(&r) => r,
                    None => *self.incoming[y]
                        .iter()
                        .find(|&&r| self.poset.leq(x, self.restrictions[r].source))
                        .expect("comparable pair must be reachable through declared restrictions"),
                };
                via.insert((x, y), r);
            }
        }
        let plans = (0..n)
            .map(|x| {
                let mut targets: Vec<CellId> = match self.scope {
                    PairScope::AllComparable => {
                        self.poset.above(x).iter().filter(|&y| y != x).collect()
                    }
                    PairScope::HasseOnly => self
                        .poset
                        .hasse_edges()
                        .iter()
                        .filter(|e| e.0 == x)
                        .map(|e| e.1)
                        .collect(),
                };
                targets.sort_by_key(|&y| position[y]);
                targets.into_iter().map(|y| (y, via[&(x, y)])).collect()
            })
            .collect();
        self.via = via;
        self.plans = plans;
    }

    pub fn poset(&self) -> &Poset {
        &self.poset
    }

    pub fn len(&self) -> usize {
        self.poset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poset.is_empty()
    }

    pub fn label(&self, cell: CellId) -> &str {
        self.poset.label(cell)
    }

    pub fn find(&self, label: &str) -> Option<CellId> {
        self.poset.find(label)
    }

    pub fn cell(&self, label: &str) -> Result<CellId, TopologyError> {
        self.find(label)
            .ok_or_else(|| TopologyError::UnknownCell(label.to_string()))
    }

    pub fn stalk(&self, cell: CellId) -> &Stalk {
        &self.stalks[cell]
    }

    pub fn stalks(&self) -> &[Stalk] {
        &self.stalks
    }

    pub fn dim(&self, cell: CellId) -> usize {
        self.stalks[cell].dim
    }

    pub fn weight(&self, cell: CellId) -> f64 {
        self.stalks[cell].weight
    }

    /// Offset of `cell`'s first coordinate when all stalks are concatenated.
    pub fn offset(&self, cell: CellId) -> usize {
        self.offsets[cell]
    }

    pub fn total_dim(&self) -> usize {
        self.offsets[self.len()]
    }

    pub fn restrictions(&self) -> &[Restriction] {
        &self.restrictions
    }

    /// Restrictions declared into `target`.
    pub fn incoming(&self, target: CellId) -> impl Iterator<Item = &Restriction> {
        self.incoming[target].iter().map(|&r| &self.restrictions[r])
    }

    pub fn declared(&self, source: CellId, target: CellId) -> Option<&Map> {
        self.direct
            .get(&(source, target))
            .map(|&r| &self.restrictions[r].map)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn scope(&self) -> PairScope {
        self.scope
    }

    pub fn with_scope(mut self, scope: PairScope) -> Self {
        self.scope = scope;
        self.plan();
        self
    }

    pub fn with_p(mut self, p: f64) -> Result<Self, TopologyError> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(TopologyError::InvalidNorm(p));
        }
        self.p = p;
        Ok(self)
    }

    pub fn set_weight(&mut self, cell: CellId, weight: f64) -> Result<(), TopologyError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(TopologyError::InvalidWeight(weight));
        }
        self.stalks[cell].weight = weight;
        Ok(())
    }

    /// In-scope pairs `(lower, upper)` in evaluation order.
    pub fn pairs(&self) -> Vec<(CellId, CellId)> {
        self.plans
            .iter()
            .enumerate()
            .flat_map(|(x, plan)| plan.iter().map(move |&(y, _)| (x, y)))
            .collect()
    }

    pub(crate) fn plan_from(&self, x: CellId) -> &[(CellId, usize)] {
        &self.plans[x]
    }

    /// Declared restrictions composed for `x < y`, first hop first.
    pub fn route(&self, x: CellId, y: CellId) -> Option<Vec<&Restriction>> {
        let mut hops = Vec::new();
        let mut cur = y;
        while cur != x {
            let hop = &self.restrictions[*self.via.get(&(x, cur))?];
            hops.push(hop);
            cur = hop.source;
        }
        hops.reverse();
        Some(hops)
    }

    /// The restriction from `x` to `y >= x` along its canonical route.
    pub fn restrict(&self, x: CellId, y: CellId, value: &[f64]) -> Option<Vec<f64>> {
        if x == y {
            return Some(value.to_vec());
        }
        let &r = self.via.get(&(x, y))?;
        let hop = &self.restrictions[r];
        let inner = self.restrict(x, hop.source, value)?;
        Some(hop.map.eval(&inner))
    }

    /// Images of `value` (on `x`) in every in-scope target above `x`.
    pub fn images_from(&self, x: CellId, value: &[f64]) -> Vec<(CellId, Vec<f64>)> {
        let mut memo: HashMap<CellId, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(self.plans[x].len());
        for &(y, r) in &self.plans[x] {
            let hop = &self.restrictions[r];
            let img = if hop.source == x {
                hop.map.eval(value)
            } else {
                let inner = self.memo_image(x, hop.source, value, &mut memo);
                hop.map.eval(&inner)
            };
            memo.insert(y, img.clone());
            out.push((y, img));
        }
        out
    }

    fn memo_image(
        &self,
        x: CellId,
        y: CellId,
        value: &[f64],
        memo: &mut HashMap<CellId, Vec<f64>>,
    ) -> Vec<f64> {
        if let Some(v) = memo.get(&y) {
            return v.clone();
        }
        let hop = &self.restrictions[self.via[&(x, y)]];
        let inner = if hop.source == x {
            value.to_vec()
        } else {
            self.memo_image(x, hop.source, value, memo)
        };
        let img = hop.map.eval(&inner);
        memo.insert(y, img.clone());
        img
    }

    /// Like [`images_from`](Self::images_from), also returning each image's
    /// Jacobian with respect to `value`.
    pub fn images_with_jacobians(
        &self,
        x: CellId,
        value: &[f64],
    ) -> Vec<(CellId, Vec<f64>, SparseRows)> {
        let mut memo: HashMap<CellId, (Vec<f64>, SparseRows)> = HashMap::new();
        let mut out = Vec::with_capacity(self.plans[x].len());
        for &(y, r) in &self.plans[x] {
            let entry = self.memo_jacobian(x, y, r, value, &mut memo);
            out.push((y, entry.0, entry.1));
        }
        out
    }

    fn memo_jacobian(
        &self,
        x: CellId,
        y: CellId,
        r: usize,
        value: &[f64],
        memo: &mut HashMap<CellId, (Vec<f64>, SparseRows)>,
    ) -> (Vec<f64>, SparseRows) {
        if let Some(v) = memo.get(&y) {
            return v.clone();
        }
        let hop = &self.restrictions[r];
        let entry = if hop.source == x {
            (hop.map.eval(value), hop.map.jacobian_rows(value))
        } else {
            let r_inner = self.via[&(x, hop.source)];
            let (inner, j_inner) = self.memo_jacobian(x, hop.source, r_inner, value, memo);
            let j = compose_rows(&hop.map.jacobian_rows(&inner), &j_inner);
            (hop.map.eval(&inner), j)
        };
        memo.insert(y, entry.clone());
        entry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composed_images_follow_routes() {
        let mut b = DiagramBuilder::new();
        let a = b.add_cell("a", Stalk::new(2)).unwrap();
        let m = b.add_cell("m", Stalk::new(2)).unwrap();
        let t = b.add_cell("t", Stalk::new(1)).unwrap();
        b.add_restriction(
            a,
            m,
            Map::linear(nalgebra::DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, 1.0, 0.0],
            )),
        )
        .unwrap();
        b.add_restriction(m, t, Map::block(2, 0, 1)).unwrap();
        let d = b.build().unwrap();
        assert_eq!(d.pairs().len(), 3);
        let imgs = d.images_with_jacobians(a, &[3.0, 5.0]);
        let at_t = imgs.iter().find(|e| e.0 == t).unwrap();
        assert_eq!(at_t.1, vec![5.0]);
        assert_eq!(at_t.2, vec![vec![(1, 1.0)]]);
        assert_eq!(d.restrict(a, t, &[3.0, 5.0]), Some(vec![5.0]));
        let hasse = d.clone().with_scope(PairScope::HasseOnly);
        assert_eq!(hasse.pairs().len(), 2);
    }

    #[test]
    fn builder_rejects_bad_input() {
        let mut b = DiagramBuilder::new();
        let a = b.add_cell("a", Stalk::new(1)).unwrap();
        let c = b.add_cell("c", Stalk::new(1)).unwrap();
        assert!(matches!(
            b.add_cell("a", Stalk::new(1)),
            Err(TopologyError::DuplicateLabel(_))
        ));
        assert!(matches!(
            b.add_restriction(a, c, Map::identity(2)),
            Err(TopologyError::MapShape { .. })
        ));
        b.add_restriction(a, c, Map::identity(1)).unwrap();
        b.add_restriction(c, a, Map::identity(1)).unwrap();
        assert!(matches!(
            b.build(),
            Err(TopologyError::CyclicRestrictions(_))
        ));
    }
}
