use serde::{Deserialize, Serialize};

use super::assignment::Assignment;
use super::diagram::{DiagramBuilder, PairScope, SheafDiagram, Stalk};
use super::TopologyError;
use crate::maps::Map;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellJson {
    pub label: String,
    #[serde(flatten)]
    pub stalk: Stalk,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RestrictionJson {
    pub source: String,
    pub target: String,
    pub map: Map,
}

/// Serialized sheaf diagram. Restrictions are the declared ones; other
/// comparable pairs are recomposed on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SheafJson {
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub scope: PairScope,
    pub cells: Vec<CellJson>,
    pub hasse: Vec<(String, String)>,
    pub restrictions: Vec<RestrictionJson>,
}

fn default_p() -> f64 {
    2.0
}

impl SheafJson {
    pub fn from_diagram(d: &SheafDiagram) -> Self {
        let label = |c: usize| d.label(c).to_string();
        SheafJson {
            p: d.p(),
            scope: d.scope(),
            cells: (0..d.len())
                .map(|c| CellJson {
                    label: label(c),
                    stalk: d.stalk(c).clone(),
                })
                .collect(),
            hasse: d
                .poset()
                .hasse_edges()
                .iter()
                .map(|&(a, b)| (label(a), label(b)))
                .collect(),
            restrictions: d
                .restrictions()
                .iter()
                .map(|r| RestrictionJson {
                    source: label(r.source),
                    target: label(r.target),
                    map: r.map.clone(),
                })
                .collect(),
        }
    }

    pub fn into_diagram(self) -> Result<SheafDiagram, TopologyError> {
        let mut b = DiagramBuilder::new();
        for c in self.cells {
            b.add_cell(c.label, c.stalk)?;
        }
        for r in self.restrictions {
            let s = b
                .cell(&r.source)
                .ok_or_else(|| TopologyError::UnknownCell(r.source.clone()))?;
            let t = b
                .cell(&r.target)
                .ok_or_else(|| TopologyError::UnknownCell(r.target.clone()))?;
            b.add_restriction(s, t, r.map)?;
        }
        b.p_norm(self.p).scope(self.scope);
        b.build()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub cell: String,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AssignmentJson {
    pub values: Vec<AssignmentEntry>,
}

impl AssignmentJson {
    pub fn from_assignment(d: &SheafDiagram, a: &Assignment) -> Self {
        AssignmentJson {
            values: a
                .support()
                .into_iter()
                .map(|c| AssignmentEntry {
                    cell: d.label(c).to_string(),
                    value: a.get(c).unwrap().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_assignment(self, d: &SheafDiagram) -> Result<Assignment, TopologyError> {
        let mut a = Assignment::empty(d);
        for e in self.values {
            let c = d.cell(&e.cell)?;
            a.set(c, e.value).map_err(|err| match err {
                TopologyError::DimensionMismatch { expected, got, .. } => {
                    TopologyError::DimensionMismatch {
                        cell: e.cell.clone(),
                        expected,
                        got,
                    }
                }
                other => other,
            })?;
        }
        Ok(a)
    }
}
