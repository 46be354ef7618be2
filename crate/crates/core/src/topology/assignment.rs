use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::diagram::SheafDiagram;
use super::poset::CellId;
use super::TopologyError;

/// A partial choice of stalk values. Cells without a value are outside the
/// support.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    values: Vec<Option<Vec<f64>>>,
    dims: Vec<usize>,
}

impl Assignment {
    pub fn empty(sheaf: &SheafDiagram) -> Self {
        Assignment {
            values: vec![None; sheaf.len()],
            dims: sheaf.stalks().iter().map(|s| s.dim).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn set(&mut self, cell: CellId, value: Vec<f64>) -> Result<(), TopologyError> {
        let expected = *self
            .dims
            .get(cell)
            .ok_or_else(|| TopologyError::UnknownCell(format!("cell {cell}")))?;
        if value.len() != expected {
            return Err(TopologyError::DimensionMismatch {
                cell: format!("cell {cell}"),
                expected,
                got: value.len(),
            });
        }
        self.values[cell] = Some(value);
        Ok(())
    }

    pub fn clear(&mut self, cell: CellId) {
        self.values[cell] = None;
    }

    pub fn get(&self, cell: CellId) -> Option<&[f64]> {
        self.values.get(cell).and_then(|v| v.as_deref())
    }

    pub fn get_mut(&mut self, cell: CellId) -> Option<&mut Vec<f64>> {
        self.values.get_mut(cell).and_then(|v| v.as_mut())
    }

    pub fn in_support(&self, cell: CellId) -> bool {
        self.values[cell].is_some()
    }

    pub fn support(&self) -> Vec<CellId> {
        (0..self.values.len())
            .filter(|&c| self.values[c].is_some())
            .collect()
    }

    pub fn is_global(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    fn require_global(&self, sheaf: &SheafDiagram) -> Result<(), TopologyError> {
        let missing: Vec<String> = (0..self.values.len())
            .filter(|&c| self.values[c].is_none())
            .map(|c| sheaf.label(c).to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(TopologyError::NotGlobal(missing))
        }
    }

    /// Concatenation of all stalk values; `None` unless global.
    pub fn flatten(&self) -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for v in &self.values {
            out.extend_from_slice(v.as_deref()?);
        }
        Some(out)
    }

    pub fn from_flat(sheaf: &SheafDiagram, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), sheaf.total_dim(), "flat vector length");
        let values = (0..sheaf.len())
            .map(|c| Some(flat[sheaf.offset(c)..sheaf.offset(c) + sheaf.dim(c)].to_vec()))
            .collect();
        Assignment {
            values,
            dims: sheaf.stalks().iter().map(|s| s.dim).collect(),
        }
    }

    /// Global assignment obtained by pushing `value` on `cell` up through the
    /// restrictions; cells not above `cell` are filled by `fill`.
    pub fn pushed_from(
        sheaf: &SheafDiagram,
        cell: CellId,
        value: &[f64],
        mut fill: impl FnMut(CellId) -> Vec<f64>,
    ) -> Self {
        let mut a = Assignment::empty(sheaf);
        for c in 0..sheaf.len() {
            let v = if c == cell {
                value.to_vec()
            } else {
                match sheaf.restrict(cell, c, value) {
                    Some(v) => v,
                    None => fill(c),
                }
            };
            a.values[c] = Some(v);
        }
        a
    }
}

/// Contribution of one comparable pair to the `p`-th power of the radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairResidual {
    pub lower: CellId,
    pub upper: CellId,
    pub contribution: f64,
    /// Per-coordinate terms `alpha^p |a(upper)_i - R(a(lower))_i|^p`.
    pub coordinates: Vec<f64>,
}

fn pair_terms(sheaf: &SheafDiagram, a: &Assignment, weights: Option<&[f64]>) -> Vec<PairResidual> {
    let p = sheaf.p();
    let mut out = Vec::new();
    for x in 0..sheaf.len() {
        if sheaf.plan_from(x).is_empty() {
            continue;
        }
        let value = a.get(x).expect("checked global");
        for (y, img) in sheaf.images_from(x, value) {
            let alpha = weights.map_or(sheaf.weight(y), |w| w[y]);
            let target = a.get(y).expect("checked global");
            let coordinates: Vec<f64> = target
                .iter()
                .zip(&img)
                .map(|(t, i)| {
                    let d = (t - i).abs();
                    if p == 2.0 {
                        alpha * alpha * d * d
                    } else {
                        (alpha * d).powf(p)
                    }
                })
                .collect();
            let contribution = coordinates.iter().sum();
            out.push(PairResidual {
                lower: x,
                upper: y,
                contribution,
                coordinates,
            });
        }
    }
    out
}

fn check_weights(sheaf: &SheafDiagram, weights: &[f64]) -> Result<(), TopologyError> {
    if weights.len() != sheaf.len() {
        return Err(TopologyError::WeightCount {
            expected: sheaf.len(),
            got: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(TopologyError::InvalidWeight(w));
    }
    Ok(())
}

/// `(sum over in-scope pairs x < y of alpha_y^p ||a(y) - R(a(x))||_p^p)^(1/p)`.
pub fn consistency_radius(sheaf: &SheafDiagram, a: &Assignment) -> Result<f64, TopologyError> {
    a.require_global(sheaf)?;
    let total: f64 = pair_terms(sheaf, a, None)
        .iter()
        .map(|t| t.contribution)
        .sum();
    Ok(total.powf(1.0 / sheaf.p()))
}

/// Consistency radius with per-cell weights replacing the stalk weights.
pub fn consistency_radius_weighted(
    sheaf: &SheafDiagram,
    a: &Assignment,
    weights: &[f64],
) -> Result<f64, TopologyError> {
    a.require_global(sheaf)?;
    check_weights(sheaf, weights)?;
    let total: f64 = pair_terms(sheaf, a, Some(weights))
        .iter()
        .map(|t| t.contribution)
        .sum();
    Ok(total.powf(1.0 / sheaf.p()))
}

/// Per-pair contributions, largest first.
pub fn residual_breakdown(
    sheaf: &SheafDiagram,
    a: &Assignment,
) -> Result<Vec<PairResidual>, TopologyError> {
    a.require_global(sheaf)?;
    let mut terms = pair_terms(sheaf, a, None);
    terms.sort_by(|l, r| r.contribution.total_cmp(&l.contribution));
    Ok(terms)
}

pub fn is_section(sheaf: &SheafDiagram, a: &Assignment, tol: f64) -> Result<bool, TopologyError> {
    Ok(consistency_radius(sheaf, a)? <= tol)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctorialityViolation {
    pub lower: CellId,
    pub middle: CellId,
    pub upper: CellId,
    pub max_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FunctorialityReport {
    pub chains_checked: usize,
    pub samples: usize,
    pub violations: Vec<FunctorialityViolation>,
}

impl FunctorialityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares the route `x -> z -> y` with the route `x -> y` on random
/// standard-normal samples for every chain `x < z < y`.
pub fn check_functoriality(
    sheaf: &SheafDiagram,
    samples: usize,
    tol: f64,
    seed: u64,
) -> FunctorialityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poset = sheaf.poset();
    let mut report = FunctorialityReport {
        samples,
        ..Default::default()
    };
    for x in 0..sheaf.len() {
        let ups: Vec<CellId> = poset.above(x).iter().filter(|&c| c != x).collect();
        for &z in &ups {
            for &y in &ups {
                if y == z || !poset.leq(z, y) {
                    continue;
                }
                report.chains_checked += 1;
                let mut worst: f64 = 0.0;
                for _ in 0..samples {
                    let v: Vec<f64> = (0..sheaf.dim(x))
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let through = sheaf
                        .restrict(x, z, &v)
                        .and_then(|m| sheaf.restrict(z, y, &m));
                    let direct = sheaf.restrict(x, y, &v);
                    if let (Some(a), Some(b)) = (through, direct) {
                        let err = a
                            .iter()
                            .zip(&b)
                            .map(|(p, q)| (p - q).abs())
                            .fold(0.0, f64::max);
                        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
                    }
                }
                if worst > tol {
                    report.violations.push(FunctorialityViolation {
                        lower: x,
                        middle: z,
                        upper: y,
                        max_error: worst,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Map;
    use crate::topology::{DiagramBuilder, Stalk};

    fn chain(corrupt: bool) -> SheafDiagram {
        let mut b = DiagramBuilder::new();
        let a = b.add_cell("a", Stalk::new(2)).unwrap();
        let m = b.add_cell("m", Stalk::new(2)).unwrap();
        let t = b.add_cell("t", Stalk::new(1)).unwrap();
        b.add_restriction(a, m, Map::identity(2)).unwrap();
        b.add_restriction(m, t, Map::block(2, 1, 1)).unwrap();
        let skip = if corrupt {
            Map::block(2, 0, 1)
        } else {
            Map::block(2, 1, 1)
        };
        b.add_restriction(a, t, skip).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn functoriality_flags_corrupted_map() {
        assert!(check_functoriality(&chain(false), 3, 1e-9, 1).is_clean());
        let report = check_functoriality(&chain(true), 3, 1e-9, 1);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].max_error > 0.0);
    }

    #[test]
    fn radius_of_pushed_value_is_zero() {
        let d = chain(false);
        let a = Assignment::pushed_from(&d, 0, &[1.5, -2.0], |_| unreachable!());
        assert_eq!(consistency_radius(&d, &a).unwrap(), 0.0);
    }

    #[test]
    fn partial_assignment_is_not_global() {
        let d = chain(false);
        let mut a = Assignment::empty(&d);
        a.set(0, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            consistency_radius(&d, &a),
            Err(TopologyError::NotGlobal(_))
        ));
        assert!(a.set(2, vec![1.0, 2.0]).is_err());
    }
}
