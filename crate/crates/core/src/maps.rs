//! Maps between finite-dimensional real stalks.
//!
//! A [`Map`] is used both as a restriction map of a sheaf diagram and as the
//! input-output function of a netlist part. Projection, affine and bilinear
//! maps carry exact Jacobians; general maps fall back to central differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sparse rows of a Jacobian: `rows[i]` lists `(column, value)` pairs.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("projection index {index} out of range for input dimension {input_dim}")]
    IndexOutOfRange { index: usize, input_dim: usize },
    #[error("affine offset has length {offset} but matrix has {rows} rows")]
    OffsetMismatch { rows: usize, offset: usize },
    #[error("affine matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error("general maps cannot be deserialized (name `{0}`)")]
    OpaqueGeneral(String),
    #[error("input has length {got}, expected {expected}")]
    InputLength { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Projection,
    Affine,
    General,
}

/// One summand of a bilinear output coordinate: `weight * x[left] * x[right]`,
/// or `weight * x[left]` when `right` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub weight: f64,
    pub left: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
}

impl Term {
    pub fn linear(weight: f64, index: usize) -> Self {
        Term {
            weight,
            left: index,
            right: None,
        }
    }

    pub fn product(weight: f64, left: usize, right: usize) -> Self {
        Term {
            weight,
            left,
            right: Some(right),
        }
    }
}

type Evaluator = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// An arbitrary differentiable map, differentiated numerically.
#[derive(Clone)]
pub struct GeneralMap {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    f: Arc<Evaluator>,
}

impl fmt::Debug for GeneralMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralMap")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Map {
    /// `y_i = x[indices[i]]`.
    Projection {
        input_dim: usize,
        indices: Vec<usize>,
    },
    /// `y = A x + c`.
    Affine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// Sparse sum of linear and product terms per output plus a constant.
    Bilinear {
        input_dim: usize,
        rows: Vec<Vec<Term>>,
        constants: Vec<f64>,
    },
    General(GeneralMap),
}

impl Map {
    pub fn identity(n: usize) -> Self {
        Map::Projection {
            input_dim: n,
            indices: (0..n).collect(),
        }
    }

    pub fn projection(input_dim: usize, indices: Vec<usize>) -> Result<Self, MapError> {
        if let Some(&index) = indices.iter().find(|&&i| i >= input_dim) {
            return Err(MapError::IndexOutOfRange { index, input_dim });
        }
        Ok(Map::Projection { input_dim, indices })
    }

    /// Selects the contiguous block `start..start + len`.
    pub fn block(input_dim: usize, start: usize, len: usize) -> Self {
        assert!(start + len <= input_dim, "block exceeds input");
        Map::Projection {
            input_dim,
            indices: (start..start + len).collect(),
        }
    }

    /// Keeps the last `n - k` entries of a length-`n` series.
    pub fn crop(n: usize, k: usize) -> Self {
        assert!(k <= n, "crop larger than series");
        Map::block(n, k, n - k)
    }

    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, MapError> {
        if matrix.nrows() != offset.len() {
            return Err(MapError::OffsetMismatch {
                rows: matrix.nrows(),
                offset: offset.len(),
            });
        }
        Ok(Map::Affine { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Map::Affine { matrix, offset }
    }

    pub fn bilinear(
        input_dim: usize,
        rows: Vec<Vec<Term>>,
        constants: Vec<f64>,
    ) -> Result<Self, MapError> {
        if constants.len() != rows.len() {
            return Err(MapError::OffsetMismatch {
                rows: rows.len(),
                offset: constants.len(),
            });
        }
        for t in rows.iter().flatten() {
            for index in std::iter::once(t.left).chain(t.right) {
                if index >= input_dim {
                    return Err(MapError::IndexOutOfRange { index, input_dim });
                }
            }
        }
        Ok(Map::Bilinear {
            input_dim,
            rows,
            constants,
        })
    }

    pub fn general<F>(name: impl Into<String>, input_dim: usize, output_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Map::General(GeneralMap {
            name: name.into(),
            input_dim,
            output_dim,
            f: Arc::new(f),
        })
    }

    /// The one-step linear causal filter of order `k` on a length-`n` series
    /// with output window starting at `w >= k`.
    ///
    /// Input is `(a_1..a_k, x_0..x_{n-1})`; output `j` is
    /// `sum_i a_i * x[j + w - i]` for `j in 0..n - w`.
    pub fn lcf(k: usize, n: usize, w: usize) -> Self {
        assert!(k >= 1 && k <= w && w <= n, "invalid filter window");
        let rows = (0..n - w)
            .map(|j| {
                (1..=k)
                    .map(|i| Term::product(1.0, i - 1, k + j + w - i))
                    .collect()
            })
            .collect();
        Map::Bilinear {
            input_dim: k + n,
            rows,
            constants: vec![0.0; n - w],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Map::Projection { input_dim, .. } => *input_dim,
            Map::Affine { matrix, .. } => matrix.ncols(),
            Map::Bilinear { input_dim, .. } => *input_dim,
            Map::General(g) => g.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Map::Projection { indices, .. } => indices.len(),
            Map::Affine { matrix, .. } => matrix.nrows(),
            Map::Bilinear { rows, .. } => rows.len(),
            Map::General(g) => g.output_dim,
        }
    }

    pub fn kind(&self) -> MapKind {
        match self {
            Map::Projection { .. } => MapKind::Projection,
            Map::Affine { .. } => MapKind::Affine,
            Map::Bilinear { rows, .. } => {
                if rows.iter().flatten().all(|t| t.right.is_none()) {
                    MapKind::Affine
                } else {
                    MapKind::General
                }
            }
            Map::General(_) => MapKind::General,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        match self {
            Map::Projection { indices, .. } => indices.iter().map(|&i| x[i]).collect(),
            Map::Affine { matrix, offset } => {
                let v = DVector::from_column_slice(x);
                (matrix * v + offset).as_slice().to_vec()
            }
            Map::Bilinear {
                rows, constants, ..
            } => rows
                .iter()
                .zip(constants)
                .map(|(terms, c)| {
                    terms.iter().fold(*c, |acc, t| match t.right {
                        None => acc + t.weight * x[t.left],
                        Some(r) => acc + t.weight * x[t.left] * x[r],
                    })
                })
                .collect(),
            Map::General(g) => {
                let y = (g.f)(x);
                assert_eq!(
                    y.len(),
                    g.output_dim,
                    "general map `{}` returned wrong length",
                    g.name
                );
                y
            }
        }
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        if x.len() != self.input_dim() {
            return Err(MapError::InputLength {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// Jacobian at `x` as sparse rows.
    pub fn jacobian_rows(&self, x: &[f64]) -> SparseRows {
        match self {
            Map::Projection { indices, .. } => indices.iter().map(|&i| vec![(i, 1.0)]).collect(),
            Map::Affine { matrix, .. } => (0..matrix.nrows())
                .map(|r| {
                    (0..matrix.ncols())
                        .filter_map(|c| {
                            let v = matrix[(r, c)];
                            (v != 0.0).then_some((c, v))
                        })
                        .collect()
                })
                .collect(),
            Map::Bilinear { rows, .. } => rows
                .iter()
                .map(|terms| {
                    let mut row: Vec<(usize, f64)> = Vec::with_capacity(terms.len() * 2);
                    for t in terms {
                        match t.right {
                            None => row.push((t.left, t.weight)),
                            Some(r) => {
                                row.push((t.left, t.weight * x[r]));
                                row.push((r, t.weight * x[t.left]));
                            }
                        }
                    }
                    merge_row(row)
                })
                .collect(),
            Map::General(g) => {
                let dense = central_difference(|v| (g.f)(v), x, g.output_dim);
                (0..dense.nrows())
                    .map(|r| {
                        (0..dense.ncols())
                            .filter_map(|c| {
                                let v = dense[(r, c)];
                                (v != 0.0).then_some((c, v))
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Dense Jacobian at `x`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.output_dim(), self.input_dim());
        for (r, row) in self.jacobian_rows(x).into_iter().enumerate() {
            for (c, v) in row {
                j[(r, c)] += v;
            }
        }
        j
    }

    /// Returns `(A, c)` when the map is affine.
    pub fn as_affine(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            Map::Affine { matrix, offset } => Some((matrix.clone(), offset.clone())),
            Map::Projection { .. } | Map::Bilinear { .. } if self.kind() != MapKind::General => {
                let zero = vec![0.0; self.input_dim()];
                let offset = DVector::from_vec(self.eval(&zero));
                Some((self.jacobian(&zero), offset))
            }
            _ => None,
        }
    }

    /// Converts projection and affine maps to the sparse bilinear form.
    fn to_bilinear(&self) -> Option<Map> {
        match self {
            Map::Projection { input_dim, indices } => Some(Map::Bilinear {
                input_dim: *input_dim,
                rows: indices
                    .iter()
                    .map(|&i| vec![Term::linear(1.0, i)])
                    .collect(),
                constants: vec![0.0; indices.len()],
            }),
            Map::Affine { matrix, offset } => Some(Map::Bilinear {
                input_dim: matrix.ncols(),
                rows: (0..matrix.nrows())
                    .map(|r| {
                        (0..matrix.ncols())
                            .filter(|&c| matrix[(r, c)] != 0.0)
                            .map(|c| Term::linear(matrix[(r, c)], c))
                            .collect()
                    })
                    .collect(),
                constants: offset.as_slice().to_vec(),
            }),
            Map::Bilinear { .. } => Some(self.clone()),
            Map::General(_) => None,
        }
    }

    /// Keeps output rows `start..`.
    pub fn drop_leading_outputs(&self, start: usize) -> Map {
        assert!(
            start <= self.output_dim(),
            "cannot drop more rows than the map has"
        );
        match self.to_bilinear() {
            Some(Map::Bilinear {
                input_dim,
                rows,
                constants,
            }) => Map::Bilinear {
                input_dim,
                rows: rows[start..].to_vec(),
                constants: constants[start..].to_vec(),
            },
            _ => {
                let inner = self.clone();
                let out = self.output_dim() - start;
                let name = format!("{}[{}..]", self.name(), start);
                Map::general(name, self.input_dim(), out, move |x| {
                    inner.eval(x)[start..].to_vec()
                })
            }
        }
    }

    /// Appends an input block of the output's size and adds it to the output:
    /// `g(x, z) = f(x) + z`.
    pub fn plus_appended_input(&self) -> Map {
        let n_in = self.input_dim();
        let n_out = self.output_dim();
        match self.to_bilinear() {
            Some(Map::Bilinear {
                rows, constants, ..
            }) => {
                let rows = rows
                    .into_iter()
                    .enumerate()
                    .map(|(j, mut terms)| {
                        terms.push(Term::linear(1.0, n_in + j));
                        terms
                    })
                    .collect();
                Map::Bilinear {
                    input_dim: n_in + n_out,
                    rows,
                    constants,
                }
            }
            _ => {
                let inner = self.clone();
                let name = format!("{}+input", self.name());
                Map::general(name, n_in + n_out, n_out, move |x| {
                    let mut y = inner.eval(&x[..n_in]);
                    for (yj, zj) in y.iter_mut().zip(&x[n_in..]) {
                        *yj += zj;
                    }
                    y
                })
            }
        }
    }

    fn name(&self) -> String {
        match self {
            Map::General(g) => g.name.clone(),
            other => format!("{:?}", other.kind()).to_lowercase(),
        }
    }
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_difference<F>(f: F, x: &[f64], output_dim: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut j = DMatrix::zeros(output_dim, x.len());
    let mut probe = x.to_vec();
    for c in 0..x.len() {
        let h = 1e-6 * x[c].abs().max(1.0);
        probe[c] = x[c] + h;
        let up = f(&probe);
        probe[c] = x[c] - h;
        let down = f(&probe);
        probe[c] = x[c];
        for r in 0..output_dim {
            j[(r, c)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    j
}

/// Multiplies sparse rows `outer` (columns index `inner`'s rows) by `inner`.
pub fn compose_rows(outer: &SparseRows, inner: &SparseRows) -> SparseRows {
    outer
        .iter()
        .map(|row| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for &(k, a) in row {
                for &(c, b) in &inner[k] {
                    acc.push((c, a * b));
                }
            }
            merge_row(acc)
        })
        .collect()
}

/// Serialized form of a [`Map`]; general maps keep only their name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapPayload {
    Projection {
        input_dim: usize,
        indices: Vec<usize>,
    },
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    Bilinear {
        input_dim: usize,
        rows: Vec<Vec<Term>>,
        constants: Vec<f64>,
    },
    General {
        name: String,
        input_dim: usize,
        output_dim: usize,
    },
}

impl From<&Map> for MapPayload {
    fn from(map: &Map) -> Self {
        match map {
            Map::Projection { input_dim, indices } => MapPayload::Projection {
                input_dim: *input_dim,
                indices: indices.clone(),
            },
            Map::Affine { matrix, offset } => MapPayload::Affine {
                matrix: (0..matrix.nrows())
                    .map(|r| matrix.row(r).iter().copied().collect())
                    .collect(),
                offset: offset.as_slice().to_vec(),
            },
            Map::Bilinear {
                input_dim,
                rows,
                constants,
            } => MapPayload::Bilinear {
                input_dim: *input_dim,
                rows: rows.clone(),
                constants: constants.clone(),
            },
            Map::General(g) => MapPayload::General {
                name: g.name.clone(),
                input_dim: g.input_dim,
                output_dim: g.output_dim,
            },
        }
    }
}

impl TryFrom<MapPayload> for Map {
    type Error = MapError;

    fn try_from(p: MapPayload) -> Result<Self, MapError> {
        match p {
            MapPayload::Projection { input_dim, indices } => Map::projection(input_dim, indices),
            MapPayload::Affine { matrix, offset } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, Vec::len);
                if matrix.iter().any(|r| r.len() != cols) {
                    return Err(MapError::RaggedMatrix);
                }
                let m = DMatrix::from_fn(rows, cols, |r, c| matrix[r][c]);
                Map::affine(m, DVector::from_vec(offset))
            }
            MapPayload::Bilinear {
                input_dim,
                rows,
                constants,
            } => Map::bilinear(input_dim, rows, constants),
            MapPayload::General { name, .. } => Err(MapError::OpaqueGeneral(name)),
        }
    }
}

impl Serialize for Map {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MapPayload::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Map {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let payload = MapPayload::deserialize(d)?;
        Map::try_from(payload).map_err(serde::de::Error::custom)
    }
}
