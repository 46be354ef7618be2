//! Model (JSON) and data (CSV) files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsem::{Coefficient, DsemError, DsemSpec, Sign, TimeseriesTable};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: u64,
        message: String,
    },
    #[error("`{variable}` has non-positive value {value} at line {line}; log_center needs positive data")]
    NonPositiveForLog {
        variable: String,
        value: f64,
        line: u64,
    },
    #[error("data has no column for `{0}`")]
    MissingColumn(String),
    #[error("the first column must be `time`, found `{0}`")]
    NoTimeColumn(String),
    #[error("weight for unknown variable `{0}`")]
    UnknownWeight(String),
    #[error(transparent)]
    Dsem(#[from] DsemError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// Natural log, then subtract the mean over observed entries.
    LogCenter,
}

fn default_ar_order() -> usize {
    1
}

fn default_h() -> f64 {
    1.0
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableJson {
    pub name: String,
    #[serde(default = "default_ar_order")]
    pub ar_order: usize,
    #[serde(default)]
    pub transform: Transform,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathJson {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub lag: usize,
    pub coefficient: Coefficient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<Sign>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsJson {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_p")]
    pub p_norm: f64,
    /// Observation weight per variable name; 1 when absent.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl Default for OptionsJson {
    fn default() -> Self {
        OptionsJson {
            h: default_h(),
            p_norm: default_p(),
            weights: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub variables: Vec<VariableJson>,
    #[serde(default)]
    pub paths: Vec<PathJson>,
    #[serde(default)]
    pub options: OptionsJson,
}

/// A parsed model file.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: DsemSpec,
    pub transforms: Vec<Transform>,
    pub p_norm: f64,
    /// Observation weight per variable, in spec order.
    pub weights: Vec<f64>,
}

impl ModelJson {
    pub fn into_model(self) -> Result<Model, IoError> {
        let names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let mut b = DsemSpec::builder(&names).h(self.options.h);
        for v in &self.variables {
            b = b.ar_order(&v.name, v.ar_order);
        }
        for p in &self.paths {
            b = match p.sign {
                Some(s) => b.signed_edge(&p.from, &p.to, p.lag, p.coefficient, s),
                None => b.edge(&p.from, &p.to, p.lag, p.coefficient),
            };
        }
        let spec = b.build()?;
        let mut weights = vec![1.0; names.len()];
        for (name, w) in &self.options.weights {
            let v = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| IoError::UnknownWeight(name.clone()))?;
            weights[v] = *w;
        }
        Ok(Model {
            spec,
            transforms: self.variables.iter().map(|v| v.transform).collect(),
            p_norm: self.options.p_norm,
            weights,
        })
    }
}

pub fn parse_model(text: &str) -> Result<Model, IoError> {
    let json: ModelJson = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })?;
    json.into_model()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, IoError> {
    parse_model(&read_file(path.as_ref())?)
}

fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Statistics of a column transform, enough to map values back.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformStats {
    pub variable: String,
    pub transform: Transform,
    /// Mean of the logged observed entries, subtracted when centering.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
}

impl TransformStats {
    pub fn invert(&self, value: f64) -> f64 {
        match self.transform {
            Transform::None => value,
            Transform::LogCenter => (value + self.center.unwrap_or(0.0)).exp(),
        }
    }
}

/// Data restricted to the model's variables, transformed as the model asks.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub table: TimeseriesTable,
    pub stats: Vec<TransformStats>,
}

/// Reads a CSV whose first column is `time` (integers) followed by one
/// column per variable. Empty cells and `NA` are missing. Columns not in the
/// model are ignored.
pub fn read_data<R: Read>(reader: R, model: &Model) -> Result<Dataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let first = headers.get(0).unwrap_or("");
    if first != "time" {
        return Err(IoError::NoTimeColumn(first.to_string()));
    }
    let names = model.spec.variables();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| IoError::MissingColumn(n.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |column: usize, message: String| IoError::Parse {
            line,
            column: column as u64 + 1,
            message,
        };
        let t = record.get(0).unwrap_or("");
        times.push(
            t.parse::<i64>()
                .map_err(|e| bad(0, format!("time `{t}`: {e}")))?,
        );
        for (v, &c) in cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            let value = if cell.is_empty() || cell == "NA" {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|e| bad(c, format!("`{cell}`: {e}")))?
            };
            columns[v].push(value);
        }
        lines.push(line);
    }
    let mut stats = Vec::with_capacity(names.len());
    for (v, column) in columns.iter_mut().enumerate() {
        let transform = model.transforms[v];
        let center = match transform {
            Transform::None => None,
            Transform::LogCenter => {
                for (row, x) in column.iter_mut().enumerate() {
                    if x.is_nan() {
                        continue;
                    }
                    if *x <= 0.0 {
                        return Err(IoError::NonPositiveForLog {
                            variable: names[v].clone(),
                            value: *x,
                            line: lines[row],
                        });
                    }
                    *x = x.ln();
                }
                let observed: Vec<f64> = column.iter().copied().filter(|x| !x.is_nan()).collect();
                let mean = if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                };
                column.iter_mut().for_each(|x| *x -= mean);
                Some(mean)
            }
        };
        stats.push(TransformStats {
            variable: names[v].clone(),
            transform,
            center,
        });
    }
    Ok(Dataset {
        table: TimeseriesTable::from_columns(times, names.to_vec(), columns)?,
        stats,
    })
}

pub fn load_data(path: impl AsRef<Path>, model: &Model) -> Result<Dataset, IoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    read_data(file, model)
}

/// Writes a table as CSV in the format [`read_data`] accepts; missing
/// entries become empty cells. `stats`, when given, maps values back to the
/// original scale.
pub fn write_series<W: Write>(
    writer: W,
    table: &TimeseriesTable,
    stats: Option<&[TransformStats]>,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(table.names().iter().cloned());
    w.write_record(&header)?;
    for (row, t) in table.times().iter().enumerate() {
        let mut record = vec![t.to_string()];
        for v in 0..table.num_variables() {
            record.push(match table.get(v, row) {
                Some(x) => stats.map_or(x, |s| s[v].invert(x)).to_string(),
                None => String::new(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{
        "variables": [
            {"name": "A", "ar_order": 2, "transform": "log_center"},
            {"name": "B"}
        ],
        "paths": [{"from": "A", "to": "B", "lag": 1, "coefficient": "free", "sign": "+"}],
        "options": {"weights": {"B": 2.0}}
    }"#;

    #[test]
    fn model_round_trip() {
        let m = parse_model(MODEL).unwrap();
        assert_eq!(m.spec.variables(), ["A", "B"]);
        assert_eq!(m.spec.ar_orders(), [2, 1]);
        assert!(m.spec.edges()[0].coefficient.is_free());
        assert_eq!(m.spec.edges()[0].sign, Some(Sign::Positive));
        assert_eq!(m.weights, [1.0, 2.0]);
        assert_eq!(m.transforms, [Transform::LogCenter, Transform::None]);
    }

    #[test]
    fn bad_json_reports_position() {
        let err = parse_model("{\n  \"variables\": [}").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }), "{err}");
        let err = parse_model(
            r#"{"variables":[{"name":"A"}],"paths":[{"from":"A","to":"A","coefficient":"x"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, IoError::Parse { .. }));
    }

    #[test]
    fn missing_cells_and_centering() {
        let m = parse_model(MODEL).unwrap();
        let d = read_data("time,B,A\n1,0.5,1\n2,,2\n3,1.5,\n4,2.5,4\n".as_bytes(), &m).unwrap();
        assert_eq!(d.table.get(1, 1), None);
        assert_eq!(d.table.get(1, 0), Some(0.5));
        let a: Vec<f64> = (0..4).filter_map(|r| d.table.get(0, r)).collect();
        assert_eq!(a.len(), 3);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        let mean = (1f64.ln() + 2f64.ln() + 4f64.ln()) / 3.0;
        assert!((d.stats[0].center.unwrap() - mean).abs() < 1e-15);
        assert!((d.stats[0].invert(a[2]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn untransformed_column_is_unchanged() {
        let m = parse_model(r#"{"variables":[{"name":"A"}]}"#).unwrap();
        let d = read_data("time,A\n0,1.25\n1,-3\n".as_bytes(), &m).unwrap();
        assert_eq!(d.table.column(0), [1.25, -3.0]);
    }

    #[test]
    fn data_errors() {
        let m = parse_model(MODEL).unwrap();
        let err = read_data("time,A,B\n1,1,x\n".as_bytes(), &m).unwrap_err();
        assert!(
            matches!(
                err,
                IoError::Parse {
                    line: 2,
                    column: 3,
                    ..
                }
            ),
            "{err}"
        );
        let err = read_data("time,A,B\n1,-1,1\n".as_bytes(), &m).unwrap_err();
        assert!(
            matches!(err, IoError::NonPositiveForLog { line: 2, .. }),
            "{err}"
        );
        assert!(matches!(
            read_data("t,A,B\n".as_bytes(), &m),
            Err(IoError::NoTimeColumn(_))
        ));
        assert!(matches!(
            read_data("time,A\n".as_bytes(), &m),
            Err(IoError::MissingColumn(_))
        ));
    }

    #[test]
    fn written_series_reads_back() {
        let m = parse_model(r#"{"variables":[{"name":"A"},{"name":"B"}]}"#).unwrap();
        let t = TimeseriesTable::from_columns(
            vec![3, 4],
            vec!["A".into(), "B".into()],
            vec![vec![1.0, f64::NAN], vec![0.1, 0.2]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_series(&mut buf, &t, None).unwrap();
        let back = read_data(buf.as_slice(), &m).unwrap().table;
        assert_eq!(back.times(), t.times());
        for v in 0..2 {
            assert_eq!(
                (0..2).map(|r| back.get(v, r)).collect::<Vec<_>>(),
                (0..2).map(|r| t.get(v, r)).collect::<Vec<_>>()
            );
        }
    }
}
