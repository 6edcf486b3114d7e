//! CSV datasets: exposures with optional ids, coordinates, paired
//! `<name>_int` intervention columns, an outcome `y`, and oracle columns
//! `g_obs`/`g_int`.
//!
//! Error locations use file line numbers, so the header is line 1.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::PointSet;

const ID: &str = "id";
const LAT: &str = "lat";
const LON: &str = "lon";
const OUTCOME: &str = "y";
const G_OBS: &str = "g_obs";
const G_INT: &str = "g_int";
const INT_SUFFIX: &str = "_int";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing header row")]
    MissingHeader,
    #[error("duplicate column `{name}` at column {column}")]
    DuplicateColumn { name: String, column: usize },
    #[error("empty column name at column {column}")]
    EmptyName { column: usize },
    #[error("no exposure columns")]
    NoExposures,
    #[error("line {line}, column {column}: `{value}` is not a number")]
    NotNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column {column}: non-finite value `{value}`")]
    NonFinite {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column {column}: missing value")]
    Missing { line: u64, column: String },
    #[error("line {line}, column {column}: negative exposure {value}")]
    Negative { line: u64, column: String, value: f64 },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
    #[error("column `{column}` has no matching exposure `{base}`")]
    UnpairedIntervention { column: String, base: String },
    #[error("intervention columns given for some exposures but not `{missing}`")]
    IncompleteIntervention { missing: String },
    #[error("`{present}` given without `{missing}`")]
    IncompletePair { present: String, missing: String },
    #[error("column data does not match the dataset shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    /// Reject negative exposure and intervention values.
    pub nonnegative: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { nonnegative: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub g_obs: Vec<f64>,
    pub g_int: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Option<Vec<String>>,
    /// (lat, lon) in decimal degrees.
    pub coords: Option<Vec<[f64; 2]>>,
    pub exposure_names: Vec<String>,
    pub exposures: PointSet,
    /// Same column order as `exposures`.
    pub interventions: Option<PointSet>,
    pub outcome: Option<Vec<f64>>,
    pub oracle: Option<Oracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub exposures: usize,
    pub has_interventions: bool,
    pub has_outcome: bool,
    pub has_oracle: bool,
    pub ranges: Vec<ColumnRange>,
}

impl Dataset {
    /// Checks that every optional column matches the row count.
    pub fn validate(&self) -> Result<(), IngestError> {
        let n = self.len();
        if self.exposure_names.len() != self.exposures.dim() {
            return Err(IngestError::Shape(format!(
                "{} names for {} exposure columns",
                self.exposure_names.len(),
                self.exposures.dim()
            )));
        }
        let check = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(IngestError::Shape(format!("{what} has {len} rows, exposures have {n}")))
            }
        };
        if let Some(v) = &self.ids {
            check("id", v.len())?;
        }
        if let Some(v) = &self.coords {
            check("coordinates", v.len())?;
        }
        if let Some(v) = &self.interventions {
            check("interventions", v.len())?;
            if v.dim() != self.exposures.dim() {
                return Err(IngestError::Shape("intervention width differs from exposures".into()));
            }
        }
        if let Some(v) = &self.outcome {
            check("outcome", v.len())?;
        }
        if let Some(o) = &self.oracle {
            check(G_OBS, o.g_obs.len())?;
            check(G_INT, o.g_int.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.exposures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposures.is_empty()
    }

    pub fn summary(&self) -> DatasetSummary {
        let ranges = self
            .exposure_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let (min, max) = self
                    .exposures
                    .rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                ColumnRange {
                    name: name.clone(),
                    min,
                    max,
                }
            })
            .collect();
        DatasetSummary {
            rows: self.len(),
            exposures: self.exposures.dim(),
            has_interventions: self.interventions.is_some(),
            has_outcome: self.outcome.is_some(),
            has_oracle: self.oracle.is_some(),
            ranges,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = Vec::new();
        if self.ids.is_some() {
            h.push(ID.to_string());
        }
        if self.coords.is_some() {
            h.push(LAT.to_string());
            h.push(LON.to_string());
        }
        h.extend(self.exposure_names.iter().cloned());
        if self.interventions.is_some() {
            h.extend(self.exposure_names.iter().map(|n| format!("{n}{INT_SUFFIX}")));
        }
        if self.outcome.is_some() {
            h.push(OUTCOME.to_string());
        }
        if self.oracle.is_some() {
            h.push(G_OBS.to_string());
            h.push(G_INT.to_string());
        }
        h
    }
}

impl From<crate::simulate::SimDataset> for Dataset {
    /// Exposures are named `w1, w2, ...`.
    fn from(d: crate::simulate::SimDataset) -> Self {
        Dataset {
            ids: None,
            coords: None,
            exposure_names: (1..=d.w.dim()).map(|j| format!("w{j}")).collect(),
            exposures: d.w,
            interventions: Some(d.w_int),
            outcome: Some(d.y),
            oracle: Some(Oracle {
                g_obs: d.g_obs,
                g_int: d.g_int,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Id,
    Lat,
    Lon,
    Exposure(usize),
    Intervention(usize),
    Outcome,
    GObs,
    GInt,
}

fn is_reserved(name: &str) -> bool {
    matches!(name, ID | LAT | LON | OUTCOME | G_OBS | G_INT)
}

fn assign_roles(header: &[String]) -> Result<(Vec<Role>, Vec<String>), IngestError> {
    for (c, name) in header.iter().enumerate() {
        if name.is_empty() {
            return Err(IngestError::EmptyName { column: c + 1 });
        }
        if header[..c].contains(name) {
            return Err(IngestError::DuplicateColumn {
                name: name.clone(),
                column: c + 1,
            });
        }
    }
    let exposures: Vec<String> = header
        .iter()
        .filter(|n| !is_reserved(n) && !n.ends_with(INT_SUFFIX))
        .cloned()
        .collect();
    if exposures.is_empty() {
        return Err(IngestError::NoExposures);
    }
    let roles = header
        .iter()
        .map(|name| {
            Ok(match name.as_str() {
                ID => Role::Id,
                LAT => Role::Lat,
                LON => Role::Lon,
                OUTCOME => Role::Outcome,
                G_OBS => Role::GObs,
                G_INT => Role::GInt,
                n if n.ends_with(INT_SUFFIX) => {
                    let base = &n[..n.len() - INT_SUFFIX.len()];
                    let j = exposures.iter().position(|e| e == base).ok_or_else(|| {
                        IngestError::UnpairedIntervention {
                            column: n.to_string(),
                            base: base.to_string(),
                        }
                    })?;
                    Role::Intervention(j)
                }
                n => Role::Exposure(exposures.iter().position(|e| e == n).expect("listed above")),
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;

    let has = |r: Role| roles.contains(&r);
    let pairs = [(Role::Lat, LAT, Role::Lon, LON), (Role::GObs, G_OBS, Role::GInt, G_INT)];
    for (a, an, b, bn) in pairs {
        if has(a) != has(b) {
            let (present, missing) = if has(a) { (an, bn) } else { (bn, an) };
            return Err(IngestError::IncompletePair {
                present: present.into(),
                missing: missing.into(),
            });
        }
    }
    let any_int = roles.iter().any(|r| matches!(r, Role::Intervention(_)));
    if any_int {
        if let Some(j) = (0..exposures.len()).find(|&j| !has(Role::Intervention(j))) {
            return Err(IngestError::IncompleteIntervention {
                missing: format!("{}{INT_SUFFIX}", exposures[j]),
            });
        }
    }
    Ok((roles, exposures))
}

fn parse_cell(line: u64, column: &str, raw: &str) -> Result<f64, IngestError> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(IngestError::Missing {
            line,
            column: column.to_string(),
        });
    }
    let v: f64 = s.parse().map_err(|_| IngestError::NotNumeric {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IngestError::NonFinite {
            line,
            column: column.to_string(),
            value: raw.to_string(),
        });
    }
    Ok(v)
}

pub fn read_csv(path: &Path, options: ReadOptions) -> Result<Dataset, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_from(file, options)
}

pub fn read_csv_from<R: Read>(reader: R, options: ReadOptions) -> Result<Dataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        None => return Err(IngestError::MissingHeader),
        Some(r) => {
            let r = r.map_err(|e| csv_error(&e))?;
            r.iter().map(|s| s.trim().trim_start_matches('\u{feff}').to_string()).collect()
        }
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(IngestError::MissingHeader);
    }
    let (roles, names) = assign_roles(&header)?;
    let q = names.len();
    let has = |r: Role| roles.contains(&r);
    let has_int = roles.iter().any(|r| matches!(r, Role::Intervention(_)));

    let mut ids = has(Role::Id).then(Vec::new);
    let mut coords = has(Role::Lat).then(Vec::new);
    let mut outcome = has(Role::Outcome).then(Vec::new);
    let mut oracle = has(Role::GObs).then(|| Oracle {
        g_obs: Vec::new(),
        g_int: Vec::new(),
    });
    let mut w = Vec::new();
    let mut w_int = Vec::new();
    let mut row_w = vec![0.0; q];
    let mut row_int = vec![0.0; q];

    for rec in records {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(IngestError::FieldCount {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let mut lat_lon = [0.0; 2];
        for (c, raw) in rec.iter().enumerate() {
            let name = &header[c];
            match roles[c] {
                Role::Id => {
                    if raw.is_empty() {
                        return Err(IngestError::Missing {
                            line,
                            column: name.clone(),
                        });
                    }
                    ids.as_mut().unwrap().push(raw.to_string());
                }
                role => {
                    let v = parse_cell(line, name, raw)?;
                    let exposure_like = matches!(role, Role::Exposure(_) | Role::Intervention(_));
                    if options.nonnegative && exposure_like && v < 0.0 {
                        return Err(IngestError::Negative {
                            line,
                            column: name.clone(),
                            value: v,
                        });
                    }
                    match role {
                        Role::Lat => lat_lon[0] = v,
                        Role::Lon => lat_lon[1] = v,
                        Role::Exposure(j) => row_w[j] = v,
                        Role::Intervention(j) => row_int[j] = v,
                        Role::Outcome => outcome.as_mut().unwrap().push(v),
                        Role::GObs => oracle.as_mut().unwrap().g_obs.push(v),
                        Role::GInt => oracle.as_mut().unwrap().g_int.push(v),
                        Role::Id => unreachable!(),
                    }
                }
            }
        }
        if let Some(c) = coords.as_mut() {
            c.push(lat_lon);
        }
        w.extend_from_slice(&row_w);
        if has_int {
            w_int.extend_from_slice(&row_int);
        }
    }

    let dataset = Dataset {
        ids,
        coords,
        exposure_names: names,
        exposures: PointSet::from_trusted(q, w),
        interventions: has_int.then(|| PointSet::from_trusted(q, w_int)),
        outcome,
        oracle,
    };
    Ok(dataset)
}

fn csv_error(e: &csv::Error) -> IngestError {
    IngestError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Writes `dataset` with shortest round-trip decimals, atomically.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), IngestError> {
    dataset.validate()?;
    write_atomic_with(path, |out| write_csv_to(dataset, out))
}

/// Replaces `path` with `bytes` through a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    write_atomic_with(path, |out| out.write_all(bytes))
}

fn write_atomic_with<F>(path: &Path, body: F) -> Result<(), IngestError>
where
    F: FnOnce(&mut BufWriter<&File>) -> std::io::Result<()>,
{
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        body(&mut out).map_err(io)?;
        out.flush().map_err(io)?;
    }
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_csv_to<W: Write>(dataset: &Dataset, out: &mut W) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let mut wtr = csv::WriterBuilder::new().from_writer(&mut *out);
    wtr.write_record(dataset.header())?;
    let mut fields: Vec<String> = Vec::new();
    let push = |fields: &mut Vec<String>, v: f64| {
        let mut s = String::new();
        let _ = write!(s, "{v}");
        fields.push(s);
    };
    for i in 0..dataset.len() {
        fields.clear();
        if let Some(ids) = &dataset.ids {
            fields.push(ids[i].clone());
        }
        if let Some(c) = &dataset.coords {
            push(&mut fields, c[i][0]);
            push(&mut fields, c[i][1]);
        }
        for &v in dataset.exposures.row(i) {
            push(&mut fields, v);
        }
        if let Some(wi) = &dataset.interventions {
            for &v in wi.row(i) {
                push(&mut fields, v);
            }
        }
        if let Some(y) = &dataset.outcome {
            push(&mut fields, y[i]);
        }
        if let Some(o) = &dataset.oracle {
            push(&mut fields, o.g_obs[i]);
            push(&mut fields, o.g_int[i]);
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}
