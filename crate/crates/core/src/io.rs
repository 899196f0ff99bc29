//! Text formats for datasets, regularization paths, fitted states and
//! cross-validation reports.
//!
//! Datasets are two CSV files (`user,left,right,y[,weight]` and
//! `item,f0,...`); identity features need no file. Paths and states are
//! JSON lines: a header object followed by one object per snapshot and per
//! support event. Reals are written in their shortest round-trip form, so
//! every write is lossless and byte-deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SolverConfig;
use crate::cv::CvReport;
use crate::error::{Error, Result};
use crate::model::{ComparisonDataset, ComparisonRecord, FeatureMatrix, ModelState};
use crate::path::{PathPoint, RegularizationPath, SupportEvent};
use crate::penalty::PenaltyMode;

pub const FORMAT_VERSION: u32 = 1;
pub const COMPARISON_HEADER: [&str; 5] = ["user", "left", "right", "y", "weight"];

/// Where item features come from when loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSource<'a> {
    Identity,
    File(&'a Path),
}

impl<'a> FeatureSource<'a> {
    /// `"identity"` or a path.
    pub fn parse(token: &'a str) -> Self {
        if token == "identity" {
            FeatureSource::Identity
        } else {
            FeatureSource::File(Path::new(token))
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Dataset inputs that cannot be opened are reported as parse failures of
/// that file.
fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        msg: format!("cannot open: {e}"),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_err(e: std::io::Error) -> Error {
    Error::io("<writer>", e)
}

fn parse_real(file: &str, line: u64, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        msg: format!("invalid {what} {field:?}"),
    })
}

struct RawRow {
    line: u64,
    user: String,
    left: String,
    right: String,
    y: f64,
    weight: f64,
}

fn read_comparisons<R: Read>(reader: R, file: &str) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            file: file.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    let has_weight = match found.as_slice() {
        ["user", "left", "right", "y"] => false,
        ["user", "left", "right", "y", "weight"] => true,
        _ => {
            return Err(Error::HeaderMismatch {
                file: file.into(),
                expected: "user,left,right,y[,weight]".into(),
                found: found.join(","),
            })
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let y = parse_real(file, line, &rec[3], "outcome")?;
        let weight = if has_weight {
            parse_real(file, line, &rec[4], "weight")?
        } else {
            1.0
        };
        rows.push(RawRow {
            line,
            user: rec[0].trim().to_string(),
            left: rec[1].trim().to_string(),
            right: rec[2].trim().to_string(),
            y,
            weight,
        });
    }
    Ok(rows)
}

fn read_features<R: Read>(reader: R, file: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            file: file.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let d = headers.len().saturating_sub(1);
    let ok = headers.get(0).map(str::trim) == Some("item")
        && d > 0
        && headers.iter().skip(1).enumerate().all(|(i, h)| h.trim() == format!("f{i}"));
    if !ok {
        return Err(Error::HeaderMismatch {
            file: file.into(),
            expected: "item,f0,...,f{d-1}".into(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let item = rec[0].trim().to_string();
        let values = (1..=d)
            .map(|j| parse_real(file, line, &rec[j], "feature value"))
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(item.clone(), values).is_some() {
            return Err(Error::DuplicateFeatureRow {
                file: file.into(),
                item,
            });
        }
    }
    Ok(rows)
}

/// Read comparisons against the id maps of `reference` (typically the
/// training data of a fitted model). Users unknown to `reference` get index
/// `reference.n_users()` or above, so predictors fall back to the common
/// model for them; unknown items are a parse error.
pub fn read_records_for<R: Read>(reader: R, name: &str, reference: &ComparisonDataset) -> Result<Vec<ComparisonRecord>> {
    let rows = read_comparisons(reader, name)?;
    let items: BTreeMap<&str, usize> = reference.item_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let users: BTreeMap<&str, usize> = reference.user_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut unknown: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let item = |id: &str| {
            items.get(id).copied().ok_or_else(|| Error::Parse {
                file: name.into(),
                line: row.line,
                msg: format!("item {id:?} is unknown to the reference dataset"),
            })
        };
        let (left, right) = (item(&row.left)?, item(&row.right)?);
        if left == right {
            return Err(Error::Parse {
                file: name.into(),
                line: row.line,
                msg: format!("item {:?} compared with itself", row.left),
            });
        }
        if !(row.weight > 0.0) || !row.weight.is_finite() || !row.y.is_finite() {
            return Err(Error::Parse {
                file: name.into(),
                line: row.line,
                msg: "outcome must be finite and weight positive".into(),
            });
        }
        let user = match users.get(row.user.as_str()) {
            Some(&u) => u,
            None => {
                let next = reference.n_users() + unknown.len();
                *unknown.entry(row.user.as_str()).or_insert(next)
            }
        };
        out.push(ComparisonRecord {
            user,
            left,
            right,
            outcome: row.y,
            weight: row.weight,
        });
    }
    Ok(out)
}

pub fn load_records_for(file: &Path, reference: &ComparisonDataset) -> Result<Vec<ComparisonRecord>> {
    read_records_for(BufReader::new(open_input(file)?), &file.display().to_string(), reference)
}

/// Build a dataset from CSV readers. Users and items are reindexed in
/// lexicographic id order; records keep file order.
pub fn read_dataset<R: Read, F: Read>(
    comparisons: R,
    comparisons_name: &str,
    features: Option<(F, &str)>,
) -> Result<ComparisonDataset> {
    let rows = read_comparisons(comparisons, comparisons_name)?;
    let (item_ids, feature_matrix) = match features {
        None => {
            let items: BTreeSet<&str> = rows
                .iter()
                .flat_map(|r| [r.left.as_str(), r.right.as_str()])
                .collect();
            let ids: Vec<String> = items.into_iter().map(String::from).collect();
            let n = ids.len();
            (ids, FeatureMatrix::identity(n))
        }
        Some((reader, name)) => {
            let table = read_features(reader, name)?;
            let n = table.len();
            let d = table.values().next().map_or(0, Vec::len);
            let ids: Vec<String> = table.keys().cloned().collect();
            let data = table.into_values().flatten().collect();
            (ids, FeatureMatrix::explicit(n, d, data)?)
        }
    };
    let item_index: BTreeMap<&str, usize> = item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let user_ids: Vec<String> = rows
        .iter()
        .map(|r| r.user.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let user_index: BTreeMap<&str, usize> = user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let lookup = |row: &RawRow, id: &str| -> Result<usize> {
        item_index.get(id).copied().ok_or_else(|| Error::Parse {
            file: comparisons_name.into(),
            line: row.line,
            msg: format!("item {id:?} has no feature row"),
        })
    };
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let left = lookup(row, &row.left)?;
        let right = lookup(row, &row.right)?;
        if left == right {
            return Err(Error::Parse {
                file: comparisons_name.into(),
                line: row.line,
                msg: format!("item {:?} compared with itself", row.left),
            });
        }
        records.push(ComparisonRecord {
            user: user_index[row.user.as_str()],
            left,
            right,
            outcome: row.y,
            weight: row.weight,
        });
    }
    ComparisonDataset::from_parts(records, feature_matrix, user_ids, item_ids)
}

pub fn load_dataset(comparisons: &Path, features: FeatureSource<'_>) -> Result<ComparisonDataset> {
    let name = comparisons.display().to_string();
    let c = BufReader::new(open_input(comparisons)?);
    match features {
        FeatureSource::Identity => read_dataset::<_, File>(c, &name, None),
        FeatureSource::File(p) => {
            let fname = p.display().to_string();
            let f = open_input(p)?;
            read_dataset(c, &name, Some((BufReader::new(f), fname.as_str())))
        }
    }
}

pub fn write_comparisons<W: Write>(ds: &ComparisonDataset, mut w: W) -> Result<()> {
    writeln!(w, "{}", COMPARISON_HEADER.join(",")).map_err(write_err)?;
    for r in ds.records() {
        writeln!(
            w,
            "{},{},{},{},{}",
            ds.user_ids()[r.user],
            ds.item_ids()[r.left],
            ds.item_ids()[r.right],
            r.outcome,
            r.weight
        )
        .map_err(write_err)?;
    }
    Ok(())
}

/// Writes nothing for identity features.
pub fn write_features<W: Write>(ds: &ComparisonDataset, mut w: W) -> Result<()> {
    let FeatureMatrix::Explicit { n, d, data } = ds.features() else {
        return Ok(());
    };
    let header: Vec<String> = std::iter::once("item".to_string())
        .chain((0..*d).map(|j| format!("f{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(write_err)?;
    for i in 0..*n {
        write!(w, "{}", ds.item_ids()[i]).map_err(write_err)?;
        for x in &data[i * d..(i + 1) * d] {
            write!(w, ",{x}").map_err(write_err)?;
        }
        writeln!(w).map_err(write_err)?;
    }
    Ok(())
}

/// Write the comparisons file and, for explicit features, the features file.
pub fn save_dataset(ds: &ComparisonDataset, comparisons: &Path, features: Option<&Path>) -> Result<()> {
    let mut w = create(comparisons)?;
    write_comparisons(ds, &mut w)?;
    w.flush().map_err(write_err)?;
    if let (Some(p), false) = (features, ds.features().is_identity()) {
        let mut w = create(p)?;
        write_features(ds, &mut w)?;
        w.flush().map_err(write_err)?;
    }
    Ok(())
}

/// `kind,id,index` rows for users then items.
pub fn write_index_map<W: Write>(ds: &ComparisonDataset, mut w: W) -> Result<()> {
    writeln!(w, "kind,id,index").map_err(write_err)?;
    for (i, id) in ds.user_ids().iter().enumerate() {
        writeln!(w, "user,{id},{i}").map_err(write_err)?;
    }
    for (i, id) in ds.item_ids().iter().enumerate() {
        writeln!(w, "item,{id},{i}").map_err(write_err)?;
    }
    Ok(())
}

/// SHA-256 over the canonical serialization of the dataset.
pub fn dataset_hash(ds: &ComparisonDataset) -> String {
    let mut buf = Vec::new();
    write_comparisons(ds, &mut buf).expect("writing to memory");
    buf.extend_from_slice(b"--\n");
    if ds.features().is_identity() {
        buf.extend_from_slice(format!("identity {}\n", ds.n_items()).as_bytes());
    } else {
        write_features(ds, &mut buf).expect("writing to memory");
    }
    let digest = Sha256::digest(&buf);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Path,
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: FileKind,
    pub dataset_hash: String,
    pub config: SolverConfig,
    pub mode: PenaltyMode,
    pub alpha: f64,
    pub spectral_norm: f64,
    pub n_users: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UserBlock {
    xi: Vec<f64>,
    gamma: f64,
    z_xi: Vec<f64>,
    z_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotLine {
    k: usize,
    t: f64,
    eta: Vec<f64>,
    users: Vec<UserBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Snapshot(SnapshotLine),
    Event(SupportEvent),
}

fn snapshot_line(p: &PathPoint) -> SnapshotLine {
    let s = &p.state;
    SnapshotLine {
        k: p.k,
        t: s.t,
        eta: s.eta.clone(),
        users: (0..s.n_users())
            .map(|u| UserBlock {
                xi: s.xi_of(u).to_vec(),
                gamma: s.gamma[u],
                z_xi: s.z_xi_of(u).to_vec(),
                z_gamma: s.z_gamma[u],
            })
            .collect(),
    }
}

fn point_from_line(line: SnapshotLine, dim: usize) -> PathPoint {
    let mut state = ModelState::zeros(line.users.len(), dim);
    state.t = line.t;
    state.eta = line.eta;
    for (u, b) in line.users.into_iter().enumerate() {
        state.xi[u * dim..(u + 1) * dim].copy_from_slice(&b.xi);
        state.z_xi[u * dim..(u + 1) * dim].copy_from_slice(&b.z_xi);
        state.gamma[u] = b.gamma;
        state.z_gamma[u] = b.z_gamma;
    }
    PathPoint { k: line.k, state }
}

fn header_for(path: &RegularizationPath, kind: FileKind, hash: &str) -> Header {
    let s = path.first();
    Header {
        format_version: FORMAT_VERSION,
        kind,
        dataset_hash: hash.to_string(),
        config: path.config.clone(),
        mode: path.mode,
        alpha: path.alpha,
        spectral_norm: path.spectral_norm,
        n_users: s.n_users(),
        dim: s.dim,
    }
}

fn write_line<W: Write>(w: &mut W, line: &Line) -> Result<()> {
    serde_json::to_writer(&mut *w, line).map_err(|e| write_err(e.into()))?;
    w.write_all(b"\n").map_err(write_err)
}

pub fn write_path<W: Write>(path: &RegularizationPath, dataset_hash: &str, mut w: W) -> Result<()> {
    write_line(&mut w, &Line::Header(header_for(path, FileKind::Path, dataset_hash)))?;
    for p in &path.points {
        write_line(&mut w, &Line::Snapshot(snapshot_line(p)))?;
    }
    for e in &path.events {
        write_line(&mut w, &Line::Event(*e))?;
    }
    Ok(())
}

/// A single fitted state, stored with the header of the path it came from.
pub fn write_state<W: Write>(
    path: &RegularizationPath,
    state: &ModelState,
    dataset_hash: &str,
    mut w: W,
) -> Result<()> {
    write_line(&mut w, &Line::Header(header_for(path, FileKind::State, dataset_hash)))?;
    let point = PathPoint {
        k: (state.t / path.alpha).round() as usize,
        state: state.clone(),
    };
    write_line(&mut w, &Line::Snapshot(snapshot_line(&point)))
}

/// Parsed path or state file. For a state file `path.points` has one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFile {
    pub header: Header,
    pub path: RegularizationPath,
}

pub fn read_path<R: BufRead>(reader: R, name: &str) -> Result<PathFile> {
    let mut header: Option<Header> = None;
    let mut points = Vec::new();
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line.map_err(|e| Error::io(name, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: name.into(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let parse_err = |msg: &str| Error::Parse {
            file: name.into(),
            line: line_no,
            msg: msg.into(),
        };
        match parsed {
            Line::Header(h) if header.is_none() && line_no == 1 => {
                if h.format_version != FORMAT_VERSION {
                    return Err(parse_err("unsupported format_version"));
                }
                header = Some(h);
            }
            Line::Header(_) => return Err(parse_err("header must be the first line")),
            Line::Snapshot(s) => {
                let h = header.as_ref().ok_or_else(|| parse_err("missing header"))?;
                if s.users.len() != h.n_users
                    || s.eta.len() != h.dim
                    || s.users.iter().any(|b| b.xi.len() != h.dim || b.z_xi.len() != h.dim)
                {
                    return Err(parse_err("snapshot dimensions disagree with header"));
                }
                let point = point_from_line(s, h.dim);
                if points.last().is_some_and(|p: &PathPoint| p.state.t >= point.state.t) {
                    return Err(parse_err("snapshots must be strictly increasing in t"));
                }
                points.push(point);
            }
            Line::Event(e) => events.push(e),
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        file: name.into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    if points.is_empty() {
        return Err(Error::Parse {
            file: name.into(),
            line: 1,
            msg: "no snapshots".into(),
        });
    }
    let path = RegularizationPath {
        config: header.config.clone(),
        mode: header.mode,
        alpha: header.alpha,
        spectral_norm: header.spectral_norm,
        points,
        events,
    };
    Ok(PathFile { header, path })
}

pub fn save_path(path: &RegularizationPath, dataset: &ComparisonDataset, file: &Path) -> Result<()> {
    let mut w = create(file)?;
    write_path(path, &dataset_hash(dataset), &mut w)?;
    w.flush().map_err(write_err)
}

pub fn save_state(
    path: &RegularizationPath,
    state: &ModelState,
    dataset: &ComparisonDataset,
    file: &Path,
) -> Result<()> {
    let mut w = create(file)?;
    write_state(path, state, &dataset_hash(dataset), &mut w)?;
    w.flush().map_err(write_err)
}

/// Load a path or state file without checking provenance.
pub fn load_path_unchecked(file: &Path) -> Result<PathFile> {
    read_path(BufReader::new(open(file)?), &file.display().to_string())
}

/// Load a path or state file written for `dataset`; any other dataset is a
/// `HashMismatch`.
pub fn load_path(file: &Path, dataset: &ComparisonDataset) -> Result<PathFile> {
    let pf = load_path_unchecked(file)?;
    verify_hash(&pf.header, dataset)?;
    Ok(pf)
}

pub fn verify_hash(header: &Header, dataset: &ComparisonDataset) -> Result<()> {
    let found = dataset_hash(dataset);
    if header.dataset_hash != found {
        return Err(Error::HashMismatch {
            expected: header.dataset_hash.clone(),
            found,
        });
    }
    Ok(())
}

/// `t,fold0,...,fold{K-1},mean` rows, then a `# t_cv=...` summary line.
pub fn write_cv_report<W: Write>(report: &CvReport, mut w: W) -> Result<()> {
    let k = report.errors.len();
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("fold{i}")));
    header.push("mean".into());
    writeln!(w, "{}", header.join(",")).map_err(write_err)?;
    for (j, t) in report.t_grid.iter().enumerate() {
        write!(w, "{t}").map_err(write_err)?;
        for fold in &report.errors {
            write!(w, ",{}", fold[j]).map_err(write_err)?;
        }
        writeln!(w, ",{}", report.mean_errors[j]).map_err(write_err)?;
    }
    writeln!(
        w,
        "# t_cv={},mean_error={},tie_policy_applied={}",
        report.t_cv,
        report.mean_errors[report.t_cv_index],
        report.tie_policy_applied
    )
    .map_err(write_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_identity_file() {
        let text = "user,left,right,y\nalice,a,b,1\nbob,b,c,-1\nalice,c,a,1\n";
        let ds = read_dataset::<_, &[u8]>(text.as_bytes(), "c.csv", None).unwrap();
        assert_eq!(ds.n_records(), 3);
        assert_eq!(ds.n_items(), 3);
        assert_eq!(ds.user_ids(), ["alice", "bob"]);
        assert!(ds.records().iter().all(|r| r.weight == 1.0));
    }

    #[test]
    fn missing_feature_row_names_the_item() {
        let c = "user,left,right,y,weight\nu,a,zz,1,1\n";
        let f = "item,f0\na,0.5\nb,1\n";
        let err = read_dataset(c.as_bytes(), "c.csv", Some((f.as_bytes(), "f.csv"))).unwrap_err();
        match err {
            Error::Parse { msg, line, .. } => {
                assert!(msg.contains("zz"), "{msg}");
                assert_eq!(line, 2);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_headers_and_duplicates() {
        let err = read_dataset::<_, &[u8]>("who,left,right,y\n".as_bytes(), "c.csv", None).unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
        let c = "user,left,right,y\nu,a,b,1\n";
        let f = "item,f0\na,1\na,2\nb,0\n";
        let err = read_dataset(c.as_bytes(), "c.csv", Some((f.as_bytes(), "f.csv"))).unwrap_err();
        assert!(matches!(err, Error::DuplicateFeatureRow { .. }));
        let bad = "user,left,right,y\nu,a,b,yes\n";
        let err = read_dataset::<_, &[u8]>(bad.as_bytes(), "c.csv", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn hash_depends_on_content() {
        let a = read_dataset::<_, &[u8]>("user,left,right,y\nu,a,b,1\n".as_bytes(), "c", None).unwrap();
        let b = read_dataset::<_, &[u8]>("user,left,right,y\nu,a,b,-1\n".as_bytes(), "c", None).unwrap();
        assert_eq!(dataset_hash(&a), dataset_hash(&a.clone()));
        assert_ne!(dataset_hash(&a), dataset_hash(&b));
        assert_eq!(dataset_hash(&a).len(), 64);
    }
}
