//! On-disk formats: TOML configs, CSV tables with a JSON sidecar carrying
//! the domain, JSON documents and the long-form estimate CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Estimate;
use crate::model::{Dataset, Domain, LatentPoint};

/// Parses a TOML document into `T`, reporting the offending key and line.
pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_toml(&text, &path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// What a data CSV cannot say about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub domain: Domain,
    pub rows: usize,
    pub features: Vec<String>,
}

/// `data.csv` → `data.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.manifest.json"))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("row {row}, column `{column}`: `{cell}` is not a number")))
}

/// Writes the observations as CSV plus the domain sidecar.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&data.feature_names)?;
    for row in &data.y {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let manifest = DataManifest { domain: data.domain, rows: data.n(), features: data.feature_names.clone() };
    write_json(&manifest_path(path), &manifest)
}

/// Reads a numeric table with a header row. Rows are numbered from 1, not
/// counting the header.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: row {row} has {} fields, header has {}",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        rows.push(
            record
                .iter()
                .zip(&header)
                .map(|(cell, name)| parse_cell(cell, row, name))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((header, rows))
}

/// Reads a data CSV. The domain comes from `domain` when given, otherwise
/// from the sidecar manifest, which must then exist.
pub fn read_dataset(path: &Path, domain: Option<Domain>) -> Result<Dataset> {
    let (names, y) = read_table(path)?;
    let sidecar = manifest_path(path);
    let manifest: Option<DataManifest> = if sidecar.exists() {
        Some(read_json(&sidecar).map_err(|e| Error::Data(format!("{}: {e}", sidecar.display())))?)
    } else {
        None
    };
    let domain = match (domain, &manifest) {
        (Some(d), _) => d,
        (None, Some(m)) => m.domain,
        (None, None) => {
            return Err(Error::Config(format!(
                "{}: no domain given and no {} sidecar",
                path.display(),
                sidecar.display()
            )))
        }
    };
    if let Some(m) = &manifest {
        if m.rows != y.len() || m.features != names {
            return Err(Error::Data(format!("{} does not describe {}", sidecar.display(), path.display())));
        }
    }
    Dataset::with_names(y, domain, names)
}

/// Casts count data to proportions by dividing each row by its denominator.
/// The denominators table has one column and one row per observation.
pub fn counts_to_proportions(data: &Dataset, denominators: &[f64]) -> Result<Dataset> {
    if denominators.len() != data.n() {
        return Err(Error::Shape(format!(
            "{} denominators for {} observations",
            denominators.len(),
            data.n()
        )));
    }
    let mut y = Vec::with_capacity(data.n());
    for (n, (row, &d)) in data.y.iter().zip(denominators).enumerate() {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Data(format!("row {}: denominator {d} is not positive", n + 1)));
        }
        y.push(row.iter().map(|v| v / d).collect());
    }
    Dataset::with_names(y, Domain::Unit, data.feature_names.clone())
}

pub fn read_denominators(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = read_table(path)?;
    if header.len() != 1 {
        return Err(Error::Data(format!("{}: expected one column, found {}", path.display(), header.len())));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// Header of the long-form estimate table. Indices are zero-based; unused
/// index columns are left empty.
pub const ESTIMATE_HEADER: [&str; 5] = ["block", "n", "k", "m", "value"];

fn index(i: Option<usize>) -> String {
    i.map_or_else(String::new, |v| v.to_string())
}

/// Flattens expectations into `block,n,k,m,value` rows. Blocks: `beta`
/// (k, with the remaining mass last when present), `pi` (n, k), `mu` (k, m),
/// `xbar` (n, k, m) and `p` (n).
pub fn write_expectations(path: &Path, z: &LatentPoint) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ESTIMATE_HEADER)?;
    let mut put = |block: &str, n: Option<usize>, k: Option<usize>, m: Option<usize>, v: f64| {
        w.write_record([block.to_string(), index(n), index(k), index(m), v.to_string()])
    };
    for (k, &v) in z.beta.iter().enumerate() {
        put("beta", None, Some(k), None, v)?;
    }
    for (n, row) in z.pi.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            put("pi", Some(n), Some(k), None, v)?;
        }
    }
    for (k, row) in z.mu.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            put("mu", None, Some(k), Some(m), v)?;
        }
    }
    for (n, factors) in z.xbar.iter().enumerate() {
        for (k, row) in factors.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                put("xbar", Some(n), Some(k), Some(m), v)?;
            }
        }
    }
    for (n, &v) in z.p.iter().enumerate() {
        put("p", Some(n), None, None, v)?;
    }
    w.flush()?;
    Ok(())
}

fn set(target: &mut Vec<f64>, i: usize, v: f64) {
    if target.len() <= i {
        target.resize(i + 1, f64::NAN);
    }
    target[i] = v;
}

fn grow<T: Default + Clone>(target: &mut Vec<T>, i: usize) -> &mut T {
    if target.len() <= i {
        target.resize(i + 1, T::default());
    }
    &mut target[i]
}

/// Reads an estimate from the long-form table, e.g. one produced by an
/// external decomposition tool. `sigma` and `p` rows are accepted and
/// ignored; every other block name is an error.
pub fn read_estimate_csv(path: &Path) -> Result<Estimate> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ESTIMATE_HEADER {
        return Err(Error::Data(format!(
            "{}: header must be `{}`",
            path.display(),
            ESTIMATE_HEADER.join(",")
        )));
    }
    let (mut beta, mut pi, mut mu) = (Vec::new(), Vec::<Vec<f64>>::new(), Vec::<Vec<f64>>::new());
    let mut xbar: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != 5 {
            return Err(Error::Data(format!("{}: row {row} has {} fields", path.display(), record.len())));
        }
        let idx = |col: usize| -> Result<Option<usize>> {
            let cell = record[col].trim();
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse()
                .map(Some)
                .map_err(|_| Error::Data(format!("row {row}, column `{}`: bad index `{cell}`", ESTIMATE_HEADER[col])))
        };
        let need = |v: Option<usize>, col: usize| {
            v.ok_or_else(|| Error::Data(format!("row {row}: `{}` is required here", ESTIMATE_HEADER[col])))
        };
        let (n, k, m) = (idx(1)?, idx(2)?, idx(3)?);
        let v = parse_cell(&record[4], row, "value")?;
        match record[0].trim() {
            "beta" => set(&mut beta, need(k, 2)?, v),
            "pi" => set(grow(&mut pi, need(n, 1)?), need(k, 2)?, v),
            "mu" => set(grow(&mut mu, need(k, 2)?), need(m, 3)?, v),
            "xbar" => set(grow(grow(&mut xbar, need(n, 1)?), need(k, 2)?), need(m, 3)?, v),
            "sigma" | "p" => {}
            other => return Err(Error::Data(format!("row {row}: unknown block `{other}`"))),
        }
    }
    let filled = |v: &[f64]| v.iter().all(|x| !x.is_nan());
    if !filled(&beta)
        || !pi.iter().all(|r| filled(r))
        || !mu.iter().all(|r| filled(r))
        || !xbar.iter().flatten().all(|r| filled(r))
    {
        return Err(Error::Shape(format!("{}: some estimate entries are missing", path.display())));
    }
    let est = Estimate { beta, pi, mu, xbar: (!xbar.is_empty()).then_some(xbar) };
    est.validate()?;
    Ok(est)
}
