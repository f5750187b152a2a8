//! Comma-separated file formats for datasets, predictions, policies and
//! propensities.
//!
//! Row numbers in errors are file line numbers (the header is line 1).

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::error::{Error, Result};
use crate::model::{EvaluationDataset, Individual, LocationSet, PolicyAssignment, PredictionMatrix};
use crate::scalar::Scalar;

const INDIVIDUAL_COLUMNS: [&str; 4] = ["individual_id", "case_id", "location", "outcome"];

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Extra columns to skip instead of treating as covariates.
    pub ignore_columns: Vec<String>,
}

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

/// Opens a file for reading; errors name the path.
pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| file_error(path, e))
}

/// Creates (truncates) a file, making missing parent directories.
pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    }
    File::create(path).map_err(|e| file_error(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| file_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write as _;
    create(path)?.write_all(text.as_bytes()).map_err(|e| file_error(path, e))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new().trim(Trim::All).from_reader(r)
}

fn line_of(record: &StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

fn read_records<R: Read>(file: &str, r: R) -> Result<(StringRecord, Vec<StringRecord>)> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(|e| parse_err(file, 1, e.to_string()))?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(file, row, e.to_string())
        })?;
        rows.push(rec);
    }
    Ok((header, rows))
}

fn parse_scalar<T: Scalar>(file: &str, row: usize, column: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(file, row, format!("column {column}: invalid number {raw:?}")))
}

/// Parses a capacities file `location_id,capacity` into `locations`,
/// preserving file order for new ids.
pub fn read_capacities<R: Read>(file: &str, r: R, locations: &mut LocationSet) -> Result<()> {
    let (header, rows) = read_records(file, r)?;
    if header.len() != 2 || &header[0] != "location_id" || &header[1] != "capacity" {
        return Err(parse_err(file, 1, "expected header location_id,capacity"));
    }
    let mut seen = std::collections::HashSet::new();
    for rec in rows {
        let row = line_of(&rec);
        if rec.len() != 2 {
            return Err(parse_err(file, row, format!("expected 2 fields, found {}", rec.len())));
        }
        let id = &rec[0];
        if id.is_empty() {
            return Err(parse_err(file, row, "empty location id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(file, row, format!("duplicate location id {id}")));
        }
        // an empty capacity declares the location without a limit
        let cap: Option<u64> = match &rec[1] {
            "" => None,
            v => Some(v.parse().map_err(|_| parse_err(file, row, format!("invalid capacity {v:?}")))?),
        };
        let idx = locations.get_or_insert(id);
        locations.set_capacity(idx, cap);
    }
    Ok(())
}

/// Reads an individuals file (and optional capacities file) into a dataset.
///
/// Location order is capacities-file order first, then order of first
/// appearance in the individuals file.
pub fn ingest_dataset<T: Scalar, R: Read, C: Read>(
    individuals_name: &str,
    individuals: R,
    capacities: Option<(&str, C)>,
    options: &IngestOptions,
) -> Result<EvaluationDataset<T>> {
    let mut locations = LocationSet::new();
    if let Some((name, r)) = capacities {
        read_capacities(name, r, &mut locations)?;
    }
    let file = individuals_name;
    let (header, rows) = read_records(file, individuals)?;
    if header.len() < 4 || header.iter().take(4).ne(INDIVIDUAL_COLUMNS.iter().copied()) {
        return Err(parse_err(
            file,
            1,
            "expected header individual_id,case_id,location,outcome[,covariates...]",
        ));
    }
    let mut covariate_cols = Vec::new();
    let mut covariate_names = Vec::new();
    for (j, name) in header.iter().enumerate().skip(4) {
        if !options.ignore_columns.iter().any(|c| c == name) {
            covariate_cols.push(j);
            covariate_names.push(name.to_string());
        }
    }
    for wanted in &options.ignore_columns {
        if !header.iter().any(|h| h == wanted) {
            return Err(parse_err(file, 1, format!("missing column {wanted}")));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset {
            file: file.to_string(),
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut first_placement: HashMap<String, (usize, usize)> = HashMap::new();
    for rec in &rows {
        let row = line_of(rec);
        if rec.len() != header.len() {
            return Err(parse_err(
                file,
                row,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let (id, case_id, loc, outcome) = (&rec[0], &rec[1], &rec[2], &rec[3]);
        if id.is_empty() || case_id.is_empty() || loc.is_empty() {
            return Err(parse_err(file, row, "empty identifier"));
        }
        let outcome = match outcome {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    file,
                    row,
                    format!("outcome {other:?} outside {{0,1}}"),
                ))
            }
        };
        let historical = locations.get_or_insert(loc);
        match first_placement.get(case_id) {
            Some(&(first_loc, _)) if first_loc != historical => {
                return Err(Error::InconsistentCase {
                    file: file.to_string(),
                    row,
                    case_id: case_id.to_string(),
                    first: locations.id(first_loc).to_string(),
                    second: loc.to_string(),
                });
            }
            Some(_) => {}
            None => {
                first_placement.insert(case_id.to_string(), (historical, row));
            }
        }
        let covariates = covariate_cols
            .iter()
            .map(|&j| parse_scalar(file, row, &header[j], &rec[j]))
            .collect::<Result<Vec<T>>>()?;
        out.push(Individual {
            id: id.to_string(),
            case_id: case_id.to_string(),
            historical,
            outcome,
            covariates,
        });
    }
    // duplicate ids are reported with their file line
    let mut seen = HashMap::new();
    for (rec, ind) in rows.iter().zip(&out) {
        if seen.insert(ind.id.as_str(), ()).is_some() {
            return Err(parse_err(
                file,
                line_of(rec),
                format!("duplicate individual id {}", ind.id),
            ));
        }
    }
    EvaluationDataset::from_parts_named(file, locations, out, covariate_names)
}

pub fn ingest_dataset_files<T: Scalar>(
    individuals: &Path,
    capacities: Option<&Path>,
    options: &IngestOptions,
) -> Result<EvaluationDataset<T>> {
    let ind_name = individuals.display().to_string();
    let ind = open(individuals)?;
    match capacities {
        Some(p) => {
            let name = p.display().to_string();
            ingest_dataset(&ind_name, ind, Some((name.as_str(), open(p)?)), options)
        }
        None => ingest_dataset::<T, _, File>(&ind_name, ind, None, options),
    }
}

/// Case arrival order from a numeric column of the individuals file.
///
/// A case arrives at the smallest value among its members; ties keep
/// first-appearance order.
pub fn read_arrival_order<T: Scalar, R: Read>(
    file: &str,
    r: R,
    column: &str,
    dataset: &EvaluationDataset<T>,
) -> Result<Vec<usize>> {
    let (header, rows) = read_records(file, r)?;
    let col = header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| parse_err(file, 1, format!("missing column {column}")))?;
    let mut arrival: Vec<Option<f64>> = vec![None; dataset.cases().len()];
    for rec in &rows {
        let row = line_of(rec);
        let id = rec.get(0).unwrap_or("");
        let i = dataset
            .individual_position(id)
            .ok_or_else(|| parse_err(file, row, format!("unknown individual {id}")))?;
        let v: f64 = parse_scalar(file, row, column, rec.get(col).unwrap_or(""))?;
        let c = dataset.case_of(i);
        arrival[c] = Some(arrival[c].map_or(v, |old| old.min(v)));
    }
    let mut order: Vec<usize> = (0..dataset.cases().len()).collect();
    if let Some(c) = arrival.iter().position(Option::is_none) {
        return Err(Error::InvalidArgument(format!(
            "case {} has no arrival value",
            dataset.cases()[c].id
        )));
    }
    order.sort_by(|&a, &b| {
        arrival[a]
            .partial_cmp(&arrival[b])
            .expect("finite arrival values")
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Reads an `individual_id,<prefix><loc1>,...` table aligned to the dataset.
fn read_location_table<T: Scalar, R: Read>(
    file: &str,
    r: R,
    prefix: &str,
    dataset: &EvaluationDataset<T>,
) -> Result<Vec<T>> {
    let (header, rows) = read_records(file, r)?;
    if header.is_empty() || &header[0] != "individual_id" {
        return Err(parse_err(file, 1, "first column must be individual_id"));
    }
    let k = dataset.k();
    let mut col_of_loc = vec![None; k];
    for (j, name) in header.iter().enumerate().skip(1) {
        let loc = name
            .strip_prefix(prefix)
            .ok_or_else(|| parse_err(file, 1, format!("column {name} lacks prefix {prefix}")))?;
        let a = dataset
            .locations()
            .position(loc)
            .ok_or_else(|| parse_err(file, 1, format!("unknown location {loc}")))?;
        if col_of_loc[a].replace(j).is_some() {
            return Err(parse_err(file, 1, format!("duplicate column {name}")));
        }
    }
    if let Some(a) = col_of_loc.iter().position(Option::is_none) {
        return Err(parse_err(
            file,
            1,
            format!("missing column {prefix}{}", dataset.locations().id(a)),
        ));
    }
    let mut values = vec![T::zero(); dataset.n() * k];
    let mut filled = vec![false; dataset.n()];
    for rec in &rows {
        let row = line_of(rec);
        if rec.len() != header.len() {
            return Err(parse_err(
                file,
                row,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let i = dataset
            .individual_position(&rec[0])
            .ok_or_else(|| parse_err(file, row, format!("unknown individual {}", &rec[0])))?;
        if std::mem::replace(&mut filled[i], true) {
            return Err(parse_err(file, row, format!("duplicate individual {}", &rec[0])));
        }
        for (a, col) in col_of_loc.iter().enumerate() {
            let j = col.expect("all columns present");
            let v: T = parse_scalar(file, row, &header[j], &rec[j])?;
            if v < T::zero() || v > T::one() {
                return Err(parse_err(file, row, format!("{} = {v} outside [0, 1]", &header[j])));
            }
            values[i * k + a] = v;
        }
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(Error::InvalidArgument(format!(
            "{file}: no row for individual {}",
            dataset.individuals()[i].id
        )));
    }
    Ok(values)
}

pub fn read_predictions<T: Scalar, R: Read>(
    file: &str,
    r: R,
    dataset: &EvaluationDataset<T>,
) -> Result<PredictionMatrix<T>> {
    let values = read_location_table(file, r, "mu_", dataset)?;
    PredictionMatrix::new(dataset.n(), dataset.k(), values)
}

/// Raw N × K propensity table `individual_id,pi_<loc>,...`.
pub fn read_propensity_table<T: Scalar, R: Read>(
    file: &str,
    r: R,
    dataset: &EvaluationDataset<T>,
) -> Result<Vec<T>> {
    read_location_table(file, r, "pi_", dataset)
}

pub fn read_policy<T: Scalar, R: Read>(
    file: &str,
    r: R,
    dataset: &EvaluationDataset<T>,
) -> Result<PolicyAssignment> {
    let (header, rows) = read_records(file, r)?;
    if header.len() != 2 || &header[0] != "case_id" || &header[1] != "location" {
        return Err(parse_err(file, 1, "expected header case_id,location"));
    }
    let mut map = HashMap::new();
    for rec in &rows {
        let row = line_of(rec);
        if rec.len() != 2 {
            return Err(parse_err(file, row, format!("expected 2 fields, found {}", rec.len())));
        }
        if dataset.case_position(&rec[0]).is_none() {
            return Err(parse_err(file, row, format!("unknown case {}", &rec[0])));
        }
        let loc = dataset
            .locations()
            .position(&rec[1])
            .ok_or_else(|| parse_err(file, row, format!("unknown location {}", &rec[1])))?;
        if map.insert(rec[0].to_string(), loc).is_some() {
            return Err(parse_err(file, row, format!("duplicate case {}", &rec[0])));
        }
    }
    PolicyAssignment::from_case_map(dataset, &map)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().from_writer(w)
}

/// Writes the individuals file and, when requested, a capacities file
/// listing every location (empty capacity where none is declared).
pub fn write_dataset<T: Scalar, W: Write, C: Write>(
    dataset: &EvaluationDataset<T>,
    individuals: W,
    capacities: Option<C>,
) -> Result<()> {
    let mut w = writer(individuals);
    let mut header: Vec<String> = INDIVIDUAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for ind in dataset.individuals() {
        let mut rec = vec![
            ind.id.clone(),
            ind.case_id.clone(),
            dataset.locations().id(ind.historical).to_string(),
            if ind.outcome { "1" } else { "0" }.to_string(),
        ];
        rec.extend(ind.covariates.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(c) = capacities {
        let mut w = writer(c);
        w.write_record(["location_id", "capacity"])?;
        for loc in dataset.locations().iter() {
            w.write_record([loc.id.0.clone(), loc.capacity.map(|c| c.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_location_table<T: Scalar, W: Write>(
    out: W,
    prefix: &str,
    dataset: &EvaluationDataset<T>,
    k: usize,
    value: impl Fn(usize, usize) -> T,
) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["individual_id".to_string()];
    header.extend(
        dataset
            .locations()
            .iter()
            .map(|l| format!("{prefix}{}", l.id)),
    );
    w.write_record(&header)?;
    for (i, ind) in dataset.individuals().iter().enumerate() {
        let mut rec = vec![ind.id.clone()];
        rec.extend((0..k).map(|a| value(i, a).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions<T: Scalar, W: Write>(
    dataset: &EvaluationDataset<T>,
    predictions: &PredictionMatrix<T>,
    out: W,
) -> Result<()> {
    predictions.check_shape(dataset.n(), dataset.k())?;
    write_location_table(out, "mu_", dataset, dataset.k(), |i, a| predictions.get(i, a))
}

pub fn write_propensity_table<T: Scalar, W: Write>(
    dataset: &EvaluationDataset<T>,
    prob: impl Fn(usize, usize) -> T,
    out: W,
) -> Result<()> {
    write_location_table(out, "pi_", dataset, dataset.k(), prob)
}

pub fn write_policy<T: Scalar, W: Write>(
    dataset: &EvaluationDataset<T>,
    policy: &PolicyAssignment,
    out: W,
) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["case_id", "location"])?;
    for (case, &a) in dataset.cases().iter().zip(policy.case_assignment()) {
        w.write_record([case.id.as_str(), dataset.locations().id(a).0.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
