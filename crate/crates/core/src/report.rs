//! Report emission: machine-readable records and the human-readable table
//! rendered from them.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, Evaluation, ReportFlags};
use crate::scalar::Scalar;
use crate::simulation::{DesignMoments, MonteCarloResult};

pub const RECORD_HEADER: [&str; 8] = [
    "scenario", "estimator", "point", "gains", "var_gains", "ci_lo", "ci_hi", "n_matched",
];

/// One estimator's result in full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub point: f64,
    pub gains: f64,
    pub var_gains: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n_matched: usize,
}

fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn records_from<T: Scalar>(scenario: &str, evaluation: &Evaluation<T>) -> Vec<Record> {
    evaluation
        .reports
        .iter()
        .map(|r| Record {
            scenario: scenario.to_string(),
            estimator: r.estimator,
            point: f(r.point),
            gains: f(r.gains),
            var_gains: r.var_gains.map(f),
            ci: r.ci95.map(|(lo, hi)| (f(lo), f(hi))),
            n_matched: r.n_matched,
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.estimator.label().to_string(),
            r.point.to_string(),
            r.gains.to_string(),
            opt(r.var_gains),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
            r.n_matched.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rdr = csv::Reader::from_reader(input);
    let bad = |m: String| Error::Parse {
        file: "records".into(),
        row: 0,
        message: m,
    };
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("invalid number {s:?}")))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != RECORD_HEADER.len() {
            return Err(bad(format!("expected {} fields", RECORD_HEADER.len())));
        }
        let estimator =
            EstimatorKind::from_label(&rec[1]).ok_or_else(|| bad(format!("unknown estimator {}", &rec[1])))?;
        let ci = match (num(&rec[5])?, num(&rec[6])?) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        };
        out.push(Record {
            scenario: rec[0].to_string(),
            estimator,
            point: num(&rec[2])?.ok_or_else(|| bad("missing point".into()))?,
            gains: num(&rec[3])?.ok_or_else(|| bad("missing gains".into()))?,
            var_gains: num(&rec[4])?,
            ci,
            n_matched: rec[7].parse().map_err(|_| bad("invalid n_matched".into()))?,
        });
    }
    Ok(out)
}

/// Cell strings for one record: point, gains, variance, interval.
pub fn table_cells(r: &Record) -> [String; 4] {
    [
        format!("{:.3}", r.point),
        format!("{:.3}", r.gains),
        r.var_gains.map_or("NA".into(), |v| format!("({v:.4})")),
        r.ci.map_or("NA".into(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]")),
    ]
}

/// Estimator table: rows Point Estimate, Gains, Var(Gains), CI of
/// Gains; one column per record.
pub fn format_table(records: &[Record], flags: &ReportFlags) -> String {
    const ROWS: [&str; 4] = ["Point Estimate", "Gains", "Var(Gains)", "CI of Gains"];
    let cells: Vec<[String; 4]> = records.iter().map(table_cells).collect();
    let label_w = ROWS.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = records
        .iter()
        .zip(&cells)
        .map(|(r, c)| c.iter().map(String::len).chain([r.estimator.label().len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for (r, w) in records.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", r.estimator.label());
    }
    out.push('\n');
    for (row, name) in ROWS.iter().enumerate() {
        let _ = write!(out, "{name:label_w$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", c[row]);
        }
        out.push('\n');
    }
    for r in records.iter().filter(|r| !(0.0..=1.0).contains(&r.point)) {
        let _ = writeln!(out, "note: {} point estimate {:.3} lies outside [0, 1] (not clipped)", r.estimator.label(), r.point);
    }
    if flags.plug_in_variance {
        out.push_str("note: plug-in variance (estimated propensities)\n");
    }
    if flags.within_case_correlation_ignored {
        out.push_str("note: within-case outcome correlation ignored in variances\n");
    }
    out
}

pub const GAINS_HEADER: [&str; 8] = [
    "scenario", "estimator", "baseline", "point", "gains_pp", "gains_percent", "ci_lo", "ci_hi",
];

/// Percentage-point and percent gains over baseline for every record.
pub fn write_gains_summary<W: Write>(rows: &[(f64, Vec<Record>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GAINS_HEADER)?;
    for (baseline, records) in rows {
        for r in records {
            w.write_record([
                r.scenario.clone(),
                r.estimator.label().to_string(),
                baseline.to_string(),
                r.point.to_string(),
                r.gains.to_string(),
                (r.gains / baseline).to_string(),
                opt(r.ci.map(|c| c.0)),
                opt(r.ci.map(|c| c.1)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_monte_carlo<T: Scalar, W: Write>(result: &MonteCarloResult<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "R", "bias", "emp_var", "mean_est_var", "coverage", "mc_se"])?;
    for s in &result.stats {
        w.write_record([
            s.estimator.label().to_string(),
            s.defined.to_string(),
            f(s.bias).to_string(),
            f(s.empirical_variance).to_string(),
            opt(s.mean_estimated_variance.map(f)),
            opt(s.coverage.map(f)),
            f(s.mc_se).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_enumeration<T: Scalar, W: Write>(moments: &DesignMoments<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "estimator",
        "expectation",
        "bias",
        "exact_var",
        "expected_est_var",
        "undefined_weight",
    ])?;
    for m in &moments.moments {
        w.write_record([
            m.estimator.label().to_string(),
            f(m.expectation).to_string(),
            f(m.bias).to_string(),
            f(m.variance).to_string(),
            opt(m.expected_estimated_variance.map(f)),
            f(m.undefined_weight).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
