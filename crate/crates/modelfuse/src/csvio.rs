//! CSV artifacts. Floats are written with Rust's shortest round-trip
//! formatting, so every value parses back to the same bits.

use std::fs::File;
use std::path::Path;

use modelfuse_core::diagnostics::InterpolationCurve;
use modelfuse_core::protocol::{ExperimentTable, TrialResult};
use modelfuse_core::train::TrainLog;
use modelfuse_core::Example;

use crate::error::{Error, Result};
use crate::harness::{PairwiseOutput, SizeSweepOutput};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[Example], input_dim: usize) -> Result<()> {
    let path = path.as_ref();
    let mut header: Vec<String> = (0..input_dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header,
        examples.iter().map(|e| {
            let mut row: Vec<String> = e.features.iter().map(f64::to_string).collect();
            row.push(e.label.to_string());
            row
        }),
    )
}

/// Reads `f0..f{d-1},label` rows; every row must have `input_dim` features
/// and a label below `num_classes`.
pub fn read_dataset(
    path: impl AsRef<Path>,
    input_dim: usize,
    num_classes: usize,
) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected: Vec<String> = (0..input_dim)
        .map(|i| format!("f{i}"))
        .chain(["label".to_string()])
        .collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(
            path,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::parse(path, format!("row {}: {what}", line + 1));
        let features = rec
            .iter()
            .take(input_dim)
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("invalid feature"))?;
        let label: usize = rec[input_dim]
            .trim()
            .parse()
            .map_err(|_| bad("invalid label"))?;
        if label >= num_classes {
            return Err(bad("label out of range"));
        }
        out.push(Example { features, label });
    }
    Ok(out)
}

pub fn write_train_log(path: impl AsRef<Path>, log: &TrainLog) -> Result<()> {
    write_rows(
        path.as_ref(),
        &["step", "train_loss", "val_accuracy"],
        log.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.train_loss.to_string(),
                r.val_accuracy.to_string(),
            ]
        }),
    )
}

pub const RESULTS_HEADER: [&str; 7] = [
    "base_kind",
    "source_family",
    "target_family",
    "target_task",
    "seed",
    "lambda",
    "accuracy",
];

fn result_row(r: &TrialResult) -> Vec<String> {
    vec![
        r.base_kind.as_str().into(),
        r.source_family.clone(),
        r.target_family.clone(),
        r.target_task.clone(),
        r.seed.to_string(),
        r.lambda.to_string(),
        r.accuracy.to_string(),
    ]
}

pub fn write_results(path: impl AsRef<Path>, results: &[TrialResult]) -> Result<()> {
    write_rows(
        path.as_ref(),
        &RESULTS_HEADER,
        results.iter().map(result_row),
    )
}

pub fn write_table(path: impl AsRef<Path>, table: &ExperimentTable) -> Result<()> {
    write_rows(
        path.as_ref(),
        &[
            "base_kind",
            "source_family",
            "target_family",
            "lambda",
            "mean",
            "std",
            "num_seeds",
        ],
        table.rows.iter().map(|r| {
            vec![
                r.base_kind.as_str().into(),
                r.source_family.clone(),
                r.target_family.clone(),
                r.lambda.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.num_seeds.to_string(),
            ]
        }),
    )
}

pub fn write_heatmap(path: impl AsRef<Path>, out: &PairwiseOutput) -> Result<()> {
    write_rows(
        path.as_ref(),
        &["row", "col", "improvement", "class"],
        out.cells.iter().flatten().map(|c| {
            vec![
                c.row.clone(),
                c.col.clone(),
                c.improvement.to_string(),
                c.class.map_or("intertrain", |k| k.as_str()).to_string(),
            ]
        }),
    )
}

pub fn write_size_sweep(dir: impl AsRef<Path>, out: &SizeSweepOutput) -> Result<()> {
    let dir = dir.as_ref();
    let mut header = vec!["source_train_size"];
    header.extend(RESULTS_HEADER);
    write_rows(
        &dir.join("results.csv"),
        &header,
        out.results.iter().map(|(size, r)| {
            let mut row = vec![size.to_string()];
            row.extend(result_row(r));
            row
        }),
    )?;
    write_rows(
        &dir.join("curve.csv"),
        &["source_train_size", "base_kind", "mean", "std"],
        out.curve.iter().map(|p| {
            vec![
                p.source_train_size.to_string(),
                p.base_kind.as_str().into(),
                p.mean.to_string(),
                p.std.to_string(),
            ]
        }),
    )
}

pub fn write_norms(path: impl AsRef<Path>, norms: &[(u64, String, f64, f64)]) -> Result<()> {
    write_rows(
        path.as_ref(),
        &["seed", "task", "norm_no_decay", "norm_decay"],
        norms
            .iter()
            .map(|(s, t, a, b)| vec![s.to_string(), t.clone(), a.to_string(), b.to_string()]),
    )
}

pub fn write_curve(path: impl AsRef<Path>, curve: &InterpolationCurve) -> Result<()> {
    write_rows(
        path.as_ref(),
        &["alpha", "loss", "accuracy"],
        curve
            .alphas
            .iter()
            .zip(&curve.losses)
            .zip(&curve.accuracies)
            .map(|((a, l), acc)| vec![a.to_string(), l.to_string(), acc.to_string()]),
    )
}

/// Reads the `loss` column of a curve CSV.
pub fn read_curve_losses(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rec.get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(path, "bad loss value"))
        })
        .collect()
}
