use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{DataError, LabeledDataset};

static DATASET_READS: AtomicUsize = AtomicUsize::new(0);

/// Number of dataset files opened by [`load_csv`] in this process.
pub fn dataset_reads() -> usize {
    DATASET_READS.load(Ordering::SeqCst)
}

/// How the label column is turned into class indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelPolicy {
    /// Map the distinct labels onto `0..k`: ascending numerically when every
    /// label is an integer, lexicographically otherwise.
    #[default]
    Remap,
    /// Use this name list; index `i` is class `i`. Unknown labels are errors.
    Mapping(Vec<String>),
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    pub labels: LabelPolicy,
}

/// Reads rows of the form `label,f1,...,fp`.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledDataset, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    DATASET_READS.fetch_add(1, Ordering::SeqCst);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(&shown, e))?;

    let parse_err = |line: u64, message: String| DataError::Parse {
        path: shown.clone(),
        line,
        message,
    };

    let mut dim = None;
    let mut raw_labels = Vec::new();
    let mut lines = Vec::new();
    let mut inputs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 2 {
            return Err(parse_err(line, "expected a label and at least one feature".into()));
        }
        let features = record.len() - 1;
        match dim {
            None => dim = Some(features),
            Some(d) if d != features => {
                return Err(parse_err(
                    line,
                    format!("row has {features} features, earlier rows have {d}"),
                ));
            }
            Some(_) => {}
        }
        for (col, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: '{cell}' is not a number", col + 1)))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
            }
            inputs.push(value);
        }
        raw_labels.push(record[0].to_string());
        lines.push(line);
    }
    let dim = dim.ok_or_else(|| parse_err(0, "no data rows".into()))?;

    let names = match &opts.labels {
        LabelPolicy::Mapping(names) => names.clone(),
        LabelPolicy::Remap => {
            let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
            let mut names: Vec<String> = distinct.into_iter().map(String::from).collect();
            let numeric: Option<Vec<i64>> = names.iter().map(|n| n.parse().ok()).collect();
            if let Some(values) = numeric {
                let mut paired: Vec<(i64, String)> = values.into_iter().zip(names).collect();
                paired.sort();
                names = paired.into_iter().map(|(_, n)| n).collect();
            }
            if names.len() < 2 {
                return Err(DataError::Config(format!("{shown}: need at least 2 distinct labels")));
            }
            names
        }
    };
    let labels = raw_labels
        .iter()
        .zip(&lines)
        .map(|(raw, &line)| {
            names
                .iter()
                .position(|n| n == raw)
                .ok_or_else(|| parse_err(line, format!("label '{raw}' is not a known class")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    LabeledDataset::new(dim, names.len(), inputs, labels)?.with_label_names(names)
}

/// Writes `label,f1,...,fp` rows; labels use the dataset's names when it has
/// them. Values are printed in shortest round-trip form.
pub fn write_csv<W: Write>(ds: &LabeledDataset, out: W, header: bool) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| io_error("<csv output>", e);
    if header {
        let mut cols = vec!["label".to_string()];
        cols.extend((1..=ds.dim()).map(|i| format!("f{i}")));
        writer.write_record(&cols).map_err(wrap)?;
    }
    for (x, l) in ds.iter() {
        let label = ds.label_names().map_or_else(|| l.to_string(), |n| n[l].clone());
        let mut row = Vec::with_capacity(x.len() + 1);
        row.push(label);
        row.extend(x.iter().map(f64::to_string));
        writer.write_record(&row).map_err(wrap)?;
    }
    writer.flush().map_err(|e| io_error("<csv output>", e))?;
    Ok(())
}

fn io_error(path: &str, e: impl Into<std::io::Error>) -> DataError {
    DataError::Io {
        path: path.to_string(),
        source: e.into(),
    }
}
