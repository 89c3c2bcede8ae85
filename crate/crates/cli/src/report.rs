use std::path::Path;

use crate::args::ReportArgs;
use crate::manifest::RunManifest;
use crate::{write_file, CliError};

pub const SERIES_HEADER: &str = "fraction,lower,accuracy,upper";

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let series = bound_series(&args.sweep)?;
    let mut out = format!("{SERIES_HEADER}\n");
    for row in series {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(&args.out, out)?;
    RunManifest::new("report", args)
        .input(&args.sweep)
        .output(&args.out)
        .write()
}

/// The per-fraction mean rows of a sweep table as `[fraction, lower,
/// accuracy, upper]`, sorted by fraction. Values are copied verbatim.
pub fn bound_series(path: &Path) -> Result<Vec<[String; 4]>, CliError> {
    let bad = |message: String| CliError::SweepFormat {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (fraction, seed, lower, accuracy, upper) = (
        col("fraction")?,
        col("seed")?,
        col("m_bt_lower")?,
        col("accuracy")?,
        col("upper")?,
    );

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.get(seed) != Some(crate::sweep::MEAN_LABEL) {
            continue;
        }
        let field = |c: usize| record.get(c).unwrap_or("").to_string();
        let row = [field(fraction), field(lower), field(accuracy), field(upper)];
        if row[1..].iter().all(String::is_empty) {
            continue;
        }
        let key: f64 = row[0]
            .parse()
            .map_err(|_| bad(format!("row {}: fraction '{}' is not a number", i + 2, row[0])))?;
        for v in &row[1..] {
            v.parse::<f64>()
                .map_err(|_| bad(format!("row {}: '{v}' is not a number", i + 2)))?;
        }
        rows.push((key, row));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}
