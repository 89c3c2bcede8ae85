//! Fraction x seed grid: train on a stratified fraction of the training
//! split, evaluate the model without data, then measure its real accuracy on
//! the held-out split.
//!
//! The table has one row per cell in `(fraction, seed)` order, each fraction
//! followed by a `mean` row averaging its successful cells. Failed cells keep
//! their row with `status = failed` and the error message.

use protoscope::data::{load_csv, partition_fraction, split_train_test, CsvOptions, LabeledDataset};
use protoscope::metrics::evaluate_dataless;
use protoscope::network::Model;
use protoscope::proto::generate_prototypes;
use protoscope::trainer::{self, test_accuracy};
use rayon::prelude::*;

use crate::args::SweepArgs;
use crate::manifest::RunManifest;
use crate::{write_file, CliError};

pub const MEAN_LABEL: &str = "mean";

pub const COLUMNS: [&str; 16] = [
    "fraction",
    "seed",
    "status",
    "train_acc",
    "h_w",
    "weight_angle_deg",
    "m_in",
    "in_std",
    "upper",
    "cs_bt",
    "bt_std",
    "cs_bt_plus_2std",
    "m_bt_lower",
    "accuracy",
    "excluded_unconverged",
    "error",
];

/// Numeric results of one cell, in [`COLUMNS`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub train_acc: f64,
    pub h_w: f64,
    pub weight_angle_deg: f64,
    pub m_in: f64,
    pub in_std: f64,
    pub upper: f64,
    pub cs_bt: f64,
    pub bt_std: f64,
    pub cs_bt_plus_2std: f64,
    pub lower: f64,
    pub accuracy: f64,
    pub excluded_unconverged: f64,
}

impl CellMetrics {
    fn values(&self) -> [f64; 12] {
        [
            self.train_acc,
            self.h_w,
            self.weight_angle_deg,
            self.m_in,
            self.in_std,
            self.upper,
            self.cs_bt,
            self.bt_std,
            self.cs_bt_plus_2std,
            self.lower,
            self.accuracy,
            self.excluded_unconverged,
        ]
    }

    fn from_values(v: [f64; 12]) -> Self {
        CellMetrics {
            train_acc: v[0],
            h_w: v[1],
            weight_angle_deg: v[2],
            m_in: v[3],
            in_std: v[4],
            upper: v[5],
            cs_bt: v[6],
            bt_std: v[7],
            cs_bt_plus_2std: v[8],
            lower: v[9],
            accuracy: v[10],
            excluded_unconverged: v[11],
        }
    }

    /// Column-wise mean; `None` for an empty slice.
    pub fn mean(cells: &[CellMetrics]) -> Option<CellMetrics> {
        if cells.is_empty() {
            return None;
        }
        let mut sum = [0.0; 12];
        for c in cells {
            sum.iter_mut().zip(c.values()).for_each(|(s, v)| *s += v);
        }
        Some(CellMetrics::from_values(sum.map(|s| s / cells.len() as f64)))
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub fraction: f64,
    pub seed: u64,
    pub outcome: Result<CellMetrics, String>,
}

/// Trains, evaluates and validates one cell.
pub fn run_cell(
    train: &LabeledDataset,
    test: &LabeledDataset,
    fraction: f64,
    seed: u64,
    args: &SweepArgs,
) -> Result<CellMetrics, CliError> {
    let part = partition_fraction(train, fraction, seed)?;
    let model = Model::build(args.model.network_spec(part.dim(), part.num_classes(), seed)?)?;
    let (model, _) = trainer::train(model, &part, &args.train.config(seed))?;
    let protos = generate_prototypes(&model, &args.proto.config(seed))?;
    let r = evaluate_dataless(&model, &protos)?;
    Ok(CellMetrics {
        train_acc: test_accuracy(&model, &part)?,
        h_w: r.h_w,
        weight_angle_deg: r.mean_weight_angle_deg,
        m_in: r.m_in_mean,
        in_std: r.m_in_std,
        upper: r.upper_bound,
        cs_bt: r.bt_cossim_mean,
        bt_std: r.bt_cossim_std,
        cs_bt_plus_2std: r.cs_bt_plus_2std,
        lower: r.lower_bound,
        accuracy: test_accuracy(&model, test)?,
        excluded_unconverged: r.excluded_unconverged as f64,
    })
}

/// Every cell of the grid, in `(fraction, seed)` order regardless of `jobs`.
pub fn run_cells(train: &LabeledDataset, test: &LabeledDataset, args: &SweepArgs) -> Result<Vec<Cell>, CliError> {
    if args.fractions.is_empty() || args.seeds == 0 {
        return Err(CliError::Config(
            "sweep needs at least one fraction and one seed".into(),
        ));
    }
    let grid: Vec<(f64, u64)> = args
        .fractions
        .iter()
        .flat_map(|&f| (0..args.seeds as u64).map(move |i| (f, args.seed + i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", args.jobs)))?;
    Ok(pool.install(|| {
        grid.par_iter()
            .map(|&(fraction, seed)| Cell {
                fraction,
                seed,
                outcome: run_cell(train, test, fraction, seed, args).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

/// The CSV table for `cells`, which must be grouped by fraction.
pub fn render_table(cells: &[Cell]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    let mut start = 0;
    while start < cells.len() {
        let fraction = cells[start].fraction;
        let end = start + cells[start..].iter().take_while(|c| c.fraction == fraction).count();
        let mut ok = Vec::new();
        for cell in &cells[start..end] {
            let mut row = vec![fraction.to_string(), cell.seed.to_string()];
            match &cell.outcome {
                Ok(m) => {
                    ok.push(*m);
                    row.push("ok".into());
                    row.extend(m.values().iter().map(f64::to_string));
                    row.push(String::new());
                }
                Err(e) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat(String::new()).take(12));
                    row.push(e.clone());
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        let mut row = vec![fraction.to_string(), MEAN_LABEL.into(), MEAN_LABEL.into()];
        match CellMetrics::mean(&ok) {
            Some(m) => row.extend(m.values().iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(12)),
        }
        row.push(String::new());
        w.write_record(&row).expect("in-memory write");
        start = end;
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn run(args: &SweepArgs) -> Result<(), CliError> {
    let opts = CsvOptions {
        has_header: args.header,
        ..Default::default()
    };
    let full = load_csv(&args.data, &opts)?;
    let (train, test) = split_train_test(&full, args.test_fraction, args.seed)?;
    let cells = run_cells(&train, &test, args)?;

    write_file(&args.out, render_table(&cells))?;
    RunManifest::new("sweep", args)
        .input(&args.data)
        .output(&args.out)
        .write()?;

    let failed: Vec<&Cell> = cells.iter().filter(|c| c.outcome.is_err()).collect();
    for c in &failed {
        if let Err(e) = &c.outcome {
            eprintln!("cell fraction={} seed={} failed: {e}", c.fraction, c.seed);
        }
    }
    if failed.len() == cells.len() {
        return Err(CliError::EmptySweep);
    }
    Ok(())
}
