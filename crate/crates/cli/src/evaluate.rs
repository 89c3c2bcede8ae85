use protoscope::data::{load_csv, CsvOptions, LabelPolicy};
use protoscope::json;
use protoscope::metrics::{evaluate_dataless, MetricReport};
use protoscope::network::load_model;
use protoscope::proto::generate_prototypes;
use protoscope::trainer::test_accuracy;

use crate::args::EvaluateArgs;
use crate::manifest::RunManifest;
use crate::{write_file, CliError};

pub fn run(args: &EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let protos = generate_prototypes(&model, &args.proto.config(args.seed))?;
    let mut manifest = RunManifest::new("evaluate", args)
        .input(&args.model)
        .model_hash(model.content_hash());
    // Saved before scoring so a failed evaluation leaves them to inspect.
    if let Some(path) = &args.prototypes {
        write_file(path, protos.to_json())?;
        manifest = manifest.output(path);
        manifest.write()?;
    }
    let mut report = evaluate_dataless(&model, &protos)?;

    if let Some(path) = &args.validate {
        let labels = match model.labels() {
            Some(names) => LabelPolicy::Mapping(names.to_vec()),
            None => LabelPolicy::Remap,
        };
        let ds = load_csv(
            path,
            &CsvOptions {
                has_header: args.header,
                labels,
            },
        )?;
        report.accuracy = Some(test_accuracy(&model, &ds)?);
    }

    if let Some(path) = &args.validate {
        manifest = manifest.input(path);
    }

    let text = json::to_exact_string(&report).expect("report serializes");
    match &args.out {
        Some(path) => {
            write_file(path, &text)?;
            manifest = manifest.output(path);
        }
        None => println!("{text}"),
    }
    if let Some(path) = &args.csv {
        write_file(
            path,
            format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(args.fraction)),
        )?;
        manifest = manifest.output(path);
    }
    manifest.write()
}
