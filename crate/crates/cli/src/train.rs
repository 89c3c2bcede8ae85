use protoscope::data::{load_csv, partition_fraction, CsvOptions};
use protoscope::network::{save_model, Model};
use protoscope::trainer;

use crate::args::TrainArgs;
use crate::manifest::RunManifest;
use crate::{write_file, CliError};

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let opts = CsvOptions {
        has_header: args.header,
        ..Default::default()
    };
    let mut ds = load_csv(&args.data, &opts)?;
    if let Some(fraction) = args.fraction {
        ds = partition_fraction(&ds, fraction, args.seed)?;
    }

    let spec = args.model.network_spec(ds.dim(), ds.num_classes(), args.seed)?;
    let mut model = Model::build(spec)?;
    model.set_labels(ds.label_names().map(<[String]>::to_vec));
    let (model, history) = trainer::train(model, &ds, &args.train.config(args.seed))?;

    save_model(&model, &args.out)?;
    let mut manifest = RunManifest::new("train", args)
        .input(&args.data)
        .output(&args.out)
        .model_hash(model.content_hash());
    if let Some(path) = &args.history {
        write_file(path, history.to_csv())?;
        manifest = manifest.output(path);
    }
    manifest.write()?;

    if let Some(acc) = history.final_accuracy() {
        println!("trained on {} examples, final epoch accuracy {acc:.4}", ds.len());
    }
    Ok(())
}
