use std::io::Write;

use protoscope::data::{gen_blobs, split_train_test, write_csv, BlobConfig};

use crate::args::GenDataArgs;
use crate::manifest::RunManifest;
use crate::{write_file, CliError};

pub fn run(args: &GenDataArgs) -> Result<(), CliError> {
    let ds = gen_blobs(&BlobConfig {
        k: args.k,
        per_class: args.per_class,
        p: args.p,
        separation: args.separation,
        spread: args.spread,
        seed: args.seed,
    })?;

    let Some(out) = &args.out else {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        write_csv(&ds, &mut lock, args.header)?;
        return lock
            .flush()
            .map_err(|e| crate::io_error(std::path::Path::new("<stdout>"), e));
    };

    let mut manifest = RunManifest::new("gen-data", args).output(out);
    let (train, test) = match &args.test_out {
        Some(test_path) => {
            let (train, test) = split_train_test(&ds, args.test_fraction, args.seed)?;
            manifest = manifest.output(test_path);
            (train, Some((test_path, test)))
        }
        None => (ds, None),
    };
    write_file(out, csv_bytes(&train, args.header)?)?;
    if let Some((path, test)) = test {
        write_file(path, csv_bytes(&test, args.header)?)?;
    }
    manifest.write()
}

fn csv_bytes(ds: &protoscope::data::LabeledDataset, header: bool) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_csv(ds, &mut buf, header)?;
    Ok(buf)
}
