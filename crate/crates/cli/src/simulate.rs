use crate::config::Config;
use crate::error::{output, CliResult};
use crate::output::Outputs;
use macroreal_core::protocol::PROTOCOL;
use macroreal_core::sim::{
    iteration_path, run_protocol_map, write_streams_csv, DatasetFile, DatasetManifest,
    DATASET_MANIFEST,
};
use std::fs;

/// Simulates the full protocol, writing each iteration as soon as it is
/// generated, then the dataset manifest.
pub fn simulate(out: &mut Outputs, cfg: &Config) -> CliResult<DatasetManifest> {
    for s in PROTOCOL {
        fs::create_dir_all(out.path(&format!("sub_run_{}", s.id()))).map_err(output)?;
    }
    let written = run_protocol_map(&cfg.source, &cfg.setup, &cfg.iterations, |info, streams| {
        let rel = iteration_path(&info.sub_run, info.iteration)
            .to_string_lossy()
            .replace('\\', "/");
        let f = fs::File::create(out.path(&rel))?;
        write_streams_csv(&streams, f)?;
        Ok::<_, macroreal_core::Error>(DatasetFile {
            sub_run: info.sub_run.id(),
            iteration: info.iteration,
            seed: info.seed,
            visibility: info.visibility,
            path: rel,
        })
    })?;
    let mut files = Vec::new();
    for (_, iters) in written {
        for f in iters {
            files.push(f.map_err(output)?);
        }
    }
    for f in &files {
        out.record(f.path.clone());
    }
    let manifest = DatasetManifest {
        source: cfg.source.clone(),
        setup: cfg.setup,
        iterations: cfg.iterations,
        files,
    };
    // Full precision: the dataset manifest feeds the analysis back.
    let text = serde_json::to_string_pretty(&manifest).map_err(output)? + "\n";
    out.text(DATASET_MANIFEST, &text)?;
    Ok(manifest)
}
