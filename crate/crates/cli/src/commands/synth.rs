use std::fs;
use std::path::PathBuf;

use hirsute_core::synthgen::{generate, generate_masks};
use hirsute_core::Dataset;

use super::{prepare_out, CliResult};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::SynthArgs;

pub fn synth(args: &SynthArgs) -> CliResult {
    let mut cfg = RunConfig::resolve(&args.flags)?;
    let g = &mut cfg.synth;
    if let Some(seed) = args.flags.seed {
        g.seed = seed;
    }
    if let Some(b) = args.beta {
        g.hair_axis_strength = b;
    }
    if let Some(n) = args.subjects {
        g.n_subjects = n;
    }
    if let Some(n) = args.images_per_subject {
        g.images_per_subject = n;
    }
    if let Some(d) = args.dim {
        g.dim = d;
    }
    if !args.demographics.is_empty() {
        g.demographics = args.demographics.clone();
    }
    cfg.write_masks |= args.with_masks;

    let (ds, store) = generate(&cfg.synth)?;
    let out = prepare_out(&cfg)?;
    let ds = if cfg.write_masks {
        let ratios: Vec<f64> = ds.records().iter().map(|r| r.facial_hair_ratio.unwrap()).collect();
        let masks = generate_masks(&ratios, &cfg.mask_gen)?;
        let dir = out.join("masks");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut records = ds.records().to_vec();
        for (r, m) in records.iter_mut().zip(&masks) {
            let rel = PathBuf::from("masks").join(format!("{}.pgm", r.image_id));
            m.save_pgm(&out.join(&rel))?;
            r.mask_path = Some(rel);
            r.facial_hair_ratio = None;
        }
        Dataset::from_records(records)?
    } else {
        ds
    };
    ds.write_manifest(&out.join("manifest.csv"))?;
    store.write(&out.join("embeddings.fheb"))?;
    println!(
        "wrote {} images of {} subjects ({}-d) to {}",
        ds.len(),
        ds.subjects().len(),
        store.dim(),
        out.display()
    );
    Ok(())
}
