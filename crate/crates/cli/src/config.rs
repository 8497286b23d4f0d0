//! Run configuration: an optional TOML file overridden by flags. Every
//! command that writes an output directory snapshots the merged result.

use std::path::{Path, PathBuf};

use clap::Args;
use hirsute_core::synthgen::{GenConfig, MaskConfig};
use hirsute_core::{PairCategory, RatioClassScheme, ScoringConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Mask root for relative mask paths (defaults to the manifest's directory).
    pub masks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Expected embedding dimension; any dimension is accepted when unset.
    pub dim: Option<usize>,
    pub seed: u64,
    pub splits: usize,
    pub target_fmr: f64,
    /// Defaults to ten times the target FMR.
    pub tail_frac: Option<f64>,
    pub bins: usize,
    pub block_size: usize,
    /// Demographic tags or "all"; empty means every tag in the manifest.
    pub scopes: Vec<String>,
    pub groups: Vec<PairCategory>,
    pub count_shadow: bool,
    pub cross_demographic: bool,
    /// Adjacent histogram bins summed in exported plot data.
    pub histogram_coarsen: usize,
    pub write_masks: bool,
    #[serde(skip)]
    pub workers: usize,
    pub classes: RatioClassScheme,
    pub synth: GenConfig,
    pub mask_gen: MaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scoring = ScoringConfig::default();
        Self {
            manifest: None,
            embeddings: None,
            masks: None,
            out: None,
            dim: None,
            seed: 0,
            splits: 5,
            target_fmr: 1e-4,
            tail_frac: None,
            bins: scoring.bins,
            block_size: scoring.block_size,
            scopes: Vec::new(),
            groups: PairCategory::default_groups(),
            count_shadow: false,
            cross_demographic: false,
            histogram_coarsen: 100,
            write_masks: false,
            workers: 1,
            classes: RatioClassScheme::default(),
            synth: GenConfig::default(),
            mask_gen: MaskConfig::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image manifest CSV.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Binary embedding matrix.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Mask directory.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of validation/test splits.
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub target_fmr: Option<f64>,
    /// Fraction of each score cell kept exactly.
    #[arg(long)]
    pub tail_frac: Option<f64>,
    /// Scoring threads; never changes results.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Demographic scope (repeatable); "all" pools every image.
    #[arg(long = "scope")]
    pub scopes: Vec<String>,
    /// Calibration group such as cl_vs_fh_L1 (repeatable).
    #[arg(long = "group")]
    pub groups: Vec<String>,
    /// Count shadow pixels as facial hair when deriving ratios.
    #[arg(long)]
    pub count_shadow: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with flag overrides applied, then validated.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    cfg.$field = v.into();
                }
            )*};
        }
        take!(manifest, embeddings, masks, out, seed, splits, target_fmr);
        if flags.tail_frac.is_some() {
            cfg.tail_frac = flags.tail_frac;
        }
        if let Some(w) = flags.workers {
            cfg.workers = w;
        }
        if !flags.scopes.is_empty() {
            cfg.scopes = flags.scopes.clone();
        }
        if !flags.groups.is_empty() {
            cfg.groups = flags
                .groups
                .iter()
                .map(|g| g.parse())
                .collect::<Result<_, _>>()?;
        }
        cfg.count_shadow |= flags.count_shadow;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.target_fmr > 0.0 && self.target_fmr < 1.0) {
            return Err(CliError::Usage(format!(
                "--target-fmr {} must lie in (0, 1)",
                self.target_fmr
            )));
        }
        if self.splits == 0 || self.workers == 0 {
            return Err(CliError::Usage("--splits and --workers must be positive".into()));
        }
        if self.histogram_coarsen == 0 {
            return Err(CliError::Usage("histogram_coarsen must be positive".into()));
        }
        self.scoring().validate()?;
        self.classes.validate()?;
        Ok(())
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            tail_frac: self
                .tail_frac
                .unwrap_or_else(|| ScoringConfig::for_target_fmr(self.target_fmr).tail_frac),
            bins: self.bins,
            block_size: self.block_size,
            workers: self.workers,
        }
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nsplits = 2\ntarget_fmr = 0.001\n[synth]\ndim = 8\n").unwrap();
        let flags = Flags {
            config: Some(path),
            seed: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.splits, cfg.target_fmr), (9, 2, 0.001));
        assert_eq!(cfg.synth.dim, 8);
        assert!((cfg.scoring().tail_frac - 0.01).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trips_without_workers() {
        let cfg = RunConfig {
            workers: 8,
            manifest: Some("m.csv".into()),
            ..Default::default()
        };
        let text = cfg.snapshot();
        assert!(!text.contains("workers"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig { workers: 1, ..cfg });
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let flags = Flags {
            target_fmr: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(RunConfig::resolve(&flags), Err(CliError::Usage(_))));
        let flags = Flags {
            groups: vec!["cl_vs_beard".into()],
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(&flags).unwrap_err().code(), 1);
    }
}
