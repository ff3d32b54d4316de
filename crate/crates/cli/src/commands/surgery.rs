//! `surgery`: orthogonalize a planted model's output weights against a
//! direction set and persist the purified model.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::planted::{apply_surgery, save_model, SurgeryScope};
use frontdoor_core::surgery::surgery_report;
use frontdoor_core::io::atomic_write;

use crate::commands::load_model_checked;
use crate::config::{pick, FileConfig};
use crate::formats::read_directions_csv;
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Planted model container (defaults to <out-dir>/model.plm1).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Direction-set CSV produced by `identify` (defaults to
    /// <out-dir>/directions.csv).
    #[arg(long)]
    directions: Option<PathBuf>,
    /// Which matrices to rewrite: output_only or all_writing.
    #[arg(long)]
    scope: Option<String>,
    /// Output path (defaults to <out-dir>/model_surgered.plm1).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    model: PathBuf,
    directions: PathBuf,
    scope: String,
    model_out: PathBuf,
    seed: u64,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.surgery.clone().unwrap_or_default();
    let resolved = Resolved {
        model: pick(args.model, s.model, out_dir.join("model.plm1")),
        directions: pick(args.directions, s.directions, out_dir.join("directions.csv")),
        scope: pick(args.scope, s.scope, "output_only".to_string()),
        model_out: pick(args.model_out, s.model_out, out_dir.join("model_surgered.plm1")),
        seed,
    };
    let scope = match resolved.scope.as_str() {
        "output_only" => SurgeryScope::OutputOnly,
        "all_writing" => SurgeryScope::AllWriting,
        other => {
            return Err(Failure::Usage(format!(
                "unknown scope {other:?} (expected output_only or all_writing)"
            )))
        }
    };

    let mut manifest = ManifestBuilder::new("surgery");
    manifest.input(&resolved.model)?;
    manifest.input(&resolved.directions)?;
    let model = load_model_checked(&resolved.model)?;
    let dirs = read_directions_csv(&resolved.directions)?;

    let surgered = apply_surgery(&model, &dirs, scope).map_err(Failure::from)?;
    let report = surgery_report(&model.w_out, &surgered.w_out, &dirs).map_err(Failure::from)?;
    save_model(&surgered, &resolved.model_out).map_err(Failure::from)?;
    manifest.output(&resolved.model_out);

    let report_path = out_dir.join("surgery_report.toml");
    let text = toml::to_string(&report).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;
    manifest.output(&report_path);
    manifest.write(out_dir, &resolved)?;

    println!(
        "projected {} directions out of w_out; max residual alignment {:.3e}; {} rows zeroed",
        dirs.m(),
        report.max_residual_alignment,
        report.zeroed_rows
    );
    println!("purified model -> {}", resolved.model_out.display());
    Ok(())
}
