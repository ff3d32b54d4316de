//! `identify`: rank latent features by contrastive shift, select the defense
//! candidate pool, and extract orthonormal directions from decoder columns.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::contrast::{
    defense_directions, feature_shift, invariance_scatter, select_defense_features,
    PairedActivations,
};
use frontdoor_core::io::{atomic_write, sig9};

use crate::commands::{load_activations_checked, load_model_checked, load_sae_checked};
use crate::config::{pick, pick_opt, FileConfig};
use crate::formats::write_directions_csv;
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// SAE checkpoint (defaults to <out-dir>/sae.sae1).
    #[arg(long)]
    sae: Option<PathBuf>,
    /// Harmful-side activation dump (defaults to <out-dir>/harm.actv).
    #[arg(long)]
    harm: Option<PathBuf>,
    /// Attack-side activation dump (defaults to <out-dir>/attack.actv).
    #[arg(long)]
    attack: Option<PathBuf>,
    /// Benign dump used to build the control pair set; omit to skip the
    /// secondary filter.
    #[arg(long)]
    benign: Option<PathBuf>,
    /// Candidate pool size.
    #[arg(long)]
    k_pool: Option<usize>,
    /// Planted model; when given, the report includes the cosine between the
    /// first recovered direction and the planted defense direction.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip the benign-control secondary filter even if a benign dump exists.
    #[arg(long)]
    no_control: bool,
}

#[derive(Debug, Serialize)]
struct Resolved {
    sae: PathBuf,
    harm: PathBuf,
    attack: PathBuf,
    benign: Option<PathBuf>,
    k_pool: usize,
    model: Option<PathBuf>,
    use_control: bool,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Report {
    top_feature: usize,
    top_effect_size: f64,
    selected_features: Vec<usize>,
    n_directions: usize,
    recovered_cosine: Option<f64>,
}

/// Split a benign dump into content-varying control pairs (first half paired
/// with second half).
pub fn control_pairs_from_benign(
    benign: &frontdoor_core::ActivationMatrix,
) -> Result<PairedActivations, Failure> {
    let half = benign.n() / 2;
    if half == 0 {
        return Err(Failure::Validation(
            "benign control dump needs at least two rows".into(),
        ));
    }
    let first = frontdoor_core::ActivationMatrix::new(
        benign.data.slice(ndarray::s![..half, ..]).to_owned(),
        "control_a",
    )
    .map_err(Failure::from)?;
    let second = frontdoor_core::ActivationMatrix::new(
        benign.data.slice(ndarray::s![half..2 * half, ..]).to_owned(),
        "control_b",
    )
    .map_err(Failure::from)?;
    PairedActivations::new(first, second).map_err(Failure::from)
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.identify.clone().unwrap_or_default();
    let benign = pick_opt(args.benign, s.benign).or_else(|| {
        let candidate = out_dir.join("benign.actv");
        candidate.exists().then_some(candidate)
    });
    let resolved = Resolved {
        sae: pick(args.sae, s.sae, out_dir.join("sae.sae1")),
        harm: pick(args.harm, s.harm, out_dir.join("harm.actv")),
        attack: pick(args.attack, s.attack, out_dir.join("attack.actv")),
        use_control: benign.is_some() && !args.no_control,
        benign,
        k_pool: pick(args.k_pool, s.k_pool, 1),
        model: pick_opt(args.model, s.model),
        seed,
    };

    let mut manifest = ManifestBuilder::new("identify");
    manifest.input(&resolved.sae)?;
    manifest.input(&resolved.harm)?;
    manifest.input(&resolved.attack)?;
    let sae = load_sae_checked(&resolved.sae)?;
    let harm = load_activations_checked(&resolved.harm)?;
    let attack = load_activations_checked(&resolved.attack)?;
    let pairs = PairedActivations::new(harm, attack).map_err(Failure::from)?;

    let control = match (&resolved.benign, resolved.use_control) {
        (Some(path), true) => {
            manifest.input(path)?;
            let benign = load_activations_checked(path)?;
            Some(control_pairs_from_benign(&benign)?)
        }
        _ => None,
    };

    let report = feature_shift(&sae, &pairs).map_err(Failure::from)?;
    let selected =
        select_defense_features(&report, resolved.k_pool, control.as_ref(), &sae)
            .map_err(Failure::from)?;
    let dirs = defense_directions(&sae, &selected).map_err(Failure::from)?;

    // Per-feature shift statistics.
    let shift_path = out_dir.join("shift_report.csv");
    let mut csv =
        String::from("feature_id,rank,mean_harm,mean_attack,delta,pooled_std,effect_size\n");
    for fs in &report.shifts {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fs.feature,
            fs.rank,
            sig9(fs.mean_harm),
            sig9(fs.mean_attack),
            sig9(fs.delta),
            sig9(fs.pooled_std),
            sig9(fs.effect_size)
        ));
    }
    atomic_write(&shift_path, csv.as_bytes()).map_err(Failure::from)?;

    // Invariance scatter evidence.
    let scatter_path = out_dir.join("scatter.csv");
    invariance_scatter(&sae, &pairs, &scatter_path).map_err(Failure::from)?;

    // Selected pool in rank order.
    let selected_path = out_dir.join("selected.csv");
    let mut csv = String::from("selection_rank,feature_id,effect_size\n");
    for (i, feat) in selected.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            feat,
            sig9(report.shifts[*feat].effect_size)
        ));
    }
    atomic_write(&selected_path, csv.as_bytes()).map_err(Failure::from)?;

    // Orthonormalized directions.
    let dirs_path = out_dir.join("directions.csv");
    write_directions_csv(&dirs_path, &dirs)?;

    let recovered_cosine = match &resolved.model {
        Some(path) => {
            manifest.input(path)?;
            let model = load_model_checked(path)?;
            let first = dirs.directions.row(0);
            Some(first.dot(&model.u_dir).abs())
        }
        None => None,
    };

    let top = report.top_feature();
    let summary = Report {
        top_feature: top,
        top_effect_size: report.shifts[top].effect_size,
        selected_features: selected.clone(),
        n_directions: dirs.m(),
        recovered_cosine,
    };
    let report_path = out_dir.join("identify_report.toml");
    let text =
        toml::to_string(&summary).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;

    for p in [&shift_path, &scatter_path, &selected_path, &dirs_path, &report_path] {
        manifest.output(p);
    }
    manifest.write(out_dir, &resolved)?;

    println!(
        "top feature {} (effect size {:.3}); kept {} of {} candidates -> {} directions",
        summary.top_feature,
        summary.top_effect_size,
        selected.len(),
        resolved.k_pool,
        summary.n_directions
    );
    if let Some(c) = summary.recovered_cosine {
        println!("recovered direction cosine with planted defense direction: {c:.6}");
    }
    Ok(())
}
