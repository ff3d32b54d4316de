//! `dump`: paired harm/attack/benign activation dumps plus the scenario list.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::io::atomic_write;
use frontdoor_core::planted::{
    dump_activations, generate_scenarios, scenarios_from_text, scenarios_to_text,
};

use crate::commands::load_model_checked;
use crate::config::{pick, pick_opt, FileConfig};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Planted model container (defaults to <out-dir>/model.plm1).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario list file to consume instead of generating scenarios.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Number of harmful scenarios to generate when no list is given.
    #[arg(long)]
    n_scenarios: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    model: PathBuf,
    scenarios: Option<PathBuf>,
    n_scenarios: usize,
    seed: u64,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.dump.clone().unwrap_or_default();
    let resolved = Resolved {
        model: pick(args.model, s.model, out_dir.join("model.plm1")),
        scenarios: pick_opt(args.scenarios, s.scenarios),
        n_scenarios: pick(args.n_scenarios, s.n_scenarios, 2000),
        seed,
    };

    let mut manifest = ManifestBuilder::new("dump");
    manifest.input(&resolved.model)?;
    let model = load_model_checked(&resolved.model)?;

    let scenarios = match &resolved.scenarios {
        Some(path) => {
            manifest.input(path)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::IoFormat(format!("{}: {e}", path.display())))?;
            scenarios_from_text(&model.vocab, &text).map_err(Failure::from)?
        }
        None => generate_scenarios(&model.vocab, resolved.n_scenarios, true, seed)
            .map_err(Failure::from)?,
    };

    let paths = dump_activations(&model, &scenarios, out_dir, seed).map_err(Failure::from)?;
    let scenario_path = out_dir.join("scenarios.txt");
    atomic_write(
        &scenario_path,
        scenarios_to_text(&model.vocab, &scenarios).as_bytes(),
    )
    .map_err(Failure::from)?;

    for p in [&paths.harm, &paths.attack, &paths.benign, &scenario_path] {
        manifest.output(p);
    }
    manifest.write(out_dir, &resolved)?;
    println!(
        "dumped {} paired scenarios -> {}, {}, {}",
        scenarios.len(),
        paths.harm.display(),
        paths.attack.display(),
        paths.benign.display()
    );
    Ok(())
}
