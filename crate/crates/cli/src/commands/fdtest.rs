//! `fdtest`: front-door estimator versus do-oracle on discrete SCMs.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use frontdoor_core::io::atomic_write;
use frontdoor_core::scm::{
    criterion_violation_gap, do_oracle, empirical_cpts, exact_joint, front_door,
    observational_cpts, random_front_door_scm, sample_scm, DiscreteScm,
};

use crate::config::{pick, pick_opt, FileConfig};
use crate::formats::{read_scm_file, ScmDefinition};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// SCM definition file (structured key-value document).
    #[arg(long)]
    scm_file: Option<PathBuf>,

    /// Generate this many random front-door SCMs instead of reading a file.
    #[arg(long)]
    random: Option<usize>,

    /// Sample count for the empirical-estimation pass (0 disables it).
    #[arg(long)]
    samples: Option<usize>,

    /// Cardinalities of U, A, S, Y for random generation.
    #[arg(long, num_args = 4, value_names = ["U", "A", "S", "Y"])]
    cards: Option<Vec<usize>>,

    /// Expect the front-door condition to be violated: exit 0 when the gap
    /// exceeds the violation threshold.
    #[arg(long)]
    expect_violation: bool,

    /// Maximum tolerated exact |front_door - do_oracle| gap.
    #[arg(long)]
    tolerance_exact: Option<f64>,

    /// Maximum tolerated gap when estimating from samples.
    #[arg(long)]
    tolerance_sampled: Option<f64>,

    /// Gap that counts as a demonstrated violation.
    #[arg(long)]
    violation_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    scm_file: Option<PathBuf>,
    random: Option<usize>,
    samples: usize,
    cards: Vec<usize>,
    expect_violation: bool,
    tolerance_exact: f64,
    tolerance_sampled: f64,
    violation_threshold: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct ScmOutcome {
    label: String,
    max_exact_gap: f64,
    max_sampled_gap: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    config: Resolved,
    outcomes: Vec<ScmOutcome>,
    max_exact_gap: f64,
    max_sampled_gap: Option<f64>,
    violation_gap: Option<f64>,
    passed: bool,
}

fn gaps_for(scm: &DiscreteScm, samples: usize, seed: u64) -> Result<(f64, Option<f64>), Failure> {
    let cpts = observational_cpts(&exact_joint(scm)).map_err(Failure::from)?;
    let mut max_exact = 0.0_f64;
    for a in 0..scm.card_a() {
        for y in 0..scm.card_y() {
            let gap = (front_door(&cpts, a, y) - do_oracle(scm, a, y)).abs();
            max_exact = max_exact.max(gap);
        }
    }
    let max_sampled = if samples > 0 {
        let data = sample_scm(scm, samples, seed).map_err(Failure::from)?;
        let est = empirical_cpts(&data, scm.card_a(), scm.card_s(), scm.card_y())
            .map_err(Failure::from)?;
        let mut worst = 0.0_f64;
        for a in 0..scm.card_a() {
            for y in 0..scm.card_y() {
                let gap = (front_door(&est, a, y) - do_oracle(scm, a, y)).abs();
                worst = worst.max(gap);
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok((max_exact, max_sampled))
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let section = file.fdtest.clone().unwrap_or_default();
    let resolved = Resolved {
        scm_file: pick_opt(args.scm_file, section.scm_file.clone()),
        random: pick_opt(args.random, section.random),
        samples: pick(args.samples, section.samples, 100_000),
        cards: pick(args.cards, section.cards.clone(), vec![2, 2, 2, 2]),
        expect_violation: args.expect_violation || section.expect_violation.unwrap_or(false),
        tolerance_exact: pick(args.tolerance_exact, section.tolerance_exact, 1e-10),
        tolerance_sampled: pick(args.tolerance_sampled, section.tolerance_sampled, 0.02),
        violation_threshold: pick(args.violation_threshold, section.violation_threshold, 0.01),
        seed,
    };
    if resolved.cards.len() != 4 || resolved.cards.iter().any(|c| *c == 0) {
        return Err(Failure::Usage(
            "--cards expects four positive cardinalities".into(),
        ));
    }

    let mut manifest = ManifestBuilder::new("fdtest");
    let mut outcomes = Vec::new();
    let mut violation_gap: Option<f64> = None;

    match (&resolved.scm_file, resolved.random) {
        (Some(path), _) => {
            manifest.input(path)?;
            match read_scm_file(path)? {
                ScmDefinition::FrontDoor(scm) => {
                    let (exact, sampled) = gaps_for(&scm, resolved.samples, seed)?;
                    println!(
                        "scm {}: max exact gap {exact:.3e}{}",
                        path.display(),
                        sampled
                            .map(|s| format!(", max sampled gap {s:.3e}"))
                            .unwrap_or_default()
                    );
                    outcomes.push(ScmOutcome {
                        label: path.display().to_string(),
                        max_exact_gap: exact,
                        max_sampled_gap: sampled,
                    });
                }
                ScmDefinition::Violating(scm) => {
                    let mut worst = 0.0_f64;
                    for a in 0..scm.card_a() {
                        for y in 0..scm.card_y() {
                            worst = worst
                                .max(criterion_violation_gap(&scm, a, y).map_err(Failure::from)?);
                        }
                    }
                    println!(
                        "violating scm {}: max |front_door - do| gap {worst:.6}",
                        path.display()
                    );
                    violation_gap = Some(worst);
                }
            }
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(Failure::Usage("--random must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                let scm = random_front_door_scm(
                    resolved.cards[0],
                    resolved.cards[1],
                    resolved.cards[2],
                    resolved.cards[3],
                    &mut rng,
                );
                let (exact, sampled) =
                    gaps_for(&scm, resolved.samples, seed.wrapping_add(i as u64))?;
                println!(
                    "random scm {i}: max exact gap {exact:.3e}{}",
                    sampled
                        .map(|s| format!(", max sampled gap {s:.3e}"))
                        .unwrap_or_default()
                );
                outcomes.push(ScmOutcome {
                    label: format!("random_{i}"),
                    max_exact_gap: exact,
                    max_sampled_gap: sampled,
                });
            }
        }
        (None, None) => {
            return Err(Failure::Usage(
                "fdtest needs either --scm-file or --random N".into(),
            ));
        }
    }

    let max_exact = outcomes.iter().map(|o| o.max_exact_gap).fold(0.0, f64::max);
    let max_sampled = outcomes
        .iter()
        .filter_map(|o| o.max_sampled_gap)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));

    let passed = match violation_gap {
        Some(gap) => resolved.expect_violation && gap > resolved.violation_threshold,
        None => max_exact <= resolved.tolerance_exact,
    };

    let report = Report {
        config: resolved,
        outcomes,
        max_exact_gap: max_exact,
        max_sampled_gap: max_sampled,
        violation_gap,
        passed,
    };
    let report_path = out_dir.join("fdtest_report.toml");
    let text = toml::to_string(&report).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;
    manifest.output(&report_path);
    manifest.write(out_dir, &report.config)?;

    match violation_gap {
        Some(gap) => {
            if passed {
                println!("violation demonstrated: gap {gap:.6} > {}", report.config.violation_threshold);
                Ok(())
            } else {
                Err(Failure::Validation(format!(
                    "violating SCM gap {gap:.6} (expect_violation = {})",
                    report.config.expect_violation
                )))
            }
        }
        None => {
            println!(
                "max exact gap {max_exact:.3e}{}",
                max_sampled
                    .map(|s| format!(", max sampled gap {s:.3e}"))
                    .unwrap_or_default()
            );
            if passed {
                Ok(())
            } else {
                Err(Failure::Validation(format!(
                    "max exact gap {max_exact:.3e} exceeds {:.1e}",
                    report.config.tolerance_exact
                )))
            }
        }
    }
}

