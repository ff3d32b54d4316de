//! File-format glue owned by the harness: SCM definition documents,
//! direction-set CSV, and training-history CSV.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use frontdoor_core::contrast::DefenseDirectionSet;
use frontdoor_core::io::{atomic_write, sig9};
use frontdoor_core::sae::TrainHistory;
use frontdoor_core::scm::{DiscreteScm, ViolatingScm};

use crate::Failure;

/// On-disk SCM definition: cardinalities plus flattened row-major CPTs.
///
/// `kind = "front_door"` carries `p_s_given_a` (the mediator reads only `A`);
/// `kind = "violating"` carries `p_s_given_a_u` (the `U -> S` edge present).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmFile {
    pub kind: String,
    pub card_u: usize,
    pub card_a: usize,
    pub card_s: usize,
    pub card_y: usize,
    pub p_u: Vec<f64>,
    /// Row-major `card_u x card_a`.
    pub p_a_given_u: Vec<f64>,
    /// Row-major `card_a x card_s`; front-door kind only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_s_given_a: Option<Vec<f64>>,
    /// Row-major `card_a x card_u x card_s`; violating kind only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_s_given_a_u: Option<Vec<f64>>,
    /// Row-major `card_s x card_u x card_y`.
    pub p_y_given_s_u: Vec<f64>,
}

/// A parsed SCM definition.
pub enum ScmDefinition {
    FrontDoor(DiscreteScm),
    Violating(ViolatingScm),
}

pub fn read_scm_file(path: &Path) -> Result<ScmDefinition, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::IoFormat(format!("{}: {e}", path.display())))?;
    let file: ScmFile = toml::from_str(&text)
        .map_err(|e| Failure::IoFormat(format!("{}: {e}", path.display())))?;
    let (cu, ca, cs, cy) = (file.card_u, file.card_a, file.card_s, file.card_y);
    let p_u = Array1::from(file.p_u.clone());
    let p_a_given_u = Array2::from_shape_vec((cu, ca), file.p_a_given_u.clone())
        .map_err(|e| Failure::IoFormat(format!("p_a_given_u: {e}")))?;
    let p_y_given_s_u = Array3::from_shape_vec((cs, cu, cy), file.p_y_given_s_u.clone())
        .map_err(|e| Failure::IoFormat(format!("p_y_given_s_u: {e}")))?;
    match file.kind.as_str() {
        "front_door" => {
            let flat = file.p_s_given_a.ok_or_else(|| {
                Failure::IoFormat("front_door kind requires p_s_given_a".into())
            })?;
            let p_s_given_a = Array2::from_shape_vec((ca, cs), flat)
                .map_err(|e| Failure::IoFormat(format!("p_s_given_a: {e}")))?;
            let scm = DiscreteScm::new(p_u, p_a_given_u, p_s_given_a, p_y_given_s_u)
                .map_err(Failure::from)?;
            Ok(ScmDefinition::FrontDoor(scm))
        }
        "violating" => {
            let flat = file.p_s_given_a_u.ok_or_else(|| {
                Failure::IoFormat("violating kind requires p_s_given_a_u".into())
            })?;
            let p_s_given_a_u = Array3::from_shape_vec((ca, cu, cs), flat)
                .map_err(|e| Failure::IoFormat(format!("p_s_given_a_u: {e}")))?;
            let scm = ViolatingScm::new(p_u, p_a_given_u, p_s_given_a_u, p_y_given_s_u)
                .map_err(Failure::from)?;
            Ok(ScmDefinition::Violating(scm))
        }
        other => Err(Failure::IoFormat(format!("unknown SCM kind {other:?}"))),
    }
}

pub fn scm_file_from_front_door(scm: &DiscreteScm) -> ScmFile {
    ScmFile {
        kind: "front_door".into(),
        card_u: scm.card_u(),
        card_a: scm.card_a(),
        card_s: scm.card_s(),
        card_y: scm.card_y(),
        p_u: scm.p_u.to_vec(),
        p_a_given_u: scm.p_a_given_u.iter().copied().collect(),
        p_s_given_a: Some(scm.p_s_given_a.iter().copied().collect()),
        p_s_given_a_u: None,
        p_y_given_s_u: scm.p_y_given_s_u.iter().copied().collect(),
    }
}

pub fn scm_file_from_violating(scm: &ViolatingScm) -> ScmFile {
    ScmFile {
        kind: "violating".into(),
        card_u: scm.card_u(),
        card_a: scm.card_a(),
        card_s: scm.card_s(),
        card_y: scm.card_y(),
        p_u: scm.p_u.to_vec(),
        p_a_given_u: scm.p_a_given_u.iter().copied().collect(),
        p_s_given_a: None,
        p_s_given_a_u: Some(scm.p_s_given_a_u.iter().copied().collect()),
        p_y_given_s_u: scm.p_y_given_s_u.iter().copied().collect(),
    }
}

pub fn write_scm_file(path: &Path, file: &ScmFile) -> Result<(), Failure> {
    let text =
        toml::to_string(file).map_err(|e| Failure::IoFormat(format!("scm file: {e}")))?;
    atomic_write(path, text.as_bytes()).map_err(Failure::from)
}

/// Write a defense direction set as CSV: one row per direction, full
/// component list, nine significant digits.
pub fn write_directions_csv(path: &Path, dirs: &DefenseDirectionSet) -> Result<(), Failure> {
    let d = dirs.d();
    let mut header = String::from("direction_index,feature_id");
    for j in 0..d {
        header.push_str(&format!(",c{j}"));
    }
    let mut csv = header;
    csv.push('\n');
    for (i, row) in dirs.directions.outer_iter().enumerate() {
        csv.push_str(&format!("{},{}", i, dirs.indices[i]));
        for v in row.iter() {
            csv.push(',');
            csv.push_str(&sig9(*v));
        }
        csv.push('\n');
    }
    atomic_write(path, csv.as_bytes()).map_err(Failure::from)
}

/// Read a direction-set CSV back; orthonormality is re-validated.
pub fn read_directions_csv(path: &Path) -> Result<DefenseDirectionSet, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::IoFormat(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::IoFormat("directions csv is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "direction_index" || cols[1] != "feature_id" {
        return Err(Failure::IoFormat("unexpected directions csv header".into()));
    }
    let d = cols.len() - 2;
    let mut indices = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Failure::IoFormat(format!(
                "directions csv row has {} fields, expected {}",
                fields.len(),
                d + 2
            )));
        }
        let feature: usize = fields[1]
            .parse()
            .map_err(|e| Failure::IoFormat(format!("feature id: {e}")))?;
        indices.push(feature);
        for f in &fields[2..] {
            rows.push(
                f.parse::<f64>()
                    .map_err(|e| Failure::IoFormat(format!("component: {e}")))?,
            );
        }
    }
    let m = indices.len();
    let directions = Array2::from_shape_vec((m, d), rows)
        .map_err(|e| Failure::IoFormat(format!("directions shape: {e}")))?;
    let set = DefenseDirectionSet {
        indices,
        directions,
    };
    set.validate().map_err(Failure::from)?;
    Ok(set)
}

/// Training history as CSV.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), Failure> {
    let mut csv = String::from("step,total,reconstruction,sparsity,frac_active\n");
    for r in &history.records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step,
            sig9(r.total),
            sig9(r.reconstruction),
            sig9(r.sparsity),
            sig9(r.frac_active)
        ));
    }
    atomic_write(path, csv.as_bytes()).map_err(Failure::from)
}
