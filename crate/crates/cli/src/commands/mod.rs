pub mod build_model;
pub mod dump;
pub mod eval;
pub mod fdtest;
pub mod identify;
pub mod prop1;
pub mod surgery;
pub mod sweep_k;
pub mod train_sae;

use std::path::Path;

use frontdoor_core::planted::PlantedModel;

use crate::Failure;

/// Load a planted model, mapping failures onto CLI error classes.
pub fn load_model_checked(path: &Path) -> Result<PlantedModel, Failure> {
    if !path.exists() {
        return Err(Failure::IoFormat(format!(
            "missing artifact: {}",
            path.display()
        )));
    }
    frontdoor_core::planted::load_model(path).map_err(Failure::from)
}

/// Load an SAE checkpoint with the same mapping.
pub fn load_sae_checked(path: &Path) -> Result<frontdoor_core::sae::SaeParams, Failure> {
    if !path.exists() {
        return Err(Failure::IoFormat(format!(
            "missing artifact: {}",
            path.display()
        )));
    }
    frontdoor_core::sae::load_checkpoint(path).map_err(Failure::from)
}

/// Load an activation dump with the same mapping.
pub fn load_activations_checked(
    path: &Path,
) -> Result<frontdoor_core::ActivationMatrix, Failure> {
    if !path.exists() {
        return Err(Failure::IoFormat(format!(
            "missing artifact: {}",
            path.display()
        )));
    }
    let (m, _) = frontdoor_core::io::read_activations(path).map_err(Failure::from)?;
    Ok(m)
}
