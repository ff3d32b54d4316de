//! Core library for the `frontdoor` toolkit.
//!
//! The toolkit identifies "defense" latent features in activation space with a
//! sparse autoencoder trained on contrastive activation pairs, strips them from
//! output weights by orthogonal projection, and validates that the structural
//! intervention matches the front-door-adjusted interventional distribution on
//! discrete structural causal models and a planted-feature toy model.
//!
//! Module map:
//!
//! - [`scm`] — discrete SCM simulator, front-door estimator, do-oracle.
//! - [`sae`] — sparse autoencoder: encode/decode, loss, analytic gradients,
//!   minibatch training, checkpoint IO.
//! - [`synthetic`] — Bernoulli-Laplace synthetic latent generator used by the
//!   identifiability checks.
//! - [`contrast`] — contrastive feature-shift analysis, defense-feature
//!   selection, direction extraction, identifiability score.
//! - [`surgery`] — projection operators and weight orthogonalization.
//! - [`planted`] — toy residual-stream model with a planted task subspace and
//!   defense direction; the end-to-end test bed.
//! - [`metrics`] — refusal judging, attack success rate, perplexity.
//! - [`io`] — binary activation dumps and checkpoint containers.

pub mod activations;
pub mod contrast;
pub mod error;
pub mod io;
pub mod metrics;
pub mod planted;
pub mod sae;
pub mod scm;
pub mod surgery;
pub mod synthetic;

pub use activations::ActivationMatrix;
pub use error::{CoreError, Result};
