//! Adversarial loss component functions, the `Ψ`/`ψ` landscapes they induce,
//! and numerical checkers for whether a loss makes a valid training
//! objective.

mod error;
pub mod landscape;
pub mod loss_catalog;
pub mod validity;

pub use error::CoreError;
pub use landscape::{psi_big, psi_small, Argmax, PsiPoint, PsiProfile, SearchConfig};
pub use loss_catalog::{epsilon_weighted, eval_derivatives, get_loss, Component, ComponentLoss, Derivatives, GeneratorVariant, CATALOG};
pub use validity::{classify, ValidityConfig, ValidityReport, Verdict};
