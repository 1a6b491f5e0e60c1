//! Discriminative adversarial training on MNIST: a classifier `G` is trained
//! against a critic `D` that judges (image, label) pairs, and the test error
//! of `G` measures how well an adversarial loss and regulariser work.

pub mod data;
pub mod models;
pub mod objective;
pub mod trainer;

pub use data::{load_mnist, make_variant, shift_image, DataError, Dataset, Variant};
pub use models::{Discriminator, Generator};
pub use objective::{PenaltyKind, PenaltySpec, Side};
pub use trainer::{evaluate, train, train_with, DanConfig, RunRecord, TrainError};
