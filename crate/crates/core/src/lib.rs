//! Domain-preserving unsupervised domain adaptation at desk scale.
//!
//! The crate trains a feature extractor and classifier on a labeled source
//! domain while aligning the latent distribution of an unlabeled target
//! domain (moment-matched Gaussian KL) and preserving target-private
//! structure by maximizing a neural lower bound on the mutual information
//! between target inputs and their latents. Everything runs on plain `f64`
//! arrays with hand-derived gradients, so every estimate can be checked
//! against the exact oracles in [`oracle`].
//!
//! Layout:
//! - [`numerics`]: tensors, feed-forward nets, SGD, deterministic PRNG
//! - [`losses`]: classification, latent KL, entropy, and MI-bound losses
//! - [`oracle`]: closed-form and exact-enumeration ground truth, gradcheck
//! - [`synthdata`]: two-moons / blob / correlated-Gaussian generators, CSV
//! - [`trainer`]: the alternating critic/model loop and experiment protocols

pub mod error;
pub mod losses;
pub mod numerics;
pub mod oracle;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
