//! Brain-MRI preparation and classification, end to end: contour cropping,
//! N4-style bias correction, Gaussian/TV/BM3D denoising, Otsu skull
//! stripping, geometric augmentation, a compact from-scratch CNN with the
//! full training recipe, and a per-class evaluation suite. Everything is
//! deterministic under explicit seeds and verifiable at desk scale on
//! synthetic phantoms.

pub mod augment;
pub mod biasfield;
pub mod crop;
pub mod denoise;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nnet;
pub mod rng;
pub mod skullstrip;
pub mod synth;

pub use error::{Error, Result};
pub use image::{Image, Mask};
