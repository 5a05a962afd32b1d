//! AWADA at desk scale: attention-weighted adversarial style transfer for
//! domain adaptation, self-contained on a synthetic two-domain benchmark.
//!
//! The crate provides a small f64 autodiff engine ([`tensor`]), the concrete
//! networks ([`nets`]), attention-map construction and loss weighting
//! ([`attention`], [`losses`]), a procedural benchmark with an analytic
//! style oracle ([`synthdata`]), and the staged training pipeline
//! ([`pipeline`]).

pub mod attention;
pub mod check;
pub mod error;
pub mod hash;
pub mod losses;
pub mod nets;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use attention::{AccumulationFn, AttentionMap, AttentionSource, BoxF, Proposal};
pub use error::{Error, Result};
pub use losses::{AwmPlacement, GanFormulation, LossWeights};
pub use rng::Rng64;
pub use synthdata::{DomainDataset, DomainTag, ImageU8, SceneSpec, StyleTransform};
pub use tensor::{Adam, AdamConfig, Param, Tensor};
