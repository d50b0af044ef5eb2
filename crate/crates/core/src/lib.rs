//! Cross-lingual neural topic modeling: a shared-encoder VAE over bilingual
//! bag-of-words data, trained with contrastive alignment terms and a
//! cluster-derived Gaussian prior, plus topic-quality and transfer metrics.

pub mod clustering;
pub mod corpus;
mod error;
pub mod evaluation;
pub mod model;
mod numeric;
pub mod objectives;
pub mod synthetic;
pub mod training;

pub use corpus::Lang;
pub use error::{Error, Result};
