pub mod arch;
pub mod container;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod grad;
pub mod hyper;
pub mod io;
pub mod kv;
pub mod layers;
pub mod motif;
pub mod rng;
pub mod selection;
pub mod seq;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
