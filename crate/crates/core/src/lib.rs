//! Extractive question answering over long documents by sequential
//! text-block selection.

pub mod autodiff;
pub mod corpus;
pub mod diagnostics;
pub mod encoders;
pub mod eval;
pub mod policy;
pub mod training;
