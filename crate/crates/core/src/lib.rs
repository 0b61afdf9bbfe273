//! Quantitative CT biomarkers and an interpretable fusion model for
//! cardiovascular risk.

pub mod biomarkers;
pub mod cli;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod phantom;
pub mod tensor;
pub mod training;
pub mod volume;
