//! Template-based GP-GOMEA for symbolic regression with pluggable linkage
//! measures.

pub mod dataio;
pub mod engine;
pub mod evaluator;
pub mod experiments;
pub mod linkage;
pub mod seed;
pub mod stats;
pub mod template;

pub use dataio::{DataMatrix, Dataset, Samples};
pub use evaluator::{EvaluationBudget, FitnessContext, FitnessValue};
pub use linkage::{Fos, LinkageModel, MeasureKind, SimilarityMatrix};
pub use template::{Genotype, OperatorSet, Representation, Symbol, Template};
