//! n-ball embeddings for EL++ ontologies.
//!
//! Pipeline: [`parser`] reads the line-based axiom grammar, [`normalizer`]
//! rewrites axioms into the four normal forms, [`geometry`] defines the
//! per-axiom losses and their gradients, [`trainer`] fits embeddings,
//! [`evaluator`] ranks held-out subsumptions. [`baselines`] holds the
//! translation models used for comparison.

pub mod baselines;
pub mod cli;
pub mod evaluator;
pub mod geometry;
pub mod normalizer;
pub mod parser;
pub mod synthetic;
pub mod trainer;

pub use evaluator::{evaluate, rank_one, Direction, RankReport};
pub use geometry::{EmbeddingState, LossParams, SavedModel, Variant};
pub use normalizer::{normalize, verify_normal, ClassId, NormalAxiom, NormalizedOntology, RelationId};
pub use parser::{parse_concept, parse_ontology, ConceptExpr, RawAxiom};
pub use trainer::{split, train, SplitSpec, TrainConfig};
