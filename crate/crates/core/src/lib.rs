//! Interaction-moderated supervised semantic differential.
//!
//! Pipeline: [`corpus`] ingest and tokenization, [`embedding`] SIF document
//! vectors, [`reduction`] PCA and the K sweep, [`model`] the moderated
//! regression with block tests and gradients, [`interpret`] pole neighbors,
//! clusters and snippets. [`synth`] generates planted-effect data and
//! independent oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod interpret;
pub mod model;
pub mod reduction;
pub mod stats;
pub mod synth;

pub use corpus::{
    load_records, load_records_from_path, standardize, tokenize_all, ColumnMap, CorpusRecord, DropReason, DropReport,
    InputFormat, LoadedCorpus, StandardizedColumn, StopWords, TokenizedDoc,
};
pub use embedding::{
    embed_documents, load_vectors, remove_top_component, Averaging, DocumentMatrix, EmbedReport, EmbeddingSpace,
    VectorLoadReport, WordProbs, DEFAULT_SIF_A,
};
pub use error::{Error, ErrorClass, Result};
pub use interpret::{
    build_report, render_markdown, ClusterConfig, InterpretConfig, InterpretationReport, NeighborIndex, Pole, Redactor,
};
pub use model::{
    build_design, fit_interaction, gradients, probe_values, Block, GradientSet, InteractionDf, InteractionFit,
    ModeratorProbe, ProbeRule, ProbeValue,
};
pub use reduction::{
    backproject, fit_pca, k_grid, sweep_k, PcaBasis, ReducedRepresentation, SweepOptions, SweepResult,
};
pub use stats::PValue;
pub use synth::{generate, EffectSpec, ModeratorSpec, SynthDataset, SynthSpec, SynthTruth, TokenSpec};
