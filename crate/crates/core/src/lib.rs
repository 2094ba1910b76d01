//! Partisan narrative analysis of political tweets.
//!
//! The modules follow the pipeline stages:
//!
//! - [`corpus`]: reading, tokenizing and splitting the tweet archive
//! - [`overrepresentation`]: log-odds with an informative prior
//! - [`embedding`]: co-occurrence counts, GloVe training, vector files
//! - [`frameaxis`]: bias and intensity along antonym axes
//! - [`geometry`]: UMAP maps, k-means, trustworthiness
//! - [`roles`]: Agent/Verb/Patient aggregation
//! - [`pipeline`]: configuration, stage runner and manifest
//!
//! The `narraframe` binary wraps [`pipeline::run_pipeline`].

pub mod corpus;
pub mod embedding;
pub mod frameaxis;
pub mod geometry;
pub mod overrepresentation;
pub mod pipeline;
pub mod report;
pub mod roles;

// Guide chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/logodds.md")]
    mod logodds {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/frames.md")]
    mod frames {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/roles.md")]
    mod roles {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
