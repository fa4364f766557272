//! Shared value types: domain names and levels, documents, queries, hits,
//! and the architecture selection rule.

pub mod architecture;
pub mod document;
pub mod domain;

pub use architecture::{
    select_architecture, Architecture, ArchitectureThresholds, ProfileError, SourceProfile,
};
pub use document::{
    idf, sort_hits, Document, DocumentError, Query, QueryError, ScoredHit, SimSeconds, SimTime,
    TermWeight, MAX_BODY_BYTES, MAX_K, MICROS_PER_SECOND,
};
pub use domain::{level_of, DomainError, DomainName, Level, LevelTable};
