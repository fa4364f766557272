//! Choosing a search architecture from the size of a data source.
//!
//! Small sources are indexed centrally. Larger sources whose metadata still
//! fits in one place are harvested into a union metadata index. Sources whose
//! metadata alone is too large are searched in place through a distributed
//! broker that keeps only collection statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::org::METADATA_RECORD_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    Centralized,
    MetadataHarvest,
    Distributed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("type_count must be positive")]
    NoTypes,
    #[error("metadata estimate {estimate} exceeds {doc_count} docs x {METADATA_RECORD_CAP} bytes")]
    MetadataEstimateTooLarge { doc_count: u64, estimate: u64 },
}

/// Size and diversity of a data source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceProfile {
    doc_count: u64,
    type_count: u32,
    metadata_bytes_estimate: u64,
}

impl SourceProfile {
    pub fn new(
        doc_count: u64,
        type_count: u32,
        metadata_bytes_estimate: u64,
    ) -> Result<Self, ProfileError> {
        if type_count == 0 {
            return Err(ProfileError::NoTypes);
        }
        if metadata_bytes_estimate > doc_count.saturating_mul(METADATA_RECORD_CAP as u64) {
            return Err(ProfileError::MetadataEstimateTooLarge {
                doc_count,
                estimate: metadata_bytes_estimate,
            });
        }
        Ok(SourceProfile {
            doc_count,
            type_count,
            metadata_bytes_estimate,
        })
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    /// Recorded for diversity-aware rules; the default rule ignores it.
    pub fn type_count(&self) -> u32 {
        self.type_count
    }

    pub fn metadata_bytes_estimate(&self) -> u64 {
        self.metadata_bytes_estimate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureThresholds {
    /// Largest document count still served by a single central index.
    pub size_small: u64,
    /// Largest union metadata volume, in bytes, still harvested into one place.
    pub metadata_cap: u64,
}

impl Default for ArchitectureThresholds {
    fn default() -> Self {
        ArchitectureThresholds {
            size_small: 1_000_000,
            metadata_cap: 100_000_000,
        }
    }
}

pub fn select_architecture(
    profile: &SourceProfile,
    thresholds: &ArchitectureThresholds,
) -> Architecture {
    if profile.doc_count <= thresholds.size_small {
        Architecture::Centralized
    } else if profile.metadata_bytes_estimate <= thresholds.metadata_cap {
        Architecture::MetadataHarvest
    } else {
        Architecture::Distributed
    }
}
