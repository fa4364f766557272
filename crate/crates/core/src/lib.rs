//! A hierarchical federated search system shaped like DNS.
//!
//! Organization domains (`hust.edu.cn`) index their own documents centrally.
//! Sub-network domains (`edu.cn`) periodically harvest compact metadata
//! records from their organizations into a union index. The root (`cn`)
//! keeps only per-collection term statistics and routes each query to the
//! sub-networks most likely to answer it, then merges the results.
//!
//! - [`model`]: domain names, levels, documents, queries, architecture rule
//! - [`org`]: organization index and the harvest server
//! - [`harvest`]: sub-network union index and harvester
//! - [`broker`]: collection selection, fan-out, result merging
//! - [`wire`]: canonical JSON envelopes exchanged between nodes
//! - [`simnet`]: deterministic discrete-event network that runs it all
//! - [`oracle`]: brute-force global index for validation
//! - [`federation`]: in-process wiring without the network
//! - [`corpus`]: seeded synthetic corpora
//! - [`report`]: ingestion and run reports

pub mod broker;
pub mod corpus;
pub mod federation;
pub mod harvest;
pub mod model;
pub mod oracle;
pub mod org;
pub mod report;
pub mod simnet;
pub mod text;
pub mod wire;
