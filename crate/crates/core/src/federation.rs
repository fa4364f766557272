//! All three tiers wired together in one process, with direct calls instead of
//! a network. Useful for tests, for one-shot queries, and as the frozen state
//! a finished simulation leaves behind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{
    answer_search, BrokerError, FederatedResult, MergeMode, RootBroker, SearchEndpoint, TargetError,
};
use crate::harvest::{HarvestError, HarvestNode};
use crate::model::{Document, DomainName, Level, Query, ScoredHit, SimTime};
use crate::oracle::GlobalOracle;
use crate::org::{IndexError, OrgConfig, OrgIndex};
use crate::simnet::{Topology, TopologyError, TopologySpec};
use crate::wire::SearchRequest;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("{0} is not a registered organization")]
    UnknownOwner(DomainName),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

struct Subnets<'a>(&'a BTreeMap<DomainName, HarvestNode>);

impl SearchEndpoint for Subnets<'_> {
    fn search(
        &mut self,
        target: &DomainName,
        request: &SearchRequest,
    ) -> Result<Vec<ScoredHit>, TargetError> {
        let node = self.0.get(target).ok_or(TargetError::Unreachable)?;
        answer_search(node, request)
    }
}

#[derive(Debug, Clone)]
pub struct Federation {
    topology: Topology,
    roots: BTreeMap<DomainName, RootBroker>,
    subnets: BTreeMap<DomainName, HarvestNode>,
    orgs: BTreeMap<DomainName, OrgIndex>,
}

impl Federation {
    pub fn new(topology: Topology, org_config: OrgConfig) -> Self {
        let mut fed = Federation {
            roots: BTreeMap::new(),
            subnets: BTreeMap::new(),
            orgs: BTreeMap::new(),
            topology,
        };
        for (d, level) in fed.topology.nodes() {
            match level {
                Level::Root => {
                    fed.roots.insert(d.clone(), RootBroker::new(d.clone()));
                }
                Level::Subnet => {
                    let mut node = HarvestNode::new(d.clone());
                    for child in fed.topology.children_of(d) {
                        node.register_child(child);
                    }
                    fed.subnets.insert(d.clone(), node);
                }
                Level::Org => {
                    fed.orgs
                        .insert(d.clone(), OrgIndex::with_config(d.clone(), org_config));
                }
            }
        }
        fed
    }

    pub fn from_spec(spec: &TopologySpec) -> Result<Self, FederationError> {
        Ok(Federation::new(spec.build()?, OrgConfig::default()))
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn org(&self, domain: &DomainName) -> Option<&OrgIndex> {
        self.orgs.get(domain)
    }

    pub fn org_mut(&mut self, domain: &DomainName) -> Option<&mut OrgIndex> {
        self.orgs.get_mut(domain)
    }

    pub fn subnet(&self, domain: &DomainName) -> Option<&HarvestNode> {
        self.subnets.get(domain)
    }

    pub fn root(&self, domain: &DomainName) -> Option<&RootBroker> {
        self.roots.get(domain)
    }

    pub fn upsert(&mut self, doc: &Document, now: SimTime) -> Result<u64, FederationError> {
        let org = self
            .orgs
            .get_mut(&doc.owner)
            .ok_or_else(|| FederationError::UnknownOwner(doc.owner.clone()))?;
        Ok(org.upsert_document(doc, now)?)
    }

    pub fn delete(
        &mut self,
        owner: &DomainName,
        doc_id: &str,
        now: SimTime,
    ) -> Result<u64, FederationError> {
        let org = self
            .orgs
            .get_mut(owner)
            .ok_or_else(|| FederationError::UnknownOwner(owner.clone()))?;
        Ok(org.delete_document(doc_id, now)?)
    }

    /// Every subnet harvests every child once. Returns the records applied.
    pub fn harvest_all(&mut self, now: SimTime) -> Result<usize, FederationError> {
        let mut applied = 0;
        for (name, node) in self.subnets.iter_mut() {
            for child in self.topology.children_of(name) {
                applied += node.run_harvest(&child, now, &mut self.orgs)?;
            }
        }
        Ok(applied)
    }

    /// Every subnet registers a fresh description with its root.
    pub fn push_all(&mut self, now: SimTime) -> Result<(), FederationError> {
        for (name, node) in &self.subnets {
            let Some(root) = self.topology.root_of(name) else {
                continue;
            };
            let desc = node.build_collection_description(now);
            self.roots
                .get_mut(&root)
                .expect("topology roots exist")
                .register_collection(desc)?;
        }
        Ok(())
    }

    pub fn search(
        &self,
        query: &Query,
        width: usize,
        mode: MergeMode,
    ) -> Result<FederatedResult, FederationError> {
        Ok(self.snapshot_view().search(query, width, mode)?)
    }

    /// Oracle over every live record held by any subnet.
    pub fn metadata_oracle(&self) -> GlobalOracle {
        GlobalOracle::metadata(
            self.subnets
                .values()
                .flat_map(|s| s.union().live_records().cloned()),
        )
    }

    fn snapshot_view(&self) -> SnapshotView<'_> {
        SnapshotView {
            root: self.topology.primary_root().and_then(|r| self.roots.get(r)),
            subnets: &self.subnets,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            roots: self.roots.values().cloned().collect(),
            subnets: self.subnets.values().cloned().collect(),
        }
    }
}

struct SnapshotView<'a> {
    root: Option<&'a RootBroker>,
    subnets: &'a BTreeMap<DomainName, HarvestNode>,
}

impl SnapshotView<'_> {
    fn search(
        &self,
        query: &Query,
        width: usize,
        mode: MergeMode,
    ) -> Result<FederatedResult, BrokerError> {
        let root = self.root.ok_or(BrokerError::EmptyRegistry)?;
        root.federated_search(query, width, mode, &mut Subnets(self.subnets))
    }
}

/// Frozen broker and union state. Organizations are left out; the upper
/// tiers answer queries without them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// The first entry receives queries.
    pub roots: Vec<RootBroker>,
    pub subnets: Vec<HarvestNode>,
}

impl Snapshot {
    pub fn search(
        &self,
        query: &Query,
        width: usize,
        mode: MergeMode,
    ) -> Result<FederatedResult, BrokerError> {
        let subnets: BTreeMap<DomainName, HarvestNode> = self
            .subnets
            .iter()
            .map(|s| (s.domain().clone(), s.clone()))
            .collect();
        SnapshotView {
            root: self.roots.first(),
            subnets: &subnets,
        }
        .search(query, width, mode)
    }
}
