use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DomainName, Level, LevelTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("{domain} has no registered parent {parent}")]
    OrphanDomain {
        domain: DomainName,
        parent: DomainName,
    },
    #[error("{0} is already registered")]
    DuplicateDomain(DomainName),
    #[error("{domain} cannot be a {role}: {reason}")]
    RoleMismatch {
        domain: DomainName,
        role: Level,
        reason: &'static str,
    },
}

/// Index of a node in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeHandle(pub usize);

/// The DNS-shaped tree of registered nodes.
///
/// A root has no parent. A subnet hangs directly under a root. An
/// organization hangs under a subnet or another organization and is harvested
/// by its nearest subnet ancestor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    table: LevelTable,
    nodes: Vec<(DomainName, Level)>,
    index: BTreeMap<DomainName, NodeHandle>,
}

impl Topology {
    pub fn new(table: LevelTable) -> Self {
        Topology {
            table,
            nodes: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn level_table(&self) -> &LevelTable {
        &self.table
    }

    pub fn register_node(
        &mut self,
        domain: DomainName,
        role: Level,
    ) -> Result<NodeHandle, TopologyError> {
        if self.index.contains_key(&domain) {
            return Err(TopologyError::DuplicateDomain(domain));
        }
        if self.table.level_of(&domain) != role {
            return Err(TopologyError::RoleMismatch {
                domain,
                role,
                reason: "label count maps to a different level",
            });
        }
        if role != Level::Root {
            let parent = domain.parent().ok_or_else(|| TopologyError::RoleMismatch {
                domain: domain.clone(),
                role,
                reason: "only a root may lack a parent",
            })?;
            let Some(parent_level) = self.level(&parent) else {
                return Err(TopologyError::OrphanDomain { domain, parent });
            };
            let allowed = match role {
                Level::Subnet => parent_level == Level::Root,
                Level::Org => parent_level >= Level::Subnet,
                Level::Root => unreachable!(),
            };
            if !allowed {
                return Err(TopologyError::RoleMismatch {
                    domain,
                    role,
                    reason: "parent has an incompatible role",
                });
            }
        }
        let handle = NodeHandle(self.nodes.len());
        self.nodes.push((domain.clone(), role));
        self.index.insert(domain, handle);
        Ok(handle)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, domain: &DomainName) -> bool {
        self.index.contains_key(domain)
    }

    pub fn handle(&self, domain: &DomainName) -> Option<NodeHandle> {
        self.index.get(domain).copied()
    }

    pub fn level(&self, domain: &DomainName) -> Option<Level> {
        self.index.get(domain).map(|h| self.nodes[h.0].1)
    }

    /// Nodes in registration order.
    pub fn nodes(&self) -> impl Iterator<Item = (&DomainName, Level)> {
        self.nodes.iter().map(|(d, l)| (d, *l))
    }

    pub fn with_level(&self, level: Level) -> impl Iterator<Item = &DomainName> {
        self.nodes
            .iter()
            .filter(move |(_, l)| *l == level)
            .map(|(d, _)| d)
    }

    fn nearest_ancestor(&self, domain: &DomainName, level: Level) -> Option<DomainName> {
        domain.ancestors().find(|a| self.level(a) == Some(level))
    }

    /// The subnet that harvests an organization.
    pub fn harvester_of(&self, org: &DomainName) -> Option<DomainName> {
        self.nearest_ancestor(org, Level::Subnet)
    }

    /// The root a subnet registers its description with.
    pub fn root_of(&self, subnet: &DomainName) -> Option<DomainName> {
        self.nearest_ancestor(subnet, Level::Root)
    }

    /// Organizations harvested by `subnet`, in registration order.
    pub fn children_of(&self, subnet: &DomainName) -> Vec<DomainName> {
        self.with_level(Level::Org)
            .filter(|o| self.harvester_of(o).as_ref() == Some(subnet))
            .cloned()
            .collect()
    }

    /// The first registered root; queries enter here by default.
    pub fn primary_root(&self) -> Option<&DomainName> {
        self.with_level(Level::Root).next()
    }
}

/// Topology description file: domains in registration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub domains: Vec<DomainName>,
    #[serde(default)]
    pub level_table: Option<LevelTable>,
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, TopologyError> {
        let mut topo = Topology::new(self.level_table.unwrap_or_default());
        for d in &self.domains {
            let role = topo.level_table().level_of(d);
            topo.register_node(d.clone(), role)?;
        }
        Ok(topo)
    }
}
