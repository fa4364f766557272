use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{DomainName, SimTime};
use crate::org::ChangeOp;

/// When one change at an organization became visible further up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeVisibility {
    pub doc_id: String,
    pub owner: DomainName,
    pub seq_no: u64,
    pub op: ChangeOp,
    pub changed_at: SimTime,
    pub subnet_at: Option<SimTime>,
    pub root_at: Option<SimTime>,
}

impl ChangeVisibility {
    pub fn root_delay(&self) -> Option<SimTime> {
        self.root_at.map(|r| r - self.changed_at)
    }

    pub fn subnet_delay(&self) -> Option<SimTime> {
        self.subnet_at.map(|s| s - self.changed_at)
    }
}

/// Follows each change from its organization to the union index that applied
/// it and then to the root registry.
///
/// A harvested record carrying seq `s` for a document covers every change to
/// that document with seq at most `s`. A registered description with `as_of`
/// covers every change its subnet had applied by then.
#[derive(Debug, Clone, Default)]
pub struct VisibilityTracker {
    changes: Vec<ChangeVisibility>,
    by_doc: BTreeMap<(DomainName, String), Vec<usize>>,
    awaiting_root: BTreeMap<DomainName, Vec<usize>>,
}

impl VisibilityTracker {
    pub fn record_change(
        &mut self,
        owner: &DomainName,
        doc_id: &str,
        seq_no: u64,
        op: ChangeOp,
        at: SimTime,
    ) {
        let idx = self.changes.len();
        self.changes.push(ChangeVisibility {
            doc_id: doc_id.to_string(),
            owner: owner.clone(),
            seq_no,
            op,
            changed_at: at,
            subnet_at: None,
            root_at: None,
        });
        self.by_doc
            .entry((owner.clone(), doc_id.to_string()))
            .or_default()
            .push(idx);
    }

    pub fn on_subnet_apply(
        &mut self,
        subnet: &DomainName,
        owner: &DomainName,
        doc_id: &str,
        seq_no: u64,
        at: SimTime,
    ) {
        let Some(idxs) = self.by_doc.get(&(owner.clone(), doc_id.to_string())) else {
            return;
        };
        for &i in idxs {
            let c = &mut self.changes[i];
            if c.seq_no <= seq_no && c.subnet_at.is_none() {
                c.subnet_at = Some(at);
                self.awaiting_root
                    .entry(subnet.clone())
                    .or_default()
                    .push(i);
            }
        }
    }

    pub fn on_root_register(&mut self, subnet: &DomainName, as_of: SimTime, at: SimTime) {
        let Some(waiting) = self.awaiting_root.get_mut(subnet) else {
            return;
        };
        let changes = &mut self.changes;
        waiting.retain(|&i| {
            let c = &mut changes[i];
            if c.subnet_at.is_some_and(|s| s <= as_of) {
                c.root_at = Some(at);
                false
            } else {
                true
            }
        });
    }

    pub fn changes(&self) -> &[ChangeVisibility] {
        &self.changes
    }

    /// Whether some version of the document has reached the root.
    pub fn is_root_visible(&self, owner: &DomainName, doc_id: &str) -> bool {
        self.by_doc
            .get(&(owner.clone(), doc_id.to_string()))
            .is_some_and(|idxs| {
                idxs.iter().any(|&i| {
                    let c = &self.changes[i];
                    c.op == ChangeOp::Upsert && c.root_at.is_some()
                })
            })
    }
}
