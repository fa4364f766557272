//! DNS-shaped names and the level each name occupies in the hierarchy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum number of labels in a domain name.
pub const MAX_LABELS: usize = 8;
/// Maximum length of a single label, in bytes.
pub const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("malformed domain {text:?}: {reason}")]
    MalformedDomain { text: String, reason: &'static str },
}

/// A lowercase domain name stored least-significant label first,
/// so `hust.edu.cn` is `["hust", "edu", "cn"]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainName {
    labels: Vec<String>,
}

impl DomainName {
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        let malformed = |reason| DomainError::MalformedDomain {
            text: text.to_string(),
            reason,
        };
        if text.is_empty() {
            return Err(malformed("empty name"));
        }
        let labels: Vec<String> = text.split('.').map(|l| l.to_ascii_lowercase()).collect();
        if labels.len() > MAX_LABELS {
            return Err(malformed("more than 8 labels"));
        }
        for label in &labels {
            if label.is_empty() {
                return Err(malformed("empty label"));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(malformed("label longer than 63 bytes"));
            }
            if !label
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
            {
                return Err(malformed("illegal character"));
            }
            if label.starts_with('-') || label.ends_with('-') {
                return Err(malformed("leading or trailing hyphen"));
            }
        }
        Ok(DomainName { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// The enclosing domain (this name minus its first label), or `None` for a
    /// single-label name.
    pub fn parent(&self) -> Option<DomainName> {
        if self.labels.len() <= 1 {
            None
        } else {
            Some(DomainName {
                labels: self.labels[1..].to_vec(),
            })
        }
    }

    /// True when `self` equals `other` or lies underneath it.
    pub fn is_within(&self, other: &DomainName) -> bool {
        self.labels.len() >= other.labels.len()
            && self.labels[self.labels.len() - other.labels.len()..] == other.labels[..]
    }

    /// Ancestors from the immediate parent up to the top-level label.
    pub fn ancestors(&self) -> impl Iterator<Item = DomainName> + '_ {
        (1..self.labels.len()).map(move |i| DomainName {
            labels: self.labels[i..].to_vec(),
        })
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels.join("."))
    }
}

impl FromStr for DomainName {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainName::parse(s)
    }
}

impl Serialize for DomainName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        DomainName::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Tier of a node. Ordered by depth: `Root < Subnet < Org`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Root,
    Subnet,
    Org,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Root => "root",
            Level::Subnet => "subnet",
            Level::Org => "org",
        })
    }
}

/// Maps label count to [`Level`]. Names with at most `root_max_labels`
/// labels are roots, up to `subnet_max_labels` are subnets, anything deeper
/// is an organization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelTable {
    pub root_max_labels: usize,
    pub subnet_max_labels: usize,
}

impl Default for LevelTable {
    fn default() -> Self {
        LevelTable {
            root_max_labels: 1,
            subnet_max_labels: 2,
        }
    }
}

impl LevelTable {
    pub fn level_of(&self, domain: &DomainName) -> Level {
        let n = domain.label_count();
        if n <= self.root_max_labels {
            Level::Root
        } else if n <= self.subnet_max_labels {
            Level::Subnet
        } else {
            Level::Org
        }
    }
}

pub fn level_of(domain: &DomainName, table: &LevelTable) -> Level {
    table.level_of(domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    #[test]
    fn parse_splits_labels() {
        assert_eq!(d("edu.cn").labels(), ["edu", "cn"]);
        assert_eq!(d("hust.edu.cn").labels(), ["hust", "edu", "cn"]);
    }

    #[test]
    fn parse_lowercases() {
        assert_eq!(d("EDU.cn").labels(), ["edu", "cn"]);
        assert_eq!(d("EDU.cn").to_string(), "edu.cn");
    }

    #[test]
    fn parse_rejects_malformed() {
        for bad in [
            "",
            "a..cn",
            ".cn",
            "cn.",
            "a_b.cn",
            "-a.cn",
            "a-.cn",
            "a.b.c.d.e.f.g.h.i",
            "ü.cn",
        ] {
            assert!(
                matches!(
                    DomainName::parse(bad),
                    Err(DomainError::MalformedDomain { .. })
                ),
                "{bad:?} should be rejected"
            );
        }
        let long = "a".repeat(64);
        assert!(DomainName::parse(&long).is_err());
        assert!(DomainName::parse(&"a".repeat(63)).is_ok());
        assert!(DomainName::parse("a.b.c.d.e.f.g.h").is_ok());
    }

    #[test]
    fn default_levels() {
        let t = LevelTable::default();
        assert_eq!(level_of(&d("cn"), &t), Level::Root);
        assert_eq!(level_of(&d("edu.cn"), &t), Level::Subnet);
        assert_eq!(level_of(&d("hust.edu.cn"), &t), Level::Org);
        assert_eq!(level_of(&d("cs.hust.edu.cn"), &t), Level::Org);
    }

    #[test]
    fn level_order() {
        assert!(Level::Root < Level::Subnet && Level::Subnet < Level::Org);
    }

    #[test]
    fn parent_and_ancestry() {
        assert_eq!(d("hust.edu.cn").parent(), Some(d("edu.cn")));
        assert_eq!(d("cn").parent(), None);
        assert!(d("hust.edu.cn").is_within(&d("cn")));
        assert!(d("hust.edu.cn").is_within(&d("hust.edu.cn")));
        assert!(!d("hust.edu.cn").is_within(&d("com.cn")));
        assert!(!d("cn").is_within(&d("edu.cn")));
        let anc: Vec<_> = d("hust.edu.cn")
            .ancestors()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(anc, ["edu.cn", "cn"]);
    }

    fn label() -> impl Strategy<Value = String> {
        "[a-z0-9]([a-z0-9-]{0,10}[a-z0-9])?"
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(labels in prop::collection::vec(label(), 1..=8)) {
            let text = labels.join(".");
            let parsed = DomainName::parse(&text).unwrap();
            prop_assert_eq!(parsed.to_string(), text);
            prop_assert_eq!(DomainName::parse(&parsed.to_string()).unwrap(), parsed);
        }

        #[test]
        fn level_monotone_in_label_count(labels in prop::collection::vec(label(), 2..=8)) {
            let t = LevelTable::default();
            let deep = DomainName::parse(&labels.join(".")).unwrap();
            let shallow = deep.parent().unwrap();
            prop_assert!(t.level_of(&shallow) <= t.level_of(&deep));
        }
    }
}
