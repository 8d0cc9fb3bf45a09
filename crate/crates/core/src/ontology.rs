//! The closed type system every graph and model head is defined over:
//! event types, entity types, relation types, and per-event argument roles.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved label for the start-of-graph boundary event.
pub const SOG_LABEL: &str = "[SOG]";
/// Reserved label for the end-of-graph boundary event.
pub const EOG_LABEL: &str = "[EOG]";

/// One argument role, scoped to its event type. Two roles with the same
/// name on different event types are distinct.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Role {
    pub event: String,
    pub role: String,
    #[serde(default)]
    pub allowed_entity_types: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OntologyFile {
    event_types: Vec<String>,
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    roles: Vec<Role>,
}

/// Validated, immutable type system. Index assignment follows declaration
/// order, so name↔index is a fixed bijection for the ontology's lifetime.
#[derive(Debug, Clone)]
pub struct Ontology {
    event_types: Vec<String>,
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    roles: Vec<Role>,
    event_index: HashMap<String, usize>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    /// Global role index per (event index, position in that event's role list).
    role_offsets: Vec<usize>,
    roles_by_event: Vec<Vec<usize>>,
    fingerprint: String,
}

impl Ontology {
    /// Parse and validate an ontology document.
    pub fn load_str(source: &str) -> Result<Ontology> {
        let file: OntologyFile = serde_json::from_str(source)
            .map_err(|e| Error::parse(None, byte_offset(source, &e), e.to_string()))?;
        Self::from_file(file, fingerprint_bytes(source.as_bytes()))
    }

    /// Load an ontology from disk.
    pub fn load_path(path: &Path) -> Result<Ontology> {
        let source = std::fs::read_to_string(path)?;
        let file: OntologyFile = serde_json::from_str(&source)
            .map_err(|e| Error::parse(Some(path), byte_offset(&source, &e), e.to_string()))?;
        Self::from_file(file, fingerprint_bytes(source.as_bytes()))
    }

    fn from_file(file: OntologyFile, fingerprint: String) -> Result<Ontology> {
        let event_index = index_unique("event type", &file.event_types)?;
        let entity_index = index_unique("entity type", &file.entity_types)?;
        let relation_index = index_unique("relation type", &file.relation_types)?;
        if file.event_types.is_empty() {
            return Err(Error::Validation("ontology declares no event types".into()));
        }
        if file.entity_types.is_empty() {
            return Err(Error::Validation("ontology declares no entity types".into()));
        }
        for t in file
            .event_types
            .iter()
            .chain(file.entity_types.iter())
            .chain(file.relation_types.iter())
        {
            if t == SOG_LABEL || t == EOG_LABEL {
                return Err(Error::Validation(format!("type name {t} is reserved")));
            }
        }

        let mut roles_by_event = vec![Vec::new(); file.event_types.len()];
        let mut seen_roles: HashMap<(usize, &str), ()> = HashMap::new();
        for (global, role) in file.roles.iter().enumerate() {
            let ev = *event_index.get(&role.event).ok_or_else(|| {
                Error::Validation(format!(
                    "role {} references unknown event type {}",
                    role.role, role.event
                ))
            })?;
            if seen_roles.insert((ev, role.role.as_str()), ()).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate role {} on event type {}",
                    role.role, role.event
                )));
            }
            for et in &role.allowed_entity_types {
                if !entity_index.contains_key(et) {
                    return Err(Error::Validation(format!(
                        "role {} allows unknown entity type {}",
                        role.role, et
                    )));
                }
            }
            roles_by_event[ev].push(global);
        }
        let role_offsets = (0..file.roles.len()).collect();

        Ok(Ontology {
            event_types: file.event_types,
            entity_types: file.entity_types,
            relation_types: file.relation_types,
            roles: file.roles,
            event_index,
            entity_index,
            relation_index,
            role_offsets,
            roles_by_event,
            fingerprint,
        })
    }

    pub fn num_event_types(&self) -> usize {
        self.event_types.len()
    }

    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn num_relation_types(&self) -> usize {
        self.relation_types.len()
    }

    /// Total number of (event type, role) pairs.
    pub fn num_roles(&self) -> usize {
        self.role_offsets.len()
    }

    pub fn event_types(&self) -> &[String] {
        &self.event_types
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    pub fn event_type_index(&self, name: &str) -> Option<usize> {
        self.event_index.get(name).copied()
    }

    pub fn entity_type_index(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_type_index(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn event_type_name(&self, idx: usize) -> &str {
        &self.event_types[idx]
    }

    pub fn entity_type_name(&self, idx: usize) -> &str {
        &self.entity_types[idx]
    }

    pub fn relation_type_name(&self, idx: usize) -> &str {
        &self.relation_types[idx]
    }

    /// Role names of an event type, in declaration order.
    pub fn roles_of(&self, event_type: &str) -> Result<Vec<&str>> {
        let ev = self
            .event_type_index(event_type)
            .ok_or_else(|| Error::Validation(format!("unknown event type {event_type}")))?;
        Ok(self.roles_by_event[ev]
            .iter()
            .map(|&g| self.roles[g].role.as_str())
            .collect())
    }

    /// Global role indices of an event type, in declaration order.
    pub fn role_indices_of(&self, event_idx: usize) -> &[usize] {
        &self.roles_by_event[event_idx]
    }

    /// Resolve (event type index, role name) to the global role index.
    pub fn role_index(&self, event_idx: usize, role: &str) -> Option<usize> {
        self.roles_by_event[event_idx]
            .iter()
            .copied()
            .find(|&g| self.roles[g].role == role)
    }

    pub fn role(&self, global: usize) -> &Role {
        &self.roles[global]
    }

    /// SHA-256 of the source document; checkpoints refuse to load against a
    /// different ontology.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

fn index_unique(kind: &str, names: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return Err(Error::Validation(format!("duplicate {kind} {n}")));
        }
    }
    Ok(map)
}

fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Best-effort byte offset of a serde_json error location.
pub(crate) fn byte_offset(source: &str, err: &serde_json::Error) -> Option<usize> {
    let (line, col) = (err.line(), err.column());
    if line == 0 {
        return None;
    }
    let mut offset = 0usize;
    for (i, l) in source.split('\n').enumerate() {
        if i + 1 == line {
            return Some(offset + col.saturating_sub(1));
        }
        offset += l.len() + 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"{
        "event_types": ["Attack", "Arrest", "Transport"],
        "entity_types": ["Person", "Place"],
        "relation_types": ["PartWhole"],
        "roles": [
            {"event": "Attack", "role": "Attacker", "allowed_entity_types": ["Person"]},
            {"event": "Attack", "role": "Place", "allowed_entity_types": ["Place"]},
            {"event": "Arrest", "role": "Detainee", "allowed_entity_types": ["Person"]},
            {"event": "Arrest", "role": "Place", "allowed_entity_types": ["Place"]}
        ]
    }"#;

    #[test]
    fn toy_ontology_loads_with_expected_counts() {
        let o = Ontology::load_str(TOY).unwrap();
        assert_eq!(o.num_event_types(), 3);
        assert_eq!(o.num_entity_types(), 2);
        assert_eq!(o.num_relation_types(), 1);
        assert_eq!(o.num_roles(), 4);
        // typed non-temporal edge kinds: roles plus relations
        assert_eq!(o.num_roles() + o.num_relation_types(), 5);
    }

    #[test]
    fn roles_follow_declaration_order() {
        let o = Ontology::load_str(TOY).unwrap();
        assert_eq!(o.roles_of("Attack").unwrap(), vec!["Attacker", "Place"]);
        assert_eq!(o.roles_of("Arrest").unwrap(), vec!["Detainee", "Place"]);
        assert_eq!(o.roles_of("Transport").unwrap(), Vec::<&str>::new());
        assert!(o.roles_of("Die").is_err());
    }

    #[test]
    fn role_identity_is_event_scoped() {
        let o = Ontology::load_str(TOY).unwrap();
        let attack = o.event_type_index("Attack").unwrap();
        let arrest = o.event_type_index("Arrest").unwrap();
        let p1 = o.role_index(attack, "Place").unwrap();
        let p2 = o.role_index(arrest, "Place").unwrap();
        assert_ne!(p1, p2);
    }

    #[test]
    fn load_is_deterministic() {
        let a = Ontology::load_str(TOY).unwrap();
        let b = Ontology::load_str(TOY).unwrap();
        assert_eq!(a.event_types(), b.event_types());
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(
            a.role_index(0, "Place").unwrap(),
            b.role_index(0, "Place").unwrap()
        );
    }

    #[test]
    fn zero_role_event_type_is_legal() {
        let src = r#"{
            "event_types": ["A"],
            "entity_types": ["X"],
            "relation_types": ["R"],
            "roles": []
        }"#;
        let o = Ontology::load_str(src).unwrap();
        assert_eq!(o.roles_of("A").unwrap(), Vec::<&str>::new());
    }

    #[test]
    fn duplicate_names_rejected() {
        let src = r#"{
            "event_types": ["A", "A"],
            "entity_types": ["X"],
            "relation_types": [],
            "roles": []
        }"#;
        assert!(matches!(Ontology::load_str(src), Err(Error::Validation(_))));
    }

    #[test]
    fn role_on_unknown_event_rejected() {
        let src = r#"{
            "event_types": ["A"],
            "entity_types": ["X"],
            "relation_types": [],
            "roles": [{"event": "B", "role": "r", "allowed_entity_types": []}]
        }"#;
        assert!(matches!(Ontology::load_str(src), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_source_is_parse_error() {
        assert!(matches!(
            Ontology::load_str("{ not json"),
            Err(Error::Parse { .. })
        ));
    }
}
