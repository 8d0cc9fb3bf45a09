//! Instance/schema graph data model: validation, boundary-node insertion,
//! BFS linearization, and prefix-subgraph extraction.
//!
//! A graph holds typed event nodes, typed entity nodes, argument edges
//! (event–role–entity), undirected relation edges (entity–entity), and
//! directed temporal edges (event–event) forming a DAG.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{byte_offset, Ontology, EOG_LABEL, SOG_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentEdge {
    pub event: String,
    pub role: String,
    pub entity: String,
}

/// Undirected; stored with endpoints in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub head: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub before: String,
    pub after: String,
}

/// One instance graph: the typed record of a single complex event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceGraph {
    pub graph_id: String,
    pub complex_event_type: String,
    #[serde(default)]
    pub events: Vec<EventNode>,
    #[serde(default)]
    pub entities: Vec<EntityNode>,
    #[serde(default, rename = "arguments")]
    pub argument_edges: Vec<ArgumentEdge>,
    #[serde(default, rename = "relations")]
    pub relation_edges: Vec<RelationEdge>,
    #[serde(default, rename = "temporal")]
    pub temporal_edges: Vec<TemporalEdge>,
}

/// A decoded schema: type-level graph plus the probability of every kept
/// generation decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaGraph {
    #[serde(flatten)]
    pub graph: InstanceGraph,
    #[serde(default)]
    pub probabilities: Vec<DecisionProbability>,
}

/// Probability annotation for one generation decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionProbability {
    pub step: usize,
    pub decision: String,
    pub choice: String,
    pub probability: f64,
}

/// BFS linearization of a boundary-augmented graph.
#[derive(Debug, Clone)]
pub struct LinearizedGraph {
    graph: InstanceGraph,
    /// Event ids, starting with SOG and ending with EOG.
    order: Vec<String>,
}

impl InstanceGraph {
    pub fn is_boundary_event(id: &str) -> bool {
        id == SOG_LABEL || id == EOG_LABEL
    }

    pub fn has_boundaries(&self) -> bool {
        self.events.iter().any(|e| e.id == SOG_LABEL)
    }

    /// Events excluding SOG/EOG.
    pub fn real_events(&self) -> impl Iterator<Item = &EventNode> {
        self.events.iter().filter(|e| !Self::is_boundary_event(&e.id))
    }

    pub fn event(&self, id: &str) -> Option<&EventNode> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.iter().find(|e| e.id == id)
    }

    fn event_ids(&self) -> HashSet<&str> {
        self.events.iter().map(|e| e.id.as_str()).collect()
    }

    /// Successors over temporal edges, as id lists keyed by event id.
    pub fn temporal_adjacency(&self) -> HashMap<&str, Vec<&str>> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.events {
            adj.entry(e.id.as_str()).or_default();
        }
        for t in &self.temporal_edges {
            adj.entry(t.before.as_str()).or_default().push(t.after.as_str());
        }
        adj
    }

    fn in_degrees(&self) -> HashMap<&str, usize> {
        let mut deg: HashMap<&str, usize> = self.events.iter().map(|e| (e.id.as_str(), 0)).collect();
        for t in &self.temporal_edges {
            *deg.entry(t.after.as_str()).or_insert(0) += 1;
        }
        deg
    }

    /// Structural validation against an ontology. Does not mutate.
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        let mut event_tys: HashMap<&str, &str> = HashMap::new();
        for e in &self.events {
            if Self::is_boundary_event(&e.id) {
                if e.ty != e.id {
                    return Err(Error::Validation(format!(
                        "boundary event {} must carry its reserved type label",
                        e.id
                    )));
                }
            } else if ontology.event_type_index(&e.ty).is_none() {
                return Err(Error::Validation(format!(
                    "event {} has unknown type {}",
                    e.id, e.ty
                )));
            }
            if event_tys.insert(e.id.as_str(), e.ty.as_str()).is_some() {
                return Err(Error::Validation(format!("duplicate event id {}", e.id)));
            }
        }
        let mut entity_ids = HashSet::new();
        for v in &self.entities {
            if ontology.entity_type_index(&v.ty).is_none() {
                return Err(Error::Validation(format!(
                    "entity {} has unknown type {}",
                    v.id, v.ty
                )));
            }
            if !entity_ids.insert(v.id.as_str()) {
                return Err(Error::Validation(format!("duplicate entity id {}", v.id)));
            }
        }
        let mut seen_args = HashSet::new();
        for a in &self.argument_edges {
            let ty = event_tys.get(a.event.as_str()).ok_or_else(|| {
                Error::Validation(format!("argument references unknown event {}", a.event))
            })?;
            if !seen_args.insert((a.event.as_str(), a.role.as_str())) {
                return Err(Error::Validation(format!(
                    "event {} has multiple fillers for role {}",
                    a.event, a.role
                )));
            }
            if !entity_ids.contains(a.entity.as_str()) {
                return Err(Error::Validation(format!(
                    "argument references unknown entity {}",
                    a.entity
                )));
            }
            if Self::is_boundary_event(&a.event) {
                return Err(Error::Validation("boundary events take no arguments".into()));
            }
            let ev_idx = ontology.event_type_index(ty).unwrap();
            if ontology.role_index(ev_idx, &a.role).is_none() {
                return Err(Error::Validation(format!(
                    "event type {} has no role {}",
                    ty, a.role
                )));
            }
        }
        let mut seen_rel = HashSet::new();
        for r in &self.relation_edges {
            if ontology.relation_type_index(&r.ty).is_none() {
                return Err(Error::Validation(format!("unknown relation type {}", r.ty)));
            }
            if r.head == r.tail {
                return Err(Error::Validation(format!("self-relation on entity {}", r.head)));
            }
            if r.head > r.tail {
                return Err(Error::Validation(format!(
                    "relation edge {}–{} not in canonical order",
                    r.head, r.tail
                )));
            }
            if !entity_ids.contains(r.head.as_str()) || !entity_ids.contains(r.tail.as_str()) {
                return Err(Error::Validation(format!(
                    "relation references unknown entity {}–{}",
                    r.head, r.tail
                )));
            }
            if !seen_rel.insert((r.head.as_str(), r.ty.as_str(), r.tail.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate relation edge {} {} {}",
                    r.head, r.ty, r.tail
                )));
            }
        }
        let mut seen_tmp = HashSet::new();
        let event_ids = self.event_ids();
        for t in &self.temporal_edges {
            if t.before == t.after {
                return Err(Error::Validation(format!("temporal self-loop on {}", t.before)));
            }
            if !event_ids.contains(t.before.as_str()) || !event_ids.contains(t.after.as_str()) {
                return Err(Error::Validation(format!(
                    "temporal edge references unknown event {}→{}",
                    t.before, t.after
                )));
            }
            if !seen_tmp.insert((t.before.as_str(), t.after.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate temporal edge {}→{}",
                    t.before, t.after
                )));
            }
        }
        self.check_acyclic()?;
        Ok(())
    }

    /// Kahn's algorithm; on failure reports one cycle.
    fn check_acyclic(&self) -> Result<()> {
        let adj = self.temporal_adjacency();
        let mut deg = self.in_degrees();
        let mut queue: VecDeque<&str> = self
            .events
            .iter()
            .map(|e| e.id.as_str())
            .filter(|id| deg[id] == 0)
            .collect();
        let mut emitted = 0usize;
        while let Some(id) = queue.pop_front() {
            emitted += 1;
            for &next in adj.get(id).map(|v| v.as_slice()).unwrap_or(&[]) {
                let d = deg.get_mut(next).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(next);
                }
            }
        }
        if emitted == self.events.len() {
            return Ok(());
        }
        // Everything still holding in-degree lies on or downstream of a cycle;
        // walk it to name one concrete cycle.
        let remaining: HashSet<&str> = self
            .events
            .iter()
            .map(|e| e.id.as_str())
            .filter(|id| deg[id] > 0)
            .collect();
        let start = self
            .events
            .iter()
            .map(|e| e.id.as_str())
            .find(|id| remaining.contains(id))
            .unwrap();
        let mut path = vec![start];
        let mut seen: HashMap<&str, usize> = HashMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let next = adj[cur]
                .iter()
                .copied()
                .find(|n| remaining.contains(n))
                .expect("node in cycle region has a successor in cycle region");
            if let Some(&pos) = seen.get(next) {
                let cycle = path[pos..].iter().map(|s| s.to_string()).collect();
                return Err(Error::TemporalCycle(cycle));
            }
            seen.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }
}

/// Parse one instance-graph document and normalize it for training:
/// relation edges are canonicalized and deduplicated, temporally isolated
/// events are dropped (with their argument edges), and entities left
/// without any argument edge are dropped. Returns the graph plus warnings
/// describing anything that was removed.
pub fn ingest_graph(source: &str, ontology: &Ontology) -> Result<(InstanceGraph, Vec<String>)> {
    ingest_inner(source, None, ontology)
}

pub fn ingest_graph_path(path: &Path, ontology: &Ontology) -> Result<(InstanceGraph, Vec<String>)> {
    let source = std::fs::read_to_string(path)?;
    ingest_inner(&source, Some(path), ontology)
}

fn ingest_inner(
    source: &str,
    path: Option<&Path>,
    ontology: &Ontology,
) -> Result<(InstanceGraph, Vec<String>)> {
    let mut graph: InstanceGraph = serde_json::from_str(source)
        .map_err(|e| Error::parse(path, byte_offset(source, &e), e.to_string()))?;
    let mut warnings = Vec::new();

    // Canonicalize relation endpoints, then dedupe.
    for r in &mut graph.relation_edges {
        if r.head > r.tail {
            std::mem::swap(&mut r.head, &mut r.tail);
        }
    }
    let mut seen = HashSet::new();
    let before = graph.relation_edges.len();
    graph
        .relation_edges
        .retain(|r| seen.insert((r.head.clone(), r.ty.clone(), r.tail.clone())));
    if graph.relation_edges.len() != before {
        warnings.push(format!(
            "{} duplicate relation edges removed",
            before - graph.relation_edges.len()
        ));
    }
    let mut seen = HashSet::new();
    graph
        .temporal_edges
        .retain(|t| seen.insert((t.before.clone(), t.after.clone())));

    // Generated schema files carry boundary nodes and are valid by
    // construction; the isolation rule applies to raw corpus graphs only.
    if !graph.has_boundaries() {
        let connected: HashSet<String> = graph
            .temporal_edges
            .iter()
            .flat_map(|t| [t.before.clone(), t.after.clone()])
            .collect();
        let multi = graph.events.len() > 1;
        let dropped: Vec<String> = graph
            .events
            .iter()
            .filter(|e| multi && !connected.contains(&e.id))
            .map(|e| e.id.clone())
            .collect();
        if !dropped.is_empty() {
            warnings.push(format!(
                "dropped temporally isolated events: {}",
                dropped.join(", ")
            ));
            let dropped: HashSet<&String> = dropped.iter().collect();
            graph.events.retain(|e| !dropped.contains(&e.id));
            graph.argument_edges.retain(|a| !dropped.contains(&a.event));
        }
        let referenced: HashSet<&str> = graph
            .argument_edges
            .iter()
            .map(|a| a.entity.as_str())
            .collect();
        let orphaned: Vec<String> = graph
            .entities
            .iter()
            .filter(|v| !referenced.contains(v.id.as_str()))
            .map(|v| v.id.clone())
            .collect();
        if !orphaned.is_empty() {
            warnings.push(format!("dropped orphaned entities: {}", orphaned.join(", ")));
            let orphaned: HashSet<&String> = orphaned.iter().collect();
            graph.entities.retain(|v| !orphaned.contains(&v.id));
            graph
                .relation_edges
                .retain(|r| !orphaned.contains(&r.head) && !orphaned.contains(&r.tail));
        }
    }

    graph.validate(ontology)?;
    Ok((graph, warnings))
}

pub fn write_graph(graph: &InstanceGraph, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(graph).expect("graph serializes");
    std::fs::write(path, json)?;
    Ok(())
}

/// Insert SOG/EOG boundary events: SOG precedes every source, EOG follows
/// every sink. Idempotent.
pub fn add_boundary_nodes(mut graph: InstanceGraph) -> InstanceGraph {
    if graph.has_boundaries() {
        return graph;
    }
    let mut in_deg: HashMap<&str, usize> = HashMap::new();
    let mut out_deg: HashMap<&str, usize> = HashMap::new();
    for t in &graph.temporal_edges {
        *out_deg.entry(t.before.as_str()).or_insert(0) += 1;
        *in_deg.entry(t.after.as_str()).or_insert(0) += 1;
    }
    let mut new_edges = Vec::new();
    for e in &graph.events {
        if in_deg.get(e.id.as_str()).copied().unwrap_or(0) == 0 {
            new_edges.push(TemporalEdge {
                before: SOG_LABEL.into(),
                after: e.id.clone(),
            });
        }
        if out_deg.get(e.id.as_str()).copied().unwrap_or(0) == 0 {
            new_edges.push(TemporalEdge {
                before: e.id.clone(),
                after: EOG_LABEL.into(),
            });
        }
    }
    if graph.events.is_empty() {
        new_edges.push(TemporalEdge {
            before: SOG_LABEL.into(),
            after: EOG_LABEL.into(),
        });
    }
    graph.events.insert(
        0,
        EventNode {
            id: SOG_LABEL.into(),
            ty: SOG_LABEL.into(),
        },
    );
    graph.events.push(EventNode {
        id: EOG_LABEL.into(),
        ty: EOG_LABEL.into(),
    });
    graph.temporal_edges.extend(new_edges);
    graph
}

/// Remove boundary nodes and their incident temporal edges.
pub fn strip_boundary_nodes(mut graph: InstanceGraph) -> InstanceGraph {
    graph.events.retain(|e| !InstanceGraph::is_boundary_event(&e.id));
    graph.temporal_edges.retain(|t| {
        !InstanceGraph::is_boundary_event(&t.before) && !InstanceGraph::is_boundary_event(&t.after)
    });
    graph
}

/// Predecessor-complete BFS from SOG over temporal edges: an event is
/// emitted only once all its temporal predecessors have been, with ties
/// broken by ascending node index. Deterministic.
pub fn linearize(graph: &InstanceGraph) -> Result<LinearizedGraph> {
    if !graph.has_boundaries() {
        return Err(Error::Validation(
            "linearize requires boundary nodes; call add_boundary_nodes first".into(),
        ));
    }
    let index_of: HashMap<&str, usize> = graph
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let adj = graph.temporal_adjacency();
    let mut deg = graph.in_degrees();
    // Ready set keyed by node index keeps the tie-break order.
    let mut ready: BTreeSet<usize> = graph
        .events
        .iter()
        .filter(|e| deg[e.id.as_str()] == 0)
        .map(|e| index_of[e.id.as_str()])
        .collect();
    let mut order = Vec::with_capacity(graph.events.len());
    while let Some(&idx) = ready.iter().next() {
        ready.remove(&idx);
        let id = graph.events[idx].id.as_str();
        order.push(id.to_string());
        for &next in adj.get(id).map(|v| v.as_slice()).unwrap_or(&[]) {
            let d = deg.get_mut(next).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(index_of[next]);
            }
        }
    }
    if order.len() != graph.events.len() {
        return Err(Error::TemporalCycle(vec!["unreachable events".into()]));
    }
    debug_assert_eq!(order.first().map(String::as_str), Some(SOG_LABEL));
    debug_assert_eq!(order.last().map(String::as_str), Some(EOG_LABEL));
    Ok(LinearizedGraph {
        graph: graph.clone(),
        order,
    })
}

impl LinearizedGraph {
    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn graph(&self) -> &InstanceGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The subgraph visible before generation step `i`: events at positions
    /// `< i`, their argument edges and entities, and relation/temporal edges
    /// with both endpoints present.
    pub fn prefix_subgraph(&self, i: usize) -> Result<InstanceGraph> {
        if i > self.order.len() {
            return Err(Error::Validation(format!(
                "prefix position {i} out of range (order has {} events)",
                self.order.len()
            )));
        }
        let visible: HashSet<&str> = self.order[..i].iter().map(String::as_str).collect();
        let events: Vec<EventNode> = self
            .graph
            .events
            .iter()
            .filter(|e| visible.contains(e.id.as_str()))
            .cloned()
            .collect();
        let argument_edges: Vec<ArgumentEdge> = self
            .graph
            .argument_edges
            .iter()
            .filter(|a| visible.contains(a.event.as_str()))
            .cloned()
            .collect();
        let kept_entities: HashSet<&str> = argument_edges.iter().map(|a| a.entity.as_str()).collect();
        let entities: Vec<EntityNode> = self
            .graph
            .entities
            .iter()
            .filter(|v| kept_entities.contains(v.id.as_str()))
            .cloned()
            .collect();
        let relation_edges = self
            .graph
            .relation_edges
            .iter()
            .filter(|r| kept_entities.contains(r.head.as_str()) && kept_entities.contains(r.tail.as_str()))
            .cloned()
            .collect();
        let temporal_edges = self
            .graph
            .temporal_edges
            .iter()
            .filter(|t| visible.contains(t.before.as_str()) && visible.contains(t.after.as_str()))
            .cloned()
            .collect();
        Ok(InstanceGraph {
            graph_id: self.graph.graph_id.clone(),
            complex_event_type: self.graph.complex_event_type.clone(),
            events,
            entities,
            argument_edges,
            relation_edges,
            temporal_edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_ontology() -> Ontology {
        Ontology::load_str(
            r#"{
            "event_types": ["Attack", "Arrest", "Transport", "Die"],
            "entity_types": ["Person", "Place"],
            "relation_types": ["PartWhole"],
            "roles": [
                {"event": "Attack", "role": "Attacker", "allowed_entity_types": ["Person"]},
                {"event": "Attack", "role": "Place", "allowed_entity_types": ["Place"]},
                {"event": "Arrest", "role": "Detainee", "allowed_entity_types": ["Person"]},
                {"event": "Arrest", "role": "Place", "allowed_entity_types": ["Place"]}
            ]
        }"#,
        )
        .unwrap()
    }

    fn diamond() -> InstanceGraph {
        serde_json::from_str(
            r#"{
            "graph_id": "g-diamond",
            "complex_event_type": "test",
            "events": [
                {"id": "e1", "type": "Attack"},
                {"id": "e2", "type": "Arrest"},
                {"id": "e3", "type": "Transport"},
                {"id": "e4", "type": "Die"}
            ],
            "entities": [],
            "arguments": [],
            "relations": [],
            "temporal": [
                {"before": "e1", "after": "e2"},
                {"before": "e1", "after": "e3"},
                {"before": "e2", "after": "e4"},
                {"before": "e3", "after": "e4"}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn ingest_accepts_simple_chain() {
        let src = r#"{
            "graph_id": "g1",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Die"}],
            "entities": [],
            "arguments": [],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        let (g, warnings) = ingest_graph(src, &toy_ontology()).unwrap();
        assert_eq!(g.events.len(), 2);
        assert!(warnings.is_empty());
    }

    #[test]
    fn ingest_drops_isolated_event_with_warning() {
        let src = r#"{
            "graph_id": "g2",
            "complex_event_type": "test",
            "events": [
                {"id": "e1", "type": "Attack"},
                {"id": "e2", "type": "Die"},
                {"id": "e3", "type": "Transport"}
            ],
            "entities": [],
            "arguments": [],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        let (g, warnings) = ingest_graph(src, &toy_ontology()).unwrap();
        assert_eq!(g.events.len(), 2);
        assert!(g.event("e3").is_none());
        assert!(warnings.iter().any(|w| w.contains("e3")));
    }

    #[test]
    fn ingest_reports_smallest_cycle() {
        let src = r#"{
            "graph_id": "g3",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Die"}],
            "entities": [],
            "arguments": [],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}, {"before": "e2", "after": "e1"}]
        }"#;
        match ingest_graph(src, &toy_ontology()) {
            Err(Error::TemporalCycle(cycle)) => {
                let mut c = cycle;
                c.sort();
                assert_eq!(c, vec!["e1".to_string(), "e2".to_string()]);
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_drops_orphaned_entities() {
        let src = r#"{
            "graph_id": "g4",
            "complex_event_type": "test",
            "events": [
                {"id": "e1", "type": "Attack"},
                {"id": "e2", "type": "Die"},
                {"id": "e3", "type": "Arrest"}
            ],
            "entities": [{"id": "v1", "type": "Person"}, {"id": "v2", "type": "Place"}],
            "arguments": [{"event": "e3", "role": "Detainee", "entity": "v1"}],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        // e3 is isolated, so its Detainee argument goes with it, orphaning v1;
        // v2 never had an argument edge.
        let (g, _) = ingest_graph(src, &toy_ontology()).unwrap();
        assert!(g.entities.is_empty());
        assert!(g.argument_edges.is_empty());
    }

    #[test]
    fn boundary_nodes_on_empty_graph() {
        let g = InstanceGraph {
            graph_id: "empty".into(),
            complex_event_type: "test".into(),
            ..Default::default()
        };
        let g = add_boundary_nodes(g);
        let lin = linearize(&g).unwrap();
        assert_eq!(lin.order(), &[SOG_LABEL.to_string(), EOG_LABEL.to_string()]);
        assert_eq!(g.temporal_edges.len(), 1);
    }

    #[test]
    fn boundary_nodes_on_chain() {
        let src = r#"{
            "graph_id": "g5",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Die"}],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        let (g, _) = ingest_graph(src, &toy_ontology()).unwrap();
        let g = add_boundary_nodes(g);
        assert!(g.temporal_edges.contains(&TemporalEdge {
            before: SOG_LABEL.into(),
            after: "e1".into()
        }));
        assert!(g.temporal_edges.contains(&TemporalEdge {
            before: "e2".into(),
            after: EOG_LABEL.into()
        }));
        assert_eq!(g.temporal_edges.len(), 3);
        // idempotent
        let again = add_boundary_nodes(g.clone());
        assert_eq!(again, g);
    }

    #[test]
    fn boundary_nodes_on_diamond_touch_only_source_and_sink() {
        let g = add_boundary_nodes(diamond());
        let added: Vec<_> = g
            .temporal_edges
            .iter()
            .filter(|t| {
                InstanceGraph::is_boundary_event(&t.before) || InstanceGraph::is_boundary_event(&t.after)
            })
            .collect();
        assert_eq!(added.len(), 2);
        assert!(added.iter().any(|t| t.before == SOG_LABEL && t.after == "e1"));
        assert!(added.iter().any(|t| t.before == "e4" && t.after == EOG_LABEL));
    }

    #[test]
    fn linearize_single_event() {
        let src = r#"{
            "graph_id": "g6",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}]
        }"#;
        let (g, _) = ingest_graph(src, &toy_ontology()).unwrap();
        let lin = linearize(&add_boundary_nodes(g)).unwrap();
        assert_eq!(
            lin.order(),
            &[SOG_LABEL.to_string(), "e1".to_string(), EOG_LABEL.to_string()]
        );
    }

    #[test]
    fn linearize_diamond_breaks_ties_by_index() {
        let lin = linearize(&add_boundary_nodes(diamond())).unwrap();
        assert_eq!(
            lin.order(),
            &[
                SOG_LABEL.to_string(),
                "e1".to_string(),
                "e2".to_string(),
                "e3".to_string(),
                "e4".to_string(),
                EOG_LABEL.to_string()
            ]
        );
    }

    #[test]
    fn linearize_emits_joins_after_both_parents() {
        // Two parallel branches both feeding one later event.
        let src = r#"{
            "graph_id": "g7",
            "complex_event_type": "test",
            "events": [
                {"id": "assemble", "type": "Transport"},
                {"id": "buy-a", "type": "Attack"},
                {"id": "buy-b", "type": "Arrest"}
            ],
            "temporal": [
                {"before": "buy-a", "after": "assemble"},
                {"before": "buy-b", "after": "assemble"}
            ]
        }"#;
        let (g, _) = ingest_graph(src, &toy_ontology()).unwrap();
        let lin = linearize(&add_boundary_nodes(g)).unwrap();
        let pos = |id: &str| lin.order().iter().position(|x| x == id).unwrap();
        assert!(pos("assemble") > pos("buy-a"));
        assert!(pos("assemble") > pos("buy-b"));
    }

    #[test]
    fn prefix_subgraph_grows_monotonically() {
        let src = r#"{
            "graph_id": "g8",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Arrest"}],
            "entities": [{"id": "v1", "type": "Person"}, {"id": "v2", "type": "Place"}],
            "arguments": [
                {"event": "e1", "role": "Attacker", "entity": "v1"},
                {"event": "e1", "role": "Place", "entity": "v2"},
                {"event": "e2", "role": "Detainee", "entity": "v1"}
            ],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        let (g, _) = ingest_graph(src, &toy_ontology()).unwrap();
        let lin = linearize(&add_boundary_nodes(g)).unwrap();
        let p1 = lin.prefix_subgraph(1).unwrap();
        assert_eq!(p1.events.len(), 1);
        assert_eq!(p1.events[0].id, SOG_LABEL);
        assert!(p1.entities.is_empty());

        let p2 = lin.prefix_subgraph(2).unwrap();
        assert_eq!(p2.entities.len(), 2);
        assert_eq!(p2.argument_edges.len(), 2);

        let full = lin.prefix_subgraph(lin.len()).unwrap();
        assert_eq!(full, *lin.graph());

        for i in 0..lin.len() {
            let a = lin.prefix_subgraph(i).unwrap();
            let b = lin.prefix_subgraph(i + 1).unwrap();
            assert!(a.events.len() <= b.events.len());
            for e in &a.events {
                assert!(b.event(&e.id).is_some());
            }
        }
        assert!(lin.prefix_subgraph(lin.len() + 1).is_err());
    }

    #[test]
    fn ingest_round_trip_is_stable() {
        let src = r#"{
            "graph_id": "g9",
            "complex_event_type": "test",
            "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Arrest"}],
            "entities": [{"id": "v1", "type": "Person"}],
            "arguments": [
                {"event": "e1", "role": "Attacker", "entity": "v1"},
                {"event": "e2", "role": "Detainee", "entity": "v1"}
            ],
            "relations": [],
            "temporal": [{"before": "e1", "after": "e2"}]
        }"#;
        let ont = toy_ontology();
        let (g, _) = ingest_graph(src, &ont).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let (g2, warnings) = ingest_graph(&json, &ont).unwrap();
        assert_eq!(g, g2);
        assert!(warnings.is_empty());
    }
}
