//! Planted-schema synthetic corpora: instantiate a template graph with
//! branch sampling, configurable coreference, and structured noise, so
//! end-to-end behavior can be verified against known ground truth.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::decode::derive_seed;
use crate::error::{Error, Result};
use crate::graph::{ArgumentEdge, EntityNode, EventNode, InstanceGraph, RelationEdge, TemporalEdge};
use crate::ontology::{byte_offset, Ontology};
use crate::parallel::par_map;

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Probability of dropping each instantiated event.
    #[serde(default)]
    pub event_drop: f64,
    /// Probability, per retained event, of appending a spurious follower
    /// of a random type.
    #[serde(default)]
    pub spurious_event: f64,
    /// Probability of dropping each temporal edge.
    #[serde(default)]
    pub edge_drop: f64,
}

/// A schema template plus instantiation probabilities. Branch inclusion is
/// sampled per event id; events disconnected by an exclusion vanish with
/// their branch. Coreference probability is keyed by template entity id:
/// later argument slots either reuse the instance entity or fork a fresh
/// one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedSchema {
    #[serde(flatten)]
    pub template: InstanceGraph,
    #[serde(default)]
    pub branch_probs: HashMap<String, f64>,
    #[serde(default)]
    pub coref_probs: HashMap<String, f64>,
    #[serde(default)]
    pub noise: NoiseParams,
}

/// Ground-truth alignment for one generated graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Alignment {
    pub graph_id: String,
    /// instance event id → template event id
    pub events: HashMap<String, String>,
    /// instance entity id → template entity id
    pub entities: HashMap<String, String>,
    pub spurious_events: Vec<String>,
}

impl PlantedSchema {
    pub fn load_path(path: &Path) -> Result<PlantedSchema> {
        let source = std::fs::read_to_string(path)?;
        let mut schema: PlantedSchema = serde_json::from_str(&source)
            .map_err(|e| Error::parse(Some(path), byte_offset(&source, &e), e.to_string()))?;
        for r in &mut schema.template.relation_edges {
            if r.head > r.tail {
                std::mem::swap(&mut r.head, &mut r.tail);
            }
        }
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<()> {
        for (k, p) in self.branch_probs.iter().chain(self.coref_probs.iter()) {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Validation(format!("probability for {k} outside [0,1]")));
            }
        }
        for p in [self.noise.event_drop, self.noise.spurious_event, self.noise.edge_drop] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation("noise rate outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Instantiate `n` graphs. Deterministic per (seed, index); graphs are
/// independent, so instantiation runs in parallel.
pub fn generate_corpus(
    schema: &PlantedSchema,
    ontology: &Ontology,
    n: usize,
    seed: u64,
) -> Result<(Vec<InstanceGraph>, Vec<Alignment>)> {
    if n == 0 {
        return Err(Error::Validation("corpus size must be at least 1".into()));
    }
    schema.check()?;
    schema.template.validate(ontology)?;
    let indices: Vec<u64> = (0..n as u64).collect();
    let results = par_map(&indices, |&i| instantiate(schema, ontology, seed, i));
    let mut graphs = Vec::with_capacity(n);
    let mut alignments = Vec::with_capacity(n);
    for r in results {
        let (g, a) = r?;
        graphs.push(g);
        alignments.push(a);
    }
    Ok((graphs, alignments))
}

fn instantiate(
    schema: &PlantedSchema,
    ontology: &Ontology,
    seed: u64,
    index: u64,
) -> Result<(InstanceGraph, Alignment)> {
    for attempt in 0..10 {
        let graph_seed = derive_seed(derive_seed(seed, index), attempt);
        let mut rng = rand::rngs::StdRng::seed_from_u64(graph_seed);
        if let Some(out) = try_instantiate(schema, ontology, &mut rng, index)? {
            return Ok(out);
        }
    }
    Err(Error::Validation(format!(
        "noise settings emptied graph {index} ten times in a row"
    )))
}

fn try_instantiate(
    schema: &PlantedSchema,
    ontology: &Ontology,
    rng: &mut impl Rng,
    index: u64,
) -> Result<Option<(InstanceGraph, Alignment)>> {
    let t = &schema.template;
    let graph_id = format!("{}-{index:04}", t.graph_id);

    // Branch inclusion draws come first, in template event order, so the
    // sampling is reproducible from the derived seed alone.
    let mut included: HashSet<&str> = HashSet::new();
    for e in &t.events {
        let p = schema.branch_probs.get(&e.id).copied().unwrap_or(1.0);
        if p >= 1.0 || rng.gen::<f64>() < p {
            included.insert(e.id.as_str());
        }
    }
    // Noise: drop events.
    if schema.noise.event_drop > 0.0 {
        for e in &t.events {
            if included.contains(e.id.as_str()) && rng.gen::<f64>() < schema.noise.event_drop {
                included.remove(e.id.as_str());
            }
        }
    }

    // Keep only edges among included events, then prune events that lost
    // every temporal connection (their branch disappeared).
    let mut kept_edges: Vec<(&str, &str)> = t
        .temporal_edges
        .iter()
        .filter(|e| included.contains(e.before.as_str()) && included.contains(e.after.as_str()))
        .map(|e| (e.before.as_str(), e.after.as_str()))
        .collect();
    if schema.noise.edge_drop > 0.0 {
        kept_edges.retain(|_| rng.gen::<f64>() >= schema.noise.edge_drop);
    }
    if t.events.len() > 1 {
        loop {
            let connected: HashSet<&str> = kept_edges
                .iter()
                .flat_map(|&(b, a)| [b, a])
                .collect();
            let before = included.len();
            included.retain(|id| connected.contains(id));
            if included.len() == before {
                break;
            }
            kept_edges.retain(|&(b, a)| included.contains(b) && included.contains(a));
        }
    }
    if included.is_empty() {
        return Ok(None);
    }

    let mut events = Vec::new();
    let mut event_ids: HashMap<&str, String> = HashMap::new();
    let mut align_events = HashMap::new();
    for (j, e) in t.events.iter().enumerate() {
        if !included.contains(e.id.as_str()) {
            continue;
        }
        let id = format!("{}#{j}", e.ty);
        event_ids.insert(e.id.as_str(), id.clone());
        align_events.insert(id.clone(), e.id.clone());
        events.push(EventNode { id, ty: e.ty.clone() });
    }

    // Arguments: first slot of a template entity instantiates it; later
    // slots reuse it with the configured coreference probability.
    let template_entity: HashMap<&str, &EntityNode> =
        t.entities.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut entities: Vec<EntityNode> = Vec::new();
    let mut primary: HashMap<&str, String> = HashMap::new();
    let mut align_entities = HashMap::new();
    let mut argument_edges = Vec::new();
    let mut fresh_entity = |tid: &str,
                            entities: &mut Vec<EntityNode>,
                            align_entities: &mut HashMap<String, String>|
     -> String {
        let ty = &template_entity[tid].ty;
        let id = format!("{}#{}", ty, entities.len());
        entities.push(EntityNode { id: id.clone(), ty: ty.clone() });
        align_entities.insert(id.clone(), tid.to_string());
        id
    };
    for a in &t.argument_edges {
        if !included.contains(a.event.as_str()) {
            continue;
        }
        let tid = a.entity.as_str();
        let instance = match primary.get(tid) {
            None => {
                let id = fresh_entity(tid, &mut entities, &mut align_entities);
                primary.insert(tid, id.clone());
                id
            }
            Some(existing) => {
                let coref = schema.coref_probs.get(tid).copied().unwrap_or(1.0);
                if coref >= 1.0 || rng.gen::<f64>() < coref {
                    existing.clone()
                } else {
                    fresh_entity(tid, &mut entities, &mut align_entities)
                }
            }
        };
        argument_edges.push(ArgumentEdge {
            event: event_ids[a.event.as_str()].clone(),
            role: a.role.clone(),
            entity: instance,
        });
    }

    // Relations attach to the primary instance of each endpoint.
    let mut relation_edges = Vec::new();
    for r in &t.relation_edges {
        if let (Some(h), Some(tl)) = (primary.get(r.head.as_str()), primary.get(r.tail.as_str())) {
            let (head, tail) = if h <= tl {
                (h.clone(), tl.clone())
            } else {
                (tl.clone(), h.clone())
            };
            relation_edges.push(RelationEdge {
                head,
                ty: r.ty.clone(),
                tail,
            });
        }
    }

    let mut temporal_edges: Vec<TemporalEdge> = kept_edges
        .iter()
        .map(|&(b, a)| TemporalEdge {
            before: event_ids[b].clone(),
            after: event_ids[a].clone(),
        })
        .collect();

    // Noise: spurious follower events.
    let mut spurious_events = Vec::new();
    if schema.noise.spurious_event > 0.0 {
        let host_ids: Vec<String> = events.iter().map(|e| e.id.clone()).collect();
        for host in host_ids {
            if rng.gen::<f64>() < schema.noise.spurious_event {
                let ty = ontology
                    .event_types()[rng.gen_range(0..ontology.num_event_types())]
                    .clone();
                let id = format!("{}#x{}", ty, events.len());
                events.push(EventNode { id: id.clone(), ty });
                temporal_edges.push(TemporalEdge {
                    before: host.clone(),
                    after: id.clone(),
                });
                spurious_events.push(id);
            }
        }
    }

    // Entities orphaned by event drops are already excluded (arguments are
    // only instantiated for included events). Assemble and validate.
    let graph = InstanceGraph {
        graph_id: graph_id.clone(),
        complex_event_type: t.complex_event_type.clone(),
        events,
        entities,
        argument_edges,
        relation_edges,
        temporal_edges,
    };
    graph.validate(ontology)?;
    let alignment = Alignment {
        graph_id,
        events: align_events,
        entities: align_entities,
        spurious_events,
    };
    Ok(Some((graph, alignment)))
}

pub fn write_alignments(alignments: &[Alignment], path: &Path) -> Result<()> {
    let mut out = String::new();
    for a in alignments {
        out.push_str(&serde_json::to_string(a).expect("alignment serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Ontology for the built-in templates: a car-bombing-style domain.
pub fn ied_ontology_source() -> &'static str {
    r#"{
    "event_types": [
        "LearnMake", "BuyMaterials", "BuyVehicle", "Assemble",
        "DriveVehicle", "Attack", "Die", "Injure", "Crash"
    ],
    "entity_types": ["Person", "Materials", "Vehicle", "Bomb", "Place"],
    "relation_types": ["PartWhole", "Near"],
    "roles": [
        {"event": "LearnMake", "role": "Learner", "allowed_entity_types": ["Person"]},
        {"event": "BuyMaterials", "role": "Buyer", "allowed_entity_types": ["Person"]},
        {"event": "BuyMaterials", "role": "Goods", "allowed_entity_types": ["Materials"]},
        {"event": "BuyVehicle", "role": "Buyer", "allowed_entity_types": ["Person"]},
        {"event": "BuyVehicle", "role": "Goods", "allowed_entity_types": ["Vehicle"]},
        {"event": "Assemble", "role": "Assembler", "allowed_entity_types": ["Person"]},
        {"event": "Assemble", "role": "Components", "allowed_entity_types": ["Materials", "Bomb", "Vehicle"]},
        {"event": "Assemble", "role": "Place", "allowed_entity_types": ["Place"]},
        {"event": "DriveVehicle", "role": "Driver", "allowed_entity_types": ["Person"]},
        {"event": "DriveVehicle", "role": "Vehicle", "allowed_entity_types": ["Vehicle"]},
        {"event": "Attack", "role": "Attacker", "allowed_entity_types": ["Person"]},
        {"event": "Attack", "role": "Instrument", "allowed_entity_types": ["Bomb", "Vehicle"]},
        {"event": "Attack", "role": "Place", "allowed_entity_types": ["Place"]},
        {"event": "Die", "role": "Victim", "allowed_entity_types": ["Person"]},
        {"event": "Die", "role": "Place", "allowed_entity_types": ["Place"]},
        {"event": "Injure", "role": "Victim", "allowed_entity_types": ["Person"]},
        {"event": "Crash", "role": "Vehicle", "allowed_entity_types": ["Vehicle"]},
        {"event": "Crash", "role": "Place", "allowed_entity_types": ["Place"]}
    ]
}"#
}

fn template_graph(source: &str) -> PlantedSchema {
    serde_json::from_str(source).expect("built-in template parses")
}

/// Built-in car-bombing-style template: a learner buys materials and a
/// vehicle, assembles, drives, attacks, with branching consequences. The
/// attacker is shared across events and the two places are PartWhole
/// related. All branches are deterministic by default.
pub fn ied_template() -> PlantedSchema {
    template_graph(
        r#"{
        "graph_id": "ied",
        "complex_event_type": "car-bombing",
        "events": [
            {"id": "learn", "type": "LearnMake"},
            {"id": "buymat", "type": "BuyMaterials"},
            {"id": "buyveh", "type": "BuyVehicle"},
            {"id": "assemble", "type": "Assemble"},
            {"id": "drive", "type": "DriveVehicle"},
            {"id": "attack", "type": "Attack"},
            {"id": "die", "type": "Die"},
            {"id": "injure", "type": "Injure"},
            {"id": "crash", "type": "Crash"}
        ],
        "entities": [
            {"id": "attacker", "type": "Person"},
            {"id": "materials", "type": "Materials"},
            {"id": "vehicle", "type": "Vehicle"},
            {"id": "site", "type": "Place"},
            {"id": "city", "type": "Place"},
            {"id": "victim", "type": "Person"}
        ],
        "arguments": [
            {"event": "learn", "role": "Learner", "entity": "attacker"},
            {"event": "buymat", "role": "Buyer", "entity": "attacker"},
            {"event": "buymat", "role": "Goods", "entity": "materials"},
            {"event": "buyveh", "role": "Buyer", "entity": "attacker"},
            {"event": "buyveh", "role": "Goods", "entity": "vehicle"},
            {"event": "assemble", "role": "Assembler", "entity": "attacker"},
            {"event": "assemble", "role": "Components", "entity": "materials"},
            {"event": "assemble", "role": "Place", "entity": "site"},
            {"event": "drive", "role": "Driver", "entity": "attacker"},
            {"event": "drive", "role": "Vehicle", "entity": "vehicle"},
            {"event": "attack", "role": "Attacker", "entity": "attacker"},
            {"event": "attack", "role": "Instrument", "entity": "vehicle"},
            {"event": "attack", "role": "Place", "entity": "city"},
            {"event": "die", "role": "Victim", "entity": "victim"},
            {"event": "die", "role": "Place", "entity": "city"},
            {"event": "injure", "role": "Victim", "entity": "victim"},
            {"event": "crash", "role": "Vehicle", "entity": "vehicle"},
            {"event": "crash", "role": "Place", "entity": "city"}
        ],
        "relations": [
            {"head": "city", "type": "PartWhole", "tail": "site"}
        ],
        "temporal": [
            {"before": "learn", "after": "buymat"},
            {"before": "learn", "after": "buyveh"},
            {"before": "buymat", "after": "assemble"},
            {"before": "buyveh", "after": "assemble"},
            {"before": "assemble", "after": "drive"},
            {"before": "drive", "after": "attack"},
            {"before": "attack", "after": "die"},
            {"before": "attack", "after": "injure"},
            {"before": "attack", "after": "crash"}
        ],
        "branch_probs": {},
        "coref_probs": {},
        "noise": {"event_drop": 0.0, "spurious_event": 0.0, "edge_drop": 0.0}
    }"#,
    )
}

/// Variant pair whose ending type is predictable only from the attack's
/// instrument argument: a bomb attack ends in deaths, a vehicle attack in
/// a crash. Event-type sequences are identical across the two variants,
/// so sequence-only models cannot separate them.
pub fn ied_variant_templates() -> (PlantedSchema, PlantedSchema) {
    let bomb = template_graph(
        r#"{
        "graph_id": "ied-bomb",
        "complex_event_type": "car-bombing",
        "events": [
            {"id": "learn", "type": "LearnMake"},
            {"id": "buymat", "type": "BuyMaterials"},
            {"id": "assemble", "type": "Assemble"},
            {"id": "drive", "type": "DriveVehicle"},
            {"id": "attack", "type": "Attack"},
            {"id": "die", "type": "Die"}
        ],
        "entities": [
            {"id": "attacker", "type": "Person"},
            {"id": "bomb", "type": "Bomb"},
            {"id": "vehicle", "type": "Vehicle"},
            {"id": "city", "type": "Place"},
            {"id": "victim", "type": "Person"}
        ],
        "arguments": [
            {"event": "learn", "role": "Learner", "entity": "attacker"},
            {"event": "buymat", "role": "Buyer", "entity": "attacker"},
            {"event": "assemble", "role": "Assembler", "entity": "attacker"},
            {"event": "assemble", "role": "Components", "entity": "bomb"},
            {"event": "drive", "role": "Driver", "entity": "attacker"},
            {"event": "drive", "role": "Vehicle", "entity": "vehicle"},
            {"event": "attack", "role": "Attacker", "entity": "attacker"},
            {"event": "attack", "role": "Instrument", "entity": "bomb"},
            {"event": "attack", "role": "Place", "entity": "city"},
            {"event": "die", "role": "Victim", "entity": "victim"},
            {"event": "die", "role": "Place", "entity": "city"}
        ],
        "relations": [],
        "temporal": [
            {"before": "learn", "after": "buymat"},
            {"before": "buymat", "after": "assemble"},
            {"before": "assemble", "after": "drive"},
            {"before": "drive", "after": "attack"},
            {"before": "attack", "after": "die"}
        ],
        "branch_probs": {},
        "coref_probs": {},
        "noise": {"event_drop": 0.0, "spurious_event": 0.0, "edge_drop": 0.0}
    }"#,
    );
    let vehicle = template_graph(
        r#"{
        "graph_id": "ied-vehicle",
        "complex_event_type": "car-ramming",
        "events": [
            {"id": "learn", "type": "LearnMake"},
            {"id": "buymat", "type": "BuyMaterials"},
            {"id": "assemble", "type": "Assemble"},
            {"id": "drive", "type": "DriveVehicle"},
            {"id": "attack", "type": "Attack"},
            {"id": "crash", "type": "Crash"}
        ],
        "entities": [
            {"id": "attacker", "type": "Person"},
            {"id": "vehicle", "type": "Vehicle"},
            {"id": "city", "type": "Place"}
        ],
        "arguments": [
            {"event": "learn", "role": "Learner", "entity": "attacker"},
            {"event": "buymat", "role": "Buyer", "entity": "attacker"},
            {"event": "assemble", "role": "Assembler", "entity": "attacker"},
            {"event": "assemble", "role": "Components", "entity": "vehicle"},
            {"event": "drive", "role": "Driver", "entity": "attacker"},
            {"event": "drive", "role": "Vehicle", "entity": "vehicle"},
            {"event": "attack", "role": "Attacker", "entity": "attacker"},
            {"event": "attack", "role": "Instrument", "entity": "vehicle"},
            {"event": "attack", "role": "Place", "entity": "city"},
            {"event": "crash", "role": "Vehicle", "entity": "vehicle"},
            {"event": "crash", "role": "Place", "entity": "city"}
        ],
        "relations": [],
        "temporal": [
            {"before": "learn", "after": "buymat"},
            {"before": "buymat", "after": "assemble"},
            {"before": "assemble", "after": "drive"},
            {"before": "drive", "after": "attack"},
            {"before": "attack", "after": "crash"}
        ],
        "branch_probs": {},
        "coref_probs": {},
        "noise": {"event_drop": 0.0, "spurious_event": 0.0, "edge_drop": 0.0}
    }"#,
    );
    (bomb, vehicle)
}

/// Look up a built-in template by name.
pub fn builtin_template(name: &str) -> Option<PlantedSchema> {
    match name {
        "ied" => Some(ied_template()),
        "ied-bomb" => Some(ied_variant_templates().0),
        "ied-vehicle" => Some(ied_variant_templates().1),
        _ => None,
    }
}
