//! Sequential-pattern-mining baseline: random-walk sequence extraction,
//! prefix-projected frequent-subsequence mining, a chain-shaped schema
//! with modal argument attachment, and suffix-support event prediction.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::decode::derive_seed;
use crate::error::{Error, Result};
use crate::graph::{
    add_boundary_nodes, strip_boundary_nodes, ArgumentEdge, EntityNode, EventNode, InstanceGraph,
    RelationEdge, SchemaGraph, TemporalEdge,
};
use crate::ontology::Ontology;
use crate::parallel::par_map;

/// Event-type sequences with their source graph ids.
#[derive(Debug, Clone, Default)]
pub struct SequenceDB {
    pub sequences: Vec<Vec<String>>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub pattern: Vec<String>,
    pub support: usize,
}

/// Uniform random walks along temporal edges, `walks_per_node` from every
/// event node, each ending at a sink. Deterministic per (seed, graph
/// index).
pub fn extract_sequences(graphs: &[InstanceGraph], seed: u64, walks_per_node: usize) -> SequenceDB {
    let indexed: Vec<(usize, &InstanceGraph)> = graphs.iter().enumerate().collect();
    let per_graph = par_map(&indexed, |(i, g)| walk_graph(g, derive_seed(seed, *i as u64), walks_per_node));
    let mut db = SequenceDB::default();
    for (g, walks) in graphs.iter().zip(per_graph) {
        for w in walks {
            db.sequences.push(w);
            db.sources.push(g.graph_id.clone());
        }
    }
    db
}

fn walk_graph(graph: &InstanceGraph, seed: u64, walks_per_node: usize) -> Vec<Vec<String>> {
    let g = strip_boundary_nodes(graph.clone());
    let ty: HashMap<&str, &str> = g.events.iter().map(|e| (e.id.as_str(), e.ty.as_str())).collect();
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &g.temporal_edges {
        adj.entry(t.before.as_str()).or_default().push(t.after.as_str());
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut walks = Vec::new();
    for start in &g.events {
        for _ in 0..walks_per_node {
            let mut cur = start.id.as_str();
            let mut walk = vec![ty[cur].to_string()];
            while let Some(succs) = adj.get(cur) {
                if succs.is_empty() {
                    break;
                }
                cur = succs[rng.gen_range(0..succs.len())];
                walk.push(ty[cur].to_string());
            }
            walks.push(walk);
        }
    }
    walks
}

/// Prefix-projected mining of every subsequence pattern with support at
/// least `min_support` (support = number of DB sequences containing the
/// pattern as a subsequence). Ranked by support desc, length desc, then
/// lexicographic order.
pub fn mine_patterns(db: &SequenceDB, min_support: usize) -> Result<Vec<Pattern>> {
    if min_support == 0 {
        return Err(Error::Validation("min_support must be at least 1".into()));
    }
    // Intern types for cheap projection.
    let mut names: Vec<String> = Vec::new();
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let seqs: Vec<Vec<usize>> = db
        .sequences
        .iter()
        .map(|s| {
            s.iter()
                .map(|t| {
                    *ids.entry(t.as_str()).or_insert_with(|| {
                        names.push(t.clone());
                        names.len() - 1
                    })
                })
                .collect()
        })
        .collect();

    // A projection is (sequence index, next unmatched position).
    let whole: Vec<(usize, usize)> = (0..seqs.len()).map(|i| (i, 0)).collect();
    let mut out: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut prefix: Vec<usize> = Vec::new();
    grow(&seqs, names.len(), &whole, min_support, &mut prefix, &mut out);

    let mut patterns: Vec<Pattern> = out
        .into_iter()
        .map(|(p, support)| Pattern {
            pattern: p.into_iter().map(|i| names[i].clone()).collect(),
            support,
        })
        .collect();
    patterns.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(b.pattern.len().cmp(&a.pattern.len()))
            .then(a.pattern.cmp(&b.pattern))
    });
    Ok(patterns)
}

fn grow(
    seqs: &[Vec<usize>],
    n_items: usize,
    projection: &[(usize, usize)],
    min_support: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<(Vec<usize>, usize)>,
) {
    // First occurrence of each item at or after the projected position,
    // per projected sequence.
    let mut first_pos: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_items];
    for &(si, from) in projection {
        let mut seen: HashSet<usize> = HashSet::new();
        for (pos, &item) in seqs[si].iter().enumerate().skip(from) {
            if seen.insert(item) {
                first_pos[item].push((si, pos + 1));
            }
        }
    }
    for item in 0..n_items {
        let support = first_pos[item].len();
        if support < min_support {
            continue;
        }
        prefix.push(item);
        out.push((prefix.clone(), support));
        grow(seqs, n_items, &first_pos[item], min_support, prefix, out);
        prefix.pop();
    }
}

/// Support of one pattern by direct subsequence counting. The reference
/// oracle for the miner.
pub fn brute_force_support(db: &SequenceDB, pattern: &[String]) -> usize {
    db.sequences
        .iter()
        .filter(|s| is_subsequence(pattern, s))
        .count()
}

pub fn is_subsequence(pattern: &[String], seq: &[String]) -> bool {
    let mut it = seq.iter();
    pattern.iter().all(|p| it.any(|s| s == p))
}

/// Chain schema from the top-ranked pattern with modal argument and
/// relation attachment observed in `attach` graphs.
pub fn baseline_schema(
    patterns: &[Pattern],
    attach: &[InstanceGraph],
    ontology: &Ontology,
) -> Result<SchemaGraph> {
    let top = patterns
        .first()
        .ok_or_else(|| Error::Validation("no mined patterns to build a schema from".into()))?;

    let mut events = Vec::new();
    let mut temporal_edges = Vec::new();
    for (i, ty) in top.pattern.iter().enumerate() {
        events.push(EventNode {
            id: format!("e{i}"),
            ty: ty.clone(),
        });
        if i > 0 {
            temporal_edges.push(TemporalEdge {
                before: format!("e{}", i - 1),
                after: format!("e{i}"),
            });
        }
    }

    // Modal entity type per (event type, role) across the corpus.
    let mut role_type_counts: HashMap<(String, String), HashMap<String, usize>> = HashMap::new();
    for g in attach {
        let ent_ty: HashMap<&str, &str> = g.entities.iter().map(|v| (v.id.as_str(), v.ty.as_str())).collect();
        let ev_ty: HashMap<&str, &str> = g.events.iter().map(|e| (e.id.as_str(), e.ty.as_str())).collect();
        for a in &g.argument_edges {
            let key = (ev_ty[a.event.as_str()].to_string(), a.role.clone());
            *role_type_counts
                .entry(key)
                .or_default()
                .entry(ent_ty[a.entity.as_str()].to_string())
                .or_insert(0) += 1;
        }
    }
    let mut entities = Vec::new();
    let mut argument_edges = Vec::new();
    let mut slot_entity: HashMap<(usize, String), String> = HashMap::new();
    for (i, ty) in top.pattern.iter().enumerate() {
        let Some(ev_idx) = ontology.event_type_index(ty) else {
            continue;
        };
        for &role_g in ontology.role_indices_of(ev_idx) {
            let role = &ontology.role(role_g).role;
            let Some(counts) = role_type_counts.get(&(ty.clone(), role.clone())) else {
                continue;
            };
            let modal = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| t.clone())
                .expect("non-empty counts");
            let id = format!("v{}", entities.len());
            entities.push(EntityNode {
                id: id.clone(),
                ty: modal,
            });
            argument_edges.push(ArgumentEdge {
                event: format!("e{i}"),
                role: role.clone(),
                entity: id.clone(),
            });
            slot_entity.insert((i, role.clone()), id);
        }
    }

    // Modal connection between temporally adjacent event-type pairs:
    // either a shared argument (merge slots) or a relation edge.
    #[derive(PartialEq, Eq, Hash, Clone)]
    enum Conn {
        Shared(String, String),
        Related(String, String, String),
    }
    let mut conn_counts: HashMap<(String, String), HashMap<Conn, usize>> = HashMap::new();
    for g in attach {
        let ev_ty: HashMap<&str, &str> = g.events.iter().map(|e| (e.id.as_str(), e.ty.as_str())).collect();
        let args_of: HashMap<&str, Vec<(&str, &str)>> = {
            let mut m: HashMap<&str, Vec<(&str, &str)>> = HashMap::new();
            for a in &g.argument_edges {
                m.entry(a.event.as_str())
                    .or_default()
                    .push((a.role.as_str(), a.entity.as_str()));
            }
            m
        };
        let rel: HashMap<(&str, &str), &str> = g
            .relation_edges
            .iter()
            .map(|r| ((r.head.as_str(), r.tail.as_str()), r.ty.as_str()))
            .collect();
        for t in &g.temporal_edges {
            let (Some(&ta), Some(&tb)) = (ev_ty.get(t.before.as_str()), ev_ty.get(t.after.as_str()))
            else {
                continue;
            };
            let pair_key = (ta.to_string(), tb.to_string());
            let empty = Vec::new();
            let aa = args_of.get(t.before.as_str()).unwrap_or(&empty);
            let bb = args_of.get(t.after.as_str()).unwrap_or(&empty);
            for (ra, va) in aa {
                for (rb, vb) in bb {
                    let conn = if va == vb {
                        Some(Conn::Shared(ra.to_string(), rb.to_string()))
                    } else {
                        let key = if va <= vb { (*va, *vb) } else { (*vb, *va) };
                        rel.get(&key)
                            .map(|r| Conn::Related(ra.to_string(), rb.to_string(), r.to_string()))
                    };
                    if let Some(c) = conn {
                        *conn_counts.entry(pair_key.clone()).or_default().entry(c).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    let mut relation_edges: Vec<RelationEdge> = Vec::new();
    let mut merges: Vec<(String, String)> = Vec::new(); // (kept, removed)
    for i in 1..top.pattern.len() {
        let pair_key = (top.pattern[i - 1].clone(), top.pattern[i].clone());
        let Some(counts) = conn_counts.get(&pair_key) else {
            continue;
        };
        let modal = counts.iter().max_by_key(|(_, n)| **n).map(|(c, _)| c.clone());
        match modal {
            Some(Conn::Shared(ra, rb)) => {
                if let (Some(keep), Some(drop)) = (
                    slot_entity.get(&(i - 1, ra.clone())).cloned(),
                    slot_entity.get(&(i, rb.clone())).cloned(),
                ) {
                    if keep != drop {
                        merges.push((keep, drop));
                    }
                }
            }
            Some(Conn::Related(ra, rb, r)) => {
                if let (Some(a), Some(b)) = (
                    slot_entity.get(&(i - 1, ra.clone())).cloned(),
                    slot_entity.get(&(i, rb.clone())).cloned(),
                ) {
                    let (head, tail) = if a <= b { (a, b) } else { (b, a) };
                    relation_edges.push(RelationEdge { head, ty: r, tail });
                }
            }
            None => {}
        }
    }
    for (keep, drop) in merges {
        for a in &mut argument_edges {
            if a.entity == drop {
                a.entity = keep.clone();
            }
        }
        for r in &mut relation_edges {
            if r.head == drop {
                r.head = keep.clone();
            }
            if r.tail == drop {
                r.tail = keep.clone();
            }
        }
        entities.retain(|v| v.id != drop);
    }
    for r in &mut relation_edges {
        if r.head > r.tail {
            let (h, t) = (r.head.clone(), r.tail.clone());
            r.head = t;
            r.tail = h;
        }
    }
    relation_edges.retain(|r| r.head != r.tail);
    relation_edges.sort_by(|a, b| (&a.head, &a.ty, &a.tail).cmp(&(&b.head, &b.ty, &b.tail)));
    relation_edges.dedup();

    let graph = add_boundary_nodes(InstanceGraph {
        graph_id: "schema-miner".into(),
        complex_event_type: "mined".into(),
        events,
        entities,
        argument_edges,
        relation_edges,
        temporal_edges,
    });
    Ok(SchemaGraph {
        graph,
        probabilities: Vec::new(),
    })
}

/// Ranked next-event types plus a flag marking the uniform fallback (no
/// suffix matched any mined pattern).
pub struct BaselinePrediction {
    pub ranking: Vec<String>,
    pub fallback: bool,
}

/// Score candidate next types by the support of (suffix + candidate)
/// patterns, averaged over the graph's root-to-sink type sequences.
pub fn baseline_predict(
    patterns: &[Pattern],
    graph: &InstanceGraph,
    ontology: &Ontology,
    seed: u64,
    max_paths: usize,
) -> Result<BaselinePrediction> {
    graph.validate(ontology)?;
    let sequences = root_to_sink_sequences(graph, seed, max_paths);
    if sequences.is_empty() {
        return Err(Error::Validation(format!(
            "graph {} has no events to predict from",
            graph.graph_id
        )));
    }
    let support: HashMap<&[String], usize> =
        patterns.iter().map(|p| (p.pattern.as_slice(), p.support)).collect();
    let n_types = ontology.num_event_types();
    let mut scores = vec![0.0f64; n_types];
    for seq in &sequences {
        let window = seq.len().min(3);
        let suffix = &seq[seq.len() - window..];
        for (c, score) in scores.iter_mut().enumerate() {
            let mut probe: Vec<String> = suffix.to_vec();
            probe.push(ontology.event_type_name(c).to_string());
            if let Some(s) = support.get(probe.as_slice()) {
                *score += *s as f64;
            }
        }
    }
    for s in &mut scores {
        *s /= sequences.len() as f64;
    }
    let fallback = scores.iter().all(|s| *s == 0.0);
    Ok(BaselinePrediction {
        ranking: crate::eval::rank_types(&scores, ontology),
        fallback,
    })
}

/// All root-to-sink event-type paths, enumerated exactly when their count
/// fits in `max_paths`, otherwise approximated by that many seeded random
/// walks from the roots.
fn root_to_sink_sequences(graph: &InstanceGraph, seed: u64, max_paths: usize) -> Vec<Vec<String>> {
    let g = strip_boundary_nodes(graph.clone());
    if g.events.is_empty() {
        return Vec::new();
    }
    let ty: HashMap<&str, &str> = g.events.iter().map(|e| (e.id.as_str(), e.ty.as_str())).collect();
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut has_in: HashSet<&str> = HashSet::new();
    for t in &g.temporal_edges {
        adj.entry(t.before.as_str()).or_default().push(t.after.as_str());
        has_in.insert(t.after.as_str());
    }
    let roots: Vec<&str> = g
        .events
        .iter()
        .map(|e| e.id.as_str())
        .filter(|id| !has_in.contains(id))
        .collect();

    // Path counting with saturation; exponential DAGs fall back to walks.
    fn count_paths<'a>(
        node: &'a str,
        adj: &HashMap<&'a str, Vec<&'a str>>,
        memo: &mut HashMap<&'a str, usize>,
        cap: usize,
    ) -> usize {
        if let Some(&c) = memo.get(node) {
            return c;
        }
        let succs = adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
        let c = if succs.is_empty() {
            1
        } else {
            succs
                .iter()
                .map(|s| count_paths(s, adj, memo, cap))
                .fold(0usize, |a, b| a.saturating_add(b))
                .min(cap + 1)
        };
        memo.insert(node, c);
        c
    }
    let mut memo = HashMap::new();
    let total: usize = roots
        .iter()
        .map(|r| count_paths(r, &adj, &mut memo, max_paths))
        .fold(0usize, |a, b| a.saturating_add(b));

    let mut out = Vec::new();
    if total <= max_paths {
        fn enumerate<'a>(
            node: &'a str,
            adj: &HashMap<&'a str, Vec<&'a str>>,
            ty: &HashMap<&'a str, &'a str>,
            path: &mut Vec<&'a str>,
            out: &mut Vec<Vec<String>>,
        ) {
            path.push(node);
            let succs = adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
            if succs.is_empty() {
                out.push(path.iter().map(|n| ty[n].to_string()).collect());
            } else {
                for &s in succs {
                    enumerate(s, adj, ty, path, out);
                }
            }
            path.pop();
        }
        let mut path = Vec::new();
        for r in &roots {
            enumerate(r, &adj, &ty, &mut path, &mut out);
        }
    } else {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        for _ in 0..max_paths {
            let mut cur = roots[rng.gen_range(0..roots.len())];
            let mut walk = vec![ty[cur].to_string()];
            while let Some(succs) = adj.get(cur) {
                if succs.is_empty() {
                    break;
                }
                cur = succs[rng.gen_range(0..succs.len())];
                walk.push(ty[cur].to_string());
            }
            out.push(walk);
        }
    }
    out
}

pub fn write_patterns(patterns: &[Pattern], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in patterns {
        out.push_str(&serde_json::to_string(p).expect("pattern serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_patterns(path: &Path) -> Result<Vec<Pattern>> {
    let source = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Pattern = serde_json::from_str(line)
            .map_err(|e| Error::parse(Some(path), Some(i), e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}
