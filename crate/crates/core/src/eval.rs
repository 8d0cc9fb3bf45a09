//! Intrinsic metrics (instance-graph perplexity, schema matching) and the
//! extrinsic schema-guided ending-event prediction task.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{strip_boundary_nodes, InstanceGraph};
use crate::model::{graph_log_likelihood, next_event_probabilities, FactorMode, ModelParams};
use crate::ontology::Ontology;
use crate::parallel::par_map;

/// Precision / recall / F1 triple. F1 of two empty sets is 1 by
/// convention; exactly one empty side gives 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: f64, pred: f64, gold: f64) -> Prf {
        if pred == 0.0 && gold == 0.0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        if pred == 0.0 || gold == 0.0 {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
        }
        let p = overlap / pred;
        let r = overlap / gold;
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf {
            precision: p,
            recall: r,
            f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionReport {
    /// Categories: shared argument, related arguments, no direct connection.
    pub per_category: [Prf; 3],
    pub macro_f1: f64,
    pub aligned_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchReport {
    pub event: Prf,
    pub event_overlap: usize,
    pub sequence2: Prf,
    pub sequence2_overlap: usize,
    pub sequence3: Prf,
    pub sequence3_overlap: usize,
    pub connection: ConnectionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub graph_id: String,
    /// 1-based rank of the first correct type; None when nothing matched.
    pub rank: Option<usize>,
    pub reciprocal_rank: f64,
    pub hits_at_1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionReport {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub rows: Vec<PredictionRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    PerGraph,
    PerFactor,
}

/// Instance-graph perplexity: 2 to the mean NLL, with the mean taken per
/// graph or per factor.
pub fn perplexity(
    params: &ModelParams,
    ontology: &Ontology,
    graphs: &[InstanceGraph],
    mode: FactorMode,
    normalization: Normalization,
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Validation("perplexity needs at least one graph".into()));
    }
    let scores = par_map(graphs, |g| graph_log_likelihood(g, params, ontology));
    let mut total_log2 = 0.0;
    let mut total_factors = 0usize;
    for s in scores {
        let s = s?;
        total_log2 += s.log2_prob(mode);
        total_factors += s.factor_count(mode);
    }
    let denom = match normalization {
        Normalization::PerGraph => graphs.len() as f64,
        Normalization::PerFactor => total_factors.max(1) as f64,
    };
    Ok((-total_log2 / denom).exp2())
}

fn real_event_types(graph: &InstanceGraph) -> Vec<&str> {
    graph.real_events().map(|e| e.ty.as_str()).collect()
}

/// Multiset overlap of event type labels (boundaries excluded).
pub fn event_match(pred: &InstanceGraph, gold: &InstanceGraph) -> (Prf, usize) {
    fn count(g: &InstanceGraph) -> HashMap<&str, usize> {
        let mut m: HashMap<&str, usize> = HashMap::new();
        for e in g.real_events() {
            *m.entry(e.ty.as_str()).or_insert(0) += 1;
        }
        m
    }
    let (pc, gc) = (count(pred), count(gold));
    let overlap: usize = pc
        .iter()
        .map(|(t, n)| n.min(gc.get(t).unwrap_or(&0)))
        .sum();
    let prf = Prf::from_counts(
        overlap as f64,
        real_event_types(pred).len() as f64,
        real_event_types(gold).len() as f64,
    );
    (prf, overlap)
}

fn type_sequences(graph: &InstanceGraph, len: usize, transitive: bool) -> HashSet<Vec<String>> {
    let real: Vec<&str> = graph
        .real_events()
        .map(|e| e.id.as_str())
        .collect();
    let real_set: HashSet<&str> = real.iter().copied().collect();
    let ty: HashMap<&str, &str> = graph
        .real_events()
        .map(|e| (e.id.as_str(), e.ty.as_str()))
        .collect();
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &graph.temporal_edges {
        if real_set.contains(t.before.as_str()) && real_set.contains(t.after.as_str()) {
            adj.entry(t.before.as_str()).or_default().push(t.after.as_str());
        }
    }
    if transitive {
        // Successor sets under reachability; tuples follow closure edges.
        let mut reach: HashMap<&str, HashSet<&str>> = HashMap::new();
        fn go<'a>(
            node: &'a str,
            adj: &HashMap<&'a str, Vec<&'a str>>,
            reach: &mut HashMap<&'a str, HashSet<&'a str>>,
        ) -> HashSet<&'a str> {
            if let Some(r) = reach.get(node) {
                return r.clone();
            }
            let mut out = HashSet::new();
            for &next in adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]) {
                out.insert(next);
                out.extend(go(next, adj, reach));
            }
            reach.insert(node, out.clone());
            out
        }
        let mut closure: HashMap<&str, Vec<&str>> = HashMap::new();
        for &n in &real {
            let mut r: Vec<&str> = go(n, &adj, &mut reach).into_iter().collect();
            r.sort();
            closure.insert(n, r);
        }
        return walk_tuples(&real, &closure, &ty, len);
    }
    walk_tuples(&real, &adj, &ty, len)
}

fn walk_tuples<'a>(
    nodes: &[&'a str],
    adj: &HashMap<&'a str, Vec<&'a str>>,
    ty: &HashMap<&'a str, &'a str>,
    len: usize,
) -> HashSet<Vec<String>> {
    let mut out = HashSet::new();
    let mut stack: Vec<&str> = Vec::new();
    fn dfs<'a>(
        node: &'a str,
        adj: &HashMap<&'a str, Vec<&'a str>>,
        ty: &HashMap<&'a str, &'a str>,
        len: usize,
        stack: &mut Vec<&'a str>,
        out: &mut HashSet<Vec<String>>,
    ) {
        stack.push(node);
        if stack.len() == len {
            out.insert(stack.iter().map(|n| ty[n].to_string()).collect());
        } else {
            for &next in adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]) {
                dfs(next, adj, ty, len, stack, out);
            }
        }
        stack.pop();
    }
    for &n in nodes {
        dfs(n, adj, ty, len, &mut stack, &mut out);
    }
    out
}

/// Set overlap of event-type l-tuples along temporal paths. `transitive`
/// switches from consecutive-edge paths to reachability-closure pairs.
pub fn sequence_match(
    pred: &InstanceGraph,
    gold: &InstanceGraph,
    len: usize,
    transitive: bool,
) -> (Prf, usize) {
    let ps = type_sequences(pred, len, transitive);
    let gs = type_sequences(gold, len, transitive);
    let overlap = ps.intersection(&gs).count();
    (
        Prf::from_counts(overlap as f64, ps.len() as f64, gs.len() as f64),
        overlap,
    )
}

/// How two events connect through their arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Connection {
    SharedArgument,
    RelatedArguments,
    None,
}

fn connection_category(graph: &InstanceGraph, e1: &str, e2: &str) -> Connection {
    let args_of = |e: &str| -> HashSet<&str> {
        graph
            .argument_edges
            .iter()
            .filter(|a| a.event == e)
            .map(|a| a.entity.as_str())
            .collect()
    };
    let (a1, a2) = (args_of(e1), args_of(e2));
    if a1.intersection(&a2).next().is_some() {
        return Connection::SharedArgument;
    }
    for r in &graph.relation_edges {
        let (h, t) = (r.head.as_str(), r.tail.as_str());
        if (a1.contains(h) && a2.contains(t)) || (a1.contains(t) && a2.contains(h)) {
            return Connection::RelatedArguments;
        }
    }
    Connection::None
}

fn degree_profile(graph: &InstanceGraph, id: &str) -> (usize, usize) {
    let mut ind = 0;
    let mut outd = 0;
    for t in &graph.temporal_edges {
        if InstanceGraph::is_boundary_event(&t.before) || InstanceGraph::is_boundary_event(&t.after) {
            continue;
        }
        if t.after == id {
            ind += 1;
        }
        if t.before == id {
            outd += 1;
        }
    }
    (ind, outd)
}

/// Greedy alignment of same-type events: repeatedly match the pair with
/// the closest temporal degree profile.
fn align_events<'a>(pred: &'a InstanceGraph, gold: &'a InstanceGraph) -> Vec<(&'a str, &'a str)> {
    let by_type = |g: &'a InstanceGraph| -> HashMap<&'a str, Vec<&'a str>> {
        let mut m: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in g.real_events() {
            m.entry(e.ty.as_str()).or_default().push(e.id.as_str());
        }
        m
    };
    let (pt, gt) = (by_type(pred), by_type(gold));
    let mut types: Vec<&str> = pt.keys().filter(|t| gt.contains_key(*t)).copied().collect();
    types.sort();
    let mut aligned = Vec::new();
    for t in types {
        let mut ps: Vec<&str> = pt[t].clone();
        let mut gs: Vec<&str> = gt[t].clone();
        while !ps.is_empty() && !gs.is_empty() {
            let mut best = (usize::MAX, 0usize, 0usize);
            for (i, p) in ps.iter().enumerate() {
                let dp = degree_profile(pred, p);
                for (j, g) in gs.iter().enumerate() {
                    let dg = degree_profile(gold, g);
                    let d = dp.0.abs_diff(dg.0) + dp.1.abs_diff(dg.1);
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            aligned.push((ps.remove(best.1), gs.remove(best.2)));
        }
    }
    aligned
}

/// Classify every pair of aligned events in both graphs and score the
/// three connection categories against the gold labels.
pub fn connection_match(pred: &InstanceGraph, gold: &InstanceGraph) -> ConnectionReport {
    let aligned = align_events(pred, gold);
    let cats = [
        Connection::SharedArgument,
        Connection::RelatedArguments,
        Connection::None,
    ];
    let mut pred_count = [0usize; 3];
    let mut gold_count = [0usize; 3];
    let mut agree = [0usize; 3];
    let mut pairs = 0usize;
    for i in 0..aligned.len() {
        for j in (i + 1)..aligned.len() {
            pairs += 1;
            let pc = connection_category(pred, aligned[i].0, aligned[j].0);
            let gc = connection_category(gold, aligned[i].1, aligned[j].1);
            let pi = cats.iter().position(|c| *c == pc).unwrap();
            let gi = cats.iter().position(|c| *c == gc).unwrap();
            pred_count[pi] += 1;
            gold_count[gi] += 1;
            if pi == gi {
                agree[pi] += 1;
            }
        }
    }
    let per_category = [0, 1, 2].map(|c| {
        Prf::from_counts(agree[c] as f64, pred_count[c] as f64, gold_count[c] as f64)
    });
    let macro_f1 = per_category.iter().map(|p| p.f1).sum::<f64>() / 3.0;
    ConnectionReport {
        per_category,
        macro_f1,
        aligned_pairs: pairs,
    }
}

/// All schema-matching metrics in one report.
pub fn match_schemas(pred: &InstanceGraph, gold: &InstanceGraph, transitive: bool) -> MatchReport {
    let (event, event_overlap) = event_match(pred, gold);
    let (sequence2, sequence2_overlap) = sequence_match(pred, gold, 2, transitive);
    let (sequence3, sequence3_overlap) = sequence_match(pred, gold, 3, transitive);
    let connection = connection_match(pred, gold);
    MatchReport {
        event,
        event_overlap,
        sequence2,
        sequence2_overlap,
        sequence3,
        sequence3_overlap,
        connection,
    }
}

/// Remove every ending event (no outgoing temporal edge), dropping
/// orphaned arguments and entities. Returns the truncated graph and the
/// removed ending types.
pub fn hold_out_ending_events(graph: &InstanceGraph) -> Result<(InstanceGraph, Vec<String>)> {
    let g = strip_boundary_nodes(graph.clone());
    let with_out: HashSet<&str> = g.temporal_edges.iter().map(|t| t.before.as_str()).collect();
    let ending: Vec<String> = g
        .events
        .iter()
        .filter(|e| !with_out.contains(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    let ending_set: HashSet<&String> = ending.iter().collect();
    if ending.len() == g.events.len() {
        return Err(Error::Validation(format!(
            "graph {} has no non-ending events to condition on",
            g.graph_id
        )));
    }
    let ending_types = g
        .events
        .iter()
        .filter(|e| ending_set.contains(&e.id))
        .map(|e| e.ty.clone())
        .collect();
    let mut truncated = g.clone();
    truncated.events.retain(|e| !ending_set.contains(&e.id));
    truncated
        .temporal_edges
        .retain(|t| !ending_set.contains(&t.before) && !ending_set.contains(&t.after));
    truncated.argument_edges.retain(|a| !ending_set.contains(&a.event));
    let referenced: HashSet<&str> = truncated
        .argument_edges
        .iter()
        .map(|a| a.entity.as_str())
        .collect();
    truncated.entities.retain(|v| referenced.contains(v.id.as_str()));
    let kept_entities: HashSet<&str> = truncated.entities.iter().map(|v| v.id.as_str()).collect();
    truncated
        .relation_edges
        .retain(|r| kept_entities.contains(r.head.as_str()) && kept_entities.contains(r.tail.as_str()));
    Ok((truncated, ending_types))
}

/// Rank event types (EOG excluded) by the model's next-event probability
/// after the truncated graph, scoring against the held-out ending types.
pub fn predict_ending_events(
    params: &ModelParams,
    ontology: &Ontology,
    graph: &InstanceGraph,
) -> Result<(Vec<String>, PredictionRow)> {
    let (truncated, ending_types) = hold_out_ending_events(graph)?;
    let probs = next_event_probabilities(&truncated, params, ontology)?;
    let ranking = rank_types(&probs[..ontology.num_event_types()], ontology);
    let correct: HashSet<&str> = ending_types.iter().map(String::as_str).collect();
    let row = score_ranking(&graph.graph_id, &ranking, &correct);
    Ok((ranking, row))
}

/// Event type names sorted by descending score, ties by ontology index.
pub fn rank_types(scores: &[f64], ontology: &Ontology) -> Vec<String> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
        .into_iter()
        .map(|i| ontology.event_type_name(i).to_string())
        .collect()
}

pub fn score_ranking(graph_id: &str, ranking: &[String], correct: &HashSet<&str>) -> PredictionRow {
    let rank = ranking
        .iter()
        .position(|t| correct.contains(t.as_str()))
        .map(|i| i + 1);
    PredictionRow {
        graph_id: graph_id.to_string(),
        rank,
        reciprocal_rank: rank.map(|r| 1.0 / r as f64).unwrap_or(0.0),
        hits_at_1: if rank == Some(1) { 1.0 } else { 0.0 },
    }
}

/// Arithmetic means over per-graph rows.
pub fn aggregate_reports(rows: Vec<PredictionRow>) -> Result<PredictionReport> {
    if rows.is_empty() {
        return Err(Error::Validation("no prediction rows to aggregate".into()));
    }
    let n = rows.len() as f64;
    let mrr = rows.iter().map(|r| r.reciprocal_rank).sum::<f64>() / n;
    let hits = rows.iter().map(|r| r.hits_at_1).sum::<f64>() / n;
    Ok(PredictionReport {
        mrr,
        hits_at_1: hits,
        rows,
    })
}

/// Run ending-event prediction over a whole graph set.
pub fn predict_report(
    params: &ModelParams,
    ontology: &Ontology,
    graphs: &[InstanceGraph],
) -> Result<PredictionReport> {
    let rows = par_map(graphs, |g| {
        predict_ending_events(params, ontology, g).map(|(_, row)| row)
    });
    aggregate_reports(rows.into_iter().collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EventNode, TemporalEdge};

    fn graph_of(types: &[(&str, &str)], edges: &[(&str, &str)]) -> InstanceGraph {
        InstanceGraph {
            graph_id: "t".into(),
            complex_event_type: "t".into(),
            events: types
                .iter()
                .map(|(id, ty)| EventNode {
                    id: id.to_string(),
                    ty: ty.to_string(),
                })
                .collect(),
            temporal_edges: edges
                .iter()
                .map(|(b, a)| TemporalEdge {
                    before: b.to_string(),
                    after: a.to_string(),
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn event_match_basic_overlap() {
        let pred = graph_of(&[("1", "A"), ("2", "B"), ("3", "C")], &[]);
        let gold = graph_of(&[("1", "B"), ("2", "C"), ("3", "D")], &[]);
        let (prf, overlap) = event_match(&pred, &gold);
        assert_eq!(overlap, 2);
        assert!((prf.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn event_match_identical_is_one() {
        let g = graph_of(&[("1", "A"), ("2", "B")], &[("1", "2")]);
        let (prf, _) = event_match(&g, &g);
        assert_eq!(prf.f1, 1.0);
    }

    #[test]
    fn event_match_is_multiset() {
        let pred = graph_of(&[("1", "A"), ("2", "A"), ("3", "B")], &[]);
        let gold = graph_of(&[("1", "A"), ("2", "B")], &[]);
        let (prf, overlap) = event_match(&pred, &gold);
        assert_eq!(overlap, 2);
        assert!((prf.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.recall - 1.0).abs() < 1e-12);
        assert!((prf.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn event_match_f1_is_symmetric() {
        let a = graph_of(&[("1", "A"), ("2", "A"), ("3", "B")], &[]);
        let b = graph_of(&[("1", "A"), ("2", "C")], &[]);
        let (x, _) = event_match(&a, &b);
        let (y, _) = event_match(&b, &a);
        assert_eq!(x.f1, y.f1);
    }

    #[test]
    fn sequence_match_on_chains() {
        let pred = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "C")],
            &[("1", "2"), ("2", "3")],
        );
        let gold = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "D")],
            &[("1", "2"), ("2", "3")],
        );
        let (prf, overlap) = sequence_match(&pred, &gold, 2, false);
        assert_eq!(overlap, 1); // AB shared; BC vs BD differ
        assert!((prf.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sequence_match_degenerate_lengths() {
        let two = graph_of(&[("1", "A"), ("2", "B")], &[("1", "2")]);
        let (prf, _) = sequence_match(&two, &two, 3, false);
        assert_eq!(prf.f1, 1.0); // both empty
        let three = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "C")],
            &[("1", "2"), ("2", "3")],
        );
        let (prf, _) = sequence_match(&three, &two, 3, false);
        assert_eq!(prf.f1, 0.0); // exactly one empty
    }

    #[test]
    fn sequence_match_diamond_pairs() {
        let diamond = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "C"), ("4", "D")],
            &[("1", "2"), ("1", "3"), ("2", "4"), ("3", "4")],
        );
        let set = type_sequences(&diamond, 2, false);
        assert_eq!(set.len(), 4);
        for pair in [["A", "B"], ["A", "C"], ["B", "D"], ["C", "D"]] {
            assert!(set.contains(&pair.map(String::from).to_vec()));
        }
    }

    #[test]
    fn transitive_sequences_include_skips() {
        let chain = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "C")],
            &[("1", "2"), ("2", "3")],
        );
        let path = type_sequences(&chain, 2, false);
        let closure = type_sequences(&chain, 2, true);
        assert_eq!(path.len(), 2);
        assert_eq!(closure.len(), 3); // AB, BC, AC
        assert!(closure.contains(&vec!["A".to_string(), "C".to_string()]));
    }

    #[test]
    fn connection_shared_argument_counts_as_agreement() {
        let mk = |shared: bool| -> InstanceGraph {
            let mut g = graph_of(&[("e1", "Attack"), ("e2", "Arrest")], &[("e1", "e2")]);
            g.entities = vec![
                crate::graph::EntityNode {
                    id: "p1".into(),
                    ty: "Person".into(),
                },
                crate::graph::EntityNode {
                    id: "p2".into(),
                    ty: "Person".into(),
                },
            ];
            g.argument_edges = vec![
                crate::graph::ArgumentEdge {
                    event: "e1".into(),
                    role: "Attacker".into(),
                    entity: "p1".into(),
                },
                crate::graph::ArgumentEdge {
                    event: "e2".into(),
                    role: "Detainee".into(),
                    entity: if shared { "p1".into() } else { "p2".into() },
                },
            ];
            g
        };
        let both = connection_match(&mk(true), &mk(true));
        assert_eq!(both.per_category[0].f1, 1.0);
        assert_eq!(both.macro_f1, 1.0); // other two categories are empty-empty

        let confused = connection_match(&mk(false), &mk(true));
        assert_eq!(confused.per_category[0].f1, 0.0);
        assert_eq!(confused.per_category[2].f1, 0.0);
    }

    #[test]
    fn connection_macro_f1_matches_hand_computed_confusion() {
        // Three aligned events A, B, C. Pred: A–B share p; B–C related; A–C none.
        // Gold: A–B share; B–C none; A–C none.
        // cat1: tp=1, pred=1, gold=1 → f1 1. cat2: pred=1, gold=0 → 0.
        // cat3: tp=1, pred=1, gold=2 → p=1, r=0.5, f1=2/3. macro = 5/9.
        let base = |bc_related: bool| -> InstanceGraph {
            let mut g = graph_of(
                &[("a", "A"), ("b", "B"), ("c", "C")],
                &[("a", "b"), ("b", "c")],
            );
            g.entities = vec![
                crate::graph::EntityNode { id: "s".into(), ty: "X".into() },
                crate::graph::EntityNode { id: "u".into(), ty: "X".into() },
                crate::graph::EntityNode { id: "v".into(), ty: "X".into() },
            ];
            g.argument_edges = vec![
                crate::graph::ArgumentEdge { event: "a".into(), role: "r".into(), entity: "s".into() },
                crate::graph::ArgumentEdge { event: "b".into(), role: "r".into(), entity: "s".into() },
                crate::graph::ArgumentEdge { event: "b".into(), role: "q".into(), entity: "u".into() },
                crate::graph::ArgumentEdge { event: "c".into(), role: "r".into(), entity: "v".into() },
            ];
            if bc_related {
                g.relation_edges = vec![crate::graph::RelationEdge {
                    head: "u".into(),
                    ty: "R".into(),
                    tail: "v".into(),
                }];
            }
            g
        };
        let report = connection_match(&base(true), &base(false));
        assert_eq!(report.aligned_pairs, 3);
        assert_eq!(report.per_category[0].f1, 1.0);
        assert_eq!(report.per_category[1].f1, 0.0);
        assert!((report.per_category[2].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.macro_f1 - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_means_are_exact() {
        let rows = vec![
            PredictionRow {
                graph_id: "a".into(),
                rank: Some(1),
                reciprocal_rank: 1.0,
                hits_at_1: 1.0,
            },
            PredictionRow {
                graph_id: "b".into(),
                rank: Some(2),
                reciprocal_rank: 0.5,
                hits_at_1: 0.0,
            },
        ];
        let report = aggregate_reports(rows).unwrap();
        assert!((report.mrr - 0.75).abs() < 1e-12);
        assert_eq!(report.hits_at_1, 0.5);
    }

    #[test]
    fn hits_mean_over_four_rows() {
        let rows = [1.0, 0.0, 0.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, h)| PredictionRow {
                graph_id: format!("g{i}"),
                rank: if *h == 1.0 { Some(1) } else { Some(3) },
                reciprocal_rank: if *h == 1.0 { 1.0 } else { 1.0 / 3.0 },
                hits_at_1: *h,
            })
            .collect();
        let report = aggregate_reports(rows).unwrap();
        assert_eq!(report.hits_at_1, 0.5);
    }

    #[test]
    fn hold_out_removes_all_sinks() {
        let g = graph_of(
            &[("1", "A"), ("2", "B"), ("3", "C"), ("4", "D")],
            &[("1", "2"), ("2", "3"), ("2", "4")],
        );
        let (truncated, endings) = hold_out_ending_events(&g).unwrap();
        let mut endings = endings;
        endings.sort();
        assert_eq!(endings, vec!["C".to_string(), "D".to_string()]);
        assert_eq!(truncated.events.len(), 2);
        // removing everything is rejected
        let single = graph_of(&[("1", "A")], &[]);
        assert!(hold_out_ending_events(&single).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let ont = Ontology::load_str(
            r#"{
            "event_types": ["A", "B", "C"],
            "entity_types": ["X"],
            "relation_types": [],
            "roles": []
        }"#,
        )
        .unwrap();
        let ranked = rank_types(&[0.2, 0.5, 0.2], &ont);
        assert_eq!(ranked, vec!["B".to_string(), "A".to_string(), "C".to_string()]);
        let correct: HashSet<&str> = ["C"].into_iter().collect();
        let row = score_ranking("g", &ranked, &correct);
        assert_eq!(row.rank, Some(3));
        assert!((row.reciprocal_rank - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.hits_at_1, 0.0);
    }
}
