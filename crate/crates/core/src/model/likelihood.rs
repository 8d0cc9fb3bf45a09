//! Teacher-forced log-likelihood of an instance graph under the model.
//!
//! Walks the BFS linearization and accumulates, per step: the event-type
//! factor, one copy-vs-generate factor per gold-filled role, one
//! relation-or-none factor per (new entity, prior entity) pair, and one
//! Bernoulli factor per (earlier event, new event) pair. The EOG step
//! contributes its event factor only.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{add_boundary_nodes, linearize, InstanceGraph};
use crate::ontology::{Ontology, EOG_LABEL};
use crate::tape::VarId;

use super::state::{ArgChoice, GenerationState};
use super::ModelParams;

/// Which factors count toward a reported likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    Full,
    EventOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Event,
    Argument,
    Relation,
    Temporal,
}

/// Per-factor-kind log₂-probability totals and factor counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct FactorBreakdown {
    pub event_log2: f64,
    pub argument_log2: f64,
    pub relation_log2: f64,
    pub temporal_log2: f64,
    pub event_count: usize,
    pub argument_count: usize,
    pub relation_count: usize,
    pub temporal_count: usize,
}

impl FactorBreakdown {
    fn add(&mut self, kind: FactorKind, log2: f64) {
        match kind {
            FactorKind::Event => {
                self.event_log2 += log2;
                self.event_count += 1;
            }
            FactorKind::Argument => {
                self.argument_log2 += log2;
                self.argument_count += 1;
            }
            FactorKind::Relation => {
                self.relation_log2 += log2;
                self.relation_count += 1;
            }
            FactorKind::Temporal => {
                self.temporal_log2 += log2;
                self.temporal_count += 1;
            }
        }
    }
}

/// Likelihood of one graph, with its factor breakdown.
#[derive(Debug, Clone, Copy)]
pub struct GraphScore {
    pub breakdown: FactorBreakdown,
}

impl GraphScore {
    pub fn log2_prob(&self, mode: FactorMode) -> f64 {
        let b = &self.breakdown;
        match mode {
            FactorMode::Full => b.event_log2 + b.argument_log2 + b.relation_log2 + b.temporal_log2,
            FactorMode::EventOnly => b.event_log2,
        }
    }

    pub fn nll_bits(&self, mode: FactorMode) -> f64 {
        -self.log2_prob(mode)
    }

    pub fn factor_count(&self, mode: FactorMode) -> usize {
        let b = &self.breakdown;
        match mode {
            FactorMode::Full => {
                b.event_count + b.argument_count + b.relation_count + b.temporal_count
            }
            FactorMode::EventOnly => b.event_count,
        }
    }
}

struct GoldView<'g> {
    lin_order: Vec<String>,
    event_types: HashMap<&'g str, usize>,
    /// (event id, global role index) → entity id
    args: HashMap<(String, usize), &'g str>,
    entity_types: HashMap<&'g str, usize>,
    /// canonical (min id, max id) → relation type index
    relations: HashMap<(&'g str, &'g str), usize>,
    temporal: HashSet<(String, String)>,
}

fn gold_view<'g>(graph: &'g InstanceGraph, ontology: &Ontology) -> Result<GoldView<'g>> {
    let lin = linearize(graph)?;
    let mut event_types = HashMap::new();
    for e in graph.real_events() {
        event_types.insert(
            e.id.as_str(),
            ontology.event_type_index(&e.ty).expect("validated"),
        );
    }
    let mut entity_types = HashMap::new();
    for v in &graph.entities {
        entity_types.insert(
            v.id.as_str(),
            ontology.entity_type_index(&v.ty).expect("validated"),
        );
    }
    let mut args = HashMap::new();
    for a in &graph.argument_edges {
        let ev_ty = event_types[a.event.as_str()];
        let role = ontology.role_index(ev_ty, &a.role).expect("validated");
        args.insert((a.event.clone(), role), a.entity.as_str());
    }
    let mut relations = HashMap::new();
    for r in &graph.relation_edges {
        let key = if r.head <= r.tail {
            (r.head.as_str(), r.tail.as_str())
        } else {
            (r.tail.as_str(), r.head.as_str())
        };
        // On duplicate types for one pair, the lexicographically first
        // relation type is the teacher-forcing target.
        let idx = ontology.relation_type_index(&r.ty).expect("validated");
        relations
            .entry(key)
            .and_modify(|cur: &mut usize| {
                if idx < *cur {
                    *cur = idx;
                }
            })
            .or_insert(idx);
    }
    let temporal = graph
        .temporal_edges
        .iter()
        .map(|t| (t.before.clone(), t.after.clone()))
        .collect();
    Ok(GoldView {
        lin_order: lin.order().to_vec(),
        event_types,
        args,
        entity_types,
        relations,
        temporal,
    })
}

pub(crate) struct ForcedPass<'a> {
    pub state: GenerationState<'a>,
    pub factors: Vec<(FactorKind, VarId)>,
    pub score: GraphScore,
}

/// Teacher-force `graph` through the model. When `include_final_eog` is
/// false the terminating EOG factor is skipped, leaving the state poised
/// at the next generation step (used for ending-event prediction).
pub(crate) fn teacher_force<'a>(
    graph: &InstanceGraph,
    params: &'a ModelParams,
    ontology: &'a Ontology,
    include_final_eog: bool,
) -> Result<ForcedPass<'a>> {
    graph.validate(ontology)?;
    let bounded = add_boundary_nodes(graph.clone());
    let gold = gold_view(&bounded, ontology)?;

    let mut state = GenerationState::new(params, ontology);
    let mut factors: Vec<(FactorKind, VarId)> = Vec::new();
    let mut breakdown = FactorBreakdown::default();
    // gold entity id → state entity index, and the reverse
    let mut ent_of_gold: HashMap<&str, usize> = HashMap::new();
    let mut gold_of_ent: HashMap<usize, String> = HashMap::new();
    // state event index → gold event id (SOG at 0)
    let mut gold_of_event: Vec<String> = vec![gold.lin_order[0].clone()];

    let ln2 = std::f64::consts::LN_2;
    let push = |state: &GenerationState,
                    factors: &mut Vec<(FactorKind, VarId)>,
                    breakdown: &mut FactorBreakdown,
                    kind: FactorKind,
                    ln_prob: VarId|
     -> Result<()> {
        let v = state.tape.value(ln_prob).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "log-likelihood factor of graph {} at step {}",
                graph.graph_id,
                state.step()
            )));
        }
        breakdown.add(kind, v / ln2);
        factors.push((kind, ln_prob));
        Ok(())
    };

    for pos in 1..gold.lin_order.len() {
        let gold_id = gold.lin_order[pos].clone();
        if gold_id == EOG_LABEL {
            if include_final_eog {
                let dist = state.event_distribution()?;
                let f = state.tape.pick(dist, params.eog_class());
                push(&state, &mut factors, &mut breakdown, FactorKind::Event, f)?;
            }
            break;
        }
        let ty = gold.event_types[gold_id.as_str()];
        let dist = state.event_distribution()?;
        let f = state.tape.pick(dist, ty);
        push(&state, &mut factors, &mut breakdown, FactorKind::Event, f)?;

        let placeholders = state.expand_event(ty)?;
        state.propagate()?;

        if params.hp.arguments_enabled {
            let roles: Vec<usize> = ontology.role_indices_of(ty).to_vec();
            let mut unfilled = Vec::new();
            for (k, &role) in roles.iter().enumerate() {
                let ph = placeholders[k];
                let gold_entity = match gold.args.get(&(gold_id.clone(), role)) {
                    Some(v) => *v,
                    None => {
                        unfilled.push(ph);
                        continue;
                    }
                };
                match ent_of_gold.get(gold_entity).copied() {
                    Some(target) if state.entity_created_step(target) < state.step() => {
                        let (dist, support) = state.argument_distribution(ph)?;
                        let cls = support
                            .iter()
                            .position(|c| *c == ArgChoice::Existing(target))
                            .expect("prior entity present in copy support");
                        let f = state.tape.pick(dist, cls);
                        push(&state, &mut factors, &mut breakdown, FactorKind::Argument, f)?;
                        state.apply_argument_decision(ph, ArgChoice::Existing(target))?;
                    }
                    Some(target) => {
                        // Same-step duplicate filler: the process cannot copy
                        // it, so score the generate factor and merge.
                        let t = gold.entity_types[gold_entity];
                        let (dist, _) = state.argument_distribution(ph)?;
                        let f = state.tape.pick(dist, t);
                        push(&state, &mut factors, &mut breakdown, FactorKind::Argument, f)?;
                        state.merge_same_step(ph, target);
                    }
                    None => {
                        let t = gold.entity_types[gold_entity];
                        let (dist, _) = state.argument_distribution(ph)?;
                        let f = state.tape.pick(dist, t);
                        push(&state, &mut factors, &mut breakdown, FactorKind::Argument, f)?;
                        state.apply_argument_decision(ph, ArgChoice::NewType(t))?;
                        ent_of_gold.insert(gold_entity, ph);
                        gold_of_ent.insert(ph, gold_entity.to_string());
                    }
                }
            }
            for ph in unfilled {
                state.drop_placeholder(ph);
            }

            let new_entities = state.new_entities_this_step();
            let priors = state.copyable_entities();
            for &ne in &new_entities {
                for &pe in &priors {
                    let dist = state.relation_distribution(ne, pe)?;
                    let (ga, gb) = (gold_of_ent[&ne].as_str(), gold_of_ent[&pe].as_str());
                    let key = if ga <= gb { (ga, gb) } else { (gb, ga) };
                    let gold_rel = gold.relations.get(&key).copied();
                    let cls = gold_rel.unwrap_or_else(|| params.other_relation_class());
                    let f = state.tape.pick(dist, cls);
                    push(&state, &mut factors, &mut breakdown, FactorKind::Relation, f)?;
                    if let Some(r) = gold_rel {
                        state.apply_relation(ne, pe, r);
                    }
                }
            }
            state.resolve_entity_virtuals();
        }

        state.propagate()?;

        let candidates = state.temporal_candidates();
        let scores = state.temporal_edge_probabilities(&candidates)?;
        let mut kept = Vec::new();
        for (cand, p) in scores.pair_probs {
            let before_id = gold_of_event[cand].clone();
            let present = gold.temporal.contains(&(before_id, gold_id.clone()));
            let f = if present {
                kept.push(cand);
                state.tape.ln(p)
            } else {
                let q = state.tape.one_minus(p);
                state.tape.ln(q)
            };
            push(&state, &mut factors, &mut breakdown, FactorKind::Temporal, f)?;
        }
        let new_event = state.finish_step()?;
        for cand in kept {
            state.add_temporal_edge(cand, new_event);
        }
        gold_of_event.push(gold_id);
    }

    Ok(ForcedPass {
        state,
        factors,
        score: GraphScore { breakdown },
    })
}

/// Teacher-forced log₂-likelihood with per-factor breakdown. The graph may
/// be supplied with or without boundary nodes.
pub fn graph_log_likelihood(
    graph: &InstanceGraph,
    params: &ModelParams,
    ontology: &Ontology,
) -> Result<GraphScore> {
    Ok(teacher_force(graph, params, ontology, true)?.score)
}

/// Like [`graph_log_likelihood`] but also returns the recorded state and a
/// loss variable holding the full NLL in bits, ready for `backward`.
pub fn nll_bits_recorded<'a>(
    graph: &InstanceGraph,
    params: &'a ModelParams,
    ontology: &'a Ontology,
) -> Result<(GenerationState<'a>, VarId, GraphScore)> {
    let mut pass = teacher_force(graph, params, ontology, true)?;
    let vars: Vec<VarId> = pass.factors.iter().map(|(_, v)| *v).collect();
    let loss = {
        let tape = &mut pass.state.tape;
        let stacked = tape.stack(&vars)?;
        let total = tape.sum(stacked);
        tape.scale_const(-1.0 / std::f64::consts::LN_2, total)
    };
    Ok((pass.state, loss, pass.score))
}

/// Event-type probabilities for the step immediately after `graph`'s last
/// event (boundaries excluded from the ranking is the caller's concern;
/// EOG is the final class).
pub fn next_event_probabilities(
    graph: &InstanceGraph,
    params: &ModelParams,
    ontology: &Ontology,
) -> Result<Vec<f64>> {
    let mut pass = teacher_force(graph, params, ontology, false)?;
    let dist = pass.state.event_distribution()?;
    Ok(pass
        .state
        .tape
        .value(dist)
        .values()
        .iter()
        .map(|lp| lp.exp())
        .collect())
}
