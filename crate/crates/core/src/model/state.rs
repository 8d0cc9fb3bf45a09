//! Stepwise generation state: the partially generated graph, one latent
//! vector per node, and the per-step distribution heads.

use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::tape::{gru_cell, mlp2, GruVars, MlpVars, Tape, VarId};

use super::ModelParams;

/// Outcome class of one argument decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgChoice {
    /// Generate a fresh entity of this entity-type index.
    NewType(usize),
    /// Copy: the placeholder is coreferential with this state entity.
    Existing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EventClass {
    Sog,
    Type(usize),
}

struct EventNodeSt {
    class: EventClass,
    var: VarId,
}

struct EntityNodeSt {
    ty: Option<usize>,
    var: VarId,
    alive: bool,
    created_step: usize,
}

struct ArgEdgeSt {
    event: usize,
    role: usize,
    entity: usize,
}

struct RelEdgeSt {
    a: usize,
    b: usize,
    ty: usize,
}

struct Pending {
    event: usize,
    placeholders: Vec<usize>,
    /// Virtual entity-entity edges stay active until argument and relation
    /// decisions resolve them.
    entity_virtuals_active: bool,
}

/// Temporal head output for one step: mixture weights plus a presence
/// probability per candidate pair.
pub struct TemporalScores {
    pub gamma: VarId,
    /// `(candidate event index, probability var)` in candidate order.
    pub pair_probs: Vec<(usize, VarId)>,
}

pub struct GenerationState<'a> {
    pub(crate) tape: Tape,
    params: &'a ModelParams,
    ontology: &'a Ontology,
    events: Vec<EventNodeSt>,
    entities: Vec<EntityNodeSt>,
    arg_edges: Vec<ArgEdgeSt>,
    rel_edges: Vec<RelEdgeSt>,
    tmp_edges: Vec<(usize, usize)>,
    /// Generation step; the SOG-only graph is step 1's context.
    step: usize,
    pending: Option<Pending>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum NodeRef {
    Event(usize),
    Entity(usize),
}

impl<'a> GenerationState<'a> {
    /// Fresh state holding only the SOG boundary event.
    pub fn new(params: &'a ModelParams, ontology: &'a Ontology) -> GenerationState<'a> {
        assert!(
            params.matches_ontology(ontology),
            "model parameters were built for a different ontology"
        );
        let mut tape = Tape::new();
        let embed = tape.param(&params.store, "embed.event");
        let sog_var = tape.select_row(embed, params.sog_row());
        GenerationState {
            tape,
            params,
            ontology,
            events: vec![EventNodeSt {
                class: EventClass::Sog,
                var: sog_var,
            }],
            entities: Vec::new(),
            arg_edges: Vec::new(),
            rel_edges: Vec::new(),
            tmp_edges: Vec::new(),
            step: 1,
            pending: None,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn num_live_entities(&self) -> usize {
        self.entities.iter().filter(|e| e.alive).count()
    }

    pub fn event_type(&self, idx: usize) -> Option<usize> {
        match self.events[idx].class {
            EventClass::Sog => None,
            EventClass::Type(t) => Some(t),
        }
    }

    pub fn entity_type(&self, idx: usize) -> Option<usize> {
        self.entities[idx].ty
    }

    pub fn entity_created_step(&self, idx: usize) -> usize {
        self.entities[idx].created_step
    }

    /// Current latent vector of an event node.
    pub fn event_latent(&self, idx: usize) -> &crate::tensor::Tensor {
        self.tape.value(self.events[idx].var)
    }

    /// Current latent vector of an entity node.
    pub fn entity_latent(&self, idx: usize) -> &crate::tensor::Tensor {
        self.tape.value(self.entities[idx].var)
    }

    pub fn temporal_edges(&self) -> &[(usize, usize)] {
        &self.tmp_edges
    }

    fn param(&mut self, name: &str) -> VarId {
        self.tape.param(&self.params.store, name)
    }

    fn mlp_vars(&mut self, name: &str) -> MlpVars {
        MlpVars {
            w1: self.param(&format!("{name}.w1")),
            b1: self.param(&format!("{name}.b1")),
            w2: self.param(&format!("{name}.w2")),
            b2: self.param(&format!("{name}.b2")),
            w3: self.param(&format!("{name}.w3")),
            b3: self.param(&format!("{name}.b3")),
        }
    }

    fn gru_vars(&mut self, layer: usize) -> GruVars {
        GruVars {
            w_r: self.param(&format!("gnn{layer}.gru.wr")),
            u_r: self.param(&format!("gnn{layer}.gru.ur")),
            b_r: self.param(&format!("gnn{layer}.gru.br")),
            w_z: self.param(&format!("gnn{layer}.gru.wz")),
            u_z: self.param(&format!("gnn{layer}.gru.uz")),
            b_z: self.param(&format!("gnn{layer}.gru.bz")),
            w_n: self.param(&format!("gnn{layer}.gru.wn")),
            u_n: self.param(&format!("gnn{layer}.gru.un")),
            b_n: self.param(&format!("gnn{layer}.gru.bn")),
        }
    }

    /// Mean of all event-node latents (entities excluded; SOG counts).
    pub fn pool_graph(&mut self) -> Result<VarId> {
        let vars: Vec<VarId> = self.events.iter().map(|e| e.var).collect();
        self.tape.mean_stack(&vars)
    }

    /// Log-probabilities over event types followed by EOG (last class).
    pub fn event_distribution(&mut self) -> Result<VarId> {
        let pool = self.pool_graph()?;
        let head = self.param("head.event.w");
        let logits = self.tape.matvec(head, pool)?;
        Ok(self.tape.log_softmax(logits))
    }

    /// Add the next event node plus one placeholder entity per ontology
    /// role, with argument edges attached and virtual edges activated.
    /// Returns the placeholder entity indices in role order.
    pub fn expand_event(&mut self, event_type: usize) -> Result<Vec<usize>> {
        if event_type >= self.params.n_event_types {
            return Err(Error::Validation(format!(
                "unknown event type index {event_type}"
            )));
        }
        if self.pending.is_some() {
            return Err(Error::Validation(
                "previous generation step is still pending".into(),
            ));
        }
        let embed = self.param("embed.event");
        let var = self.tape.select_row(embed, event_type);
        let event = self.events.len();
        self.events.push(EventNodeSt {
            class: EventClass::Type(event_type),
            var,
        });

        let mut placeholders = Vec::new();
        if self.params.hp.arguments_enabled {
            let d = self.params.hp.dim;
            for &role in self.ontology.role_indices_of(event_type) {
                let var = self.tape.zeros(d);
                let entity = self.entities.len();
                self.entities.push(EntityNodeSt {
                    ty: None,
                    var,
                    alive: true,
                    created_step: self.step,
                });
                self.arg_edges.push(ArgEdgeSt {
                    event,
                    role,
                    entity,
                });
                placeholders.push(entity);
            }
        }
        self.pending = Some(Pending {
            event,
            placeholders: placeholders.clone(),
            entity_virtuals_active: true,
        });
        Ok(placeholders)
    }

    fn node_var(&self, n: NodeRef) -> VarId {
        match n {
            NodeRef::Event(i) => self.events[i].var,
            NodeRef::Entity(i) => self.entities[i].var,
        }
    }

    /// Entity indices visible as copy targets / relation partners for the
    /// current step: alive and created on an earlier step.
    fn prior_entities(&self) -> Vec<usize> {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.alive && e.created_step < self.step)
            .map(|(i, _)| i)
            .collect()
    }

    /// One L-layer message-passing pass over the current structure,
    /// including any active virtual edges. Updates every node latent.
    pub fn propagate(&mut self) -> Result<()> {
        // (receiver, sender, message) triples per edge direction.
        struct Msg {
            receiver: NodeRef,
            sender: NodeRef,
            msg: VarId,
        }

        for layer in 0..self.params.hp.layers {
            let w_arg = self.param(&format!("gnn{layer}.arg.w"));
            let w_rel = self.param(&format!("gnn{layer}.rel.w"));
            let w_bfr = self.param(&format!("gnn{layer}.bfr.w"));
            let w_aft = self.param(&format!("gnn{layer}.aft.w"));
            let att = self.mlp_vars("att");
            let role_table = self.param("role.vec");
            let rel_table = self.param("rel.vec");
            let gru = self.gru_vars(layer);

            let mut msgs: Vec<Msg> = Vec::new();

            // Argument edges: receiver-first difference concatenated with
            // the role vector.
            for k in 0..self.arg_edges.len() {
                let (ev, role, ent) = {
                    let a = &self.arg_edges[k];
                    (a.event, a.role, a.entity)
                };
                if !self.entities[ent].alive {
                    continue;
                }
                let e_var = self.events[ev].var;
                let v_var = self.entities[ent].var;
                let a_vec = self.tape.select_row(role_table, role);
                for (recv, send, diff_a, diff_b) in [
                    (NodeRef::Event(ev), NodeRef::Entity(ent), e_var, v_var),
                    (NodeRef::Entity(ent), NodeRef::Event(ev), v_var, e_var),
                ] {
                    let diff = self.tape.sub(diff_a, diff_b)?;
                    let cat = self.tape.concat(diff, a_vec)?;
                    let lin = self.tape.matvec(w_arg, cat)?;
                    let msg = self.tape.relu(lin);
                    msgs.push(Msg {
                        receiver: recv,
                        sender: send,
                        msg,
                    });
                }
            }

            // Typed relation edges, plus virtual entity-entity edges with
            // the reserved untyped vector.
            let mut entity_pairs: Vec<(usize, usize, usize)> = self
                .rel_edges
                .iter()
                .map(|r| (r.a, r.b, r.ty))
                .collect();
            if let Some(p) = &self.pending {
                if p.entity_virtuals_active {
                    let virtual_row = self.params.n_relation_types;
                    let priors = self.prior_entities();
                    for &ph in &p.placeholders {
                        if !self.entities[ph].alive {
                            continue;
                        }
                        for &pe in &priors {
                            entity_pairs.push((ph, pe, virtual_row));
                        }
                    }
                }
            }
            for (a, b, ty) in entity_pairs {
                let r_vec = self.tape.select_row(rel_table, ty);
                let a_var = self.entities[a].var;
                let b_var = self.entities[b].var;
                for (recv, send, x, y) in [
                    (NodeRef::Entity(a), NodeRef::Entity(b), a_var, b_var),
                    (NodeRef::Entity(b), NodeRef::Entity(a), b_var, a_var),
                ] {
                    let diff = self.tape.sub(x, y)?;
                    let cat = self.tape.concat(diff, r_vec)?;
                    let lin = self.tape.matvec(w_rel, cat)?;
                    let msg = self.tape.relu(lin);
                    msgs.push(Msg {
                        receiver: recv,
                        sender: send,
                        msg,
                    });
                }
            }

            // Temporal edges and virtual event-event edges share the
            // direction-aware form; both endpoints receive the same message.
            let mut event_pairs: Vec<(usize, usize)> = self.tmp_edges.clone();
            if let Some(p) = &self.pending {
                for prior in 0..p.event {
                    event_pairs.push((prior, p.event));
                }
            }
            for (before, after) in event_pairs {
                let b_var = self.events[before].var;
                let a_var = self.events[after].var;
                let wb = self.tape.matvec(w_bfr, b_var)?;
                let wa = self.tape.matvec(w_aft, a_var)?;
                let diff = self.tape.sub(wb, wa)?;
                let msg = self.tape.relu(diff);
                for (recv, send) in [
                    (NodeRef::Event(before), NodeRef::Event(after)),
                    (NodeRef::Event(after), NodeRef::Event(before)),
                ] {
                    msgs.push(Msg {
                        receiver: recv,
                        sender: send,
                        msg,
                    });
                }
            }

            // Attention-weighted aggregation, then a synchronous GRU update.
            let mut terms: std::collections::HashMap<NodeRef, Vec<VarId>> =
                std::collections::HashMap::new();
            for m in msgs {
                let rv = self.node_var(m.receiver);
                let sv = self.node_var(m.sender);
                let diff = self.tape.sub(rv, sv)?;
                let logit = mlp2(&mut self.tape, &att, diff)?;
                let alpha = self.tape.sigmoid(logit);
                let weighted = self.tape.scale(alpha, m.msg)?;
                terms.entry(m.receiver).or_default().push(weighted);
            }

            let d = self.params.hp.dim;
            let mut updates: Vec<(NodeRef, VarId)> = Vec::new();
            let nodes: Vec<NodeRef> = (0..self.events.len())
                .map(NodeRef::Event)
                .chain(
                    self.entities
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| e.alive)
                        .map(|(i, _)| NodeRef::Entity(i)),
                )
                .collect();
            for node in nodes {
                let old = self.node_var(node);
                let msg_sum = match terms.get(&node) {
                    Some(ts) => self.tape.sum_stack(ts)?,
                    None => self.tape.zeros(d),
                };
                let input = self.tape.concat(old, msg_sum)?;
                let new = gru_cell(&mut self.tape, &gru, input, old)?;
                updates.push((node, new));
            }
            for (node, var) in updates {
                match node {
                    NodeRef::Event(i) => self.events[i].var = var,
                    NodeRef::Entity(i) => self.entities[i].var = var,
                }
            }
        }
        Ok(())
    }

    /// Copy-mechanism distribution for one placeholder: log-probabilities
    /// over entity types followed by the existing entities of the prefix,
    /// all under one shared normalization. Returns the support alongside.
    pub fn argument_distribution(&mut self, placeholder: usize) -> Result<(VarId, Vec<ArgChoice>)> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Validation("no generation step in progress".into()))?;
        if !pending.placeholders.contains(&placeholder) {
            return Err(Error::Validation(
                "placeholder does not belong to the current step".into(),
            ));
        }
        let v_var = self.entities[placeholder].var;
        let ent_head = self.param("head.ent.w");
        let type_scores = self.tape.matvec(ent_head, v_var)?;

        let priors = self.prior_entities();
        let copy_w = self.param("head.copy.w");
        let mut copy_scores = Vec::with_capacity(priors.len());
        for &p in &priors {
            let proj = self.tape.matvec(copy_w, self.entities[p].var)?;
            copy_scores.push(self.tape.dot(proj, v_var)?);
        }
        let logits = if copy_scores.is_empty() {
            type_scores
        } else {
            let copies = self.tape.stack(&copy_scores)?;
            self.tape.concat(type_scores, copies)?
        };
        let log_probs = self.tape.log_softmax(logits);
        let mut support: Vec<ArgChoice> = (0..self.params.n_entity_types)
            .map(ArgChoice::NewType)
            .collect();
        support.extend(priors.into_iter().map(ArgChoice::Existing));
        Ok((log_probs, support))
    }

    /// Resolve one placeholder. Copy decisions may only target entities
    /// from earlier steps.
    pub fn apply_argument_decision(&mut self, placeholder: usize, decision: ArgChoice) -> Result<()> {
        let step = self.step;
        match decision {
            ArgChoice::NewType(t) => {
                if t >= self.params.n_entity_types {
                    return Err(Error::Validation(format!("unknown entity type index {t}")));
                }
                let embed = self.param("embed.entity");
                let row = self.tape.select_row(embed, t);
                let ent = &mut self.entities[placeholder];
                ent.ty = Some(t);
                let old = ent.var;
                let var = self.tape.add(old, row)?;
                self.entities[placeholder].var = var;
            }
            ArgChoice::Existing(target) => {
                if self.entities[target].created_step >= step || !self.entities[target].alive {
                    return Err(Error::Validation(
                        "copy decision references a same-step placeholder".into(),
                    ));
                }
                for edge in &mut self.arg_edges {
                    if edge.entity == placeholder {
                        edge.entity = target;
                    }
                }
                self.entities[placeholder].alive = false;
            }
        }
        Ok(())
    }

    /// Remove a placeholder without resolving it (role unfilled in the
    /// reference graph).
    pub(crate) fn drop_placeholder(&mut self, placeholder: usize) {
        self.entities[placeholder].alive = false;
        self.arg_edges.retain(|e| e.entity != placeholder);
    }

    /// Retarget a placeholder's edge onto an entity created this same step
    /// (duplicate gold filler); no factor is scored for the merge itself.
    pub(crate) fn merge_same_step(&mut self, placeholder: usize, target: usize) {
        for edge in &mut self.arg_edges {
            if edge.entity == placeholder {
                edge.entity = target;
            }
        }
        self.entities[placeholder].alive = false;
    }

    /// Relation-type distribution (with trailing no-relation class) between
    /// a newly generated entity and a prior entity.
    pub fn relation_distribution(&mut self, new_entity: usize, prior_entity: usize) -> Result<VarId> {
        if new_entity == prior_entity {
            return Err(Error::Validation(
                "relation distribution needs two distinct entities".into(),
            ));
        }
        let diff = {
            let a = self.entities[new_entity].var;
            let b = self.entities[prior_entity].var;
            self.tape.sub(a, b)?
        };
        let mlp = self.mlp_vars("head.rel");
        let logits = mlp2(&mut self.tape, &mlp, diff)?;
        Ok(self.tape.log_softmax(logits))
    }

    pub fn apply_relation(&mut self, x: usize, y: usize, rel_type: usize) {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        self.rel_edges.push(RelEdgeSt { a, b, ty: rel_type });
    }

    /// End the entity-virtual-edge phase: every (new entity, prior entity)
    /// pair has been typed or dismissed.
    pub(crate) fn resolve_entity_virtuals(&mut self) {
        if let Some(p) = &mut self.pending {
            p.entity_virtuals_active = false;
        }
    }

    /// Mixture-of-Bernoulli temporal probabilities for the pending event
    /// against the given candidate predecessors (normally every earlier
    /// event including SOG). Empty candidates yield an empty result.
    pub fn temporal_edge_probabilities(&mut self, candidates: &[usize]) -> Result<TemporalScores> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Validation("no generation step in progress".into()))?;
        let new_var = self.events[pending.event].var;
        let b = self.params.hp.mixtures;
        if candidates.is_empty() {
            let gamma = {
                let z = self.tape.zeros(b);
                self.tape.softmax(z)
            };
            return Ok(TemporalScores {
                gamma,
                pair_probs: Vec::new(),
            });
        }
        let gamma_mlp = self.mlp_vars("head.gamma");
        let theta_mlp = self.mlp_vars("head.theta");
        let mut gamma_terms = Vec::with_capacity(candidates.len());
        let mut thetas = Vec::with_capacity(candidates.len());
        for &cand in candidates {
            let diff = {
                let c_var = self.events[cand].var;
                self.tape.sub(new_var, c_var)?
            };
            gamma_terms.push(mlp2(&mut self.tape, &gamma_mlp, diff)?);
            let t_logits = mlp2(&mut self.tape, &theta_mlp, diff)?;
            thetas.push(self.tape.sigmoid(t_logits));
        }
        let gamma = {
            let s = self.tape.sum_stack(&gamma_terms)?;
            self.tape.softmax(s)
        };
        let mut pair_probs = Vec::with_capacity(candidates.len());
        for (&cand, theta) in candidates.iter().zip(thetas) {
            let p = self.tape.dot(gamma, theta)?;
            pair_probs.push((cand, p));
        }
        Ok(TemporalScores { gamma, pair_probs })
    }

    /// Candidate predecessors for the pending event: every earlier event,
    /// SOG first.
    pub fn temporal_candidates(&self) -> Vec<usize> {
        match &self.pending {
            Some(p) => (0..p.event).collect(),
            None => Vec::new(),
        }
    }

    pub fn add_temporal_edge(&mut self, before: usize, after: usize) {
        self.tmp_edges.push((before, after));
    }

    /// Close the pending step.
    pub fn finish_step(&mut self) -> Result<usize> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Validation("no generation step in progress".into()))?;
        self.step += 1;
        Ok(pending.event)
    }

    /// Alive entities created during the current step, in creation order.
    pub fn new_entities_this_step(&self) -> Vec<usize> {
        match &self.pending {
            None => Vec::new(),
            Some(_) => self
                .entities
                .iter()
                .enumerate()
                .filter(|(_, e)| e.alive && e.created_step == self.step)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Prior entities visible from the pending step, in creation order.
    pub fn copyable_entities(&self) -> Vec<usize> {
        self.prior_entities()
    }

    /// Export the generated structure as an instance graph. Boundary
    /// bookkeeping (the SOG node and its edges) is stripped; callers
    /// re-add boundary nodes canonically. Ids are `e{i}` / `v{j}`.
    pub fn to_graph(&self, graph_id: &str, complex_event_type: &str) -> crate::graph::InstanceGraph {
        use crate::graph::*;
        let event_id = |i: usize| -> String { format!("e{i}") };
        let events = self
            .events
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e.class {
                EventClass::Sog => None,
                EventClass::Type(t) => Some(EventNode {
                    id: event_id(i),
                    ty: self.ontology.event_type_name(t).to_string(),
                }),
            })
            .collect();
        let entities = self
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.alive && e.ty.is_some())
            .map(|(i, e)| EntityNode {
                id: format!("v{i}"),
                ty: self.ontology.entity_type_name(e.ty.unwrap()).to_string(),
            })
            .collect();
        let argument_edges = self
            .arg_edges
            .iter()
            .filter(|a| self.entities[a.entity].alive && self.entities[a.entity].ty.is_some())
            .map(|a| ArgumentEdge {
                event: event_id(a.event),
                role: self.ontology.role(a.role).role.clone(),
                entity: format!("v{}", a.entity),
            })
            .collect();
        let mut relation_edges: Vec<RelationEdge> = self
            .rel_edges
            .iter()
            .map(|r| {
                let (h, t) = (format!("v{}", r.a), format!("v{}", r.b));
                let (head, tail) = if h <= t { (h, t) } else { (t, h) };
                RelationEdge {
                    head,
                    ty: self.ontology.relation_type_name(r.ty).to_string(),
                    tail,
                }
            })
            .collect();
        relation_edges.sort_by(|a, b| (&a.head, &a.ty, &a.tail).cmp(&(&b.head, &b.ty, &b.tail)));
        relation_edges.dedup();
        let temporal_edges = self
            .tmp_edges
            .iter()
            .filter(|&&(b, a)| {
                !matches!(self.events[b].class, EventClass::Sog)
                    && !matches!(self.events[a].class, EventClass::Sog)
            })
            .map(|&(b, a)| TemporalEdge {
                before: event_id(b),
                after: event_id(a),
            })
            .collect();
        InstanceGraph {
            graph_id: graph_id.to_string(),
            complex_event_type: complex_event_type.to_string(),
            events,
            entities,
            argument_edges,
            relation_edges,
            temporal_edges,
        }
    }
}
