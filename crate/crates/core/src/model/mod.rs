//! The temporal event graph model: learned components and the per-step
//! probability factors of the autoregressive factorization.
//!
//! Generation is stepwise: predict the next event type from a pooled graph
//! representation, expand its argument placeholders, propagate an
//! edge-aware GNN, resolve each placeholder to a new entity type or an
//! existing entity (copy), type candidate relation edges, propagate again,
//! then score temporal edges against every earlier event with a mixture
//! of Bernoullis.

mod likelihood;
mod state;
#[cfg(test)]
mod tests;

pub use likelihood::{
    graph_log_likelihood, next_event_probabilities, nll_bits_recorded, FactorBreakdown,
    FactorKind, FactorMode, GraphScore,
};
pub use state::{ArgChoice, GenerationState, TemporalScores};

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::ontology::Ontology;
use crate::tensor::{ParamStore, Tensor};

/// Model shape knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Latent dimension d.
    pub dim: usize,
    /// GNN propagation layers per pass.
    pub layers: usize,
    /// Temporal Bernoulli mixture components B.
    pub mixtures: usize,
    /// When false, the model generates event nodes and temporal edges only
    /// (the argument-generation ablation).
    pub arguments_enabled: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 128,
            layers: 2,
            mixtures: 2,
            arguments_enabled: true,
        }
    }
}

/// How to initialize parameter values.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Seeded(u64),
}

/// All learnable weights, plus the ontology sizes the shapes derive from.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub hp: Hyperparams,
    pub store: ParamStore,
    pub(crate) n_event_types: usize,
    pub(crate) n_entity_types: usize,
    pub(crate) n_relation_types: usize,
    pub(crate) n_roles: usize,
    pub ontology_fingerprint: String,
}

impl ModelParams {
    pub fn new(ontology: &Ontology, hp: Hyperparams, init: Init) -> ModelParams {
        let d = hp.dim;
        let (n_e, n_v, n_r, n_a) = (
            ontology.num_event_types(),
            ontology.num_entity_types(),
            ontology.num_relation_types(),
            ontology.num_roles(),
        );
        let mut rng = match init {
            Init::Zeros => None,
            Init::Seeded(seed) => Some(rand::rngs::StdRng::seed_from_u64(seed)),
        };
        let mut store = ParamStore::new();
        let mut add = |name: String, shape: Vec<usize>, kind: ParamKind| {
            let t = match rng.as_mut() {
                None => Tensor::zeros(shape),
                Some(rng) => init_tensor(rng, shape, kind),
            };
            store.add(name, t);
        };

        // Last event-embedding row is SOG; last event-head row is EOG;
        // last relation vector is the untyped virtual edge.
        add("embed.event".into(), vec![n_e + 1, d], ParamKind::Embedding);
        add("embed.entity".into(), vec![n_v, d], ParamKind::Embedding);
        add("role.vec".into(), vec![n_a.max(1), d], ParamKind::Embedding);
        add("rel.vec".into(), vec![n_r + 1, d], ParamKind::Embedding);

        for l in 0..hp.layers {
            add(format!("gnn{l}.arg.w"), vec![d, 2 * d], ParamKind::Weight);
            add(format!("gnn{l}.rel.w"), vec![d, 2 * d], ParamKind::Weight);
            add(format!("gnn{l}.bfr.w"), vec![d, d], ParamKind::Weight);
            add(format!("gnn{l}.aft.w"), vec![d, d], ParamKind::Weight);
            for (w, shape) in [
                ("wr", vec![d, 2 * d]),
                ("ur", vec![d, d]),
                ("br", vec![d]),
                ("wz", vec![d, 2 * d]),
                ("uz", vec![d, d]),
                ("bz", vec![d]),
                ("wn", vec![d, 2 * d]),
                ("un", vec![d, d]),
                ("bn", vec![d]),
            ] {
                let kind = if shape.len() == 1 {
                    ParamKind::Bias
                } else {
                    ParamKind::Weight
                };
                add(format!("gnn{l}.gru.{w}"), shape, kind);
            }
        }

        for (name, rows) in [("att", 1), ("head.rel", n_r + 1)] {
            add_mlp(&mut add, name, d, rows);
        }
        add_mlp(&mut add, "head.gamma", d, hp.mixtures);
        add_mlp(&mut add, "head.theta", d, hp.mixtures);

        add("head.event.w".into(), vec![n_e + 1, d], ParamKind::Weight);
        add("head.ent.w".into(), vec![n_v, d], ParamKind::Weight);
        add("head.copy.w".into(), vec![d, d], ParamKind::Weight);

        ModelParams {
            hp,
            store,
            n_event_types: n_e,
            n_entity_types: n_v,
            n_relation_types: n_r,
            n_roles: n_a,
            ontology_fingerprint: ontology.fingerprint().to_string(),
        }
    }

    /// Row of the event embedding table used for SOG.
    pub(crate) fn sog_row(&self) -> usize {
        self.n_event_types
    }

    /// Class index of EOG in the event head.
    pub fn eog_class(&self) -> usize {
        self.n_event_types
    }

    /// Class index of the no-relation [O] outcome.
    pub fn other_relation_class(&self) -> usize {
        self.n_relation_types
    }

    pub fn matches_ontology(&self, ontology: &Ontology) -> bool {
        self.n_event_types == ontology.num_event_types()
            && self.n_entity_types == ontology.num_entity_types()
            && self.n_relation_types == ontology.num_relation_types()
            && self.n_roles == ontology.num_roles()
    }
}

enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

fn add_mlp(add: &mut impl FnMut(String, Vec<usize>, ParamKind), name: &str, d: usize, out: usize) {
    add(format!("{name}.w1"), vec![d, d], ParamKind::Weight);
    add(format!("{name}.b1"), vec![d], ParamKind::Bias);
    add(format!("{name}.w2"), vec![d, d], ParamKind::Weight);
    add(format!("{name}.b2"), vec![d], ParamKind::Bias);
    add(format!("{name}.w3"), vec![out, d], ParamKind::Weight);
    add(format!("{name}.b3"), vec![out], ParamKind::Bias);
}

fn init_tensor(rng: &mut impl Rng, shape: Vec<usize>, kind: ParamKind) -> Tensor {
    let n: usize = shape.iter().product();
    match kind {
        // Small nonzero biases keep ReLU preactivations off the exact kink,
        // where finite differences and the subgradient disagree.
        ParamKind::Bias => {
            let values = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
            Tensor::new(shape, values)
        }
        ParamKind::Weight => {
            // Xavier-uniform over (fan_in + fan_out).
            let (fan_out, fan_in) = (shape[0], shape[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
            Tensor::new(shape, values)
        }
        ParamKind::Embedding => {
            let d = *shape.last().unwrap() as f64;
            let std = 1.0 / d.sqrt();
            let dist = rand_distr::Normal::new(0.0, std).unwrap();
            let values = (0..n).map(|_| rng.sample(dist)).collect();
            Tensor::new(shape, values)
        }
    }
}
