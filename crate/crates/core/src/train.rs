//! Teacher-forced NLL training with validation-based model selection.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InstanceGraph;
use crate::model::{graph_log_likelihood, nll_bits_recorded, FactorMode, Hyperparams, Init, ModelParams};
use crate::ontology::Ontology;
use crate::parallel::par_map;
use crate::tensor::{Gradients, ParamStore, Tensor};

/// Parameter storage precision during training. Checkpoints always store
/// f32; training in `F32` keeps parameters f32-exact so checkpoints round
/// trip without loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub gradient_clip_norm: f64,
    pub precision: Precision,
    /// Stop after this many epochs without dev improvement.
    pub patience: Option<usize>,
    /// Worker threads for within-batch gradient computation; reduction
    /// order is fixed, so results do not depend on this.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            gradient_clip_norm: 5.0,
            precision: Precision::F64,
            patience: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll_bits: f64,
    pub dev_nll_bits: f64,
    pub wallclock_s: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were selected (0 = initialization).
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(store: &ParamStore) -> Adam {
        let zeros: Vec<Tensor> = (0..store.len())
            .map(|i| Tensor::zeros(store.by_index(i).shape().to_vec()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let g = grads.tensors[i].values();
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            let p = store.by_index_mut(i).values_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn graph_gradient(
    graph: &InstanceGraph,
    params: &ModelParams,
    ontology: &Ontology,
) -> Result<(Gradients, f64)> {
    let (state, loss, score) = nll_bits_recorded(graph, params, ontology)?;
    let nll = score.nll_bits(FactorMode::Full);
    if !nll.is_finite() {
        return Err(Error::NonFinite(format!("NLL of graph {}", graph.graph_id)));
    }
    let grads = state.tape.backward(loss, &params.store)?;
    Ok((grads, nll))
}

/// Mean corpus NLL in bits per graph.
pub fn corpus_nll_bits(
    graphs: &[InstanceGraph],
    params: &ModelParams,
    ontology: &Ontology,
    mode: FactorMode,
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Validation("empty graph set".into()));
    }
    let scores = par_map(graphs, |g| {
        graph_log_likelihood(g, params, ontology).map(|s| s.nll_bits(mode))
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / graphs.len() as f64)
}

/// Train on `train`, selecting the epoch with the best dev NLL (train NLL
/// when `dev` is empty). Deterministic given the config seed; the thread
/// count never changes results because gradient reduction order is fixed.
pub fn train(
    train: &[InstanceGraph],
    dev: &[InstanceGraph],
    ontology: &Ontology,
    hp: Hyperparams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    if config.learning_rate <= 0.0 {
        return Err(Error::Validation("learning rate must be positive".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Validation("batch size must be at least 1".into()));
    }
    for g in train.iter().chain(dev.iter()) {
        g.validate(ontology)?;
    }

    let mut params = ModelParams::new(ontology, hp, Init::Seeded(config.seed));
    if config.precision == Precision::F32 {
        params.store.quantize_f32();
    }
    let mut adam = Adam::new(&params.store);
    let mut shuffle_rng = rand::rngs::StdRng::seed_from_u64(config.seed.wrapping_add(0x5e1ec7));

    let mut log = Vec::with_capacity(config.epochs);
    let mut best_store = params.store.clone();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    let selection_set: &[InstanceGraph] = if dev.is_empty() { train } else { dev };
    // Selection baseline at initialization so the returned model can never
    // be worse than where training started.
    let mut best_metric = corpus_nll_bits(selection_set, &params, ontology, FactorMode::Full)?;

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_nll = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&InstanceGraph> = chunk.iter().map(|&i| &train[i]).collect();
            let results = crate::parallel::with_threads(config.threads, || {
                par_map(&batch, |g| graph_gradient(g, &params, ontology))
            });
            let mut total = params.store.zero_gradients();
            for r in results {
                let (g, nll) = r?;
                total.accumulate(&g);
                epoch_nll += nll;
            }
            let norm = total.global_norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite("batch gradient norm".into()));
            }
            if norm > config.gradient_clip_norm {
                total.scale(config.gradient_clip_norm / norm);
            }
            adam.step(&mut params.store, &total, config.learning_rate);
            if config.precision == Precision::F32 {
                params.store.quantize_f32();
            }
        }
        let train_nll = epoch_nll / train.len() as f64;
        let dev_nll = corpus_nll_bits(selection_set, &params, ontology, FactorMode::Full)?;
        log.push(EpochLog {
            epoch,
            train_nll_bits: train_nll,
            dev_nll_bits: dev_nll,
            wallclock_s: started.elapsed().as_secs_f64(),
        });
        if dev_nll < best_metric {
            best_metric = dev_nll;
            best_store = params.store.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if let Some(p) = config.patience {
                if since_best >= p {
                    break;
                }
            }
        }
    }

    params.store = best_store;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
    })
}

pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in log {
        out.push_str(&serde_json::to_string(row).expect("log row serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ingest_graph;

    fn ont() -> Ontology {
        Ontology::load_str(
            r#"{
            "event_types": ["A", "B", "C"],
            "entity_types": ["X"],
            "relation_types": ["R"],
            "roles": [{"event": "A", "role": "agent"}]
        }"#,
        )
        .unwrap()
    }

    fn chain(ont: &Ontology, id: &str) -> InstanceGraph {
        ingest_graph(
            &format!(
                r#"{{
            "graph_id": "{id}",
            "complex_event_type": "t",
            "events": [
                {{"id": "e1", "type": "A"}},
                {{"id": "e2", "type": "B"}},
                {{"id": "e3", "type": "C"}}
            ],
            "entities": [{{"id": "v1", "type": "X"}}],
            "arguments": [{{"event": "e1", "role": "agent", "entity": "v1"}}],
            "temporal": [
                {{"before": "e1", "after": "e2"}},
                {{"before": "e2", "after": "e3"}}
            ]
        }}"#
            ),
            ont,
        )
        .unwrap()
        .0
    }

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            dim: 8,
            layers: 1,
            mixtures: 2,
            arguments_enabled: true,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ont = ont();
        let graphs = vec![chain(&ont, "g1")];
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&graphs, &[], &ont, tiny_hp(), &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, 0);
        let fresh = ModelParams::new(&ont, tiny_hp(), Init::Seeded(cfg.seed));
        for ((_, a), (_, b)) in out.params.store.iter().zip(fresh.store.iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let ont = ont();
        let cfg = TrainConfig::default();
        assert!(train(&[], &[], &ont, tiny_hp(), &cfg).is_err());
    }

    #[test]
    fn training_reduces_nll() {
        let ont = ont();
        let graphs: Vec<InstanceGraph> = (0..4).map(|i| chain(&ont, &format!("g{i}"))).collect();
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 30,
            seed: 7,
            ..Default::default()
        };
        let out = train(&graphs, &[], &ont, tiny_hp(), &cfg).unwrap();
        let first = out.log.first().unwrap().train_nll_bits;
        let last = out.log.last().unwrap().train_nll_bits;
        assert!(
            last < first,
            "train NLL should drop: first {first}, last {last}"
        );
        // dev metric at the selected checkpoint never exceeds initialization
        let init = ModelParams::new(&ont, tiny_hp(), Init::Seeded(cfg.seed));
        let init_nll = corpus_nll_bits(&graphs, &init, &ont, FactorMode::Full).unwrap();
        let best_nll = corpus_nll_bits(&graphs, &out.params, &ont, FactorMode::Full).unwrap();
        assert!(best_nll <= init_nll);
    }

    #[test]
    fn seed_pins_the_training_log() {
        let ont = ont();
        let graphs: Vec<InstanceGraph> = (0..3).map(|i| chain(&ont, &format!("g{i}"))).collect();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            seed: 42,
            ..Default::default()
        };
        let a = train(&graphs, &[], &ont, tiny_hp(), &cfg).unwrap();
        let b = train(&graphs, &[], &ont, tiny_hp(), &cfg).unwrap();
        for (x, y) in a.log.iter().zip(b.log.iter()) {
            assert_eq!(x.train_nll_bits.to_bits(), y.train_nll_bits.to_bits());
            assert_eq!(x.dev_nll_bits.to_bits(), y.dev_nll_bits.to_bits());
        }
    }
}
