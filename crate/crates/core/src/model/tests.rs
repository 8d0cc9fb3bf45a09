use super::likelihood::teacher_force;
use super::*;
use crate::graph::{ingest_graph, InstanceGraph};
use crate::ontology::Ontology;
use crate::tape::{fd_compare, mlp2, MlpVars, Tape};

fn toy_ontology() -> Ontology {
    Ontology::load_str(
        r#"{
        "event_types": ["Attack", "Arrest", "Transport"],
        "entity_types": ["Person", "Place"],
        "relation_types": ["PartWhole"],
        "roles": [
            {"event": "Attack", "role": "Attacker"},
            {"event": "Attack", "role": "Place"},
            {"event": "Arrest", "role": "Detainee"},
            {"event": "Arrest", "role": "Place"}
        ]
    }"#,
    )
    .unwrap()
}

fn hp(dim: usize, mixtures: usize) -> Hyperparams {
    Hyperparams {
        dim,
        layers: 2,
        mixtures,
        arguments_enabled: true,
    }
}

fn arrest_after_attack(ont: &Ontology) -> InstanceGraph {
    let src = r#"{
        "graph_id": "toy",
        "complex_event_type": "test",
        "events": [{"id": "e1", "type": "Attack"}, {"id": "e2", "type": "Arrest"}],
        "entities": [
            {"id": "p1", "type": "Person"},
            {"id": "pl1", "type": "Place"},
            {"id": "pl2", "type": "Place"}
        ],
        "arguments": [
            {"event": "e1", "role": "Attacker", "entity": "p1"},
            {"event": "e1", "role": "Place", "entity": "pl1"},
            {"event": "e2", "role": "Detainee", "entity": "p1"},
            {"event": "e2", "role": "Place", "entity": "pl2"}
        ],
        "relations": [{"head": "pl1", "type": "PartWhole", "tail": "pl2"}],
        "temporal": [{"before": "e1", "after": "e2"}]
    }"#;
    ingest_graph(src, ont).unwrap().0
}

#[test]
fn zero_params_event_distribution_is_uniform() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let mut st = GenerationState::new(&params, &ont);
    let dist = st.event_distribution().unwrap();
    let expect = -(4f64).ln();
    for lp in st.tape.value(dist).values() {
        assert!((lp - expect).abs() < 1e-12);
    }
}

#[test]
fn pool_is_mean_over_event_nodes_only() {
    let ont = toy_ontology();
    let mut params = ModelParams::new(&ont, hp(4, 2), Init::Zeros);
    // SOG row = 1s (row index n_e), Attack row = 3s.
    let sog_row = params.sog_row();
    {
        let t = params.store.by_index_mut(params.store.index_of("embed.event").unwrap());
        for j in 0..4 {
            t.values_mut()[sog_row * 4 + j] = 1.0;
            t.values_mut()[j] = 3.0;
        }
    }
    let mut st = GenerationState::new(&params, &ont);
    let p0 = st.pool_graph().unwrap();
    assert_eq!(st.tape.value(p0).values(), &[1.0; 4]);
    // Placeholders from the expansion must not shift the pool.
    st.expand_event(0).unwrap();
    let p1 = st.pool_graph().unwrap();
    assert_eq!(st.tape.value(p1).values(), &[2.0; 4]);
}

#[test]
fn expand_event_creates_one_placeholder_per_role() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let mut st = GenerationState::new(&params, &ont);
    let ph = st.expand_event(ont.event_type_index("Arrest").unwrap()).unwrap();
    assert_eq!(ph.len(), 2);
    st.finish_step().unwrap();
    let ph = st.expand_event(ont.event_type_index("Transport").unwrap()).unwrap();
    assert!(ph.is_empty());
}

#[test]
fn argument_support_covers_types_plus_prior_entities() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let mut st = GenerationState::new(&params, &ont);
    let ph = st.expand_event(0).unwrap(); // Attack: 2 roles
    let (dist, support) = st.argument_distribution(ph[0]).unwrap();
    // No prior entities yet: types only, uniform under zero params.
    assert_eq!(support.len(), 2);
    for lp in st.tape.value(dist).values() {
        assert!((lp + (2f64).ln()).abs() < 1e-12);
    }
    st.apply_argument_decision(ph[0], ArgChoice::NewType(0)).unwrap();
    st.apply_argument_decision(ph[1], ArgChoice::NewType(1)).unwrap();
    st.resolve_entity_virtuals();
    st.finish_step().unwrap();

    let ph = st.expand_event(1).unwrap(); // Arrest: 2 roles
    let (dist, support) = st.argument_distribution(ph[0]).unwrap();
    // 2 types + 2 prior entities; same-step sibling placeholder excluded.
    assert_eq!(support.len(), 4);
    assert!(matches!(support[2], ArgChoice::Existing(_)));
    let total: f64 = st.tape.value(dist).values().iter().map(|lp| lp.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn copy_decision_rejects_same_step_placeholder() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let mut st = GenerationState::new(&params, &ont);
    let ph = st.expand_event(0).unwrap();
    let err = st.apply_argument_decision(ph[1], ArgChoice::Existing(ph[0]));
    assert!(err.is_err());
}

#[test]
fn zero_params_relation_distribution_is_uniform() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let mut st = GenerationState::new(&params, &ont);
    let ph = st.expand_event(0).unwrap();
    st.apply_argument_decision(ph[0], ArgChoice::NewType(0)).unwrap();
    st.apply_argument_decision(ph[1], ArgChoice::NewType(1)).unwrap();
    st.resolve_entity_virtuals();
    st.finish_step().unwrap();
    let ph = st.expand_event(1).unwrap();
    st.apply_argument_decision(ph[0], ArgChoice::NewType(0)).unwrap();
    let dist = st.relation_distribution(ph[0], 0).unwrap();
    // |R| + 1 = 2 classes
    for lp in st.tape.value(dist).values() {
        assert!((lp + (2f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn temporal_mixture_zero_params_gives_half() {
    let ont = toy_ontology();
    for mixtures in [1, 2] {
        let params = ModelParams::new(&ont, hp(8, mixtures), Init::Zeros);
        let mut st = GenerationState::new(&params, &ont);
        st.expand_event(2).unwrap();
        st.propagate().unwrap();
        let scores = st.temporal_edge_probabilities(&st.temporal_candidates()).unwrap();
        assert_eq!(scores.pair_probs.len(), 1);
        let gamma = st.tape.value(scores.gamma).values().to_vec();
        assert_eq!(gamma.len(), mixtures);
        for g in &gamma {
            assert!((g - 1.0 / mixtures as f64).abs() < 1e-12);
        }
        let p = st.tape.value(scores.pair_probs[0].1).item();
        assert!((p - 0.5).abs() < 1e-12);
    }
}

#[test]
fn temporal_single_mixture_matches_sigmoid_closed_form() {
    // With B = 1 the mixture weight is exactly 1, so each pair probability
    // must equal the sigmoid of its theta-MLP output.
    let ont = toy_ontology();
    let mut h = hp(6, 1);
    h.layers = 1;
    let params = ModelParams::new(&ont, h, Init::Seeded(99));
    let mut st = GenerationState::new(&params, &ont);
    st.expand_event(2).unwrap();
    st.propagate().unwrap();
    st.finish_step().unwrap();
    st.expand_event(0).unwrap();
    st.propagate().unwrap();
    st.resolve_entity_virtuals();
    st.propagate().unwrap();
    let cands = st.temporal_candidates();
    let scores = st.temporal_edge_probabilities(&cands).unwrap();

    let new_event = st.num_events() - 1;
    let e_new = st.event_latent(new_event).clone();
    for (cand, p_var) in &scores.pair_probs {
        let e_old = st.event_latent(*cand).clone();
        let mut tape = Tape::new();
        let a = tape.constant(e_new.clone());
        let b = tape.constant(e_old);
        let diff = tape.sub(a, b).unwrap();
        let mlp = MlpVars {
            w1: tape.param(&params.store, "head.theta.w1"),
            b1: tape.param(&params.store, "head.theta.b1"),
            w2: tape.param(&params.store, "head.theta.w2"),
            b2: tape.param(&params.store, "head.theta.b2"),
            w3: tape.param(&params.store, "head.theta.w3"),
            b3: tape.param(&params.store, "head.theta.b3"),
        };
        let logit = mlp2(&mut tape, &mlp, diff).unwrap();
        let theta = tape.sigmoid(logit);
        let expect = tape.value(theta).values()[0];
        let got = st.tape.value(*p_var).item();
        assert!(
            (got - expect).abs() < 1e-12,
            "pair ({cand}) mixture {got} vs closed form {expect}"
        );
    }
}

#[test]
fn empty_graph_likelihood_is_single_eog_factor() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    let g = InstanceGraph {
        graph_id: "empty".into(),
        complex_event_type: "test".into(),
        ..Default::default()
    };
    let score = graph_log_likelihood(&g, &params, &ont).unwrap();
    let expect = -(4f64).log2(); // |event types| + 1 classes
    assert!((score.log2_prob(FactorMode::Full) - expect).abs() < 1e-12);
    assert_eq!(score.factor_count(FactorMode::Full), 1);
}

#[test]
fn event_only_likelihood_dominates_full() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Seeded(3));
    let g = arrest_after_attack(&ont);
    let score = graph_log_likelihood(&g, &params, &ont).unwrap();
    assert!(score.log2_prob(FactorMode::EventOnly) >= score.log2_prob(FactorMode::Full));
    // breakdown must sum to the full total
    let b = &score.breakdown;
    let total = b.event_log2 + b.argument_log2 + b.relation_log2 + b.temporal_log2;
    assert!((total - score.log2_prob(FactorMode::Full)).abs() < 1e-6);
}

#[test]
fn likelihood_invariant_to_edge_order_on_disk() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Seeded(17));
    let g = arrest_after_attack(&ont);
    let mut shuffled = g.clone();
    shuffled.argument_edges.reverse();
    shuffled.relation_edges.reverse();
    shuffled.temporal_edges.reverse();
    let a = graph_log_likelihood(&g, &params, &ont).unwrap();
    let b = graph_log_likelihood(&shuffled, &params, &ont).unwrap();
    assert_eq!(
        a.log2_prob(FactorMode::Full).to_bits(),
        b.log2_prob(FactorMode::Full).to_bits()
    );
}

#[test]
fn teacher_forcing_reconstructs_gold_structure() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Seeded(1));
    let g = arrest_after_attack(&ont);
    let pass = teacher_force(&g, &params, &ont, true).unwrap();
    let rebuilt = pass.state.to_graph("rebuilt", "test");

    assert_eq!(rebuilt.events.len(), 2);
    // Coreference: Arrest's Detainee edge targets the same entity as
    // Attack's Attacker edge.
    let attacker = rebuilt
        .argument_edges
        .iter()
        .find(|a| a.role == "Attacker")
        .unwrap();
    let detainee = rebuilt
        .argument_edges
        .iter()
        .find(|a| a.role == "Detainee")
        .unwrap();
    assert_eq!(attacker.entity, detainee.entity);
    assert_eq!(rebuilt.entities.len(), 3);
    assert_eq!(rebuilt.relation_edges.len(), 1);
    assert_eq!(rebuilt.relation_edges[0].ty, "PartWhole");
    assert_eq!(rebuilt.temporal_edges.len(), 1);
}

#[test]
fn factor_counts_match_hand_derivation() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(6, 2), Init::Zeros);
    let g = arrest_after_attack(&ont);
    let score = graph_log_likelihood(&g, &params, &ont).unwrap();
    // events: Attack, Arrest, EOG
    assert_eq!(score.breakdown.event_count, 3);
    // arguments: 2 roles each
    assert_eq!(score.breakdown.argument_count, 4);
    // relations: step 2 introduces pl2 only (p1 copied); priors = {p1, pl1}
    assert_eq!(score.breakdown.relation_count, 2);
    // temporal: step1 vs SOG; step2 vs {SOG, e1}
    assert_eq!(score.breakdown.temporal_count, 3);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let ont = toy_ontology();
    let mut params = ModelParams::new(
        &ont,
        Hyperparams {
            dim: 5,
            layers: 2,
            mixtures: 2,
            arguments_enabled: true,
        },
        Init::Seeded(12),
    );
    let g = arrest_after_attack(&ont);
    let analytic = {
        let (state, loss, _) = nll_bits_recorded(&g, &params, &ont).unwrap();
        state.tape.backward(loss, &params.store).unwrap()
    };
    let ont2 = toy_ontology();
    let g2 = g.clone();
    let hp2 = params.hp.clone();
    let err = fd_compare(
        |s: &crate::tensor::ParamStore| {
            let mut p = ModelParams::new(&ont2, hp2.clone(), Init::Zeros);
            p.store = s.clone();
            let (_, _, score) = nll_bits_recorded(&g2, &p, &ont2)?;
            Ok(score.nll_bits(FactorMode::Full))
        },
        &mut params.store,
        &analytic,
        1e-5,
        250,
        7,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative gradient error {err}");
}

#[test]
fn next_event_probabilities_sum_to_one() {
    let ont = toy_ontology();
    let params = ModelParams::new(&ont, hp(8, 2), Init::Seeded(5));
    let g = arrest_after_attack(&ont);
    let probs = next_event_probabilities(&g, &params, &ont).unwrap();
    assert_eq!(probs.len(), 4);
    let total: f64 = probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn ablated_model_scores_events_and_temporal_only() {
    let ont = toy_ontology();
    let h = Hyperparams {
        dim: 8,
        layers: 2,
        mixtures: 2,
        arguments_enabled: false,
    };
    let params = ModelParams::new(&ont, h, Init::Seeded(2));
    let g = arrest_after_attack(&ont);
    let score = graph_log_likelihood(&g, &params, &ont).unwrap();
    assert_eq!(score.breakdown.argument_count, 0);
    assert_eq!(score.breakdown.relation_count, 0);
    assert_eq!(score.breakdown.event_count, 3);
    assert_eq!(score.breakdown.temporal_count, 3);
}

#[test]
fn head_arities_track_ontology_sizes() {
    let ont = toy_ontology();
    let p = ModelParams::new(&ont, hp(8, 2), Init::Zeros);
    assert_eq!(p.store.get("head.event.w").shape(), &[4, 8]);
    assert_eq!(p.store.get("head.ent.w").shape(), &[2, 8]);
    assert_eq!(p.store.get("head.rel.w3").shape(), &[2, 8]);
    assert_eq!(p.store.get("head.gamma.w3").shape(), &[2, 8]);
    assert_eq!(p.store.get("embed.event").shape(), &[4, 8]);
    assert_eq!(p.store.get("rel.vec").shape(), &[2, 8]);
    assert_eq!(p.store.get("role.vec").shape(), &[4, 8]);
}

#[test]
fn seeded_init_is_reproducible() {
    let ont = toy_ontology();
    let a = ModelParams::new(&ont, hp(8, 2), Init::Seeded(5));
    let b = ModelParams::new(&ont, hp(8, 2), Init::Seeded(5));
    for ((_, ta), (_, tb)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(ta.values(), tb.values());
    }
}
