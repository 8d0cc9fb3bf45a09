//! Command-line surface for schema induction: corpus ingestion and
//! synthesis, model training, schema decoding/sampling, intrinsic and
//! extrinsic evaluation, and the pattern-mining baseline.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tegs_core::checkpoint::{load_checkpoint, save_checkpoint};
use tegs_core::corpus;
use tegs_core::decode::{decode_schema, sample_graphs, DecodeLimits};
use tegs_core::error::Error;
use tegs_core::eval;
use tegs_core::graph::{self, InstanceGraph, SchemaGraph};
use tegs_core::miner;
use tegs_core::model::{FactorMode, Hyperparams, Init, ModelParams};
use tegs_core::ontology::Ontology;
use tegs_core::parallel::with_threads;
use tegs_core::synth;
use tegs_core::tape;
use tegs_core::train::{self, Precision, TrainConfig};

const ONTOLOGY_ENV: &str = "TEGS_ONTOLOGY";

#[derive(Parser)]
#[command(name = "tegs", version, about = "Temporal event graph schema induction")]
struct Cli {
    /// Worker threads for parallelizable stages (0 = all cores). Outputs
    /// never depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OntologyArg {
    /// Ontology file (defaults to $TEGS_ONTOLOGY).
    #[arg(long)]
    ontology: Option<PathBuf>,
}

impl OntologyArg {
    fn load(&self) -> Result<Ontology, Error> {
        let path = match &self.ontology {
            Some(p) => p.clone(),
            None => std::env::var_os(ONTOLOGY_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "no --ontology given and {ONTOLOGY_ENV} is not set"
                    ))
                })?,
        };
        Ontology::load_path(&path)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize instance graphs.
    Ingest {
        #[command(flatten)]
        ontology: OntologyArg,
        /// Graph file or corpus directory (with manifest).
        #[arg(long)]
        input: PathBuf,
        /// Output file (single graph) or directory (corpus).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a planted-schema corpus.
    Synth {
        #[command(flatten)]
        ontology: OntologyArg,
        /// Built-in template name (ied, ied-bomb, ied-vehicle) or a path.
        #[arg(long, default_value = "ied")]
        template: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        dev_fraction: f64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the ontology used by the built-in templates.
    SynthOntology {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the graph model.
    Train {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        mixtures: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5.0)]
        clip: f64,
        #[arg(long)]
        patience: Option<usize>,
        /// f64 or f32 parameter storage.
        #[arg(long, default_value = "f32")]
        precision: String,
        /// Disable argument/relation generation (ablation).
        #[arg(long)]
        no_arguments: bool,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training log (JSON lines), one row per epoch.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy-decode the schema from a checkpoint.
    Decode {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_events: usize,
        #[arg(long, default_value_t = 0.5)]
        temporal_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample schema graphs from a checkpoint.
    Sample {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_events: usize,
        /// Output file (count=1) or directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Instance-graph perplexity of a corpus split.
    EvalPpl {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// full or event
        #[arg(long, default_value = "full")]
        mode: String,
        /// per_graph or per_factor
        #[arg(long, default_value = "per_graph")]
        normalization: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schema matching metrics between two schema files.
    EvalMatch {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Use transitive-closure sequences instead of consecutive paths.
        #[arg(long)]
        transitive: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schema-guided ending-event prediction with the model.
    Predict {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine frequent event-type patterns (and optionally a chain schema).
    BaselineMine {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 2)]
        min_support: usize,
        #[arg(long, default_value_t = 10)]
        walks_per_node: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also emit the chain schema built from the longest top pattern.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Ending-event prediction with mined patterns.
    BaselinePredict {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_paths: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the full model.
    Gradcheck {
        #[command(flatten)]
        ontology: OntologyArg,
        /// Graph to check on; a synthetic 3-event chain when omitted.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        mixtures: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 250)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    match with_threads(threads, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn split_graphs(corpus: &corpus::Corpus, split: &str) -> Result<Vec<InstanceGraph>, Error> {
    let s: corpus::Split = split.parse()?;
    let graphs = corpus.split(s).to_vec();
    if graphs.is_empty() {
        return Err(Error::Validation(format!("split {split} is empty")));
    }
    Ok(graphs)
}

fn load_schema_file(path: &Path) -> Result<SchemaGraph, Error> {
    let source = std::fs::read_to_string(path)?;
    serde_json::from_str(&source).map_err(|e| Error::Parse {
        path: Some(path.display().to_string()),
        offset: None,
        msg: e.to_string(),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializes"))?;
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Ingest { ontology, input, out } => {
            let ont = ontology.load()?;
            if input.is_dir() {
                std::fs::create_dir_all(&out)?;
                let manifest = corpus::load_manifest(&input)?;
                for name in manifest.train.iter().chain(&manifest.dev).chain(&manifest.test) {
                    let (g, warnings) = graph::ingest_graph_path(&input.join(name), &ont)?;
                    for w in warnings {
                        eprintln!("warning: {name}: {w}");
                    }
                    graph::write_graph(&g, &out.join(name))?;
                }
                corpus::save_manifest(&out, &manifest)?;
                println!("ingested corpus to {}", out.display());
            } else {
                let (g, warnings) = graph::ingest_graph_path(&input, &ont)?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                graph::write_graph(&g, &out)?;
                println!("ingested graph {} to {}", g.graph_id, out.display());
            }
            Ok(())
        }
        Command::Synth {
            ontology,
            template,
            count,
            seed,
            dev_fraction,
            test_fraction,
            out,
        } => {
            let ont = ontology.load()?;
            let schema = match synth::builtin_template(&template) {
                Some(s) => s,
                None => synth::PlantedSchema::load_path(Path::new(&template))?,
            };
            println!("seed: {seed}");
            let (graphs, alignments) = synth::generate_corpus(&schema, &ont, count, seed)?;
            corpus::write_corpus(&out, &graphs, dev_fraction, test_fraction)?;
            synth::write_alignments(&alignments, &out.join("alignment.jsonl"))?;
            println!("wrote {} graphs to {}", graphs.len(), out.display());
            Ok(())
        }
        Command::SynthOntology { out } => {
            std::fs::write(&out, synth::ied_ontology_source())?;
            println!("wrote template ontology to {}", out.display());
            Ok(())
        }
        Command::Train {
            ontology,
            corpus: corpus_dir,
            lr,
            dim,
            layers,
            mixtures,
            epochs,
            batch_size,
            seed,
            clip,
            patience,
            precision,
            no_arguments,
            out,
            log,
        } => {
            let ont = ontology.load()?;
            let (corpus, warnings) = corpus::load_corpus(&corpus_dir, &ont)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let hp = Hyperparams {
                dim,
                layers,
                mixtures,
                arguments_enabled: !no_arguments,
            };
            let precision = match precision.as_str() {
                "f64" => Precision::F64,
                "f32" => Precision::F32,
                other => return Err(Error::Validation(format!("unknown precision {other}"))),
            };
            let config = TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                gradient_clip_norm: clip,
                precision,
                patience,
                threads: 0, // inherit the surrounding pool
            };
            println!("seed: {seed}");
            let outcome = train::train(&corpus.train, &corpus.dev, &ont, hp, &config)?;
            for row in &outcome.log {
                println!(
                    "epoch {:4}  train {:10.4}  dev {:10.4}  ({:.1}s)",
                    row.epoch, row.train_nll_bits, row.dev_nll_bits, row.wallclock_s
                );
            }
            println!("best epoch: {}", outcome.best_epoch);
            save_checkpoint(&outcome.params, &out)?;
            println!("checkpoint: {}", out.display());
            if let Some(log_path) = log {
                train::write_training_log(&outcome.log, &log_path)?;
            }
            Ok(())
        }
        Command::Decode {
            ontology,
            checkpoint,
            max_events,
            temporal_threshold,
            out,
        } => {
            let ont = ontology.load()?;
            if max_events == 0 {
                return Err(Error::Validation("max-events must be at least 1".into()));
            }
            let params = load_checkpoint(&checkpoint, &ont)?;
            let schema = decode_schema(
                &params,
                &ont,
                DecodeLimits {
                    max_events,
                    temporal_threshold,
                },
            )?;
            let n = schema.graph.real_events().count();
            write_json(&schema, &out)?;
            println!("decoded schema with {n} events to {}", out.display());
            Ok(())
        }
        Command::Sample {
            ontology,
            checkpoint,
            count,
            seed,
            max_events,
            out,
        } => {
            let ont = ontology.load()?;
            let params = load_checkpoint(&checkpoint, &ont)?;
            println!("seed: {seed}");
            let limits = DecodeLimits {
                max_events,
                temporal_threshold: 0.5,
            };
            let samples = sample_graphs(&params, &ont, seed, count, limits)?;
            if count == 1 {
                write_json(&samples[0], &out)?;
            } else {
                std::fs::create_dir_all(&out)?;
                for (i, s) in samples.iter().enumerate() {
                    write_json(s, &out.join(format!("sample{i:04}.json")))?;
                }
            }
            println!("sampled {count} graphs to {}", out.display());
            Ok(())
        }
        Command::EvalPpl {
            ontology,
            checkpoint,
            corpus: corpus_dir,
            split,
            mode,
            normalization,
            out,
        } => {
            let ont = ontology.load()?;
            let params = load_checkpoint(&checkpoint, &ont)?;
            let (corpus, _) = corpus::load_corpus(&corpus_dir, &ont)?;
            let graphs = split_graphs(&corpus, &split)?;
            let mode = parse_mode(&mode)?;
            let norm = match normalization.as_str() {
                "per_graph" => eval::Normalization::PerGraph,
                "per_factor" => eval::Normalization::PerFactor,
                other => return Err(Error::Validation(format!("unknown normalization {other}"))),
            };
            let pp = eval::perplexity(&params, &ont, &graphs, mode, norm)?;
            println!("metric          value");
            println!("perplexity   {pp:>10.4}");
            if let Some(path) = out {
                write_json(
                    &serde_json::json!({
                        "metric": "perplexity",
                        "mode": mode_name(mode),
                        "normalization": normalization,
                        "graphs": graphs.len(),
                        "value": pp,
                    }),
                    &path,
                )?;
            }
            Ok(())
        }
        Command::EvalMatch {
            ontology,
            pred,
            gold,
            transitive,
            out,
        } => {
            let pred = load_schema_file(&pred)?;
            let gold = load_schema_file(&gold)?;
            if let Ok(ont) = ontology.load() {
                pred.graph.validate(&ont)?;
                gold.graph.validate(&ont)?;
            }
            let report = eval::match_schemas(&pred.graph, &gold.graph, transitive);
            println!("metric                 p       r      f1");
            println!(
                "event match       {:6.3}  {:6.3}  {:6.3}",
                report.event.precision, report.event.recall, report.event.f1
            );
            println!(
                "sequence l=2      {:6.3}  {:6.3}  {:6.3}",
                report.sequence2.precision, report.sequence2.recall, report.sequence2.f1
            );
            println!(
                "sequence l=3      {:6.3}  {:6.3}  {:6.3}",
                report.sequence3.precision, report.sequence3.recall, report.sequence3.f1
            );
            println!("connection macro F1       {:6.3}", report.connection.macro_f1);
            if let Some(path) = out {
                write_json(&report, &path)?;
            }
            Ok(())
        }
        Command::Predict {
            ontology,
            checkpoint,
            corpus: corpus_dir,
            split,
            out,
        } => {
            let ont = ontology.load()?;
            let params = load_checkpoint(&checkpoint, &ont)?;
            let (corpus, _) = corpus::load_corpus(&corpus_dir, &ont)?;
            let graphs = split_graphs(&corpus, &split)?;
            let report = eval::predict_report(&params, &ont, &graphs)?;
            println!("metric      value");
            println!("MRR      {:8.4}", report.mrr);
            println!("HITS@1   {:8.4}", report.hits_at_1);
            if let Some(path) = out {
                write_json(&report, &path)?;
            }
            Ok(())
        }
        Command::BaselineMine {
            ontology,
            corpus: corpus_dir,
            split,
            min_support,
            walks_per_node,
            seed,
            out,
            schema_out,
        } => {
            let ont = ontology.load()?;
            let (corpus, _) = corpus::load_corpus(&corpus_dir, &ont)?;
            let graphs = split_graphs(&corpus, &split)?;
            println!("seed: {seed}");
            let db = miner::extract_sequences(&graphs, seed, walks_per_node);
            let patterns = miner::mine_patterns(&db, min_support)?;
            println!(
                "mined {} patterns from {} walks",
                patterns.len(),
                db.sequences.len()
            );
            for p in patterns.iter().take(10) {
                println!("  {:5}  {}", p.support, p.pattern.join(" -> "));
            }
            miner::write_patterns(&patterns, &out)?;
            if let Some(path) = schema_out {
                let mut ranked = patterns.clone();
                ranked.sort_by(|a, b| {
                    b.pattern
                        .len()
                        .cmp(&a.pattern.len())
                        .then(b.support.cmp(&a.support))
                        .then(a.pattern.cmp(&b.pattern))
                });
                let schema = miner::baseline_schema(&ranked, &graphs, &ont)?;
                write_json(&schema, &path)?;
                println!("chain schema: {}", path.display());
            }
            Ok(())
        }
        Command::BaselinePredict {
            ontology,
            patterns,
            corpus: corpus_dir,
            split,
            seed,
            max_paths,
            out,
        } => {
            let ont = ontology.load()?;
            let patterns = miner::load_patterns(&patterns)?;
            let (corpus, _) = corpus::load_corpus(&corpus_dir, &ont)?;
            let graphs = split_graphs(&corpus, &split)?;
            println!("seed: {seed}");
            let mut rows = Vec::new();
            let mut fallbacks = 0usize;
            for g in &graphs {
                let (truncated, endings) = eval::hold_out_ending_events(g)?;
                let pred = miner::baseline_predict(&patterns, &truncated, &ont, seed, max_paths)?;
                if pred.fallback {
                    fallbacks += 1;
                }
                let correct: HashSet<&str> = endings.iter().map(String::as_str).collect();
                rows.push(eval::score_ranking(&g.graph_id, &pred.ranking, &correct));
            }
            let report = eval::aggregate_reports(rows)?;
            println!("metric      value");
            println!("MRR      {:8.4}", report.mrr);
            println!("HITS@1   {:8.4}", report.hits_at_1);
            if fallbacks > 0 {
                println!("uniform fallback on {fallbacks} graphs");
            }
            if let Some(path) = out {
                write_json(&report, &path)?;
            }
            Ok(())
        }
        Command::Gradcheck {
            ontology,
            graph,
            dim,
            layers,
            mixtures,
            seed,
            epsilon,
            coords,
            tolerance,
        } => {
            let ont = ontology.load()?;
            let g = match graph {
                Some(path) => graph::ingest_graph_path(&path, &ont)?.0,
                None => synthetic_check_graph(&ont),
            };
            println!("seed: {seed}");
            let hp = Hyperparams {
                dim,
                layers,
                mixtures,
                arguments_enabled: true,
            };
            let mut params = ModelParams::new(&ont, hp.clone(), Init::Seeded(seed));
            let analytic = {
                let (state, loss, _) = tegs_core::model::nll_bits_recorded(&g, &params, &ont)?;
                state.tape.backward(loss, &params.store)?
            };
            let ont2 = ont.clone();
            let g2 = g.clone();
            let err = tape::fd_compare(
                move |s| {
                    let mut p = ModelParams::new(&ont2, hp.clone(), Init::Zeros);
                    p.store = s.clone();
                    let (_, _, score) = tegs_core::model::nll_bits_recorded(&g2, &p, &ont2)?;
                    Ok(score.nll_bits(FactorMode::Full))
                },
                &mut params.store,
                &analytic,
                epsilon,
                coords,
                seed,
            )?;
            println!("max relative gradient error: {err:.3e} over {coords} coordinates");
            if err < tolerance {
                println!("gradcheck PASS (tolerance {tolerance:.1e})");
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "gradcheck FAIL: {err:.3e} exceeds tolerance {tolerance:.1e}"
                )))
            }
        }
    }
}

fn parse_mode(mode: &str) -> Result<FactorMode, Error> {
    match mode {
        "full" => Ok(FactorMode::Full),
        "event" | "event_only" => Ok(FactorMode::EventOnly),
        other => Err(Error::Validation(format!("unknown mode {other}"))),
    }
}

fn mode_name(mode: FactorMode) -> &'static str {
    match mode {
        FactorMode::Full => "full",
        FactorMode::EventOnly => "event",
    }
}

/// Deterministic 3-event chain over the ontology's first event types, with
/// every role filled by a fresh entity of its first allowed type.
fn synthetic_check_graph(ontology: &Ontology) -> InstanceGraph {
    let mut g = InstanceGraph {
        graph_id: "gradcheck".into(),
        complex_event_type: "synthetic".into(),
        ..Default::default()
    };
    let n = ontology.num_event_types();
    for i in 0..3 {
        let ty_idx = i % n;
        let ty = ontology.event_type_name(ty_idx).to_string();
        let id = format!("e{i}");
        g.events.push(tegs_core::graph::EventNode { id: id.clone(), ty });
        if i > 0 {
            g.temporal_edges.push(tegs_core::graph::TemporalEdge {
                before: format!("e{}", i - 1),
                after: id.clone(),
            });
        }
        for &role_g in ontology.role_indices_of(ty_idx) {
            let role = ontology.role(role_g);
            let ent_ty = role
                .allowed_entity_types
                .first()
                .cloned()
                .unwrap_or_else(|| ontology.entity_types()[0].clone());
            let vid = format!("v{}", g.entities.len());
            g.entities.push(tegs_core::graph::EntityNode {
                id: vid.clone(),
                ty: ent_ty,
            });
            g.argument_edges.push(tegs_core::graph::ArgumentEdge {
                event: id.clone(),
                role: role.role.clone(),
                entity: vid,
            });
        }
    }
    g
}
