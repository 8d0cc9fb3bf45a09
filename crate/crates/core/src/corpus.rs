//! Corpus layout on disk: a directory of instance-graph files plus a
//! manifest naming the train/dev/test splits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ingest_graph_path, InstanceGraph};
use crate::ontology::{byte_offset, Ontology};

pub const MANIFEST_NAME: &str = "manifest.json";

/// File lists per split, relative to the corpus directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub dev: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other}"))),
        }
    }
}

/// Loaded corpus: validated graphs per split.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<InstanceGraph>,
    pub dev: Vec<InstanceGraph>,
    pub test: Vec<InstanceGraph>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[InstanceGraph] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &InstanceGraph> {
        self.train.iter().chain(self.dev.iter()).chain(self.test.iter())
    }
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let source = std::fs::read_to_string(&path)?;
    serde_json::from_str(&source)
        .map_err(|e| Error::parse(Some(&path), byte_offset(&source, &e), e.to_string()))
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

/// Load every split listed in the directory's manifest. Returns the corpus
/// plus ingestion warnings, prefixed by file name.
pub fn load_corpus(dir: &Path, ontology: &Ontology) -> Result<(Corpus, Vec<String>)> {
    let manifest = load_manifest(dir)?;
    let mut corpus = Corpus::default();
    let mut warnings = Vec::new();
    for (names, out) in [
        (&manifest.train, &mut corpus.train),
        (&manifest.dev, &mut corpus.dev),
        (&manifest.test, &mut corpus.test),
    ] {
        for name in names {
            let path = dir.join(name);
            let (graph, ws) = ingest_graph_path(&path, ontology)?;
            warnings.extend(ws.into_iter().map(|w| format!("{name}: {w}")));
            out.push(graph);
        }
    }
    Ok((corpus, warnings))
}

/// Write graphs as `g{i:04}.json` under `dir` and produce a manifest with
/// the given split fractions (remainder goes to test).
pub fn write_corpus(
    dir: &Path,
    graphs: &[InstanceGraph],
    dev_fraction: f64,
    test_fraction: f64,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    let n = graphs.len();
    let n_dev = (n as f64 * dev_fraction).floor() as usize;
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let n_train = n.saturating_sub(n_dev + n_test);
    for (i, g) in graphs.iter().enumerate() {
        let name = format!("g{i:04}.json");
        let json = serde_json::to_string_pretty(g).expect("graph serializes");
        std::fs::write(dir.join(&name), json)?;
        if i < n_train {
            manifest.train.push(name);
        } else if i < n_train + n_dev {
            manifest.dev.push(name);
        } else {
            manifest.test.push(name);
        }
    }
    save_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Resolve a corpus argument that may be a directory (with manifest) or a
/// single graph file.
pub fn load_graphs_arg(path: &Path, ontology: &Ontology) -> Result<(Vec<InstanceGraph>, Vec<String>)> {
    if path.is_dir() {
        let (corpus, warnings) = load_corpus(path, ontology)?;
        let mut all = corpus.train;
        all.extend(corpus.dev);
        all.extend(corpus.test);
        Ok((all, warnings))
    } else {
        let (g, warnings) = ingest_graph_path(path, ontology)?;
        Ok((vec![g], warnings))
    }
}

pub fn graph_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().map(|x| x == "json").unwrap_or(false)
                && p.file_name().map(|n| n != MANIFEST_NAME).unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip() {
        let ont = Ontology::load_str(
            r#"{
            "event_types": ["A", "B"],
            "entity_types": ["X"],
            "relation_types": ["R"],
            "roles": []
        }"#,
        )
        .unwrap();
        let graphs: Vec<InstanceGraph> = (0..10)
            .map(|i| InstanceGraph {
                graph_id: format!("g{i}"),
                complex_event_type: "t".into(),
                events: vec![
                    crate::graph::EventNode {
                        id: "e1".into(),
                        ty: "A".into(),
                    },
                    crate::graph::EventNode {
                        id: "e2".into(),
                        ty: "B".into(),
                    },
                ],
                temporal_edges: vec![crate::graph::TemporalEdge {
                    before: "e1".into(),
                    after: "e2".into(),
                }],
                ..Default::default()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &graphs, 0.2, 0.2).unwrap();
        assert_eq!(manifest.train.len(), 6);
        assert_eq!(manifest.dev.len(), 2);
        assert_eq!(manifest.test.len(), 2);
        let (corpus, warnings) = load_corpus(dir.path(), &ont).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(corpus.train.len(), 6);
        assert_eq!(corpus.train[0].graph_id, "g0");
        assert_eq!(corpus.test[1].graph_id, "g9");
    }
}
