//! On-disk run state: archive of evaluated individuals, fitness cache,
//! generation snapshots, event log, and dataset export.
//!
//! Layout under the run's output directory:
//!
//! ```text
//! config.toml           copy of the run configuration
//! graphs/<digest>.graph one serialized graph per unique digest
//! archive.jsonl         one record per archived individual
//! cache.jsonl           digest -> scores (the evaluation cache)
//! events.jsonl          one record per evaluation event
//! generations/gen_NNN.json population digests after each generation
//! pareto.json           final front digests
//! ```

use crate::fitness::SeedScores;
use crate::graph::LossGraph;
use crate::hash::HashDigest;
use crate::nsga2::FitnessTuple;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("archive record: {0}")]
    Record(#[from] serde_json::Error),
    #[error("graph file: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("{0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub digest: String,
    pub phase: String,
    pub generation: u32,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub mutation: Option<String>,
    pub fitness: Vec<f64>,
    pub perf_scores: Vec<f64>,
    pub gen_scores: Vec<f64>,
    pub failed_seeds: Vec<bool>,
}

impl ArchiveRecord {
    pub fn fitness_tuple(&self) -> FitnessTuple {
        FitnessTuple(self.fitness.clone())
    }

    pub fn seed_scores(&self) -> SeedScores {
        SeedScores {
            perf: self.perf_scores.clone(),
            gen: self.gen_scores.clone(),
            failed: self.failed_seeds.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub event: String,
    pub digest: String,
    pub phase: String,
    pub seeds: Vec<u64>,
    pub fitness: Vec<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    digest: String,
    fitness: Vec<f64>,
    perf_scores: Vec<f64>,
    gen_scores: Vec<f64>,
    failed_seeds: Vec<bool>,
    #[serde(default)]
    signature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub generation: u32,
    pub population: Vec<String>,
}

/// Meta-training evaluation cache keyed by functional digest. Entries are
/// immutable once written. In debug builds the gradient signature is kept
/// and compared on every hit.
#[derive(Default)]
pub struct FitnessCache {
    entries: HashMap<HashDigest, (FitnessTuple, SeedScores)>,
    #[cfg(debug_assertions)]
    signatures: HashMap<HashDigest, Option<Vec<f64>>>,
    hits: u64,
}

impl FitnessCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn lookup(&mut self, digest: &HashDigest, graph: &LossGraph) -> Option<(FitnessTuple, SeedScores)> {
        let hit = self.entries.get(digest).cloned();
        if hit.is_some() {
            self.hits += 1;
            #[cfg(debug_assertions)]
            {
                let fresh = crate::hash::gradient_signature(graph);
                if let Some(stored) = self.signatures.get(digest) {
                    debug_assert_eq!(
                        stored.as_ref().map(|s| s.len()),
                        fresh.as_ref().map(|s| s.len()),
                        "cache signature length mismatch"
                    );
                    if let (Some(a), Some(b)) = (stored, &fresh) {
                        let same = a
                            .iter()
                            .zip(b)
                            .all(|(x, y)| crate::hash::quantize(*x) == crate::hash::quantize(*y));
                        debug_assert!(same, "cache hit with differing gradient signature");
                    }
                }
            }
            #[cfg(not(debug_assertions))]
            let _ = graph;
        }
        hit
    }

    pub fn insert(&mut self, digest: HashDigest, graph: &LossGraph, value: (FitnessTuple, SeedScores)) {
        #[cfg(debug_assertions)]
        self.signatures
            .entry(digest)
            .or_insert_with(|| crate::hash::gradient_signature(graph));
        #[cfg(not(debug_assertions))]
        let _ = graph;
        self.entries.entry(digest).or_insert(value);
    }

    pub fn contains(&self, digest: &HashDigest) -> bool {
        self.entries.contains_key(digest)
    }
}

/// Writer for one run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, ArchiveError> {
        fs::create_dir_all(root.join("graphs")).map_err(io_err(root))?;
        fs::create_dir_all(root.join("generations")).map_err(io_err(root))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn open(root: &Path) -> Result<Self, ArchiveError> {
        if !root.is_dir() {
            return Err(ArchiveError::Corrupt(format!(
                "{} is not a run directory",
                root.display()
            )));
        }
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_config_text(&self, text: &str) -> Result<(), ArchiveError> {
        let path = self.root.join("config.toml");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn write_graph(&self, digest: &HashDigest, graph: &LossGraph) -> Result<(), ArchiveError> {
        let path = self.root.join("graphs").join(format!("{}.graph", digest.hex()));
        if path.exists() {
            return Ok(());
        }
        fs::write(&path, graph.serialize()).map_err(io_err(&path))
    }

    pub fn load_graph(&self, digest_hex: &str) -> Result<LossGraph, ArchiveError> {
        let path = self.root.join("graphs").join(format!("{digest_hex}.graph"));
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(LossGraph::parse(&text)?.0)
    }

    fn append_line(&self, file: &str, line: &str) -> Result<(), ArchiveError> {
        let path = self.root.join(file);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{line}").map_err(io_err(&path))
    }

    pub fn append_archive(&self, record: &ArchiveRecord) -> Result<(), ArchiveError> {
        self.append_line("archive.jsonl", &serde_json::to_string(record)?)
    }

    pub fn append_event(&self, record: &EventRecord) -> Result<(), ArchiveError> {
        self.append_line("events.jsonl", &serde_json::to_string(record)?)
    }

    pub fn append_cache(
        &self,
        digest: &HashDigest,
        fitness: &FitnessTuple,
        scores: &SeedScores,
    ) -> Result<(), ArchiveError> {
        let record = CacheRecord {
            digest: digest.hex(),
            fitness: fitness.0.clone(),
            perf_scores: scores.perf.clone(),
            gen_scores: scores.gen.clone(),
            failed_seeds: scores.failed.clone(),
            signature: None,
        };
        self.append_line("cache.jsonl", &serde_json::to_string(&record)?)
    }

    pub fn load_cache(&self) -> Result<FitnessCache, ArchiveError> {
        let mut cache = FitnessCache::default();
        let path = self.root.join("cache.jsonl");
        if !path.exists() {
            return Ok(cache);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: CacheRecord = serde_json::from_str(line)?;
            let digest = HashDigest::from_hex(&rec.digest)
                .ok_or_else(|| ArchiveError::Corrupt(format!("bad digest {}", rec.digest)))?;
            let scores = SeedScores {
                perf: rec.perf_scores,
                gen: rec.gen_scores,
                failed: rec.failed_seeds,
            };
            cache
                .entries
                .insert(digest, (FitnessTuple(rec.fitness), scores));
        }
        Ok(cache)
    }

    pub fn load_archive(&self) -> Result<Vec<ArchiveRecord>, ArchiveError> {
        let path = self.root.join("archive.jsonl");
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(ArchiveError::Record))
            .collect()
    }

    pub fn write_generation(&self, snapshot: &GenerationSnapshot) -> Result<(), ArchiveError> {
        let path = self
            .root
            .join("generations")
            .join(format!("gen_{:03}.json", snapshot.generation));
        fs::write(&path, serde_json::to_string_pretty(snapshot)?).map_err(io_err(&path))
    }

    pub fn latest_generation(&self) -> Result<Option<GenerationSnapshot>, ArchiveError> {
        let dir = self.root.join("generations");
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<GenerationSnapshot> = None;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let text = fs::read_to_string(entry.path()).map_err(io_err(&dir))?;
            let snap: GenerationSnapshot = serde_json::from_str(&text)?;
            if best.as_ref().map_or(true, |b| snap.generation > b.generation) {
                best = Some(snap);
            }
        }
        Ok(best)
    }

    pub fn write_pareto(&self, digests: &[String]) -> Result<(), ArchiveError> {
        let path = self.root.join("pareto.json");
        fs::write(&path, serde_json::to_string_pretty(digests)?).map_err(io_err(&path))
    }

    pub fn load_pareto(&self) -> Result<Vec<String>, ArchiveError> {
        let path = self.root.join("pareto.json");
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Export the Pareto-front individuals as a dataset: one graph file per
/// member plus a CSV index. Deterministic, so re-export is byte-identical.
pub fn export_dataset(run: &RunDir, out: &Path) -> Result<usize, ArchiveError> {
    let records = run.load_archive()?;
    let mut front: Vec<String> = run.load_pareto()?;
    if front.is_empty() {
        // No stored front (e.g. interrupted run): recompute from archive.
        let fits: Vec<FitnessTuple> = records.iter().map(|r| r.fitness_tuple()).collect();
        if !fits.is_empty() {
            let fronts = crate::nsga2::non_dominated_sort(&fits);
            front = fronts[0].iter().map(|&i| records[i].digest.clone()).collect();
        }
    }
    front.sort();
    front.dedup();
    fs::create_dir_all(out.join("graphs")).map_err(io_err(out))?;
    let by_digest: HashMap<&str, &ArchiveRecord> = records
        .iter()
        .map(|r| (r.digest.as_str(), r))
        .collect();
    let mut index = String::from(
        "digest,f_perf,f_gen,perf_scores,gen_scores,failed_seeds,parent,generation,phase\n",
    );
    for digest in &front {
        let rec = by_digest
            .get(digest.as_str())
            .ok_or_else(|| ArchiveError::Corrupt(format!("front digest {digest} not archived")))?;
        let graph = run.load_graph(digest)?;
        let meta = vec![
            ("f_perf".to_string(), format!("{}", rec.fitness.first().copied().unwrap_or(0.0))),
            ("f_gen".to_string(), format!("{}", rec.fitness.get(1).copied().unwrap_or(0.0))),
            ("generation".to_string(), rec.generation.to_string()),
            ("phase".to_string(), rec.phase.clone()),
        ];
        let path = out.join("graphs").join(format!("{digest}.graph"));
        fs::write(&path, graph.serialize_with_meta(&meta)).map_err(io_err(&path))?;
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(";")
        };
        index.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            digest,
            rec.fitness.first().copied().unwrap_or(0.0),
            rec.fitness.get(1).copied().unwrap_or(0.0),
            join(&rec.perf_scores),
            join(&rec.gen_scores),
            rec.failed_seeds
                .iter()
                .map(|f| if *f { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(";"),
            rec.parent.clone().unwrap_or_default(),
            rec.generation,
            rec.phase,
        ));
    }
    let index_path = out.join("index.csv");
    fs::write(&index_path, index).map_err(io_err(&index_path))?;
    Ok(front.len())
}
