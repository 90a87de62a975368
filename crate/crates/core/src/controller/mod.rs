//! End-to-end orchestration: population initialization from the warm
//! start, hurdle-gated parallel evaluation with hash caching, the NSGA-II
//! generational loop, the meta-validation and meta-testing phases, and full
//! persistence of everything evaluated.
//!
//! Determinism: every stream of randomness is keyed by content — offspring
//! by (master seed, generation), training by (master seed, phase, digest,
//! seed) — never by arrival order, so runs reproduce at any worker count.

pub mod archive;
pub mod config;

pub use archive::{export_dataset, ArchiveError, ArchiveRecord, EventRecord, FitnessCache, RunDir};
pub use config::{ConfigError, EnvSpec, HurdleSpec, RunConfig};

use crate::envs::EnvSet;
use crate::fitness::{fitness_tuple, raw_generalizability, raw_performance, SeedScores};
use crate::graph::{EnvDims, LossGraph};
use crate::hash::{functional_hash, HashDigest};
use crate::mutation::{pad_to_max, MutationConfig};
use crate::nsga2::{non_dominated_sort, offspring, rank_and_select, rank_population, FitnessTuple};
use crate::parallel::{par_map, with_workers};
use crate::rng::{mix_bytes, RngStream};
use crate::trainer::{evaluate_policy, train, TrainerConfig};
use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;
use thiserror::Error;

/// Shape-check batch size for validation (symbolic; any value works).
const CHECK_BATCH: usize = 4;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    State(String),
}

#[derive(Debug, Clone)]
pub struct Lineage {
    pub parent: Option<String>,
    pub generation: u32,
    pub mutation: Option<String>,
}

/// Unit of the population: a graph plus its digest, scores, and ancestry.
#[derive(Debug, Clone)]
pub struct Individual {
    pub graph: LossGraph,
    pub digest: HashDigest,
    pub fitness: Option<FitnessTuple>,
    pub seed_scores: Option<SeedScores>,
    pub lineage: Lineage,
}

impl Individual {
    pub fn new(graph: LossGraph, lineage: Lineage) -> Self {
        let digest = functional_hash(&graph);
        Individual {
            graph,
            digest,
            fitness: None,
            seed_scores: None,
            lineage,
        }
    }

    pub fn fitness(&self) -> FitnessTuple {
        self.fitness.clone().unwrap_or_else(|| FitnessTuple::failed(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    MetaTrain,
    MetaValidate,
    MetaTest,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::MetaTrain => "meta-train",
            Phase::MetaValidate => "meta-validate",
            Phase::MetaTest => "meta-test",
        }
    }
}

/// Outcome of evaluating one individual.
#[derive(Debug, Clone)]
struct EvalOutcome {
    fitness: FitnessTuple,
    scores: SeedScores,
    event: &'static str,
    wall_ms: u64,
}

/// What a finished meta-training run hands back.
#[derive(Debug)]
pub struct RunResult {
    pub population: Vec<Individual>,
    /// Digests on the final Pareto front over the whole archive.
    pub front: Vec<String>,
    pub cache_hits: u64,
    pub evaluations: u64,
    /// Best (f_perf, f_gen) seen in the parent population per generation.
    pub best_by_generation: Vec<[f64; 2]>,
}

pub struct Controller {
    pub cfg: RunConfig,
    env_set: EnvSet,
    dims: EnvDims,
    run_dir: RunDir,
    cache: FitnessCache,
    archived: HashSet<String>,
    evaluations: u64,
}

impl Controller {
    pub fn new(cfg: RunConfig) -> Result<Self, ControllerError> {
        cfg.check()?;
        let env_set = cfg.env.build_set()?;
        let dims = env_set.train.dims();
        let run_dir = RunDir::create(&cfg.out_dir)?;
        let config_text =
            toml::to_string_pretty(&cfg).map_err(|e| ControllerError::State(e.to_string()))?;
        run_dir.write_config_text(&config_text)?;
        let cache = run_dir.load_cache()?;
        let archived = run_dir
            .load_archive()?
            .into_iter()
            .map(|r| format!("{}:{}", r.phase, r.digest))
            .collect();
        Ok(Controller {
            cfg,
            env_set,
            dims,
            run_dir,
            cache,
            archived,
            evaluations: 0,
        })
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run_dir
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache.hits()
    }

    /// Evaluate one individual, hurdle-first, with no cache involvement.
    fn evaluate_uncached(
        &self,
        graph: &LossGraph,
        digest: &HashDigest,
        phase: Phase,
        seeds: &[u64],
        trainer: &TrainerConfig,
        env_set: &EnvSet,
        use_hurdle: bool,
    ) -> EvalOutcome {
        let started = Instant::now();
        let done = |event: &'static str, fitness: FitnessTuple, scores: SeedScores| EvalOutcome {
            fitness,
            scores,
            event,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        let failed_all = |n: usize| {
            let mut s = SeedScores::default();
            for _ in 0..n {
                s.push_failure();
            }
            s
        };

        let dims = env_set.train.dims();
        if !graph.validate(dims, CHECK_BATCH).valid {
            return done("invalid", FitnessTuple::failed(2), failed_all(seeds.len()));
        }

        if use_hurdle && self.cfg.hurdle.enabled {
            let henv = self.cfg.hurdle_env();
            let htrainer = self.cfg.hurdle_trainer();
            let n = self.cfg.hurdle.seeds.max(1);
            let mut total = 0.0;
            for k in 0..n {
                let seed = mix_bytes(self.cfg.master_seed, "hurdle", &digest.bytes, &[k as u64]);
                let score = catch_unwind(AssertUnwindSafe(|| {
                    train(graph, &htrainer, &henv, seed).map(|tp| {
                        evaluate_policy(&tp.policy, &henv, self.cfg.fitness.n_eval, seed)
                    })
                }));
                total += match score {
                    Ok(Ok(s)) => s,
                    _ => 0.0,
                };
            }
            if total / (n as f64) < self.cfg.hurdle.threshold {
                return done("hurdle_fail", FitnessTuple::failed(2), failed_all(seeds.len()));
            }
        }

        // Full evaluation; seeds run sequentially within one individual.
        let mut scores = SeedScores::default();
        for &seed in seeds {
            let train_seed = mix_bytes(self.cfg.master_seed, phase.tag(), &digest.bytes, &[seed]);
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                train(graph, trainer, &env_set.train, train_seed)
            }));
            match outcome {
                Ok(Ok(trained)) => {
                    let n_eval = self.cfg.fitness.n_eval;
                    let perf = raw_performance(&trained.policy, env_set, n_eval, train_seed);
                    let gen = raw_generalizability(&trained.policy, env_set, n_eval, train_seed);
                    scores.push(perf, gen);
                }
                _ => scores.push_failure(),
            }
        }
        let fitness = fitness_tuple(&scores, &self.cfg.fitness);
        done("evaluated", fitness, scores)
    }

    /// Evaluate everything in `pop` that has no fitness yet: cache lookups
    /// first, then the misses in parallel, then a single-writer merge that
    /// persists graphs, cache entries, archive rows, and events.
    fn evaluate_population(&mut self, pop: &mut [Individual], phase: Phase) -> Result<(), ControllerError> {
        let use_cache = phase == Phase::MetaTrain;
        let mut jobs: Vec<usize> = Vec::new();
        for (i, ind) in pop.iter_mut().enumerate() {
            if ind.fitness.is_some() {
                continue;
            }
            if use_cache {
                if let Some((fitness, scores)) = self.cache.lookup(&ind.digest, &ind.graph) {
                    ind.fitness = Some(fitness.clone());
                    ind.seed_scores = Some(scores.clone());
                    self.run_dir.append_event(&EventRecord {
                        event: "cache_hit".into(),
                        digest: ind.digest.hex(),
                        phase: phase.tag().into(),
                        seeds: vec![],
                        fitness: fitness.0.clone(),
                        wall_ms: 0,
                    })?;
                    continue;
                }
            }
            jobs.push(i);
        }
        // Dedup identical digests inside one batch: evaluate the first,
        // copy into the rest.
        let mut primary: Vec<usize> = Vec::new();
        let mut seen: HashSet<HashDigest> = HashSet::new();
        for &i in &jobs {
            if seen.insert(pop[i].digest) {
                primary.push(i);
            }
        }
        let seeds = self.phase_seeds(phase).to_vec();
        let trainer = self.cfg.trainer.clone();
        let env_set = self.env_set.clone();
        let use_hurdle = phase == Phase::MetaTrain;
        let this = &*self;
        let outcomes: Vec<(usize, EvalOutcome)> = with_workers(self.cfg.workers, || {
            par_map(primary.clone(), |i| {
                let ind = &pop[i];
                let out = this.evaluate_uncached(
                    &ind.graph,
                    &ind.digest,
                    phase,
                    &seeds,
                    &trainer,
                    &env_set,
                    use_hurdle,
                );
                (i, out)
            })
        });
        for (i, outcome) in outcomes {
            let digest = pop[i].digest;
            let graph = pop[i].graph.clone();
            self.evaluations += 1;
            self.run_dir.write_graph(&digest, &graph)?;
            if use_cache {
                self.cache
                    .insert(digest, &graph, (outcome.fitness.clone(), outcome.scores.clone()));
                self.run_dir
                    .append_cache(&digest, &outcome.fitness, &outcome.scores)?;
            }
            self.run_dir.append_event(&EventRecord {
                event: outcome.event.into(),
                digest: digest.hex(),
                phase: phase.tag().into(),
                seeds: seeds.clone(),
                fitness: outcome.fitness.0.clone(),
                wall_ms: outcome.wall_ms,
            })?;
            let key = format!("{}:{}", phase.tag(), digest.hex());
            if self.archived.insert(key) {
                let ind = &pop[i];
                self.run_dir.append_archive(&ArchiveRecord {
                    digest: digest.hex(),
                    phase: phase.tag().into(),
                    generation: ind.lineage.generation,
                    parent: ind.lineage.parent.clone(),
                    mutation: ind.lineage.mutation.clone(),
                    fitness: outcome.fitness.0.clone(),
                    perf_scores: outcome.scores.perf.clone(),
                    gen_scores: outcome.scores.gen.clone(),
                    failed_seeds: outcome.scores.failed.clone(),
                })?;
            }
            pop[i].fitness = Some(outcome.fitness);
            pop[i].seed_scores = Some(outcome.scores);
        }
        // Fill duplicates from their primary.
        for &i in &jobs {
            if pop[i].fitness.is_some() {
                continue;
            }
            let digest = pop[i].digest;
            let donor = pop
                .iter()
                .find(|p| p.digest == digest && p.fitness.is_some())
                .map(|p| (p.fitness.clone(), p.seed_scores.clone()));
            if let Some((f, s)) = donor {
                pop[i].fitness = f;
                pop[i].seed_scores = s;
            }
        }
        Ok(())
    }

    /// Spec entry point: evaluate one individual through cache, validation,
    /// hurdle, and full training.
    pub fn evaluate_individual(
        &mut self,
        ind: &mut Individual,
        phase: Phase,
    ) -> Result<(FitnessTuple, SeedScores), ControllerError> {
        let mut pop = vec![ind.clone()];
        self.evaluate_population(&mut pop, phase)?;
        ind.fitness = pop[0].fitness.clone();
        ind.seed_scores = pop[0].seed_scores.clone();
        Ok((
            ind.fitness.clone().unwrap(),
            ind.seed_scores.clone().unwrap(),
        ))
    }

    fn phase_seeds(&self, phase: Phase) -> &[u64] {
        match phase {
            Phase::MetaTrain => &self.cfg.seeds_train,
            Phase::MetaValidate => &self.cfg.seeds_valid,
            Phase::MetaTest => &self.cfg.seeds_test,
        }
    }

    /// The initial population: copies of the warm start padded with dead
    /// operation nodes up to `max_nodes`.
    fn initial_population(&self) -> Vec<Individual> {
        (0..self.cfg.population)
            .map(|i| {
                let mut rng =
                    RngStream::derive(self.cfg.master_seed, &["pad"], &[i as u64]);
                let graph = pad_to_max(
                    &crate::graph::warm_start_sac(),
                    self.cfg.max_nodes,
                    &mut rng,
                );
                Individual::new(
                    graph,
                    Lineage {
                        parent: None,
                        generation: 0,
                        mutation: None,
                    },
                )
            })
            .collect()
    }

    fn make_offspring(&self, parents: &[Individual], generation: u32) -> Vec<Individual> {
        let fits: Vec<FitnessTuple> = parents.iter().map(|p| p.fitness()).collect();
        let ranked = rank_population(&fits);
        let graphs: Vec<LossGraph> = parents.iter().map(|p| p.graph.clone()).collect();
        let mut rng = RngStream::derive(
            self.cfg.master_seed,
            &["offspring"],
            &[generation as u64],
        );
        let children = offspring(
            &graphs,
            &ranked,
            self.cfg.population,
            &MutationConfig::default(),
            self.dims,
            &mut rng,
        );
        children
            .into_iter()
            .map(|c| {
                let parent_digest = parents[c.parent_index].digest.hex();
                Individual::new(
                    c.result.child,
                    Lineage {
                        parent: Some(parent_digest),
                        generation,
                        mutation: Some(c.result.kind.to_string()),
                    },
                )
            })
            .collect()
    }

    /// The generational loop. Resumes from the last persisted generation
    /// snapshot when one exists.
    pub fn run_meta_training(&mut self) -> Result<RunResult, ControllerError> {
        let mut best_by_generation: Vec<[f64; 2]> = Vec::new();
        let (mut population, start_gen) = match self.run_dir.latest_generation()? {
            Some(snapshot) => {
                let mut pop = Vec::with_capacity(snapshot.population.len());
                for hex in &snapshot.population {
                    let graph = self.run_dir.load_graph(hex)?;
                    pop.push(Individual::new(
                        graph,
                        Lineage {
                            parent: None,
                            generation: snapshot.generation,
                            mutation: None,
                        },
                    ));
                }
                (pop, snapshot.generation + 1)
            }
            None => {
                let mut p0 = self.initial_population();
                self.evaluate_population(&mut p0, Phase::MetaTrain)?;
                self.run_dir.write_generation(&archive::GenerationSnapshot {
                    generation: 0,
                    population: p0.iter().map(|i| i.digest.hex()).collect(),
                })?;
                (p0, 1)
            }
        };
        // Cached fitness backfill for resumed populations.
        self.evaluate_population(&mut population, Phase::MetaTrain)?;
        record_best(&mut best_by_generation, &population);

        let mut offspring_pop = self.make_offspring(&population, start_gen - 1);
        self.evaluate_population(&mut offspring_pop, Phase::MetaTrain)?;

        for t in start_gen..=self.cfg.generations as u32 {
            // R = P u Q, deduplicated by digest (parents first).
            let mut union: Vec<Individual> = Vec::new();
            let mut seen: HashSet<HashDigest> = HashSet::new();
            for ind in population.drain(..).chain(offspring_pop.drain(..)) {
                if seen.insert(ind.digest) {
                    union.push(ind);
                }
            }
            let fits: Vec<FitnessTuple> = union.iter().map(|u| u.fitness()).collect();
            let capacity = self.cfg.population.min(union.len());
            let selected = rank_and_select(&fits, capacity)
                .map_err(|e| ControllerError::State(e.to_string()))?;
            population = selected.into_iter().map(|i| union[i].clone()).collect();
            record_best(&mut best_by_generation, &population);
            self.run_dir.write_generation(&archive::GenerationSnapshot {
                generation: t,
                population: population.iter().map(|i| i.digest.hex()).collect(),
            })?;
            offspring_pop = self.make_offspring(&population, t);
            self.evaluate_population(&mut offspring_pop, Phase::MetaTrain)?;
        }

        // Pareto front over every archived meta-training individual.
        let records: Vec<ArchiveRecord> = self
            .run_dir
            .load_archive()?
            .into_iter()
            .filter(|r| r.phase == Phase::MetaTrain.tag())
            .collect();
        let fits: Vec<FitnessTuple> = records.iter().map(|r| r.fitness_tuple()).collect();
        let front: Vec<String> = if fits.is_empty() {
            vec![]
        } else {
            let mut front: Vec<String> = non_dominated_sort(&fits)[0]
                .iter()
                .map(|&i| records[i].digest.clone())
                .collect();
            front.sort();
            front.dedup();
            front
        };
        self.run_dir.write_pareto(&front)?;
        Ok(RunResult {
            population,
            front,
            cache_hits: self.cache.hits(),
            evaluations: self.evaluations,
            best_by_generation,
        })
    }

    /// Re-evaluate archived meta-training individuals (optionally only the
    /// best `validate_top` by meta-training rank) with the validation
    /// seeds: no hurdle, no cross-phase cache reuse.
    pub fn meta_validate(&mut self) -> Result<Vec<Individual>, ControllerError> {
        let records: Vec<ArchiveRecord> = self
            .run_dir
            .load_archive()?
            .into_iter()
            .filter(|r| r.phase == Phase::MetaTrain.tag())
            .collect();
        if records.is_empty() {
            return Err(ControllerError::State(
                "no meta-training archive to validate".into(),
            ));
        }
        let fits: Vec<FitnessTuple> = records.iter().map(|r| r.fitness_tuple()).collect();
        let ranked = rank_population(&fits);
        let mut order: Vec<usize> = Vec::new();
        for front in &ranked.fronts {
            let mut front = front.clone();
            front.sort_by(|&a, &b| ranked.crowding[b].partial_cmp(&ranked.crowding[a]).unwrap());
            order.extend(front);
        }
        if let Some(top) = self.cfg.validate_top {
            order.truncate(top);
        }
        let mut pop: Vec<Individual> = Vec::with_capacity(order.len());
        for &i in &order {
            let graph = self.run_dir.load_graph(&records[i].digest)?;
            pop.push(Individual::new(
                graph,
                Lineage {
                    parent: records[i].parent.clone(),
                    generation: records[i].generation,
                    mutation: records[i].mutation.clone(),
                },
            ));
        }
        self.evaluate_population(&mut pop, Phase::MetaValidate)?;
        Ok(pop)
    }

    /// Score a set of named graphs on this controller's environment with
    /// the held-out test seeds. Dimension-incompatible graphs produce an
    /// error column instead of aborting the table.
    pub fn meta_test(
        &mut self,
        graphs: Vec<(String, LossGraph)>,
    ) -> Result<Vec<MetaTestRow>, ControllerError> {
        let mut rows = Vec::with_capacity(graphs.len());
        for (name, graph) in graphs {
            let report = graph.validate(self.dims, CHECK_BATCH);
            if !report.valid {
                rows.push(MetaTestRow {
                    name,
                    digest: functional_hash(&graph).hex(),
                    fitness: None,
                    scores: None,
                    error: report.first_error,
                });
                continue;
            }
            let mut ind = Individual::new(
                graph,
                Lineage {
                    parent: None,
                    generation: 0,
                    mutation: None,
                },
            );
            let (fitness, scores) = self.evaluate_individual(&mut ind, Phase::MetaTest)?;
            rows.push(MetaTestRow {
                name,
                digest: ind.digest.hex(),
                fitness: Some(fitness),
                scores: Some(scores),
                error: None,
            });
        }
        Ok(rows)
    }
}

fn record_best(best_by_generation: &mut Vec<[f64; 2]>, population: &[Individual]) {
    let mut best = [0.0f64, 0.0];
    for ind in population {
        let f = ind.fitness();
        best[0] = best[0].max(f.perf());
        best[1] = best[1].max(f.gen());
    }
    best_by_generation.push(best);
}

#[derive(Debug, Clone)]
pub struct MetaTestRow {
    pub name: String,
    pub digest: String,
    pub fitness: Option<FitnessTuple>,
    pub scores: Option<SeedScores>,
    pub error: Option<String>,
}
