//! Plot emission: each kind writes a machine-readable CSV table and an SVG
//! next to it. Sweep and diagnostics plots retrain the named graphs in
//! memory (the archive is never modified).

use crate::svg::{Chart, Series};
use anyhow::{Context, Result};
use evoloss::controller::{RunConfig, RunDir};
use evoloss::envs::EnvConfig;
use evoloss::fitness::population_std;
use evoloss::graph::LossGraph;
use evoloss::rng::mix_bytes;
use evoloss::trainer::{evaluate_policy, train, TrainedPolicy};
use std::collections::BTreeMap;
use std::path::Path;

pub fn plot_pareto(run: &RunDir, out: &Path) -> Result<(usize, usize)> {
    let records = run.load_archive().context("loading archive")?;
    let front: std::collections::HashSet<String> = run.load_pareto()?.into_iter().collect();
    let mut csv = String::from("digest,phase,generation,f_perf,f_gen,front\n");
    let mut front_points = Vec::new();
    let mut rest_points = Vec::new();
    for r in &records {
        let p = r.fitness.first().copied().unwrap_or(0.0);
        let g = r.fitness.get(1).copied().unwrap_or(0.0);
        let is_front = front.contains(&r.digest);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.digest, r.phase, r.generation, p, g, is_front
        ));
        if is_front {
            front_points.push((p, g));
        } else {
            rest_points.push((p, g));
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("pareto.csv"), &csv)?;
    let chart = Chart {
        title: "Population fitness (stability-adjusted)".into(),
        x_label: "performance".into(),
        y_label: "generalizability".into(),
        scatter: true,
        series: vec![
            Series {
                name: "population".into(),
                points: rest_points,
                band: None,
            },
            Series {
                name: "pareto front".into(),
                points: front_points.clone(),
                band: None,
            },
        ],
    };
    std::fs::write(out.join("pareto.svg"), chart.render())?;
    Ok((records.len(), front_points.len()))
}

/// Train each named graph once per training seed, then evaluate it across
/// every sweep configuration: mean and std of normalized return per value.
pub fn plot_sweep(
    cfg: &RunConfig,
    graphs: &[(String, LossGraph)],
    out: &Path,
) -> Result<usize> {
    let env_set = cfg.env.build_set()?;
    let mut csv = String::from("graph,axis,value,mean_return,std_return\n");
    let mut charts: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    let mut rows = 0usize;
    for (name, graph) in graphs {
        let policies = train_per_seed(cfg, graph, name)?;
        for axis in &env_set.sweep {
            let mut points = Vec::new();
            let mut band = Vec::new();
            for env in &axis.configs {
                let per_seed: Vec<f64> = policies
                    .iter()
                    .map(|(seed, tp)| evaluate_policy(&tp.policy, env, cfg.fitness.n_eval, *seed))
                    .collect();
                let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
                let std = population_std(&per_seed);
                let value = match axis.name.as_str() {
                    "mass" => env.mass,
                    _ => env.length,
                };
                csv.push_str(&format!("{name},{},{value},{mean},{std}\n", axis.name));
                points.push((value, mean));
                band.push(std);
                rows += 1;
            }
            charts.entry(axis.name.clone()).or_default().push(Series {
                name: name.clone(),
                points,
                band: Some(band),
            });
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), &csv)?;
    for (axis, series) in charts {
        let chart = Chart {
            title: format!("Zero-shot return across {axis} perturbations"),
            x_label: axis.clone(),
            y_label: "normalized return".into(),
            scatter: false,
            series,
        };
        std::fs::write(out.join(format!("sweep_{axis}.svg")), chart.render())?;
    }
    Ok(rows)
}

/// One training run per named graph under the first training seed; emits
/// the per-episode entropy, actor-gradient-norm, and return curves.
pub fn plot_diagnostics(
    cfg: &RunConfig,
    graphs: &[(String, LossGraph)],
    out: &Path,
) -> Result<usize> {
    let env_set = cfg.env.build_set()?;
    let mut csv = String::from("graph,episode,return,entropy,actor_grad_norm\n");
    let mut entropy_series = Vec::new();
    let mut norm_series = Vec::new();
    let mut rows = 0usize;
    for (name, graph) in graphs {
        let seed = train_seed(cfg, graph, 0);
        let trained = train(graph, &cfg.trainer, &env_set.train, seed)
            .map_err(|e| anyhow::anyhow!("training {name} failed: {e}"))?;
        let d = &trained.diagnostics;
        let mut e_points = Vec::new();
        let mut n_points = Vec::new();
        for ep in 0..d.episode_returns.len() {
            csv.push_str(&format!(
                "{name},{ep},{},{},{}\n",
                d.episode_returns[ep], d.policy_entropy[ep], d.actor_grad_norm[ep]
            ));
            e_points.push((ep as f64, d.policy_entropy[ep]));
            n_points.push((ep as f64, d.actor_grad_norm[ep]));
            rows += 1;
        }
        entropy_series.push(Series {
            name: name.clone(),
            points: e_points,
            band: None,
        });
        norm_series.push(Series {
            name: name.clone(),
            points: n_points,
            band: None,
        });
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("diagnostics.csv"), &csv)?;
    std::fs::write(
        out.join("diagnostics_entropy.svg"),
        Chart {
            title: "Policy entropy during training".into(),
            x_label: "episode".into(),
            y_label: "entropy estimate".into(),
            scatter: false,
            series: entropy_series,
        }
        .render(),
    )?;
    std::fs::write(
        out.join("diagnostics_grad_norm.svg"),
        Chart {
            title: "Actor-loss gradient norm during training".into(),
            x_label: "episode".into(),
            y_label: "mean gradient norm".into(),
            scatter: false,
            series: norm_series,
        }
        .render(),
    )?;
    Ok(rows)
}

fn train_seed(cfg: &RunConfig, graph: &LossGraph, seed: u64) -> u64 {
    let digest = evoloss::hash::functional_hash(graph);
    mix_bytes(cfg.master_seed, "meta-train", &digest.bytes, &[seed])
}

fn train_per_seed(
    cfg: &RunConfig,
    graph: &LossGraph,
    name: &str,
) -> Result<Vec<(u64, TrainedPolicy)>> {
    let env: EnvConfig = cfg.env.build_set()?.train;
    cfg.seeds_train
        .iter()
        .map(|&s| {
            let seed = train_seed(cfg, graph, s);
            train(graph, &cfg.trainer, &env, seed)
                .map(|tp| (seed, tp))
                .map_err(|e| anyhow::anyhow!("training {name} (seed {s}) failed: {e}"))
        })
        .collect()
}
