//! NSGA-II machinery: Pareto dominance, fast non-dominated sorting,
//! crowding distance, capacity selection, and offspring generation by
//! binary tournament plus mutation.

use crate::graph::{EnvDims, LossGraph};
use crate::mutation::{mutate, MutationConfig, MutationResult};
use crate::rng::RngStream;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Nsga2Error {
    #[error("capacity {capacity} exceeds population size {size}")]
    Capacity { capacity: usize, size: usize },
}

/// Objective vector; larger is better in every component. Two objectives
/// (performance, generalizability) are configured, but nothing here assumes
/// the count.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessTuple(pub Vec<f64>);

impl FitnessTuple {
    pub fn perf_gen(perf: f64, gen: f64) -> Self {
        FitnessTuple(vec![perf, gen])
    }

    pub fn failed(objectives: usize) -> Self {
        FitnessTuple(vec![0.0; objectives])
    }

    pub fn perf(&self) -> f64 {
        self.0[0]
    }

    pub fn gen(&self) -> f64 {
        self.0.get(1).copied().unwrap_or(0.0)
    }
}

/// `a` dominates `b`: at least as good everywhere, strictly better
/// somewhere.
pub fn dominates(a: &FitnessTuple, b: &FitnessTuple) -> bool {
    debug_assert_eq!(a.0.len(), b.0.len());
    let mut strict = false;
    for (x, y) in a.0.iter().zip(&b.0) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Fronts of indices into `pop`; front 0 is the non-dominated set, front k
/// the non-dominated set once fronts 0..k are removed.
pub fn non_dominated_sort(pop: &[FitnessTuple]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<usize> = vec![0; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&pop[i], &pop[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&pop[j], &pop[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of one front. Boundary individuals per
/// objective get +inf; interior ones accumulate the normalized gap between
/// their neighbors. Zero-range objectives contribute nothing.
pub fn crowding_distance(front: &[FitnessTuple]) -> Vec<f64> {
    let n = front.len();
    if n == 0 {
        return vec![];
    }
    let objectives = front[0].0.len();
    let mut distance = vec![0.0f64; n];
    for m in 0..objectives {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a].0[m].partial_cmp(&front[b].0[m]).unwrap());
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = front[order[n - 1]].0[m] - front[order[0]].0[m];
        if range <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let prev = front[order[w - 1]].0[m];
            let next = front[order[w + 1]].0[m];
            distance[order[w]] += (next - prev) / range;
        }
    }
    distance
}

/// Fronts plus crowding for a whole population.
#[derive(Debug, Clone)]
pub struct RankedPopulation {
    pub fronts: Vec<Vec<usize>>,
    /// Front index per individual.
    pub rank: Vec<usize>,
    /// Crowding distance per individual (within its front).
    pub crowding: Vec<f64>,
}

pub fn rank_population(pop: &[FitnessTuple]) -> RankedPopulation {
    let fronts = non_dominated_sort(pop);
    let mut rank = vec![0usize; pop.len()];
    let mut crowding = vec![0.0f64; pop.len()];
    for (k, front) in fronts.iter().enumerate() {
        let tuples: Vec<FitnessTuple> = front.iter().map(|&i| pop[i].clone()).collect();
        let dist = crowding_distance(&tuples);
        for (slot, &i) in front.iter().enumerate() {
            rank[i] = k;
            crowding[i] = dist[slot];
        }
    }
    RankedPopulation {
        fronts,
        rank,
        crowding,
    }
}

/// Select `capacity` indices: whole fronts while they fit, then the
/// splitting front truncated by descending crowding distance with ties
/// broken by stable original order.
pub fn rank_and_select(pop: &[FitnessTuple], capacity: usize) -> Result<Vec<usize>, Nsga2Error> {
    if capacity > pop.len() {
        return Err(Nsga2Error::Capacity {
            capacity,
            size: pop.len(),
        });
    }
    let ranked = rank_population(pop);
    let mut selected = Vec::with_capacity(capacity);
    for front in &ranked.fronts {
        if selected.len() + front.len() <= capacity {
            selected.extend_from_slice(front);
            if selected.len() == capacity {
                break;
            }
        } else {
            let mut by_crowding: Vec<usize> = front.clone();
            // Stable: equal crowding keeps original front order.
            by_crowding.sort_by(|&a, &b| {
                ranked.crowding[b]
                    .partial_cmp(&ranked.crowding[a])
                    .unwrap()
            });
            by_crowding.truncate(capacity - selected.len());
            selected.extend(by_crowding);
            break;
        }
    }
    Ok(selected)
}

/// Binary-tournament parent pick: lower front, then larger crowding, then a
/// coin flip.
fn tournament(ranked: &RankedPopulation, rng: &mut RngStream) -> usize {
    let n = ranked.rank.len();
    let a = rng.below(n);
    let b = rng.below(n);
    if ranked.rank[a] != ranked.rank[b] {
        return if ranked.rank[a] < ranked.rank[b] { a } else { b };
    }
    if ranked.crowding[a] != ranked.crowding[b] {
        return if ranked.crowding[a] > ranked.crowding[b] {
            a
        } else {
            b
        };
    }
    if rng.coin(0.5) {
        a
    } else {
        b
    }
}

/// One offspring: which parent it came from and the mutation outcome.
#[derive(Debug, Clone)]
pub struct Offspring {
    pub parent_index: usize,
    pub result: MutationResult,
}

/// `count` children from tournament-selected parents.
pub fn offspring(
    parents: &[LossGraph],
    ranked: &RankedPopulation,
    count: usize,
    cfg: &MutationConfig,
    dims: EnvDims,
    rng: &mut RngStream,
) -> Vec<Offspring> {
    assert!(!parents.is_empty(), "offspring needs parents");
    assert_eq!(parents.len(), ranked.rank.len());
    (0..count)
        .map(|_| {
            let parent_index = tournament(ranked, rng);
            let result = mutate(&parents[parent_index], cfg, dims, rng);
            Offspring {
                parent_index,
                result,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(p: f64, g: f64) -> FitnessTuple {
        FitnessTuple::perf_gen(p, g)
    }

    #[test]
    fn dominance_basics() {
        assert!(dominates(&t(0.9, 0.9), &t(0.5, 0.5)));
        assert!(!dominates(&t(0.9, 0.1), &t(0.1, 0.9)));
        assert!(!dominates(&t(0.1, 0.9), &t(0.9, 0.1)));
        assert!(!dominates(&t(0.5, 0.5), &t(0.5, 0.5)));
    }

    #[test]
    fn mutually_nondominated_set_is_one_front() {
        let pop = vec![t(0.9, 0.1), t(0.1, 0.9), t(0.5, 0.5)];
        let fronts = non_dominated_sort(&pop);
        assert_eq!(fronts, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn dominated_pair_splits_fronts() {
        let pop = vec![t(1.0, 1.0), t(0.0, 0.0)];
        let fronts = non_dominated_sort(&pop);
        assert_eq!(fronts, vec![vec![0], vec![1]]);
    }

    #[test]
    fn crowding_middle_of_three() {
        let front = vec![t(0.0, 1.0), t(0.5, 0.5), t(1.0, 0.0)];
        let d = crowding_distance(&front);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert_eq!(d[1], 2.0);
    }

    #[test]
    fn crowding_of_singleton_and_twins() {
        assert!(crowding_distance(&[t(0.3, 0.3)])[0].is_infinite());
        let d = crowding_distance(&[t(0.3, 0.3), t(0.3, 0.3)]);
        assert!(d[0].is_infinite() && d[1].is_infinite());
    }

    #[test]
    fn select_keeps_boundaries_of_single_front() {
        let pop = vec![t(0.0, 1.0), t(0.4, 0.6), t(0.6, 0.4), t(1.0, 0.0)];
        let selected = rank_and_select(&pop, 2).unwrap();
        assert_eq!(selected, vec![0, 3]);
    }

    #[test]
    fn select_takes_whole_front_when_it_fits() {
        let pop = vec![
            t(0.9, 0.9),
            t(0.8, 0.95),
            t(0.95, 0.8),
            t(0.1, 0.1),
            t(0.2, 0.05),
            t(0.05, 0.2),
            t(0.01, 0.01),
            t(0.02, 0.0),
        ];
        let selected = rank_and_select(&pop, 3).unwrap();
        assert_eq!(selected, vec![0, 1, 2]);
    }

    #[test]
    fn select_at_capacity_is_identity() {
        let pop = vec![t(0.1, 0.2), t(0.3, 0.1), t(0.2, 0.4)];
        let selected = rank_and_select(&pop, 3).unwrap();
        let mut sorted = selected.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn capacity_above_population_is_a_contract_error() {
        assert!(rank_and_select(&[t(0.1, 0.1)], 2).is_err());
    }

    #[test]
    fn crowding_order_invariant_under_affine_rescale() {
        let front = vec![t(0.1, 0.9), t(0.2, 0.6), t(0.5, 0.5), t(0.7, 0.2), t(0.9, 0.1)];
        let rescaled: Vec<FitnessTuple> = front
            .iter()
            .map(|f| FitnessTuple(vec![3.0 * f.0[0] + 1.0, f.0[1]]))
            .collect();
        let d1 = crowding_distance(&front);
        let d2 = crowding_distance(&rescaled);
        // Relative order of interior distances is preserved.
        let interior = [1usize, 2, 3];
        for &i in &interior {
            for &j in &interior {
                assert_eq!(d1[i] < d1[j], d2[i] < d2[j]);
            }
        }
    }
}
