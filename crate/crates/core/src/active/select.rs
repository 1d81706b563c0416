//! Query selection: density-based initialization, random, uncertainty
//! sampling and the four-criteria strategy.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ActiveError;
use crate::dataset::{Sample, SampleId};
use crate::mixture::MixtureModel;

/// Redraws inside the top decile before falling back to the best-ranked
/// sample not yet chosen.
const MAX_REDRAWS: usize = 10;

/// Picks `count` distinct pool samples near component modes.
///
/// Components are visited in random order, each once per sweep. A visited
/// component contributes a uniform draw from the top 10% of the pool ranked
/// by `p(x | component)`.
pub fn density_init(m: &MixtureModel, pool: &[&Sample], count: usize, rng: &mut impl Rng) -> Result<Vec<SampleId>, ActiveError> {
    if count > pool.len() {
        return Err(ActiveError::Invalid(format!("{count} initial queries from a pool of {}", pool.len())));
    }
    let j = m.n_components();
    if j == 0 {
        return Err(ActiveError::Invalid("mixture without components".into()));
    }
    let decile = pool.len().div_ceil(10).max(1);
    let mut rankings: Vec<Option<Vec<usize>>> = vec![None; j];
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let mut order = Vec::with_capacity(count);
    let mut visited = vec![false; j];
    let mut n_visited = 0;
    while order.len() < count {
        let r = rng.random_range(0..j);
        if visited[r] {
            if n_visited == j {
                visited.iter_mut().for_each(|v| *v = false);
                n_visited = 0;
            }
            continue;
        }
        visited[r] = true;
        n_visited += 1;
        let ranking = rankings[r].get_or_insert_with(|| rank_by_component(m, pool, r));
        let mut pick = None;
        for _ in 0..=MAX_REDRAWS {
            let cand = ranking[rng.random_range(0..decile)];
            if !chosen.contains(&cand) {
                pick = Some(cand);
                break;
            }
        }
        let pick = pick.unwrap_or_else(|| *ranking.iter().find(|p| !chosen.contains(p)).expect("count ≤ pool size"));
        chosen.insert(pick);
        order.push(pool[pick].id);
    }
    Ok(order)
}

/// Pool positions by descending `ln p(x | r)`, ties by position.
fn rank_by_component(m: &MixtureModel, pool: &[&Sample], r: usize) -> Vec<usize> {
    let comp = &m.components()[r];
    let scores: Vec<f64> = pool
        .iter()
        .map(|s| {
            let codes = if s.categorical.is_empty() { Vec::new() } else { m.layout().category_codes(&s.categorical) };
            comp.log_density(&s.continuous, &codes)
        })
        .collect();
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `k` distinct uniform draws from the pool.
pub fn select_random(pool: &[SampleId], k: usize, rng: &mut impl Rng) -> Vec<SampleId> {
    let k = k.min(pool.len());
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// The `k` pool samples closest to the decision boundary, nearest first;
/// equal distances go to the smaller id.
pub fn select_us(pool: &[SampleId], k: usize, distance: impl Fn(SampleId) -> f64) -> Vec<SampleId> {
    let mut scored: Vec<(f64, SampleId)> = pool.iter().map(|&id| (distance(id), id)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Self-adapting weights of the distance, density and distribution criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub distance: f64,
    pub density: f64,
    pub distribution: f64,
}

impl Default for Weights {
    /// Everything on the distribution criterion: explore first.
    fn default() -> Self {
        Weights {
            distance: 0.0,
            density: 0.0,
            distribution: 1.0,
        }
    }
}

impl Weights {
    /// Moves `eta` of mass to the distance weight if training accuracy did
    /// not drop, to the density weight otherwise. Mass is taken from the
    /// distribution weight first and, once that is exhausted, from the other
    /// of the two.
    pub fn adapt(&mut self, accuracy_held: bool, eta: f64) {
        let from_distribution = eta.min(self.distribution);
        self.distribution -= from_distribution;
        let rest = eta - from_distribution;
        let (to, from) = if accuracy_held {
            (&mut self.distance, &mut self.density)
        } else {
            (&mut self.density, &mut self.distance)
        };
        let from_other = rest.min(*from);
        *from -= from_other;
        *to += from_distribution + from_other;
        let total = self.distance + self.density + self.distribution;
        for w in [&mut self.distance, &mut self.density, &mut self.distribution] {
            *w = (*w / total).max(0.0);
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.distance, self.density, self.distribution]
    }
}

/// `1 − Σ_j max(0, π_j − s_j / count)` where `s` sums responsibilities of
/// the already selected samples plus the candidate.
pub fn distribution_score(priors: &[f64], resp_sum: &[f64], count: usize) -> f64 {
    1.0 - priors
        .iter()
        .zip(resp_sum)
        .map(|(p, s)| (p - s / count as f64).max(0.0))
        .sum::<f64>()
}

/// Mean negative log density over the query set plus the candidate.
pub fn diversity_score(log_density_sum: f64, count: usize) -> f64 {
    -log_density_sum / count as f64
}

/// Per-sample inputs of the four-criteria strategy, aligned with `pool`.
#[derive(Debug, Clone)]
pub struct FourDsInput<'a> {
    pub pool: &'a [SampleId],
    /// Decision-boundary distance.
    pub distance: &'a [f64],
    pub log_density: &'a [f64],
    pub responsibilities: &'a [Vec<f64>],
    /// Mixture weights.
    pub priors: &'a [f64],
    /// Responsibilities summed over the labeled set.
    pub labeled_resp_sum: &'a [f64],
    pub n_labeled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub distance: f64,
    pub density: f64,
    pub distribution: f64,
    /// Absent while the query set is empty.
    pub diversity: Option<f64>,
}

/// Raw criteria of every pool sample given the query set `selected`
/// (positions into `pool`).
pub fn score_4ds_criteria(input: &FourDsInput, selected: &[usize]) -> Vec<Criteria> {
    let j = input.priors.len();
    let mut resp_sum = input.labeled_resp_sum.to_vec();
    resp_sum.resize(j, 0.0);
    let mut logp_sum = 0.0;
    for &s in selected {
        for (acc, r) in resp_sum.iter_mut().zip(&input.responsibilities[s]) {
            *acc += r;
        }
        logp_sum += input.log_density[s];
    }
    let count = input.n_labeled + selected.len() + 1;
    let mut with_x = vec![0.0; j];
    (0..input.pool.len())
        .map(|i| {
            for ((w, s), r) in with_x.iter_mut().zip(&resp_sum).zip(&input.responsibilities[i]) {
                *w = s + r;
            }
            Criteria {
                distance: input.distance[i],
                density: input.log_density[i].exp(),
                distribution: distribution_score(input.priors, &with_x, count),
                diversity: (!selected.is_empty()).then(|| diversity_score(logp_sum + input.log_density[i], selected.len() + 1)),
            }
        })
        .collect()
}

/// Min-max normalization over `positions`; a constant criterion maps to 0.5.
fn normalized(values: &[f64], positions: &[usize]) -> Vec<f64> {
    let (lo, hi) = positions
        .iter()
        .map(|&i| values[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    positions
        .iter()
        .map(|&i| if range > 0.0 && range.is_finite() { (values[i] - lo) / range } else { 0.5 })
        .collect()
}

/// Greedy selection of `k` samples maximizing
/// `w_dist·(1 − d̂) + w_dens·p̂ + w_distr·ŝ + λ·v̂`, where hats denote
/// min-max normalization over the remaining candidates and the diversity
/// term is skipped for the first pick. Ties go to the smaller id.
pub fn select_4ds(input: &FourDsInput, k: usize, lambda: f64, weights: &Weights) -> Vec<SampleId> {
    let k = k.min(input.pool.len());
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..input.pool.len()).collect();
    while selected.len() < k {
        let crit = score_4ds_criteria(input, &selected);
        let pick = |f: fn(&Criteria) -> f64| normalized(&crit.iter().map(f).collect::<Vec<_>>(), &remaining);
        let dist = pick(|c| c.distance);
        let dens = pick(|c| c.density);
        let distr = pick(|c| c.distribution);
        let div = if selected.is_empty() { None } else { Some(pick(|c| c.diversity.unwrap_or(0.0))) };
        let mut best: Option<(f64, SampleId, usize)> = None;
        for (slot, &i) in remaining.iter().enumerate() {
            let mut score = weights.distance * (1.0 - dist[slot]) + weights.density * dens[slot] + weights.distribution * distr[slot];
            if let Some(div) = &div {
                score += lambda * div[slot];
            }
            let id = input.pool[i];
            if best.is_none_or(|(s, bid, _)| score > s || (score == s && id < bid)) {
                best = Some((score, id, slot));
            }
        }
        let (_, _, slot) = best.expect("remaining is non-empty");
        selected.push(remaining.remove(slot));
    }
    selected.into_iter().map(|i| input.pool[i]).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mixture::tests::{model, pt};

    fn pool_on_line(n: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample { id: i, ..pt(&[i as f64 / n as f64 * 12.0 - 6.0, 0.0]) }).collect()
    }

    #[test]
    fn density_init_single_component_hits_top_decile() {
        let m = model(&[(1.0, &[1.0, 0.0], &[1.0, 1.0])]);
        let pool = pool_on_line(200);
        let refs: Vec<&Sample> = pool.iter().collect();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = density_init(&m, &refs, 1, &mut rng).unwrap();
            let ranking = rank_by_component(&m, &refs, 0);
            assert!(ranking[..20].contains(&got[0]));
        }
    }

    #[test]
    fn density_init_exhausts_the_pool() {
        let m = model(&[(0.5, &[-3.0, 0.0], &[1.0, 1.0]), (0.5, &[3.0, 0.0], &[1.0, 1.0])]);
        let pool = pool_on_line(37);
        let refs: Vec<&Sample> = pool.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut got = density_init(&m, &refs, 37, &mut rng).unwrap();
        got.sort_unstable();
        assert_eq!(got, (0..37).collect::<Vec<_>>());
        assert!(density_init(&m, &refs, 38, &mut rng).is_err());
    }

    #[test]
    fn density_init_covers_each_mode() {
        let m = model(&[
            (0.3, &[-4.0, 0.0], &[0.2, 0.2]),
            (0.4, &[0.0, 0.0], &[0.2, 0.2]),
            (0.3, &[4.0, 0.0], &[0.2, 0.2]),
        ]);
        let pool = pool_on_line(300);
        let refs: Vec<&Sample> = pool.iter().collect();
        let deciles: Vec<Vec<usize>> = (0..3).map(|r| rank_by_component(&m, &refs, r)[..30].to_vec()).collect();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = density_init(&m, &refs, 3, &mut rng).unwrap();
            for d in &deciles {
                assert_eq!(got.iter().filter(|id| d.contains(id)).count(), 1);
            }
        }
    }

    #[test]
    fn random_selection() {
        let pool: Vec<SampleId> = (10..20).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut all = select_random(&pool, 10, &mut rng);
        all.sort_unstable();
        assert_eq!(all, pool);
        assert!(select_random(&pool, 0, &mut rng).is_empty());
        let a = select_random(&pool, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = select_random(&pool, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn random_selection_is_uniform() {
        let pool: Vec<SampleId> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..trials {
            counts[select_random(&pool, 1, &mut rng)[0]] += 1;
        }
        let expected = trials as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of χ² with 9 degrees of freedom.
        assert!(chi2 < 27.877, "χ² = {chi2}");
    }

    #[test]
    fn us_takes_nearest_with_id_ties() {
        let pool = [4, 2, 9, 7];
        let d = |id: SampleId| match id {
            4 => 0.5,
            2 => 0.0,
            9 => 0.5,
            _ => 2.0,
        };
        assert_eq!(select_us(&pool, 1, d), vec![2]);
        assert_eq!(select_us(&pool, 3, d), vec![2, 4, 9]);
        assert_eq!(select_us(&pool, 2, |_| 1.0), vec![2, 4]);
    }

    #[test]
    fn weights_stay_on_simplex() {
        let mut w = Weights::default();
        let pattern = [true, true, false, true, false, false, true];
        for step in 0..200 {
            w.adapt(pattern[step % pattern.len()], 0.05);
            let a = w.as_array();
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut w = Weights::default();
        w.adapt(true, 0.05);
        assert!((w.distance - 0.05).abs() < 1e-15 && (w.distribution - 0.95).abs() < 1e-15);
        w.adapt(false, 0.05);
        assert!((w.density - 0.05).abs() < 1e-15);
    }

    #[test]
    fn distribution_examples() {
        // Responsibility average equal to the priors.
        assert!((distribution_score(&[0.25, 0.75], &[0.5, 1.5], 2) - 1.0).abs() < 1e-15);
        // Nothing selected yet and a one-hot candidate.
        assert!((distribution_score(&[0.5, 0.5], &[1.0, 0.0], 1) - 0.5).abs() < 1e-15);
    }

    fn toy() -> (Vec<SampleId>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let pool = vec![3, 5, 8, 11, 12];
        let distance = vec![0.9, 0.1, 0.4, 1.5, 0.2];
        let log_density = vec![-1.0, -2.5, -0.3, -4.0, -1.7];
        let resp = vec![
            vec![0.9, 0.1, 0.0],
            vec![0.2, 0.7, 0.1],
            vec![0.0, 0.1, 0.9],
            vec![0.5, 0.5, 0.0],
            vec![0.1, 0.1, 0.8],
        ];
        (pool, distance, log_density, resp)
    }

    #[test]
    fn criteria_match_scalar_evaluation() {
        let (pool, distance, log_density, resp) = toy();
        let priors = [0.5, 0.3, 0.2];
        let lab = [0.8, 0.2, 1.0];
        let input = FourDsInput {
            pool: &pool,
            distance: &distance,
            log_density: &log_density,
            responsibilities: &resp,
            priors: &priors,
            labeled_resp_sum: &lab,
            n_labeled: 2,
        };
        let crit = score_4ds_criteria(&input, &[2]);
        for i in 0..5 {
            let mut distr = 1.0;
            for j in 0..3 {
                let avg = (lab[j] + resp[2][j] + resp[i][j]) / 4.0;
                distr -= (priors[j] - avg).max(0.0);
            }
            let div = -(log_density[2] + log_density[i]) / 2.0;
            assert!((crit[i].distribution - distr).abs() < 1e-12);
            assert!((crit[i].diversity.unwrap() - div).abs() < 1e-12);
            assert!((crit[i].density - log_density[i].exp()).abs() < 1e-12);
            assert_eq!(crit[i].distance, distance[i]);
        }
        assert!(score_4ds_criteria(&input, &[]).iter().all(|c| c.diversity.is_none()));
    }

    #[test]
    fn degenerate_weights_and_lambda() {
        let (pool, distance, log_density, resp) = toy();
        let priors = [0.5, 0.3, 0.2];
        let input = FourDsInput {
            pool: &pool,
            distance: &distance,
            log_density: &log_density,
            responsibilities: &resp,
            priors: &priors,
            labeled_resp_sum: &[0.0, 0.0, 0.0],
            n_labeled: 0,
        };
        let crit = score_4ds_criteria(&input, &[]);
        let best = (0..5).max_by(|&a, &b| crit[a].distribution.total_cmp(&crit[b].distribution).then(b.cmp(&a))).unwrap();
        assert_eq!(select_4ds(&input, 1, 0.0, &Weights::default()), vec![pool[best]]);
        let w = Weights { distance: 0.4, density: 0.3, distribution: 0.3 };
        assert_eq!(select_4ds(&input, 1, 0.0, &w), select_4ds(&input, 1, 1.0, &w));
        let w = Weights { distance: 1.0, density: 0.0, distribution: 0.0 };
        assert_eq!(select_4ds(&input, 1, 0.0, &w), vec![5]);
    }

    #[test]
    fn greedy_matches_recomputation() {
        let (pool, distance, log_density, resp) = toy();
        let priors = [0.5, 0.3, 0.2];
        let lab = [1.0, 0.0, 0.0];
        let input = FourDsInput {
            pool: &pool,
            distance: &distance,
            log_density: &log_density,
            responsibilities: &resp,
            priors: &priors,
            labeled_resp_sum: &lab,
            n_labeled: 1,
        };
        let w = Weights { distance: 0.3, density: 0.2, distribution: 0.5 };
        let lambda = 0.4;
        let got = select_4ds(&input, 5, lambda, &w);

        // Independent greedy loop with explicit formulas.
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..5 {
            let rem: Vec<usize> = (0..5).filter(|i| !chosen.contains(i)).collect();
            let raw: Vec<[f64; 4]> = rem
                .iter()
                .map(|&i| {
                    let n = 1 + chosen.len() + 1;
                    let mut distr = 1.0;
                    for j in 0..3 {
                        let s: f64 = lab[j] + chosen.iter().map(|&c| resp[c][j]).sum::<f64>() + resp[i][j];
                        distr -= (priors[j] - s / n as f64).max(0.0);
                    }
                    let div = -(chosen.iter().map(|&c| log_density[c]).sum::<f64>() + log_density[i]) / (chosen.len() + 1) as f64;
                    [distance[i], log_density[i].exp(), distr, div]
                })
                .collect();
            let norm = |c: usize, v: f64| {
                let lo = raw.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = raw.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }
            };
            let mut best = (f64::NEG_INFINITY, 0);
            for (slot, r) in raw.iter().enumerate() {
                let mut s = w.distance * (1.0 - norm(0, r[0])) + w.density * norm(1, r[1]) + w.distribution * norm(2, r[2]);
                if !chosen.is_empty() {
                    s += lambda * norm(3, r[3]);
                }
                if s > best.0 {
                    best = (s, rem[slot]);
                }
            }
            chosen.push(best.1);
        }
        let expected: Vec<SampleId> = chosen.iter().map(|&i| pool[i]).collect();
        assert_eq!(got, expected);
    }
}
