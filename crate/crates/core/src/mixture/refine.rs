//! Transductive refinement of components that cover several classes.

use serde::{Deserialize, Serialize};

use super::{argmax, single_component, train_vi, Component, MixtureError, MixtureModel, ViConfig};
use crate::dataset::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// A component is disputed when its majority class share among the
    /// labeled samples it dominates falls below this value.
    pub purity_threshold: f64,
    /// Labeled neighbors consulted when labeling pool samples.
    pub neighbors: usize,
    /// Settings for the local per-class models.
    pub vi: ViConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            purity_threshold: 0.95,
            neighbors: 7,
            vi: ViConfig::default(),
        }
    }
}

/// Components whose dominated labeled samples span at least two classes
/// with a majority share below the purity threshold.
pub fn disputed_components(m: &MixtureModel, labeled: &[&Sample], purity_threshold: f64) -> Vec<usize> {
    let j = m.n_components();
    let mut counts: Vec<std::collections::BTreeMap<usize, usize>> = vec![Default::default(); j];
    for s in labeled {
        if let Some(c) = s.label {
            *counts[argmax(&m.responsibilities(s))].entry(c).or_default() += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, per_class)| {
            let total: usize = per_class.values().sum();
            let top = per_class.values().copied().max().unwrap_or(0);
            per_class.len() >= 2 && (top as f64) < purity_threshold * total as f64
        })
        .map(|(j, _)| j)
        .collect()
}

fn features(s: &Sample) -> Vec<f64> {
    if s.continuous.is_empty() {
        s.categorical.iter().map(|&v| v as f64).collect()
    } else {
        s.continuous.clone()
    }
}

/// Majority vote among the `k` nearest labeled samples (Euclidean); ties go
/// to the tied class whose nearest member is closest.
fn knn_label(x: &Sample, labeled: &[&Sample], k: usize) -> usize {
    let fx = features(x);
    let mut dists: Vec<(f64, usize, usize)> = labeled
        .iter()
        .filter_map(|s| {
            let d: f64 = features(s).iter().zip(&fx).map(|(a, b)| (a - b) * (a - b)).sum();
            s.label.map(|c| (d, s.id, c))
        })
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k.max(1));
    let mut votes: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for &(d, _, c) in &dists {
        let e = votes.entry(c).or_insert((0, d));
        e.0 += 1;
    }
    votes
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.total_cmp(&a.1 .1)))
        .map(|(c, _)| c)
        .unwrap_or(0)
}

/// Rebuilds disputed components from a local separate-components model.
///
/// Samples dominated by a disputed component are collected; the unlabeled
/// ones receive the vote of their nearest labeled neighbors; a per-class
/// mixture is trained on that subset and its components replace the
/// disputed ones. A class gets at most as many local components as it has
/// oracle labels in the region, and never more than were disputed. The new
/// components share the disputed components' total weight in proportion to
/// class priors and within-class weights. Without disputed components the input model is
/// returned unchanged.
pub fn refine_transductive(
    m: &MixtureModel,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    cfg: &RefineConfig,
) -> Result<MixtureModel, MixtureError> {
    if labeled.is_empty() {
        return Err(MixtureError::NoLabels);
    }
    let disputed = disputed_components(m, labeled, cfg.purity_threshold);
    if disputed.is_empty() {
        return Ok(m.clone());
    }
    let is_disputed = |j: usize| disputed.contains(&j);

    // Region samples, flagged by whether the label came from the oracle.
    let mut region: Vec<(Sample, bool)> = Vec::new();
    for s in labeled {
        if is_disputed(argmax(&m.responsibilities(s))) {
            region.push(((*s).clone(), true));
        }
    }
    for s in unlabeled {
        if is_disputed(argmax(&m.responsibilities(s))) {
            let mut t = (*s).clone();
            t.label = Some(knn_label(s, labeled, cfg.neighbors));
            region.push((t, false));
        }
    }
    let n_classes = labeled.iter().filter_map(|s| s.label).max().map_or(0, |c| c + 1);
    let all: Vec<&Sample> = region.iter().map(|(s, _)| s).collect();
    let mut by_class: Vec<(Vec<&Sample>, usize)> = vec![(Vec::new(), 0); n_classes];
    for (s, oracle) in &region {
        let entry = &mut by_class[s.label.expect("region samples carry a label")];
        entry.0.push(s);
        entry.1 += usize::from(*oracle);
    }
    let mut local: Vec<(f64, MixtureModel)> = Vec::new();
    for (members, evidence) in by_class.iter().filter(|(m, _)| !m.is_empty()) {
        let cap = cfg.vi.max_components.min(disputed.len()).min((*evidence).max(1));
        let vi = ViConfig { max_components: cap, ..cfg.vi.clone() };
        let fitted = if members.len() > 1 { train_vi(members, m.layout(), &vi).ok() } else { None };
        let model = match fitted {
            Some(fit) => fit,
            None => single_component(members, &all, m.layout(), &vi)?,
        };
        local.push((members.len() as f64 / region.len() as f64, model));
    }

    let disputed_mass: f64 = disputed.iter().map(|&j| m.components()[j].weight()).sum();
    let mut components: Vec<Component> = m
        .components()
        .iter()
        .enumerate()
        .filter(|(j, _)| !is_disputed(*j))
        .map(|(_, c)| c.clone())
        .collect();
    for (prior, model) in &local {
        for c in model.components() {
            let mut c = c.clone();
            c.weight *= disputed_mass * prior;
            components.push(c);
        }
    }
    MixtureModel::new(m.layout().clone(), components)
}
