use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, SampleId};

/// One outer cross-validation fold: a held-out test set and the pool `U₀`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub test: Vec<SampleId>,
    pub pool: Vec<SampleId>,
}

/// Stratified k-fold partition.
///
/// Ids of each class are shuffled with a seeded generator. How many members
/// of each class land in each fold is found by rounding the ideal share
/// `|fold|·|class|/n` up or down so that fold sizes and class totals both
/// come out exact; the shuffled ids are then dealt into folds in order.
pub fn stratified_kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::TooFewFolds(k));
    }
    let mut by_class: Vec<Vec<SampleId>> = vec![Vec::new(); d.n_classes()];
    for s in &d.samples {
        let c = s.label.ok_or(DatasetError::MissingLabel(s.id))?;
        by_class[c].push(s.id);
    }
    for (class, ids) in by_class.iter().enumerate() {
        if !ids.is_empty() && ids.len() < k {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: ids.len(),
                folds: k,
            });
        }
    }

    let n = d.len();
    let fold_sizes: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
    let class_sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = controlled_rounding(&fold_sizes, &class_sizes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<SampleId>> = vec![Vec::new(); k];
    for (c, ids) in by_class.iter_mut().enumerate() {
        ids.shuffle(&mut rng);
        let mut rest = ids.as_slice();
        for (f, test) in tests.iter_mut().enumerate() {
            let (take, tail) = rest.split_at(counts[f][c]);
            test.extend_from_slice(take);
            rest = tail;
        }
    }

    Ok(tests
        .into_iter()
        .enumerate()
        .map(|(fold, mut test)| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            for &id in &test {
                in_test[id] = true;
            }
            let pool = (0..n).filter(|&id| !in_test[id]).collect();
            FoldSplit { fold, test, pool }
        })
        .collect())
}

/// Integer `rows × cols` table with the given margins where every entry is
/// the floor or ceiling of `row·col/total`. Such a rounding always exists;
/// the ceilings are placed by a max-flow over the raisable cells.
fn controlled_rounding(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let total = rows.iter().sum::<usize>().max(1);
    let (r, c) = (rows.len(), cols.len());
    let mut table = vec![vec![0usize; c]; r];
    // Nodes: source, rows, columns, sink.
    let (source, sink) = (0, r + c + 1);
    let mut cap = vec![vec![0usize; r + c + 2]; r + c + 2];
    for i in 0..r {
        for j in 0..c {
            let num = rows[i] * cols[j];
            table[i][j] = num / total;
            if !num.is_multiple_of(total) {
                cap[1 + i][1 + r + j] = 1;
            }
        }
    }
    for i in 0..r {
        cap[source][1 + i] = rows[i] - table[i].iter().sum::<usize>();
    }
    for j in 0..c {
        cap[1 + r + j][sink] = cols[j] - (0..r).map(|i| table[i][j]).sum::<usize>();
    }
    let flow = max_flow(&mut cap, source, sink);
    debug_assert_eq!(flow, (0..r).map(|i| rows[i] - table[i].iter().sum::<usize>()).sum::<usize>());
    for i in 0..r {
        for j in 0..c {
            // Residual capacity flipped onto the reverse edge marks a raise.
            table[i][j] += cap[1 + r + j][1 + i];
        }
    }
    table
}

/// Edmonds-Karp on a dense capacity matrix, leaving residual capacities.
fn max_flow(cap: &mut [Vec<usize>], source: usize, sink: usize) -> usize {
    let n = cap.len();
    let mut flow = 0;
    loop {
        let mut parent = vec![usize::MAX; n];
        parent[source] = source;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if parent[v] == usize::MAX && cap[u][v] > 0 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            return flow;
        }
        let mut push = usize::MAX;
        let mut v = sink;
        while v != source {
            push = push.min(cap[parent[v]][v]);
            v = parent[v];
        }
        let mut v = sink;
        while v != source {
            let u = parent[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        flow += push;
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::{Sample, Schema};

    fn labeled(labels: &[usize], n_classes: usize) -> Dataset {
        let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
        let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| Sample::new(i, vec![i as f64], Some(c)))
            .collect();
        Dataset::from_samples("t", Schema::continuous(&["x"], "y", &class_refs), samples).unwrap()
    }

    #[test]
    fn iris_shaped_folds() {
        let labels: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let d = labeled(&labels, 3);
        let folds = stratified_kfold(&d, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 30);
            assert_eq!(f.pool.len(), 120);
            for c in 0..3 {
                assert_eq!(f.test.iter().filter(|&&id| labels[id] == c).count(), 10);
            }
        }
    }

    #[test]
    fn k_must_be_at_least_two() {
        let d = labeled(&[0, 1, 0, 1], 2);
        assert!(matches!(stratified_kfold(&d, 1, 0), Err(DatasetError::TooFewFolds(1))));
    }

    #[test]
    fn small_class_rejected() {
        let d = labeled(&[0, 0, 0, 1], 2);
        assert!(matches!(
            stratified_kfold(&d, 2, 0),
            Err(DatasetError::ClassTooSmall { class: 1, .. })
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let d = labeled(&labels, 3);
        assert_eq!(stratified_kfold(&d, 4, 9).unwrap(), stratified_kfold(&d, 4, 9).unwrap());
        assert_ne!(stratified_kfold(&d, 4, 9).unwrap(), stratified_kfold(&d, 4, 10).unwrap());
    }

    proptest! {
        #[test]
        fn partition_and_balance(
            counts in proptest::collection::vec(5usize..40, 2..6),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let d = labeled(&labels, counts.len());
            let folds = stratified_kfold(&d, k, seed).unwrap();
            let mut seen = vec![0usize; d.len()];
            for f in &folds {
                for &id in &f.test {
                    seen[id] += 1;
                }
                prop_assert_eq!(f.test.len() + f.pool.len(), d.len());
                let pool_set: std::collections::HashSet<_> = f.pool.iter().collect();
                prop_assert!(f.test.iter().all(|id| !pool_set.contains(id)));
                for (c, &n) in counts.iter().enumerate() {
                    let in_fold = f.test.iter().filter(|&&id| labels[id] == c).count() as f64;
                    let expected = f.test.len() as f64 * n as f64 / d.len() as f64;
                    prop_assert!((in_fold - expected).abs() <= 1.0 + 1e-12,
                        "class {} fold {}: {} vs {}", c, f.fold, in_fold, expected);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
