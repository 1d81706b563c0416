use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::select::{density_init, select_4ds, select_random, select_us, FourDsInput, Weights};
use super::{ActiveError, AlConfig, AlRunRecord, Oracle, RoundRecord, StrategyKind};
use crate::dataset::{Dataset, FoldSplit, Sample, SampleId};
use crate::kernels::{GramMatrix, KernelContext, KernelKind, KernelSpec, PairDistance};
use crate::mixture::{disputed_components, fit_cmm_sha, refine_transductive, tune_vi, MixtureError, MixtureModel, ViConfig, ViGrid};
use crate::svm::{train_csvm_lenient, tune_hyperparams, GridPoint, GridSearchSpec, SvmModel, TuneInput};

/// Fits the unsupervised starting model on the pool of a fold, choosing VI
/// settings by representativity.
pub fn fit_initial_model(
    dataset: &Dataset,
    pool: &[SampleId],
    grid: &ViGrid,
    base: &ViConfig,
) -> Result<(ViConfig, MixtureModel, f64), MixtureError> {
    let refs = dataset.subset(pool);
    tune_vi(&refs, &dataset.layout(), grid, base)
}

/// Everything needed to rebuild a session by replaying its answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dataset: String,
    pub config: AlConfig,
    pub fold: FoldSplit,
    pub initial_model: MixtureModel,
    pub answers: Vec<Vec<(SampleId, usize)>>,
}

/// One active learning run on one fold.
///
/// Labels are only known to the session once an oracle supplied them; the
/// ground truth in the dataset is used for test accuracy alone.
pub struct PalSession {
    dataset: Arc<Dataset>,
    cfg: AlConfig,
    fold: FoldSplit,
    n_classes: usize,
    working: Vec<Sample>,
    initial_model: MixtureModel,
    model: Arc<MixtureModel>,
    ctx: KernelContext,
    columns: Vec<Option<Arc<Vec<PairDistance>>>>,
    labeled: Vec<(SampleId, usize)>,
    pool: Vec<SampleId>,
    hyper: Option<GridPoint>,
    svm: Option<SvmModel>,
    weights: Weights,
    last_train_accuracy: Option<f64>,
    rng: ChaCha8Rng,
    pending: Option<Vec<SampleId>>,
    rounds: Vec<RoundRecord>,
    answers: Vec<Vec<(SampleId, usize)>>,
}

impl PalSession {
    pub fn new(dataset: Arc<Dataset>, fold: FoldSplit, initial_model: MixtureModel, cfg: AlConfig) -> Result<Self, ActiveError> {
        let n_classes = dataset.n_classes();
        cfg.validate(n_classes, fold.pool.len())?;
        let n = dataset.len();
        if let Some(&bad) = fold.pool.iter().chain(&fold.test).find(|&&id| id >= n) {
            return Err(ActiveError::Invalid(format!("fold references sample {bad} of {n}")));
        }
        if initial_model.layout() != &dataset.layout() {
            return Err(ActiveError::Invalid("mixture layout does not match the dataset".into()));
        }
        let working: Vec<Sample> = dataset.samples.iter().map(|s| Sample { label: None, ..s.clone() }).collect();
        let model = Arc::new(initial_model.clone());
        let ctx = KernelContext::new(cfg.kernel, Some(model.clone()), &working, &dataset.layout())?;
        let mut pool = fold.pool.clone();
        pool.sort_unstable();
        Ok(PalSession {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            hyper: cfg.hyperparameters,
            columns: vec![None; n],
            dataset,
            cfg,
            fold,
            n_classes,
            working,
            initial_model,
            model,
            ctx,
            labeled: Vec::new(),
            pool,
            svm: None,
            weights: Weights::default(),
            last_train_accuracy: None,
            pending: None,
            rounds: Vec::new(),
            answers: Vec::new(),
        })
    }

    /// Rebuilds a session by replaying the recorded answers.
    pub fn resume(dataset: Arc<Dataset>, cp: Checkpoint) -> Result<Self, ActiveError> {
        let mut s = PalSession::new(dataset, cp.fold, cp.initial_model, cp.config)?;
        for (round, batch) in cp.answers.into_iter().enumerate() {
            let q = s.next_queries()?;
            if q.len() != batch.len() || q.iter().zip(&batch).any(|(a, b)| *a != b.0) {
                return Err(ActiveError::CheckpointMismatch(round + 1));
            }
            s.submit(&batch)?;
        }
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dataset: self.dataset.name().to_string(),
            config: self.cfg.clone(),
            fold: self.fold.clone(),
            initial_model: self.initial_model.clone(),
            answers: self.answers.clone(),
        }
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn config(&self) -> &AlConfig {
        &self.cfg
    }

    pub fn fold(&self) -> &FoldSplit {
        &self.fold
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.rounds.len()
    }

    pub fn labeled(&self) -> &[(SampleId, usize)] {
        &self.labeled
    }

    /// Unlabeled pool ids, ascending.
    pub fn pool(&self) -> &[SampleId] {
        &self.pool
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn svm(&self) -> Option<&SvmModel> {
        self.svm.as_ref()
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn hyperparameters(&self) -> Option<GridPoint> {
        self.hyper
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn pending(&self) -> Option<&[SampleId]> {
        self.pending.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.labeled.len() >= self.cfg.budget
    }

    pub fn record(&self) -> AlRunRecord {
        AlRunRecord {
            dataset: self.dataset.name().to_string(),
            fold: self.fold.fold,
            strategy: self.cfg.strategy,
            kernel: self.cfg.kernel,
            hyperparameters: self.hyper,
            rounds: self.rounds.clone(),
        }
    }

    /// The current query set, computed on first call of each round.
    pub fn next_queries(&mut self) -> Result<Vec<SampleId>, ActiveError> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        if self.is_finished() {
            return Err(ActiveError::Finished);
        }
        let remaining = self.cfg.budget - self.labeled.len();
        let queries = if self.labeled.is_empty() {
            let m = self.cfg.init_size(self.n_classes).min(remaining);
            let refs: Vec<&Sample> = self.pool.iter().map(|&id| &self.working[id]).collect();
            density_init(&self.model, &refs, m, &mut self.rng)?
        } else {
            let k = self.cfg.query_size().min(remaining);
            match self.cfg.strategy {
                StrategyKind::Random => select_random(&self.pool, k, &mut self.rng),
                StrategyKind::Uncertainty => {
                    let d = self.pool_distances();
                    let pos = |id: SampleId| self.pool.binary_search(&id).expect("pool id");
                    select_us(&self.pool, k, |id| d[pos(id)])
                }
                StrategyKind::FourDs => self.select_four_ds(k),
            }
        };
        self.pending = Some(queries.clone());
        Ok(queries)
    }

    fn select_four_ds(&self, k: usize) -> Vec<SampleId> {
        let distance = self.pool_distances();
        let per_sample: Vec<(f64, Vec<f64>)> = self
            .pool
            .par_iter()
            .map(|&id| {
                let s = &self.working[id];
                (self.model.log_density(s), self.model.responsibilities(s))
            })
            .collect();
        let (log_density, responsibilities): (Vec<f64>, Vec<Vec<f64>>) = per_sample.into_iter().unzip();
        let mut labeled_resp_sum = vec![0.0; self.model.n_components()];
        for &(id, _) in &self.labeled {
            for (acc, r) in labeled_resp_sum.iter_mut().zip(self.model.responsibilities(&self.working[id])) {
                *acc += r;
            }
        }
        let priors = self.model.weights();
        let input = FourDsInput {
            pool: &self.pool,
            distance: &distance,
            log_density: &log_density,
            responsibilities: &responsibilities,
            priors: &priors,
            labeled_resp_sum: &labeled_resp_sum,
            n_labeled: self.labeled.len(),
        };
        select_4ds(&input, k, self.cfg.lambda, &self.weights)
    }

    fn kernel_spec(&self) -> KernelSpec {
        self.hyper.map(|h| h.kernel).unwrap_or(KernelSpec {
            kind: self.cfg.kernel,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        })
    }

    /// Decision-boundary distance of every pool sample (0 before training).
    fn pool_distances(&self) -> Vec<f64> {
        let Some(svm) = &self.svm else {
            return vec![0.0; self.pool.len()];
        };
        let spec = self.kernel_spec();
        self.pool
            .par_iter()
            .map(|&x| svm.decision_distance(&|sv| spec.value(self.column(sv)[x])))
            .collect()
    }

    fn column(&self, id: SampleId) -> &[PairDistance] {
        self.columns[id].as_deref().expect("distance column of a labeled sample")
    }

    fn ensure_columns(&mut self) {
        let missing: Vec<SampleId> = self.labeled.iter().map(|&(id, _)| id).filter(|&id| self.columns[id].is_none()).collect();
        let computed: Vec<(SampleId, Vec<PairDistance>)> = missing.par_iter().map(|&id| (id, self.ctx.column(id))).collect();
        for (id, col) in computed {
            self.columns[id] = Some(Arc::new(col));
        }
    }

    /// Accepts labels for the pending queries and retrains.
    pub fn submit(&mut self, answers: &[(SampleId, usize)]) -> Result<RoundRecord, ActiveError> {
        let Some(pending) = self.pending.clone() else {
            return Err(match answers.first() {
                Some(&(id, _)) => ActiveError::NotQueried(id),
                None if self.is_finished() => ActiveError::Finished,
                None => ActiveError::Invalid("no queries pending".into()),
            });
        };
        if let Some(&(id, _)) = answers.iter().find(|(id, _)| !pending.contains(id)) {
            return Err(ActiveError::NotQueried(id));
        }
        let mut batch = Vec::with_capacity(pending.len());
        for &id in &pending {
            let &(_, class) = answers.iter().find(|(a, _)| *a == id).ok_or(ActiveError::MissingLabel(id))?;
            if class >= self.n_classes {
                return Err(ActiveError::BadLabel { id, class });
            }
            batch.push((id, class));
        }
        let start = Instant::now();

        for &(id, class) in &batch {
            self.working[id].label = Some(class);
            self.labeled.push((id, class));
        }
        self.pool.retain(|id| !pending.contains(id));
        self.pending = None;

        if self.cfg.refine {
            self.refine()?;
        }
        self.ensure_columns();
        if self.hyper.is_none() {
            self.hyper = Some(self.tune()?);
        }
        let hyper = self.hyper.expect("tuned above");
        let spec = hyper.kernel;
        let ids: Vec<SampleId> = self.labeled.iter().map(|&(id, _)| id).collect();
        let labels: Vec<usize> = self.labeled.iter().map(|&(_, c)| c).collect();
        let gram = GramMatrix::from_fn(ids.clone(), |a, b| if a == b { 1.0 } else { spec.value(self.column(ids[a])[ids[b]]) });
        let svm = train_csvm_lenient(&gram, &labels, self.n_classes, hyper.c, &self.cfg.smo)?.with_kernel(spec);

        let predict = |x: SampleId| svm.predict(&|sv| spec.value(self.column(sv)[x]));
        let train_hits = self.labeled.par_iter().filter(|&&(id, c)| predict(id) == c).count();
        let train_accuracy = train_hits as f64 / self.labeled.len() as f64;
        let test_hits = self
            .fold
            .test
            .par_iter()
            .filter(|&&id| Some(predict(id)) == self.dataset.samples[id].label)
            .count();
        let test_accuracy = if self.fold.test.is_empty() {
            0.0
        } else {
            test_hits as f64 / self.fold.test.len() as f64
        };

        if self.cfg.strategy == StrategyKind::FourDs {
            if let Some(prev) = self.last_train_accuracy {
                self.weights.adapt(train_accuracy >= prev, self.cfg.eta);
            }
        }
        self.last_train_accuracy = Some(train_accuracy);

        let record = RoundRecord {
            round: self.rounds.len() + 1,
            labeled: self.labeled.len(),
            selected: pending,
            labels: batch.iter().map(|&(_, c)| c).collect(),
            train_accuracy,
            test_accuracy,
            components: self.model.n_components(),
            support_vectors: svm.support_ids().len(),
            converged: svm.converged(),
            weights: (self.cfg.strategy == StrategyKind::FourDs).then_some(self.weights),
            elapsed_ms: self.cfg.record_timing.then(|| start.elapsed().as_millis() as u64),
        };
        self.svm = Some(svm);
        self.rounds.push(record.clone());
        self.answers.push(batch);
        Ok(record)
    }

    fn refine(&mut self) -> Result<(), ActiveError> {
        let labeled: Vec<&Sample> = self.labeled.iter().map(|&(id, _)| &self.working[id]).collect();
        if disputed_components(&self.model, &labeled, self.cfg.refine_config.purity_threshold).is_empty() {
            return Ok(());
        }
        let unlabeled: Vec<&Sample> = self.pool.iter().map(|&id| &self.working[id]).collect();
        let refined = refine_transductive(&self.model, &labeled, &unlabeled, &self.cfg.refine_config)?;
        self.model = Arc::new(refined);
        if self.cfg.kernel == KernelKind::Rwm {
            self.ctx = KernelContext::new(self.cfg.kernel, Some(self.model.clone()), &self.working, &self.dataset.layout())?;
            self.columns.iter_mut().for_each(|c| *c = None);
        }
        Ok(())
    }

    fn tune(&self) -> Result<GridPoint, ActiveError> {
        let layout = self.dataset.layout();
        let spec = self
            .cfg
            .grid
            .clone()
            .unwrap_or_else(|| GridSearchSpec::for_kernel(self.cfg.kernel, layout.n_categorical() > 0));
        let labeled: Vec<&Sample> = self.labeled.iter().map(|&(id, _)| &self.working[id]).collect();
        let reference: Option<Vec<usize>> = fit_cmm_sha(&self.model, &labeled, self.n_classes)
            .ok()
            .map(|cmm| self.pool.par_iter().map(|&id| cmm.predict(&self.working[id])).collect());
        let input = TuneInput {
            ctx: &self.ctx,
            labeled: &self.labeled,
            pool: &self.pool,
            reference: reference.as_deref(),
            n_classes: self.n_classes,
            seed: self.cfg.seed,
        };
        Ok(tune_hyperparams(&input, self.cfg.kernel, &spec)?.best.point)
    }
}

/// Drives a session to its budget. On an oracle failure the session keeps
/// its state and can be checkpointed or continued.
pub fn run_pal(session: &mut PalSession, oracle: &mut dyn Oracle) -> Result<AlRunRecord, ActiveError> {
    while !session.is_finished() {
        let q = session.next_queries()?;
        let labels = oracle.answer(&q)?;
        if labels.len() != q.len() {
            return Err(ActiveError::Oracle(format!("{} labels for {} queries", labels.len(), q.len())));
        }
        let answers: Vec<(SampleId, usize)> = q.into_iter().zip(labels).collect();
        session.submit(&answers)?;
    }
    Ok(session.record())
}
