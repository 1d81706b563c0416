//! Variational Bayes for Gaussian/multinomial mixtures with conjugate priors
//! (Dirichlet weights, Gaussian-Wishart components, Dirichlet categories).

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{Component, MixtureError, MixtureModel, LN_2PI};
use crate::dataset::{FeatureLayout, Sample};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViConfig {
    /// Components at the start of inference.
    pub max_components: usize,
    /// Dirichlet concentration of the weight prior.
    pub weight_concentration: f64,
    /// Precision scaling of the Gaussian mean prior.
    pub mean_precision: f64,
    /// Wishart degrees of freedom above the continuous dimension count.
    pub dof_offset: f64,
    /// Prior covariance as a multiple of the data covariance.
    pub covariance_scale: f64,
    /// Dirichlet concentration of the category prior.
    pub category_concentration: f64,
    /// Relative change of the bound that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Expected weight below which a component is removed; `None` means
    /// `1/(2·max_components)`.
    pub prune_threshold: Option<f64>,
    /// After convergence, try removing each component and keep the removal
    /// if the bound improves.
    pub deletion_moves: bool,
    /// Iterations a deletion trial gets before it is compared with the
    /// current fit. The bound only grows, so a trial that is already ahead
    /// is accepted and then run to convergence.
    pub deletion_screen_iterations: usize,
    pub seed: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            max_components: 10,
            weight_concentration: 0.01,
            mean_precision: 1.0,
            dof_offset: 1.0,
            covariance_scale: 0.1,
            category_concentration: 1.0,
            tolerance: 1e-7,
            max_iterations: 500,
            prune_threshold: None,
            deletion_moves: true,
            deletion_screen_iterations: 30,
            seed: 0,
        }
    }
}

impl ViConfig {
    pub fn prune_threshold(&self) -> f64 {
        self.prune_threshold.unwrap_or(0.5 / self.max_components.max(1) as f64)
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        let bad = |what: &str| Err(MixtureError::Invalid(what.to_string()));
        if self.max_components == 0 {
            return bad("max_components must be at least 1");
        }
        if self.deletion_screen_iterations == 0 {
            return bad("deletion_screen_iterations must be at least 1");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        let t = self.prune_threshold();
        if !(t > 0.0 && t < 1.0 / self.max_components as f64) {
            return bad("prune threshold must lie in (0, 1/max_components)");
        }
        for (v, name) in [
            (self.weight_concentration, "weight_concentration"),
            (self.mean_precision, "mean_precision"),
            (self.covariance_scale, "covariance_scale"),
            (self.category_concentration, "category_concentration"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.dof_offset > -1.0) {
            return bad("dof_offset must exceed -1");
        }
        Ok(())
    }
}

/// Result of a traced run: the model plus the bound after every iteration,
/// grouped into phases separated by pruning or deletion steps.
#[derive(Debug, Clone)]
pub struct ViFit {
    pub model: MixtureModel,
    pub bound_phases: Vec<Vec<f64>>,
    pub final_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn train_vi(samples: &[&Sample], layout: &FeatureLayout, cfg: &ViConfig) -> Result<MixtureModel, MixtureError> {
    train_vi_traced(samples, layout, cfg).map(|f| f.model)
}

pub fn train_vi_traced(samples: &[&Sample], layout: &FeatureLayout, cfg: &ViConfig) -> Result<ViFit, MixtureError> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(MixtureError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let data = Data::new(samples, layout)?;
    let prior = Prior::new(&data, &data, cfg)?;
    let k = cfg.max_components.min(data.n());
    let resp = kmeans_init(&data, k, cfg.seed);
    let mut best = fit_with_pruning(&data, &prior, resp, cfg)?;

    if cfg.deletion_moves {
        let screen = ViConfig {
            max_iterations: cfg.deletion_screen_iterations.min(cfg.max_iterations),
            ..cfg.clone()
        };
        'outer: while best.posts.len() > 1 {
            let mut order: Vec<usize> = (0..best.posts.len()).collect();
            order.sort_by(|&a, &b| best.posts[a].conc.total_cmp(&best.posts[b].conc));
            for j in order {
                let resp = drop_column(&best.resp, best.posts.len(), j);
                let trial = fit_with_pruning(&data, &prior, resp, &screen)?;
                if trial.bound > best.bound + cfg.tolerance * best.bound.abs() {
                    let mut phases = std::mem::take(&mut best.phases);
                    phases.extend(trial.phases.iter().cloned());
                    let mut iterations = best.iterations + trial.iterations;
                    let trial = if trial.converged {
                        trial
                    } else {
                        let rest = fit_with_pruning(&data, &prior, trial.resp, cfg)?;
                        phases.extend(rest.phases.iter().cloned());
                        iterations += rest.iterations;
                        rest
                    };
                    best = trial;
                    best.phases = phases;
                    best.iterations = iterations;
                    continue 'outer;
                }
            }
            break;
        }
    }

    let model = best.to_model(&data)?;
    Ok(ViFit {
        model,
        final_bound: best.bound,
        bound_phases: best.phases,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// One-component posterior for `samples`, with the prior scale taken from
/// `reference`. Works for a single sample, where the prior alone shapes the
/// covariance.
pub fn single_component(
    samples: &[&Sample],
    reference: &[&Sample],
    layout: &FeatureLayout,
    cfg: &ViConfig,
) -> Result<MixtureModel, MixtureError> {
    if samples.is_empty() {
        return Err(MixtureError::TooFewSamples { needed: 1, got: 0 });
    }
    let data = Data::new(samples, layout)?;
    let reference_data = if reference.is_empty() { Data::new(samples, layout)? } else { Data::new(reference, layout)? };
    let prior = Prior::new(&data, &reference_data, cfg)?;
    let resp = vec![1.0; data.n()];
    let (posts, _) = m_step(&data, &prior, &resp, 1)?;
    Fit {
        posts,
        resp,
        bound: 0.0,
        phases: Vec::new(),
        iterations: 1,
        converged: true,
    }
    .to_model(&data)
}

struct Data {
    x: Vec<Vec<f64>>,
    codes: Vec<Vec<usize>>,
    layout: FeatureLayout,
}

impl Data {
    fn new(samples: &[&Sample], layout: &FeatureLayout) -> Result<Self, MixtureError> {
        if layout.n_continuous == 0 && layout.categorical.is_empty() {
            return Err(MixtureError::NoDimensions);
        }
        let mut x = Vec::with_capacity(samples.len());
        let mut codes = Vec::with_capacity(samples.len());
        for s in samples {
            if s.continuous.len() != layout.n_continuous || s.categorical.len() != layout.encoded_len() {
                return Err(MixtureError::Dimension(format!("sample {} does not match the layout", s.id)));
            }
            x.push(s.continuous.clone());
            codes.push(if layout.categorical.is_empty() { Vec::new() } else { layout.category_codes(&s.categorical) });
        }
        Ok(Data {
            x,
            codes,
            layout: layout.clone(),
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn d(&self) -> usize {
        self.layout.n_continuous
    }

    fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d());
        for x in &self.x {
            for (mi, v) in m.iter_mut().zip(x) {
                *mi += v;
            }
        }
        m / self.n() as f64
    }

    fn covariance(&self) -> DMatrix<f64> {
        let d = self.d();
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for x in &self.x {
            let diff = DVector::from_iterator(d, x.iter().zip(mean.iter()).map(|(a, b)| a - b));
            cov += &diff * diff.transpose();
        }
        cov / (self.n() as f64).max(1.0)
    }
}

struct Prior {
    conc: f64,
    beta: f64,
    mean: DVector<f64>,
    scale_inv: DMatrix<f64>,
    log_det_scale: f64,
    dof: f64,
    cat_conc: f64,
}

impl Prior {
    fn new(data: &Data, reference: &Data, cfg: &ViConfig) -> Result<Self, MixtureError> {
        let d = data.d();
        let dof = d as f64 + cfg.dof_offset;
        let mut scale_inv = reference.covariance() * (cfg.covariance_scale * dof);
        let (factor, ridge) = linalg::regularized_cholesky(&scale_inv).ok_or(MixtureError::NotPositiveDefinite(0))?;
        for i in 0..d {
            scale_inv[(i, i)] += ridge;
        }
        Ok(Prior {
            conc: cfg.weight_concentration,
            beta: cfg.mean_precision,
            mean: reference.mean(),
            log_det_scale: -linalg::log_det_from_factor(&factor),
            scale_inv,
            dof,
            cat_conc: cfg.category_concentration,
        })
    }
}

#[derive(Clone)]
struct Post {
    conc: f64,
    beta: f64,
    mean: DVector<f64>,
    scale_inv: DMatrix<f64>,
    /// Lower Cholesky factor of `scale_inv`.
    factor: DMatrix<f64>,
    scale: DMatrix<f64>,
    log_det_scale: f64,
    dof: f64,
    cat: Vec<Vec<f64>>,
    e_log_lambda: f64,
    e_log_delta: Vec<Vec<f64>>,
}

struct Stats {
    nk: f64,
    xbar: DVector<f64>,
    scatter: DMatrix<f64>,
}

/// `ln C(a) = ln Γ(Σa) − Σ ln Γ(a_i)`, the Dirichlet log normalizer.
fn ln_dirichlet_norm(a: &[f64]) -> f64 {
    ln_gamma(a.iter().sum()) - a.iter().map(|&v| ln_gamma(v)).sum::<f64>()
}

/// Wishart log normalizer `ln B(W, ν)`.
fn ln_wishart_norm(log_det_scale: f64, dof: f64, d: usize) -> f64 {
    let df = d as f64;
    let mut out = -0.5 * dof * log_det_scale - 0.5 * dof * df * std::f64::consts::LN_2
        - 0.25 * df * (df - 1.0) * std::f64::consts::PI.ln();
    for i in 1..=d {
        out -= ln_gamma(0.5 * (dof + 1.0 - i as f64));
    }
    out
}

fn e_log_det_precision(log_det_scale: f64, dof: f64, d: usize) -> f64 {
    let mut out = d as f64 * std::f64::consts::LN_2 + log_det_scale;
    for i in 1..=d {
        out += digamma(0.5 * (dof + 1.0 - i as f64));
    }
    out
}

fn m_step(data: &Data, prior: &Prior, resp: &[f64], k: usize) -> Result<(Vec<Post>, Vec<Stats>), MixtureError> {
    let d = data.d();
    let n = data.n();
    let mut posts = Vec::with_capacity(k);
    let mut stats = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        let mut xbar = DVector::zeros(d);
        if nk > 0.0 {
            for (i, x) in data.x.iter().enumerate() {
                let r = resp[i * k + j];
                if r > 0.0 {
                    for (m, v) in xbar.iter_mut().zip(x) {
                        *m += r * v;
                    }
                }
            }
            xbar /= nk;
        }
        let mut scatter = DMatrix::zeros(d, d);
        if nk > 0.0 && d > 0 {
            for (i, x) in data.x.iter().enumerate() {
                let r = resp[i * k + j];
                if r > 0.0 {
                    let diff = DVector::from_iterator(d, x.iter().zip(xbar.iter()).map(|(a, b)| a - b));
                    scatter.ger(r, &diff, &diff, 1.0);
                }
            }
            scatter /= nk;
        }

        let beta = prior.beta + nk;
        let mean = (&prior.mean * prior.beta + &xbar * nk) / beta;
        let shift = &xbar - &prior.mean;
        let mut scale_inv = &prior.scale_inv + &scatter * nk + (&shift * shift.transpose()) * (prior.beta * nk / beta);
        scale_inv = linalg::symmetrize(scale_inv);
        let (factor, ridge) = linalg::regularized_cholesky(&scale_inv).ok_or(MixtureError::NotPositiveDefinite(j))?;
        for i in 0..d {
            scale_inv[(i, i)] += ridge;
        }
        let dof = prior.dof + nk;
        let log_det_scale = -linalg::log_det_from_factor(&factor);

        let mut cat: Vec<Vec<f64>> = data.layout.categorical.iter().map(|&kd| vec![prior.cat_conc; kd]).collect();
        for (i, codes) in data.codes.iter().enumerate() {
            let r = resp[i * k + j];
            for (block, &c) in cat.iter_mut().zip(codes) {
                block[c] += r;
            }
        }
        let e_log_delta = cat
            .iter()
            .map(|b| {
                let total = digamma(b.iter().sum());
                b.iter().map(|&v| digamma(v) - total).collect()
            })
            .collect();

        posts.push(Post {
            conc: prior.conc + nk,
            beta,
            scale: linalg::inverse_from_factor(&factor),
            e_log_lambda: e_log_det_precision(log_det_scale, dof, d),
            mean,
            scale_inv,
            factor,
            log_det_scale,
            dof,
            cat,
            e_log_delta,
        });
        stats.push(Stats { nk, xbar, scatter });
    }
    Ok((posts, stats))
}

fn e_log_weights(posts: &[Post]) -> Vec<f64> {
    let total = digamma(posts.iter().map(|p| p.conc).sum());
    posts.iter().map(|p| digamma(p.conc) - total).collect()
}

fn e_step(data: &Data, posts: &[Post]) -> Vec<f64> {
    let d = data.d();
    let k = posts.len();
    let e_log_pi = e_log_weights(posts);
    let mut resp = vec![0.0; data.n() * k];
    let mut row = vec![0.0; k];
    for (i, (x, codes)) in data.x.iter().zip(&data.codes).enumerate() {
        for (j, p) in posts.iter().enumerate() {
            let mut v = e_log_pi[j];
            if d > 0 {
                let mean: Vec<f64> = p.mean.iter().copied().collect();
                let quad = linalg::quad_form_inv(&p.factor, x, &mean);
                v += 0.5 * p.e_log_lambda - 0.5 * d as f64 * LN_2PI - 0.5 * (d as f64 / p.beta + p.dof * quad);
            }
            for (block, &c) in p.e_log_delta.iter().zip(codes) {
                v += block[c];
            }
            row[j] = v;
        }
        let r = super::responsibilities_from_log_joint(&row, || row.clone());
        resp[i * k..(i + 1) * k].copy_from_slice(&r);
    }
    resp
}

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

fn bound(data: &Data, prior: &Prior, posts: &[Post], stats: &[Stats], resp: &[f64]) -> f64 {
    let d = data.d();
    let df = d as f64;
    let k = posts.len();
    let e_log_pi = e_log_weights(posts);
    let mut total = 0.0;

    // Expected complete-data log likelihood and prior terms.
    for ((p, s), &lpi) in posts.iter().zip(stats).zip(&e_log_pi) {
        if d > 0 {
            if s.nk > 0.0 {
                let diff = &s.xbar - &p.mean;
                total += 0.5
                    * s.nk
                    * (p.e_log_lambda
                        - df / p.beta
                        - p.dof * linalg::trace_product(&s.scatter, &p.scale)
                        - p.dof * quad(&p.scale, &diff)
                        - df * LN_2PI);
            }
            let dm = &p.mean - &prior.mean;
            total += 0.5
                * (df * (prior.beta / (2.0 * std::f64::consts::PI)).ln() + p.e_log_lambda
                    - df * prior.beta / p.beta
                    - prior.beta * p.dof * quad(&p.scale, &dm));
            total += ln_wishart_norm(prior.log_det_scale, prior.dof, d);
            total += 0.5 * (prior.dof - df - 1.0) * p.e_log_lambda;
            total -= 0.5 * p.dof * linalg::trace_product(&prior.scale_inv, &p.scale);

            // − E[ln q(μ, Λ)]
            let entropy = -ln_wishart_norm(p.log_det_scale, p.dof, d) - 0.5 * (p.dof - df - 1.0) * p.e_log_lambda
                + 0.5 * p.dof * df;
            total -= 0.5 * p.e_log_lambda + 0.5 * df * (p.beta / (2.0 * std::f64::consts::PI)).ln() - 0.5 * df - entropy;
        }
        total += s.nk * lpi;
        for (block, e) in p.cat.iter().zip(&p.e_log_delta) {
            let prior_block = vec![prior.cat_conc; block.len()];
            for (&a, &el) in block.iter().zip(e) {
                // data term: counts are a − prior concentration
                total += (a - prior.cat_conc) * el;
                total += (prior.cat_conc - 1.0) * el;
                total -= (a - 1.0) * el;
            }
            total += ln_dirichlet_norm(&prior_block) - ln_dirichlet_norm(block);
        }
    }

    let prior_conc = vec![prior.conc; k];
    let post_conc: Vec<f64> = posts.iter().map(|p| p.conc).collect();
    total += ln_dirichlet_norm(&prior_conc) + (prior.conc - 1.0) * e_log_pi.iter().sum::<f64>();
    total -= posts.iter().zip(&e_log_pi).map(|(p, l)| (p.conc - 1.0) * l).sum::<f64>() + ln_dirichlet_norm(&post_conc);
    total -= resp.iter().filter(|&&r| r > 0.0).map(|&r| r * r.ln()).sum::<f64>();
    total
}

struct Fit {
    posts: Vec<Post>,
    resp: Vec<f64>,
    bound: f64,
    phases: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
}

impl Fit {
    fn to_model(&self, data: &Data) -> Result<MixtureModel, MixtureError> {
        let components = self
            .posts
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let cov = &p.scale_inv / p.dof;
                let cat = p.cat.iter().map(|b| {
                    let t: f64 = b.iter().sum();
                    b.iter().map(|v| v / t).collect()
                });
                Component::new(p.conc, p.mean.iter().copied().collect(), cov, cat.collect())
                    .map_err(|_| MixtureError::NotPositiveDefinite(j))
            })
            .collect::<Result<Vec<_>, _>>()?;
        MixtureModel::new(data.layout.clone(), components)
    }
}

struct Phase {
    posts: Vec<Post>,
    resp: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn run_phase(data: &Data, prior: &Prior, mut resp: Vec<f64>, k: usize, cfg: &ViConfig) -> Result<Phase, MixtureError> {
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut posts;
    loop {
        let (p, s) = m_step(data, prior, &resp, k)?;
        posts = p;
        let l = bound(data, prior, &posts, &s, &resp);
        if let Some(&prev) = trace.last() {
            if (l - prev).abs() <= cfg.tolerance * l.abs().max(1.0) {
                trace.push(l);
                converged = true;
                break;
            }
        }
        trace.push(l);
        if trace.len() >= cfg.max_iterations {
            break;
        }
        resp = e_step(data, &posts);
    }
    Ok(Phase {
        posts,
        resp,
        trace,
        converged,
    })
}

fn fit_with_pruning(data: &Data, prior: &Prior, mut resp: Vec<f64>, cfg: &ViConfig) -> Result<Fit, MixtureError> {
    let threshold = cfg.prune_threshold();
    let mut phases = Vec::new();
    let mut iterations = 0;
    loop {
        let k = resp.len() / data.n();
        let phase = run_phase(data, prior, resp, k, cfg)?;
        iterations += phase.trace.len();
        let total: f64 = phase.posts.iter().map(|p| p.conc).sum();
        let mut keep: Vec<usize> = (0..k).filter(|&j| phase.posts[j].conc / total >= threshold).collect();
        if keep.is_empty() {
            let largest = (0..k).max_by(|&a, &b| phase.posts[a].conc.total_cmp(&phase.posts[b].conc)).unwrap_or(0);
            keep.push(largest);
        }
        let bound = *phase.trace.last().unwrap_or(&f64::NEG_INFINITY);
        let converged = phase.converged;
        phases.push(phase.trace);
        if keep.len() == k {
            return Ok(Fit {
                posts: phase.posts,
                resp: phase.resp,
                bound,
                phases,
                iterations,
                converged,
            });
        }
        resp = select_columns(&phase.resp, k, &keep);
    }
}

fn select_columns(resp: &[f64], k: usize, keep: &[usize]) -> Vec<f64> {
    let n = resp.len() / k;
    let kk = keep.len();
    let mut out = vec![0.0; n * kk];
    for i in 0..n {
        let row = &resp[i * k..(i + 1) * k];
        let total: f64 = keep.iter().map(|&j| row[j]).sum();
        for (c, &j) in keep.iter().enumerate() {
            out[i * kk + c] = if total > 0.0 { row[j] / total } else { 1.0 / kk as f64 };
        }
    }
    out
}

fn drop_column(resp: &[f64], k: usize, j: usize) -> Vec<f64> {
    let keep: Vec<usize> = (0..k).filter(|&c| c != j).collect();
    select_columns(resp, k, &keep)
}

/// Hard responsibilities from seeded k-means++ over the continuous part and
/// the 1-of-K encoding.
fn kmeans_init(data: &Data, k: usize, seed: u64) -> Vec<f64> {
    let n = data.n();
    let feats: Vec<Vec<f64>> = data
        .x
        .iter()
        .zip(&data.codes)
        .map(|(x, codes)| {
            let mut f = x.clone();
            for (&kd, &c) in data.layout.categorical.iter().zip(codes) {
                let mut block = vec![0.0; kd];
                block[c] = 1.0;
                f.extend(block);
            }
            f
        })
        .collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![feats[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = feats.iter().map(|f| dist2(f, &centers[0])).collect();
    while centers.len() < k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(&mut rng),
            Err(_) => rng.random_range(0..n),
        };
        centers.push(feats[pick].clone());
        let c = centers.last().expect("just pushed");
        for (d, f) in nearest.iter_mut().zip(&feats) {
            *d = d.min(dist2(f, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..25 {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(f, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let dim = feats[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in feats.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }

    let mut resp = vec![0.0; n * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    resp
}
