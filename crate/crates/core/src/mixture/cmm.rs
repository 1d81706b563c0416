//! Generative classifiers built on mixture models.

use serde::{Deserialize, Serialize};

use super::{single_component, train_vi, MixtureError, MixtureModel, ViConfig};
use crate::dataset::{FeatureLayout, Sample};
use crate::linalg::log_sum_exp;

/// Shared-components classifier: one mixture, each component softly
/// assigned to classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmmSha {
    pub model: MixtureModel,
    /// `J × C`; row `j` is the class distribution of component `j`.
    pub class_given_component: Vec<Vec<f64>>,
}

impl CmmSha {
    pub fn posterior(&self, x: &Sample) -> Vec<f64> {
        classify_cmm_sha(self, x)
    }

    pub fn predict(&self, x: &Sample) -> usize {
        super::argmax(&self.posterior(x))
    }
}

/// Fits the component-to-class matrix from responsibilities of the labeled
/// samples. Components that no labeled sample reaches get a uniform row.
pub fn fit_cmm_sha(m: &MixtureModel, labeled: &[&Sample], n_classes: usize) -> Result<CmmSha, MixtureError> {
    if labeled.is_empty() {
        return Err(MixtureError::NoLabels);
    }
    let j = m.n_components();
    let mut mass = vec![vec![0.0; n_classes]; j];
    for s in labeled {
        let c = s.label.ok_or(MixtureError::NoLabels)?;
        if c >= n_classes {
            return Err(MixtureError::Invalid(format!("class {c} out of range")));
        }
        for (row, r) in mass.iter_mut().zip(m.responsibilities(s)) {
            row[c] += r;
        }
    }
    for row in &mut mass {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / n_classes as f64);
        }
    }
    Ok(CmmSha {
        model: m.clone(),
        class_given_component: mass,
    })
}

pub fn classify_cmm_sha(c: &CmmSha, x: &Sample) -> Vec<f64> {
    let rho = c.model.responsibilities(x);
    let n_classes = c.class_given_component.first().map_or(0, Vec::len);
    let mut post = vec![0.0; n_classes];
    for (row, r) in c.class_given_component.iter().zip(&rho) {
        for (p, xi) in post.iter_mut().zip(row) {
            *p += xi * r;
        }
    }
    let total: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= total);
    post
}

/// Separate-components classifier: one mixture per class plus class priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmmSep {
    /// `None` for classes without labeled samples.
    pub class_models: Vec<Option<MixtureModel>>,
    pub class_priors: Vec<f64>,
}

impl CmmSep {
    pub fn posterior(&self, x: &Sample) -> Vec<f64> {
        classify_cmm_sep(self, x)
    }

    pub fn predict(&self, x: &Sample) -> usize {
        super::argmax(&self.posterior(x))
    }
}

/// Trains one mixture per class present in `labeled`. Classes with a single
/// sample get a one-component model whose prior scale comes from the whole
/// labeled set.
pub fn fit_cmm_sep(
    labeled: &[&Sample],
    layout: &FeatureLayout,
    n_classes: usize,
    cfg: &ViConfig,
) -> Result<CmmSep, MixtureError> {
    if labeled.is_empty() {
        return Err(MixtureError::NoLabels);
    }
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); n_classes];
    for s in labeled {
        let c = s.label.ok_or(MixtureError::NoLabels)?;
        by_class
            .get_mut(c)
            .ok_or_else(|| MixtureError::Invalid(format!("class {c} out of range")))?
            .push(s);
    }
    let total = labeled.len() as f64;
    let mut class_models = Vec::with_capacity(n_classes);
    let mut class_priors = Vec::with_capacity(n_classes);
    for members in &by_class {
        class_priors.push(members.len() as f64 / total);
        let model = match members.len() {
            0 => None,
            1 => Some(single_component(members, labeled, layout, cfg)?),
            _ => Some(match train_vi(members, layout, cfg) {
                Ok(m) => m,
                Err(_) => single_component(members, labeled, layout, cfg)?,
            }),
        };
        class_models.push(model);
    }
    Ok(CmmSep {
        class_models,
        class_priors,
    })
}

pub fn classify_cmm_sep(s: &CmmSep, x: &Sample) -> Vec<f64> {
    let log_joint: Vec<f64> = s
        .class_models
        .iter()
        .zip(&s.class_priors)
        .map(|(m, &p)| match m {
            Some(m) if p > 0.0 => p.ln() + m.log_density(x),
            _ => f64::NEG_INFINITY,
        })
        .collect();
    let z = log_sum_exp(&log_joint);
    if z.is_finite() {
        let mut post: Vec<f64> = log_joint.iter().map(|v| (v - z).exp()).collect();
        let t: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= t);
        post
    } else {
        let mut post = vec![0.0; log_joint.len()];
        post[super::argmax(&s.class_priors)] = 1.0;
        post
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::mixture::tests::{model, pt};

    fn labeled(x: &[f64], c: usize) -> Sample {
        Sample::new(0, x.to_vec(), Some(c))
    }

    #[test]
    fn single_component_counts_labels() {
        let m = model(&[(1.0, &[0.0], &[1.0])]);
        let pts = [labeled(&[0.0], 0), labeled(&[1.0], 0), labeled(&[2.0], 0), labeled(&[3.0], 1)];
        let refs: Vec<&Sample> = pts.iter().collect();
        let c = fit_cmm_sha(&m, &refs, 2).unwrap();
        assert_eq!(c.class_given_component, vec![vec![0.75, 0.25]]);
    }

    #[test]
    fn one_class_only() {
        let m = model(&[(0.5, &[0.0], &[1.0]), (0.5, &[3.0], &[1.0])]);
        let pts = [labeled(&[0.0], 1), labeled(&[3.0], 1)];
        let refs: Vec<&Sample> = pts.iter().collect();
        let c = fit_cmm_sha(&m, &refs, 3).unwrap();
        for row in &c.class_given_component {
            assert!((row[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_oracle_for_class_matrix() {
        let m = model(&[(0.5, &[-1.0], &[1.0]), (0.5, &[1.0], &[1.0])]);
        let pts = [labeled(&[-1.5], 0), labeled(&[0.2], 0), labeled(&[1.1], 1)];
        let refs: Vec<&Sample> = pts.iter().collect();
        let c = fit_cmm_sha(&m, &refs, 2).unwrap();
        // ρ_{x,1} for equal weights and variances is a logistic in 2x.
        let rho1 = |x: f64| 1.0 / (1.0 + (-2.0 * x).exp());
        let n0 = (1.0 - rho1(-1.5)) + (1.0 - rho1(0.2)) + (1.0 - rho1(1.1));
        let n1 = rho1(-1.5) + rho1(0.2) + rho1(1.1);
        let xi00 = ((1.0 - rho1(-1.5)) + (1.0 - rho1(0.2))) / n0;
        let xi10 = (rho1(-1.5) + rho1(0.2)) / n1;
        assert!((c.class_given_component[0][0] - xi00).abs() < 1e-12);
        assert!((c.class_given_component[1][0] - xi10).abs() < 1e-12);

        let x = pt(&[0.4]);
        let post = c.posterior(&x);
        let expected0 = xi00 * (1.0 - rho1(0.4)) + xi10 * rho1(0.4);
        assert!((post[0] - expected0).abs() < 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_rows_give_one_hot_posterior() {
        let m = model(&[(0.4, &[0.0], &[1.0]), (0.6, &[3.0], &[1.0])]);
        let c = CmmSha {
            model: m,
            class_given_component: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        };
        for x in [-4.0, 0.0, 9.0] {
            assert_eq!(c.posterior(&pt(&[x])), vec![0.0, 1.0]);
        }
    }

    #[test]
    fn unreached_component_gets_uniform_row() {
        let m = model(&[(0.5, &[0.0], &[0.01]), (0.5, &[1000.0], &[0.01])]);
        let pts = [labeled(&[0.0], 0)];
        let refs: Vec<&Sample> = pts.iter().collect();
        let c = fit_cmm_sha(&m, &refs, 2).unwrap();
        assert_eq!(c.class_given_component[1], vec![0.5, 0.5]);
    }

    #[test]
    fn separate_models_on_separated_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = Vec::new();
        for i in 0..100 {
            let c = usize::from(i >= 60);
            let center = if c == 0 { -4.0 } else { 4.0 };
            pts.push(Sample::new(
                i,
                vec![center + rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)],
                Some(c),
            ));
        }
        let refs: Vec<&Sample> = pts.iter().collect();
        let sep = fit_cmm_sep(&refs, &FeatureLayout::continuous_only(2), 2, &ViConfig::default()).unwrap();
        assert_eq!(sep.class_priors, vec![0.6, 0.4]);
        for s in &pts {
            if s.continuous[0].abs() > 2.5 {
                let post = sep.posterior(s);
                assert!(post[s.label.unwrap()] >= 0.99);
                assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_class_still_gets_a_model() {
        let pts = [labeled(&[0.0, 0.0], 0), labeled(&[0.5, 0.1], 0), labeled(&[0.2, 0.4], 0), labeled(&[5.0, 5.0], 1)];
        let refs: Vec<&Sample> = pts.iter().collect();
        let sep = fit_cmm_sep(&refs, &FeatureLayout::continuous_only(2), 2, &ViConfig::default()).unwrap();
        assert!(sep.class_models.iter().all(Option::is_some));
        assert_eq!(sep.predict(&pt(&[5.1, 4.9])), 1);
    }
}
