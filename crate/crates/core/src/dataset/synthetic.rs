//! Seeded generators for the artificial benchmark problems.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Sample, Schema};

/// Two interleaving half circles with isotropic Gaussian noise.
///
/// Classes alternate so that every even `n` is exactly balanced.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let class = i % 2;
            let t = rng.random_range(0.0..PI);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            Sample::new(i, vec![x + noise * nx, y + noise * ny], Some(class))
        })
        .collect();
    Dataset::from_samples("two_moons", Schema::continuous(&["x", "y"], "moon", &["upper", "lower"]), samples)
        .expect("generator output matches its schema")
}

/// Component parameters of the three-process toy problem: mean, diagonal
/// variances. All mixing weights are equal.
pub const THREE_PROCESS_COMPONENTS: [([f64; 2], [f64; 2]); 3] = [
    ([-1.0, 0.0], [0.50, 1.50]),
    ([0.0, 0.0], [0.04, 0.03]),
    ([1.0, 0.0], [0.50, 0.50]),
];

/// Samples the three-component Gaussian mixture; the generating component is
/// the class label.
pub fn three_processes(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let c = rng.random_range(0..3);
            let (mean, var) = THREE_PROCESS_COMPONENTS[c];
            let x = mean[0] + var[0].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let y = mean[1] + var[1].sqrt() * rng.sample::<f64, _>(StandardNormal);
            Sample::new(i, vec![x, y], Some(c))
        })
        .collect();
    Dataset::from_samples(
        "three_processes",
        Schema::continuous(&["x", "y"], "process", &["p1", "p2", "p3"]),
        samples,
    )
    .expect("generator output matches its schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_are_balanced_and_seeded() {
        let a = two_moons(800, 0.1, 4);
        assert_eq!(a.class_counts(), vec![400, 400]);
        assert_eq!(a, two_moons(800, 0.1, 4));
        assert_ne!(a, two_moons(800, 0.1, 5));
    }

    #[test]
    fn three_process_means() {
        let d = three_processes(3000, 1);
        for (c, (mean, _)) in THREE_PROCESS_COMPONENTS.iter().enumerate() {
            let pts: Vec<_> = d.samples.iter().filter(|s| s.label == Some(c)).collect();
            let mx = pts.iter().map(|s| s.continuous[0]).sum::<f64>() / pts.len() as f64;
            assert!((mx - mean[0]).abs() < 0.1);
        }
    }
}
