//! Network-free validation of the probabilistic identities the training
//! method rests on, using a scalar Gaussian world where every conditional
//! expectation has a closed form.
//!
//! The analytic posteriors here are derived from linear-Gaussian regression
//! only (covariance over variance), independent of the correction formulas
//! they are used to check.

use crate::correction::{self, bernoulli_k};
use crate::rng::StreamRng;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Scalar world: X ~ N(mu_x, sigma_x^2), N ~ N(0, sigma^2),
/// M ~ N(0, (alpha*sigma)^2), all independent; Y = X + N, Z = Y + M.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussianWorld {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl ScalarGaussianWorld {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_x < 0.0 || !self.sigma_x.is_finite() {
            return Err(Error::invalid(format!("sigma_x must be >= 0, got {}", self.sigma_x)));
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Var(Z) = sigma_x^2 + sigma^2 + (alpha*sigma)^2.
    pub fn var_z(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.sigma_x * self.sigma_x + s2 + self.alpha * self.alpha * s2
    }

    pub fn std_z(&self) -> f64 {
        self.var_z().sqrt()
    }
}

/// Conditional means given Z = z, all linear in (z - mu_x) with slopes
/// Var(component)/Var(Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posteriors {
    pub e_x: f64,
    pub e_y: f64,
    pub e_n: f64,
    pub e_m: f64,
}

pub fn analytic_posteriors(world: &ScalarGaussianWorld, z: f64) -> Posteriors {
    let v = world.var_z();
    let s2 = world.sigma * world.sigma;
    let centered = z - world.mu_x;
    let e_x = world.mu_x + (world.sigma_x * world.sigma_x / v) * centered;
    let e_n = (s2 / v) * centered;
    let e_m = (world.alpha * world.alpha * s2 / v) * centered;
    Posteriors {
        e_x,
        e_y: e_x + e_n,
        e_n,
        e_m,
    }
}

/// Runs the additive correction (through the real inference code path) on
/// the ideal prediction E[Y|Z=z] over a 201-point grid spanning mu_x +/- 4
/// std(Z), and returns the max absolute deviation from the analytic E[X|Z=z].
pub fn check_correction_identity(world: &ScalarGaussianWorld) -> Result<f64> {
    world.validate()?;
    let n = 201usize;
    let half = 4.0 * world.std_z();
    let zs: Vec<f64> = (0..n)
        .map(|i| world.mu_x - half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect();
    let ideal: Vec<f64> = zs.iter().map(|&z| analytic_posteriors(world, z).e_y).collect();
    let net_in = ImageTensor::from_data(1, n, 1, zs.clone())?;
    let net_out = ImageTensor::from_data(1, n, 1, ideal)?;
    let corrected = correction::correct_additive(&net_out, &net_in, world.alpha)?;
    let max_err = corrected
        .data()
        .iter()
        .zip(&zs)
        .map(|(&c, &z)| (c - analytic_posteriors(world, z).e_x).abs())
        .fold(0.0f64, f64::max);
    Ok(max_err)
}

/// Bins with too little conditional-mean signal are excluded: the ratio
/// mean(M)/mean(N) is only meaningful when |mean(N)| clears this many
/// standard errors of itself.
pub const RATIO_NOISE_FLOOR_SE: f64 = 50.0;

/// Per-bin conditional-mean estimates from the Monte-Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct RatioBin {
    pub count: usize,
    pub mean_z: f64,
    pub mean_n: f64,
    pub mean_m: f64,
    pub se_n: f64,
    pub se_m: f64,
}

impl RatioBin {
    /// Estimate of E[M|Z]/E[N|Z] for this bin; the claim under test is
    /// that it equals alpha^2.
    pub fn ratio(&self) -> f64 {
        self.mean_m / self.mean_n
    }
}

/// Samples (X, N, M), bins by Z into equal-population bins, and returns the
/// per-bin means of N and M for every bin that has at least 1000 samples
/// and clears the noise floor. Draw order per sample is x, n, m.
pub fn monte_carlo_mean_ratio(
    world: &ScalarGaussianWorld,
    n_samples: usize,
    n_bins: usize,
    rng: &mut StreamRng,
) -> Result<Vec<RatioBin>> {
    world.validate()?;
    if n_samples < 100_000 {
        return Err(Error::invalid(format!(
            "need at least 1e5 samples, got {n_samples}"
        )));
    }
    if n_bins < 10 {
        return Err(Error::invalid(format!("need at least 10 bins, got {n_bins}")));
    }
    let mut samples: Vec<(f64, f64, f64)> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = world.mu_x + rng.normal(world.sigma_x);
        let n = rng.normal(world.sigma);
        let m = rng.normal(world.alpha * world.sigma);
        samples.push((x + n + m, n, m));
    }
    samples.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut bins = Vec::new();
    for b in 0..n_bins {
        let lo = b * n_samples / n_bins;
        let hi = (b + 1) * n_samples / n_bins;
        let slice = &samples[lo..hi];
        let count = slice.len();
        if count < 1000 {
            continue;
        }
        let inv = 1.0 / count as f64;
        let (mut sz, mut sn, mut sm) = (0.0, 0.0, 0.0);
        for &(z, n, m) in slice {
            sz += z;
            sn += n;
            sm += m;
        }
        let (mean_z, mean_n, mean_m) = (sz * inv, sn * inv, sm * inv);
        let (mut vn, mut vm) = (0.0, 0.0);
        for &(_, n, m) in slice {
            vn += (n - mean_n) * (n - mean_n);
            vm += (m - mean_m) * (m - mean_m);
        }
        let se_n = (vn * inv).sqrt() / (count as f64).sqrt();
        let se_m = (vm * inv).sqrt() / (count as f64).sqrt();
        if mean_n.abs() < RATIO_NOISE_FLOOR_SE * se_n {
            continue;
        }
        bins.push(RatioBin {
            count,
            mean_z,
            mean_n,
            mean_m,
            se_n,
            se_m,
        });
    }
    Ok(bins)
}

/// Enumerates the four joint outcomes of the two mask bits and conditions
/// on the pixel ending up dropped. Independent of the closed form it is
/// used to check.
pub fn brute_force_k(p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must be in (0,1), got {p}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("q must be in (0,1), got {q}")));
    }
    let mut p_masked = 0.0;
    let mut p_first_zero_and_masked = 0.0;
    for n_bit in [0u8, 1] {
        for m_bit in [0u8, 1] {
            let prob = (if n_bit == 0 { p } else { 1.0 - p })
                * (if m_bit == 0 { q } else { 1.0 - q });
            if n_bit == 0 || m_bit == 0 {
                p_masked += prob;
                if n_bit == 0 {
                    p_first_zero_and_masked += prob;
                }
            }
        }
    }
    Ok(p_first_zero_and_masked / p_masked)
}

/// Result of the finite-prior Monte-Carlo check at a masked pixel.
#[derive(Debug, Clone, Copy)]
pub struct DiscretePriorCheck {
    /// Sample mean of X over masked observations.
    pub e_x_masked: f64,
    /// Sample mean of Y over masked observations.
    pub e_y_masked: f64,
    /// E[Y|masked] pushed through the mask correction: e_y_masked / (1 - k).
    pub corrected: f64,
    /// |e_x_masked - corrected|.
    pub abs_error: f64,
    /// Standard error of that difference, from the per-sample spread of
    /// x - y/(1-k).
    pub std_error: f64,
    pub masked_count: usize,
}

/// Draws (x, first mask, second mask) per sample, conditions on the pixel
/// being dropped in Z, and compares the Monte-Carlo E[X|masked] against the
/// corrected E[Y|masked]. Prior values must be in (0,1] so a zero is
/// unambiguously a dropped pixel.
pub fn discrete_prior_bernoulli_check(
    prior: &[(f64, f64)],
    p: f64,
    q: f64,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<DiscretePriorCheck> {
    if prior.is_empty() {
        return Err(Error::invalid("prior must be non-empty"));
    }
    let mut total_prob = 0.0;
    for &(value, prob) in prior {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::invalid(format!(
                "prior value {value} outside (0,1]"
            )));
        }
        if prob <= 0.0 || prob.is_nan() {
            return Err(Error::invalid(format!("prior probability {prob} not positive")));
        }
        total_prob += prob;
    }
    if (total_prob - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "prior probabilities sum to {total_prob}, expected 1"
        )));
    }
    let k = bernoulli_k(p, q)?;
    let inv = 1.0 / (1.0 - k);

    let mut count = 0usize;
    let (mut sum_x, mut sum_y) = (0.0, 0.0);
    let (mut sum_d, mut sum_d2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let u = rng.uniform01();
        let mut acc = 0.0;
        let mut x = prior[prior.len() - 1].0;
        for &(value, prob) in prior {
            acc += prob;
            if u < acc {
                x = value;
                break;
            }
        }
        let first_kept = rng.uniform01() >= p;
        let second_kept = rng.uniform01() >= q;
        let y = if first_kept { x } else { 0.0 };
        let z = if second_kept { y } else { 0.0 };
        if z == 0.0 {
            count += 1;
            sum_x += x;
            sum_y += y;
            let d = x - y * inv;
            sum_d += d;
            sum_d2 += d * d;
        }
    }
    if count < 100 {
        return Err(Error::invalid(format!(
            "only {count} masked samples; not enough for the check"
        )));
    }
    let n = count as f64;
    let e_x_masked = sum_x / n;
    let e_y_masked = sum_y / n;
    let corrected = e_y_masked * inv;
    let mean_d = sum_d / n;
    let var_d = (sum_d2 / n - mean_d * mean_d).max(0.0);
    Ok(DiscretePriorCheck {
        e_x_masked,
        e_y_masked,
        corrected,
        abs_error: (e_x_masked - corrected).abs(),
        std_error: (var_d / n).sqrt(),
        masked_count: count,
    })
}

/// The world grid used by the self-check table and the release gate:
/// every alpha in {0.25, 0.5, 1, 2} crossed with signal-to-noise ratios
/// sigma_x/sigma in {0.1, 0.316, 1, 3.16, 10}.
pub fn standard_worlds() -> Vec<ScalarGaussianWorld> {
    let alphas = [0.25, 0.5, 1.0, 2.0];
    let ratios = [0.1, 0.316, 1.0, 3.16, 10.0];
    let mus = [0.0, 0.4, -0.3, 1.0];
    let sigmas = [0.1, 0.5, 1.0, 2.0];
    let mut worlds = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        for (j, &ratio) in ratios.iter().enumerate() {
            let sigma = sigmas[(i + j) % sigmas.len()];
            worlds.push(ScalarGaussianWorld {
                mu_x: mus[(i * ratios.len() + j) % mus.len()],
                sigma_x: ratio * sigma,
                sigma,
                alpha,
            });
        }
    }
    worlds
}

/// One row of the self-check table printed by the `oracle` subcommand:
/// what was checked, the value it must hit, the value observed, and the
/// allowed deviation.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: &'static str,
    pub target: String,
    pub measured: String,
    pub tolerance: String,
    pub pass: bool,
}

/// Runs every oracle check with pinned sample counts and tolerances.
pub fn run_suite(seed: u64) -> Vec<OracleCheck> {
    use crate::rng::StreamKind;
    let mut checks = Vec::new();

    let mut max_err = 0.0f64;
    for world in standard_worlds() {
        max_err = max_err.max(check_correction_identity(&world).expect("valid world"));
    }
    checks.push(OracleCheck {
        name: "additive correction identity (20 worlds)",
        target: "corrected == E[X|Z]".into(),
        measured: format!("max |err| = {max_err:.3e}"),
        tolerance: "1e-9".into(),
        pass: max_err <= 1e-9,
    });

    for (i, alpha) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let world = ScalarGaussianWorld {
            mu_x: 0.0,
            sigma_x: 1.0,
            sigma: 1.0,
            alpha,
        };
        let mut rng = StreamRng::substream(seed, StreamKind::Oracle, i as u64);
        let bins = monte_carlo_mean_ratio(&world, 1_000_000, 10, &mut rng).expect("valid run");
        let target = alpha * alpha;
        let worst = bins
            .iter()
            .map(|b| (b.ratio() - target).abs() / target)
            .fold(0.0f64, f64::max);
        checks.push(OracleCheck {
            name: match i {
                0 => "conditional-mean ratio E[M|Z]/E[N|Z], alpha=0.5",
                1 => "conditional-mean ratio E[M|Z]/E[N|Z], alpha=1",
                _ => "conditional-mean ratio E[M|Z]/E[N|Z], alpha=2",
            },
            target: format!("alpha^2 = {target}"),
            measured: format!("worst bin off by {:.2}% ({} bins)", 100.0 * worst, bins.len()),
            tolerance: "5%".into(),
            pass: !bins.is_empty() && worst <= 0.05,
        });
    }

    let mut worst_k = 0.0f64;
    for i in 1..=9 {
        for j in 1..=9 {
            let (p, q) = (i as f64 / 10.0, j as f64 / 10.0);
            let brute = brute_force_k(p, q).expect("interior p,q");
            let closed = bernoulli_k(p, q).expect("interior p,q");
            worst_k = worst_k.max((brute - closed).abs());
        }
    }
    checks.push(OracleCheck {
        name: "mask overlap factor k, enumeration vs closed form (9x9 grid)",
        target: "k_enum == p/(p+q-pq)".into(),
        measured: format!("max |diff| = {worst_k:.3e}"),
        tolerance: "1e-12".into(),
        pass: worst_k <= 1e-12,
    });

    let mut rng = StreamRng::substream(seed, StreamKind::Oracle, 10);
    let prior = [(0.4, 0.5), (0.8, 0.5)];
    let check = discrete_prior_bernoulli_check(&prior, 0.3, 0.6, 1_000_000, &mut rng)
        .expect("valid prior");
    checks.push(OracleCheck {
        name: "finite-prior mask correction at a dropped pixel",
        target: format!("E[X|masked] = {:.5}", check.e_x_masked),
        measured: format!(
            "corrected = {:.5} ({} masked samples)",
            check.corrected, check.masked_count
        ),
        tolerance: format!("3*SE = {:.5}", 3.0 * check.std_error),
        pass: check.abs_error <= 3.0 * check.std_error,
    });

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKind;

    #[test]
    fn posteriors_match_regression_slopes() {
        let world = ScalarGaussianWorld {
            mu_x: 0.0,
            sigma_x: 1.0,
            sigma: 1.0,
            alpha: 1.0,
        };
        for z in [-2.5, -0.3, 0.0, 1.7] {
            let p = analytic_posteriors(&world, z);
            assert!((p.e_x - z / 3.0).abs() < 1e-15);
            assert!((p.e_y - 2.0 * z / 3.0).abs() < 1e-15);
            assert_eq!(p.e_m, p.e_n);
        }
    }

    #[test]
    fn deterministic_prior_pins_posterior_at_mean() {
        let world = ScalarGaussianWorld {
            mu_x: 0.7,
            sigma_x: 0.0,
            sigma: 0.2,
            alpha: 0.5,
        };
        for z in [-1.0, 0.7, 3.0] {
            assert_eq!(analytic_posteriors(&world, z).e_x, 0.7);
        }
    }

    #[test]
    fn components_sum_to_observation() {
        // Tower property: the three conditional means add back up to z.
        for world in standard_worlds() {
            let half = 4.0 * world.std_z();
            for i in 0..=100 {
                let z = world.mu_x - half + 2.0 * half * i as f64 / 100.0;
                let p = analytic_posteriors(&world, z);
                let sum = p.e_x + p.e_n + p.e_m;
                assert!(
                    (sum - z).abs() <= 1e-12 * z.abs().max(1.0),
                    "world {world:?}, z = {z}: sum = {sum}"
                );
            }
        }
    }

    #[test]
    fn correction_identity_is_exact_on_every_world() {
        for world in standard_worlds() {
            let err = check_correction_identity(&world).unwrap();
            assert!(err <= 1e-9, "world {world:?}: err = {err:.3e}");
        }
        let stress = ScalarGaussianWorld {
            mu_x: 0.0,
            sigma_x: 0.3,
            sigma: 0.1,
            alpha: 0.25,
        };
        assert!(check_correction_identity(&stress).unwrap() <= 1e-9);
    }

    #[test]
    fn alpha_one_identity_matches_double_minus_input_form() {
        let world = ScalarGaussianWorld {
            mu_x: 0.2,
            sigma_x: 0.8,
            sigma: 0.4,
            alpha: 1.0,
        };
        let half = 4.0 * world.std_z();
        for i in 0..=100 {
            let z = world.mu_x - half + 2.0 * half * i as f64 / 100.0;
            let p = analytic_posteriors(&world, z);
            assert!((2.0 * p.e_y - z - p.e_x).abs() <= 1e-12);
        }
    }

    #[test]
    fn brute_force_k_matches_closed_form() {
        assert!((brute_force_k(0.5, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((brute_force_k(0.3, 0.6).unwrap() - 0.3 / 0.72).abs() < 1e-15);
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            // Equal probabilities collapse to k = 1/(2-p).
            assert!((brute_force_k(p, p).unwrap() - 1.0 / (2.0 - p)).abs() < 1e-12);
            for j in 1..=9 {
                let q = j as f64 / 10.0;
                let diff = (brute_force_k(p, q).unwrap() - bernoulli_k(p, q).unwrap()).abs();
                assert!(diff <= 1e-12, "p={p} q={q}: diff = {diff:.3e}");
            }
        }
        assert!(brute_force_k(0.0, 0.5).is_err());
        assert!(brute_force_k(0.5, 1.0).is_err());
    }

    #[test]
    fn mean_ratio_holds_at_minimum_sample_count() {
        let world = ScalarGaussianWorld {
            mu_x: 0.0,
            sigma_x: 1.0,
            sigma: 1.0,
            alpha: 1.0,
        };
        let mut rng = StreamRng::substream(3, StreamKind::Oracle, 0);
        let bins = monte_carlo_mean_ratio(&world, 100_000, 10, &mut rng).unwrap();
        assert!(!bins.is_empty());
        for bin in &bins {
            assert!(bin.count >= 1000);
            let ratio = bin.ratio();
            assert!(
                (ratio - 1.0).abs() < 0.15,
                "bin at z = {:.2}: ratio = {ratio}",
                bin.mean_z
            );
            // First-hit share of the total correction at alpha = 1:
            // E[N|Z] = (z - E[X|Z]) / 2.
            let claim = (bin.mean_z - analytic_posteriors(&world, bin.mean_z).e_x) / 2.0;
            assert!(
                (bin.mean_n - claim).abs() < 5.0 * bin.se_n,
                "bin at z = {:.2}: mean_n = {}, claim = {claim}",
                bin.mean_z,
                bin.mean_n
            );
        }
    }

    #[test]
    fn mean_ratio_preconditions_are_enforced() {
        let world = ScalarGaussianWorld {
            mu_x: 0.0,
            sigma_x: 1.0,
            sigma: 1.0,
            alpha: 1.0,
        };
        let mut rng = StreamRng::substream(3, StreamKind::Oracle, 1);
        assert!(monte_carlo_mean_ratio(&world, 99_999, 10, &mut rng).is_err());
        assert!(monte_carlo_mean_ratio(&world, 100_000, 9, &mut rng).is_err());
    }

    #[test]
    fn discrete_prior_deterministic_value() {
        let mut rng = StreamRng::substream(5, StreamKind::Oracle, 2);
        let check =
            discrete_prior_bernoulli_check(&[(1.0, 1.0)], 0.5, 0.5, 200_000, &mut rng).unwrap();
        // Every masked sample has x = 1, so E[X|masked] is exactly 1 and
        // E[Y|masked] estimates 1 - k = 1/3.
        assert_eq!(check.e_x_masked, 1.0);
        assert!((check.e_y_masked - 1.0 / 3.0).abs() < 0.005);
        assert!(check.abs_error <= 3.0 * check.std_error);
    }

    #[test]
    fn discrete_prior_two_point_values() {
        let mut rng = StreamRng::substream(5, StreamKind::Oracle, 3);
        let prior = [(0.4, 0.5), (0.8, 0.5)];
        let check =
            discrete_prior_bernoulli_check(&prior, 0.5, 0.5, 400_000, &mut rng).unwrap();
        // Masking ignores X, so E[X|masked] = E[X] = 0.6 and
        // E[Y|masked] = (1-k) * 0.6 = 0.2.
        assert!((check.e_x_masked - 0.6).abs() < 0.005);
        assert!((check.e_y_masked - 0.2).abs() < 0.005);
        assert!(check.abs_error <= 3.0 * check.std_error);

        let mut rng = StreamRng::substream(5, StreamKind::Oracle, 4);
        let skew = discrete_prior_bernoulli_check(&prior, 0.3, 0.6, 400_000, &mut rng).unwrap();
        assert!(skew.abs_error <= 3.0 * skew.std_error);
    }

    #[test]
    fn discrete_prior_rejects_ambiguous_values() {
        let mut rng = StreamRng::substream(5, StreamKind::Oracle, 5);
        assert!(discrete_prior_bernoulli_check(&[(0.0, 1.0)], 0.5, 0.5, 1000, &mut rng).is_err());
        assert!(discrete_prior_bernoulli_check(&[(1.5, 1.0)], 0.5, 0.5, 1000, &mut rng).is_err());
        assert!(
            discrete_prior_bernoulli_check(&[(0.4, 0.3), (0.8, 0.3)], 0.5, 0.5, 1000, &mut rng)
                .is_err()
        );
    }
}
