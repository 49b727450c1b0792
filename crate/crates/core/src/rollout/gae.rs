use crate::{Error, Result};

/// Generalized advantage estimates for one environment's trajectory.
///
/// `bootstrap_values[t]` is `V` of the true next state and is read only where
/// the trajectory is cut: at truncations and at the last step. Elsewhere
/// `values[t + 1]` is the next-state value. Terminal steps bootstrap nothing.
/// The advantage chain stops at every episode boundary, truncations included.
///
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    truncations: &[bool],
    bootstrap_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for (name, len) in [
        ("values", values.len()),
        ("dones", dones.len()),
        ("truncations", truncations.len()),
        ("bootstrap_values", bootstrap_values.len()),
    ] {
        if len != n {
            return Err(Error::Misaligned(format!("{name} has length {len}, rewards {n}")));
        }
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} and lambda {lambda} must lie in [0, 1]"
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cut = truncations[t] || t + 1 == n;
        let next_value = if dones[t] {
            0.0
        } else if cut {
            bootstrap_values[t]
        } else {
            values[t + 1]
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        let carry = if dones[t] || cut { 0.0 } else { next_adv };
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// Batches of fewer than two entries are left unchanged.
pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use proptest::prelude::*;

    /// `A_t = Σ_l (γλ)^l δ_{t+l}`, summed until the episode containing `t` ends.
    fn brute_force(r: &[f64], v: &[f64], d: &[bool], tr: &[bool], boot: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let delta = |t: usize| {
            let next = if d[t] {
                0.0
            } else if tr[t] || t + 1 == n {
                boot[t]
            } else {
                v[t + 1]
            };
            r[t] + gamma * next - v[t]
        };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for l in 0..n - t {
                    total += (gamma * lambda).powi(l as i32) * delta(t + l);
                    if d[t + l] || tr[t + l] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn undiscounted_sum() {
        let (a, r) = gae(
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[false, true],
            &[false, false],
            &[0.0, 0.0],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(a, vec![2.0, 1.0]);
        assert_eq!(r, a);
    }

    #[test]
    fn terminal_masks_the_tail() {
        let (a, _) = gae(
            &[0.5, 3.0, 4.0],
            &[0.2, 0.7, 0.1],
            &[true, false, false],
            &[false, false, false],
            &[0.0, 0.0, 9.0],
            0.9,
            0.8,
        )
        .unwrap();
        assert_eq!(a[0], 0.5 - 0.2);
    }

    #[test]
    fn one_step() {
        let (a, _) = gae(&[1.5], &[0.4], &[false], &[false], &[2.0], 0.99, 0.3).unwrap();
        assert!((a[0] - (1.5 + 0.99 * 2.0 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn truncation_bootstraps_but_does_not_chain() {
        let (a, _) = gae(
            &[1.0, 1.0],
            &[0.0, 5.0],
            &[false, false],
            &[true, false],
            &[3.0, 0.0],
            0.5,
            1.0,
        )
        .unwrap();
        assert_eq!(a[0], 1.0 + 0.5 * 3.0);
    }

    #[test]
    fn misaligned_rejected() {
        assert!(matches!(
            gae(&[1.0], &[0.0, 1.0], &[false], &[false], &[0.0], 0.9, 0.9),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = Rng::new(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let n = 1 + rng.below(64);
            let r: Vec<f64> = rng.normals(n);
            let v: Vec<f64> = rng.normals(n);
            let boot: Vec<f64> = rng.normals(n);
            let d: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.1).collect();
            let tr: Vec<bool> = (0..n).map(|i| !d[i] && rng.uniform() < 0.05).collect();
            let gamma = rng.uniform();
            let lambda = rng.uniform();
            let (a, ret) = gae(&r, &v, &d, &tr, &boot, gamma, lambda).unwrap();
            let want = brute_force(&r, &v, &d, &tr, &boot, gamma, lambda);
            for t in 0..n {
                worst = worst.max((a[t] - want[t]).abs());
                assert_eq!(ret[t], a[t] + v[t]);
            }
        }
        assert!(worst < 1e-10, "max error {worst}");
    }

    proptest! {
        #[test]
        fn normalization_moments_and_order(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let mut ys = xs.clone();
            normalize(&mut ys);
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-8);
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] < xs[j] {
                        prop_assert!(ys[i] <= ys[j]);
                    }
                }
            }
        }
    }
}
