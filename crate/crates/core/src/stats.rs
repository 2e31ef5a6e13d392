//! Goodness-of-fit statistics used by the verification suites.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestStatistic {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest gap between the two empirical distribution functions.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestStatistic> {
    ensure(!a.is_empty() && !b.is_empty(), || "empty sample".into())?;
    let d = ks_distance(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    Ok(TestStatistic {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
    })
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestStatistic> {
    ensure(!xs.is_empty(), || "empty sample".into())?;
    let v = sorted(xs);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    Ok(TestStatistic {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
    })
}

/// Pearson goodness of fit of `counts` against `probs`.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> Result<TestStatistic> {
    ensure(counts.len() == probs.len() && counts.len() >= 2, || {
        "need two or more cells".into()
    })?;
    ensure((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9, || {
        "cell probabilities must sum to 1".into()
    })?;
    let n = counts.iter().sum::<u64>() as f64;
    ensure(n > 0.0, || "no observations".into())?;
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = n * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(TestStatistic {
        statistic: stat,
        p_value: dist.sf(stat),
    })
}

/// Pearson test that two count vectors come from the same distribution.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<TestStatistic> {
    ensure(a.len() == b.len(), || {
        "count vectors differ in length".into()
    })?;
    let cells: Vec<(u64, u64)> = a
        .iter()
        .copied()
        .zip(b.iter().copied())
        .filter(|&(x, y)| x + y > 0)
        .collect();
    ensure(cells.len() >= 2, || {
        "need two or more occupied cells".into()
    })?;
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let n = na + nb;
    let stat: f64 = cells
        .iter()
        .map(|&(x, y)| {
            let col = (x + y) as f64;
            let (ea, eb) = (na * col / n, nb * col / n);
            (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb
        })
        .sum();
    let dist = ChiSquared::new((cells.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(TestStatistic {
        statistic: stat,
        p_value: dist.sf(stat),
    })
}

/// Difference of two proportions in units of its standard error (pooled).
pub fn proportion_z(hits_a: usize, n_a: usize, hits_b: usize, n_b: usize) -> f64 {
    let (pa, pb) = (hits_a as f64 / n_a as f64, hits_b as f64 / n_b as f64);
    let p = (hits_a + hits_b) as f64 / (n_a + n_b) as f64;
    let se = (p * (1.0 - p) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (pa - pb) / se
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;

    #[test]
    fn kolmogorov_tail_values() {
        // standard table values
        assert!((kolmogorov_sf(1.36) - 0.0495).abs() < 1e-3);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_same_law_is_not_rejected_and_shift_is() {
        let mut r = RandomSource::new(1, 0);
        let a: Vec<f64> = (0..4000).map(|_| r.random()).collect();
        let b: Vec<f64> = (0..4000).map(|_| r.random()).collect();
        let c: Vec<f64> = (0..4000).map(|_| r.random::<f64>() + 0.1).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        assert!(ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).unwrap().p_value > 0.01);
    }

    #[test]
    fn ks_distance_handles_ties() {
        assert_eq!(ks_distance(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]), 0.0);
        assert!((ks_distance(&[0.0, 1.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_matches_hand_computation() {
        let t = chi_square(&[10, 30], &[0.5, 0.5]).unwrap();
        assert!((t.statistic - 10.0).abs() < 1e-12);
        assert!((t.p_value - 0.001565).abs() < 1e-5);
        let h = chi_square_homogeneity(&[10, 20], &[10, 20]).unwrap();
        assert!(h.statistic.abs() < 1e-12);
    }

    #[test]
    fn proportion_and_correlation() {
        assert_eq!(proportion_z(5, 10, 5, 10), 0.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }
}
