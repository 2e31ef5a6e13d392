//! Seeded samplers for the random ingredients of the transition kernels.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, Poisson, StandardNormal};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::gamma_lr;

use crate::error::{ensure, param, Result};
use crate::rng::RandomSource;

/// Gamma variate with the given shape and rate.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RandomSource) -> Result<f64> {
    ensure(shape > 0.0 && shape.is_finite(), || {
        format!("gamma shape {shape}")
    })?;
    ensure(rate > 0.0 && rate.is_finite(), || {
        format!("gamma rate {rate}")
    })?;
    Ok(gamma(shape, 1.0 / rate, rng))
}

pub fn sample_beta(a: f64, b: f64, rng: &mut RandomSource) -> Result<f64> {
    ensure(a > 0.0 && b > 0.0, || format!("beta parameters ({a}, {b})"))?;
    Ok(beta(a, b, rng))
}

pub fn sample_exponential(rate: f64, rng: &mut RandomSource) -> Result<f64> {
    ensure(rate > 0.0 && rate.is_finite(), || {
        format!("exponential rate {rate}")
    })?;
    Ok(exponential(rate, rng))
}

/// Dirichlet vector via normalised independent gammas.
pub fn sample_dirichlet(weights: &[f64], rng: &mut RandomSource) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return param("dirichlet needs at least one weight");
    }
    for &w in weights {
        ensure(w > 0.0 && w.is_finite(), || format!("dirichlet weight {w}"))?;
    }
    if weights.len() == 1 {
        return Ok(vec![1.0]);
    }
    let mut g: Vec<f64> = weights.iter().map(|&w| gamma(w, 1.0, rng)).collect();
    let total: f64 = g.iter().sum();
    for x in &mut g {
        *x /= total;
    }
    Ok(g)
}

/// Absorption time of BESQ_x(-1): `(x/2) / Gamma(3/2, 1)`, an InverseGamma(3/2, x/2) variate.
pub fn sample_inverse_gamma_lifetime(start_mass: f64, rng: &mut RandomSource) -> Result<f64> {
    ensure(start_mass > 0.0 && start_mass.is_finite(), || {
        format!("lifetime needs positive start mass, got {start_mass}")
    })?;
    Ok(besq_neg1_lifetime(start_mass, rng))
}

pub(crate) fn gamma(shape: f64, scale: f64, rng: &mut RandomSource) -> f64 {
    Gamma::new(shape, scale)
        .expect("validated gamma parameters")
        .sample(rng)
}

pub(crate) fn beta(a: f64, b: f64, rng: &mut RandomSource) -> f64 {
    Beta::new(a, b)
        .expect("validated beta parameters")
        .sample(rng)
}

pub(crate) fn exponential(rate: f64, rng: &mut RandomSource) -> f64 {
    Exp::new(rate)
        .expect("validated exponential rate")
        .sample(rng)
}

pub(crate) fn poisson(mean: f64, rng: &mut RandomSource) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > 1e12 {
        // beyond the sampler's range the normal approximation is exact to the last digit
        let z: f64 = StandardNormal.sample(rng);
        return (mean + mean.sqrt() * z).round().max(0.0) as u64;
    }
    Poisson::new(mean).expect("finite poisson mean").sample(rng) as u64
}

/// Uniform on (0, 1].
pub(crate) fn open_uniform(rng: &mut RandomSource) -> f64 {
    1.0 - rng.random::<f64>()
}

pub(crate) fn besq_neg1_lifetime(x: f64, rng: &mut RandomSource) -> f64 {
    0.5 * x / gamma(1.5, 1.0, rng)
}

/// Poisson(a) conditioned to be at least one.
pub(crate) fn zero_truncated_poisson(a: f64, rng: &mut RandomSource) -> u64 {
    if a > 12.0 {
        loop {
            let n = poisson(a, rng);
            if n >= 1 {
                return n;
            }
        }
    }
    let mut u = rng.random::<f64>();
    // P(N = 1 | N >= 1) = a / (e^a - 1)
    let mut p = a / a.exp_m1();
    let mut n = 1u64;
    while u > p && p > 0.0 {
        u -= p;
        n += 1;
        p *= a / n as f64;
    }
    n
}

/// Probability that BESQ_x(-1) is still alive at time `t`.
pub fn besq_neg1_survival(x: f64, t: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if t <= 0.0 {
        return 1.0;
    }
    gamma_lr(1.5, 0.5 * x / t)
}

/// Value at time `t` of BESQ_x(-1) conditioned on not being absorbed by `t`.
///
/// The killed BESQ(-1) kernel is the BESQ(5) kernel reweighted by `(x/y)^{3/2}`.
/// Writing BESQ(5) as a Poisson mixture of gammas, the conditioned value is
/// Gamma(N + 1, rate 1/2t) where N is Poisson(mu (1 - W)), mu = x/2t and W has
/// density proportional to `w^{1/2} e^{-mu w}` on (0, 1).
pub fn sample_besq_neg1_given_survival(x: f64, t: f64, rng: &mut RandomSource) -> f64 {
    debug_assert!(x > 0.0 && t > 0.0);
    let mu = 0.5 * x / t;
    let w = if mu < 1.0 {
        loop {
            let w = rng.random::<f64>().powf(2.0 / 3.0);
            if rng.random::<f64>() < (-mu * w).exp() {
                break w;
            }
        }
    } else {
        loop {
            let w = gamma(1.5, 1.0 / mu, rng);
            if w < 1.0 {
                break w;
            }
        }
    };
    let n = poisson(mu * (1.0 - w), rng);
    gamma(n as f64 + 1.0, 2.0 * t, rng)
}

/// Euler grid path of a squared Bessel process.
#[derive(Clone, Debug, PartialEq)]
pub struct BesqPath {
    pub start_mass: f64,
    pub theta: f64,
    pub step: f64,
    pub values: Vec<f64>,
    pub absorption_index: Option<usize>,
}

impl BesqPath {
    pub fn end(&self) -> f64 {
        *self.values.last().expect("path holds its start value")
    }

    /// Grid time of absorption, if any.
    pub fn absorption_time(&self) -> Option<f64> {
        self.absorption_index.map(|i| i as f64 * self.step)
    }
}

/// Euler-Maruyama scheme `Z += theta dt + 2 sqrt(Z dt) N`, clamped at zero.
/// For `theta <= 0` the first nonpositive value absorbs the path.
pub fn besq_euler(
    start_mass: f64,
    theta: f64,
    step: f64,
    horizon: f64,
    rng: &mut RandomSource,
) -> Result<BesqPath> {
    ensure(start_mass >= 0.0 && start_mass.is_finite(), || {
        format!("start mass {start_mass}")
    })?;
    ensure(step > 0.0 && horizon > 0.0 && step <= horizon, || {
        format!("need 0 < step <= horizon, got step {step}, horizon {horizon}")
    })?;
    let n = (horizon / step - 1e-9).ceil() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut z = start_mass;
    values.push(z);
    let mut absorption_index = None;
    if theta <= 0.0 && z == 0.0 {
        absorption_index = Some(0);
    }
    for i in 1..=n {
        if absorption_index.is_some() {
            values.push(0.0);
            continue;
        }
        let dt = if i == n {
            horizon - step * (n - 1) as f64
        } else {
            step
        };
        let noise: f64 = StandardNormal.sample(rng);
        z += theta * dt + 2.0 * (z * dt).sqrt() * noise;
        if z <= 0.0 {
            z = 0.0;
            if theta <= 0.0 {
                absorption_index = Some(i);
            }
        }
        values.push(z);
    }
    Ok(BesqPath {
        start_mass,
        theta,
        step,
        values,
        absorption_index,
    })
}

fn sinh_term(z: f64) -> f64 {
    // 1 - cosh z + z sinh z
    if z < 0.5 {
        let z2 = z * z;
        // sum over n >= 1 of (2n - 1) z^2n / (2n)!
        let mut term = 0.5 * z2;
        let mut sum = 0.0;
        let mut n = 1.0;
        loop {
            let c = (2.0 * n - 1.0) * term;
            sum += c;
            if c < 1e-18 * sum {
                break;
            }
            term *= z2 / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
            n += 1.0;
        }
        sum
    } else {
        1.0 - z.cosh() + z * z.sinh()
    }
}

/// Density of the new-top variate L for a block of mass `w` after time `y`.
pub fn l_density(u: f64, w: f64, y: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let z = (w * u).sqrt() / y;
    let log_pref = -0.5 * (2.0 * PI).ln() + 0.5 * y.ln()
        - 1.5 * u.ln()
        - u / (2.0 * y)
        - (w / (2.0 * y)).exp_m1().ln();
    if z > 600.0 {
        // 1 - cosh z + z sinh z ~ (z - 1) e^z / 2
        return (log_pref + z + (0.5 * (z - 1.0)).ln()).exp();
    }
    log_pref.exp() * sinh_term(z)
}

/// Mean of L, from its Poisson-gamma mixture form.
pub fn l_mean(w: f64, y: f64) -> f64 {
    let a = w / (2.0 * y);
    let mean_n = if a < 1e-12 {
        1.0 + 0.5 * a
    } else {
        a / (-(-a).exp_m1())
    };
    2.0 * y * (mean_n - 0.5)
}

/// Draw L. Its density expands as a zero-truncated Poisson(w/2y) mixture over
/// n of Gamma(n - 1/2, rate 1/2y) densities, which is sampled directly.
pub fn sample_l(w: f64, y: f64, rng: &mut RandomSource) -> Result<f64> {
    ensure(w > 0.0 && w.is_finite(), || format!("block mass {w}"))?;
    ensure(y > 0.0 && y.is_finite(), || format!("elapsed time {y}"))?;
    Ok(l_given_count(
        zero_truncated_poisson(w / (2.0 * y), rng),
        y,
        rng,
    ))
}

pub(crate) fn l_given_count(n: u64, y: f64, rng: &mut RandomSource) -> f64 {
    gamma(n as f64 - 0.5, 2.0 * y, rng)
}

/// Levy density `(2 sqrt(pi))^{-1} x^{-3/2} e^{-x/2y}` of the subordinator R.
pub fn levy_density(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x.powf(-1.5) * (-x / (2.0 * y)).exp() / (2.0 * PI.sqrt())
}

/// Laplace exponent `sqrt(lambda + 1/2y) - sqrt(1/2y)` of R.
pub fn laplace_exponent(lambda: f64, y: f64) -> f64 {
    let b = 1.0 / (2.0 * y);
    (lambda + b).sqrt() - b.sqrt()
}

/// Levy measure of `(eps, inf)`.
pub fn levy_tail_rate(eps: f64, y: f64) -> f64 {
    let b = 1.0 / (2.0 * y);
    let z = b * eps;
    if z <= 1.0 {
        (-z).exp() / (PI * eps).sqrt() - b.sqrt() * erfc(z.sqrt())
    } else {
        // substitute x = eps (1 + s/z) to avoid cancellation between the two terms
        let n = 4000;
        let upper = 60.0;
        let h = upper / n as f64;
        let f = |s: f64| (1.0 + s / z).powf(-1.5) * (-s).exp();
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = acc * h / 3.0;
        (-z).exp() * eps.powf(-1.5) / b * integral / (2.0 * PI.sqrt())
    }
}

/// Mean mass of the jumps of size at most `eps` per unit subordinator time.
pub fn small_jump_mean(eps: f64, y: f64) -> f64 {
    let b = 1.0 / (2.0 * y);
    erf((b * eps).sqrt()) / (2.0 * b.sqrt())
}

/// One jump size from the Levy density restricted to `(eps, inf)`.
pub(crate) fn tail_jump(eps: f64, y: f64, rng: &mut RandomSource) -> f64 {
    let b = 1.0 / (2.0 * y);
    if b * eps < 1.0 {
        loop {
            let u = open_uniform(rng);
            let x = eps / (u * u);
            if rng.random::<f64>() < (-b * (x - eps)).exp() {
                return x;
            }
        }
    } else {
        loop {
            let x = eps + exponential(b, rng);
            if rng.random::<f64>() < (eps / x).powf(1.5) {
                return x;
            }
        }
    }
}

/// Jumps of the subordinator R above the truncation level, on `[0, horizon)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpSet {
    pub horizon: f64,
    /// `(time, size)` with strictly increasing times.
    pub jumps: Vec<(f64, f64)>,
    pub truncation: f64,
    /// `horizon * sqrt(eps / pi)`, an upper bound on the mass of the omitted jumps.
    pub dust_mass_bound: f64,
}

impl JumpSet {
    pub fn total_mass(&self) -> f64 {
        self.jumps.iter().map(|j| j.1).sum()
    }
}

pub fn sample_subordinator_jumps(
    y: f64,
    horizon: f64,
    eps: f64,
    rng: &mut RandomSource,
) -> Result<JumpSet> {
    ensure(y > 0.0 && y.is_finite(), || format!("elapsed time {y}"))?;
    ensure(horizon > 0.0 && horizon.is_finite(), || {
        format!("horizon {horizon}")
    })?;
    ensure(eps > 0.0 && eps.is_finite(), || format!("truncation {eps}"))?;
    let n = poisson(horizon * levy_tail_rate(eps, y), rng) as usize;
    // sorted uniform times from normalised exponential spacings
    let mut times = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n {
        acc += exponential(1.0, rng);
        times.push(acc);
    }
    let total = acc + exponential(1.0, rng);
    let jumps = times
        .into_iter()
        .map(|t| (t / total * horizon, tail_jump(eps, y, rng)))
        .collect();
    Ok(JumpSet {
        horizon,
        jumps,
        truncation: eps,
        dust_mass_bound: horizon * (eps / PI).sqrt(),
    })
}
