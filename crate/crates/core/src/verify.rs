//! Monte Carlo verification suites and the brute-force oracles they compare
//! against.
//!
//! Every suite is deterministic given its seed: replicate `r` draws from
//! stream `r` of the seed, oracle replicate `r` from stream `ORACLE + r`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depoisson::{depoissonize, wf_record_times, wf_slice};
use crate::error::{ensure, Error, Result};
use crate::evolution::{
    run_killed, run_nonresampling, run_resampling, sample_brownian_reduced_ktree,
    sample_by_resampling, EvolutionConfig, Terminal, Trajectory,
};
use crate::partition::{sample_pdip, type1_transition, Type1State};
use crate::primitives::{
    laplace_exponent, sample_dirichlet, sample_gamma, sample_subordinator_jumps,
};
use crate::rng::RandomSource;
use crate::shape::{enumerate_shapes, swap_and_reduce_shape, validate_shape, TreeShape};
use crate::stats::{
    chi_square, chi_square_homogeneity, correlation, ks_distance, ks_two_sample, mean_se,
    proportion_z,
};
use crate::tree::{project_to, swap_and_reduce_tree, KTree};

const ORACLE: u64 = 1 << 40;

/// Oracle replicates per model replicate in the Wright-Fisher suite; the
/// Euler oracle is cheap, so its share of the comparison error is kept small.
const WF_ORACLE_FACTOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Ks,
    ChiSquare,
    Moment,
    Proportion,
    Correlation,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Pass when `observed >= threshold` (p-values).
    AtLeast,
    /// Pass when `observed <= threshold` (distances, sigmas, counts).
    AtMost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: StatKind,
    pub observed: f64,
    pub threshold: f64,
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub pass: bool,
}

impl Check {
    fn new(
        name: impl Into<String>,
        kind: StatKind,
        observed: f64,
        threshold: f64,
        direction: Direction,
    ) -> Self {
        let pass = match direction {
            Direction::AtLeast => observed >= threshold,
            Direction::AtMost => observed <= threshold,
        };
        Self {
            name: name.into(),
            kind,
            observed,
            threshold,
            direction,
            estimate: None,
            target: None,
            pass,
        }
    }

    fn p_value(name: impl Into<String>, kind: StatKind, p: f64) -> Self {
        Self::new(name, kind, p, 0.01, Direction::AtLeast)
    }

    fn at_most(name: impl Into<String>, kind: StatKind, observed: f64, threshold: f64) -> Self {
        Self::new(name, kind, observed, threshold, Direction::AtMost)
    }

    /// `|estimate - target| / se <= sigmas`.
    fn sigma(name: impl Into<String>, estimate: f64, target: f64, se: f64, sigmas: f64) -> Self {
        let z = if se > 0.0 {
            (estimate - target).abs() / se
        } else if estimate == target {
            0.0
        } else {
            f64::INFINITY
        };
        let mut c = Self::at_most(name, StatKind::Moment, z, sigmas);
        c.estimate = Some(estimate);
        c.target = Some(target);
        c
    }

    fn exact(name: impl Into<String>, mismatches: f64) -> Self {
        Self::at_most(name, StatKind::Exact, mismatches, 0.0)
    }

    fn with_values(mut self, estimate: f64, target: f64) -> Self {
        self.estimate = Some(estimate);
        self.target = Some(target);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub suite: String,
    /// Kind, value and threshold of the first failing check, or of the first
    /// check when all pass.
    pub statistic: StatKind,
    pub observed: f64,
    pub threshold: f64,
    pub replicates: usize,
    pub seed: u64,
    pub pass: bool,
    pub params: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl TestReport {
    fn new(
        suite: &str,
        seed: u64,
        replicates: usize,
        params: &[(&str, f64)],
        checks: Vec<Check>,
    ) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        let lead = checks.iter().find(|c| !c.pass).or(checks.first());
        Self {
            suite: suite.into(),
            statistic: lead.map_or(StatKind::Exact, |c| c.kind),
            observed: lead.map_or(0.0, |c| c.observed),
            threshold: lead.map_or(0.0, |c| c.threshold),
            replicates,
            seed,
            pass,
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            checks,
        }
    }
}

/// Numerical settings shared by the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Longest gap between engine stops; events themselves are exact.
    pub grid_step: f64,
    pub jump_truncation: f64,
    pub pdip_blocks: usize,
    pub euler_step: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 20240601,
            grid_step: 0.05,
            jump_truncation: 1e-4,
            pdip_blocks: 200,
            euler_step: 1e-4,
        }
    }
}

impl SuiteOptions {
    fn evolution(&self) -> EvolutionConfig {
        EvolutionConfig {
            grid_step: self.grid_step,
            jump_truncation: self.jump_truncation,
            pdip_blocks: self.pdip_blocks,
            ..Default::default()
        }
    }
}

fn replicate<T: Send>(
    n: usize,
    seed: u64,
    offset: u64,
    f: impl Fn(&mut RandomSource) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..n as u64)
        .into_par_iter()
        .map(|r| f(&mut RandomSource::new(seed, offset + r)))
        .collect()
}

// ---------------------------------------------------------------- oracles

/// Euler scheme for BESQ(θ) from `x` over `[0, y]`; for `θ <= 0` the path is
/// absorbed, and it is reported as 0 once it goes below `floor`.
pub fn besq_euler_terminal(
    x: f64,
    theta: f64,
    step: f64,
    y: f64,
    floor: f64,
    rng: &mut RandomSource,
) -> f64 {
    let mut z = x;
    let mut t = 0.0;
    while t < y {
        let dt = step.min(y - t);
        let g: f64 = StandardNormal.sample(rng);
        z += theta * dt + 2.0 * (z.max(0.0) * dt).sqrt() * g;
        t += dt;
        if z <= floor {
            if theta <= 0.0 {
                return 0.0;
            }
            z = z.max(0.0);
        }
    }
    z
}

/// First time an Euler BESQ(-1) path from `x` is below `floor`, with step
/// `rel × current value`.
pub fn besq_first_passage(x: f64, floor: f64, rel: f64, rng: &mut RandomSource) -> f64 {
    let mut z = x;
    let mut t = 0.0;
    while z > floor {
        let dt = rel * z;
        let g: f64 = StandardNormal.sample(rng);
        let next = z - dt + 2.0 * (z * dt).sqrt() * g;
        if next <= floor {
            // linear interpolation of the crossing inside the step
            return t + dt * (z - floor) / (z - next);
        }
        z = next;
        t += dt;
    }
    t
}

/// Euler scheme for the Wright-Fisher diffusion with generator
/// `½ Σ x_i (δ_ij - x_j) ∂_ij + ½ Σ (θ_i - θ x_i) ∂_i`, killed when a
/// coordinate reaches 0 (monitored between steps by the Brownian bridge
/// crossing probability). Returns `None` when killed before `u`.
pub fn wright_fisher_euler(
    x0: &[f64],
    theta: &[f64],
    step: f64,
    u: f64,
    rng: &mut RandomSource,
) -> Option<Vec<f64>> {
    let d = x0.len();
    let total: f64 = theta.iter().sum();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut t = 0.0;
    while t < u {
        let dt = step.min(u - t);
        for gi in g.iter_mut() {
            *gi = StandardNormal.sample(rng);
        }
        let common: f64 = x.iter().zip(&g).map(|(xi, gi)| xi.sqrt() * gi).sum();
        for i in 0..d {
            let drift = 0.5 * (theta[i] - total * x[i]);
            next[i] = x[i] + drift * dt + dt.sqrt() * (x[i].sqrt() * g[i] - x[i] * common);
        }
        for i in 0..d {
            if next[i] <= 0.0 {
                return None;
            }
            let var = (x[i] * (1.0 - x[i])).max(1e-300);
            if rng.random::<f64>() < (-2.0 * x[i] * next[i] / (var * dt)).exp() {
                return None;
            }
        }
        let s: f64 = next.iter().sum();
        for i in 0..d {
            x[i] = next[i] / s;
        }
        t += dt;
    }
    Some(x)
}

// ---------------------------------------------------------------- helpers

fn normalized_tops(t: &KTree) -> Vec<f64> {
    let m = t.mass();
    t.tops().values().map(|x| x / m).collect()
}

fn shape_index(shapes: &[TreeShape]) -> impl Fn(&TreeShape) -> usize + '_ {
    move |s| {
        shapes
            .iter()
            .position(|t| t == s)
            .expect("shape in enumeration")
    }
}

fn ks_check(name: impl Into<String>, a: &[f64], b: &[f64]) -> Result<Check> {
    let t = ks_two_sample(a, b)?;
    Ok(Check::p_value(name, StatKind::Ks, t.p_value).with_values(t.statistic, 0.0))
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn pseudo_stationary_start(
    k: usize,
    gamma: f64,
    opts: &SuiteOptions,
    rng: &mut RandomSource,
) -> Result<KTree> {
    let m = sample_gamma(k as f64 - 0.5, gamma, rng)?;
    sample_brownian_reduced_ktree(k, m, opts.pdip_blocks, rng)
}

// ---------------------------------------------------------------- suites

/// Killed run from a Gamma(k - 1/2, γ)-mass Brownian reduced k-tree survives
/// to `y` with probability `(2yγ + 1)^(-k)`.
pub fn suite_survival(
    k: usize,
    gamma: f64,
    y: f64,
    n: usize,
    opts: &SuiteOptions,
) -> Result<TestReport> {
    ensure(k >= 2, || format!("k = {k}"))?;
    let cfg = EvolutionConfig {
        mass_floor: 0.0,
        ..opts.evolution()
    };
    let alive = replicate(n, opts.seed, 0, |rng| {
        let t = pseudo_stationary_start(k, gamma, opts, rng)?;
        Ok(run_killed(&t, &cfg, y, rng)?.terminal == Terminal::Horizon)
    })?;
    let p = alive.iter().filter(|&&a| a).count() as f64 / n as f64;
    let target = (2.0 * y * gamma + 1.0).powi(-(k as i32));
    let tol = 0.02f64.max(4.0 * (target * (1.0 - target) / n as f64).sqrt());
    let check = Check::at_most(
        "survival frequency",
        StatKind::Proportion,
        (p - target).abs(),
        tol,
    )
    .with_values(p, target);
    Ok(TestReport::new(
        "survival",
        opts.seed,
        n,
        &[("k", k as f64), ("gamma", gamma), ("y", y)],
        vec![check],
    ))
}

/// Law of the label dropped at the first degeneration from a Brownian
/// reduced k-tree: `P(J = 2) = 2/(k(2k-3))`, `P(J = j) = (4j-5)/(k(2k-3))`.
pub fn dropped_label_law(k: usize) -> Vec<f64> {
    let den = (k * (2 * k - 3)) as f64;
    (2..=k)
        .map(|j| {
            if j == 2 {
                2.0 / den
            } else {
                (4 * j - 5) as f64 / den
            }
        })
        .collect()
}

pub fn suite_dropped_label(k: usize, n: usize, opts: &SuiteOptions) -> Result<TestReport> {
    ensure(k >= 2, || format!("k = {k}"))?;
    let probs = dropped_label_law(k);
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Invariant(format!(
            "dropped-label law sums to {total}"
        )));
    }
    let cfg = EvolutionConfig {
        mass_floor: 0.0,
        ..opts.evolution()
    };
    // the first degeneration of a resampling run is the killed run's end
    let draws = replicate(n, opts.seed, 0, |rng| {
        let t = sample_brownian_reduced_ktree(k, 1.0, opts.pdip_blocks, rng)?;
        let tr = run_killed(&t, &cfg, f64::INFINITY, rng)?;
        if tr.terminal != Terminal::Degenerated {
            return Err(Error::State(format!(
                "killed run ended with {:?}",
                tr.terminal
            )));
        }
        let (_, _, j) = swap_and_reduce_tree(&tr.final_state)?;
        Ok((j, tr.end_time))
    })?;
    let mut counts = vec![0u64; k - 1];
    let mut ones = 0;
    for &(j, _) in &draws {
        if j == 1 {
            ones += 1;
        } else {
            counts[j as usize - 2] += 1;
        }
    }
    let mut checks = vec![Check::exact("label 1 dropped", ones as f64)];
    if k > 2 {
        let chi = chi_square(&counts, &probs)?;
        checks.push(Check::p_value(
            "dropped label frequencies",
            StatKind::ChiSquare,
            chi.p_value,
        ));
        for (i, (&c, &p)) in counts.iter().zip(&probs).enumerate() {
            let f = c as f64 / n as f64;
            checks.push(Check::sigma(
                format!("P(J = {})", i + 2),
                f,
                p,
                (p * (1.0 - p) / n as f64).sqrt(),
                4.0,
            ));
        }
        let js: Vec<f64> = draws.iter().map(|d| d.0 as f64).collect();
        // D has a heavy tail, so correlate J with the rank-stable log D
        let ds: Vec<f64> = draws.iter().map(|d| d.1.ln()).collect();
        let r = correlation(&js, &ds);
        checks.push(Check::at_most(
            "corr(J, log D)",
            StatKind::Correlation,
            r.abs(),
            4.0 / (n as f64).sqrt(),
        ));
    }
    Ok(TestReport::new(
        "dropped_label",
        opts.seed,
        n,
        &[("k", k as f64)],
        checks,
    ))
}

fn final_mass_or_atom(tr: &Trajectory) -> f64 {
    if tr.terminal == Terminal::Horizon {
        tr.final_mass()
    } else {
        0.0
    }
}

fn mixed_checks(label: &str, a: &[f64], b: &[f64]) -> Result<Vec<Check>> {
    let (pa, pb): (Vec<f64>, Vec<f64>) = (
        a.iter().copied().filter(|&x| x > 0.0).collect(),
        b.iter().copied().filter(|&x| x > 0.0).collect(),
    );
    let z = proportion_z(a.len() - pa.len(), a.len(), b.len() - pb.len(), b.len());
    let mut checks = vec![Check::at_most(
        format!("{label}: atom at 0"),
        StatKind::Proportion,
        z.abs(),
        4.0,
    )];
    checks.push(ks_check(format!("{label}: positive part"), &pa, &pb)?);
    let (ma, sa) = mean_se(a);
    let (mb, sb) = mean_se(b);
    checks.push(Check::sigma(
        format!("{label}: mean"),
        ma,
        mb,
        sa.hypot(sb),
        3.0,
    ));
    Ok(checks)
}

/// Total mass at `y` of resampling and non-resampling runs from a unit-mass
/// Brownian reduced k-tree against Euler BESQ_1(-1).
pub fn suite_total_mass(k: usize, y: f64, n: usize, opts: &SuiteOptions) -> Result<TestReport> {
    let cfg = opts.evolution();
    let floor = cfg.mass_floor;
    let oracle = replicate(n, opts.seed, ORACLE, |rng| {
        Ok(if y > 0.0 {
            besq_euler_terminal(1.0, -1.0, opts.euler_step, y, floor, rng)
        } else {
            1.0
        })
    })?;
    let mut checks = Vec::new();
    for (label, resampling) in [("resampling", true), ("non-resampling", false)] {
        let masses = replicate(
            n,
            opts.seed,
            if resampling { 0 } else { 2 * ORACLE },
            |rng| {
                let t = sample_brownian_reduced_ktree(k, 1.0, opts.pdip_blocks, rng)?;
                let tr = if resampling {
                    run_resampling(&t, &cfg, y, rng)?
                } else {
                    run_nonresampling(&t, &cfg, y, rng)?
                };
                Ok(final_mass_or_atom(&tr))
            },
        )?;
        if y == 0.0 {
            let off = masses.iter().filter(|&&m| (m - 1.0).abs() > 1e-12).count();
            checks.push(Check::exact(
                format!("{label}: mass 1 at y = 0"),
                off as f64,
            ));
        } else {
            checks.extend(mixed_checks(label, &masses, &oracle)?);
        }
    }
    Ok(TestReport::new(
        "total_mass",
        opts.seed,
        n,
        &[("k", k as f64), ("y", y)],
        checks,
    ))
}

/// Given survival of the killed run, the mass is Gamma(k - 1/2, γ/(2γy+1))
/// and the normalized tree is a Brownian reduced k-tree.
pub fn suite_pseudostationarity(
    k: usize,
    gamma: f64,
    y: f64,
    n: usize,
    opts: &SuiteOptions,
) -> Result<TestReport> {
    ensure(k >= 2, || format!("k = {k}"))?;
    let cfg = EvolutionConfig {
        mass_floor: 0.0,
        ..opts.evolution()
    };
    let runs = replicate(n, opts.seed, 0, |rng| {
        let t = pseudo_stationary_start(k, gamma, opts, rng)?;
        let tr = run_killed(&t, &cfg, y, rng)?;
        Ok((tr.terminal == Terminal::Horizon).then_some(tr.final_state))
    })?;
    let survivors: Vec<KTree> = runs.into_iter().flatten().collect();
    ensure(survivors.len() >= 10, || {
        format!("only {} survivors", survivors.len())
    })?;
    let masses: Vec<f64> = survivors.iter().map(|t| t.mass()).collect();
    let (m, se) = mean_se(&masses);
    let target = (k as f64 - 0.5) * (2.0 * gamma * y + 1.0) / gamma;
    let mut checks = vec![Check::sigma("conditional mean mass", m, target, se, 3.0)];
    let fresh = replicate(survivors.len(), opts.seed, ORACLE, |rng| {
        sample_brownian_reduced_ktree(k, 1.0, opts.pdip_blocks, rng)
    })?;
    let (a, b): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (
        survivors.iter().map(normalized_tops).collect(),
        fresh.iter().map(normalized_tops).collect(),
    );
    for i in 0..k {
        checks.push(ks_check(
            format!("top {} / mass", i + 1),
            &column(&a, i),
            &column(&b, i),
        )?);
    }
    let labels: Vec<u32> = (1..=k as u32).collect();
    let shapes = enumerate_shapes(&labels);
    if shapes.len() > 1 {
        let idx = shape_index(&shapes);
        let mut counts = vec![0u64; shapes.len()];
        for t in &survivors {
            counts[idx(t.shape())] += 1;
        }
        let p = vec![1.0 / shapes.len() as f64; shapes.len()];
        checks.push(Check::p_value(
            "shape frequencies",
            StatKind::ChiSquare,
            chi_square(&counts, &p)?.p_value,
        ));
    }
    Ok(TestReport::new(
        "pseudostationarity",
        opts.seed,
        n,
        &[
            ("k", k as f64),
            ("gamma", gamma),
            ("y", y),
            ("survivors", survivors.len() as f64),
        ],
        checks,
    ))
}

fn edge_mass(t: &KTree) -> f64 {
    t.partitions().values().map(|p| p.mass()).sum()
}

/// `π_j` of a k-tree run at `y` against a j-tree run at `y`, both started
/// from iterated resampling kernels on a unit-mass 1-tree.
pub fn suite_consistency(
    k: usize,
    j: usize,
    y: f64,
    n: usize,
    opts: &SuiteOptions,
) -> Result<TestReport> {
    ensure(2 <= j && j < k, || {
        format!("need 2 <= j < k, got j = {j}, k = {k}")
    })?;
    let cfg = opts.evolution();
    let mut checks = Vec::new();
    for (label, resampling) in [("resampling", true), ("non-resampling", false)] {
        let base = if resampling { 0 } else { 2 * ORACLE };
        let run = |size: usize, rng: &mut RandomSource| -> Result<Option<(KTree, f64)>> {
            let t = sample_by_resampling(size, 1.0, opts.pdip_blocks, rng)?;
            let tr = if resampling {
                run_resampling(&t, &cfg, y, rng)?
            } else {
                run_nonresampling(&t, &cfg, y, rng)?
            };
            if tr.terminal != Terminal::Horizon {
                return Ok(None);
            }
            let m = tr.final_mass();
            Ok(Some((project_to(&tr.final_state, j as u32)?, m)))
        };
        let a = replicate(n, opts.seed, base, |rng| run(k, rng))?;
        let b = replicate(n, opts.seed, base + ORACLE, |rng| run(j, rng))?;
        let drift = a
            .iter()
            .flatten()
            .map(|(t, m)| (t.mass() - m).abs() / m)
            .fold(0.0, f64::max);
        checks.push(Check::at_most(
            format!("{label}: projected mass drift"),
            StatKind::Exact,
            drift,
            1e-12,
        ));
        let (sa, sb): (Vec<KTree>, Vec<KTree>) = (
            a.into_iter().flatten().map(|p| p.0).collect(),
            b.into_iter().flatten().map(|p| p.0).collect(),
        );
        let z = proportion_z(n - sa.len(), n, n - sb.len(), n);
        checks.push(Check::at_most(
            format!("{label}: extinct by y"),
            StatKind::Proportion,
            z.abs(),
            4.0,
        ));
        if resampling {
            for i in 1..=j as u32 {
                let xa: Vec<f64> = sa.iter().map(|t| t.tops()[&i]).collect();
                let xb: Vec<f64> = sb.iter().map(|t| t.tops()[&i]).collect();
                checks.push(ks_check(format!("{label}: x{i}"), &xa, &xb)?);
            }
            let (ea, eb): (Vec<f64>, Vec<f64>) = (
                sa.iter().map(edge_mass).collect(),
                sb.iter().map(edge_mass).collect(),
            );
            checks.push(ks_check(format!("{label}: edge partition mass"), &ea, &eb)?);
            let shapes = enumerate_shapes(&(1..=j as u32).collect::<Vec<_>>());
            if shapes.len() > 1 {
                let idx = shape_index(&shapes);
                let count = |v: &[KTree]| {
                    let mut c = vec![0u64; shapes.len()];
                    for t in v {
                        c[idx(t.shape())] += 1;
                    }
                    c
                };
                let chi = chi_square_homogeneity(&count(&sa), &count(&sb))?;
                checks.push(Check::p_value(
                    format!("{label}: shapes"),
                    StatKind::ChiSquare,
                    chi.p_value,
                ));
            }
        } else {
            // label 1 is never dropped, so x1 is always defined
            let xa: Vec<f64> = sa.iter().map(|t| t.tops()[&1]).collect();
            let xb: Vec<f64> = sb.iter().map(|t| t.tops()[&1]).collect();
            checks.push(ks_check(format!("{label}: x1"), &xa, &xb)?);
            let ma: Vec<f64> = sa.iter().map(|t| t.mass()).collect();
            let mb: Vec<f64> = sb.iter().map(|t| t.mass()).collect();
            checks.push(ks_check(format!("{label}: total mass"), &ma, &mb)?);
            let count = |v: &[KTree]| {
                let mut c = vec![0u64; j];
                for t in v {
                    c[t.k() - 1] += 1;
                }
                c
            };
            let chi = chi_square_homogeneity(&count(&sa), &count(&sb))?;
            checks.push(Check::p_value(
                format!("{label}: label count"),
                StatKind::ChiSquare,
                chi.p_value,
            ));
        }
    }
    Ok(TestReport::new(
        "consistency",
        opts.seed,
        n,
        &[("k", k as f64), ("j", j as f64), ("y", y)],
        checks,
    ))
}

/// Normalized coordinates of a de-Poissonized resampling run at `u / 4`,
/// killed at the first vanishing coordinate, against an Euler Wright-Fisher
/// oracle with parameters -1/2 (tops) and +1/2 (edge partitions).
pub fn suite_wright_fisher(k: usize, u: f64, n: usize, opts: &SuiteOptions) -> Result<TestReport> {
    ensure(k == 2 || k == 3, || format!("k = {k}"))?;
    let d = 2 * k - 1;
    let mut theta = vec![-0.5; k];
    theta.extend(vec![0.5; k - 1]);
    let mut checks = Vec::new();
    let grid = [u];
    let cfg = EvolutionConfig {
        grid_step: 1e-3,
        relative_grid: true,
        record_u_times: wf_record_times(&grid),
        u_horizon: Some(u / 4.0),
        ..opts.evolution()
    };
    let runs = replicate(n, opts.seed, 0, |rng| {
        let t = sample_brownian_reduced_ktree(k, 1.0, opts.pdip_blocks, rng)?;
        if u == 0.0 {
            let states = vec![(0.0, t.clone())];
            return Ok(wf_slice(&states, None, &grid)?.rows.pop().map(|r| r.1));
        }
        let tr = run_resampling(&t, &cfg, f64::INFINITY, rng)?;
        let states = depoissonize(&tr)?;
        if states.is_empty() {
            return Ok(None);
        }
        Ok(wf_slice(&states, tr.first_vanishing_u, &grid)?
            .rows
            .pop()
            .map(|r| r.1))
    })?;
    let model: Vec<Vec<f64>> = runs.into_iter().flatten().collect();
    let sums = model
        .iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "coordinates sum to 1",
        StatKind::Exact,
        sums,
        1e-12,
    ));
    let oracle: Vec<Vec<f64>> = if u == 0.0 {
        Vec::new()
    } else {
        replicate(WF_ORACLE_FACTOR * n, opts.seed, ORACLE, |rng| {
            let x0 = sample_dirichlet(&vec![0.5; d], rng)?;
            Ok(wright_fisher_euler(&x0, &theta, opts.euler_step, u, rng))
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    if u > 0.0 {
        let z = proportion_z(model.len(), n, oracle.len(), WF_ORACLE_FACTOR * n);
        checks.push(
            Check::at_most("survival to u", StatKind::Proportion, z.abs(), 4.0).with_values(
                model.len() as f64 / n as f64,
                oracle.len() as f64 / (WF_ORACLE_FACTOR * n) as f64,
            ),
        );
    }
    // Dirichlet(1/2, ..., 1/2) moments
    let a0 = d as f64 * 0.5;
    let (m1, m2) = (0.5 / a0, 0.5 * 1.5 / (a0 * (a0 + 1.0)));
    for i in 0..d {
        for p in [1, 2] {
            let xs: Vec<f64> = model.iter().map(|r| r[i].powi(p)).collect();
            let (m, se) = mean_se(&xs);
            let name = format!("E[X{}^{p}]", i + 1);
            if u == 0.0 {
                checks.push(Check::sigma(name, m, if p == 1 { m1 } else { m2 }, se, 3.0));
            } else {
                let ys: Vec<f64> = oracle.iter().map(|r| r[i].powi(p)).collect();
                let (mo, seo) = mean_se(&ys);
                checks.push(Check::sigma(name, m, mo, se.hypot(seo), 3.0));
            }
        }
    }
    Ok(TestReport::new(
        "wright_fisher",
        opts.seed,
        n,
        &[("k", k as f64), ("u", u), ("survivors", model.len() as f64)],
        checks,
    ))
}

/// Time for the total mass of a resampling run to drop below `floor`
/// against the same first passage of Euler BESQ_1(-1).
pub fn suite_accumulation(
    k: usize,
    n: usize,
    floor: f64,
    opts: &SuiteOptions,
) -> Result<TestReport> {
    let cfg = EvolutionConfig {
        mass_floor: floor,
        ..opts.evolution()
    };
    let runs = replicate(n, opts.seed, 0, |rng| {
        let t = sample_brownian_reduced_ktree(k, 1.0, opts.pdip_blocks, rng)?;
        let tr = run_resampling(&t, &cfg, f64::INFINITY, rng)?;
        let time = tr
            .floor_time
            .ok_or_else(|| Error::State("run ended above the floor".into()))?;
        Ok((time, tr.events.len()))
    })?;
    let oracle = replicate(n, opts.seed, ORACLE, |rng| {
        Ok(besq_first_passage(1.0, floor, 1e-3, rng))
    })?;
    let times: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let d = ks_distance(&times, &oracle);
    let max_events = runs.iter().map(|r| r.1).max().unwrap_or(0);
    let mut median = times.clone();
    median.sort_by(f64::total_cmp);
    // InverseGamma(3/2, 1/2) median: 1 / (2 × Gamma(3/2, 1) median)
    let ig_median = 1.0 / (2.0 * 1.183_947_7);
    let checks = vec![
        Check::at_most("floor passage KS distance", StatKind::Ks, d, 0.03),
        Check::at_most(
            "replicates with infinitely many events",
            StatKind::Exact,
            0.0,
            0.0,
        )
        .with_values(max_events as f64, f64::INFINITY),
        Check::at_most(
            "median passage vs InverseGamma(3/2, 1/2)",
            StatKind::Moment,
            (median[n / 2] - ig_median).abs() / ig_median,
            0.05,
        )
        .with_values(median[n / 2], ig_median),
    ];
    Ok(TestReport::new(
        "accumulation",
        opts.seed,
        n,
        &[
            ("k", k as f64),
            ("floor", floor),
            ("max_events", max_events as f64),
        ],
        checks,
    ))
}

/// Type-1 total mass after two `y/2` steps against one `y` step.
pub fn suite_semigroup(y: f64, n: usize, opts: &SuiteOptions) -> Result<TestReport> {
    let eps = opts.jump_truncation;
    let start = |rng: &mut RandomSource| -> Result<Type1State> {
        Type1State::new(0.4, sample_pdip(rng, opts.pdip_blocks)?.scale(0.6)?)
    };
    let one = replicate(n, opts.seed, 0, |rng| {
        let s = start(rng)?;
        Ok(type1_transition(&s, y, rng, eps)?.mass())
    })?;
    let two = replicate(n, opts.seed, ORACLE, |rng| {
        let s = start(rng)?;
        let h = type1_transition(&s, y / 2.0, rng, eps)?;
        Ok(if h.mass() > 0.0 {
            type1_transition(&h, y / 2.0, rng, eps)?.mass()
        } else {
            0.0
        })
    })?;
    let checks = mixed_checks("type-1 mass", &one, &two)?;
    Ok(TestReport::new(
        "semigroup",
        opts.seed,
        n,
        &[("y", y)],
        checks,
    ))
}

/// Empirical Laplace transform of the truncated jump sum over `[0, s]`
/// against `exp(-s Φ(λ))`.
pub fn suite_subordinator(
    y: f64,
    s: f64,
    eps: f64,
    n: usize,
    opts: &SuiteOptions,
) -> Result<TestReport> {
    let sums = replicate(n, opts.seed, 0, |rng| {
        Ok(sample_subordinator_jumps(y, s, eps, rng)?.total_mass())
    })?;
    let mut checks = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        let est = sums.iter().map(|x| (-lambda * x).exp()).sum::<f64>() / n as f64;
        let target = (-s * laplace_exponent(lambda, y)).exp();
        checks.push(
            Check::at_most(
                format!("Laplace transform at {lambda}"),
                StatKind::Moment,
                (est / target - 1.0).abs(),
                0.02,
            )
            .with_values(est, target),
        );
    }
    Ok(TestReport::new(
        "subordinator",
        opts.seed,
        n,
        &[("y", y), ("s", s), ("eps", eps)],
        checks,
    ))
}

/// Exhaustive shape checks for k <= 5 and the nine-leaf swap-and-reduce example.
pub fn suite_combinatorics(opts: &SuiteOptions) -> Result<TestReport> {
    let mut checks = Vec::new();
    let mut invalid = 0usize;
    let mut bad_reductions = 0usize;
    for k in 1..=5u32 {
        let labels: Vec<u32> = (1..=k).collect();
        let shapes = enumerate_shapes(&labels);
        let expected: usize = (1..(2 * k as usize).saturating_sub(2)).step_by(2).product();
        checks.push(
            Check::exact(
                format!("number of shapes for k = {k}"),
                (shapes.len() as f64 - expected as f64).abs(),
            )
            .with_values(shapes.len() as f64, expected as f64),
        );
        for t in &shapes {
            if validate_shape(t).is_err() {
                invalid += 1;
            }
            if k >= 2 {
                for &i in &labels {
                    match swap_and_reduce_shape(t, i) {
                        Ok((r, _)) if validate_shape(&r).is_ok() && r.k() == k as usize - 1 => {}
                        _ => bad_reductions += 1,
                    }
                }
            }
        }
    }
    checks.push(Check::exact("invalid enumerated shapes", invalid as f64));
    checks.push(Check::exact("invalid reductions", bad_reductions as f64));
    let fig = TreeShape::from_edges(vec![
        (1..=9).collect(),
        vec![5, 7],
        vec![1, 2, 3, 4, 6, 8, 9],
        vec![1, 2, 4, 6, 8, 9],
        vec![1, 6],
        vec![2, 4, 8, 9],
        vec![4, 8, 9],
        vec![4, 8],
    ])?;
    let expected = TreeShape::from_edges(vec![
        vec![1, 2, 3, 5, 6, 7, 8, 9],
        vec![5, 7],
        vec![1, 2, 3, 6, 8, 9],
        vec![1, 2, 6, 8, 9],
        vec![1, 6],
        vec![2, 8, 9],
        vec![2, 8],
    ])?;
    let (reduced, j) = swap_and_reduce_shape(&fig, 2)?;
    let mismatch = (j != 4) as u32 + (reduced != expected) as u32;
    checks.push(Check::exact(
        "nine-leaf swap-and-reduce example",
        mismatch as f64,
    ));
    Ok(TestReport::new("combinatorics", opts.seed, 0, &[], checks))
}

/// Parameters of a named suite run; unset fields take the suite defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub j: Option<usize>,
    pub gamma: Option<f64>,
    pub y: Option<f64>,
    pub u: Option<f64>,
    pub floor: Option<f64>,
    pub eps: Option<f64>,
}

pub const SUITES: &[&str] = &[
    "survival",
    "dropped_label",
    "total_mass",
    "pseudostationarity",
    "consistency",
    "wright_fisher",
    "accumulation",
    "semigroup",
    "subordinator",
    "combinatorics",
];

pub fn run_suite(name: &str, p: &SuiteParams, opts: &SuiteOptions) -> Result<TestReport> {
    match name {
        "survival" => suite_survival(
            p.k.unwrap_or(3),
            p.gamma.unwrap_or(1.0),
            p.y.unwrap_or(0.5),
            p.n.unwrap_or(20_000),
            opts,
        ),
        "dropped_label" => suite_dropped_label(p.k.unwrap_or(3), p.n.unwrap_or(10_000), opts),
        "total_mass" => suite_total_mass(
            p.k.unwrap_or(3),
            p.y.unwrap_or(0.1),
            p.n.unwrap_or(5000),
            opts,
        ),
        "pseudostationarity" => suite_pseudostationarity(
            p.k.unwrap_or(3),
            p.gamma.unwrap_or(1.0),
            p.y.unwrap_or(0.5),
            p.n.unwrap_or(20_000),
            opts,
        ),
        "consistency" => suite_consistency(
            p.k.unwrap_or(3),
            p.j.unwrap_or(2),
            p.y.unwrap_or(0.2),
            p.n.unwrap_or(5000),
            opts,
        ),
        "wright_fisher" => suite_wright_fisher(
            p.k.unwrap_or(2),
            p.u.unwrap_or(0.2),
            p.n.unwrap_or(5000),
            opts,
        ),
        "accumulation" => suite_accumulation(
            p.k.unwrap_or(3),
            p.n.unwrap_or(5000),
            p.floor.unwrap_or(1e-4),
            opts,
        ),
        "semigroup" => suite_semigroup(p.y.unwrap_or(0.5), p.n.unwrap_or(10_000), opts),
        "subordinator" => suite_subordinator(
            p.y.unwrap_or(1.0),
            1.0,
            p.eps.unwrap_or(1e-8),
            p.n.unwrap_or(100_000),
            opts,
        ),
        "combinatorics" => suite_combinatorics(opts),
        other => Err(Error::Lookup(format!("unknown suite {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_label_law_values() {
        let p3 = dropped_label_law(3);
        assert!((p3[0] - 2.0 / 9.0).abs() < 1e-15 && (p3[1] - 7.0 / 9.0).abs() < 1e-15);
        let p4 = dropped_label_law(4);
        for (a, b) in p4.iter().zip([0.1, 0.35, 0.55]) {
            assert!((a - b).abs() < 1e-15);
        }
        for k in 2..20 {
            assert!((dropped_label_law(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_besq_mean() {
        // BESQ(1) from 1 has mean 1 + y
        let n = 4000;
        let mut r = RandomSource::new(3, 0);
        let m = (0..n)
            .map(|_| besq_euler_terminal(1.0, 1.0, 1e-3, 0.5, 0.0, &mut r))
            .sum::<f64>()
            / n as f64;
        assert!((m - 1.5).abs() < 4.0 * (4.0 * 1.25 / n as f64).sqrt());
    }

    #[test]
    fn euler_first_passage_is_inverse_gamma() {
        // BESQ_1(-1) extinction time ~ InverseGamma(3/2, 1/2): P(ζ <= t) = Q(3/2, 1/(2t))
        use statrs::function::gamma::gamma_ur;
        let n = 3000;
        let mut r = RandomSource::new(4, 0);
        let xs: Vec<f64> = (0..n)
            .map(|_| besq_first_passage(1.0, 1e-6, 1e-3, &mut r))
            .collect();
        let t = crate::stats::ks_one_sample(&xs, |t| gamma_ur(1.5, 1.0 / (2.0 * t))).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn wright_fisher_euler_stays_on_simplex() {
        let mut r = RandomSource::new(5, 0);
        let x = wright_fisher_euler(&[0.3, 0.3, 0.4], &[0.5, 0.5, 0.5], 1e-3, 0.1, &mut r).unwrap();
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wright_fisher_euler_neutral_mean() {
        // E[X_i(u)] = θ_i/θ + (x_i - θ_i/θ) e^{-θ u / 2} for positive parameters
        let n = 3000;
        let mut r = RandomSource::new(6, 0);
        let th = [1.0, 2.0];
        let xs: Vec<f64> = (0..n)
            .filter_map(|_| wright_fisher_euler(&[0.5, 0.5], &th, 1e-3, 0.4, &mut r).map(|x| x[0]))
            .collect();
        // with both parameters >= 1 the boundary is not reached
        assert!(xs.len() > n * 99 / 100, "{} killed", n - xs.len());
        let want = 1.0 / 3.0 + (0.5 - 1.0 / 3.0) * (-3.0f64 * 0.4 / 2.0).exp();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((m - want).abs() < 0.01, "{m} vs {want}");
    }

    #[test]
    fn small_suites_pass() {
        let opts = SuiteOptions::default();
        let r = suite_combinatorics(&opts).unwrap();
        assert!(r.pass, "{r:#?}");
        let r = suite_survival(2, 1.0, 0.0, 200, &opts).unwrap();
        assert!(r.pass && r.checks[0].estimate == Some(1.0));
        assert!(run_suite("nope", &SuiteParams::default(), &opts).is_err());
    }

    #[test]
    fn reports_are_reproducible() {
        let opts = SuiteOptions::default();
        let a = suite_survival(2, 1.0, 0.5, 100, &opts).unwrap();
        let b = suite_survival(2, 1.0, 0.5, 100, &opts).unwrap();
        assert_eq!(a, b);
    }
}
