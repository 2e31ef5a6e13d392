//! Interval partitions, the type-0/1 transition kernels, the type-2
//! evolution and the PDIP(1/2, 1/2) sampler.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compound::{Compound, Event};
use crate::error::{ensure, param, Error, Result};
use rand_distr::{Binomial, Distribution, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::primitives::{
    beta, exponential, gamma, l_given_count, levy_tail_rate, poisson, small_jump_mean, tail_jump,
    zero_truncated_poisson,
};
use crate::rng::RandomSource;

/// Unresolved mass immediately left of block `before` (at the right end when
/// `before` equals the block count). It stands for blocks smaller than the
/// truncation level; its mass counts towards the partition mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dust {
    pub before: usize,
    pub mass: f64,
}

/// One item of a partition in left-to-right order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    Block(f64),
    Dust(f64),
}

/// Ordered block masses; positions are the prefix sums.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IntervalPartition {
    blocks: Vec<f64>,
    dust: Vec<Dust>,
    mass: f64,
    resolution: f64,
}

#[derive(Default)]
pub(crate) struct Builder {
    blocks: Vec<f64>,
    dust: Vec<Dust>,
    resolution: f64,
}

impl Builder {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            blocks: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    pub(crate) fn block(&mut self, w: f64) {
        if w > 0.0 {
            self.blocks.push(w);
        }
    }

    pub(crate) fn dust(&mut self, d: f64, resolution: f64) {
        if d <= 0.0 {
            return;
        }
        self.resolution = self.resolution.max(resolution);
        let before = self.blocks.len();
        match self.dust.last_mut() {
            Some(last) if last.before == before => last.mass += d,
            _ => self.dust.push(Dust { before, mass: d }),
        }
    }

    pub(crate) fn append(&mut self, ip: &IntervalPartition) {
        for piece in ip.pieces() {
            match piece {
                Piece::Block(w) => self.block(w),
                Piece::Dust(d) => self.dust(d, ip.resolution),
            }
        }
    }

    pub(crate) fn finish(self) -> IntervalPartition {
        let mass = self.blocks.iter().sum::<f64>() + self.dust.iter().map(|d| d.mass).sum::<f64>();
        let resolution = if self.dust.is_empty() {
            0.0
        } else {
            self.resolution
        };
        IntervalPartition {
            blocks: self.blocks,
            dust: self.dust,
            mass,
            resolution,
        }
    }
}

/// Where a diversity count stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prefix {
    /// The first `n` blocks.
    Blocks(usize),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityEstimate {
    pub value: f64,
    /// Spread of the estimate over the last three levels of the schedule.
    pub error: f64,
}

impl IntervalPartition {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A partition without dust. Every block must be positive and finite.
    pub fn new(blocks: Vec<f64>) -> Result<Self> {
        Self::with_dust(blocks, 0.0, 0.0)
    }

    /// Blocks followed by `dust` unresolved mass made of pieces no larger than `resolution`.
    pub fn with_dust(blocks: Vec<f64>, dust: f64, resolution: f64) -> Result<Self> {
        for &w in &blocks {
            ensure(w > 0.0 && w.is_finite(), || format!("block mass {w}"))?;
        }
        ensure(dust >= 0.0 && dust.is_finite(), || {
            format!("dust mass {dust}")
        })?;
        ensure(resolution >= 0.0 && resolution.is_finite(), || {
            format!("resolution {resolution}")
        })?;
        let mut b = Builder {
            blocks,
            ..Builder::default()
        };
        b.dust(
            dust,
            resolution.max(if dust > 0.0 { f64::MIN_POSITIVE } else { 0.0 }),
        );
        Ok(b.finish())
    }

    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    pub fn dust(&self) -> &[Dust] {
        &self.dust
    }

    /// Number of stored blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// True for the empty partition (no blocks and no dust).
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty() && self.dust.is_empty()
    }

    /// Total mass, dust included.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dust_mass(&self) -> f64 {
        self.dust.iter().map(|d| d.mass).sum()
    }

    /// Upper bound on the size of any piece folded into dust.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn pieces(&self) -> impl Iterator<Item = Piece> + '_ {
        let (mut i, mut di) = (0, 0);
        std::iter::from_fn(move || {
            if let Some(d) = self.dust.get(di) {
                if d.before == i {
                    di += 1;
                    return Some(Piece::Dust(d.mass));
                }
            }
            let w = *self.blocks.get(i)?;
            i += 1;
            Some(Piece::Block(w))
        })
    }

    /// Left-to-right concatenation.
    pub fn concat(&self, right: &IntervalPartition) -> IntervalPartition {
        let mut b = Builder::with_capacity(self.len() + right.len());
        b.append(self);
        b.append(right);
        b.finish()
    }

    /// Multiply every block (and the dust) by `c`.
    pub fn scale(&self, c: f64) -> Result<IntervalPartition> {
        ensure(c > 0.0 && c.is_finite(), || format!("scale factor {c}"))?;
        let blocks: Vec<f64> = self.blocks.iter().map(|w| w * c).collect();
        let dust: Vec<Dust> = self
            .dust
            .iter()
            .map(|d| Dust {
                before: d.before,
                mass: d.mass * c,
            })
            .collect();
        // same summation as `Builder::finish`, so a rebuilt copy compares equal
        let mass = blocks.iter().sum::<f64>() + dust.iter().map(|d| d.mass).sum::<f64>();
        Ok(IntervalPartition {
            blocks,
            dust,
            mass,
            resolution: self.resolution * c,
        })
    }

    /// Split around block `idx`: `(left, block, right)` with `left ★ (0, block) ★ right = self`.
    pub fn split_at_block(
        &self,
        idx: usize,
    ) -> Result<(IntervalPartition, f64, IntervalPartition)> {
        if idx >= self.len() {
            return Err(Error::Lookup(format!(
                "block {idx} of a partition with {} blocks",
                self.len()
            )));
        }
        let mut left = Builder::with_capacity(idx);
        let mut right = Builder::with_capacity(self.len() - idx);
        left.resolution = self.resolution;
        right.resolution = self.resolution;
        left.blocks.extend_from_slice(&self.blocks[..idx]);
        right.blocks.extend_from_slice(&self.blocks[idx + 1..]);
        for d in &self.dust {
            if d.before <= idx {
                left.dust.push(*d);
            } else {
                right.dust.push(Dust {
                    before: d.before - idx - 1,
                    mass: d.mass,
                });
            }
        }
        Ok((left.finish(), self.blocks[idx], right.finish()))
    }

    /// Carve a block of mass `w` out of dust entry `k`; the rest of that dust is
    /// split in proportions `(v, 1 - v)` on either side of the new block.
    pub(crate) fn resolve_dust(&self, k: usize, w: f64, v: f64) -> IntervalPartition {
        let d = self.dust[k];
        let rest = (d.mass - w).max(0.0);
        let mut b = Builder::with_capacity(self.len() + 1);
        let mut di = 0;
        for (i, &blk) in self
            .blocks
            .iter()
            .chain(std::iter::once(&f64::NAN))
            .enumerate()
        {
            while di < self.dust.len() && self.dust[di].before == i {
                if di == k {
                    b.dust(rest * v, self.resolution);
                    b.block(w);
                    b.dust(rest * (1.0 - v), self.resolution);
                } else {
                    b.dust(self.dust[di].mass, self.resolution);
                }
                di += 1;
            }
            if i < self.len() {
                b.block(blk);
            }
        }
        b.finish()
    }

    /// Leftmost block and the remainder, as a type-1 pair. Dust left of the
    /// first block stays at the front of the remainder.
    pub fn split_leftmost(&self) -> (f64, IntervalPartition) {
        match self.split_at_block(0) {
            Ok((left, w, right)) => (w, left.concat(&right)),
            Err(_) => (0.0, self.clone()),
        }
    }

    /// Smallest level admissible in a diversity schedule.
    pub fn resolution_floor(&self) -> f64 {
        self.resolution
    }

    /// Geometric levels (ratio 1/2) from the largest block down to four times the floor.
    pub fn default_schedule(&self) -> Vec<f64> {
        let top = self.blocks.iter().cloned().fold(self.dust_mass(), f64::max);
        let floor = 4.0 * self.resolution_floor();
        let mut h = top;
        let mut out = Vec::new();
        while h >= floor && h > 0.0 && out.len() < 200 {
            out.push(h);
            h *= 0.5;
        }
        if out.is_empty() && top > 0.0 {
            out.push(top);
        }
        out
    }

    /// Estimate of the 1/2-diversity `sqrt(pi) lim sqrt(h) #{blocks > h}` of a prefix.
    pub fn diversity(&self, prefix: Prefix, schedule: &[f64]) -> Result<DiversityEstimate> {
        let n = match prefix {
            Prefix::Blocks(n) => n.min(self.len()),
            Prefix::End => self.len(),
        };
        let dust_in_prefix = self
            .dust
            .iter()
            .any(|d| d.before < n || prefix == Prefix::End);
        if n == 0 || !dust_in_prefix {
            // finitely many blocks: the count is bounded, so the limit is 0
            return Ok(DiversityEstimate {
                value: 0.0,
                error: 0.0,
            });
        }
        if schedule.is_empty() {
            return param("empty diversity schedule");
        }
        if schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|&h| !(h > 0.0)) {
            return param("diversity schedule must be positive and strictly decreasing");
        }
        let floor = self.resolution_floor();
        let hmin = *schedule.last().unwrap();
        if hmin < floor {
            return Err(Error::Resolution(format!(
                "level {hmin} is below the resolution floor {floor}"
            )));
        }
        let mut sorted: Vec<f64> = self.blocks[..n].to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let values: Vec<f64> = schedule
            .iter()
            .map(|&h| {
                let count = sorted.partition_point(|&w| w > h);
                PI.sqrt() * h.sqrt() * count as f64
            })
            .collect();
        let tail = &values[values.len().saturating_sub(3)..];
        let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
        let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
        Ok(DiversityEstimate {
            value: *values.last().unwrap(),
            error: hi - lo,
        })
    }

    /// Total diversity with the default schedule (0 for finite partitions).
    pub fn total_diversity(&self) -> f64 {
        let schedule = self.default_schedule();
        self.diversity(Prefix::End, &schedule)
            .map(|d| d.value)
            .unwrap_or(0.0)
    }
}

/// `left ★ right`.
pub fn concat(left: &IntervalPartition, right: &IntervalPartition) -> IntervalPartition {
    left.concat(right)
}

pub fn scale(alpha: &IntervalPartition, c: f64) -> Result<IntervalPartition> {
    alpha.scale(c)
}

pub fn diversity(
    alpha: &IntervalPartition,
    prefix: Prefix,
    schedule: &[f64],
) -> Result<DiversityEstimate> {
    alpha.diversity(prefix, schedule)
}

/// Constants shared by every draw of one kernel application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct KernelParams {
    two_y: f64,
    y: f64,
    eps: f64,
    tail_rate: f64,
    small_mean: f64,
    s_rate: f64,
}

impl KernelParams {
    pub(crate) fn new(y: f64, eps: f64) -> Self {
        Self {
            two_y: 2.0 * y,
            y,
            eps,
            tail_rate: levy_tail_rate(eps, y),
            small_mean: small_jump_mean(eps, y),
            s_rate: (2.0 * y).powf(-0.5),
        }
    }
}

fn validate_kernel(y: f64, eps: f64) -> Result<()> {
    ensure(y > 0.0 && y.is_finite(), || format!("elapsed time {y}"))?;
    ensure(eps > 0.0 && eps.is_finite(), || format!("truncation {eps}"))
}

/// Appends `ip(R, S)`: jumps above the truncation in time order, with the
/// expected small-jump mass as one dust piece at a uniform time.
fn push_ip_rs(out: &mut Builder, kp: &KernelParams, rng: &mut RandomSource) {
    let s = exponential(kp.s_rate, rng);
    let n = poisson(s * kp.tail_rate, rng) as usize;
    // sizes are i.i.d. and independent of the uniform jump times, so the time
    // order of the jumps is the draw order
    let dust_slot = rng.random_range(0..=n);
    for i in 0..=n {
        if i == dust_slot {
            out.dust(s * kp.small_mean, kp.eps);
        }
        if i < n {
            out.block(tail_jump(kp.eps, kp.y, rng));
        }
    }
}

/// New top of a surviving chain from a block with `a = w / 2y`.
fn chain_top(a: f64, kp: &KernelParams, rng: &mut RandomSource) -> f64 {
    if a > 1e12 {
        // the count is far beyond integer range; its normal approximation is exact here
        let z: f64 = StandardNormal.sample(rng);
        return gamma((a + a.sqrt() * z - 0.5).max(0.5), kp.two_y, rng);
    }
    l_given_count(zero_truncated_poisson(a, rng), kp.y, rng)
}

/// A surviving chain: the new block `L` followed by its `ip(R, S)`. Blocks
/// from dust are themselves folded into dust when below the truncation,
/// unless `keep` is set.
fn push_chain(out: &mut Builder, l: f64, keep: bool, kp: &KernelParams, rng: &mut RandomSource) {
    if keep || l > kp.eps {
        out.block(l);
    } else {
        out.dust(l, kp.eps);
    }
    push_ip_rs(out, kp, rng);
}

/// Dust is treated as infinitesimal while its grains are this small against `2y`.
const GRAIN_THRESHOLD: f64 = 0.05;
/// Most grains a dust piece is split into.
const MAX_GRAINS: f64 = 64.0;

/// Dust survivors beyond this count are evolved in aggregate.
const EXPLICIT_DUST_CHAINS: u64 = 16;

/// `Gamma(1/2, scale 2y)` conditioned above the truncation.
fn half_gamma_above(kp: &KernelParams, p_above: f64, rng: &mut RandomSource) -> f64 {
    if p_above > 0.25 {
        loop {
            let l = gamma(0.5, kp.two_y, rng);
            if l > kp.eps {
                return l;
            }
        }
    }
    // shifted exponential proposal; the density ratio is sqrt(eps / x)
    loop {
        let x = kp.eps + exponential(1.0 / kp.two_y, rng);
        if rng.random::<f64>() < (kp.eps / x).sqrt() {
            return x;
        }
    }
}

/// `n` chains started by infinitesimal blocks: the resolved pieces (new
/// blocks and tail jumps above the truncation) in random order, the rest as
/// one dust piece of its expected mass.
fn push_dust_cloud(out: &mut Builder, n: u64, kp: &KernelParams, rng: &mut RandomSource) {
    let z = kp.eps / kp.two_y;
    let p_above = erfc(z.sqrt());
    let k = if p_above > 0.0 {
        Binomial::new(n, p_above.min(1.0)).unwrap().sample(rng)
    } else {
        0
    };
    let mut blocks: Vec<f64> = (0..k).map(|_| half_gamma_above(kp, p_above, rng)).collect();
    // E[L; L < eps] / P(L < eps) for L ~ Gamma(1/2, scale 2y)
    let below_mean = if z > 50.0 {
        kp.y
    } else if z > 0.0 {
        kp.y * gamma_lr(1.5, z) / gamma_lr(0.5, z)
    } else {
        0.0
    };
    let mut dust = (n - k) as f64 * below_mean;
    let s = gamma(n as f64, 1.0 / kp.s_rate, rng);
    let jumps = poisson(s * kp.tail_rate, rng);
    blocks.extend((0..jumps).map(|_| tail_jump(kp.eps, kp.y, rng)));
    dust += s * kp.small_mean;
    blocks.shuffle(rng);
    let slot = rng.random_range(0..=blocks.len());
    for (i, &w) in blocks.iter().enumerate() {
        if i == slot {
            out.dust(dust, kp.eps);
        }
        out.block(w);
    }
    if slot == blocks.len() {
        out.dust(dust, kp.eps);
    }
}

/// Survivors of a piece, given that it has at least one when `forced`. Dust
/// made of pieces up to `grain` behaves as infinitesimal blocks when `grain`
/// is small against the elapsed time, and as a row of equal blocks otherwise.
fn piece_survivors(
    piece: Piece,
    grain: f64,
    forced: bool,
    out: &mut Builder,
    kp: &KernelParams,
    rng: &mut RandomSource,
) {
    match piece {
        Piece::Block(w) => {
            let a = w / kp.two_y;
            if forced || rng.random::<f64>() >= (-a).exp() {
                let l = chain_top(a, kp, rng);
                push_chain(out, l, true, kp, rng);
            }
        }
        Piece::Dust(d) if grain.min(d) / kp.two_y >= GRAIN_THRESHOLD => {
            let n = (d / grain).ceil().clamp(1.0, MAX_GRAINS) as i32;
            let a = d / n as f64 / kp.two_y;
            let dead = (-a).exp();
            let mut need = forced;
            for i in 0..n {
                // given no survivor so far, at least one among the remaining n - i
                let p = if need {
                    -(-a).exp_m1() / (1.0 - dead.powi(n - i))
                } else {
                    -(-a).exp_m1()
                };
                if rng.random::<f64>() < p {
                    let l = chain_top(a, kp, rng);
                    push_chain(out, l, need, kp, rng);
                    need = false;
                }
            }
        }
        Piece::Dust(d) => {
            // infinitesimal blocks: a Poisson number survive, each with count one
            let a = d / kp.two_y;
            let mut k = if forced {
                zero_truncated_poisson(a, rng)
            } else {
                poisson(a, rng)
            };
            if forced {
                // the leftmost survivor must be a resolved block
                let l = l_given_count(1, kp.y, rng);
                push_chain(out, l, true, kp, rng);
                k -= 1;
            }
            if k > EXPLICIT_DUST_CHAINS {
                push_dust_cloud(out, k, kp, rng);
            } else {
                for _ in 0..k {
                    let l = l_given_count(1, kp.y, rng);
                    push_chain(out, l, false, kp, rng);
                }
            }
        }
    }
}

fn sweep(gamma: &IntervalPartition, kp: &KernelParams, out: &mut Builder, rng: &mut RandomSource) {
    for piece in gamma.pieces() {
        piece_survivors(piece, gamma.resolution(), false, out, kp, rng);
    }
}

/// As `sweep`, conditioned on at least one survivor. The first surviving piece
/// is located by inverting `P(first <= p | any) = (1 - e^{-A_p}) / (1 - e^{-A})`.
fn sweep_surviving(
    gamma: &IntervalPartition,
    kp: &KernelParams,
    out: &mut Builder,
    rng: &mut RandomSource,
) {
    let total = gamma.mass() / kp.two_y;
    let q = -(-total).exp_m1();
    let target = -(-rng.random::<f64>() * q).ln_1p();
    let pieces: Vec<Piece> = gamma.pieces().collect();
    let mut acc = 0.0;
    let mut first = pieces.len() - 1;
    for (i, p) in pieces.iter().enumerate() {
        acc += match *p {
            Piece::Block(w) | Piece::Dust(w) => w / kp.two_y,
        };
        if acc >= target {
            first = i;
            break;
        }
    }
    for (i, &p) in pieces.iter().enumerate().skip(first) {
        piece_survivors(p, gamma.resolution(), i == first, out, kp, rng);
    }
}

/// Type-1 kernel on the IP form `γ`; the result may be empty.
pub(crate) fn type1_ip(
    gamma: &IntervalPartition,
    y: f64,
    eps: f64,
    rng: &mut RandomSource,
) -> IntervalPartition {
    let kp = KernelParams::new(y, eps);
    let mut out = Builder::default();
    sweep(gamma, &kp, &mut out, rng);
    out.finish()
}

/// Type-1 kernel on `γ` conditioned on not degenerating; `γ` must have positive mass.
pub(crate) fn type1_ip_surviving(
    gamma: &IntervalPartition,
    y: f64,
    eps: f64,
    rng: &mut RandomSource,
) -> IntervalPartition {
    debug_assert!(gamma.mass() > 0.0);
    let kp = KernelParams::new(y, eps);
    let mut out = Builder::default();
    sweep_surviving(gamma, &kp, &mut out, rng);
    out.finish()
}

pub(crate) fn type0_ip(
    alpha: &IntervalPartition,
    y: f64,
    eps: f64,
    rng: &mut RandomSource,
) -> IntervalPartition {
    let kp = KernelParams::new(y, eps);
    let mut out = Builder::default();
    push_ip_rs(&mut out, &kp, rng);
    sweep(alpha, &kp, &mut out, rng);
    out.finish()
}

/// `ip(R, S)` for elapsed time `y`: blocks are the jumps above `eps` in time
/// order; the omitted jumps enter as dust of their expected mass.
pub fn build_ip_rs(y: f64, eps: f64, rng: &mut RandomSource) -> Result<IntervalPartition> {
    validate_kernel(y, eps)?;
    let kp = KernelParams::new(y, eps);
    let mut out = Builder::default();
    push_ip_rs(&mut out, &kp, rng);
    Ok(out.finish())
}

/// Fate of one block under the kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTransitionDraw {
    pub survived: bool,
    pub new_top: Option<f64>,
    pub tail: Option<IntervalPartition>,
}

pub fn draw_block_transition(
    w: f64,
    y: f64,
    eps: f64,
    rng: &mut RandomSource,
) -> Result<BlockTransitionDraw> {
    validate_kernel(y, eps)?;
    ensure(w > 0.0 && w.is_finite(), || format!("block mass {w}"))?;
    let kp = KernelParams::new(y, eps);
    let a = w / kp.two_y;
    if rng.random::<f64>() < (-a).exp() {
        return Ok(BlockTransitionDraw {
            survived: false,
            new_top: None,
            tail: None,
        });
    }
    let top = chain_top(a, &kp, rng);
    let mut tail = Builder::default();
    push_ip_rs(&mut tail, &kp, rng);
    Ok(BlockTransitionDraw {
        survived: true,
        new_top: Some(top),
        tail: Some(tail.finish()),
    })
}

/// Pair-valued type-1 state `(m, α)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Type1State {
    pub top: f64,
    pub partition: IntervalPartition,
}

impl Type1State {
    pub fn new(top: f64, partition: IntervalPartition) -> Result<Self> {
        ensure(top >= 0.0 && top.is_finite(), || format!("top mass {top}"))?;
        Ok(Self { top, partition })
    }

    pub fn mass(&self) -> f64 {
        self.top + self.partition.mass()
    }

    /// Absorbed at `(0, ∅)`.
    pub fn is_degenerate(&self) -> bool {
        self.top == 0.0 && self.partition.mass() == 0.0
    }

    /// IP form `(0, m) ★ α`.
    pub fn to_ip(&self) -> IntervalPartition {
        let mut b = Builder::with_capacity(self.partition.len() + 1);
        b.block(self.top);
        b.append(&self.partition);
        b.finish()
    }

    pub fn from_ip(gamma: &IntervalPartition) -> Self {
        let (top, partition) = gamma.split_leftmost();
        Self { top, partition }
    }
}

/// Exact type-1 transition over time `y`.
pub fn type1_transition(
    state: &Type1State,
    y: f64,
    rng: &mut RandomSource,
    eps: f64,
) -> Result<Type1State> {
    validate_kernel(y, eps)?;
    if state.is_degenerate() {
        return Ok(Type1State::default());
    }
    Ok(Type1State::from_ip(&type1_ip(&state.to_ip(), y, eps, rng)))
}

/// Exact type-0 transition over time `y`.
pub fn type0_transition(
    alpha: &IntervalPartition,
    y: f64,
    rng: &mut RandomSource,
    eps: f64,
) -> Result<IntervalPartition> {
    validate_kernel(y, eps)?;
    Ok(type0_ip(alpha, y, eps, rng))
}

/// Type-2 state `(m1, m2, α)` with the bookkeeping of which top currently
/// runs as the independent BESQ(-1) clock.
#[derive(Clone, Debug, PartialEq)]
pub struct Type2State {
    pub top1: f64,
    pub top2: f64,
    pub partition: IntervalPartition,
    /// 1 or 2.
    pub clock_label: u8,
    /// Time since the clock was started.
    pub clock_time: f64,
}

impl Type2State {
    pub fn new(top1: f64, top2: f64, partition: IntervalPartition) -> Result<Self> {
        ensure(
            top1 >= 0.0 && top2 >= 0.0 && top1.is_finite() && top2.is_finite(),
            || format!("top masses ({top1}, {top2})"),
        )?;
        ensure(top1 + top2 > 0.0, || {
            "type-2 state needs a positive top".into()
        })?;
        ensure(top1 > 0.0 && top2 > 0.0 || partition.mass() > 0.0, || {
            "a zero top needs a nonempty partition".into()
        })?;
        Ok(Self {
            top1,
            top2,
            partition,
            clock_label: 1,
            clock_time: 0.0,
        })
    }

    pub fn mass(&self) -> f64 {
        self.top1 + self.top2 + self.partition.mass()
    }

    /// One top left on an empty partition.
    pub fn is_degenerate(&self) -> bool {
        (self.top1 == 0.0 || self.top2 == 0.0) && self.partition.mass() == 0.0
    }
}

/// Run a type-2 evolution for `duration`, stopping at least every `step`.
/// Returns the state at the end (or the left limit at degeneration) and the
/// degeneration time if it occurred.
pub fn type2_evolve(
    state: &Type2State,
    duration: f64,
    step: f64,
    rng: &mut RandomSource,
    eps: f64,
) -> Result<(Type2State, Option<f64>)> {
    if state.is_degenerate() {
        return Err(Error::State(
            "type-2 evolution started from a degenerate state".into(),
        ));
    }
    ensure(duration > 0.0 && step > 0.0, || {
        format!("duration {duration}, step {step}")
    })?;
    ensure(eps > 0.0, || format!("truncation {eps}"))?;
    let mut c = Compound::type2(
        None,
        [1, 2],
        [state.top1, state.top2],
        state.partition.clone(),
    );
    c.clock = (state.clock_label as usize).saturating_sub(1).min(1);
    c.clock_time = state.clock_time;
    let mut t = 0.0;
    while t < duration {
        let to_grid = step.min(duration - t);
        let (dt, event) = match c.propose(rng) {
            Some((dt, e)) if dt < to_grid => (dt, Some(e)),
            _ => (to_grid, None),
        };
        c.advance(dt, event, eps, rng);
        t = if event.is_none() && dt == duration - t {
            duration
        } else {
            t + dt
        };
        if matches!(event, Some(Event::Degenerate)) {
            return Ok((c.to_type2(), Some(t)));
        }
    }
    Ok((c.to_type2(), None))
}

/// PDIP(1/2, 1/2) of unit mass: GEM(1/2, 1/2) sticks in uniformly random
/// order, with the unbroken remainder kept as dust at a uniform position.
pub fn sample_pdip(rng: &mut RandomSource, n_blocks: usize) -> Result<IntervalPartition> {
    if n_blocks == 0 {
        return param("PDIP needs at least one stick");
    }
    let mut sticks = Vec::with_capacity(n_blocks);
    let mut rest = 1.0;
    for n in 1..=n_blocks {
        let w = beta(0.5, 0.5 + 0.5 * n as f64, rng);
        let stick = rest * w;
        if stick > 0.0 {
            sticks.push(stick);
        }
        rest *= 1.0 - w;
    }
    sticks.shuffle(rng);
    let stored: f64 = sticks.iter().sum();
    let dust = 1.0 - stored;
    let resolution = dust.max(0.0);
    let slot = rng.random_range(0..=sticks.len());
    let mut b = Builder::with_capacity(sticks.len());
    for (i, &w) in sticks.iter().enumerate() {
        if i == slot {
            b.dust(dust, resolution);
        }
        b.block(w);
    }
    if slot == sticks.len() {
        b.dust(dust, resolution);
    }
    let mut ip = b.finish();
    // keep the total exactly one despite summation order
    ip.mass = stored + dust.max(0.0);
    Ok(ip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::sample_gamma;

    fn inverse_squares(n: usize) -> IntervalPartition {
        let blocks: Vec<f64> = (1..=n).map(|i| 1.0 / (i as f64 * i as f64)).collect();
        // the unstored tail sum_{i>n} 1/i^2 is about 1/n
        IntervalPartition::with_dust(blocks, 1.0 / n as f64, 1e-12).unwrap()
    }

    fn mean(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn concat_examples() {
        let e = IntervalPartition::empty();
        assert!(e.concat(&e).is_empty());
        let a = IntervalPartition::new(vec![2.0]).unwrap();
        let b = IntervalPartition::new(vec![3.0, 1.0]).unwrap();
        let ab = concat(&a, &b);
        assert_eq!(ab.blocks(), &[2.0, 3.0, 1.0]);
        assert_eq!(ab.mass(), 6.0);
        assert!(IntervalPartition::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn dust_keeps_its_position() {
        let mut b = Builder::default();
        b.block(1.0);
        b.dust(0.5, 0.01);
        b.block(2.0);
        let ip = b.finish();
        let pieces: Vec<Piece> = ip.pieces().collect();
        assert_eq!(
            pieces,
            vec![Piece::Block(1.0), Piece::Dust(0.5), Piece::Block(2.0)]
        );
        let (l, w, r) = ip.split_at_block(1).unwrap();
        assert_eq!((l.mass(), w, r.mass()), (1.5, 2.0, 0.0));
        let joined = ip.concat(&ip);
        assert_eq!(
            joined.dust(),
            &[
                Dust {
                    before: 1,
                    mass: 0.5
                },
                Dust {
                    before: 3,
                    mass: 0.5
                }
            ]
        );
        let resolved = ip.resolve_dust(0, 0.2, 0.5);
        assert_eq!(resolved.blocks(), &[1.0, 0.2, 2.0]);
        assert!((resolved.mass() - ip.mass()).abs() < 1e-15);
    }

    #[test]
    fn scaling() {
        let a = IntervalPartition::new(vec![0.5, 0.25]).unwrap();
        assert_eq!(scale(&a, 1.0).unwrap(), a);
        assert_eq!(a.scale(3.0).unwrap().mass(), 3.0 * a.mass());
        assert!(a.scale(0.0).is_err());
    }

    #[test]
    fn diversity_of_inverse_squares() {
        let a = inverse_squares(1_000_000);
        let d = a.diversity(Prefix::End, &a.default_schedule()).unwrap();
        assert!((d.value - PI.sqrt()).abs() < 0.05 * PI.sqrt(), "{d:?}");
        let a4 = a.scale(4.0).unwrap();
        let d4 = a4.diversity(Prefix::End, &a4.default_schedule()).unwrap();
        assert!(
            (d4.value - 2.0 * d.value).abs() <= 2.0 * (d.error + d4.error) + 1e-9,
            "{d:?} {d4:?}"
        );
    }

    #[test]
    fn diversity_edge_cases() {
        let finite = IntervalPartition::new(vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(finite.total_diversity(), 0.0);
        let a = inverse_squares(1000);
        assert_eq!(a.diversity(Prefix::Blocks(0), &[0.1]).unwrap().value, 0.0);
        assert!(matches!(
            a.diversity(Prefix::End, &[1e-3, 1e-13]),
            Err(Error::Resolution(_))
        ));
        assert!(a.diversity(Prefix::End, &[]).is_err());
        assert!(a.diversity(Prefix::End, &[1e-3, 1e-2]).is_err());
    }

    /// `∫_ε^∞ x ν(dx)` by the midpoint rule in `v = ln x`.
    fn large_jump_mean(eps: f64, y: f64) -> f64 {
        let (lo, hi) = (eps.ln(), (60.0 * y).ln());
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let x = (lo + (i as f64 + 0.5) * h).exp();
                x * x.powf(-1.5) * (-x / (2.0 * y)).exp() / (2.0 * PI.sqrt()) * x * h
            })
            .sum()
    }

    #[test]
    fn ip_rs_mass() {
        let (y, eps) = (0.7, 1e-4);
        let mut rng = RandomSource::new(11, 0);
        let n = 100_000;
        let (mut blocks, mut total) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let ip = build_ip_rs(y, eps, &mut rng).unwrap();
            blocks.push(ip.mass() - ip.dust_mass());
            total.push(ip.mass());
            assert!(ip.blocks().iter().all(|&w| w > eps));
        }
        let target = (2.0 * y).sqrt() * large_jump_mean(eps, y);
        let (m, _) = mean(&blocks);
        assert!((m / target - 1.0).abs() < 0.02, "{m} vs {target}");
        // all jumps together: E[S] ∫ x ν = sqrt(2y) sqrt(2y) / 2 = y
        let (m, se) = mean(&total);
        assert!((m - y).abs() < 4.0 * se, "{m} vs {y}");
        assert!(build_ip_rs(1.0, 50.0, &mut rng)
            .unwrap()
            .blocks()
            .is_empty());
        assert!(build_ip_rs(0.0, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn type1_absorption_probability_and_mean() {
        // BESQ(0) from x is absorbed by y with probability exp(-x/2y) and is a martingale
        let state = Type1State::new(0.3, IntervalPartition::new(vec![0.2, 0.1]).unwrap()).unwrap();
        let y = 0.4;
        let mut rng = RandomSource::new(3, 0);
        let n = 40_000;
        let mut dead = 0;
        let mut masses = Vec::with_capacity(n);
        for _ in 0..n {
            let out = type1_transition(&state, y, &mut rng, 1e-4).unwrap();
            if out.is_degenerate() {
                dead += 1;
            } else {
                assert!(out.top > 0.0);
            }
            masses.push(out.mass());
        }
        let p = (-state.mass() / (2.0 * y)).exp();
        let freq = dead as f64 / n as f64;
        assert!(
            (freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(),
            "{freq} vs {p}"
        );
        let (m, se) = mean(&masses);
        assert!((m - state.mass()).abs() < 4.0 * se, "{m}");
        let empty = type1_transition(&Type1State::default(), y, &mut rng, 1e-4).unwrap();
        assert!(empty.is_degenerate());
    }

    #[test]
    fn conditioned_type1_kernel() {
        let gamma = IntervalPartition::with_dust(vec![0.05, 0.4], 0.02, 1e-4).unwrap();
        let y = 0.6;
        let mut rng = RandomSource::new(4, 0);
        let n = 40_000;
        let masses: Vec<f64> = (0..n)
            .map(|_| {
                let out = type1_ip_surviving(&gamma, y, 1e-4, &mut rng);
                assert!(!out.blocks().is_empty());
                assert!(out.dust().first().is_none_or(|d| d.before > 0));
                out.mass()
            })
            .collect();
        let x = gamma.mass();
        let target = x / -(-x / (2.0 * y)).exp_m1();
        let (m, se) = mean(&masses);
        assert!((m - target).abs() < 4.0 * se, "{m} vs {target}");
    }

    #[test]
    fn type0_mean_and_survivor_count() {
        // BESQ(1) mean grows linearly; each block survives with probability 1 - exp(-w/2y)
        let alpha = IntervalPartition::new(vec![0.1, 0.3, 0.05]).unwrap();
        let y = 0.25;
        let mut rng = RandomSource::new(8, 0);
        let n = 40_000;
        let masses: Vec<f64> = (0..n)
            .map(|_| type0_transition(&alpha, y, &mut rng, 1e-4).unwrap().mass())
            .collect();
        let (m, se) = mean(&masses);
        assert!((m - (alpha.mass() + y)).abs() < 4.0 * se, "{m}");
        let expected: f64 = alpha
            .blocks()
            .iter()
            .map(|w| -(-w / (2.0 * y)).exp_m1())
            .sum();
        let mut count = 0u64;
        for _ in 0..n {
            for &w in alpha.blocks() {
                count += draw_block_transition(w, y, 1e-4, &mut rng)
                    .unwrap()
                    .survived as u64;
            }
        }
        let freq = count as f64 / n as f64;
        assert!((freq - expected).abs() < 0.02, "{freq} vs {expected}");
    }

    #[test]
    fn block_draw_fields_follow_survival() {
        let mut rng = RandomSource::new(9, 0);
        for _ in 0..200 {
            let d = draw_block_transition(0.2, 0.3, 1e-3, &mut rng).unwrap();
            assert_eq!(d.survived, d.new_top.is_some());
            assert_eq!(d.survived, d.tail.is_some());
        }
    }

    #[test]
    fn type2_survival_from_pseudo_stationary_start() {
        // each type-2 compound survives to y with probability (2 y γ + 1)^-2
        let (gamma_rate, y) = (1.0, 0.5);
        let mut rng = RandomSource::new(21, 0);
        let n = 4000;
        let mut alive = 0;
        for _ in 0..n {
            let m = sample_gamma(1.5, gamma_rate, &mut rng).unwrap();
            let a = crate::primitives::sample_dirichlet(&[0.5; 3], &mut rng).unwrap();
            let beta = sample_pdip(&mut rng, 300).unwrap().scale(m * a[2]).unwrap();
            let state = Type2State::new(m * a[0], m * a[1], beta).unwrap();
            let (_, degen) = type2_evolve(&state, y, y, &mut rng, 1e-4).unwrap();
            alive += degen.is_none() as usize;
        }
        let p = (2.0 * y * gamma_rate + 1.0).powi(-2);
        let freq = alive as f64 / n as f64;
        assert!(
            (freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(),
            "{freq} vs {p}"
        );
    }

    #[test]
    fn type2_rejects_degenerate_input() {
        let mut rng = RandomSource::new(1, 0);
        let state = Type2State {
            top1: 0.0,
            top2: 1.0,
            partition: IntervalPartition::empty(),
            clock_label: 2,
            clock_time: 0.0,
        };
        assert!(matches!(
            type2_evolve(&state, 1.0, 0.1, &mut rng, 1e-4),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn pdip_mass_and_size_biased_pick() {
        let mut rng = RandomSource::new(2, 0);
        let ip = sample_pdip(&mut rng, 10_000).unwrap();
        assert_eq!(ip.mass(), 1.0);
        assert_eq!(ip.len() + ip.dust().len(), ip.pieces().count());
        // E[Σ w²] is the mean of a size-biased pick, Beta(1/2, 1) for PD(1/2, 1/2)
        let n = 20_000;
        let sums: Vec<f64> = (0..n)
            .map(|_| {
                sample_pdip(&mut rng, 500)
                    .unwrap()
                    .blocks()
                    .iter()
                    .map(|w| w * w)
                    .sum()
            })
            .collect();
        let (m, se) = mean(&sums);
        assert!((m - 1.0 / 3.0).abs() < 4.0 * se, "{m}");
    }

    /// Ranked PD(1/2, 0) from normalised stable jumps `Γ_i^{-2}`, then one
    /// size-biased deletion gives PD(1/2, 1/2).
    fn oracle_largest(rng: &mut RandomSource, terms: usize) -> f64 {
        let mut g = 0.0;
        let jumps: Vec<f64> = (0..terms)
            .map(|_| {
                g += exponential(1.0, rng);
                g.powi(-2)
            })
            .collect();
        let total: f64 = jumps.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut removed = 0;
        for (i, &j) in jumps.iter().enumerate() {
            removed = i;
            if u < j {
                break;
            }
            u -= j;
        }
        let rest = total - jumps[removed];
        let top = if removed == 0 { jumps[1] } else { jumps[0] };
        top / rest
    }

    #[test]
    fn pdip_largest_block_matches_stable_oracle() {
        let mut rng = RandomSource::new(6, 0);
        let n = 60_000;
        let ours: Vec<f64> = (0..n)
            .map(|_| {
                sample_pdip(&mut rng, 400)
                    .unwrap()
                    .blocks()
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect();
        let oracle: Vec<f64> = (0..n).map(|_| oracle_largest(&mut rng, 2000)).collect();
        let (a, sa) = mean(&ours);
        let (b, sb) = mean(&oracle);
        assert!(
            (a - b).abs() < 0.01 * b && (a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(),
            "{a} vs {b}"
        );
    }
}
