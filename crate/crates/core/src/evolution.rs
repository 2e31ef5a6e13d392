//! Killed, non-resampling and resampling k-tree evolutions, the Brownian
//! reduced k-tree sampler and the resampling kernel.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compound::{Compound, Event, Kind};
use crate::error::{ensure, Error, Result};
use crate::partition::{sample_pdip, IntervalPartition};
use crate::primitives::sample_dirichlet;
use crate::rng::RandomSource;
use crate::shape::{sample_uniform_shape, Edge};
use crate::tree::{insert_label, swap_and_reduce_tree, BlockRef, KTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Longest time between two stops of the engine.
    pub grid_step: f64,
    /// Read `grid_step` as a multiple of the current total mass.
    pub relative_grid: bool,
    /// Jump truncation as a multiple of the current total mass.
    pub jump_truncation: f64,
    /// Stop once the total mass drops below this multiple of the initial mass.
    pub mass_floor: f64,
    /// Times at which the full state is kept.
    pub record_times: Vec<f64>,
    /// Values of `u = ∫ dy / ‖T^y‖` at which the full state is kept.
    pub record_u_times: Vec<f64>,
    /// Sticks per PDIP in the Brownian 2-trees used by the resampling kernel.
    pub pdip_blocks: usize,
    /// Keep a summary row at every stop.
    pub record_path: bool,
    /// Stop once `∫ dy / ‖T^y‖` reaches this value.
    pub u_horizon: Option<f64>,
    /// Give up after this many stops.
    pub max_stops: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-2,
            relative_grid: false,
            jump_truncation: 1e-4,
            mass_floor: 1e-4,
            record_times: Vec::new(),
            record_u_times: Vec::new(),
            pdip_blocks: 1000,
            record_path: false,
            u_horizon: None,
            max_stops: 50_000_000,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.grid_step > 0.0, || {
            format!("grid step {}", self.grid_step)
        })?;
        ensure(
            self.jump_truncation > 0.0 && self.jump_truncation < 1.0,
            || format!("jump truncation {}", self.jump_truncation),
        )?;
        ensure(self.mass_floor >= 0.0 && self.mass_floor < 1.0, || {
            format!("mass floor {}", self.mass_floor)
        })?;
        ensure(self.pdip_blocks >= 1, || {
            "pdip_blocks must be positive".into()
        })?;
        ensure(self.record_times.windows(2).all(|w| w[0] <= w[1]), || {
            "record times must be sorted".into()
        })?;
        ensure(self.record_u_times.windows(2).all(|w| w[0] <= w[1]), || {
            "record u times must be sorted".into()
        })?;
        ensure(
            self.record_times
                .iter()
                .chain(&self.record_u_times)
                .all(|&t| t >= 0.0),
            || "record times must be nonnegative".into(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegenerationEvent {
    pub time: f64,
    pub caused_by: u32,
    pub dropped: u32,
    /// Block the dropped label was reinserted into (resampling only).
    pub resample_target: Option<BlockRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Horizon,
    Degenerated,
    MassFloor,
    /// Every label is gone (non-resampling, or a 1-tree).
    Extinct,
    UHorizon,
}

/// Masses at one stop of the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub t: f64,
    /// `∫_0^t dy / ‖T^y‖` by the trapezoid rule over stops.
    pub u: f64,
    pub mass: f64,
    pub tops: Vec<(u32, f64)>,
    pub edges: Vec<(Edge, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_mass: f64,
    /// Absolute mass floor of the run.
    pub mass_floor: f64,
    /// States at the requested record times before the end of the run.
    pub states: Vec<(f64, KTree)>,
    /// States at the requested values of `u` before the end of the run.
    pub u_states: Vec<(f64, KTree)>,
    pub events: Vec<DegenerationEvent>,
    pub terminal: Terminal,
    /// Time the run stopped.
    pub end_time: f64,
    /// State at `end_time` (the left limit for a killed run).
    pub final_state: KTree,
    /// First time the total mass was below the floor, interpolated between stops.
    pub floor_time: Option<f64>,
    /// First time a top or an edge partition mass vanished.
    pub first_vanishing: Option<f64>,
    /// `first_vanishing` on the `u` clock.
    pub first_vanishing_u: Option<f64>,
    pub u_end: f64,
    pub path: Vec<PathRow>,
}

impl Trajectory {
    /// Total mass at `end_time`.
    pub fn final_mass(&self) -> f64 {
        self.final_state.mass()
    }
}

/// One k-tree split into independently evolving compounds.
struct Killed {
    labels: Vec<u32>,
    compounds: Vec<Compound>,
}

impl Killed {
    fn new(tree: &KTree) -> Result<Self> {
        let shape = tree.shape();
        let mut compounds = Vec::new();
        if tree.k() == 1 {
            let i = tree.labels()[0];
            compounds.push(Compound::leaf(None, i, tree.tops()[&i]));
        }
        for e in shape.edges() {
            let leaves: Vec<u32> = shape
                .children(e)
                .into_iter()
                .filter(|c| c.len() == 1)
                .map(|c| c[0])
                .collect();
            let beta = tree.partition(e).cloned().unwrap_or_default();
            let c = match leaves.as_slice() {
                [] => Compound::type0(Some(e.clone()), beta),
                [i] => Compound::type1(Some(e.clone()), *i, tree.tops()[i], beta),
                [i, j] => Compound::type2(
                    Some(e.clone()),
                    [*i, *j],
                    [tree.tops()[i], tree.tops()[j]],
                    beta,
                ),
                _ => unreachable!("binary shape"),
            };
            compounds.push(c);
        }
        let killed = Self {
            labels: tree.labels().to_vec(),
            compounds,
        };
        let n2 = killed
            .compounds
            .iter()
            .filter(|c| c.kind == Kind::Type2)
            .count();
        let n0 = killed
            .compounds
            .iter()
            .filter(|c| c.kind == Kind::Type0)
            .count();
        debug_assert!(tree.k() < 2 || n2 == n0 + 1);
        Ok(killed)
    }

    fn mass(&self) -> f64 {
        self.compounds.iter().map(|c| c.mass()).sum()
    }

    fn to_tree(&self, template: &KTree) -> KTree {
        let mut tops = BTreeMap::new();
        let mut partitions = BTreeMap::new();
        for c in &self.compounds {
            for (s, &label) in c.labels.iter().enumerate() {
                tops.insert(label, c.tops[s]);
            }
            if let Some(e) = &c.edge {
                partitions.insert(e.clone(), c.partition.clone());
            }
        }
        debug_assert_eq!(tops.keys().copied().collect::<Vec<_>>(), self.labels);
        KTree::from_parts_unchecked(template.shape().clone(), tops, partitions)
    }

    fn row(&self, t: f64, u: f64) -> PathRow {
        let mut tops: Vec<(u32, f64)> = self
            .compounds
            .iter()
            .flat_map(|c| c.labels.iter().copied().zip(c.tops))
            .collect();
        tops.sort_by_key(|&(i, _)| i);
        let edges = self
            .compounds
            .iter()
            .filter_map(|c| c.edge.as_ref().map(|e| (e.clone(), c.partition.mass())))
            .collect();
        PathRow {
            t,
            u,
            mass: self.mass(),
            tops,
            edges,
        }
    }
}

enum SegmentEnd {
    /// Carries the label whose compound degenerated.
    Degenerated(u32),
    Horizon,
    MassFloor,
    UHorizon,
}

/// Mutable bookkeeping shared by the segments of one run.
struct Runner<'a> {
    cfg: &'a EvolutionConfig,
    horizon: f64,
    floor: f64,
    t: f64,
    u: f64,
    stops: usize,
    next_record: usize,
    next_u_record: usize,
    traj: Trajectory,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a EvolutionConfig, tree: &KTree, horizon: f64) -> Result<Self> {
        cfg.validate()?;
        ensure(horizon >= 0.0, || format!("horizon {horizon}"))?;
        let m = tree.mass();
        Ok(Self {
            cfg,
            horizon,
            floor: cfg.mass_floor * m,
            t: 0.0,
            u: 0.0,
            stops: 0,
            next_record: 0,
            next_u_record: 0,
            traj: Trajectory {
                initial_mass: m,
                mass_floor: cfg.mass_floor * m,
                states: Vec::new(),
                u_states: Vec::new(),
                events: Vec::new(),
                terminal: Terminal::Horizon,
                end_time: 0.0,
                final_state: tree.clone(),
                floor_time: None,
                first_vanishing: None,
                first_vanishing_u: None,
                u_end: 0.0,
                path: Vec::new(),
            },
        })
    }

    fn record_due(&mut self, tree: impl Fn() -> KTree) {
        while self.next_record < self.cfg.record_times.len()
            && self.cfg.record_times[self.next_record] <= self.t
        {
            self.traj
                .states
                .push((self.cfg.record_times[self.next_record], tree()));
            self.next_record += 1;
        }
        while self.next_u_record < self.cfg.record_u_times.len()
            && u_reached(self.u, self.cfg.record_u_times[self.next_u_record])
        {
            self.traj
                .u_states
                .push((self.cfg.record_u_times[self.next_u_record], tree()));
            self.next_u_record += 1;
        }
    }

    /// Run one killed segment from the current time.
    fn segment(
        &mut self,
        killed: &mut Killed,
        template: &KTree,
        rng: &mut RandomSource,
    ) -> Result<SegmentEnd> {
        if self.cfg.record_path && self.traj.path.is_empty() {
            self.traj.path.push(killed.row(self.t, self.u));
        }
        self.record_due(|| killed.to_tree(template));
        loop {
            let m0 = killed.mass();
            if m0 < self.floor || m0 == 0.0 {
                return Ok(SegmentEnd::MassFloor);
            }
            if self.t >= self.horizon {
                return Ok(SegmentEnd::Horizon);
            }
            if self.cfg.u_horizon.is_some_and(|uh| u_reached(self.u, uh)) {
                return Ok(SegmentEnd::UHorizon);
            }
            self.stops += 1;
            if self.stops > self.cfg.max_stops {
                return Err(Error::State(format!(
                    "gave up after {} stops at time {}",
                    self.cfg.max_stops, self.t
                )));
            }
            let grid = if self.cfg.relative_grid {
                self.cfg.grid_step * m0
            } else {
                self.cfg.grid_step
            };
            let mut cap = (self.t + grid).min(self.horizon);
            if let Some(&r) = self.cfg.record_times.get(self.next_record) {
                cap = cap.min(r.max(self.t));
            }
            // the u clock is only landed on approximately; record_due accepts a small overshoot
            let u_target = self.cfg.record_u_times.get(self.next_u_record).copied();
            for uh in self.cfg.u_horizon.into_iter().chain(u_target) {
                cap = cap.min(self.t + (uh - self.u).max(0.0) * m0);
            }
            let mut dt = cap - self.t;
            let mut hit: Option<(usize, Event)> = None;
            for (n, c) in killed.compounds.iter().enumerate() {
                if let Some((d, e)) = c.propose(rng) {
                    if d < dt {
                        dt = d;
                        hit = Some((n, e));
                    }
                }
            }
            if dt <= 0.0 {
                // a record time equal to the current time; nothing to advance
                self.record_due(|| killed.to_tree(template));
                continue;
            }
            // a block of mass m moves by about dt over the step, so truncate relative to both
            let eps = self.cfg.jump_truncation * m0.max(dt);
            let mut vanished = false;
            for (n, c) in killed.compounds.iter_mut().enumerate() {
                let event = hit.filter(|(h, _)| *h == n).map(|(_, e)| e);
                vanished |= c.advance(dt, event, eps, rng);
            }
            let m1 = killed.mass();
            let t0 = self.t;
            self.t = if hit.is_none() { cap } else { self.t + dt };
            self.u += 0.5 * dt * (1.0 / m0 + if m1 > 0.0 { 1.0 / m1 } else { 1.0 / m0 });
            if vanished && self.traj.first_vanishing.is_none() {
                self.traj.first_vanishing = Some(self.t);
                self.traj.first_vanishing_u = Some(self.u);
            }
            if m1 < self.floor && self.traj.floor_time.is_none() {
                let frac = ((m0 - self.floor) / (m0 - m1)).clamp(0.0, 1.0);
                self.traj.floor_time = Some(t0 + frac * (self.t - t0));
            }
            if self.cfg.record_path {
                self.traj.path.push(killed.row(self.t, self.u));
            }
            if let Some((n, _)) = hit {
                if let Some(label) = killed.compounds[n].degenerate_label() {
                    return Ok(SegmentEnd::Degenerated(label));
                }
            }
            self.record_due(|| killed.to_tree(template));
        }
    }

    fn finish(mut self, terminal: Terminal, state: KTree) -> Trajectory {
        self.traj.terminal = terminal;
        self.traj.end_time = self.t;
        self.traj.u_end = self.u;
        self.traj.final_state = state;
        self.traj
    }
}

/// `u` has reached `target` up to rounding of the trapezoid steps.
fn u_reached(u: f64, target: f64) -> bool {
    u >= target - 1e-9 * target.max(1e-300)
}

fn check_initial(tree: &KTree) -> Result<()> {
    tree.validate()?;
    if tree.k() == 0 || tree.is_zero() {
        return Err(Error::State("evolution started from the zero tree".into()));
    }
    if let Some(i) = tree.degenerate_label()? {
        return Err(Error::State(format!(
            "label {i} is degenerate in the initial state"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Killed,
    NonResampling,
    Resampling,
}

fn run(
    tree: &KTree,
    cfg: &EvolutionConfig,
    horizon: f64,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    check_initial(tree)?;
    let mut runner = Runner::new(cfg, tree, horizon)?;
    let mut current = tree.clone();
    loop {
        let mut killed = Killed::new(&current)?;
        let end = runner.segment(&mut killed, &current, rng)?;
        let state = killed.to_tree(&current);
        let terminal = match end {
            SegmentEnd::Horizon => Terminal::Horizon,
            SegmentEnd::MassFloor => Terminal::MassFloor,
            SegmentEnd::UHorizon => Terminal::UHorizon,
            SegmentEnd::Degenerated(label) => {
                if mode == Mode::Killed {
                    let dropped = if state.k() >= 2 {
                        state.shape().dropped_label(label)?
                    } else {
                        label
                    };
                    runner.traj.events.push(DegenerationEvent {
                        time: runner.t,
                        caused_by: label,
                        dropped,
                        resample_target: None,
                    });
                    return Ok(runner.finish(Terminal::Degenerated, state));
                }
                let (reduced, caused_by, dropped) = swap_and_reduce_tree(&state)?;
                if caused_by != label {
                    return Err(Error::Invariant(format!(
                        "label {label} degenerated but {caused_by} was reduced"
                    )));
                }
                if reduced.k() == 0 {
                    runner.traj.events.push(DegenerationEvent {
                        time: runner.t,
                        caused_by,
                        dropped,
                        resample_target: None,
                    });
                    runner.record_due(KTree::zero);
                    return Ok(runner.finish(Terminal::Extinct, KTree::zero()));
                }
                let (next, target) = if mode == Mode::Resampling {
                    let (next, target) =
                        resample_with_target(&reduced, dropped, cfg.pdip_blocks, rng)?;
                    (next, Some(target))
                } else {
                    (reduced, None)
                };
                runner.traj.events.push(DegenerationEvent {
                    time: runner.t,
                    caused_by,
                    dropped,
                    resample_target: target,
                });
                current = next;
                continue;
            }
        };
        return Ok(runner.finish(terminal, state));
    }
}

/// Killed A-tree evolution: stops at the first degeneration (`terminal = Degenerated`,
/// `final_state` the left limit) or at the horizon.
pub fn run_killed(
    tree: &KTree,
    cfg: &EvolutionConfig,
    horizon: f64,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    run(tree, cfg, horizon, Mode::Killed, rng)
}

/// Non-resampling evolution: at each degeneration apply swap-and-reduce; ends
/// when the last label dies.
pub fn run_nonresampling(
    tree: &KTree,
    cfg: &EvolutionConfig,
    horizon: f64,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    run(tree, cfg, horizon, Mode::NonResampling, rng)
}

/// Resampling evolution: swap-and-reduce followed by the resampling kernel.
pub fn run_resampling(
    tree: &KTree,
    cfg: &EvolutionConfig,
    horizon: f64,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    run(tree, cfg, horizon, Mode::Resampling, rng)
}

/// Brownian reduced k-tree of total `mass`: uniform shape, Dirichlet(1/2, ...)
/// masses on the 2k - 1 components, independent scaled PDIP(1/2, 1/2) on edges.
pub fn sample_brownian_reduced_ktree(
    k: usize,
    mass: f64,
    pdip_blocks: usize,
    rng: &mut RandomSource,
) -> Result<KTree> {
    ensure(k >= 1, || format!("k = {k}"))?;
    ensure(mass > 0.0 && mass.is_finite(), || format!("mass {mass}"))?;
    if k == 1 {
        return KTree::single(1, mass);
    }
    let labels: Vec<u32> = (1..=k as u32).collect();
    let shape = sample_uniform_shape(&labels, rng)?;
    let m = sample_dirichlet(&vec![0.5; 2 * k - 1], rng)?;
    let tops: BTreeMap<u32, f64> = labels
        .iter()
        .map(|&i| (i, mass * m[i as usize - 1]))
        .collect();
    let mut partitions = BTreeMap::new();
    for (n, e) in shape.edges().iter().enumerate() {
        let w = mass * m[k + n];
        let beta = if w > 0.0 {
            sample_pdip(rng, pdip_blocks)?.scale(w)?
        } else {
            IntervalPartition::empty()
        };
        partitions.insert(e.clone(), beta);
    }
    KTree::new(shape, tops, partitions)
}

/// `Λ_{j, A}`: insert `j` into a block picked with probability proportional to its mass.
pub fn resampling_kernel(
    tree: &KTree,
    j: u32,
    pdip_blocks: usize,
    rng: &mut RandomSource,
) -> Result<KTree> {
    resample_with_target(tree, j, pdip_blocks, rng).map(|(t, _)| t)
}

fn resample_with_target(
    tree: &KTree,
    j: u32,
    pdip_blocks: usize,
    rng: &mut RandomSource,
) -> Result<(KTree, BlockRef)> {
    let total = tree.mass();
    if !(total > 0.0) {
        return Err(Error::State("resampling a tree of zero mass".into()));
    }
    if tree.labels().contains(&j) {
        return Err(Error::Parameter(format!("label {j} already present")));
    }
    let mut u = rng.random::<f64>() * total;
    // tops, then each edge partition piece by piece; unresolved dust is carved
    // into a block of the resolution scale when it is picked
    for (&i, &x) in tree.tops() {
        if u < x {
            let two = sample_brownian_reduced_ktree(2, 1.0, pdip_blocks, rng)?;
            let target = BlockRef::Leaf(i);
            return Ok((insert_label(tree, &target, j, Some(&two))?, target));
        }
        u -= x;
    }
    let mut last = None;
    for (e, p) in tree.partitions() {
        for (index, &w) in p.blocks().iter().enumerate() {
            if u < w {
                let target = BlockRef::Internal {
                    edge: e.clone(),
                    index,
                };
                return Ok((insert_label(tree, &target, j, None)?, target));
            }
            u -= w;
            last = Some((e.clone(), index));
        }
        for (k, d) in p.dust().iter().enumerate() {
            if u < d.mass {
                let grain = p.resolution().min(d.mass);
                let w = grain * rng.random::<f64>().max(f64::MIN_POSITIVE);
                let resolved = p.resolve_dust(k, w, rng.random::<f64>());
                let mut partitions = tree.partitions().clone();
                partitions.insert(e.clone(), resolved);
                let carved = KTree::from_parts_unchecked(
                    tree.shape().clone(),
                    tree.tops().clone(),
                    partitions,
                );
                let target = BlockRef::Internal {
                    edge: e.clone(),
                    index: d.before,
                };
                return Ok((insert_label(&carved, &target, j, None)?, target));
            }
            u -= d.mass;
        }
    }
    // rounding left u just past the total: use the last block seen
    match last {
        Some((edge, index)) => {
            let target = BlockRef::Internal { edge, index };
            Ok((insert_label(tree, &target, j, None)?, target))
        }
        None => {
            let (&i, _) = tree
                .tops()
                .iter()
                .rev()
                .find(|(_, &x)| x > 0.0)
                .expect("positive mass");
            let two = sample_brownian_reduced_ktree(2, 1.0, pdip_blocks, rng)?;
            let target = BlockRef::Leaf(i);
            Ok((insert_label(tree, &target, j, Some(&two))?, target))
        }
    }
}

/// Brownian reduced k-tree built by iterating resampling kernels from a 1-tree.
pub fn sample_by_resampling(
    k: usize,
    mass: f64,
    pdip_blocks: usize,
    rng: &mut RandomSource,
) -> Result<KTree> {
    let mut t = KTree::single(1, mass)?;
    for j in 2..=k as u32 {
        t = resampling_kernel(&t, j, pdip_blocks, rng)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::sample_gamma;

    fn cfg() -> EvolutionConfig {
        EvolutionConfig {
            grid_step: 10.0,
            pdip_blocks: 200,
            jump_truncation: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn brownian_tree_is_valid() {
        let mut rng = RandomSource::new(1, 0);
        for k in 1..6 {
            let t = sample_brownian_reduced_ktree(k, 2.0, 50, &mut rng).unwrap();
            t.validate().unwrap();
            assert_eq!(t.k(), k);
            assert!((t.mass() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn killed_survival_from_gamma_mass() {
        // mass ~ Gamma(k - 1/2, 1): P(no degeneration by y) = (2y + 1)^(-k)
        let (k, y, n) = (3usize, 0.5, 3000);
        let mut rng = RandomSource::new(2, 0);
        let mut alive = 0;
        for _ in 0..n {
            let m = sample_gamma(k as f64 - 0.5, 1.0, &mut rng).unwrap();
            let t = sample_brownian_reduced_ktree(k, m, 200, &mut rng).unwrap();
            let tr = run_killed(&t, &cfg(), y, &mut rng).unwrap();
            if tr.terminal == Terminal::Horizon {
                alive += 1;
            }
        }
        let p = alive as f64 / n as f64;
        let want = 2f64.powi(-(k as i32));
        let sd = (want * (1.0 - want) / n as f64).sqrt();
        assert!((p - want).abs() < 4.0 * sd, "{p} vs {want}");
    }

    #[test]
    fn first_degenerating_label_is_uniform() {
        let (k, n) = (3usize, 3000);
        let mut rng = RandomSource::new(3, 0);
        let mut counts = [0usize; 3];
        let mut c = cfg();
        c.mass_floor = 0.0;
        for _ in 0..n {
            let m = sample_gamma(k as f64 - 0.5, 1.0, &mut rng).unwrap();
            let t = sample_brownian_reduced_ktree(k, m, 200, &mut rng).unwrap();
            let tr = run_nonresampling(&t, &c, 1e9, &mut rng).unwrap();
            counts[tr.events[0].caused_by as usize - 1] += 1;
        }
        for &x in &counts {
            let p = x as f64 / n as f64;
            assert!(
                (p - 1.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / n as f64).sqrt(),
                "{counts:?}"
            );
        }
    }

    #[test]
    fn nonresampling_drops_labels_until_extinct() {
        let mut rng = RandomSource::new(4, 0);
        let mut c = cfg();
        c.mass_floor = 0.0;
        for _ in 0..50 {
            let t = sample_brownian_reduced_ktree(4, 1.0, 200, &mut rng).unwrap();
            let tr = run_nonresampling(&t, &c, 1e9, &mut rng).unwrap();
            assert_eq!(tr.terminal, Terminal::Extinct);
            assert_eq!(tr.events.len(), 4);
            assert!(tr.events.windows(2).all(|w| w[0].time <= w[1].time));
        }
    }

    #[test]
    fn resampling_keeps_k_and_pseudo_stationary_top() {
        // at y = 0.25 from mass 1, conditional on survival, top 1 / ‖T‖ ~ Beta(1/2, 2)
        let (k, n) = (3usize, 1500);
        let mut rng = RandomSource::new(5, 0);
        let mut c = cfg();
        c.record_times = vec![0.25];
        let mut sum = 0.0;
        let mut got = 0;
        for _ in 0..n {
            let t = sample_brownian_reduced_ktree(k, 1.0, 200, &mut rng).unwrap();
            let tr = run_resampling(&t, &c, 0.25, &mut rng).unwrap();
            if let Some((_, s)) = tr.states.first() {
                if s.k() == k && s.mass() > 0.0 {
                    sum += s.top(1).unwrap() / s.mass();
                    got += 1;
                }
            }
        }
        let mean = sum / got as f64;
        // Beta(1/2, 2): mean 0.2, sd 0.2
        assert!(
            (mean - 0.2).abs() < 4.0 * 0.2 / (got as f64).sqrt(),
            "{mean} over {got}"
        );
    }

    #[test]
    fn resampling_mass_mean_decreases_linearly() {
        // the total mass is BESQ(-1) until degeneration; from mass 1 over y = 0.1,
        // E[‖T^y‖ 1{no kill}] is not linear, so check the unkilled resampling run
        let mut rng = RandomSource::new(6, 0);
        let c = cfg();
        let n = 2000;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_brownian_reduced_ktree(2, 1.0, 200, &mut rng).unwrap();
            let tr = run_resampling(&t, &c, 0.1, &mut rng).unwrap();
            sum += tr.final_mass();
        }
        // BESQ(-1) from 1 at 0.1 has mean 1 - 0.1 + E[(0.1 - ζ)^+] where the last term is negligible
        let mean = sum / n as f64;
        assert!(
            (mean - 0.9).abs() < 4.0 * (4.0 * 0.1 / n as f64).sqrt(),
            "{mean}"
        );
    }
}
