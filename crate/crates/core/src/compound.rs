//! Exact event-driven evolution of one edge compound (a leaf, or an internal
//! edge with its type-0/1/2 state).
//!
//! A top value of zero means the top is pending: it died and is waiting for
//! the partition to supply the next one. Between events every coordinate is
//! sampled from its kernel conditioned on no event occurring in the step.

use rand::Rng;

use crate::partition::{type0_ip, type1_ip_surviving, IntervalPartition, Type2State};
use crate::primitives::{besq_neg1_lifetime, exponential, sample_besq_neg1_given_survival};
use crate::rng::RandomSource;
use crate::shape::Edge;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Kind {
    /// A leaf block, a BESQ(-1) top with no partition.
    Leaf,
    Type0,
    Type1,
    Type2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Event {
    /// The top in the given slot hits zero.
    TopDeath(usize),
    /// The pending constituent dies with nothing left to re-establish it.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Compound {
    pub edge: Option<Edge>,
    pub kind: Kind,
    /// Labels owning the top slots: one for leaves and type-1, two for type-2.
    pub labels: Vec<u32>,
    pub tops: [f64; 2],
    pub partition: IntervalPartition,
    /// Slot of the top currently running as the independent clock (type-2).
    pub clock: usize,
    pub clock_time: f64,
}

/// Probability that a BESQ(1) bridge from `m0` to `m1` over `dt` visits 0.
pub(crate) fn bridge_hits_zero(m0: f64, m1: f64, dt: f64) -> f64 {
    if m0 <= 0.0 || m1 <= 0.0 {
        return 1.0;
    }
    let z = 2.0 * (m0 * m1).sqrt() / dt;
    if z > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl Compound {
    pub(crate) fn leaf(edge: Option<Edge>, label: u32, top: f64) -> Self {
        Self {
            edge,
            kind: Kind::Leaf,
            labels: vec![label],
            tops: [top, 0.0],
            partition: IntervalPartition::empty(),
            clock: 0,
            clock_time: 0.0,
        }
    }

    pub(crate) fn type0(edge: Option<Edge>, partition: IntervalPartition) -> Self {
        Self {
            edge,
            kind: Kind::Type0,
            labels: vec![],
            tops: [0.0; 2],
            partition,
            clock: 0,
            clock_time: 0.0,
        }
    }

    pub(crate) fn type1(
        edge: Option<Edge>,
        label: u32,
        top: f64,
        partition: IntervalPartition,
    ) -> Self {
        Self {
            edge,
            kind: Kind::Type1,
            labels: vec![label],
            tops: [top, 0.0],
            partition,
            clock: 0,
            clock_time: 0.0,
        }
    }

    pub(crate) fn type2(
        edge: Option<Edge>,
        labels: [u32; 2],
        tops: [f64; 2],
        partition: IntervalPartition,
    ) -> Self {
        // a pending top forces the other one to be the clock
        let clock = if tops[0] == 0.0 { 1 } else { 0 };
        Self {
            edge,
            kind: Kind::Type2,
            labels: labels.to_vec(),
            tops,
            partition,
            clock,
            clock_time: 0.0,
        }
    }

    pub(crate) fn mass(&self) -> f64 {
        self.tops[0] + self.tops[1] + self.partition.mass()
    }

    fn slots(&self) -> usize {
        match self.kind {
            Kind::Type0 => 0,
            Kind::Leaf | Kind::Type1 => 1,
            Kind::Type2 => 2,
        }
    }

    fn pending(&self) -> Option<usize> {
        match self.kind {
            Kind::Leaf | Kind::Type0 => None,
            _ => (0..self.slots()).find(|&s| self.tops[s] == 0.0),
        }
    }

    pub(crate) fn is_degenerate(&self) -> bool {
        match self.kind {
            Kind::Leaf => self.tops[0] == 0.0,
            Kind::Type0 => false,
            Kind::Type1 | Kind::Type2 => self.pending().is_some() && self.partition.mass() == 0.0,
        }
    }

    /// Label whose degeneration this compound represents, once degenerate.
    pub(crate) fn degenerate_label(&self) -> Option<u32> {
        if !self.is_degenerate() {
            return None;
        }
        match self.kind {
            Kind::Type0 => None,
            _ => self.pending().or(Some(0)).map(|s| self.labels[s]),
        }
    }

    /// Next candidate event, as a delay from now. Fresh draws at every stop are
    /// valid because each candidate is a first-event time of a Markov state.
    pub(crate) fn propose(&self, rng: &mut RandomSource) -> Option<(f64, Event)> {
        let mut best: Option<(f64, Event)> = None;
        let mut offer = |t: f64, e: Event| {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, e));
            }
        };
        let pending = self.pending();
        for s in 0..self.slots() {
            if self.tops[s] > 0.0 {
                offer(besq_neg1_lifetime(self.tops[s], rng), Event::TopDeath(s));
            }
        }
        if pending.is_some() && self.partition.mass() > 0.0 {
            // the constituent (0, α) survives y with probability 1 - exp(-‖α‖/2y)
            let e = exponential(1.0, rng);
            offer(self.partition.mass() / (2.0 * e), Event::Degenerate);
        }
        best
    }

    /// Move forward by `dt`, with `event` happening at the end of the step and
    /// nothing else happening before it. Returns true if some top or the
    /// partition mass touched zero during the step.
    pub(crate) fn advance(
        &mut self,
        dt: f64,
        event: Option<Event>,
        eps: f64,
        rng: &mut RandomSource,
    ) -> bool {
        let pending = self.pending();
        let mut vanished = matches!(event, Some(Event::TopDeath(_)));
        let mut restart_clock = false;
        match pending {
            None => {
                for s in 0..self.slots() {
                    if event == Some(Event::TopDeath(s)) {
                        self.tops[s] = 0.0;
                        if self.kind == Kind::Type2 && s == self.clock {
                            self.clock = 1 - s;
                            restart_clock = true;
                        }
                    } else if self.tops[s] > 0.0 {
                        self.tops[s] = sample_besq_neg1_given_survival(self.tops[s], dt, rng);
                    }
                }
                if self.kind != Kind::Leaf {
                    let m0 = self.partition.mass();
                    self.partition = type0_ip(&self.partition, dt, eps, rng);
                    let m1 = self.partition.mass();
                    if rng.random::<f64>() < bridge_hits_zero(m0, m1, dt) {
                        vanished = true;
                    }
                }
            }
            Some(p) => {
                let other = (self.kind == Kind::Type2).then_some(1 - p);
                match event {
                    Some(Event::Degenerate) => {
                        vanished = true;
                        self.partition = IntervalPartition::empty();
                        if let Some(q) = other {
                            self.tops[q] = sample_besq_neg1_given_survival(self.tops[q], dt, rng);
                        }
                    }
                    Some(Event::TopDeath(q)) => {
                        // the clock dies while p is pending: p is re-established
                        // and becomes the clock, q becomes pending
                        self.reestablish(p, dt, eps, rng);
                        self.tops[q] = 0.0;
                        self.clock = p;
                        restart_clock = true;
                    }
                    None => {
                        self.reestablish(p, dt, eps, rng);
                        if let Some(q) = other {
                            self.tops[q] = sample_besq_neg1_given_survival(self.tops[q], dt, rng);
                        }
                    }
                }
            }
        }
        self.clock_time = if restart_clock {
            0.0
        } else {
            self.clock_time + dt
        };
        vanished
    }

    fn reestablish(&mut self, p: usize, dt: f64, eps: f64, rng: &mut RandomSource) {
        let gamma = type1_ip_surviving(&self.partition, dt, eps, rng);
        let (top, rest) = gamma.split_leftmost();
        self.tops[p] = top;
        self.partition = rest;
    }

    pub(crate) fn to_type2(&self) -> Type2State {
        Type2State {
            top1: self.tops[0],
            top2: self.tops[1],
            partition: self.partition.clone(),
            clock_label: self.clock as u8 + 1,
            clock_time: self.clock_time,
        }
    }
}
