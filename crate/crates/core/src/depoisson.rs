//! De-Poissonization: the time change `u(y) = ∫_0^y dz / ‖T^z‖`, unit-mass
//! states on the `u` clock, and the Wright-Fisher coordinate slices.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::evolution::Trajectory;
use crate::shape::Edge;
use crate::tree::KTree;

/// Samples of `y ↦ u(y)` on the stops of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChange {
    pub grid_times: Vec<f64>,
    pub u_values: Vec<f64>,
}

impl TimeChange {
    /// Cumulative trapezoid of `1 / mass` over `(time, mass)` pairs.
    pub fn from_masses(points: &[(f64, f64)]) -> Result<Self> {
        ensure(points.len() >= 2, || "need at least two points".into())?;
        let mut grid_times = Vec::with_capacity(points.len());
        let mut u_values = Vec::with_capacity(points.len());
        let mut u = 0.0;
        for (n, &(t, m)) in points.iter().enumerate() {
            if !(m > 0.0) {
                return Err(Error::Domain(format!("zero mass at time {t}")));
            }
            if n > 0 {
                let (t0, m0) = points[n - 1];
                ensure(t > t0, || format!("times not increasing at {t}"))?;
                u += 0.5 * (t - t0) * (1.0 / m0 + 1.0 / m);
            }
            grid_times.push(t);
            u_values.push(u);
        }
        Ok(Self {
            grid_times,
            u_values,
        })
    }

    /// Uses the per-stop path of the run (`record_path`), cut where the mass
    /// drops below `10 × floor`.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let floor = 10.0 * traj.mass_floor;
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(traj.path.len());
        for row in &traj.path {
            if row.mass <= floor {
                break;
            }
            if points.last().is_some_and(|&(t, _)| row.t <= t) {
                continue;
            }
            points.push((row.t, row.mass));
        }
        Self::from_masses(&points)
    }

    pub fn u_at(&self, y: f64) -> Result<f64> {
        let n = self.grid_times.len();
        if !(y >= 0.0 && y <= self.grid_times[n - 1]) {
            return Err(Error::Domain(format!(
                "time {y} outside [0, {}]",
                self.grid_times[n - 1]
            )));
        }
        let i = self.grid_times.partition_point(|&t| t < y).max(1);
        let (t0, t1) = (self.grid_times[i - 1], self.grid_times[i]);
        let (u0, u1) = (self.u_values[i - 1], self.u_values[i]);
        Ok(u0 + (u1 - u0) * (y - t0) / (t1 - t0))
    }

    /// `ρ_u`, by linear interpolation between grid nodes.
    pub fn rho(&self, u: f64) -> Result<f64> {
        let n = self.u_values.len();
        if !(u >= 0.0 && u <= self.u_values[n - 1]) {
            return Err(Error::Domain(format!(
                "u = {u} outside [0, {}]",
                self.u_values[n - 1]
            )));
        }
        let i = self.u_values.partition_point(|&v| v < u).max(1);
        let (u0, u1) = (self.u_values[i - 1], self.u_values[i]);
        let (t0, t1) = (self.grid_times[i - 1], self.grid_times[i]);
        Ok(t0 + (t1 - t0) * (u - u0) / (u1 - u0))
    }
}

/// Time change of a run recorded with `record_path`.
pub fn time_change(traj: &Trajectory) -> Result<TimeChange> {
    TimeChange::from_trajectory(traj)
}

/// Unit-mass states on the `u` clock, from the states the run kept at
/// `record_u_times`.
pub fn depoissonize(traj: &Trajectory) -> Result<Vec<(f64, KTree)>> {
    traj.u_states
        .iter()
        .map(|(u, t)| {
            let m = t.mass();
            if !(m > 0.0) {
                return Err(Error::Domain(format!("zero mass at u = {u}")));
            }
            Ok((*u, t.scale(1.0 / m)?))
        })
        .collect()
}

/// `record_u_times` needed for a Wright-Fisher slice at `u_grid`.
pub fn wf_record_times(u_grid: &[f64]) -> Vec<f64> {
    u_grid.iter().map(|u| u / 4.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    Top(u32),
    Edge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WfSlice {
    /// Tops in label order, then edges in canonical order.
    pub columns: Vec<(Coordinate, Option<Edge>)>,
    /// Wright-Fisher parameter of each column.
    pub parameters: Vec<f64>,
    pub rows: Vec<(f64, Vec<f64>)>,
    /// First `u` of the grid at or after the first vanishing coordinate, if the
    /// grid was cut there.
    pub truncated_at: Option<f64>,
}

/// Coordinates of unit-mass states at `u / 4` for each `u` in `u_grid`, up to
/// the first vanishing coordinate. `states` are de-Poissonized states on the
/// `u` clock and `tau` is the first vanishing time on that clock.
pub fn wf_slice(states: &[(f64, KTree)], tau: Option<f64>, u_grid: &[f64]) -> Result<WfSlice> {
    ensure(!states.is_empty(), || "no de-Poissonized states".into())?;
    let first = &states[0].1;
    let mut columns: Vec<(Coordinate, Option<Edge>)> = first
        .labels()
        .iter()
        .map(|&i| (Coordinate::Top(i), None))
        .collect();
    columns.extend(
        first
            .shape()
            .edges()
            .iter()
            .map(|e| (Coordinate::Edge, Some(e.clone()))),
    );
    let parameters = columns
        .iter()
        .map(|(c, _)| if *c == Coordinate::Edge { 0.5 } else { -0.5 })
        .collect();
    let mut rows = Vec::with_capacity(u_grid.len());
    let mut truncated_at = None;
    for &u in u_grid {
        let s = u / 4.0;
        if tau.is_some_and(|tau| s >= tau) {
            truncated_at = Some(u);
            break;
        }
        let (_, tree) = states
            .iter()
            .find(|(v, _)| (v - s).abs() <= 1e-12 * s.max(1.0))
            .ok_or_else(|| Error::Lookup(format!("no state kept at u/4 = {s}")))?;
        if tree.shape() != first.shape() {
            truncated_at = Some(u);
            break;
        }
        let mass = tree.mass();
        let coords = columns
            .iter()
            .map(|(c, e)| match (c, e) {
                (Coordinate::Top(i), _) => tree.tops()[i] / mass,
                (Coordinate::Edge, Some(e)) => tree.partition(e).map_or(0.0, |p| p.mass()) / mass,
                (Coordinate::Edge, None) => unreachable!(),
            })
            .collect();
        rows.push((u, coords));
    }
    Ok(WfSlice {
        columns,
        parameters,
        rows,
        truncated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{run_resampling, sample_brownian_reduced_ktree, EvolutionConfig};
    use crate::rng::RandomSource;

    #[test]
    fn constant_mass_inverts_exactly() {
        let m = 2.5;
        let pts: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 * 0.1, m)).collect();
        let tc = TimeChange::from_masses(&pts).unwrap();
        for (t, u) in tc.grid_times.iter().zip(&tc.u_values) {
            assert!((u - t / m).abs() < 1e-15);
            assert!((tc.rho(*u).unwrap() - t).abs() < 1e-12);
        }
        assert!((tc.u_at(0.35).unwrap() - 0.35 / m).abs() < 1e-15);
        assert!(tc.rho(10.0).is_err());
    }

    #[test]
    fn zero_mass_is_a_domain_error() {
        assert!(matches!(
            TimeChange::from_masses(&[(0.0, 1.0), (1.0, 0.0)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn run_time_change_is_increasing_and_states_have_unit_mass() {
        let mut rng = RandomSource::new(21, 0);
        let t = sample_brownian_reduced_ktree(3, 1.0, 200, &mut rng).unwrap();
        let cfg = EvolutionConfig {
            grid_step: 1e-2,
            relative_grid: true,
            record_path: true,
            record_u_times: vec![0.05, 0.1, 0.2],
            pdip_blocks: 200,
            ..Default::default()
        };
        let tr = run_resampling(&t, &cfg, 1e9, &mut rng).unwrap();
        let tc = time_change(&tr).unwrap();
        assert!(tc.u_values.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(tc.u_values[0], 0.0);
        let states = depoissonize(&tr).unwrap();
        assert!(!states.is_empty());
        for (u, s) in &states {
            assert!((s.mass() - 1.0).abs() < 1e-12);
            let y = tc.rho(*u).unwrap();
            assert!(y > 0.0);
        }
    }

    #[test]
    fn wf_coordinates_sum_to_one() {
        let mut rng = RandomSource::new(22, 0);
        let t = sample_brownian_reduced_ktree(2, 1.0, 200, &mut rng).unwrap();
        let grid = [0.0, 0.04, 0.08];
        let cfg = EvolutionConfig {
            grid_step: 1e-3,
            relative_grid: true,
            record_u_times: wf_record_times(&grid),
            u_horizon: Some(0.02),
            pdip_blocks: 200,
            ..Default::default()
        };
        let tr = run_resampling(&t, &cfg, 1e9, &mut rng).unwrap();
        let states = depoissonize(&tr).unwrap();
        let slice = wf_slice(&states, tr.first_vanishing_u, &grid).unwrap();
        assert_eq!(slice.parameters, vec![-0.5, -0.5, 0.5]);
        for (_, row) in &slice.rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
