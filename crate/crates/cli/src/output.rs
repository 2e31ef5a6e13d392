use std::io::Write;
use std::path::Path;

use ktree::depoisson::depoissonize;
use ktree::evolution::Trajectory;
use ktree::{BlockRef, KTree, Terminal};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateRow {
    pub t: f64,
    pub tree: KTree,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UStateRow {
    pub u: f64,
    pub tree: KTree,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventRow {
    pub t: f64,
    pub caused_by: u32,
    pub dropped: u32,
    pub target: Option<BlockRef>,
}

/// On-disk form of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub manifest: RunManifest,
    pub states: Vec<StateRow>,
    pub events: Vec<EventRow>,
    pub terminal: Terminal,
    pub end_time: f64,
    #[serde(rename = "final")]
    pub final_state: StateRow,
    pub floor_time: Option<f64>,
    /// Unit-mass states on the de-Poissonized clock.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depoissonized: Vec<UStateRow>,
}

impl TrajectoryFile {
    pub fn from_run(manifest: RunManifest, traj: &Trajectory) -> Result<Self, CliError> {
        let depoissonized = depoissonize(traj)?
            .into_iter()
            .map(|(u, tree)| UStateRow { u, tree })
            .collect();
        Ok(Self {
            manifest,
            states: traj
                .states
                .iter()
                .map(|(t, tree)| StateRow {
                    t: *t,
                    tree: tree.clone(),
                })
                .collect(),
            events: traj
                .events
                .iter()
                .map(|e| EventRow {
                    t: e.time,
                    caused_by: e.caused_by,
                    dropped: e.dropped,
                    target: e.resample_target.clone(),
                })
                .collect(),
            terminal: traj.terminal,
            end_time: traj.end_time,
            final_state: StateRow {
                t: traj.end_time,
                tree: traj.final_state.clone(),
            },
            floor_time: traj.floor_time,
            depoissonized,
        })
    }

    /// Apply `f` to every tree. Events refer to the unprojected labels and are dropped.
    pub fn map_trees(
        self,
        manifest: RunManifest,
        f: impl Fn(&KTree) -> Result<KTree, CliError>,
    ) -> Result<Self, CliError> {
        let row = |s: &StateRow| -> Result<StateRow, CliError> {
            Ok(StateRow {
                t: s.t,
                tree: f(&s.tree)?,
            })
        };
        Ok(Self {
            manifest,
            states: self.states.iter().map(row).collect::<Result<_, _>>()?,
            events: Vec::new(),
            terminal: self.terminal,
            end_time: self.end_time,
            final_state: row(&self.final_state)?,
            floor_time: self.floor_time,
            depoissonized: self
                .depoissonized
                .iter()
                .map(|s| {
                    Ok(UStateRow {
                        u: s.u,
                        tree: f(&s.tree)?,
                    })
                })
                .collect::<Result<_, CliError>>()?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

pub fn tree_json(t: &KTree) -> String {
    serde_json::to_string(t).expect("k-tree serializes")
}

/// Write `text` plus a newline to `out`, or to stdout.
pub fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// One row per kept state and one for the final state. Edge masses follow
/// the edge order of the shape id.
pub fn write_csv(path: &Path, file: &TrajectoryFile, max_label: u32) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "total_mass".into(), "labels".into()];
    header.extend((1..=max_label).map(|i| format!("x_{i}")));
    header.extend(["edge_masses".into(), "shape".into()]);
    w.write_record(&header)?;
    for s in file.states.iter().chain(std::iter::once(&file.final_state)) {
        let t = &s.tree;
        let mut rec = vec![
            s.t.to_string(),
            t.mass().to_string(),
            t.labels()
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        ];
        rec.extend((1..=max_label).map(|i| t.top(i).map_or(String::new(), |x| x.to_string())));
        rec.push(
            t.shape()
                .edges()
                .iter()
                .map(|e| t.partition(e).map_or(0.0, |p| p.mass()).to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        rec.push(t.shape().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
