// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ktree::evolution::{
    run_killed, run_nonresampling, run_resampling, sample_brownian_reduced_ktree,
};
use ktree::primitives::sample_gamma;
use ktree::tree::{project_minus, project_to};
use ktree::verify::{run_suite, SuiteOptions, SuiteParams, SUITES};
use ktree::{EvolutionConfig, KTree, RandomSource};

use manifest::{resolve, sidecar, RunManifest};
use output::{tree_json, write_csv, write_text, TrajectoryFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ktree::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ktree",
    version,
    about = "Continuum k-tree evolutions and their Monte Carlo checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a Brownian reduced k-tree.
    SampleTree(SampleTreeArgs),
    /// Run a killed, non-resampling or resampling k-tree evolution.
    Evolve(EvolveArgs),
    /// Remove labels from a tree or from every state of a trajectory.
    Project(ProjectArgs),
    /// Run Monte Carlo verification suites.
    Verify(VerifyArgs),
    /// Re-run the command recorded in an output's manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct SampleTreeArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sticks per PDIP(1/2, 1/2) edge partition.
    #[arg(long, default_value_t = 1000)]
    pdip_blocks: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Killed,
    Nonresampling,
    Resampling,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Killed => "killed",
            Mode::Nonresampling => "nonresampling",
            Mode::Resampling => "resampling",
        }
    }
}

#[derive(Args, Debug)]
struct EvolveArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Rate of the Gamma(k - 1/2) initial mass for `--init pseudostationary`.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Initial mass for `--init brownian`.
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Comma-separated times at which to keep the state.
    #[arg(long, value_delimiter = ',')]
    record: Vec<f64>,
    /// Comma-separated values of the de-Poissonized clock at which to keep the
    /// unit-mass state.
    #[arg(long, value_delimiter = ',')]
    record_u: Vec<f64>,
    /// Longest gap between engine stops [env: KTREE_STEP, default 0.01].
    #[arg(long)]
    step: Option<f64>,
    /// Jump truncation relative to the current mass [env: KTREE_EPS, default 1e-4].
    #[arg(long)]
    eps: Option<f64>,
    /// Mass floor relative to the initial mass [env: KTREE_FLOOR, default 1e-4].
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `pseudostationary`, `brownian` or a path to a k-tree JSON file.
    #[arg(long, default_value = "pseudostationary")]
    init: String,
    #[arg(long, default_value_t = 1000)]
    pdip_blocks: usize,
    /// Trajectory JSON; a CSV companion is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["to_k", "drop"]))]
struct ProjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Keep labels 1..=K.
    #[arg(long)]
    to_k: Option<u32>,
    /// Remove one label.
    #[arg(long)]
    drop: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Replicates.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    y: Option<f64>,
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    /// Jump truncation of the subordinator suite.
    #[arg(long)]
    eps: Option<f64>,
    /// Longest gap between engine stops.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    pdip_blocks: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Output file carrying a manifest, or a `.manifest.json` sidecar.
    manifest: PathBuf,
    /// Write to this path instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means a verification suite failed.
fn dispatch(command: Command) -> Result<bool, CliError> {
    match command {
        Command::SampleTree(a) => sample_tree(a).map(|_| true),
        Command::Evolve(a) => evolve(a).map(|_| true),
        Command::Project(a) => project(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Replay(a) => replay(a),
    }
}

const ENV_VARS: [(&str, &str); 3] = [
    ("step", "KTREE_STEP"),
    ("eps", "KTREE_EPS"),
    ("floor", "KTREE_FLOOR"),
];

fn sample_tree(a: SampleTreeArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let mut rng = RandomSource::new(a.seed, 0);
    let tree = sample_brownian_reduced_ktree(a.k, a.mass, a.pdip_blocks, &mut rng)?;
    write_text(a.out.as_deref(), &tree_json(&tree))?;
    if let Some(out) = &a.out {
        let mut m = RunManifest::new("sample-tree");
        m.flag("k", a.k);
        m.flag("mass", a.mass);
        m.flag("seed", a.seed);
        m.flag("pdip-blocks", a.pdip_blocks);
        m.flag("out", out.display().to_string());
        m.artifacts.push(out.clone());
        write_manifest_sidecar(out, &m)?;
    }
    Ok(())
}

fn write_manifest_sidecar(out: &Path, m: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    write_text(Some(&sidecar(out)), &text)
}

fn read_tree(path: &Path) -> Result<KTree, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid k-tree in {}: {e}", path.display())))
}

fn evolve(a: EvolveArgs) -> Result<(), CliError> {
    let (step, step_src) = resolve(a.step, ENV_VARS[0].1, 1e-2)?;
    let (eps, eps_src) = resolve(a.eps, ENV_VARS[1].1, 1e-4)?;
    let (floor, floor_src) = resolve(a.floor, ENV_VARS[2].1, 1e-4)?;
    if !(a.horizon >= 0.0) {
        return Err(CliError::Usage(format!("--horizon {}", a.horizon)));
    }
    let mut record = a.record.clone();
    record.sort_by(f64::total_cmp);
    let mut record_u = a.record_u.clone();
    record_u.sort_by(f64::total_cmp);
    let cfg = EvolutionConfig {
        grid_step: step,
        jump_truncation: eps,
        mass_floor: floor,
        record_times: record.clone(),
        record_u_times: record_u.clone(),
        pdip_blocks: a.pdip_blocks,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut rng = RandomSource::new(a.seed, 0);
    let init = match a.init.as_str() {
        "pseudostationary" | "brownian" => {
            if a.k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            let mass = if a.init == "brownian" {
                a.mass
            } else {
                sample_gamma(a.k as f64 - 0.5, a.gamma, &mut rng)?
            };
            sample_brownian_reduced_ktree(a.k, mass, a.pdip_blocks, &mut rng)?
        }
        path => read_tree(Path::new(path))?,
    };
    if !(init.mass() > 0.0) {
        return Err(CliError::Usage("initial tree has zero mass".into()));
    }
    let run = match a.mode {
        Mode::Killed => run_killed,
        Mode::Nonresampling => run_nonresampling,
        Mode::Resampling => run_resampling,
    };
    let traj = run(&init, &cfg, a.horizon, &mut rng)?;

    let mut m = RunManifest::new("evolve");
    m.flag("mode", a.mode.name());
    m.flag("k", init.k());
    m.flag("gamma", a.gamma);
    m.flag("mass", a.mass);
    m.flag("init", &a.init);
    m.flag("horizon", a.horizon);
    if !a.horizon.is_finite() {
        m.set("horizon", a.horizon.to_string());
    }
    if !record.is_empty() {
        m.flag("record", join(&record));
        m.set("record", &record);
    }
    if !record_u.is_empty() {
        m.flag("record-u", join(&record_u));
        m.set("record_u", &record_u);
    }
    for (name, value, src) in [
        ("step", step, step_src),
        ("eps", eps, eps_src),
        ("floor", floor, floor_src),
    ] {
        if src == "flag" {
            m.flag(name, value);
        } else {
            m.set(name, value);
        }
        m.sources.insert(name.into(), src.into());
    }
    m.flag("seed", a.seed);
    m.flag("pdip-blocks", a.pdip_blocks);
    let csv_path = a.out.as_ref().map(|p| p.with_extension("csv"));
    if let (Some(out), Some(csv)) = (&a.out, &csv_path) {
        m.flag("out", out.display().to_string());
        m.artifacts.push(out.clone());
        m.artifacts.push(csv.clone());
    }

    let file = TrajectoryFile::from_run(m, &traj)?;
    write_text(a.out.as_deref(), &file.to_json())?;
    if let Some(csv) = &csv_path {
        write_csv(csv, &file, init.labels().iter().copied().max().unwrap_or(0))?;
    }
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn project(a: ProjectArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let op = |t: &KTree| -> Result<KTree, CliError> {
        if t.k() == 0 {
            return Ok(t.clone());
        }
        match (a.to_k, a.drop) {
            (Some(k), _) => {
                if k == 0 {
                    return Err(CliError::Usage("--to-k must be at least 1".into()));
                }
                Ok(project_to(t, k)?)
            }
            (None, Some(j)) => {
                if t.k() == 1 && t.labels()[0] == j {
                    return Err(CliError::Usage(format!("cannot drop the last label {j}")));
                }
                Ok(project_minus(t, j)?)
            }
            (None, None) => unreachable!("clap requires a target"),
        }
    };
    let mut m = RunManifest::new("project");
    m.flag("in", a.input.display().to_string());
    if let Some(k) = a.to_k {
        m.flag("to-k", k);
    }
    if let Some(j) = a.drop {
        m.flag("drop", j);
    }
    if let Some(out) = &a.out {
        m.flag("out", out.display().to_string());
        m.artifacts.push(out.clone());
    }
    if value.get("states").is_some() {
        let file: TrajectoryFile = serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("invalid trajectory: {e}")))?;
        m.set("source", &file.manifest);
        let projected = file.map_trees(m, op)?;
        write_text(a.out.as_deref(), &projected.to_json())?;
    } else {
        let tree: KTree = serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("invalid k-tree: {e}")))?;
        write_text(a.out.as_deref(), &tree_json(&op(&tree)?))?;
        if let Some(out) = &a.out {
            write_manifest_sidecar(out, &m)?;
        }
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<bool, CliError> {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&a.suite.as_str()) {
        vec![a.suite.as_str()]
    } else {
        return Err(CliError::Usage(format!(
            "unknown suite {:?}; expected one of {} or all",
            a.suite,
            SUITES.join(", ")
        )));
    };
    let mut opts = SuiteOptions::default();
    if let Some(seed) = a.seed {
        opts.seed = seed;
    }
    if let Some(step) = a.step {
        opts.grid_step = step;
    }
    if let Some(b) = a.pdip_blocks {
        opts.pdip_blocks = b;
    }
    let params = SuiteParams {
        n: a.n,
        k: a.k,
        j: a.j,
        gamma: a.gamma,
        y: a.y,
        u: a.u,
        floor: a.floor,
        eps: a.eps,
    };

    let mut m = RunManifest::new("verify");
    m.flag("suite", &a.suite);
    for (name, v) in [("N", a.n), ("k", a.k), ("j", a.j)] {
        if let Some(v) = v {
            m.flag(name, v);
        }
    }
    for (name, v) in [
        ("gamma", a.gamma),
        ("y", a.y),
        ("u", a.u),
        ("floor", a.floor),
        ("eps", a.eps),
    ] {
        if let Some(v) = v {
            m.flag(name, v);
        }
    }
    m.flag("seed", opts.seed);
    m.flag("step", opts.grid_step);
    m.flag("pdip-blocks", opts.pdip_blocks);
    m.set("jump_truncation", opts.jump_truncation);
    m.set("euler_step", opts.euler_step);
    if let Some(out) = &a.out {
        m.flag("out", out.display().to_string());
        m.artifacts.push(out.clone());
    }

    let mut reports = Vec::new();
    for name in names {
        let r = run_suite(name, &params, &opts)?;
        eprintln!(
            "{} {name}: {} = {} (threshold {})",
            if r.pass { "PASS" } else { "FAIL" },
            serde_json::to_string(&r.statistic).expect("statistic kind serializes"),
            r.observed,
            r.threshold
        );
        if a.out.is_none() {
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
        }
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    if let Some(out) = &a.out {
        let doc = serde_json::json!({ "manifest": m, "reports": reports });
        write_text(
            Some(out),
            &serde_json::to_string_pretty(&doc).expect("reports serialize"),
        )?;
    }
    Ok(pass)
}

fn replay(a: ReplayArgs) -> Result<bool, CliError> {
    let m = RunManifest::load(&a.manifest)?;
    let mut args = m.args.clone();
    if let Some(out) = &a.out {
        let out = out.display().to_string();
        match args.iter().position(|x| x == "--out") {
            Some(i) if i + 1 < args.len() => args[i + 1] = out,
            _ => args.extend(["--out".into(), out]),
        }
    }
    // settings that came from the environment are restored the same way
    for (name, src) in &m.sources {
        let var = ENV_VARS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| CliError::Usage(format!("unknown setting {name:?} in manifest")))?;
        match (src.as_str(), m.config.get(name)) {
            ("env", Some(v)) => std::env::set_var(var, v.to_string()),
            ("env", None) => {
                return Err(CliError::Usage(format!("manifest has no value for {name}")))
            }
            _ => std::env::remove_var(var),
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("ktree".to_string()).chain(args))
        .map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay a replay".into()));
    }
    dispatch(cli.command)
}
