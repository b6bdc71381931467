//! Monte Carlo studies: one tilt sequence replayed from many random starts.
//!
//! Trial `i` of an experiment draws its own generator from
//! `rng::split(master_seed, TRIAL, i)`, so every trial can be replayed on its
//! own and the batch result does not depend on how trials are scheduled.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{simulate_tilt, DynamicsError, Part, SimParams, TiltAction, DEFAULT_TILT};
use crate::entropy::{entropy_bits, EntropyError, PoseHistogram, VoxelGrid};
use crate::friction::{
    generate_field, generate_for_level, load_field, FieldFileError, FrictionError, FrictionField, NoiseLevel,
    DEFAULT_GRID_N, DEFAULT_MU0,
};
use crate::geometry::{in_free_space, GeometryError, PartShape, Pose, RigidBody, Tray};
use crate::rng;
use crate::shapes::{self, ShapeFileError};

/// Consecutive rejected draws before initial-pose sampling gives up.
pub const MAX_REJECTIONS: usize = 10_000;
/// Largest fraction of trials allowed to fail before a run is rejected.
pub const FAILURE_BUDGET: f64 = 0.01;
/// Entropy at or below this counts as converged.
pub const CONVERGED_BITS: f64 = 0.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{0}")]
    Shape(#[from] ShapeFileError),
    #[error("{0}")]
    FieldFile(#[from] FieldFileError),
    #[error("{0}")]
    Friction(#[from] FrictionError),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Dynamics(#[from] DynamicsError),
    #[error("{0}")]
    Entropy(#[from] EntropyError),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {what}: {source}")]
    Parse {
        what: String,
        source: toml::de::Error,
    },
    #[error("no collision-free pose after {0} consecutive draws; the part may not fit in the tray")]
    RejectionCap(usize),
    #[error("trial {index}: {source}")]
    Trial { index: usize, source: Box<ExperimentError> },
    #[error("{failed} of {trials} trials failed (budget {budget}); first failure: {first}")]
    FailureBudget {
        failed: usize,
        trials: usize,
        budget: usize,
        first: String,
    },
    #[error("trends have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("no trends given")]
    NoTrends,
}

fn read_file(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// sequences

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    actions: Vec<TiltAction>,
    seed: Option<u64>,
}

impl ActionSequence {
    pub fn from_directions(directions: &[u8], tilt_angle: f64, seed: Option<u64>) -> Result<Self, ExperimentError> {
        if directions.is_empty() {
            return Err(ExperimentError::Invalid("a sequence needs at least one action".into()));
        }
        let actions = directions
            .iter()
            .map(|&d| TiltAction::new(d, tilt_angle))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ActionSequence { actions, seed })
    }

    pub fn actions(&self) -> &[TiltAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn directions(&self) -> Vec<u8> {
        self.actions.iter().map(TiltAction::direction).collect()
    }

    pub fn tilt_angle(&self) -> f64 {
        self.actions[0].tilt_angle()
    }
}

/// `n` uniform draws from the eight headings. Draw `i` is the top three bits
/// of `rng::split(seed, SEQUENCE, i)`.
pub fn generate_sequence(n: usize, seed: u64) -> Result<ActionSequence, ExperimentError> {
    let dirs: Vec<u8> = (0..n as u64)
        .map(|i| (rng::split(seed, rng::stream::SEQUENCE, i) >> 61) as u8)
        .collect();
    ActionSequence::from_directions(&dirs, DEFAULT_TILT, Some(seed))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    tilt_deg: f64,
    /// heading `k` points at `k * 45°` from +x
    directions: Vec<u8>,
}

pub fn sequence_to_toml(seq: &ActionSequence) -> String {
    let file = SequenceFile {
        seed: seq.seed,
        tilt_deg: tidy_degrees(seq.tilt_angle()),
        directions: seq.directions(),
    };
    toml::to_string(&file).expect("sequence serializes")
}

/// Degrees for display, without last-bit noise like `30.000000000000004`
/// when a rounder value converts back to the same radians.
fn tidy_degrees(rad: f64) -> f64 {
    let deg = rad.to_degrees();
    let r = (deg * 1e9).round() / 1e9;
    if r.to_radians() == rad {
        r
    } else {
        deg
    }
}

pub fn parse_sequence(text: &str) -> Result<ActionSequence, ExperimentError> {
    let file: SequenceFile = toml::from_str(text).map_err(|source| ExperimentError::Parse {
        what: "sequence file".into(),
        source,
    })?;
    ActionSequence::from_directions(&file.directions, file.tilt_deg.to_radians(), file.seed)
}

// ---------------------------------------------------------------------------
// config file

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ShapeSpec {
    pub fn preset(name: &str) -> Self {
        ShapeSpec {
            preset: Some(name.to_string()),
            path: None,
        }
    }

    fn resolve(&self, base: &Path) -> Result<PartShape, ExperimentError> {
        match (&self.preset, &self.path) {
            (Some(name), None) => Ok(shapes::preset(name)?),
            (None, Some(path)) => Ok(shapes::load_shape(&base.join(path))?),
            _ => Err(ExperimentError::Invalid("[shape] needs exactly one of `preset` or `path`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraySpec {
    /// m
    pub a: f64,
    /// m
    pub b: f64,
}

impl Default for TraySpec {
    fn default() -> Self {
        TraySpec { a: 0.2, b: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alpha: 4,
            beta: 4,
            gamma: 4,
        }
    }
}

/// One of: nothing (uniform `mu0 = 0.3`), `mu` (uniform), `level` with
/// optional `seed`/`grid_n`, explicit `amplitude` with optional
/// `mu0`/`seed`/`grid_n`, or `path` to a field file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<NoiseLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl FrictionSpec {
    pub fn level(level: NoiseLevel, seed: u64) -> Self {
        FrictionSpec {
            level: Some(level),
            seed: Some(seed),
            ..Default::default()
        }
    }

    fn resolve(&self, base: &Path, tray: Tray) -> Result<FrictionField, ExperimentError> {
        let bad = |msg: &str| Err(ExperimentError::Invalid(format!("[friction] {msg}")));
        let grid_n = self.grid_n.unwrap_or(DEFAULT_GRID_N);
        let seed = self.seed.unwrap_or(0);
        if let Some(path) = &self.path {
            if self.mu.is_some() || self.level.is_some() || self.amplitude.is_some() || self.mu0.is_some() {
                return bad("`path` cannot be combined with generation parameters");
            }
            let field = load_field(&base.join(path))?;
            if field.tray() != tray {
                return bad("field file tray does not match the experiment tray");
            }
            return Ok(field);
        }
        match (self.mu, self.level, self.amplitude) {
            (Some(mu), None, None) => {
                if self.mu0.is_some() {
                    return bad("give either `mu` or `mu0`, not both");
                }
                Ok(FrictionField::uniform(mu, tray)?)
            }
            (None, Some(level), None) => {
                if self.mu0.is_some() {
                    return bad("noise levels are defined about the default mu0; use `amplitude` to set mu0");
                }
                Ok(generate_for_level(level, grid_n, seed, tray)?)
            }
            (None, None, Some(amplitude)) => {
                Ok(generate_field(self.mu0.unwrap_or(DEFAULT_MU0), amplitude, grid_n, seed, tray)?)
            }
            (None, None, None) => Ok(generate_field(self.mu0.unwrap_or(DEFAULT_MU0), 0.0, grid_n, seed, tray)?),
            _ => bad("give only one of `mu`, `level` or `amplitude`"),
        }
    }
}

/// One of: `n` and `seed` (generated), `directions`, or `path` to a
/// sequence file. `tilt_deg` defaults to 30.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt_deg: Option<f64>,
}

impl SequenceSpec {
    pub fn generated(n: usize, seed: u64) -> Self {
        SequenceSpec {
            n: Some(n),
            seed: Some(seed),
            ..Default::default()
        }
    }

    fn resolve(&self, base: &Path) -> Result<ActionSequence, ExperimentError> {
        let bad = |msg: &str| Err(ExperimentError::Invalid(format!("[sequence] {msg}")));
        let seq = match (&self.path, &self.directions, self.n) {
            (Some(path), None, None) => {
                if self.seed.is_some() || self.tilt_deg.is_some() {
                    return bad("`path` cannot be combined with `seed` or `tilt_deg`");
                }
                return parse_sequence(&read_file(&base.join(path))?);
            }
            (None, Some(dirs), None) => ActionSequence::from_directions(dirs, DEFAULT_TILT, self.seed)?,
            (None, None, Some(n)) => match self.seed {
                Some(seed) => generate_sequence(n, seed)?,
                None => return bad("a generated sequence needs `seed`"),
            },
            _ => return bad("give exactly one of `n` + `seed`, `directions` or `path`"),
        };
        match self.tilt_deg {
            Some(deg) => ActionSequence::from_directions(&seq.directions(), deg.to_radians(), seq.seed),
            None => Ok(seq),
        }
    }
}

/// Per-variant overrides; anything left out is inherited from the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friction: Option<FrictionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceSpec>,
}

/// Experiment config file. With `[[variant]]` tables the file describes a
/// family of experiments that share everything but the overridden parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// M
    pub trials: usize,
    pub master_seed: u64,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub tray: TraySpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub friction: FrictionSpec,
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default, rename = "variant", skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantSpec>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|source| ExperimentError::Parse {
            what: "experiment config".into(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves every referenced file (relative to `base`) and returns one
    /// config per variant, or a single config when there are none.
    pub fn resolve(&self, base: &Path) -> Result<Vec<ExperimentConfig>, ExperimentError> {
        let tray = Tray::new(self.tray.a, self.tray.b)?;
        let grid = VoxelGrid::new(tray.a, tray.b, self.grid.alpha, self.grid.beta, self.grid.gamma)?;
        self.sim.validate()?;
        let build = |label: &str, shape: &ShapeSpec, friction: &FrictionSpec, sequence: &SequenceSpec| {
            let config = ExperimentConfig {
                label: label.to_string(),
                shape: shape.resolve(base)?,
                tray,
                grid,
                field: friction.resolve(base, tray)?,
                sequence: sequence.resolve(base)?,
                trials: self.trials,
                master_seed: self.master_seed,
                params: self.sim,
            };
            config.validate()?;
            Ok(config)
        };
        if self.variants.is_empty() {
            return Ok(vec![build(&self.label, &self.shape, &self.friction, &self.sequence)?]);
        }
        let mut labels = std::collections::HashSet::new();
        self.variants
            .iter()
            .map(|v| {
                if !valid_label(&v.label) || !labels.insert(v.label.as_str()) {
                    return Err(ExperimentError::Invalid(format!(
                        "variant label `{}` must be unique and use only letters, digits, `-` and `_`",
                        v.label
                    )));
                }
                build(
                    &v.label,
                    v.shape.as_ref().unwrap_or(&self.shape),
                    v.friction.as_ref().unwrap_or(&self.friction),
                    v.sequence.as_ref().unwrap_or(&self.sequence),
                )
            })
            .collect()
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub shape: PartShape,
    pub tray: Tray,
    pub grid: VoxelGrid,
    pub field: FrictionField,
    pub sequence: ActionSequence,
    /// M
    pub trials: usize,
    pub master_seed: u64,
    pub params: SimParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::Invalid("trials (M) must be at least 1".into()));
        }
        if self.sequence.is_empty() {
            return Err(ExperimentError::Invalid("sequence is empty".into()));
        }
        if self.grid.a != self.tray.a || self.grid.b != self.tray.b {
            return Err(ExperimentError::Invalid("voxel grid does not span the tray".into()));
        }
        self.params.validate()?;
        Ok(())
    }

    pub fn part(&self) -> Result<Part, ExperimentError> {
        Ok(Part::new(RigidBody::new(self.shape.clone()), &self.params)?)
    }
}

// ---------------------------------------------------------------------------
// trials

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    /// `rng::split(master_seed, TRIAL, index)`
    pub seed: u64,
    /// initial pose followed by the pose after every action
    pub poses: Vec<Pose>,
    pub settled: Vec<bool>,
    pub sim_times: Vec<f64>,
    pub max_penetration: f64,
}

impl TrialRecord {
    pub fn unsettled(&self) -> usize {
        self.settled.iter().filter(|s| !**s).count()
    }
}

/// Uniform rejection sampling over `[0, a] x [0, b] x [0, 2π)`.
pub fn sample_initial_pose<R: Rng>(body: &RigidBody, tray: &Tray, rng: &mut R) -> Result<Pose, ExperimentError> {
    for _ in 0..MAX_REJECTIONS {
        let pose = Pose::new(
            rng.gen_range(0.0..tray.a),
            rng.gen_range(0.0..tray.b),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        if in_free_space(body, &pose, tray) {
            return Ok(pose);
        }
    }
    Err(ExperimentError::RejectionCap(MAX_REJECTIONS))
}

pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    rng::split(master_seed, rng::stream::TRIAL, index as u64)
}

pub fn run_trial(config: &ExperimentConfig, index: usize) -> Result<TrialRecord, ExperimentError> {
    let part = config.part()?;
    run_trial_with(&part, config, index)
}

fn run_trial_with(part: &Part, config: &ExperimentConfig, index: usize) -> Result<TrialRecord, ExperimentError> {
    let tag = |e: ExperimentError| ExperimentError::Trial {
        index,
        source: Box::new(e),
    };
    let seed = trial_seed(config.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.sequence.len();
    let mut poses = Vec::with_capacity(n + 1);
    let mut settled = Vec::with_capacity(n);
    let mut sim_times = Vec::with_capacity(n);
    let mut max_penetration = 0.0f64;
    let mut pose = sample_initial_pose(part.body(), &config.tray, &mut rng).map_err(tag)?;
    poses.push(pose);
    for action in config.sequence.actions() {
        let out = simulate_tilt(part, pose, action, &config.field, &config.tray, &config.params)
            .map_err(|e| tag(e.into()))?;
        pose = out.settled_pose;
        poses.push(pose);
        settled.push(out.settled);
        sim_times.push(out.sim_time);
        max_penetration = max_penetration.max(out.max_penetration);
    }
    Ok(TrialRecord {
        index,
        seed,
        poses,
        settled,
        sim_times,
        max_penetration,
    })
}

// ---------------------------------------------------------------------------
// aggregation over trials

/// Per-step histograms plus settled counts, mergeable across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHistograms {
    hists: Vec<PoseHistogram>,
    settled: Vec<u64>,
    trials: u64,
    track_settled: bool,
}

impl StepHistograms {
    /// `steps` counts the initial pose, so it is `N + 1`.
    pub fn new(grid: &VoxelGrid, steps: usize, track_settled: bool) -> Self {
        StepHistograms {
            hists: vec![PoseHistogram::empty(grid); steps],
            settled: vec![0; steps],
            trials: 0,
            track_settled,
        }
    }

    /// Adds one trial. `settled[i]` flags the pose after action `i + 1`.
    pub fn add_trial(&mut self, grid: &VoxelGrid, poses: &[Pose], settled: Option<&[bool]>) -> Result<(), EntropyError> {
        assert_eq!(poses.len(), self.hists.len(), "trial length differs from the histogram set");
        for (h, p) in self.hists.iter_mut().zip(poses) {
            h.add(grid.voxel_index(p)?);
        }
        self.settled[0] += 1;
        if let Some(flags) = settled {
            for (c, &s) in self.settled[1..].iter_mut().zip(flags) {
                *c += u64::from(s);
            }
        }
        self.trials += 1;
        Ok(())
    }

    pub fn merge(mut self, other: StepHistograms) -> Result<Self, EntropyError> {
        for (a, b) in self.hists.iter_mut().zip(&other.hists) {
            a.merge(b)?;
        }
        for (a, b) in self.settled.iter_mut().zip(&other.settled) {
            *a += b;
        }
        self.trials += other.trials;
        Ok(self)
    }

    pub fn histograms(&self) -> &[PoseHistogram] {
        &self.hists
    }

    pub fn trend(&self) -> StudyTrend {
        let m = self.trials.max(1) as f64;
        StudyTrend {
            h_bits: self.hists.iter().map(entropy_bits).collect(),
            occupied: self.hists.iter().map(PoseHistogram::occupied).collect(),
            settled_fraction: self
                .track_settled
                .then(|| self.settled.iter().map(|&c| c as f64 / m).collect()),
            trials: self.trials,
        }
    }
}

/// Entropy after every step of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTrend {
    /// `H^0 .. H^N`
    pub h_bits: Vec<f64>,
    pub occupied: Vec<usize>,
    /// fraction of trials whose pose at each step came from a settled tilt;
    /// step 0 is the resting initial pose
    pub settled_fraction: Option<Vec<f64>>,
    /// trials that entered the histograms
    pub trials: u64,
}

impl StudyTrend {
    pub fn final_bits(&self) -> f64 {
        *self.h_bits.last().expect("trend is never empty")
    }

    pub fn convergence_index(&self) -> Option<usize> {
        convergence_index(&self.h_bits, CONVERGED_BITS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// successful trials in index order
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub trend: StudyTrend,
}

impl ExperimentResult {
    pub fn unsettled_tilts(&self) -> usize {
        self.records.iter().map(TrialRecord::unsettled).sum()
    }

    pub fn max_penetration(&self) -> f64 {
        self.records.iter().map(|r| r.max_penetration).fold(0.0, f64::max)
    }
}

/// Runs all trials on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let part = config.part()?;
    let outcomes: Vec<Result<TrialRecord, ExperimentError>> = (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial_with(&part, config, i))
        .collect();

    let mut records = Vec::with_capacity(config.trials);
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{e}");
                failures.push(TrialFailure {
                    index,
                    message: e.to_string(),
                })
            }
        }
    }
    let budget = (FAILURE_BUDGET * config.trials as f64).floor() as usize;
    if failures.len() > budget {
        return Err(ExperimentError::FailureBudget {
            failed: failures.len(),
            trials: config.trials,
            budget,
            first: failures[0].message.clone(),
        });
    }
    if records.is_empty() {
        return Err(EntropyError::Empty.into());
    }

    let steps = config.sequence.len() + 1;
    let grid = config.grid;
    let hists = records
        .par_iter()
        .try_fold(
            || StepHistograms::new(&grid, steps, true),
            |mut acc, r| {
                acc.add_trial(&grid, &r.poses, Some(&r.settled))?;
                Ok::<_, EntropyError>(acc)
            },
        )
        .try_reduce(|| StepHistograms::new(&grid, steps, true), StepHistograms::merge)?;
    Ok(ExperimentResult {
        records,
        failures,
        trend: hists.trend(),
    })
}

/// [`run_experiment`] on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(
    config: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentResult, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_experiment(config))
}

// ---------------------------------------------------------------------------
// trend statistics

/// First step from which the trend stays at or below `threshold_bits`.
pub fn convergence_index(trend: &[f64], threshold_bits: f64) -> Option<usize> {
    match trend.iter().rposition(|&h| h > threshold_bits) {
        None if trend.is_empty() => None,
        None => Some(0),
        Some(last) if last + 1 < trend.len() => Some(last + 1),
        Some(_) => None,
    }
}

/// Percentile of sorted data, interpolating linearly between the closest
/// ranks: rank `p (n - 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrend {
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// per input trend, at [`CONVERGED_BITS`]
    pub convergence: Vec<Option<usize>>,
}

pub fn aggregate_trends(trends: &[Vec<f64>]) -> Result<AggregateTrend, ExperimentError> {
    let first = trends.first().ok_or(ExperimentError::NoTrends)?;
    let len = first.len();
    if let Some(t) = trends.iter().find(|t| t.len() != len) {
        return Err(ExperimentError::LengthMismatch(len, t.len()));
    }
    let mut mean = Vec::with_capacity(len);
    let mut q25 = Vec::with_capacity(len);
    let mut q75 = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(trends.len());
    for step in 0..len {
        column.clear();
        column.extend(trends.iter().map(|t| t[step]));
        column.sort_by(f64::total_cmp);
        mean.push(column.iter().sum::<f64>() / column.len() as f64);
        q25.push(percentile(&column, 0.25));
        q75.push(percentile(&column, 0.75));
    }
    Ok(AggregateTrend {
        mean,
        q25,
        q75,
        convergence: trends.iter().map(|t| convergence_index(t, CONVERGED_BITS)).collect(),
    })
}

/// Least-squares slope of `values` against their step index.
pub fn trend_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

// ---------------------------------------------------------------------------
// study recipes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(ExperimentError::Invalid(format!("unknown scale `{s}` (expected desk or full)"))),
        }
    }
}

/// Tilts per sequence in every study.
pub const STUDY_TILTS: usize = 50;
pub const STUDY_MASTER_SEED: u64 = 1;
/// Sequence of recipe A with the fastest sustained convergence at desk
/// scale; recipes B and C replay it.
pub const BEST_SEQUENCE_SEED: u64 = 5;
/// Friction seeds for recipes A and B.
pub const STUDY_FIELD_SEED: u64 = 1;

/// Maps per noise class in recipe C, `(low, medium, high)`.
fn noise_maps(scale: Scale) -> [(NoiseLevel, usize); 3] {
    match scale {
        Scale::Desk => [(NoiseLevel::Low, 3), (NoiseLevel::Medium, 3), (NoiseLevel::High, 3)],
        Scale::Full => [(NoiseLevel::Low, 13), (NoiseLevel::Medium, 3), (NoiseLevel::High, 4)],
    }
}

fn study_base(label: &str, description: &str, trials: usize, shape: ShapeSpec, friction: FrictionSpec) -> ExperimentSpec {
    ExperimentSpec {
        label: label.to_string(),
        description: description.to_string(),
        trials,
        master_seed: STUDY_MASTER_SEED,
        shape,
        tray: TraySpec::default(),
        grid: GridSpec::default(),
        friction,
        sequence: SequenceSpec::generated(STUDY_TILTS, BEST_SEQUENCE_SEED),
        sim: SimParams::default(),
        variants: Vec::new(),
    }
}

/// Recipe A: many random sequences on the allen key.
pub fn recipe_a(scale: Scale) -> ExperimentSpec {
    let (sequences, trials) = match scale {
        Scale::Desk => (10, 500),
        Scale::Full => (43, 10_000),
    };
    let mut spec = study_base(
        &format!("recipe-a-{}", scale.name()),
        "random tilt sequences, allen key, low friction noise",
        trials,
        ShapeSpec::preset("allen-key"),
        FrictionSpec::level(NoiseLevel::Low, STUDY_FIELD_SEED),
    );
    spec.variants = (1..=sequences as u64)
        .map(|seed| VariantSpec {
            label: format!("seq-{seed:02}"),
            sequence: Some(SequenceSpec::generated(STUDY_TILTS, seed)),
            ..Default::default()
        })
        .collect();
    spec
}

/// Recipe B: the best recipe-A sequence on every triangle.
pub fn recipe_b(scale: Scale) -> ExperimentSpec {
    let trials = match scale {
        Scale::Desk => 500,
        Scale::Full => 10_000,
    };
    let mut spec = study_base(
        &format!("recipe-b-{}", scale.name()),
        "fixed sequence, procedural triangles, low friction noise",
        trials,
        ShapeSpec::preset("tri-01"),
        FrictionSpec::level(NoiseLevel::Low, STUDY_FIELD_SEED),
    );
    spec.variants = (1..=shapes::TRIANGLE_COUNT)
        .map(|i| VariantSpec {
            label: format!("tri-{i:02}"),
            shape: Some(ShapeSpec::preset(&format!("tri-{i:02}"))),
            ..Default::default()
        })
        .collect();
    spec
}

/// Recipe C: the best recipe-A sequence on the allen key over friction
/// maps from the three noise classes.
pub fn recipe_c(scale: Scale) -> ExperimentSpec {
    let trials = match scale {
        Scale::Desk => 200,
        Scale::Full => 10_000,
    };
    let mut spec = study_base(
        &format!("recipe-c-{}", scale.name()),
        "fixed sequence, allen key, friction maps in three noise classes",
        trials,
        ShapeSpec::preset("allen-key"),
        FrictionSpec::default(),
    );
    spec.variants = noise_maps(scale)
        .iter()
        .flat_map(|&(level, maps)| {
            (1..=maps as u64).map(move |seed| VariantSpec {
                label: format!("{}-{seed:02}", level.name()),
                friction: Some(FrictionSpec::level(level, seed)),
                ..Default::default()
            })
        })
        .collect();
    spec
}

/// Every shipped recipe as `(name, config)`.
pub fn study_recipes() -> Vec<(String, ExperimentSpec)> {
    let mut out = Vec::new();
    for scale in [Scale::Desk, Scale::Full] {
        for (key, spec) in [("a", recipe_a(scale)), ("b", recipe_b(scale)), ("c", recipe_c(scale))] {
            out.push((format!("recipe_{key}_{}", scale.name()), spec));
        }
    }
    out
}

/// Noise class of a recipe-C variant label such as `medium-02`.
pub fn variant_noise_level(label: &str) -> Option<NoiseLevel> {
    label.split('-').next()?.parse().ok()
}
