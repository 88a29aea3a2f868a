//! Config-driven experiment drivers: sampling plans, offline training,
//! online evaluation against the full model, `(N, M)` sweeps and runtime
//! scaling. Every driver is deterministic given the config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MatsError, Result, StopReason};
use crate::fullmodel::{solve_full_interpolated, FullModel, InitialCondition, ProblemSpec};
use crate::io::{self, Trajectory};
use crate::offline::{
    collect_snapshots, train, train_grid, BundleMeta, OfflineBundle, OfflineReport, SamplingPlan, SnapshotSet,
    TrainOptions,
};
use crate::online::{reconstruct, OnlineOptions, ReducedModel, ReducedState};
use crate::pwl::GridFn;

pub const RNG_NAME: &str = "ChaCha8Rng::seed_from_u64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Color,
    BurgersSlow,
    BurgersFast,
    AdvectionAppendixB,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Color, Case::BurgersSlow, Case::BurgersFast, Case::AdvectionAppendixB];

    pub fn name(&self) -> &'static str {
        match self {
            Case::Color => "color",
            Case::BurgersSlow => "burgers_slow",
            Case::BurgersFast => "burgers_fast",
            Case::AdvectionAppendixB => "advection_appendix_b",
        }
    }

    pub fn parse(s: &str) -> Option<Case> {
        Case::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Parameter box, one `(lo, hi)` per parameter.
    pub fn param_box(&self) -> Vec<(f64, f64)> {
        use std::f64::consts::PI;
        match self {
            Case::Color => vec![(0.25, 0.5), (2.0 * PI, 6.0 * PI), (PI, 1.1 * PI)],
            Case::BurgersSlow => vec![(50.0, 60.0), (0.1, 0.9)],
            Case::BurgersFast => vec![(100.0, 150.0), (0.1, 0.9)],
            Case::AdvectionAppendixB => vec![(1.0, 1.0)],
        }
    }

    pub fn spec(&self, mu: &[f64]) -> Result<ProblemSpec> {
        let n = self.param_box().len();
        if mu.len() != n {
            return Err(MatsError::DimensionMismatch { expected: n, found: mu.len() });
        }
        let spec = match self {
            Case::Color => ProblemSpec::color([mu[0], mu[1], mu[2]]),
            Case::BurgersSlow | Case::BurgersFast => ProblemSpec::burgers([mu[0], mu[1]]),
            Case::AdvectionAppendixB => ProblemSpec::advection(
                mu[0],
                0.0,
                5.0,
                InitialCondition::CosineHump { center: 1.0, half_width: 0.5 },
                0.5,
            ),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn local_times(&self, mu: &[f64]) -> Vec<f64> {
        let step = match self {
            Case::Color | Case::AdvectionAppendixB => 0.02,
            Case::BurgersSlow => 0.1 / mu[0],
            Case::BurgersFast => 0.01 / mu[0],
        };
        (0..5).map(|i| step * i as f64).collect()
    }

    /// Global times beyond the local ones.
    pub fn global_times(&self, mu: &[f64]) -> Vec<f64> {
        match self {
            Case::Color => (1..=10).map(|i| 0.1 * i as f64).collect(),
            Case::AdvectionAppendixB => (1..=5).map(|i| 0.1 * i as f64).collect(),
            Case::BurgersSlow => (0..10).map(|i| (0.5 + 1.95 * i as f64) / mu[0]).collect(),
            Case::BurgersFast => (0..10).map(|i| (0.05 + 5.55 * i as f64) / mu[0]).collect(),
        }
    }

    fn default_steps(&self) -> StepRule {
        match self {
            Case::Color => StepRule::Fixed(2400),
            Case::BurgersSlow => StepRule::Fixed(200),
            Case::BurgersFast => StepRule::Rule("shock_time".into()),
            Case::AdvectionAppendixB => StepRule::Rule("final_time".into()),
        }
    }

    fn default_full_lambda(&self) -> f64 {
        match self {
            // the color speed reaches about 2.1, so 0.5 would break the CFL bound
            Case::Color => 0.45,
            // unit speed at unit CFL number: the scheme is an exact shift
            Case::AdvectionAppendixB => 1.0,
            _ => 0.5,
        }
    }

    /// Relative flat tolerance for the decompositions. Too small and diffused
    /// tails distort the maps; too large and pieces merge or the signature breaks.
    fn default_flat_tol_rel(&self) -> f64 {
        match self {
            Case::BurgersSlow | Case::BurgersFast => 1e-3,
            // exact shifts have no diffused tails
            Case::AdvectionAppendixB => 1e-12,
            _ => 1e-4,
        }
    }

    fn default_nm(&self) -> (usize, usize) {
        match self {
            Case::Color => (12, 4),
            Case::BurgersSlow | Case::BurgersFast => (5, 4),
            Case::AdvectionAppendixB => (6, 2),
        }
    }
}

/// Number of online steps: a fixed count or a named parameter-dependent rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepRule {
    Fixed(usize),
    /// `"shock_time"`: `⌊(10/µ₁)/Δt⌋`; `"final_time"`: `⌊t_final/Δt⌋`.
    Rule(String),
}

impl StepRule {
    pub fn steps(&self, spec: &ProblemSpec, dt: f64) -> Result<usize> {
        match self {
            StepRule::Fixed(k) => Ok(*k),
            StepRule::Rule(r) if r == "shock_time" => Ok(((10.0 / spec.mu[0]) / dt).floor() as usize),
            StepRule::Rule(r) if r == "final_time" => Ok((spec.t_final / dt * (1.0 + 1e-12)).floor() as usize),
            StepRule::Rule(r) => Err(MatsError::Config(format!("unknown step rule {r:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestMu {
    List(Vec<Vec<f64>>),
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    /// Full-model grid nodes.
    pub n_delta: usize,
    /// Reduced-model Δt/Δx.
    pub lambda: f64,
    /// Full-model Δt/Δx, for snapshots and references.
    pub full_lambda: f64,
    pub n_train_mu: usize,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n_local: usize,
    #[serde(rename = "M")]
    pub n_modes: usize,
    #[serde(rename = "K")]
    pub steps: StepRule,
    pub test_mu: TestMu,
    pub output_dir: PathBuf,
    pub every_steps: usize,
    pub flat_tol_rel: f64,
    pub snapshot_weights: [f64; 4],
    pub literal_s2: bool,
    pub gap_floor_rel: f64,
    pub grad_floor_rel: f64,
    pub write_snapshots: bool,
    pub sweep_n: Vec<usize>,
    pub sweep_m: Vec<usize>,
    pub timing_n_delta: Vec<usize>,
    pub timing_steps: usize,
    pub timing_train_mu: usize,
}

impl ExperimentConfig {
    pub fn defaults(case: Case) -> Self {
        let (n, m) = case.default_nm();
        Self {
            case,
            n_delta: 2048,
            lambda: 0.5,
            full_lambda: case.default_full_lambda(),
            n_train_mu: if case == Case::AdvectionAppendixB { 1 } else { 25 },
            seed: 20200101,
            n_local: n,
            n_modes: m,
            steps: case.default_steps(),
            test_mu: TestMu::Random { count: if case == Case::AdvectionAppendixB { 1 } else { 10 }, seed: 20200102 },
            output_dir: PathBuf::from(format!("out/{}", case.name())),
            every_steps: match case {
                Case::Color => 100,
                Case::BurgersSlow => 20,
                Case::BurgersFast => 5,
                Case::AdvectionAppendixB => 10,
            },
            flat_tol_rel: case.default_flat_tol_rel(),
            snapshot_weights: [1.0; 4],
            literal_s2: false,
            gap_floor_rel: 0.1,
            grad_floor_rel: 1e-8,
            write_snapshots: false,
            sweep_n: (2..=12).collect(),
            sweep_m: (2..=6).collect(),
            timing_n_delta: (9..=14).map(|p| 1 << p).collect(),
            timing_steps: 1000,
            timing_train_mu: 3,
        }
    }

    /// Parses a TOML config; absent keys take the defaults of its `case`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| MatsError::Config(e.to_string()))?;
        let case = match user.get("case") {
            None => Case::Color,
            Some(toml::Value::String(s)) => Case::parse(s).ok_or_else(|| MatsError::Config(format!("unknown case {s:?}")))?,
            Some(v) => return Err(MatsError::Config(format!("case must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(Self::defaults(case)).map_err(|e| MatsError::Config(e.to_string()))?;
        for (k, v) in user {
            if !merged.contains_key(&k) {
                return Err(MatsError::Config(format!("unknown key {k:?}")));
            }
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| MatsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MatsError::Config(m));
        if self.n_local <= self.n_modes {
            return bad(format!("N = {} must exceed M = {}", self.n_local, self.n_modes));
        }
        if self.n_modes == 0 {
            return bad("M must be at least 1".into());
        }
        if self.n_delta < 3 {
            return bad(format!("n_delta = {} is too small", self.n_delta));
        }
        if !(self.lambda > 0.0) || !(self.full_lambda > 0.0) {
            return bad("lambda and full_lambda must be positive".into());
        }
        if self.n_train_mu == 0 || self.every_steps == 0 {
            return bad("n_train_mu and every_steps must be positive".into());
        }
        if let StepRule::Rule(r) = &self.steps {
            if r != "shock_time" && r != "final_time" {
                return bad(format!("unknown step rule {r:?}"));
            }
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            n_local: self.n_local,
            n_modes: self.n_modes,
            flat_tol_rel: self.flat_tol_rel,
            snapshot_weights: self.snapshot_weights,
        }
    }

    pub fn online_options(&self) -> OnlineOptions {
        OnlineOptions {
            lambda: self.lambda,
            literal_s2: self.literal_s2,
            gap_floor_rel: self.gap_floor_rel,
            grad_floor_rel: self.grad_floor_rel,
        }
    }

    pub fn bundle_meta(&self) -> BundleMeta {
        BundleMeta {
            case: self.case.name().into(),
            kind: self.case.spec(&box_center(&self.case.param_box())).map(|s| s.kind).expect("center is valid"),
            lambda: self.lambda,
            seed: self.seed,
            rng: RNG_NAME.into(),
            flat_tol_rel: self.flat_tol_rel,
            n_local_snapshots: 0,
            n_global_snapshots: 0,
        }
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.output_dir.join("bundle.mats")
    }

    fn header_comments(&self) -> Vec<String> {
        vec![
            format!("case {} n_delta {} lambda {} full_lambda {}", self.case.name(), self.n_delta, self.lambda, self.full_lambda),
            format!("rng {} seed {} test_mu {}", RNG_NAME, self.seed, serde_json::to_string(&self.test_mu).unwrap()),
        ]
    }
}

fn box_center(b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
}

/// `count` uniform samples from the box.
pub fn sample_box(b: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| b.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect())
        .collect()
}

pub fn training_mu(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    sample_box(&cfg.case.param_box(), cfg.n_train_mu, cfg.seed)
}

pub fn test_mu(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    match &cfg.test_mu {
        TestMu::List(l) => l.clone(),
        TestMu::Random { count, seed } => sample_box(&cfg.case.param_box(), *count, *seed),
    }
}

pub fn sampling_plan(cfg: &ExperimentConfig, mus: &[Vec<f64>]) -> Result<SamplingPlan> {
    let specs = mus
        .iter()
        .map(|mu| Ok(cfg.case.spec(mu)?.with_lambda(cfg.full_lambda)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplingPlan {
        local_times: mus.iter().map(|mu| cfg.case.local_times(mu)).collect(),
        global_times: mus.iter().map(|mu| cfg.case.global_times(mu)).collect(),
        specs,
    })
}

pub fn collect_training_snapshots(cfg: &ExperimentConfig) -> Result<SnapshotSet> {
    let plan = sampling_plan(cfg, &training_mu(cfg))?;
    collect_snapshots(&plan, cfg.n_delta)
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub bundle: OfflineBundle,
    pub report: OfflineReport,
    pub snapshots: SnapshotSet,
}

pub fn run_offline(cfg: &ExperimentConfig) -> Result<OfflineOutcome> {
    cfg.validate()?;
    let snapshots = collect_training_snapshots(cfg)?;
    let (bundle, report) = train(&snapshots, &cfg.train_options(), cfg.bundle_meta())?;
    Ok(OfflineOutcome { bundle, report, snapshots })
}

/// Writes the bundle, the offline spectra CSV and, if enabled, every snapshot.
pub fn write_offline_artifacts(cfg: &ExperimentConfig, out: &OfflineOutcome) -> Result<()> {
    out.bundle.save(&cfg.bundle_path())?;
    let r = &out.report;
    let rows: Vec<Vec<String>> = (0..r.transport_eigenvalues.len().max(r.singular_values.len()))
        .map(|i| {
            let cell = |v: &[f64]| v.get(i).map(|x| x.to_string()).unwrap_or_default();
            vec![(i + 1).to_string(), cell(&r.transport_eigenvalues), cell(&r.singular_values)]
        })
        .collect();
    let mut comments = cfg.header_comments();
    comments.push(format!(
        "signature {} local_snapshots {} global_snapshots {} cond_Z {} cond_Vq {}",
        r.signature, r.n_local_snapshots, r.n_global_snapshots, r.z_condition, r.vq_condition
    ));
    io::write_csv(
        &cfg.output_dir.join("offline_spectra.csv"),
        &comments,
        &["index", "transport_eigenvalue [length^2]", "local_singular_value [1]"],
        &rows,
    )?;
    if cfg.write_snapshots {
        let mus = training_mu(cfg);
        for s in &out.snapshots.global {
            let mu = &mus[s.mu_index];
            io::write_snapshot(&io::snapshot_path(&cfg.output_dir, cfg.case.name(), mu, s.t_requested), &s.u, s.t, mu)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub k: usize,
    pub t: f64,
    pub rel_l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub test_index: usize,
    pub mu: Vec<f64>,
    pub k_target: usize,
    pub k_done: usize,
    pub stop: Option<StopReason>,
    pub samples: Vec<ErrorSample>,
    /// Stopped before `k_target`; excluded from every average.
    pub discarded: bool,
    pub trajectory: Trajectory,
}

impl RunRecord {
    /// Time average of the sampled relative errors.
    pub fn mean_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_l1).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub n_local: usize,
    pub n_modes: usize,
    pub runs: Vec<RunRecord>,
}

impl ErrorReport {
    pub fn n_completed(&self) -> usize {
        self.runs.iter().filter(|r| !r.discarded).count()
    }

    pub fn n_discarded(&self) -> usize {
        self.runs.len() - self.n_completed()
    }

    /// Mean of the per-run time averages over completed runs only.
    pub fn mean_over_completed(&self) -> Option<f64> {
        let done: Vec<f64> = self.runs.iter().filter(|r| !r.discarded).map(|r| r.mean_error()).collect();
        (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64)
    }
}

/// `‖û − u‖₁ / ‖u‖₁`.
pub fn relative_l1(approx: &GridFn, reference: &GridFn) -> f64 {
    approx.l1_distance(reference) / reference.l1_norm()
}

/// One reduced run for one test parameter, compared against the full model
/// every `every_steps` steps.
pub fn evaluate_mu(cfg: &ExperimentConfig, bundle: &OfflineBundle, test_index: usize, mu: &[f64]) -> Result<RunRecord> {
    let spec = cfg.case.spec(mu)?;
    let model = ReducedModel::new(bundle, &spec.clone().with_lambda(cfg.lambda), cfg.online_options())?;
    let dt = model.dt();
    let k_target = cfg.steps.steps(&spec, dt)?;
    let u0 = GridFn::from_fn(bundle.grid, |x| spec.u0(x));
    let mut rows: Vec<(f64, ReducedState)> = Vec::with_capacity(k_target + 1);
    let (last, stop) = model.run(model.initialize(&u0), k_target, |s| rows.push((s.step as f64 * dt, s.clone())))?;
    let stop = stop.map(|(_, r)| r);

    let mut sample_k: Vec<usize> = (0..=last.step).step_by(cfg.every_steps).collect();
    if sample_k.last() != Some(&last.step) {
        sample_k.push(last.step);
    }
    let times: Vec<f64> = sample_k.iter().map(|&k| k as f64 * dt).collect();
    let mut ref_spec = spec.with_lambda(cfg.full_lambda);
    ref_spec.t_final = ref_spec.t_final.max(times.last().copied().unwrap_or(0.0));
    let reference = solve_full_interpolated(&ref_spec, bundle.grid, &times)?;
    let mut samples = Vec::with_capacity(sample_k.len());
    for ((&k, &t), u_ref) in sample_k.iter().zip(&times).zip(&reference) {
        let u = reconstruct(&rows[k].1, bundle)?;
        samples.push(ErrorSample { k, t, rel_l1: relative_l1(&u, u_ref) });
    }
    let discarded = stop.is_some() || last.step < k_target;
    let trajectory = Trajectory {
        mu: mu.to_vec(),
        n_local: bundle.n_local(),
        n_modes: bundle.n_modes(),
        lambda: cfg.lambda,
        k_target,
        stop,
        rows,
    };
    Ok(RunRecord { test_index, mu: mu.to_vec(), k_target, k_done: last.step, stop, samples, discarded, trajectory })
}

pub fn run_online(cfg: &ExperimentConfig, bundle: &OfflineBundle) -> Result<ErrorReport> {
    if bundle.meta.case != cfg.case.name() {
        return Err(MatsError::Config(format!("bundle was built for {:?}, config is {:?}", bundle.meta.case, cfg.case.name())));
    }
    let runs = test_mu(cfg)
        .iter()
        .enumerate()
        .map(|(i, mu)| evaluate_mu(cfg, bundle, i, mu))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport { n_local: bundle.n_local(), n_modes: bundle.n_modes(), runs })
}

fn fmt_mu(mu: &[f64]) -> String {
    mu.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ")
}

/// `errors.csv` (time series), `runs.csv` (per-run summary) and one trajectory per run.
pub fn write_online_artifacts(cfg: &ExperimentConfig, report: &ErrorReport) -> Result<()> {
    let dir = &cfg.output_dir;
    let mut comments = cfg.header_comments();
    comments.push(format!("N {} M {}", report.n_local, report.n_modes));
    let series: Vec<Vec<String>> = report
        .runs
        .iter()
        .flat_map(|r| {
            r.samples.iter().map(move |s| vec![r.test_index.to_string(), s.k.to_string(), s.t.to_string(), s.rel_l1.to_string()])
        })
        .collect();
    io::write_csv(&dir.join("errors.csv"), &comments, &["test_index", "k [steps]", "t [time]", "rel_l1_error [1]"], &series)?;
    let runs: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| {
            vec![
                r.test_index.to_string(),
                fmt_mu(&r.mu),
                r.k_target.to_string(),
                r.k_done.to_string(),
                r.stop.map(|s| s.as_str()).unwrap_or("none").to_string(),
                r.discarded.to_string(),
                r.mean_error().to_string(),
            ]
        })
        .collect();
    comments.push(format!(
        "completed {} discarded {} mean_over_completed {}",
        report.n_completed(),
        report.n_discarded(),
        report.mean_over_completed().map(|m| m.to_string()).unwrap_or_else(|| "none".into())
    ));
    io::write_csv(
        &dir.join("runs.csv"),
        &comments,
        &["test_index", "mu", "K [steps]", "steps_done [steps]", "stop_reason", "discarded", "mean_rel_l1_error [1]"],
        &runs,
    )?;
    for r in &report.runs {
        io::write_trajectory(&dir.join("trajectories").join(format!("test_{:02}.traj", r.test_index)), &r.trajectory)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n_local: usize,
    pub n_modes: usize,
    /// `Err` holds the offline failure, e.g. a rank-deficient basis.
    pub outcome: std::result::Result<ErrorReport, String>,
}

/// Offline and online runs for every `N > M` pair, reusing one snapshot set.
pub fn sweep_nm(cfg: &ExperimentConfig, n_list: &[usize], m_list: &[usize]) -> Result<Vec<SweepCell>> {
    let pairs: Vec<(usize, usize)> =
        n_list.iter().flat_map(|&n| m_list.iter().filter(move |&&m| n > m).map(move |&m| (n, m))).collect();
    let snapshots = collect_training_snapshots(cfg)?;
    let bundles = train_grid(&snapshots, &pairs, &cfg.train_options(), cfg.bundle_meta())?;
    pairs
        .iter()
        .zip(bundles)
        .map(|(&(n, m), b)| {
            let outcome = match b {
                Ok((bundle, _)) => Ok(run_online(cfg, &bundle)?),
                Err(e) => Err(e.to_string()),
            };
            Ok(SweepCell { n_local: n, n_modes: m, outcome })
        })
        .collect()
}

/// `sweep.csv` in long form and `sweep_matrix.csv` with N rows and M columns.
pub fn write_sweep_artifacts(cfg: &ExperimentConfig, cells: &[SweepCell]) -> Result<()> {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let (mean, done, disc, status) = match &c.outcome {
                Ok(r) => (
                    r.mean_over_completed().map(|m| m.to_string()).unwrap_or_default(),
                    r.n_completed().to_string(),
                    r.n_discarded().to_string(),
                    "ok".to_string(),
                ),
                Err(e) => (String::new(), "0".into(), "0".into(), e.replace(',', ";")),
            };
            vec![c.n_local.to_string(), c.n_modes.to_string(), mean, done, disc, status]
        })
        .collect();
    let comments = cfg.header_comments();
    io::write_csv(
        &cfg.output_dir.join("sweep.csv"),
        &comments,
        &["N", "M", "mean_rel_l1_error [1]", "completed", "discarded", "status"],
        &rows,
    )?;
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n_local).collect();
    let mut ms: Vec<usize> = cells.iter().map(|c| c.n_modes).collect();
    ns.sort_unstable();
    ns.dedup();
    ms.sort_unstable();
    ms.dedup();
    let matrix: Vec<Vec<String>> = ns
        .iter()
        .map(|&n| {
            let mut row = vec![n.to_string()];
            for &m in &ms {
                let v = cells.iter().find(|c| c.n_local == n && c.n_modes == m).and_then(|c| c.outcome.as_ref().ok());
                // cells with any discarded run stay empty
                row.push(match v {
                    Some(r) if r.n_discarded() == 0 => r.mean_over_completed().map(|x| x.to_string()).unwrap_or_default(),
                    _ => String::new(),
                });
            }
            row
        })
        .collect();
    let header: Vec<String> = std::iter::once("N \\ M".to_string()).chain(ms.iter().map(|m| m.to_string())).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut comments = comments;
    comments.push("mean relative L1 error over test parameters; empty when any run was discarded or training failed".into());
    io::write_csv(&cfg.output_dir.join("sweep_matrix.csv"), &comments, &header, &matrix)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub n_delta: usize,
    pub full_step_s: f64,
    pub reduced_step_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall time of one reduced step; a stopped run restarts from `initial`.
fn timed_reduced_step(model: &ReducedModel, initial: &ReducedState, state: &mut ReducedState) -> Result<f64> {
    let t0 = Instant::now();
    let out = model.step(state)?;
    let dt = t0.elapsed().as_secs_f64();
    *state = match out {
        crate::online::StepOutcome::Advanced(s) => s,
        crate::online::StepOutcome::Stopped(_) => initial.clone(),
    };
    Ok(dt)
}

fn timed_full_step(model: &mut FullModel) -> Result<f64> {
    let t0 = Instant::now();
    model.advance()?;
    Ok(t0.elapsed().as_secs_f64())
}

/// Rounds of timed steps per grid size; the first round is an untimed warm-up.
const TIMING_ROUNDS: usize = 10;

/// Per-step timing of both models across `n_delta_list` at fixed `(N, M)`.
/// Each grid size gets its own bundle trained on `timing_train_mu` samples.
/// The flat tolerance is rescaled with the spacing so that it bounds slopes
/// rather than nodal increments. Grid sizes are timed in interleaved rounds
/// so that machine noise spreads evenly over them; each row holds the median
/// over `timing_steps` steps.
pub fn runtime_scaling(cfg: &ExperimentConfig, n_delta_list: &[usize]) -> Result<Vec<TimingRow>> {
    let mu = test_mu(cfg).into_iter().next().ok_or_else(|| MatsError::Config("no test parameter".into()))?;
    let spec = cfg.case.spec(&mu)?;
    let bundles = n_delta_list
        .iter()
        .map(|&n_delta| {
            let c = ExperimentConfig {
                n_delta,
                n_train_mu: cfg.timing_train_mu,
                flat_tol_rel: cfg.flat_tol_rel * cfg.n_delta as f64 / n_delta as f64,
                ..cfg.clone()
            };
            Ok(run_offline(&c)?.bundle)
        })
        .collect::<Result<Vec<_>>>()?;
    let reduced_spec = spec.clone().with_lambda(cfg.lambda);
    let models = bundles.iter().map(|b| ReducedModel::new(b, &reduced_spec, cfg.online_options())).collect::<Result<Vec<_>>>()?;
    let initial: Vec<ReducedState> =
        models.iter().zip(&bundles).map(|(m, b)| m.initialize(&GridFn::from_fn(b.grid, |x| spec.u0(x)))).collect();
    let mut states = initial.clone();
    let full_spec = spec.clone().with_lambda(cfg.full_lambda);
    let mut full = n_delta_list.iter().map(|&n| FullModel::new(&full_spec, full_spec.grid(n)?)).collect::<Result<Vec<_>>>()?;
    let batch = cfg.timing_steps.div_ceil(TIMING_ROUNDS);
    let mut reduced_t = vec![Vec::new(); n_delta_list.len()];
    let mut full_t = vec![Vec::new(); n_delta_list.len()];
    for round in 0..=TIMING_ROUNDS {
        for g in 0..n_delta_list.len() {
            for _ in 0..batch {
                let r = timed_reduced_step(&models[g], &initial[g], &mut states[g])?;
                let f = timed_full_step(&mut full[g])?;
                if round > 0 {
                    reduced_t[g].push(r);
                    full_t[g].push(f);
                }
            }
        }
    }
    Ok(n_delta_list
        .iter()
        .zip(reduced_t.into_iter().zip(full_t))
        .map(|(&n_delta, (r, f))| TimingRow { n_delta, full_step_s: median(f), reduced_step_s: median(r) })
        .collect())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_timing_artifacts(cfg: &ExperimentConfig, rows: &[TimingRow]) -> Result<()> {
    let data: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n_delta.to_string(),
                format!("{:.6e}", r.full_step_s),
                format!("{:.6e}", r.reduced_step_s),
                format!("{:.3}", r.full_step_s / r.reduced_step_s),
            ]
        })
        .collect();
    let mut comments = cfg.header_comments();
    comments.push(format!("N {} M {} median over {} steps", cfg.n_local, cfg.n_modes, cfg.timing_steps));
    io::write_csv(
        &cfg.output_dir.join("timing.csv"),
        &comments,
        &["n_delta", "full_step [s]", "reduced_step [s]", "speedup [1]"],
        &data,
    )
}

/// Reconstructs every trajectory row on the bundle grid as snapshot files `<out>/<k>.dat`.
pub fn reconstruct_trajectory(bundle: &OfflineBundle, traj: &Trajectory, out: &Path) -> Result<usize> {
    if traj.n_local != bundle.n_local() || traj.n_modes != bundle.n_modes() {
        return Err(MatsError::DimensionMismatch { expected: bundle.n_local(), found: traj.n_local });
    }
    for (t, state) in &traj.rows {
        let u = reconstruct(state, bundle)?;
        io::write_snapshot(&out.join(format!("{:06}.dat", state.step)), &u, *t, &traj.mu)?;
    }
    Ok(traj.rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for case in Case::ALL {
            let d = ExperimentConfig::defaults(case);
            let back = ExperimentConfig::from_toml(&d.to_toml()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn partial_config_takes_case_defaults() {
        let c = ExperimentConfig::from_toml("case = \"burgers_fast\"\nN = 6\nM = 5\n").unwrap();
        assert_eq!(c.steps, StepRule::Rule("shock_time".into()));
        assert_eq!((c.n_local, c.n_modes), (6, 5));
        assert_eq!(c.full_lambda, 0.5);
        assert!(ExperimentConfig::from_toml("N = 3\nM = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        let c = ExperimentConfig::from_toml("test_mu = [[0.3, 7.0, 3.3]]\nK = 10\n").unwrap();
        assert_eq!(c.test_mu, TestMu::List(vec![vec![0.3, 7.0, 3.3]]));
        assert_eq!(c.steps, StepRule::Fixed(10));
    }

    #[test]
    fn color_plan_sizes() {
        let cfg = ExperimentConfig::defaults(Case::Color);
        let mus = training_mu(&cfg);
        assert_eq!(mus.len(), 25);
        let plan = sampling_plan(&cfg, &mus).unwrap();
        let n_local: usize = plan.local_times.iter().map(Vec::len).sum();
        let n_global: usize = n_local + plan.global_times.iter().map(Vec::len).sum::<usize>();
        assert_eq!((n_local, n_global), (125, 375));
        for mu in &mus {
            for (v, (lo, hi)) in mu.iter().zip(Case::Color.param_box()) {
                assert!(*v >= lo && *v < hi);
            }
        }
        assert_eq!(mus, training_mu(&cfg));
    }

    #[test]
    fn burgers_times_scale_with_rate() {
        let mu = [120.0, 0.5];
        let g = Case::BurgersFast.global_times(&mu);
        assert_eq!(g.len(), 10);
        assert!((g[9] - 50.0 / 120.0).abs() < 1e-15);
        assert!((Case::BurgersSlow.local_times(&mu)[4] - 0.4 / 120.0).abs() < 1e-15);
        let spec = Case::BurgersFast.spec(&mu).unwrap();
        assert_eq!(StepRule::Rule("shock_time".into()).steps(&spec, 0.001).unwrap(), 83);
        assert!(StepRule::Rule("never".into()).steps(&spec, 0.001).is_err());
    }

    #[test]
    fn median_and_slope() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn relative_l1_of_self_is_zero() {
        let grid = crate::pwl::Grid::new(0.0, 1.0, 11).unwrap();
        let u = GridFn::from_fn(grid, |x| x * x + 0.1);
        assert_eq!(relative_l1(&u, &u), 0.0);
    }
}
