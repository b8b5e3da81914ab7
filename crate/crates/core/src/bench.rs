//! F-16 benchmark constants, experiment configuration and run orchestration
//! behind the command-line tool.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gare::{closed_loop_stability, solve_coupled_gare, SolveReport};
use crate::model::{
    AlgoConfig, CostSpec, ExpectationMode, GainPair, NoiseCase, SdltiSystem, StopRule, SystemParts,
    ValuePair,
};
use crate::oracle::SimOracle;
use crate::qlearn::{
    run_q_learning, run_value_iteration, AbortCause, QLearnReport, Reference, Termination,
};
use crate::report::{fmt_sig12, parse_blocks, read_matrix_file, write_labelled};
use crate::scalar::{lit, Scalar};
use crate::sim::{simulate_closed_loop, NoiseSource};

/// Seed used when neither the config nor the command line sets one.
pub const SEED_ENV: &str = "STOCH_H2HINF_SEED";

fn mat<T: Scalar>(rows: usize, cols: usize, data: &[f64]) -> DMatrix<T> {
    DMatrix::from_row_slice(rows, cols, data).map(lit)
}

pub fn f16_parts<T: Scalar>() -> SystemParts<T> {
    SystemParts::infer(
        mat(
            3,
            3,
            &[
                0.906488,
                0.0816012,
                -0.0005, //
                0.0741349,
                0.90121,
                -0.000708383, //
                0.0,
                0.0,
                0.132655,
            ],
        ),
        mat(
            3,
            3,
            &[
                0.0072, 0.0026, 0.0001, //
                0.0041, 0.0917, 0.0072, //
                0.0, 0.0, 0.0505,
            ],
        ),
        mat(3, 1, &[-0.00150808, -0.0096, 0.867345]),
        mat(3, 1, &[0.00951892, 0.00038373, 0.0]),
        mat(3, 1, &[0.00156, 0.00037, 0.0]),
    )
}

/// The benchmark plant with `γ = 1`, `Q = I`.
pub fn f16_system<T: Scalar>() -> (SdltiSystem<T>, CostSpec<T>) {
    let sys = f16_parts()
        .build()
        .expect("benchmark matrices are consistent");
    let cost = CostSpec::identity(T::one(), 3).expect("identity weight is valid");
    (sys, cost)
}

/// Published solution, rounded to four decimals.
pub fn f16_reference<T: Scalar>() -> (ValuePair<T>, GainPair<T>) {
    let p1 = mat(
        3,
        3,
        &[
            -16.3448, -13.4481, 0.0079, //
            -13.4481, -17.2342, 0.0067, //
            0.0079, 0.0067, -1.0101,
        ],
    );
    let p2 = mat(
        3,
        3,
        &[
            16.9864, 14.0870, -0.0082, //
            14.0870, 17.8859, -0.0070, //
            -0.0082, -0.0070, 1.0101,
        ],
    );
    let k1 = mat(1, 3, &[0.1559, 0.1353, 0.0]);
    let k2 = mat(1, 3, &[0.0949, 0.1097, -0.0661]);
    (
        ValuePair::new(p1, p2).expect("symmetric"),
        GainPair::new(k1, k2).expect("finite"),
    )
}

/// Non-optimal starting gains of the benchmark.
pub fn f16_initial_gains<T: Scalar>() -> GainPair<T> {
    GainPair::new(
        mat(1, 3, &[0.6305, 1.6421, -1.0436]),
        mat(1, 3, &[2.7695, 0.1328, -0.1702]),
    )
    .expect("finite")
}

pub fn f16_x0<T: Scalar>() -> DVector<T> {
    DVector::from_vec(vec![10.0, 5.0, -2.0]).map(lit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Vi,
    Qlearn,
    Simulate,
    BenchF16,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => Command::Solve,
            "vi" => Command::Vi,
            "qlearn" => Command::Qlearn,
            "simulate" => Command::Simulate,
            "bench-f16" => Command::BenchF16,
            other => return Err(Error::InvalidConfig(format!("unknown command {other:?}"))),
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Solve => "solve",
            Command::Vi => "vi",
            Command::Qlearn => "qlearn",
            Command::Simulate => "simulate",
            Command::BenchF16 => "bench-f16",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SystemSource {
    F16,
    /// Directory holding `A1.txt A2.txt B1.txt C1.txt C2.txt`.
    Dir(PathBuf),
}

impl SystemSource {
    pub fn parse(s: &str) -> Self {
        if s == "f16" {
            SystemSource::F16
        } else {
            SystemSource::Dir(PathBuf::from(s))
        }
    }
}

impl fmt::Display for SystemSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemSource::F16 => f.write_str("f16"),
            SystemSource::Dir(p) => write!(f, "{}", p.display()),
        }
    }
}

/// What the error columns of a run are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    /// Published values for the builtin system, the model-based solve otherwise.
    #[default]
    Auto,
    None,
    Published,
    Solve,
}

impl ReferenceMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "auto" => ReferenceMode::Auto,
            "none" | "off" => ReferenceMode::None,
            "published" => ReferenceMode::Published,
            "solve" => ReferenceMode::Solve,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown reference mode {other:?}"
                )))
            }
        })
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceMode::Auto => "auto",
            ReferenceMode::None => "none",
            ReferenceMode::Published => "published",
            ReferenceMode::Solve => "solve",
        })
    }
}

/// Flat `key = value` configuration. Every field can be set from a file or
/// a command-line flag; [`ExperimentConfig::to_kv`] writes a file that
/// reproduces the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub system: SystemSource,
    pub gamma: f64,
    /// State weight file; identity when absent.
    pub q_file: Option<PathBuf>,
    pub algo: AlgoConfig<f64>,
    /// Whether `algo.seed` was set explicitly (otherwise the environment is consulted).
    pub seed_set: bool,
    pub x0: Option<Vec<f64>>,
    /// Initial gains file for `qlearn` (`# K1` / `# K2` blocks).
    pub initial_gains: Option<PathBuf>,
    /// Gains file for `simulate`; the model-based solution when absent.
    pub gains: Option<PathBuf>,
    pub steps: usize,
    pub out: PathBuf,
    pub reference: ReferenceMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Solve,
            system: SystemSource::F16,
            gamma: 1.0,
            q_file: None,
            algo: AlgoConfig::default(),
            seed_set: false,
            x0: None,
            initial_gains: None,
            gains: None,
            steps: 100,
            out: PathBuf::from("out"),
            reference: ReferenceMode::Auto,
        }
    }
}

fn parse_num<F: std::str::FromStr>(key: &str, value: &str) -> Result<F> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl ExperimentConfig {
    /// Reads a config file; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "command" => self.command = Command::parse(value)?,
            "system" => self.system = SystemSource::parse(value),
            "gamma" => self.gamma = parse_num(key, value)?,
            "q" => self.q_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            "case" => {
                self.algo.noise_case = match value {
                    "1" => NoiseCase::Case1,
                    "2" => NoiseCase::Case2,
                    "3" => NoiseCase::Case3,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "case must be 1, 2 or 3, got {other:?}"
                        )))
                    }
                }
            }
            "seed" => {
                self.algo.seed = parse_num(key, value)?;
                self.seed_set = true;
            }
            "tol" => self.algo.tol = parse_num(key, value)?,
            "max_iters" => self.algo.max_iters = parse_num(key, value)?,
            "tuples" => self.algo.tuples_per_iter = parse_num(key, value)?,
            "branches" => self.algo.branches = parse_num(key, value)?,
            "mode" => {
                self.algo.expectation_mode = match value {
                    "analytic" => ExpectationMode::Analytic,
                    "mc" => ExpectationMode::MonteCarlo,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "mode must be analytic or mc, got {other:?}"
                        )))
                    }
                }
            }
            "stop_rule" => {
                self.algo.stop_rule = match value {
                    "same" => StopRule::SameQ,
                    "cross" => StopRule::CrossQ,
                    other => {
                        return Err(Error::InvalidConfig(format!("unknown stop rule {other:?}")))
                    }
                }
            }
            "eval_steps" => self.algo.eval_steps = parse_num(key, value)?,
            "x0" => {
                self.x0 = if value.is_empty() {
                    None
                } else {
                    Some(
                        value
                            .split([',', ' '])
                            .filter(|s| !s.is_empty())
                            .map(|s| parse_num(key, s))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "initial_gains" => {
                self.initial_gains = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            "gains" => self.gains = (!value.is_empty()).then(|| PathBuf::from(value)),
            "steps" => self.steps = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "reference" => self.reference = ReferenceMode::parse(value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Falls back to `STOCH_H2HINF_SEED` when no seed was given.
    pub fn resolve_seed_from_env(&mut self) -> Result<()> {
        if self.seed_set {
            return Ok(());
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.algo.seed = parse_num(SEED_ENV, s.trim())?;
            self.seed_set = true;
        }
        Ok(())
    }

    /// Config echo; parsing it back yields an identical run.
    pub fn to_kv(&self) -> String {
        let opt = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let a = &self.algo;
        let stop = match a.stop_rule {
            StopRule::SameQ => "same",
            StopRule::CrossQ => "cross",
        };
        let x0 = self
            .x0
            .as_ref()
            .map(|v| {
                v.iter()
                    .map(|x| format!("{x:?}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default();
        let lines = [
            ("command", self.command.to_string()),
            ("system", self.system.to_string()),
            ("gamma", format!("{:?}", self.gamma)),
            ("q", opt(&self.q_file)),
            ("case", a.noise_case.to_string()),
            ("seed", a.seed.to_string()),
            ("tol", format!("{:?}", a.tol)),
            ("max_iters", a.max_iters.to_string()),
            ("tuples", a.tuples_per_iter.to_string()),
            ("branches", a.branches.to_string()),
            ("mode", a.expectation_mode.to_string()),
            ("stop_rule", stop.to_string()),
            ("eval_steps", a.eval_steps.to_string()),
            ("x0", x0),
            ("initial_gains", opt(&self.initial_gains)),
            ("gains", opt(&self.gains)),
            ("steps", self.steps.to_string()),
            ("out", self.out.display().to_string()),
            ("reference", self.reference.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    ConfigError,
    NotConverged,
    Infeasible,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::ConfigError => 1,
            ExitStatus::NotConverged => 2,
            ExitStatus::Infeasible => 3,
        }
    }

    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::NotConverged { .. } => ExitStatus::NotConverged,
            Error::GammaInfeasible { .. } | Error::SingularGainBlock => ExitStatus::Infeasible,
            _ => ExitStatus::ConfigError,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExitStatus,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Resolved inputs of a run.
struct Problem {
    sys: SdltiSystem<f64>,
    cost: CostSpec<f64>,
    x0: DVector<f64>,
}

fn load_system(source: &SystemSource) -> Result<SdltiSystem<f64>> {
    match source {
        SystemSource::F16 => Ok(f16_system::<f64>().0),
        SystemSource::Dir(dir) => {
            if !dir.is_dir() {
                return Err(Error::InvalidConfig(format!(
                    "system directory {} not found",
                    dir.display()
                )));
            }
            let read = |name: &str| read_matrix_file(&dir.join(format!("{name}.txt")));
            SystemParts::infer(
                read("A1")?,
                read("A2")?,
                read("B1")?,
                read("C1")?,
                read("C2")?,
            )
            .build()
        }
    }
}

fn load_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let sys = load_system(&cfg.system)?;
    let q = match &cfg.q_file {
        Some(p) => read_matrix_file(p)?,
        None => DMatrix::identity(sys.n(), sys.n()),
    };
    let cost = CostSpec::new(cfg.gamma, q)?;
    if cost.n() != sys.n() {
        return Err(Error::InvalidConfig(format!(
            "Q is {0}x{0}, system has n = {1}",
            cost.n(),
            sys.n()
        )));
    }
    let x0 = match (&cfg.x0, &cfg.system) {
        (Some(v), _) => DVector::from_vec(v.clone()),
        (None, SystemSource::F16) => f16_x0(),
        (None, _) => DVector::from_element(sys.n(), 1.0),
    };
    if x0.len() != sys.n() {
        return Err(Error::InvalidConfig(format!(
            "x0 has {} entries, system has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    Ok(Problem { sys, cost, x0 })
}

fn read_gains(path: &Path, sys: &SdltiSystem<f64>) -> Result<GainPair<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read gains {}: {e}", path.display())))?;
    let mut blocks = parse_blocks(&text)?.into_iter();
    match (blocks.next(), blocks.next(), blocks.next()) {
        (Some(k1), Some(k2), None) => GainPair::for_system(sys, k1, k2),
        _ => Err(Error::Parse(format!(
            "{}: expected K1 and K2 blocks",
            path.display()
        ))),
    }
}

fn reference_for(cfg: &ExperimentConfig, p: &Problem) -> Result<Option<Reference<f64>>> {
    let mode = match (cfg.reference, &cfg.system) {
        (ReferenceMode::Auto, SystemSource::F16) => ReferenceMode::Published,
        (ReferenceMode::Auto, _) => ReferenceMode::Solve,
        (m, _) => m,
    };
    match mode {
        ReferenceMode::None => Ok(None),
        ReferenceMode::Published => {
            if cfg.system != SystemSource::F16 {
                return Err(Error::InvalidConfig(
                    "reference = published needs system = f16".into(),
                ));
            }
            let (values, gains) = f16_reference();
            Ok(Some(Reference { values, gains }))
        }
        _ => {
            let sol = solve_coupled_gare(&p.sys, &p.cost, 1e-10, 100_000)?;
            Ok(Some(Reference {
                values: sol.values,
                gains: sol.gains,
            }))
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| {
            Error::InvalidConfig(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn gains(&mut self, g: &GainPair<f64>) -> Result<()> {
        self.write("gains.txt", |w| {
            write_labelled(w, &[("K1", g.k1()), ("K2", g.k2())])
        })
    }

    fn values(&mut self, v: &ValuePair<f64>) -> Result<()> {
        self.write("values.txt", |w| {
            write_labelled(w, &[("P1", v.p1()), ("P2", v.p2())])
        })
    }
}

/// Convergence CSV plus learned matrices and trajectories of one learning run.
pub fn emit_convergence_report(report: &QLearnReport<f64>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut art = Artifacts::new(dir)?;
    art.write("convergence.csv", |w| report.write_convergence_csv(w))?;
    art.gains(&report.gains)?;
    art.values(&report.values)?;
    if report.learning.steps() > 0 {
        art.write("trajectory.csv", |w| report.learning.write_csv(w))?;
    }
    if let Some(ev) = &report.evaluation {
        art.write("evaluation.csv", |w| ev.write_csv(w))?;
    }
    Ok(art.files)
}

fn summarize_learning(
    report: &QLearnReport<f64>,
    sys: &SdltiSystem<f64>,
    label: &str,
) -> Vec<String> {
    let cert = closed_loop_stability(sys, &report.gains);
    let fmt_row = |m: &DMatrix<f64>| {
        m.iter()
            .map(|&x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = vec![
        format!(
            "{label}: {} after {} iterations",
            report.reason,
            report.iterations()
        ),
        format!("  K1 = [{}]", fmt_row(report.gains.k1())),
        format!("  K2 = [{}]", fmt_row(report.gains.k2())),
        format!(
            "  mean-square radius {:.6} ({})",
            cert.radius,
            if cert.stable { "stable" } else { "UNSTABLE" }
        ),
    ];
    if let Some(last) = report.history.last() {
        if let (Some(k1), Some(k2)) = (last.err_k1, last.err_k2) {
            out.push(format!(
                "  |K1 - K1ref| = {k1:.3e}, |K2 - K2ref| = {k2:.3e}"
            ));
        }
    }
    out
}

fn learn(
    cfg: &ExperimentConfig,
    p: &Problem,
    reference: Option<&Reference<f64>>,
) -> Result<QLearnReport<f64>> {
    let init = match (&cfg.initial_gains, &cfg.system) {
        (Some(path), _) => read_gains(path, &p.sys)?,
        (None, SystemSource::F16) => f16_initial_gains(),
        (None, _) => GainPair::zeros(p.sys.dims()),
    };
    let mut oracle = SimOracle::new(p.sys.clone(), cfg.algo.seed);
    run_q_learning(&mut oracle, &p.cost, &cfg.algo, &init, &p.x0, reference)
}

fn learning_status(report: &QLearnReport<f64>) -> ExitStatus {
    match report.termination {
        Termination::Converged { .. } => ExitStatus::Success,
        Termination::Aborted {
            cause: AbortCause::Infeasible,
            ..
        } => ExitStatus::Infeasible,
        _ => ExitStatus::NotConverged,
    }
}

/// Runs the configured command and writes its artifacts under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let p = load_problem(cfg)?;
    let mut art = Artifacts::new(&cfg.out)?;
    let mut summary = Vec::new();
    let mut status = ExitStatus::Success;

    match cfg.command {
        Command::Solve => {
            let sol: SolveReport<f64> =
                solve_coupled_gare(&p.sys, &p.cost, cfg.algo.tol.min(1e-9), 100_000)?;
            art.write("convergence.csv", |w| sol.write_csv(w))?;
            art.gains(&sol.gains)?;
            art.values(&sol.values)?;
            summary.push(format!(
                "solve: converged in {} iterations, residuals {:.3e} / {:.3e}, mean-square radius {:.6}",
                sol.iterations, sol.residual_norms.0, sol.residual_norms.1, sol.stability.radius
            ));
            if !sol.stable() {
                summary.push("warning: closed loop is not mean-square stable".into());
            }
        }
        Command::Vi => {
            let reference = reference_for(cfg, &p)?;
            let report =
                run_value_iteration(&p.sys, &p.cost, &cfg.algo, &p.x0, reference.as_ref())?;
            art.files
                .extend(emit_convergence_report(&report, &cfg.out)?);
            summary.extend(summarize_learning(&report, &p.sys, "vi"));
            status = learning_status(&report);
        }
        Command::Qlearn => {
            let reference = reference_for(cfg, &p)?;
            let report = learn(cfg, &p, reference.as_ref())?;
            art.files
                .extend(emit_convergence_report(&report, &cfg.out)?);
            summary.extend(summarize_learning(&report, &p.sys, "qlearn"));
            status = learning_status(&report);
        }
        Command::Simulate => {
            let gains = match &cfg.gains {
                Some(path) => read_gains(path, &p.sys)?,
                None => solve_coupled_gare(&p.sys, &p.cost, 1e-10, 100_000)?.gains,
            };
            let mut noise = NoiseSource::gaussian(cfg.algo.seed);
            let traj =
                simulate_closed_loop(&p.sys, &p.cost, &gains, &p.x0, cfg.steps, &mut noise, None)?;
            art.write("trajectory.csv", |w| traj.write_csv(w))?;
            art.gains(&gains)?;
            let x0 = p.x0.norm_squared();
            let xf = traj.final_state().norm_squared();
            summary.push(format!(
                "simulate: {} steps, |x_N|^2 / |x_0|^2 = {:.3e}",
                cfg.steps,
                xf / x0
            ));
        }
        Command::BenchF16 => {
            if cfg.system != SystemSource::F16 {
                return Err(Error::InvalidConfig(
                    "bench-f16 runs on the builtin system only".into(),
                ));
            }
            let reference = reference_for(cfg, &p)?;
            let cases = [NoiseCase::Case1, NoiseCase::Case2, NoiseCase::Case3];
            let results: Vec<Result<QLearnReport<f64>>> = std::thread::scope(|s| {
                let handles: Vec<_> = cases
                    .iter()
                    .map(|&case| {
                        let mut case_cfg = cfg.clone();
                        case_cfg.algo.noise_case = case;
                        let (p, reference) = (&p, reference.as_ref());
                        s.spawn(move || learn(&case_cfg, p, reference))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("case thread panicked"))
                    .collect()
            });
            let mut rows = Vec::new();
            for (case, result) in cases.iter().zip(results) {
                let report = result?;
                let dir = cfg.out.join(format!("case{case}"));
                art.files.extend(emit_convergence_report(&report, &dir)?);
                summary.extend(summarize_learning(&report, &p.sys, &format!("case {case}")));
                let last = report.history.last();
                let cell = |v: Option<f64>| v.map(fmt_sig12).unwrap_or_default();
                rows.push(format!(
                    "{case},{},{},{},{},{}",
                    report.iterations(),
                    u8::from(report.converged()),
                    cell(last.and_then(|r| r.err_k1)),
                    cell(last.and_then(|r| r.err_k2)),
                    fmt_sig12(closed_loop_stability(&p.sys, &report.gains).radius)
                ));
            }
            art.write("summary.csv", |w| {
                writeln!(w, "case,iterations,converged,errK1,errK2,ms_radius")?;
                for r in &rows {
                    writeln!(w, "{r}")?;
                }
                Ok(())
            })?;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let mut manifest_cfg = cfg.clone();
    manifest_cfg.seed_set = true;
    let status_code = status.code();
    art.write("manifest.txt", |w| {
        write!(w, "{}", manifest_cfg.to_kv())?;
        writeln!(w, "# exit_status = {status_code}")?;
        writeln!(w, "# wall_time_s = {elapsed:.3}")?;
        Ok(())
    })?;
    Ok(RunOutcome {
        status,
        summary,
        files: art.files,
    })
}

/// Maps a run result to an exit status and prints the summary or error.
pub fn report_outcome(result: &Result<RunOutcome>) -> ExitStatus {
    match result {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            o.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::for_error(e)
        }
    }
}
