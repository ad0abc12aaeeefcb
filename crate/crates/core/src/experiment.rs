//! Run orchestration: one config file, one command, one output directory.
//!
//! Every run writes `manifest.json` next to its artifacts. The manifest holds
//! the effective config, so passing it back as `--config` replays the run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::embeddings::load_embeddings;
use crate::error::{RatError, Result};
use crate::jsonl::{load_jsonl, to_jsonl, DEFAULT_SEPARATOR};
use crate::metrics::evaluate;
use crate::model::RationaleNet;
use crate::synth::{gen_synth, inject_bias, to_discrete, BiasSpec, SynthSpec};
use crate::theory::{
    check_curvature, empirical_landscape, find_pure_nash, find_pure_nash_brute_force,
    one_hot_embeddings, oracle_attention_landscape, oracle_conditional_entropy,
    oracle_rationale_landscape, uniform_grid, EmpiricalSetup, LandscapeGrid, LandscapeKind,
    PayoffTable,
};
use crate::train::{mean_slot_loss, skew_pretrain, train, Mode, TrainConfig};
use crate::vocab::Vocab;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    TrainRnp,
    TrainA2r,
    Skew,
    Bias,
    SweepLandscape,
    Oracle,
    Nash,
    Eval,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::GenData,
        Command::TrainRnp,
        Command::TrainA2r,
        Command::Skew,
        Command::Bias,
        Command::SweepLandscape,
        Command::Oracle,
        Command::Nash,
        Command::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainRnp => "train-rnp",
            Command::TrainA2r => "train-a2r",
            Command::Skew => "skew",
            Command::Bias => "bias",
            Command::SweepLandscape => "sweep-landscape",
            Command::Oracle => "oracle",
            Command::Nash => "nash",
            Command::Eval => "eval",
        }
    }

    /// Commands that train a model and therefore need an explicit seed.
    pub fn trains(self) -> bool {
        matches!(
            self,
            Command::TrainRnp | Command::TrainA2r | Command::Skew | Command::Bias
        )
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = RatError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| RatError::Config(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlSource {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSpec),
    Jsonl(JsonlSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewConfig {
    pub epochs: usize,
    /// Zero-based segment the predictor is pre-trained on.
    pub slot: usize,
}

impl Default for SkewConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            slot: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Number of evenly spaced grid points, endpoints included.
    pub grid: usize,
    pub oracle_tolerance: f64,
    /// Empirical curvature tolerance as a fraction of the loss range.
    pub empirical_tolerance: f64,
    pub setup: EmpiricalSetup,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            grid: 21,
            oracle_tolerance: 1e-6,
            empirical_tolerance: 0.02,
            setup: EmpiricalSetup::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Applied after loading; the `bias` command falls back to the default.
    pub bias: Option<BiasSpec>,
    pub train: TrainConfig,
    pub skew: SkewConfig,
    pub landscape: LandscapeConfig,
    pub nash: Option<PayoffTable>,
    /// Model to evaluate with `eval`.
    pub checkpoint: Option<PathBuf>,
    /// Whitespace-separated `token v1 v2 ...` lines.
    pub embeddings: Option<PathBuf>,
    /// Seed of the bias injection draws.
    pub bias_seed: u64,
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub q: Option<f64>,
    pub explore: Option<f64>,
    pub grid: Option<usize>,
    pub budget: Option<usize>,
}

impl ExperimentConfig {
    /// Parse a config file or a run manifest. Relative paths inside are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RatError::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let body = match value.get("manifest_version") {
            Some(_) => value
                .get("config")
                .cloned()
                .ok_or_else(|| RatError::Config("manifest has no config".into()))?,
            None => value,
        };
        Ok(serde_json::from_value(body)?)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Jsonl(src) = &mut self.data {
            fix(&mut src.train);
            fix(&mut src.dev);
            fix(&mut src.test);
        }
        if let Some(p) = &mut self.checkpoint {
            fix(p);
        }
        if let Some(p) = &mut self.embeddings {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.landscape.setup.seed = seed;
        }
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(q) = o.q {
            self.train.q = Some(q);
        }
        if let Some(e) = o.explore {
            self.train.explore = e;
        }
        if let Some(g) = o.grid {
            self.landscape.grid = g;
        }
        if let Some(b) = o.budget {
            self.landscape.setup.budget = b;
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synth(spec) => spec.validate()?,
            DataSource::Jsonl(src) => {
                if src.separator.is_empty() {
                    return Err(RatError::Config("jsonl separator must not be empty".into()));
                }
            }
        }
        self.train.validate()?;
        if self.landscape.grid < 3 {
            return Err(RatError::Config(
                "landscape grid needs at least three points".into(),
            ));
        }
        let tol_ok = |t: f64| t.is_finite() && t >= 0.0;
        if !tol_ok(self.landscape.oracle_tolerance) || !tol_ok(self.landscape.empirical_tolerance) {
            return Err(RatError::Config(
                "curvature tolerances must be finite and non-negative".into(),
            ));
        }
        self.landscape.setup.model.validate()?;
        if let Some(t) = &self.nash {
            t.validate()?;
        }
        Ok(())
    }
}

/// How a failed run maps to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad config or data: exit 2.
    Validation,
    /// Everything else: exit 3.
    Runtime,
}

impl FailureKind {
    pub fn of(e: &RatError) -> Self {
        match e {
            RatError::Config(_)
            | RatError::Json(_)
            | RatError::Example(_)
            | RatError::EmptySplit(_)
            | RatError::Granularity { .. }
            | RatError::NonBinaryLabel(_)
            | RatError::Colinear(..) => FailureKind::Validation,
            _ => FailureKind::Runtime,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 2,
            FailureKind::Runtime => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// SHA-256 over the JSONL rendering of all three splits.
    pub dataset_fingerprint: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputFile>,
}

pub fn version_string() -> String {
    match option_env!("RATLAB_GIT_DESCRIBE") {
        Some(d) => d.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn dataset_fingerprint(data: &Dataset) -> String {
    let mut h = Sha256::new();
    for (name, split) in data.splits() {
        h.update(name.as_bytes());
        h.update(b"\n");
        h.update(to_jsonl(split, &data.vocab).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Run<'a> {
    out: &'a Path,
    outputs: Vec<OutputFile>,
    fingerprint: Option<String>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| RatError::io(&path, e))?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn load_data(config: &ExperimentConfig, force_bias: bool) -> Result<Dataset> {
    let data = match &config.data {
        DataSource::Synth(spec) => gen_synth(spec)?,
        DataSource::Jsonl(src) => {
            let mut vocab = Vocab::new();
            let mut split = |path: &Path| -> Result<_> {
                let report = load_jsonl(path, &mut vocab, &src.separator)?;
                if let Some(e) = report.errors.first() {
                    return Err(RatError::Example(format!(
                        "{}: {} malformed line(s), first at line {}: {}",
                        path.display(),
                        report.errors.len(),
                        e.line,
                        e.message
                    )));
                }
                Ok(report.examples)
            };
            let train = split(&src.train)?;
            let dev = split(&src.dev)?;
            let test = split(&src.test)?;
            Dataset {
                vocab,
                train,
                dev,
                test,
            }
        }
    };
    let bias = match (&config.bias, force_bias) {
        (Some(b), _) => Some(b.clone()),
        (None, true) => Some(BiasSpec::default()),
        (None, false) => None,
    };
    match bias {
        Some(b) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.bias_seed);
            inject_bias(&data, &b, &mut rng)
        }
        None => Ok(data),
    }
}

fn build_net(config: &ExperimentConfig, data: &Dataset) -> Result<RationaleNet> {
    let mut net = RationaleNet::new(
        config.train.model.clone(),
        data.vocab.len(),
        config.train.seed,
    )?;
    if let Some(path) = &config.embeddings {
        let emb = load_embeddings(path)?;
        net.load_embeddings(&emb, &data.vocab)?;
    }
    Ok(net)
}

fn train_and_report(
    run: &mut Run<'_>,
    config: &TrainConfig,
    net: &mut RationaleNet,
    data: &Dataset,
) -> Result<()> {
    let outcome = train(net, &data.train, &data.dev, config)?;
    run.write("trajectory.csv", outcome.trajectory_csv().as_bytes())?;
    let eval = evaluate(net, &data.test, config.q)?;
    run.write_json("metrics.json", &eval.report)?;
    run.write_json(
        "training.json",
        &json!({
            "best_epoch": outcome.best_epoch,
            "skipped_batches": outcome.skipped_batches,
            "skipped_params": outcome.skipped_params,
        }),
    )?;
    let ck = Checkpoint::from_net(net, &data.vocab, config.mode);
    run.write("checkpoint.bin", &ck.encode()?)
}

fn landscape_rows(grids: &[&LandscapeGrid]) -> String {
    let mut csv = String::new();
    for (i, g) in grids.iter().enumerate() {
        let text = g.to_csv();
        // keep a single header
        csv.push_str(if i == 0 {
            &text
        } else {
            text.split_once('\n').map_or("", |(_, rest)| rest)
        });
    }
    csv
}

fn corner_gaps(a: &LandscapeGrid, b: &LandscapeGrid) -> [f64; 2] {
    let n = a.losses.len();
    [
        (a.losses[0] - b.losses[0]).abs(),
        (a.losses[n - 1] - b.losses[n - 1]).abs(),
    ]
}

fn execute(command: Command, config: &ExperimentConfig, run: &mut Run<'_>) -> Result<()> {
    match command {
        Command::GenData => {
            let data = load_data(config, false)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            for (name, split) in data.splits() {
                run.write(
                    &format!("{name}.jsonl"),
                    to_jsonl(split, &data.vocab).as_bytes(),
                )?;
            }
        }
        Command::TrainRnp | Command::TrainA2r => {
            let mut tc = config.train.clone();
            tc.mode = if command == Command::TrainRnp {
                Mode::Rnp
            } else {
                Mode::A2r
            };
            let data = load_data(config, false)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            let mut net = build_net(config, &data)?;
            train_and_report(run, &tc, &mut net, &data)?;
        }
        Command::Skew => {
            let data = load_data(config, false)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            let mut net = build_net(config, &data)?;
            let slots = data.dev.iter().map(|e| e.num_segments()).min().unwrap_or(0);
            let losses = |net: &RationaleNet| -> Result<Vec<f64>> {
                (0..slots)
                    .map(|s| mean_slot_loss(net, &data.dev, s))
                    .collect()
            };
            let before = losses(&net)?;
            skew_pretrain(
                &mut net,
                &data.train,
                config.skew.epochs,
                config.skew.slot,
                &config.train,
            )?;
            let after = losses(&net)?;
            run.write_json(
                "skew.json",
                &json!({
                    "epochs": config.skew.epochs,
                    "slot": config.skew.slot,
                    "dev_slot_loss_before": before,
                    "dev_slot_loss_after": after,
                }),
            )?;
            train_and_report(run, &config.train, &mut net, &data)?;
        }
        Command::Bias => {
            let data = load_data(config, true)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            let mut net = build_net(config, &data)?;
            train_and_report(run, &config.train, &mut net, &data)?;
        }
        Command::SweepLandscape => {
            let data = load_data(config, false)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            let grid = uniform_grid(config.landscape.grid);
            let setup = &config.landscape.setup;
            let sweep =
                |kind| empirical_landscape(&data.train, data.vocab.len(), &grid, setup, kind);
            let rationale = sweep(LandscapeKind::RationaleEmpirical)?;
            let attention = sweep(LandscapeKind::AttentionEmpirical)?;
            run.write(
                "landscape.csv",
                landscape_rows(&[&rationale, &attention]).as_bytes(),
            )?;
            let tol = |g: &LandscapeGrid| {
                let finite = g
                    .losses
                    .iter()
                    .zip(&g.failed)
                    .filter(|(_, f)| !**f)
                    .map(|(l, _)| *l);
                let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| {
                    (a.min(l), b.max(l))
                });
                config.landscape.empirical_tolerance * (hi - lo).max(0.0)
            };
            run.write_json(
                "curvature.json",
                &json!({
                    "rationale": check_curvature(&rationale, tol(&rationale)),
                    "attention": check_curvature(&attention, tol(&attention)),
                    "rationale_interior_excess": rationale.interior_excess(),
                    "attention_interior_excess": attention.interior_excess(),
                    "corner_gaps": corner_gaps(&rationale, &attention),
                }),
            )?;
        }
        Command::Oracle => {
            let DataSource::Synth(spec) = &config.data else {
                return Err(RatError::Config(
                    "oracle needs a synthetic data source".into(),
                ));
            };
            // cue-only rendering with the same informativeness
            let cue_only = SynthSpec {
                sentence_len: 1,
                cue_variants: 1,
                ..spec.clone()
            };
            let joint = to_discrete(&cue_only)?;
            let t = joint.num_positions();
            let entropies: Vec<Value> = (0u32..1 << t)
                .map(|bits| {
                    let visible: Vec<usize> = (0..t).filter(|&i| bits & (1 << i) != 0).collect();
                    let h = oracle_conditional_entropy(&joint, &visible);
                    json!({ "visible": visible, "nats": h })
                })
                .collect();
            let mut report = json!({ "positions": t, "entropies": entropies });
            if t == 2 {
                let grid = uniform_grid(config.landscape.grid);
                let rationale = oracle_rationale_landscape(&joint, &grid)?;
                let attention =
                    oracle_attention_landscape(&joint, &grid, &one_hot_embeddings(&joint))?;
                run.write(
                    "landscape.csv",
                    landscape_rows(&[&rationale, &attention]).as_bytes(),
                )?;
                let tol = config.landscape.oracle_tolerance;
                run.write_json(
                    "curvature.json",
                    &json!({
                        "rationale": check_curvature(&rationale, tol),
                        "attention": check_curvature(&attention, tol),
                    }),
                )?;
                report["corner_gaps"] = json!(corner_gaps(&rationale, &attention));
            }
            run.write_json("oracle.json", &report)?;
        }
        Command::Nash => {
            let table = config
                .nash
                .clone()
                .unwrap_or_else(PayoffTable::interlocking_example);
            let direct = find_pure_nash(&table);
            let brute = find_pure_nash_brute_force(&table);
            let named: Vec<Value> = direct
                .iter()
                .map(|&(i, j)| json!({ "row": table.row_labels[i], "col": table.col_labels[j], "cell": [i, j] }))
                .collect();
            run.write_json(
                "nash.json",
                &json!({ "table": table, "equilibria": named, "brute_force_agrees": direct == brute }),
            )?;
        }
        Command::Eval => {
            let path = config
                .checkpoint
                .as_ref()
                .ok_or_else(|| RatError::Config("eval needs a checkpoint path".into()))?;
            let (net, vocab) = Checkpoint::load(path)?.into_net()?;
            let data = load_data(config, false)?;
            run.fingerprint = Some(dataset_fingerprint(&data));
            // re-encode the test split with the checkpoint's vocabulary
            let test: Vec<_> = data
                .test
                .iter()
                .map(|ex| {
                    let mut ex = ex.clone();
                    ex.tokens = ex
                        .tokens
                        .iter()
                        .map(|&id| vocab.id(data.vocab.token(id)))
                        .collect();
                    ex
                })
                .collect();
            if net.granularity() != config.train.model.granularity {
                return Err(RatError::Granularity {
                    model: net.granularity().to_string(),
                    data: config.train.model.granularity.to_string(),
                });
            }
            let eval = evaluate(&net, &test, config.train.q)?;
            run.write_json("metrics.json", &eval.report)?;
        }
    }
    Ok(())
}

/// Run `command` and write its artifacts plus a manifest into `out`.
pub fn run_experiment(
    command: Command,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| RatError::io(out, e))?;
    let started_unix = now_unix();
    let mut run = Run {
        out,
        outputs: Vec::new(),
        fingerprint: None,
    };
    execute(command, config, &mut run)?;
    let manifest = RunManifest {
        manifest_version: 1,
        version: version_string(),
        command,
        seed: config.train.seed,
        config: config.clone(),
        dataset_fingerprint: run.fingerprint,
        started_unix,
        finished_unix: now_unix(),
        outputs: run.outputs,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| RatError::io(&path, e))?;
    Ok(manifest)
}
