//! Config-driven experiment runs: dataset construction, per-seed round
//! CSVs, a summary JSON aggregated at each seed's best round, and lambda
//! sweeps.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::datasets::{
    load_cifar_batches, load_clinical_csv, load_mnist, make_color_digits, make_rotated_silos,
    make_synth_clinical, make_synth_spurious, FederationDataset,
};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, AlgoMode, OptimizerKind, RoundConfig, RoundLog};
use crate::metrics::{accuracy_entropy, fairness_stats, seed_summary};
use crate::nn::ModelSpec;

/// Benchmarks the runner knows how to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    ColorDigits,
    Rotated,
    SynthSpurious,
    SynthClinical,
    ClinicalCsv,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::ColorDigits,
        DatasetKind::Rotated,
        DatasetKind::SynthSpurious,
        DatasetKind::SynthClinical,
        DatasetKind::ClinicalCsv,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::ColorDigits => "color_digits",
            DatasetKind::Rotated => "rotated",
            DatasetKind::SynthSpurious => "synth_spurious",
            DatasetKind::SynthClinical => "synth_clinical",
            DatasetKind::ClinicalCsv => "clinical_csv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset {s:?}")))
    }

    /// Ten-class image task vs. binary everywhere else.
    pub fn is_multiclass(&self) -> bool {
        matches!(self, DatasetKind::Rotated)
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full experiment description: algorithm, training, dataset parameters
/// and file locations.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub mode: AlgoMode,
    pub rounds: usize,
    pub batch_size: usize,
    pub geo_chunk: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerKind,
    pub eval_cap: Option<usize>,
    pub threads: usize,
    /// Fixed dataset seed; by default each run seed regenerates its own
    /// dataset.
    pub data_seed: Option<u64>,

    // synth_spurious
    pub n_per_silo: usize,
    pub d_inv: usize,
    pub ood_flip: f64,
    // color_digits + synth_spurious silo structure
    pub flip_probs: Vec<f64>,
    pub ood_color_flip: f64,
    pub ood_label_flip: f64,
    // rotated
    pub silo_degrees: Vec<Vec<f64>>,
    pub ood_degrees: (f64, f64),
    // synth_clinical
    pub n_hospitals: usize,
    pub n_features: usize,
    pub positive_rate: f64,
    // file-backed inputs
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub cifar_batches: Vec<PathBuf>,
    pub clinical_csv: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(DatasetKind::SynthSpurious)
    }
}

impl ExperimentConfig {
    /// Per-dataset defaults: learning rate, weight decay and lambda follow
    /// the published per-benchmark settings; round counts and batch sizes
    /// are ours.
    pub fn preset(kind: DatasetKind) -> Self {
        let mut cfg = Self {
            dataset: kind,
            mode: AlgoMode::FedSgd,
            rounds: 500,
            batch_size: 64,
            geo_chunk: 8,
            lr: 3e-4,
            weight_decay: 0.01,
            lambda: 15.0,
            seeds: vec![1, 2, 3, 4, 5],
            hidden: vec![390, 390],
            out_dir: PathBuf::from("out"),
            optimizer: OptimizerKind::Adam,
            eval_cap: None,
            threads: 1,
            data_seed: None,
            n_per_silo: 256,
            d_inv: 10,
            ood_flip: 0.9,
            flip_probs: vec![0.15, 0.30, 0.45, 0.60, 0.75],
            ood_color_flip: 0.9,
            ood_label_flip: 0.15,
            silo_degrees: vec![
                vec![10.0, 25.0, 40.0],
                vec![60.0, 75.0, 90.0],
                vec![-10.0, -40.0, -90.0],
            ],
            ood_degrees: (-90.0, 90.0),
            n_hospitals: 58,
            n_features: 1399,
            positive_rate: 0.305,
            mnist_images: None,
            mnist_labels: None,
            cifar_batches: Vec::new(),
            clinical_csv: None,
        };
        match kind {
            DatasetKind::ColorDigits => {
                // the OOD minimum lands in the first few dozen rounds;
                // training much longer only deepens the color shortcut
                cfg.eval_cap = Some(512);
                cfg.rounds = 60;
                cfg.threads = 2;
            }
            DatasetKind::Rotated => {
                cfg.lr = 1e-4;
                cfg.weight_decay = 1e-3;
                cfg.lambda = 1.0;
                cfg.hidden = vec![256];
                cfg.eval_cap = Some(2048);
                cfg.rounds = 300;
            }
            DatasetKind::SynthSpurious => {
                // full-silo batches, plain descent and a strong penalty:
                // the regularized equilibrium is where the silos genuinely
                // disagree about the spurious weight
                cfg.lr = 1.0;
                cfg.weight_decay = 0.1;
                cfg.lambda = 10.0;
                cfg.hidden = vec![32];
                cfg.rounds = 200;
                cfg.n_per_silo = 64;
                cfg.optimizer = OptimizerKind::Sgd;
            }
            DatasetKind::SynthClinical | DatasetKind::ClinicalCsv => {
                cfg.lr = 2e-4;
                cfg.weight_decay = 1e-3;
                cfg.lambda = 0.1;
                cfg.hidden = vec![1024, 1024, 512];
                cfg.eval_cap = Some(2048);
                cfg.rounds = 200;
            }
        }
        cfg
    }

    /// Parses the flat `key = value` config format (`#` comments, blank
    /// lines ignored). A `dataset` key switches to that preset first; the
    /// remaining keys then override it in file order.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "dataset") {
            Some((_, v)) => Self::preset(DatasetKind::parse(v)?),
            None => Self::default(),
        };
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv(&text)
    }

    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad {what} value {value:?}"));
        match key {
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "mode" | "algo" => self.mode = AlgoMode::parse(value)?,
            "rounds" => self.rounds = value.parse().map_err(|_| bad("rounds"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "geo_chunk" => self.geo_chunk = value.parse().map_err(|_| bad("geo_chunk"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad("weight_decay"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "seeds" => self.seeds = parse_list(value).map_err(|_| bad("seeds"))?,
            "hidden" => self.hidden = parse_list(value).map_err(|_| bad("hidden"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "eval_cap" => {
                self.eval_cap = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("eval_cap"))?)
                }
            }
            "threads" => self.threads = value.parse().map_err(|_| bad("threads"))?,
            "data_seed" => {
                self.data_seed = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("data_seed"))?)
                }
            }
            "n_per_silo" => self.n_per_silo = value.parse().map_err(|_| bad("n_per_silo"))?,
            "d_inv" => self.d_inv = value.parse().map_err(|_| bad("d_inv"))?,
            "ood_flip" => self.ood_flip = value.parse().map_err(|_| bad("ood_flip"))?,
            "flip_probs" => self.flip_probs = parse_list(value).map_err(|_| bad("flip_probs"))?,
            "ood_color_flip" => {
                self.ood_color_flip = value.parse().map_err(|_| bad("ood_color_flip"))?
            }
            "ood_label_flip" => {
                self.ood_label_flip = value.parse().map_err(|_| bad("ood_label_flip"))?
            }
            "silo_degrees" => {
                self.silo_degrees = value
                    .split(';')
                    .map(parse_list)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("silo_degrees"))?
            }
            "ood_degrees" => {
                let list: Vec<f64> = parse_list(value).map_err(|_| bad("ood_degrees"))?;
                if list.len() != 2 {
                    return Err(bad("ood_degrees"));
                }
                self.ood_degrees = (list[0], list[1]);
            }
            "n_hospitals" => self.n_hospitals = value.parse().map_err(|_| bad("n_hospitals"))?,
            "n_features" => self.n_features = value.parse().map_err(|_| bad("n_features"))?,
            "positive_rate" => {
                self.positive_rate = value.parse().map_err(|_| bad("positive_rate"))?
            }
            "mnist_images" => self.mnist_images = Some(PathBuf::from(value)),
            "mnist_labels" => self.mnist_labels = Some(PathBuf::from(value)),
            "cifar_batches" => {
                self.cifar_batches = value.split(',').map(|s| PathBuf::from(s.trim())).collect()
            }
            "clinical_csv" => self.clinical_csv = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let unique: BTreeSet<&u64> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        self.round_config(self.seeds[0]).validate()
    }

    pub fn round_config(&self, seed: u64) -> RoundConfig {
        RoundConfig {
            mode: self.mode,
            lr: self.lr,
            lambda: self.lambda,
            rounds: self.rounds,
            batch_size: self.batch_size,
            geo_chunk: self.geo_chunk,
            seed,
            weight_decay: self.weight_decay,
            optimizer: self.optimizer,
            eval_cap: self.eval_cap,
            threads: self.threads,
            ..RoundConfig::default()
        }
    }

    /// Builds the federation for one run seed.
    pub fn build_dataset(&self, seed: u64) -> Result<FederationDataset> {
        let data_seed = self.data_seed.unwrap_or(seed);
        match self.dataset {
            DatasetKind::SynthSpurious => make_synth_spurious(
                self.n_per_silo,
                self.d_inv,
                &self.flip_probs,
                self.ood_flip,
                data_seed,
            ),
            DatasetKind::SynthClinical => {
                make_synth_clinical(self.n_hospitals, self.n_features, self.positive_rate, data_seed)
                    .map(|(fed, _sizes)| fed)
            }
            DatasetKind::ColorDigits => {
                let (images, labels) = self.mnist_paths()?;
                let base = load_mnist(&images, &labels)?;
                make_color_digits(
                    &base,
                    &self.flip_probs,
                    self.ood_color_flip,
                    self.ood_label_flip,
                    data_seed,
                )
            }
            DatasetKind::Rotated => {
                let paths = self.cifar_paths()?;
                let base = load_cifar_batches(&paths)?;
                make_rotated_silos(&base, &self.silo_degrees, self.ood_degrees, data_seed)
            }
            DatasetKind::ClinicalCsv => {
                let path = self.clinical_csv.as_ref().ok_or_else(|| {
                    Error::Config("clinical_csv dataset needs clinical_csv = <path>".into())
                })?;
                load_clinical_csv(path)
            }
        }
    }

    /// Model for this dataset: configured hidden sizes, input width from
    /// the data, sigmoid head for binary tasks and a 10-way softmax for
    /// the rotated benchmark.
    pub fn model_spec(&self, data: &FederationDataset) -> Result<ModelSpec> {
        if self.dataset.is_multiclass() {
            ModelSpec::softmax_mlp(data.feature_dim(), &self.hidden, 10)
        } else {
            ModelSpec::sigmoid_mlp(data.feature_dim(), &self.hidden)
        }
    }

    fn data_dir() -> PathBuf {
        std::env::var_os("FEDILC_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    fn mnist_paths(&self) -> Result<(PathBuf, PathBuf)> {
        let images = self
            .mnist_images
            .clone()
            .unwrap_or_else(|| Self::data_dir().join("train-images-idx3-ubyte"));
        let labels = self
            .mnist_labels
            .clone()
            .unwrap_or_else(|| Self::data_dir().join("train-labels-idx1-ubyte"));
        if !images.exists() || !labels.exists() {
            return Err(Error::Config(format!(
                "digit files not found ({} / {}); set mnist_images/mnist_labels or FEDILC_DATA_DIR",
                images.display(),
                labels.display()
            )));
        }
        Ok((images, labels))
    }

    fn cifar_paths(&self) -> Result<Vec<PathBuf>> {
        if !self.cifar_batches.is_empty() {
            return Ok(self.cifar_batches.clone());
        }
        let dir = Self::data_dir();
        let found: Vec<PathBuf> = (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.exists())
            .collect();
        if found.is_empty() {
            return Err(Error::Config(format!(
                "no CIFAR batches under {}; set cifar_batches or FEDILC_DATA_DIR",
                dir.display()
            )));
        }
        Ok(found)
    }

    fn csv_path(&self, seed: u64) -> PathBuf {
        self.out_dir
            .join(format!("{}_{}_seed{seed}.csv", self.dataset, self.mode))
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, T::Err> {
    value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect()
}

/// Outcome of one seed at its minimum-OOD-loss round.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub best_round: usize,
    pub ood_loss: f64,
    pub ood_acc: f64,
    pub ood_auroc: f64,
    pub ood_auprc: f64,
    pub fairness_variance: Option<f64>,
    pub fairness_kl: Option<f64>,
    pub fairness_entropy: Option<f64>,
}

impl SeedOutcome {
    fn from_log(seed: u64, log: &RoundLog) -> Self {
        let best = log.best();
        let acc = &best.ood.per_silo_accuracy;
        let fairness = if acc.len() >= 2 {
            fairness_stats(acc).ok()
        } else {
            None
        };
        Self {
            seed,
            best_round: best.round,
            ood_loss: best.ood.loss,
            ood_acc: best.ood.accuracy,
            ood_auroc: best.ood.auroc,
            ood_auprc: best.ood.auprc,
            fairness_variance: fairness.map(|(v, _)| v),
            fairness_kl: fairness.map(|(_, k)| k),
            fairness_entropy: fairness.and_then(|_| accuracy_entropy(acc).ok()),
        }
    }
}

/// Mean and sample std over seeds; no std for a single seed.
#[derive(Debug, Clone, Copy)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: Option<f64>,
}

fn summarize(values: &[f64]) -> MetricSummary {
    if values.len() < 2 {
        MetricSummary {
            mean: values.first().copied().unwrap_or(f64::NAN),
            std: None,
        }
    } else {
        match seed_summary(values) {
            Ok((mean, std)) => MetricSummary {
                mean,
                std: Some(std),
            },
            Err(_) => MetricSummary {
                mean: f64::NAN,
                std: None,
            },
        }
    }
}

/// Everything `run` produced, including where it wrote the files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dataset: DatasetKind,
    pub mode: AlgoMode,
    pub lambda: f64,
    pub rounds: usize,
    pub outcomes: Vec<SeedOutcome>,
    pub ood_loss: MetricSummary,
    pub ood_acc: MetricSummary,
    pub ood_auroc: MetricSummary,
    pub ood_auprc: MetricSummary,
    pub fairness_variance: MetricSummary,
    pub fairness_kl: MetricSummary,
    pub fairness_entropy: MetricSummary,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// 17 significant digits: enough for an exact f64 round trip.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fmt_f64)
}

fn fmt_metric(name: &str, m: &MetricSummary) -> String {
    format!(
        "    \"{name}\": {{\"mean\": {}, \"std\": {}}}",
        fmt_f64(m.mean),
        fmt_opt(m.std)
    )
}

/// Renders the summary JSON (fixed key order, 17-significant-digit
/// floats, NaN as null).
pub fn summary_json(s: &RunSummary) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"dataset\": \"{}\",\n", s.dataset));
    out.push_str(&format!("  \"mode\": \"{}\",\n", s.mode));
    out.push_str(&format!("  \"lambda\": {},\n", fmt_f64(s.lambda)));
    out.push_str(&format!("  \"rounds\": {},\n", s.rounds));
    let seeds: Vec<String> = s.outcomes.iter().map(|o| o.seed.to_string()).collect();
    out.push_str(&format!("  \"seeds\": [{}],\n", seeds.join(", ")));
    out.push_str("  \"metrics\": {\n");
    let metrics = [
        fmt_metric("ood_loss", &s.ood_loss),
        fmt_metric("ood_accuracy", &s.ood_acc),
        fmt_metric("ood_auroc", &s.ood_auroc),
        fmt_metric("ood_auprc", &s.ood_auprc),
        fmt_metric("fairness_accuracy_variance", &s.fairness_variance),
        fmt_metric("fairness_accuracy_kl", &s.fairness_kl),
        fmt_metric("fairness_accuracy_entropy", &s.fairness_entropy),
    ];
    out.push_str(&metrics.join(",\n"));
    out.push_str("\n  },\n");
    let rounds: Vec<String> = s.outcomes.iter().map(|o| o.best_round.to_string()).collect();
    out.push_str(&format!("  \"best_rounds\": [{}],\n", rounds.join(", ")));
    out.push_str("  \"per_seed\": [\n");
    let per: Vec<String> = s
        .outcomes
        .iter()
        .map(|o| {
            format!(
                "    {{\"seed\": {}, \"best_round\": {}, \"ood_loss\": {}, \"ood_accuracy\": {}, \
                 \"ood_auroc\": {}, \"ood_auprc\": {}, \"fairness_accuracy_variance\": {}, \
                 \"fairness_accuracy_kl\": {}, \"fairness_accuracy_entropy\": {}}}",
                o.seed,
                o.best_round,
                fmt_f64(o.ood_loss),
                fmt_f64(o.ood_acc),
                fmt_f64(o.ood_auroc),
                fmt_f64(o.ood_auprc),
                fmt_opt(o.fairness_variance),
                fmt_opt(o.fairness_kl),
                fmt_opt(o.fairness_entropy),
            )
        })
        .collect();
    out.push_str(&per.join(",\n"));
    out.push_str("\n  ]\n}\n");
    out
}

fn summarize_opt(values: &[Option<f64>]) -> MetricSummary {
    let collected: Option<Vec<f64>> = values.iter().copied().collect();
    match collected {
        Some(v) => summarize(&v),
        None => MetricSummary {
            mean: f64::NAN,
            std: None,
        },
    }
}

/// Runs every seed, writes one round CSV per seed plus `summary.json`
/// into the output directory, and returns the aggregate.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    let mut csv_paths = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let data = cfg.build_dataset(seed)?;
        let spec = cfg.model_spec(&data)?;
        let log = run_experiment(&data, &spec, &cfg.round_config(seed))?;
        let path = cfg.csv_path(seed);
        std::fs::write(&path, log.to_csv())?;
        csv_paths.push(path);
        outcomes.push(SeedOutcome::from_log(seed, &log));
    }

    let pick = |f: fn(&SeedOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    let summary = RunSummary {
        dataset: cfg.dataset,
        mode: cfg.mode,
        lambda: cfg.lambda,
        rounds: cfg.rounds,
        ood_loss: summarize(&pick(|o| o.ood_loss)),
        ood_acc: summarize(&pick(|o| o.ood_acc)),
        ood_auroc: summarize(&pick(|o| o.ood_auroc)),
        ood_auprc: summarize(&pick(|o| o.ood_auprc)),
        fairness_variance: summarize_opt(
            &outcomes.iter().map(|o| o.fairness_variance).collect::<Vec<_>>(),
        ),
        fairness_kl: summarize_opt(&outcomes.iter().map(|o| o.fairness_kl).collect::<Vec<_>>()),
        fairness_entropy: summarize_opt(
            &outcomes.iter().map(|o| o.fairness_entropy).collect::<Vec<_>>(),
        ),
        outcomes,
        csv_paths,
        summary_path: cfg.out_dir.join("summary.json"),
    };
    std::fs::write(&summary.summary_path, summary_json(&summary))?;
    Ok(summary)
}

/// Runs the configured experiment once per lambda (same seeds throughout)
/// and writes `sweep.csv` with one `(lambda, min-OOD-loss mean, std)` row
/// per value. Per-lambda artifacts land in `lambda_<value>/` subdirectories.
pub fn sweep_lambda(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<PathBuf> {
    cfg.validate()?;
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    let mut seen = Vec::new();
    for &l in lambdas {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::Config(format!("bad sweep lambda {l}")));
        }
        if seen.contains(&l) {
            return Err(Error::Config(format!("duplicate sweep lambda {l}")));
        }
        seen.push(l);
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = String::from("lambda,ood_loss_mean,ood_loss_std\n");
    for &lambda in lambdas {
        let mut sub = cfg.clone();
        sub.lambda = lambda;
        sub.out_dir = cfg.out_dir.join(format!("lambda_{lambda}"));
        let summary = run(&sub)?;
        rows.push_str(&format!(
            "{lambda},{},{}\n",
            summary.ood_loss.mean,
            summary.ood_loss.std.unwrap_or(f64::NAN)
        ));
    }
    let path = cfg.out_dir.join("sweep.csv");
    std::fs::write(&path, rows)?;
    Ok(path)
}
