use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use m2mrf::metrics::evaluate;
use m2mrf::net::checkpoint::{DESCRIPTOR_FILE, NET_KIND};
use m2mrf::net::train::{history_csv, train as run_training};
use m2mrf::net::{MiniFusionNet, NetConfig, TrainConfig, Variant};
use m2mrf::synth::io::{pgm_bytes, sample_dir_name};
use m2mrf::synth::{class_names, default_specs, generate_dataset, load_dataset, save_dataset, LesionSpec, Sample};
use m2mrf::verify::{self, Check};
use m2mrf::Tensor;

use crate::Suite;

pub const RUN_CONFIG_FILE: &str = "run_config.json";
/// Checkpoint kind whose predictions are the ground-truth masks themselves.
pub const ORACLE_KIND: &str = "oracle";
pub const THREADS_ENV: &str = "M2MRF_THREADS";

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<m2mrf::Error> for Failure {
    fn from(e: m2mrf::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<bool, Failure>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn write_config<T: Serialize>(out_dir: &Path, cfg: &T) -> Result<(), Failure> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    fs::write(out_dir.join(RUN_CONFIG_FILE), serde_json::to_string_pretty(cfg)?)
        .with_context(|| format!("cannot write config into {}", out_dir.display()))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenRun {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub n: usize,
    pub size: usize,
    pub specs: Vec<LesionSpec>,
}

impl Default for GenRun {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::new(),
            n: 8,
            size: 64,
            specs: default_specs(),
        }
    }
}

pub struct GenFlags {
    pub n: Option<usize>,
    pub size: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn gen(config: Option<&Path>, flags: GenFlags) -> Outcome {
    let mut cfg: GenRun = read_config(config)?;
    cfg.n = flags.n.unwrap_or(cfg.n);
    cfg.size = flags.size.unwrap_or(cfg.size);
    cfg.seed = flags.seed.unwrap_or(cfg.seed);
    cfg.out_dir = flags.out;
    write_config(&cfg.out_dir, &cfg)?;
    let samples = generate_dataset(cfg.n, cfg.size, cfg.size, &cfg.specs, cfg.seed)?;
    save_dataset(&samples, &cfg.specs, cfg.seed, &cfg.out_dir)?;
    println!("wrote {} samples ({}x{}) to {}", cfg.n, cfg.size, cfg.size, cfg.out_dir.display());
    Ok(true)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    /// Decides the down/up operator pairing of `net`.
    pub variant: Variant,
    pub net: Option<NetConfig>,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::new(),
            dataset: None,
            variant: Variant::A,
            net: None,
            train: TrainConfig::default(),
        }
    }
}

pub struct TrainFlags {
    pub variant: Option<Variant>,
    pub iters: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub out: PathBuf,
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>, Failure> {
    let (_, samples) = load_dataset(dir).with_context(|| format!("cannot load dataset {}", dir.display()))?;
    if samples.is_empty() {
        return Err(anyhow!("dataset {} is empty", dir.display()).into());
    }
    Ok(samples)
}

pub fn train(config: Option<&Path>, flags: TrainFlags) -> Outcome {
    let mut cfg: TrainRun = read_config(config)?;
    cfg.seed = flags.seed.unwrap_or(cfg.seed);
    cfg.variant = flags.variant.unwrap_or(cfg.variant);
    cfg.dataset = flags.dataset.or(cfg.dataset);
    cfg.train.iters = flags.iters.unwrap_or(cfg.train.iters);
    cfg.train.base_lr = flags.lr.unwrap_or(cfg.train.base_lr);
    cfg.train.seed = cfg.seed;
    cfg.out_dir = flags.out;
    let (down, up) = cfg.variant.kinds();
    cfg.net = Some(NetConfig {
        down,
        up,
        ..cfg.net.unwrap_or_else(|| cfg.variant.net_config())
    });
    let Some(dataset) = cfg.dataset.clone() else {
        return Err(Failure::Usage("train needs a dataset (--dataset or \"dataset\" in the config)".into()));
    };
    write_config(&cfg.out_dir, &cfg)?;

    let samples = load_samples(&dataset)?;
    let mut net = MiniFusionNet::build(cfg.net.clone().expect("resolved above"), cfg.seed)?;
    let history = run_training(&mut net, &samples, &cfg.train)?;
    net.save(cfg.out_dir.join("checkpoint"))?;
    fs::write(cfg.out_dir.join("history.csv"), history_csv(&history))?;
    match history.last() {
        Some(last) => println!(
            "variant {}: {} iterations, final loss {:.6}, checkpoint in {}",
            cfg.variant,
            history.len(),
            last.loss,
            cfg.out_dir.join("checkpoint").display()
        ),
        None => println!("variant {}: no iterations, initial weights saved", cfg.variant),
    }
    Ok(true)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRun {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Worker threads; taken from the environment, recorded for replay.
    pub threads: usize,
}

pub struct EvalFlags {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
}

enum Predictor {
    Net(Box<MiniFusionNet>),
    Oracle,
}

impl Predictor {
    fn load(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(DESCRIPTOR_FILE);
        let bytes = fs::read(&path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let desc: serde_json::Value = serde_json::from_slice(&bytes)?;
        match desc.get("kind").and_then(|k| k.as_str()) {
            Some(NET_KIND) => Ok(Predictor::Net(Box::new(MiniFusionNet::load(dir)?))),
            Some(ORACLE_KIND) => Ok(Predictor::Oracle),
            other => Err(anyhow!("unsupported checkpoint kind {other:?} in {}", path.display()).into()),
        }
    }

    fn predict(&self, sample: &Sample) -> m2mrf::Result<Tensor> {
        match self {
            Predictor::Net(net) => net.predict(&sample.image),
            Predictor::Oracle => Ok(sample.masks.clone()),
        }
    }
}

fn thread_count() -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn eval(config: Option<&Path>, flags: EvalFlags) -> Outcome {
    let mut cfg: EvalRun = read_config(config)?;
    cfg.checkpoint = flags.checkpoint.or(cfg.checkpoint);
    cfg.dataset = flags.dataset.or(cfg.dataset);
    cfg.out_dir = flags.out;
    cfg.threads = thread_count()?;
    let (Some(checkpoint), Some(dataset)) = (cfg.checkpoint.clone(), cfg.dataset.clone()) else {
        return Err(Failure::Usage("eval needs --checkpoint and --dataset".into()));
    };
    write_config(&cfg.out_dir, &cfg)?;

    let predictor = Predictor::load(&checkpoint)?;
    let samples = load_samples(&dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    // collect keeps dataset order, so the report does not depend on scheduling
    let probs: Vec<Tensor> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| predictor.predict(s))
            .collect::<m2mrf::Result<Vec<_>>>()
    })?;
    let gts: Vec<Tensor> = samples.iter().map(|s| s.masks.clone()).collect();
    let classes = class_names();
    let report = evaluate(&probs, &gts, &classes)?;

    fs::write(cfg.out_dir.join("report.csv"), report.to_csv())?;
    fs::write(cfg.out_dir.join("report.json"), report.to_json_summary()?)?;
    for (sample, p) in samples.iter().zip(&probs) {
        let dir = cfg.out_dir.join("predictions").join(sample_dir_name(sample.index));
        fs::create_dir_all(&dir)?;
        for (c, name) in classes.iter().enumerate() {
            fs::write(dir.join(format!("pred_{name}.pgm")), pgm_bytes(&p.channel(c)?)?)?;
        }
    }
    print!("{}", report.to_csv());
    Ok(true)
}

fn print_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    let ok = verify::all_passed(checks);
    println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
    ok
}

pub fn verify(suite: Suite, seed: u64) -> Outcome {
    let checks = match suite {
        Suite::Params => verify::param_checks()?,
        Suite::Oracle => vec![
            verify::oracle_check(10, seed)?,
            verify::identity_check(seed)?,
            verify::locality_check(20, seed)?,
        ],
        Suite::Gradcheck => verify::gradcheck_suite(seed)?,
        Suite::Shapes => verify::shape_checks(10, seed)?,
    };
    Ok(print_checks(&checks))
}
