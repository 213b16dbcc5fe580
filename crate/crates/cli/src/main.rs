//! `dins`: phantoms, training, evaluation, baselines, transforms and the
//! interactive server.

mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dins_core::transforms::{guide_channel, ClickSet, ExpParams, GdtParams, GuideTransform};
use dins_core::volume::{read_volume, write_mask, write_volume, VolumeFormat};
use dins_harness::backend::{load_model, Backend, BackendKind, BackendParams};
use dins_harness::boxes::read_boxes;
use dins_harness::evaluate::{compare, evaluate, summary_csv, ExperimentSpec};
use dins_harness::phantom::{generate_phantoms, write_dataset, PhantomConfig};
use dins_harness::training::{run_training, TrainJob};
use dins_server::{AppState, ServerConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "dins", version, about = "Interactive 3D segmentation with click guide maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key.path=value` applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Common {
    fn load<T: Serialize + for<'de> Deserialize<'de> + Default>(&self, extra: Vec<String>) -> Result<Option<T>> {
        let mut overrides = extra;
        overrides.extend(self.overrides.iter().cloned());
        let cfg: T = config::load(self.config.as_deref(), &overrides)?;
        if self.print_config {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(None);
        }
        Ok(Some(cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of `case_NNN` volume and label pairs.
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network; writes best.ckpt, last.ckpt and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; phantoms are generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Simulated interactive evaluation over every sweep point.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Compare backends on the same cases; writes comparison.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Comma-separated `kind` or `kind@checkpoint` entries.
        #[arg(long, value_delimiter = ',')]
        backends: Vec<String>,
    },
    /// Segment one volume from a clicks file.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        /// JSON list of `{"min":[z,y,x],"max":[z,y,x]}` boxes.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long, default_value = "din")]
        backend: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output mask path (`.nii` or raw+json).
        #[arg(long = "mask")]
        mask: Option<PathBuf>,
    },
    /// Turn a clicks file into a guide map.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Exp)]
        method: Method,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// `z,y,x`
        #[arg(long, value_delimiter = ',', default_value = "1,5,5")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Which click list to transform.
        #[arg(long, value_enum, default_value_t = Channel::Positive)]
        channel: Channel,
        /// Measure distances in millimeters instead of voxels.
        #[arg(long)]
        physical: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "din")]
        backend: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of static files served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// JSON file of backend parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; phantoms are generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Edt,
    Gdt,
    Blend,
    Exp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Positive,
    Negative,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct PhantomJob {
    phantoms: PhantomConfig,
    count: usize,
}

impl Default for PhantomJob {
    fn default() -> Self {
        Self { phantoms: PhantomConfig::default(), count: 8 }
    }
}

fn json_str(s: &Path) -> String {
    serde_json::to_string(&s.display().to_string()).expect("string")
}

fn experiment_overrides(common: &Common, e: &ExperimentArgs) -> Vec<String> {
    let mut o = Vec::new();
    if let Some(b) = &e.backend {
        o.push(format!("backend={b}"));
    }
    if let Some(c) = &e.checkpoint {
        o.push(format!("checkpoint={}", json_str(c)));
    }
    if let Some(d) = &e.data {
        o.push(format!("data_dir={}", json_str(d)));
    }
    if let Some(out) = &common.out {
        o.push(format!("out={}", json_str(out)));
    }
    o
}

fn read_clicks(path: &Path) -> Result<ClickSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing clicks {}", path.display()))
}

fn backend_from(name: &str, checkpoint: Option<&Path>, params: BackendParams) -> Result<Backend> {
    let kind: BackendKind = name.parse()?;
    Ok(Backend::with_checkpoint(kind, params, checkpoint)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { common, count, seed } => {
            let mut extra: Vec<String> = count.map(|n| format!("count={n}")).into_iter().collect();
            extra.extend(seed.map(|s| format!("phantoms.seed={s}")));
            let Some(job) = common.load::<PhantomJob>(extra)? else { return Ok(()) };
            if job.count == 0 {
                bail!("count must be at least 1");
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("phantoms"));
            let phantoms = generate_phantoms(&job.phantoms, job.count)?;
            let paths = write_dataset(&out, &phantoms)?;
            println!("wrote {} cases to {}", paths.len(), out.display());
        }
        Command::Train { common, data, epochs } => {
            let mut extra = Vec::new();
            extra.extend(data.map(|d| format!("data_dir={}", json_str(&d))));
            extra.extend(epochs.map(|n| format!("train.epochs={n}")));
            let Some(job) = common.load::<TrainJob>(extra)? else { return Ok(()) };
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let result = run_training(&job, &out)?;
            println!("best epoch {} of {}; checkpoints in {}", result.best_epoch, result.history.len(), out.display());
        }
        Command::Eval { common, experiment } => {
            let Some(spec) = common.load::<ExperimentSpec>(experiment_overrides(&common, &experiment))? else { return Ok(()) };
            let results = evaluate(&spec)?;
            print!("{}", summary_csv(&results));
            for r in &results {
                for (id, err) in &r.failures {
                    log::warn!("{}: case {id} failed: {err}", r.point.label);
                }
            }
        }
        Command::Compare { common, experiment, backends } => {
            let mut extra = experiment_overrides(&common, &experiment);
            if !backends.is_empty() {
                extra.push(format!("compare={}", serde_json::to_string(&backends)?));
            }
            let Some(spec) = common.load::<ExperimentSpec>(extra)? else { return Ok(()) };
            let rows = compare(&spec)?;
            print!("{}", dins_harness::evaluate::compare_csv(&rows));
        }
        Command::Segment { common, input, clicks, boxes, backend, checkpoint, mask } => {
            let Some(params) = common.load::<BackendParams>(Vec::new())? else { return Ok(()) };
            let image = read_volume(&input, VolumeFormat::from_path(&input))?;
            let clicks = read_clicks(&clicks)?;
            let boxes = boxes.map(|p| read_boxes(&p)).transpose()?.unwrap_or_default();
            let backend = backend_from(&backend, checkpoint.as_deref(), params)?;
            let m = backend.segment_clicks(&image, &clicks, &boxes)?;
            let path = match (mask, &common.out) {
                (Some(p), _) => p,
                (None, Some(dir)) => {
                    std::fs::create_dir_all(dir)?;
                    dir.join("mask.raw")
                }
                (None, None) => bail!("give --mask or --out"),
            };
            write_mask(&m, &path, VolumeFormat::from_path(&path))?;
            println!("{} foreground voxels written to {}", m.count(), path.display());
        }
        Command::Transform { input, clicks, method, alpha, beta, sigma, gamma, channel, physical, out } => {
            let sigma: [f64; 3] = sigma.try_into().map_err(|v: Vec<f64>| anyhow::anyhow!("--sigma needs z,y,x, got {} values", v.len()))?;
            let image = read_volume(&input, VolumeFormat::from_path(&input))?;
            let clicks = read_clicks(&clicks)?;
            clicks.validate(image.dims())?;
            let gdt = GdtParams { use_physical_spacing: physical, ..GdtParams::new(alpha, beta) };
            let transform = match method {
                Method::Edt => GuideTransform::Edt { use_physical_spacing: physical },
                Method::Gdt => GuideTransform::Gdt(gdt),
                Method::Blend => GuideTransform::Blend(gdt),
                Method::Exp => GuideTransform::Exp(ExpParams {
                    gamma,
                    sigma,
                    use_physical_spacing: physical,
                    ..ExpParams::default()
                }),
            };
            let seeds = match channel {
                Channel::Positive => &clicks.positives,
                Channel::Negative => &clicks.negatives,
            };
            let map = guide_channel(&image, seeds, &transform)?;
            write_volume(&map, &out, VolumeFormat::from_path(&out))?;
            let (lo, hi) = map.min_max();
            println!("wrote {} (range {lo} to {hi})", out.display());
        }
        Command::Serve { port, host, backend, checkpoint, static_dir, config: file, overrides } => {
            let params: BackendParams = config::load(file.as_deref(), &overrides)?;
            let kind: BackendKind = backend.parse()?;
            let model = match (kind.needs_model(), checkpoint) {
                (true, Some(p)) => Some(Arc::new(load_model(&p)?)),
                (true, None) => bail!("backend {kind} needs --checkpoint"),
                (false, _) => None,
            };
            let mut cfg = ServerConfig::new(kind, params, model);
            cfg.static_dir = static_dir;
            let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(dins_server::serve(addr, AppState::new(cfg)))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
