use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lambdatune_client::api::*;
use lambdatune_client::{Client, ClientError};
use lambdatune_core::bridge::{CommandTemplate, MetricKeys, SyntheticSuite};
use lambdatune_core::opt::OptimizerConfig;
use lambdatune_core::sweep::{read_results, write_results, OptimizationResult, SweepConfig};
use lambdatune_core::{CodecId, FrameTypeGroup, LambdaScope, RDCurve, ScaleFactor};
use lambdatune_server::{spawn_local, AppState, DEFAULT_MAX_ENCODES};

#[derive(Parser)]
#[command(name = "lambdatune", version, about = "Per-clip Lagrange multiplier tuning over encoder RD curves")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Service URL. Without it an in-process server is started.
    #[arg(long, global = true)]
    server: Option<String>,
    /// JSON clip manifest for external encoders.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true, default_value = "AV1")]
    codec: CodecId,
    /// Comma-separated QP ladder; the codec default when omitted.
    #[arg(long, global = true, value_delimiter = ',')]
    qps: Option<Vec<i32>>,
    /// Frame-type group k applies to (default KF_GF_ARF for AV1, IFrames for HEVC).
    #[arg(long, global = true)]
    group: Option<FrameTypeGroup>,
    #[arg(long, global = true, default_value = "Top")]
    scope: LambdaScope,
    #[arg(long, global = true, default_value_t = 1.0)]
    k: f64,
    #[arg(long, global = true, default_value_t = 5)]
    workers: usize,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Keep encoded media under the cache directory.
    #[arg(long, global = true)]
    keep_media: bool,
    #[arg(long, global = true)]
    encoder_template: Option<String>,
    #[arg(long, global = true)]
    metric_template: Option<String>,
    /// Dotted JSON path of pooled MS-SSIM in the metric report.
    #[arg(long, global = true)]
    msssim_key: Option<String>,
    /// Synthetic model file, or `default`.
    #[arg(long, global = true)]
    synthetic: Option<String>,
    /// Restrict to these clip ids (repeatable).
    #[arg(long = "clip", global = true)]
    clips: Vec<String>,
    #[arg(long, global = true, default_value_t = 4)]
    min_points: usize,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode every clip over the QP ladder at one k.
    Sweep,
    /// Search k per clip and write one result file per clip.
    Optimize {
        #[arg(long, default_value_t = 0.01)]
        xtol: f64,
        #[arg(long, default_value_t = 25)]
        max_iters: usize,
    },
    /// BD-Rate of a test curve against a reference curve.
    Bdrate { reference: PathBuf, test: PathBuf },
    /// Summarize result files or directories.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// SVG RD plot of curve or result files.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Default and scaled lambda at one QP.
    Lambda {
        #[arg(long)]
        qp: i32,
        #[arg(long)]
        qdc_table: Option<PathBuf>,
        #[arg(long)]
        a: Option<f64>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value_t = DEFAULT_MAX_ENCODES)]
        max_encodes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// Bad flag combinations, reported like clap's own usage errors.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

impl Global {
    fn sweep_config(&self) -> anyhow::Result<SweepConfig> {
        let group = self.group.unwrap_or(match self.codec {
            CodecId::Av1 => FrameTypeGroup::KfGfArf,
            CodecId::Hevc => FrameTypeGroup::IFrames,
        });
        let mut config = SweepConfig::new(self.codec, group, self.scope);
        if let Some(qps) = &self.qps {
            config.qp_ladder = qps.clone();
        }
        config.workers = self.workers;
        config.cache_dir = self.cache_dir.as_deref().map(absolute).transpose()?;
        config.keep_media = self.keep_media;
        config.min_points = self.min_points;
        Ok(config)
    }

    fn backend(&self) -> anyhow::Result<BackendSpec> {
        if let Some(spec) = &self.synthetic {
            let suite = SyntheticSuite::load(spec).map_err(|e| anyhow!("synthetic model failed: {e}"))?;
            return Ok(BackendSpec::Synthetic { suite });
        }
        let (Some(manifest), Some(enc), Some(metric)) = (&self.manifest, &self.encoder_template, &self.metric_template)
        else {
            return Err(Usage("either --synthetic or all of --manifest, --encoder-template and --metric-template are required".into()).into());
        };
        let templates = CommandTemplate::new(enc, metric).map_err(|e| Usage(e.to_string()))?;
        let mut metric_keys = MetricKeys::default();
        if let Some(key) = &self.msssim_key {
            metric_keys.msssim = key.clone();
        }
        Ok(BackendSpec::External { manifest: absolute(manifest)?, templates, metric_keys })
    }

    fn scale(&self) -> anyhow::Result<ScaleFactor> {
        ScaleFactor::new(self.k).map_err(|e| Usage(e.to_string()).into())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Curves from a curve file, a curve array, or a result file (reference
/// plus best curve).
fn load_curves(path: &Path) -> anyhow::Result<Vec<RDCurve>> {
    let doc: serde_json::Value = read_json(path)?;
    let parsed = if doc.get("trials").is_some() {
        serde_json::from_value::<OptimizationResult>(doc).map(|r| {
            let best = r.best_curve().clone();
            if best.k == r.reference.k {
                vec![r.reference]
            } else {
                vec![r.reference, best]
            }
        })
    } else if doc.is_array() {
        serde_json::from_value(doc)
    } else {
        serde_json::from_value(doc).map(|c| vec![c])
    };
    parsed.with_context(|| format!("{} holds no RD curve", path.display()))
}

/// Files as given, with directories replaced by their `*.json` entries.
fn expand(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn write_out(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn pct(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if let Command::Serve { listen, max_encodes } = &cli.command {
        let listener =
            tokio::net::TcpListener::bind(listen).await.with_context(|| format!("binding {listen}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        lambdatune_server::serve(listener, AppState::new(*max_encodes)).await?;
        return Ok(());
    }
    let client = match &g.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let addr = spawn_local(AppState::new(DEFAULT_MAX_ENCODES)).await.context("starting embedded server")?;
            Client::new(format!("http://{addr}"))
        }
    };

    match cli.command {
        Command::Sweep => {
            let req = SweepRequest { backend: g.backend()?, clips: g.clips.clone(), k: g.scale()?, config: g.sweep_config()? };
            let resp = client.sweep(&req).await?;
            for s in &resp.sweeps {
                println!(
                    "{} k={}: {} points, {} encodes, {} cached",
                    s.curve.clip_id,
                    s.curve.k,
                    s.curve.points().len(),
                    s.invocations,
                    s.cache_hits
                );
                for p in s.curve.points() {
                    println!("  qp {:>2}  {:>12.3} kbps  {:>8.4} dB", p.qp, p.bitrate_kbps, p.msssim_db);
                }
            }
            if let Some(out) = &g.out {
                let curves: Vec<&RDCurve> = resp.sweeps.iter().map(|s| &s.curve).collect();
                let json = if curves.len() == 1 {
                    serde_json::to_string_pretty(curves[0])?
                } else {
                    serde_json::to_string_pretty(&curves)?
                };
                write_out(out, &(json + "\n"))?;
            }
        }
        Command::Optimize { xtol, max_iters } => {
            let optimizer = OptimizerConfig { xtol, max_iters, ..Default::default() };
            let req = OptimizeRequest { backend: g.backend()?, clips: g.clips.clone(), config: g.sweep_config()?, optimizer };
            let resp = client.optimize(&req).await?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            write_results(&out, &resp.results)?;
            for r in &resp.results {
                println!(
                    "{}: k_hat={:.4} bd_rate={}% iterations={} encodes={}",
                    r.clip_id,
                    r.k_hat.get(),
                    pct(r.bd_rate),
                    r.iterations,
                    r.total_invocations + r.reference_invocations
                );
            }
            println!("{} results written to {}; {} encoder invocations", resp.results.len(), out.display(), resp.encoder_invocations);
            if let Some(f) = resp.failures.first() {
                return Err(anyhow!(
                    "{} of {} clips failed; first: clip `{}`: {}",
                    resp.failures.len(),
                    resp.failures.len() + resp.results.len(),
                    f.clip,
                    f.error
                ));
            }
        }
        Command::Bdrate { reference, test } => {
            let one = |p: &Path| -> anyhow::Result<RDCurve> {
                let mut curves = load_curves(p)?;
                if curves.len() != 1 {
                    return Err(anyhow!("{} holds {} curves, expected one", p.display(), curves.len()));
                }
                Ok(curves.remove(0))
            };
            let req = BdRateRequest { reference: one(&reference)?, test: one(&test)?, min_points: Some(g.min_points) };
            let resp = client.bd_rate(&req).await?;
            println!("BD-Rate: {}%", pct(resp.bd_rate));
            println!("BD-MS-SSIM: {} dB", pct(resp.bd_quality));
        }
        Command::Report { inputs, format } => {
            let results = read_results(&inputs)?;
            let format = match format {
                Format::Text => ReportFormat::Text,
                Format::Csv => ReportFormat::Csv,
            };
            let resp = client.report(&ReportRequest { results, format }).await?;
            match &g.out {
                Some(out) => write_out(out, &resp.rendered)?,
                None => print!("{}", resp.rendered),
            }
        }
        Command::Plot { inputs } => {
            let mut curves = Vec::new();
            for p in expand(&inputs)? {
                curves.extend(load_curves(&p)?);
            }
            let resp = client.plot(&PlotRequest { curves }).await?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("rd.svg"));
            write_out(&out, &resp.svg)?;
            println!("wrote {}", out.display());
        }
        Command::Lambda { qp, qdc_table, a } => {
            let req = LambdaRequest {
                codec: g.codec,
                qp,
                k: g.scale()?,
                qdc_table: qdc_table.as_deref().map(absolute).transpose()?,
                a,
            };
            let resp = client.lambda(&req).await?;
            println!("lambda0 {:.6}\nlambda {:.6}", resp.lambda0, resp.lambda);
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            match e.downcast_ref::<ClientError>() {
                Some(ClientError::Api(api)) => eprintln!("error: {api}"),
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
