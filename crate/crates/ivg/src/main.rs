use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ivg::config::{Config, Mode};
use ivg::engine::Engine;
use ivg::service::{router, AppState};
use ivg::store::Store;
use ivg::{import, svg};
use ivg_core::layout::GroupingMode;
use ivg_core::{BuildParams, LayoutDocument};

#[derive(Parser)]
#[command(name = "ivg", version, about = "Image variant graphs for prompt histories")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "IVG_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    port: Option<u16>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// stub or real
    #[arg(long, global = true)]
    backend_mode: Option<Mode>,
    #[arg(long, global = true)]
    embed_url: Option<String>,
    /// stub or real
    #[arg(long, global = true)]
    embed_mode: Option<Mode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
    /// Load a session from a JSON-lines records file and print its id.
    Import {
        records: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// List stored sessions.
    Sessions,
    /// Write the layout document of a session.
    Build {
        session: String,
        #[command(flatten)]
        params: GraphArgs,
        /// Output file; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Render a layout document as SVG.
    ExportSvg {
        layout: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Prefix for thumbnail links.
        #[arg(long, default_value = "assets/")]
        asset_prefix: String,
    },
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    w_min: Option<f64>,
    #[arg(long)]
    cluster_distance: Option<f64>,
    #[arg(long)]
    grouping_mode: Option<String>,
    #[arg(long)]
    n_e: Option<usize>,
}

impl GraphArgs {
    fn apply(&self, p: &mut BuildParams) -> anyhow::Result<()> {
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.s_min {
            p.graph.s_min = v;
        }
        if self.w_min.is_some() {
            p.graph.w_min = self.w_min;
        }
        if let Some(v) = self.cluster_distance {
            p.cluster_distance = v;
        }
        if let Some(v) = &self.grouping_mode {
            p.grouping_mode = v
                .parse::<GroupingMode>()
                .map_err(|_| anyhow::anyhow!("grouping mode must be cluster or stage"))?;
        }
        if let Some(v) = self.n_e {
            p.graph.n_e = v;
        }
        p.validate()?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(v) = cli.port {
        config.port = v;
    }
    if let Some(v) = &cli.data_dir {
        config.data_dir = v.clone();
    }
    if let Some(v) = &cli.backend_url {
        config.backend.url = Some(v.clone());
    }
    if let Some(v) = cli.backend_mode {
        config.backend.mode = v;
    }
    if let Some(v) = &cli.embed_url {
        config.embed.url = Some(v.clone());
    }
    if let Some(v) = cli.embed_mode {
        config.embed.mode = v;
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    Ok(config)
}

fn write_output(out: Option<&PathBuf>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let open_store = || -> anyhow::Result<Arc<Store>> {
        Ok(Arc::new(Store::open(&config.data_dir).with_context(|| {
            format!("opening store at {}", config.data_dir.display())
        })?))
    };
    let defaults = BuildParams {
        seed: config.seed,
        ..BuildParams::default()
    };
    match &cli.command {
        Command::Serve { bind } => {
            let engine = Arc::new(Engine::new(open_store()?, config.embedder()?, config.embed.allow_degraded));
            let state = AppState::new(engine, config.gateway()?, defaults);
            let addr = SocketAddr::new(*bind, config.port);
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            tracing::info!(%addr, data_dir = %config.data_dir.display(), "serving");
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
        }
        Command::Import { records, title } => {
            let store = open_store()?;
            let snapshot = import::import_file(&store, records, title.as_deref())?;
            println!("{}", snapshot.session.id);
            eprintln!("imported {} steps", snapshot.steps.len());
        }
        Command::Sessions => {
            for s in open_store()?.list_sessions() {
                println!("{}\t{}\t{}\t{}", s.id, s.step_count, s.created_at.to_rfc3339(), s.title);
            }
        }
        Command::Build { session, params, out } => {
            let mut p = defaults;
            params.apply(&mut p)?;
            let engine = Engine::new(open_store()?, config.embedder()?, config.embed.allow_degraded);
            let bytes = engine.document(session, &p).await?;
            write_output(out.as_ref(), &bytes)?;
        }
        Command::ExportSvg {
            layout,
            out,
            asset_prefix,
        } => {
            let text = std::fs::read(layout).with_context(|| format!("reading {}", layout.display()))?;
            let doc: LayoutDocument =
                serde_json::from_slice(&text).with_context(|| format!("parsing {}", layout.display()))?;
            write_output(out.as_ref(), svg::render(&doc, asset_prefix).as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
