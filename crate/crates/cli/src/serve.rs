use std::path::PathBuf;
use std::sync::Arc;

use bookend_core::session::{SessionConfig, SessionStore};
use bookend_service::{router, serve, ServiceOptions};
use clap::Args;
use serde_json::json;

use crate::config::{BackendArgs, FileConfig, MarkerArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Session event logs live here.
    #[arg(long, env = "BOOKEND_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "BOOKEND_HOST")]
    pub host: Option<String>,
    /// 0 picks a free port; the bound address is printed on startup.
    #[arg(long, env = "BOOKEND_PORT")]
    pub port: Option<u16>,
    /// Built web client to serve for unrouted paths.
    #[arg(long, env = "BOOKEND_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    /// Allow cross-origin requests.
    #[arg(long)]
    pub cors: bool,
    /// Default seed for new sessions.
    #[arg(long, env = "BOOKEND_SEED")]
    pub seed: Option<u64>,
    /// Default story length for new sessions.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub markers: MarkerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

pub fn run(args: ServeArgs, file: &FileConfig) -> CliResult<()> {
    let s = &file.serve;
    let markers = args.markers.resolve(file)?;
    let backend = args.backend.resolve(file, &markers)?;
    let data_dir = args
        .data_dir
        .or_else(|| s.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sessions"));
    let host = args
        .host
        .or_else(|| s.host.clone())
        .unwrap_or_else(|| "127.0.0.1".into());
    let port = args.port.or(s.port).unwrap_or(8080);
    let options = ServiceOptions {
        static_dir: args.static_dir.or_else(|| s.static_dir.clone()),
        cors: args.cors || s.cors.unwrap_or(false),
        default_config: SessionConfig {
            seed: args.seed.or(file.seed),
            n: args.n.or(s.n).unwrap_or(5),
            markers,
            ..SessionConfig::default()
        },
    };

    let store = SessionStore::open(&data_dir, backend.suite.clone())
        .map_err(|e| CliError::Usage(format!("cannot open session store {}: {e}", data_dir.display())))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::io(&addr, e))?;
        let local = listener.local_addr().map_err(|e| CliError::io(&addr, e))?;
        println!(
            "{}",
            json!({
                "listening": format!("http://{local}"),
                "config": {
                    "command": "serve",
                    "data_dir": data_dir,
                    "static_dir": options.static_dir,
                    "cors": options.cors,
                    "session_defaults": options.default_config,
                    "backend": backend,
                },
            })
        );
        let app = router(Arc::new(store), &options);
        serve(listener, app).await.map_err(|e| CliError::io(&addr, e))
    })
}
