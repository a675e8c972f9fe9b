use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use tmcsim::capability::SystemRunner;
use tmcsim::pipeline::DataSource;
use tmcsim_service::{router, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "tmcsim-service", version, about = "HTTP API for building and validating scenarios")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Scenario records and artifacts live here.
    #[arg(long, default_value = "tmcsim-data")]
    data_dir: PathBuf,
    /// Serve the compiled web UI from this directory.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Count CSV answering time-range queries that name no scenario.
    #[arg(long, conflicts_with = "timerange_fetch")]
    timerange_data: Option<String>,
    /// Answer those queries from the open data portal instead.
    #[arg(long)]
    timerange_fetch: bool,
    #[arg(long)]
    schema: Option<String>,
    /// Allow auto-fetch manifests to reach the network.
    #[arg(long)]
    allow_network: bool,
    /// Allow map conversion through external tools.
    #[arg(long)]
    allow_processes: bool,
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    let mut config = ServiceConfig::offline(&args.data_dir);
    config.static_dir = args.static_dir;
    config.timerange_schema = args.schema;
    config.timerange_data = match (args.timerange_data, args.timerange_fetch) {
        (Some(p), _) => Some(DataSource::Path(p)),
        (None, true) => Some(DataSource::AutoFetch),
        (None, false) => None,
    };
    if args.allow_network || args.timerange_fetch {
        #[cfg(feature = "http")]
        {
            config.http = Some(Arc::new(tmcsim::capability::UreqFetcher::new(Duration::from_secs(300))));
        }
        #[cfg(not(feature = "http"))]
        {
            let _ = Duration::ZERO;
            eprintln!("built without the http feature; network access stays disabled");
        }
    }
    if args.allow_processes {
        config.runner = Some(Arc::new(SystemRunner));
    }
    let state = match AppState::new(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(3);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            std::process::exit(3);
        }
    };
    eprintln!("listening on http://{}", args.bind);
    if let Err(e) = axum::serve(listener, router(state)).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
