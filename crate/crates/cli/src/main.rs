use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use tmcsim::capability::{HttpFetcher, ProcessRunner, SystemRunner};
use tmcsim::pipeline::{
    build_scenario, fetch_network, launch_simulator, load_dataset, time_range, validate_live, validate_offline, BuildEnv,
    NetworkSource, PipelineManifest, ValidationOutcome,
};
use tmcsim::validation::traci::TraciOptions;
use tmcsim::PipelineError;

#[derive(Parser)]
#[command(name = "tmcsim", version, about = "Build traffic simulation scenarios from turning movement counts")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the time spans with count data for each intersection.
    Timerange(PipelineArgs),
    /// Write the network, route and configuration files for a window.
    Build(BuildArgs),
    /// Compare the counts in a route file with simulated vehicles.
    Validate(ValidateArgs),
    /// Download and convert the road network around the intersections.
    FetchMap(FetchMapArgs),
}

/// Flags mirroring manifest fields. Values in the manifest file win.
#[derive(Args, Clone)]
struct PipelineArgs {
    /// JSON manifest; relative paths inside it resolve against its directory.
    #[arg(short, long)]
    manifest: Option<PathBuf>,
    /// Comma-separated intersection (centreline) ids.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    /// Count CSV file.
    #[arg(long, conflicts_with = "fetch_data")]
    data: Option<PathBuf>,
    /// Download counts from the open data portal.
    #[arg(long)]
    fetch_data: bool,
    /// Column schema: `toronto`, `canonical` or a JSON file.
    #[arg(long)]
    schema: Option<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: PipelineArgs,
    /// Network file.
    #[arg(long, conflicts_with = "fetch_network")]
    network: Option<PathBuf>,
    /// Download and convert the map around the intersections.
    #[arg(long)]
    fetch_network: bool,
    /// Window start, e.g. 2023-05-01T08:00:00.
    #[arg(long)]
    start: Option<String>,
    /// Window end (exclusive).
    #[arg(long)]
    end: Option<String>,
    /// Output directory; defaults to the manifest's `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Accept junction matches up to this many metres away.
    #[arg(long, value_name = "M")]
    allow_distance: Option<f64>,
    /// Run the simulator on the built configuration.
    #[arg(long)]
    launch: bool,
    #[arg(long, default_value = "sumo")]
    sumo_binary: String,
}

#[derive(Args)]
struct ValidateArgs {
    /// Route file written by `build`.
    #[arg(long)]
    routes: PathBuf,
    /// Simulator vehroute output.
    #[arg(long, required_unless_present = "traci", conflicts_with = "traci")]
    vehroutes: Option<PathBuf>,
    /// Collect vehicle ids live from a TraCI server (host:port).
    #[arg(long)]
    traci: Option<String>,
    /// Simulation steps to run over TraCI.
    #[arg(long, default_value_t = 900)]
    steps: u32,
    /// Write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the report as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FetchMapArgs {
    #[command(flatten)]
    common: PipelineArgs,
    /// Margin around the intersections in metres.
    #[arg(long, default_value_t = tmcsim::osm::DEFAULT_BUFFER_M)]
    buffer: f64,
    /// Directory for the downloaded map and converted network.
    #[arg(short, long)]
    out: PathBuf,
}

fn absolute(p: &Path) -> Result<String, PipelineError> {
    let abs = std::path::absolute(p).map_err(|e| PipelineError::io(p, e))?;
    Ok(abs.to_string_lossy().into_owned())
}

/// Manifest from flags overlaid by the manifest file, plus the directory
/// relative paths resolve against.
fn assemble(common: &PipelineArgs, extra: Map<String, Value>) -> Result<(PipelineManifest, PathBuf), PipelineError> {
    let mut merged = Map::new();
    if !common.ids.is_empty() {
        merged.insert("intersection_ids".into(), json!(common.ids));
    }
    if let Some(d) = &common.data {
        merged.insert("data".into(), json!({ "path": absolute(d)? }));
    } else if common.fetch_data {
        merged.insert("data".into(), json!("auto_fetch"));
    }
    if let Some(s) = &common.schema {
        let known = s == "toronto" || s == "canonical";
        merged.insert("schema".into(), json!(if known { s.clone() } else { absolute(Path::new(s))? }));
    }
    merged.extend(extra);

    let base_dir = match &common.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| PipelineError::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
            let Value::Object(fields) = file else {
                return Err(PipelineError::Usage(format!("{}: manifest must be a JSON object", path.display())));
            };
            merged.extend(fields);
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        }
        None => PathBuf::from("."),
    };
    if !merged.contains_key("intersection_ids") {
        return Err(PipelineError::Usage("no intersection ids: pass --ids or a manifest".into()));
    }
    if !merged.contains_key("data") {
        return Err(PipelineError::Usage("no count data: pass --data, --fetch-data or a manifest".into()));
    }
    let manifest = PipelineManifest::from_json(&Value::Object(merged).to_string())?;
    Ok((manifest, base_dir))
}

#[cfg(feature = "http")]
fn http_fetcher() -> Option<Box<dyn HttpFetcher>> {
    Some(Box::new(tmcsim::capability::UreqFetcher::new(Duration::from_secs(300))))
}

#[cfg(not(feature = "http"))]
fn http_fetcher() -> Option<Box<dyn HttpFetcher>> {
    None
}

/// Capabilities are only handed out when the manifest asks for a fetch.
fn env_for<'a>(
    manifest: &PipelineManifest,
    http: &'a Option<Box<dyn HttpFetcher>>,
    runner: &'a SystemRunner,
) -> BuildEnv<'a> {
    let fetch_data = matches!(manifest.data, tmcsim::pipeline::DataSource::AutoFetch);
    let fetch_net = matches!(manifest.network, Some(NetworkSource::AutoFetch { .. }));
    let mut env = BuildEnv::offline();
    if fetch_data || fetch_net {
        env.http = http.as_deref();
    }
    if fetch_net {
        env.runner = Some(runner as &dyn ProcessRunner);
    }
    env
}

fn cmd_timerange(args: &PipelineArgs) -> Result<(), PipelineError> {
    let (manifest, base_dir) = assemble(args, Map::new())?;
    let http = http_fetcher();
    let runner = SystemRunner;
    let ds = load_dataset(&manifest, &base_dir, &env_for(&manifest, &http, &runner))?;
    let report = time_range(&ds, &manifest.intersection_ids);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    } else {
        println!("{:<16} {:<20} {:<20}", "intersection", "start", "end");
        for (id, spans) in &report.ranges {
            if spans.is_empty() {
                println!("{id:<16} (no data)");
            }
            for s in spans {
                println!("{id:<16} {:<20} {:<20}", s.start.to_string(), s.end.to_string());
            }
        }
        for s in &report.common {
            println!("{:<16} {:<20} {:<20}", "(all)", s.start.to_string(), s.end.to_string());
        }
    }
    if !report.has_data() {
        return Err(PipelineError::NoData(format!(
            "no data for any of: {}",
            manifest.intersection_ids.join(", ")
        )));
    }
    Ok(())
}

fn cmd_build(args: &BuildArgs) -> Result<(), PipelineError> {
    let mut extra = Map::new();
    if let Some(n) = &args.network {
        extra.insert("network".into(), json!({ "path": absolute(n)? }));
    } else if args.fetch_network {
        extra.insert("network".into(), json!({ "auto_fetch": {} }));
    }
    match (&args.start, &args.end) {
        (Some(s), Some(e)) => {
            extra.insert("window".into(), json!({ "start": s, "end": e }));
        }
        (None, None) => {}
        _ => return Err(PipelineError::Usage("--start and --end go together".into())),
    }
    if let Some(o) = &args.out {
        extra.insert("output_dir".into(), json!(absolute(o)?));
    }
    if let Some(a) = args.allow_distance {
        extra.insert("allow_distance_m".into(), json!(a));
    }
    let (manifest, base_dir) = assemble(&args.common, extra)?;
    let out_dir = match &manifest.output_dir {
        Some(d) => base_dir.join(d),
        None => return Err(PipelineError::Usage("no output directory: pass --out or set output_dir".into())),
    };
    let http = http_fetcher();
    let runner = SystemRunner;
    let built = build_scenario(&manifest, &base_dir, &out_dir, &env_for(&manifest, &http, &runner))?;

    if args.common.json {
        println!("{}", serde_json::to_string_pretty(&json!({ "manifest": manifest, "build": built })).expect("serializable"));
    } else {
        println!("{}", manifest.to_json());
        for b in &built.bindings {
            println!("matched {} -> junction {} ({:.2} m)", b.source_id, b.junction_id, b.match_distance);
        }
        println!("{} flows, {} vehicles", built.flow_count, built.vehicle_count);
        for d in &built.dropped {
            eprintln!("dropped {} {} bin {} ({} vehicles): {}", d.intersection_id, d.key, d.bin_index, d.count, d.message);
        }
        for n in &built.notes {
            eprintln!("note: {n}");
        }
        for p in [&built.artifacts.network, &built.artifacts.routes, &built.artifacts.config] {
            println!("wrote {}", p.display());
        }
    }
    if args.launch {
        let stdout = launch_simulator(&args.sumo_binary, &built.artifacts.config, &runner)?;
        print!("{stdout}");
    }
    Ok(())
}

fn write_report(outcome: &ValidationOutcome, args: &ValidateArgs) -> Result<(), PipelineError> {
    let json = outcome.report.to_json()?;
    match &args.report {
        Some(p) => std::fs::write(p, &json).map_err(|e| PipelineError::io(p, e))?,
        None => println!("{json}"),
    }
    if let Some(p) = &args.csv {
        std::fs::write(p, outcome.report.to_csv()?).map_err(|e| PipelineError::io(p, e))?;
    }
    for d in &outcome.diagnostics {
        eprintln!("note: {d}");
    }
    for t in &outcome.report.totals {
        eprintln!("{}: real {}, simulated {}, abs diff {}", t.intersection_id, t.real, t.simulated, t.abs_diff);
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), PipelineError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e));
    let routes = read(&args.routes)?;
    let outcome = match (&args.vehroutes, &args.traci) {
        (Some(v), _) => validate_offline(&routes, &read(v)?)?,
        (None, Some(endpoint)) => {
            let options = TraciOptions { connect_retries: 10, ..TraciOptions::default() };
            validate_live(&routes, endpoint, args.steps, &options)?
        }
        (None, None) => return Err(PipelineError::Usage("pass --vehroutes or --traci".into())),
    };
    write_report(&outcome, args)
}

fn cmd_fetch_map(args: &FetchMapArgs) -> Result<(), PipelineError> {
    let (manifest, base_dir) = assemble(&args.common, Map::new())?;
    let http = http_fetcher();
    let runner = SystemRunner;
    let mut env = env_for(&manifest, &http, &runner);
    env.http = http.as_deref();
    env.runner = Some(&runner);
    let ds = load_dataset(&manifest, &base_dir, &env)?;
    let net = fetch_network(&manifest, &ds, args.buffer, &args.out, &env)?;
    println!("wrote {}", net.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Timerange(a) => cmd_timerange(a),
        Cmd::Build(a) => cmd_build(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::FetchMap(a) => cmd_fetch_map(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error [{category}]: {e}");
            eprintln!("hint: {}", e.hint());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
