//! `matchscope` command line.
//!
//! JSON goes to stdout, diagnostics to stderr. Exit codes: 0 success,
//! 1 usage, 2 data, 3 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use matchscope_core::explain::{
    importance_maps_weighted, pca_correspondence, render_correspondence_pair, render_heatmap_pair, ExplainError,
    RenderMode,
};
use matchscope_core::features::{rasterize_mask_weights, CellWeights, FeatureError, MaskSpec, DEFAULT_SUPERSAMPLE};
use matchscope_core::index::{GeoFilter, IndexError, SearchFilters};
use matchscope_core::metric::{run_experiment, ExperimentConfig, MetricError};
use matchscope_core::report::{render_html, CurateEdit, HtmlOptions, ReportEntry, ReportError, ReportStore, SearchCriteria};
use matchscope_core::store::{read_spatial_tensor, SpatialFeatureMap, StoreError};
use matchscope_server::config::ConfigError;
use matchscope_server::{search_tensor, DataError, DataRoot, QueryError, ServerConfig, StartupError, DEFAULT_K, PANEL_SIZE};

#[derive(Debug, Parser)]
#[command(name = "matchscope", version, about = "Explainable image retrieval over stored feature maps")]
struct Cli {
    /// Data root; falls back to MATCHSCOPE_DATA_ROOT, then ./data.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add catalog records and feature tensors to the data root.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        /// Directory of `<image_id>.sfm` files.
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Index maintenance.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Search the current index with a query tensor.
    Query(QueryArgs),
    /// Explain why a stored image matched a query tensor.
    Explain {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        result_id: u64,
        #[arg(long, default_value = "heatmap")]
        mode: RenderMode,
        /// Writes `<prefix>.png` and `<prefix>.json`.
        #[arg(long)]
        out_prefix: PathBuf,
        /// Mask for the query side of a heatmap.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Curated reports.
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Metric-learning experiments.
    Lab {
        #[command(subcommand)]
        action: LabAction,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Service configuration (TOML); environment variables still apply.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    /// Embed every stored tensor and write a new index generation.
    Build {
        /// Output table (default: the data root's index file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// MaskSpec JSON file.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// west,south,east,north in degrees.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with_all = ["center", "radius_km"])]
    bbox: Option<Vec<f64>>,
    /// lat,lon in degrees.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, requires = "radius_km")]
    center: Option<Vec<f64>>,
    #[arg(long, requires = "center")]
    radius_km: Option<f64>,
    #[arg(long)]
    chain: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    terms: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum ReportAction {
    /// Create a report, optionally seeded from `query` output.
    New {
        #[arg(long, default_value = "")]
        query_ref: String,
        /// JSON written by `matchscope query`; its hits become the entries.
        #[arg(long)]
        from_results: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Apply one curation edit, given as JSON (`{"op": "move", ...}`).
    Edit {
        #[arg(long)]
        id: String,
        #[arg(long)]
        edit: String,
    },
    /// Print a report as JSON, or write self-contained HTML.
    Render {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "json", value_parser = ["json", "html"])]
        format: String,
        /// Writes here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum LabAction {
    /// Train every configured loss and report recall.
    Run {
        /// ExperimentConfig JSON; the standard configuration if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        DataError::from(e).into()
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        DataError::from(e).into()
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Index(e) => e.into(),
            QueryError::Feature(e) => e.into(),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<StartupError> for CliError {
    fn from(e: StartupError) -> Self {
        match e {
            StartupError::Data(e) => e.into(),
            StartupError::Report(e) => e.into(),
            StartupError::Extractor(e) => CliError::Usage(e.to_string()),
            StartupError::Bind { .. } => CliError::Io(e.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("serializable output")
}

fn read_mask(path: Option<&Path>) -> Result<MaskSpec, CliError> {
    let mask = match path {
        Some(p) => read_json(p)?,
        None => MaskSpec::empty(),
    };
    mask.validate()?;
    Ok(mask)
}

fn query_filters(args: &QueryArgs) -> Result<SearchFilters, CliError> {
    let arity = |flag: &str, got: &Option<Vec<f64>>, want: usize| match got {
        Some(v) if v.len() != want => Err(CliError::Usage(format!("{flag} takes {want} comma-separated numbers"))),
        _ => Ok(()),
    };
    arity("--bbox", &args.bbox, 4)?;
    arity("--center", &args.center, 2)?;
    let geo = match (&args.bbox, &args.center, args.radius_km) {
        (Some(b), _, _) => Some(GeoFilter::BoundingBox { west: b[0], south: b[1], east: b[2], north: b[3] }),
        (None, Some(c), Some(radius_km)) => Some(GeoFilter::Radius { lat: c[0], lon: c[1], radius_km }),
        _ => None,
    };
    Ok(SearchFilters { geo, chain_id: args.chain, terms: args.terms.clone() })
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let service_config = match &cli.command {
        Command::Serve { config, .. } => config.clone(),
        _ => None,
    };
    let mut config = ServerConfig::load(service_config.as_deref())?;
    if let Some(root) = cli.data_root {
        config.data_root = root;
    }
    let data = DataRoot::new(&config.data_root);

    match cli.command {
        Command::Ingest { catalog, features_dir } => {
            let report = data.ingest(&catalog, features_dir.as_deref())?;
            for r in &report.catalog.rejected {
                eprintln!("rejected catalog line {}: {}", r.line, r.reason);
            }
            Ok(to_value(report))
        }
        Command::Index { action: IndexAction::Build { out } } => {
            let catalog = data.load_catalog()?;
            let index = data.build_index(&catalog, out.as_deref())?;
            let out = out.unwrap_or_else(|| data.index_path());
            Ok(serde_json::json!({
                "generation": index.generation(),
                "count": index.len(),
                "dim": index.dim(),
                "out": out.display().to_string(),
            }))
        }
        Command::Query(args) => {
            if args.k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            let filters = query_filters(&args)?;
            filters.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mask = read_mask(args.mask.as_deref())?;
            let features = read_spatial_tensor(&args.tensor)?;
            let catalog = data.load_catalog()?;
            let index = data.load_index(&catalog)?;
            Ok(to_value(search_tensor(&index, &features, &mask, args.k, filters)?))
        }
        Command::Explain { query, result_id, mode, out_prefix, mask } => {
            let mask = read_mask(mask.as_deref())?;
            let fq = read_spatial_tensor(&query)?;
            let fr: SpatialFeatureMap = data
                .read_features(result_id)?
                .ok_or_else(|| CliError::Data(format!("no stored features for image {result_id}")))?;
            if fq.shape() != fr.shape() {
                return Err(ExplainError::ShapeMismatch { query: fq.shape(), result: fr.shape() }.into());
            }
            let panel = (PANEL_SIZE.max(fq.width() as u32), PANEL_SIZE.max(fq.height() as u32));
            let (png, json) = match mode {
                RenderMode::Heatmap => {
                    let weights = rasterize_mask_weights(&mask, (fq.height(), fq.width()), DEFAULT_SUPERSAMPLE)?;
                    let uniform = CellWeights::uniform(fr.height(), fr.width());
                    let pair = importance_maps_weighted(&fq, &weights, &fr, &uniform, true)?;
                    (render_heatmap_pair(&pair, panel)?, to_value(pair.export()))
                }
                RenderMode::Correspondence => {
                    let map = pca_correspondence(&fq, &fr)?;
                    (render_correspondence_pair(&map, panel)?, to_value(map.export()))
                }
            };
            let png_path = out_prefix.with_extension("png");
            let json_path = out_prefix.with_extension("json");
            write_file(&png_path, &png)?;
            write_file(&json_path, &serde_json::to_vec(&json).expect("serializable output"))?;
            Ok(serde_json::json!({
                "mode": mode.as_str(),
                "png": png_path.display().to_string(),
                "json": json_path.display().to_string(),
            }))
        }
        Command::Report { action } => {
            let store = ReportStore::open(data.reports_dir())?;
            match action {
                ReportAction::New { query_ref, from_results, k } => {
                    let entries = match from_results {
                        Some(path) => {
                            let results: matchscope_core::index::SearchResult = read_json(&path)?;
                            results.hits.iter().map(|h| ReportEntry::new(h.image_id, h.hotel_id, h.score)).collect()
                        }
                        None => Vec::new(),
                    };
                    let criteria = SearchCriteria { query_id: None, k, filters: SearchFilters::default() };
                    Ok(to_value(store.create(query_ref, criteria, entries)?))
                }
                ReportAction::Edit { id, edit } => {
                    let edit: CurateEdit =
                        serde_json::from_str(&edit).map_err(|e| CliError::Usage(format!("invalid --edit: {e}")))?;
                    Ok(to_value(store.curate(&id, edit)?))
                }
                ReportAction::Render { id, format, out } => {
                    let report = store.get(&id)?;
                    let bytes = if format == "html" {
                        render_html(&report, data.path(), HtmlOptions { hotel_summary: true }).html.into_bytes()
                    } else {
                        report.to_json()
                    };
                    match out {
                        Some(path) => {
                            write_file(&path, &bytes)?;
                            Ok(serde_json::json!({ "report_id": report.report_id, "out": path.display().to_string() }))
                        }
                        None if format == "json" => Ok(serde_json::from_slice(&bytes).expect("report json")),
                        // HTML is not JSON: stdout gets the document itself
                        None => {
                            print!("{}", String::from_utf8_lossy(&bytes));
                            Ok(Value::Null)
                        }
                    }
                }
            }
        }
        Command::Lab { action: LabAction::Run { config } } => {
            let cfg = match config {
                Some(path) => read_json::<ExperimentConfig>(&path)?,
                None => ExperimentConfig::standard(),
            };
            Ok(to_value(run_experiment(&cfg)?))
        }
        Command::Serve { port, .. } => {
            if let Some(port) = port {
                config.port = port;
            }
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            runtime.block_on(matchscope_server::serve(config))?;
            Ok(Value::Null)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
