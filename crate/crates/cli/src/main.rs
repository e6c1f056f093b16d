//! `deepmap`: drives the service from the shell. Without `--server` it
//! starts one in-process on a loopback port.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deepmap_api::*;
use deepmap_client::{Client, ClientError};

#[derive(Parser, Debug)]
#[command(
    name = "deepmap",
    version,
    about = "Exact key-value lookup over learned hybrid stores"
)]
pub struct Cli {
    /// Service root, e.g. http://127.0.0.1:7878; an in-process server is used when absent.
    #[arg(long, global = true)]
    server: Option<String>,
    /// File of `flag = value` lines; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic relation.
    Gen(GenArgs),
    /// Encode a headed CSV file into a relation.
    Ingest(IngestArgs),
    /// Build one representation of a relation.
    Build(BuildArgs),
    /// Search an architecture and build the hybrid from it.
    Search(SearchArgs),
    /// Look keys up in a store.
    Query(QueryArgs),
    /// Insert rows into a hybrid store.
    Insert(MutateArgs),
    /// Delete keys from a hybrid store.
    Delete(MutateArgs),
    /// Update rows of a hybrid store.
    Update(MutateArgs),
    /// Merge a hybrid store's overlay into its sealed partitions.
    Compact(CompactArgs),
    /// Replay an oracle-checked workload against a store.
    Bench(BenchArgs),
    /// Combine bench reports into one comparison table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    HighCorr,
    LowCorr,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    rows: u64,
    #[arg(long, default_value_t = 1)]
    columns: usize,
    #[arg(long, default_value_t = 8)]
    cardinality: u32,
    #[arg(long, value_enum, default_value_t = Mode::HighCorr)]
    mode: Mode,
    #[arg(long, default_value_t = 64)]
    period: u64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Key column names.
    #[arg(long = "key", value_delimiter = ',', required = true)]
    keys: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Shared layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    shared: Vec<usize>,
    /// Private layer widths per head.
    #[arg(long, value_delimiter = ',')]
    private: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    radix: u32,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl ModelArgs {
    fn recipe(&self) -> ModelRecipe {
        ModelRecipe {
            shared: self.shared.clone(),
            private: self.private.clone(),
            radix: self.radix,
            init_std: 0.1,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.lr,
                seed: self.train_seed,
                stop_delta: 0.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Args, Debug)]
struct StoreLayoutArgs {
    #[arg(long, default_value_t = 128 * 1024)]
    partition_bytes: u64,
    #[arg(long)]
    codec_level: Option<i32>,
    /// Fraction of modified bytes that makes a retrain due.
    #[arg(long, default_value_t = 0.2)]
    retrain_threshold: f64,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    /// dm|dm-l|ab|abc-d|abc-g|abc-z|abc-l|hb|hbc-z|hbc-l
    #[arg(long, default_value = "dm")]
    repr: Repr,
    #[command(flatten)]
    layout: StoreLayoutArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Small grid and short runs that finish on a laptop.
    Desk,
    /// Full-scale iteration counts and layer sizes.
    Full,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    nm: Option<usize>,
    #[arg(long)]
    nc: Option<usize>,
    /// Candidate layer widths.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Shared and private slots per tree.
    #[arg(long)]
    max_layers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "dm")]
    repr: Repr,
    #[command(flatten)]
    layout: StoreLayoutArgs,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Headed CSV holding the key columns.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    keys_file: Option<PathBuf>,
    /// Look up this many stored keys drawn at random.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relation to check every answer against.
    #[arg(long)]
    verify: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MutateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Headed CSV: key columns, plus value columns for insert and update.
    #[arg(long)]
    rows_file: PathBuf,
    /// Retrain with this recipe once the threshold is crossed.
    #[arg(long)]
    retrain: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct CompactArgs {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    store: PathBuf,
    /// Source relation; the oracle for every answer.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0.0)]
    absent_fraction: f64,
    #[arg(long, default_value_t = 64 << 20)]
    budget_bytes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the JSON report; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report files written by `bench`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_rows(path: &Path) -> anyhow::Result<Rows> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Rows { headers, rows })
}

fn options(layout: &StoreLayoutArgs, model: Option<&ModelArgs>) -> BuildOptions {
    let mut o = BuildOptions {
        partition_bytes: layout.partition_bytes,
        codec_level: layout.codec_level,
        retrain_threshold: layout.retrain_threshold,
        ..Default::default()
    };
    if let Some(m) = model {
        o.model = RetrainStrategy::Fixed(m.recipe());
    }
    o
}

fn search_request(a: &SearchArgs) -> SearchRequest {
    let (mut space, mut config) = match a.preset {
        Preset::Desk => (SearchSpace::default(), SearchConfig::desk()),
        Preset::Full => (
            SearchSpace {
                layer_sizes: FULL_SIZES.to_vec(),
                ..SearchSpace::default()
            },
            SearchConfig::default(),
        ),
    };
    if !a.sizes.is_empty() {
        space.layer_sizes = a.sizes.clone();
    }
    if let Some(m) = a.max_layers {
        space.max_shared_layers = m;
        space.max_private_layers = m;
    }
    config.nt = a.nt.unwrap_or(config.nt);
    config.nm = a.nm.unwrap_or(config.nm);
    config.nc = a.nc.unwrap_or(config.nc);
    config.seed = a.seed.unwrap_or(config.seed);
    SearchRequest {
        data: a.data.clone(),
        space,
        config,
        repr: a.repr,
        options: options(&a.layout, None),
        out: a.out.clone(),
        trace_out: a.trace_out.clone(),
    }
}

async fn run(cli: Cli, client: &Client) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let spec = match a.mode {
                Mode::HighCorr => SyntheticSpec::high_corr(a.rows, a.columns, a.cardinality, a.period, a.noise, a.seed),
                Mode::LowCorr => SyntheticSpec::low_corr(a.rows, a.columns, a.cardinality, a.seed),
            };
            print_json(&client.generate(&GenerateRequest { spec, out: a.out }).await?)
        }
        Command::Ingest(a) => print_json(
            &client
                .ingest(&IngestRequest {
                    csv: a.csv,
                    key_columns: a.keys,
                    out: a.out,
                })
                .await?,
        ),
        Command::Build(a) => print_json(
            &client
                .build(&BuildRequest {
                    data: a.data,
                    repr: a.repr,
                    options: options(&a.layout, Some(&a.model)),
                    out: a.out,
                })
                .await?,
        ),
        Command::Search(a) => {
            // The server sets the head count from the relation.
            let mut summary = client.search(&search_request(&a)).await?;
            summary.trace.clear();
            print_json(&summary)
        }
        Command::Query(a) => {
            let keys = match (&a.keys_file, a.random) {
                (Some(f), _) => KeySource::Explicit(read_rows(f)?),
                (None, Some(count)) => KeySource::Random { count, seed: a.seed },
                (None, None) => bail!("give --keys-file or --random"),
            };
            let resp = client
                .query(&QueryRequest {
                    store: a.store,
                    keys,
                    verify_against: a.verify,
                })
                .await?;
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            let mut header = resp.key_columns.clone();
            header.push("found".into());
            header.extend(resp.value_columns.iter().cloned());
            w.write_record(&header)?;
            for (k, v) in resp.keys.iter().zip(&resp.values) {
                let mut rec: Vec<String> = k.iter().map(i64::to_string).collect();
                rec.push(v.is_some().to_string());
                match v {
                    Some(vals) => rec.extend(vals.iter().cloned()),
                    None => rec.extend(resp.value_columns.iter().map(|_| String::new())),
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
            let found = resp.values.iter().filter(|v| v.is_some()).count();
            eprintln!(
                "{} keys, {found} found, {:.3} ms{}",
                resp.keys.len(),
                resp.stats.total_ns as f64 / 1e6,
                if resp.verified { ", all answers verified" } else { "" }
            );
            Ok(())
        }
        Command::Insert(a) => print_json(&client.insert(&mutate_request(a)?).await?),
        Command::Delete(a) => print_json(&client.delete(&mutate_request(a)?).await?),
        Command::Update(a) => print_json(&client.update(&mutate_request(a)?).await?),
        Command::Compact(a) => print_json(&client.compact(&CompactRequest { store: a.store }).await?),
        Command::Bench(a) => {
            let workload = WorkloadSpec {
                batch_size: a.batch_size,
                batches: a.batches,
                repeats: a.repeats,
                absent_fraction: a.absent_fraction,
                memory_budget_bytes: a.budget_bytes,
                seed: a.seed,
            };
            let report = client
                .bench(&BenchRequest {
                    store: a.store,
                    data: a.data,
                    workload,
                })
                .await?;
            match a.out {
                Some(path) => {
                    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                    eprintln!(
                        "{}: ratio {:.4}, {:.3} ms per batch, {} bytes decompressed per repeat",
                        report.label,
                        report.ratio,
                        report.latency.total_ns / 1e6,
                        report.bytes_decompressed
                    );
                    Ok(())
                }
                None => print_json(&report),
            }
        }
        Command::Report(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<Report>(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let c = client.compare(&CompareRequest { reports }).await?;
            let text = match a.format {
                Format::Csv => c.to_csv()?,
                Format::Json => c.to_json()?,
                Format::Table => c.to_table(),
            };
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn mutate_request(a: MutateArgs) -> anyhow::Result<MutateRequest> {
    Ok(MutateRequest {
        rows: read_rows(&a.rows_file)?,
        retrain: a.retrain.then(|| RetrainStrategy::Fixed(a.model.recipe())),
        store: a.store,
    })
}

/// 0 on success, 2 when an oracle check failed, 1 for any other error.
fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<ClientError>().and_then(ClientError::kind) {
        Some(ErrorKind::AnswerMismatch) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = match config::parse_with_config(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = async {
        let base = match &cli.server {
            Some(url) => url.clone(),
            None => {
                let (addr, _task) = deepmap_server::spawn(([127, 0, 0, 1], 0).into()).await?;
                format!("http://{addr}")
            }
        };
        let client = Client::new(base)?;
        run(cli, &client).await
    }
    .await;
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
