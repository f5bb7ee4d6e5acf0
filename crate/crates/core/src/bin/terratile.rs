use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use terratile::gazetteer::{Gazetteer, SearchQuery};
use terratile::loader::{self, RunOptions};
use terratile::server::{self, ServerConfig};
use terratile::spatial_index::{geo_to_ugrid, geo_to_zgrid, utm_to_ugrid, GeoPoint, GridId, UtmCoord};
use terratile::store::Store;
use terratile::{synthetic, Theme};

#[derive(Parser)]
#[command(name = "terratile", version, about = "Tile pyramid atlas tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid id encoding and decoding.
    #[command(subcommand)]
    Gridid(GridCmd),
    /// Store maintenance.
    Store {
        #[arg(long, env = "TERRATILE_STORE_ROOT", default_value = "data/store")]
        root: PathBuf,
        #[command(subcommand)]
        command: StoreCmd,
    },
    /// Gazetteer files.
    #[command(subcommand)]
    Gazetteer(GazetteerCmd),
    /// Bulk loading.
    #[command(subcommand)]
    Load(LoadCmd),
    /// Runs the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Writes the synthetic demo sources and their manifest into a directory.
    Demo { dir: PathBuf },
}

#[derive(Subcommand)]
enum GridCmd {
    /// The cell containing a point: `--lat/--lon`, or `--zone/--easting/--northing` for USGS.
    Encode {
        #[arg(long)]
        theme: Theme,
        #[arg(long, allow_hyphen_values = true)]
        lat: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lon: Option<f64>,
        #[arg(long)]
        zone: Option<u8>,
        #[arg(long)]
        easting: Option<f64>,
        #[arg(long)]
        northing: Option<f64>,
    },
    Decode {
        #[arg(long)]
        theme: Theme,
        id: String,
    },
}

#[derive(Subcommand)]
enum StoreCmd {
    Compact,
    Snapshot {
        #[arg(long, conflicts_with = "since", required_unless_present = "since")]
        full: bool,
        #[arg(long)]
        since: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    Restore {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    Stats,
}

#[derive(Subcommand)]
enum GazetteerCmd {
    /// Parses a gazetteer file and prints its counts.
    Load { file: PathBuf },
    Search {
        #[arg(long, env = "TERRATILE_GAZETTEER")]
        file: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        country: Option<String>,
        #[arg(long = "type")]
        feature_type: Option<String>,
        #[arg(long)]
        cursor: Option<String>,
    },
}

#[derive(Args)]
struct Workdir {
    #[arg(long, env = "TERRATILE_LOADER_WORKDIR", default_value = "data/load")]
    workdir: PathBuf,
}

#[derive(Subcommand)]
enum LoadCmd {
    Plan {
        manifest: PathBuf,
        #[command(flatten)]
        work: Workdir,
        #[arg(long, default_value_t = loader::DEFAULT_ROWS_PER_BAND)]
        rows_per_band: u32,
    },
    /// Runs (or resumes) the planned load. The SPIN-2 master secret is read
    /// from `TERRATILE_TILE_SECRET`.
    Run {
        #[command(flatten)]
        work: Workdir,
        #[arg(long, env = "TERRATILE_STORE_ROOT", default_value = "data/store")]
        store: PathBuf,
        #[arg(long, env = "TERRATILE_GAZETTEER")]
        gazetteer: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        cutters: usize,
        #[arg(long, default_value_t = 1)]
        loaders: usize,
    },
    Status {
        #[command(flatten)]
        work: Workdir,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn print_json<T: Serialize>(v: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn print_grid(g: GridId) {
    let (code, bits) = match g {
        GridId::Z(z) => (z.value(), 30),
        GridId::U(u) => (u.interleaved(), 30),
    };
    let (u, v) = g.indices();
    println!("{g}");
    println!("binary   {code:0bits$b}");
    println!("indices  {u} {v}");
    match g.extent().center() {
        Ok(c) => println!("centre   {:.6} {:.6}", c.lat(), c.lon()),
        Err(e) => println!("centre   {e}"),
    }
}

fn gridid(cmd: GridCmd) -> CliResult {
    match cmd {
        GridCmd::Encode {
            theme,
            lat,
            lon,
            zone,
            easting,
            northing,
        } => {
            let g = match (theme, lat, lon, zone, easting, northing) {
                (Theme::Spin2, Some(lat), Some(lon), None, None, None) => {
                    GridId::Z(geo_to_zgrid(GeoPoint::new(lat, lon)?))
                }
                (Theme::Usgs, Some(lat), Some(lon), None, None, None) => {
                    GridId::U(geo_to_ugrid(GeoPoint::new(lat, lon)?)?)
                }
                (Theme::Usgs, None, None, Some(z), Some(e), Some(n)) => {
                    GridId::U(utm_to_ugrid(UtmCoord::new(z, e, n)?))
                }
                _ => return Err("give --lat and --lon, or (usgs) --zone, --easting and --northing".into()),
            };
            print_grid(g);
        }
        GridCmd::Decode { theme, id } => print_grid(GridId::parse(theme, &id)?),
    }
    Ok(())
}

fn store(root: PathBuf, cmd: StoreCmd) -> CliResult {
    let store = Store::open(&root)?;
    match cmd {
        StoreCmd::Compact => print_json(&store.compact()?),
        StoreCmd::Snapshot { since, out, .. } => match since {
            Some(k) => print_json(&store.snapshot_incremental(&out, k)?),
            None => print_json(&store.snapshot_full(&out)?),
        },
        StoreCmd::Restore { files } => {
            let n = store.restore(&files)?;
            println!("restored {n} records; epoch {}", store.epoch());
            Ok(())
        }
        StoreCmd::Stats => print_json(&store.stats()?),
    }
}

fn gazetteer(cmd: GazetteerCmd) -> CliResult {
    match cmd {
        GazetteerCmd::Load { file } => print_json(&Gazetteer::load_file(&file)?.1),
        GazetteerCmd::Search {
            file,
            name,
            state,
            country,
            feature_type,
            cursor,
        } => {
            let (gaz, _) = Gazetteer::load_file(&file)?;
            print_json(&gaz.search(&SearchQuery {
                name,
                state,
                country,
                feature_type,
                cursor,
            })?)
        }
    }
}

fn load(cmd: LoadCmd) -> CliResult {
    match cmd {
        LoadCmd::Plan {
            manifest,
            work,
            rows_per_band,
        } => {
            let plan = loader::plan(&manifest, &work.workdir, rows_per_band)?;
            println!(
                "{} bands, {} jobs, {} sources, {} excluded",
                plan.bands.len(),
                plan.jobs.len(),
                plan.sources.len(),
                plan.excluded.len()
            );
            for x in &plan.excluded {
                println!("excluded {}: {}", x.path, x.reason);
            }
            Ok(())
        }
        LoadCmd::Run {
            work,
            store,
            gazetteer,
            cutters,
            loaders,
        } => {
            let store = Store::open(&store)?;
            let gaz = gazetteer.map(Gazetteer::load_file).transpose()?.map(|g| g.0);
            let opts = RunOptions {
                cutters,
                loaders,
                master_key: std::env::var("TERRATILE_TILE_SECRET")
                    .unwrap_or_default()
                    .into_bytes(),
                ..RunOptions::default()
            };
            let stats = loader::run(&work.workdir, &store, gaz.as_ref(), &opts)?;
            print_json(&stats)?;
            println!(
                "cut {:.2} MB/s, load {:.2} MB/s",
                stats.cut_mb_per_s(),
                stats.load_mb_per_s()
            );
            Ok(())
        }
        LoadCmd::Status { work } => print_json(&loader::progress(&work.workdir)?),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let result = match Cli::parse().command {
        Command::Gridid(cmd) => gridid(cmd),
        Command::Store { root, command } => store(root, command),
        Command::Gazetteer(cmd) => gazetteer(cmd),
        Command::Load(cmd) => load(cmd),
        Command::Serve { config } => ServerConfig::load(config.as_deref())
            .map_err(Into::into)
            .and_then(|c| {
                let rt = tokio::runtime::Runtime::new()?;
                rt.block_on(server::serve(c)).map_err(Into::into)
            }),
        Command::Demo { dir } => synthetic::atlas_fixture(&dir)
            .map(|m| println!("{}", m.display()))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
