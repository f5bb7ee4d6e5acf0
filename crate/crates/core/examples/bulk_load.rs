//! The restartable bulk loader on the synthetic atlas: plan, a run that dies
//! part way, and a resumed run that finishes from the journal.
//!
//! ```text
//! cargo run --example bulk_load
//! ```

use terratile::gazetteer::Gazetteer;
use terratile::loader::{self, LoadError, RunOptions};
use terratile::store::Store;
use terratile::synthetic;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = synthetic::atlas_fixture(&dir.path().join("sources"))?;
    let work = dir.path().join("work");

    let plan = loader::plan(&manifest, &work, loader::DEFAULT_ROWS_PER_BAND)?;
    for band in &plan.bands {
        println!(
            "band {:<14} rows {:>5}..={:<5} jobs {}",
            band.id,
            band.first_row,
            band.last_row,
            band.jobs.join(" ")
        );
    }

    let gaz_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/gazetteer_bay_area.txt");
    let gaz = Gazetteer::load_file(gaz_path)?.0;
    let store = Store::open(dir.path().join("store"))?;
    let opts = RunOptions {
        cutters: 2,
        loaders: 1,
        master_key: b"demo secret".to_vec(),
        ..RunOptions::default()
    };

    // Simulated crash after a dozen checkpoints.
    let crashing = RunOptions {
        kill_after: Some(12),
        ..opts.clone()
    };
    match loader::run(&work, &store, Some(&gaz), &crashing) {
        Err(LoadError::Killed) => println!("killed; epoch {}", store.epoch()),
        other => println!("unexpected: {other:?}"),
    }
    let p = loader::progress(&work)?;
    println!("after the crash: {:?}", p.states);

    let stats = loader::run(&work, &store, Some(&gaz), &opts)?;
    println!(
        "resumed: {} cuts, {} bands loaded, {} tiles inserted, epoch {}",
        stats.cuts,
        stats.bands_loaded,
        stats.tiles_inserted,
        store.epoch()
    );
    let p = loader::progress(&work)?;
    println!("finished: {:?}", p.states);
    for m in store.image_metas(None) {
        println!(
            "  {:<5} {} {} {}",
            m.theme.name(),
            m.grid,
            m.acquired,
            m.center_place_name.as_deref().unwrap_or("-")
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
