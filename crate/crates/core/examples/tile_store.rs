//! The clustered tile store: a batch insert, point and range reads, hiding a
//! cell, snapshots and a restore into a second store.
//!
//! ```text
//! cargo run --example tile_store
//! ```

use chrono::NaiveDate;
use terratile::pyramid::{process_cut, Cut};
use terratile::spatial_index::{GridId, UGridId};
use terratile::store::{ImageMetaRecord, Store, TileBatch, TileRecord};
use terratile::{synthetic, Level, Theme};

/// Every product of one synthetic USGS cut as a store batch.
fn batch(e: u32, n: u32, acquired: NaiveDate) -> Result<TileBatch, Box<dyn std::error::Error>> {
    let grid = GridId::U(UGridId::from_indices(10, e, n)?);
    let (x0, y0) = synthetic::ugrid_corner(e, n);
    let cut = Cut {
        theme: Theme::Usgs,
        grid,
        raster: synthetic::terrain_raster(1800, 1200, x0, y0, 1.0, 5),
        acquired,
        sources: vec![format!("doq-{e}-{n}")],
    };
    let tiles = process_cut(&cut, None)?
        .into_iter()
        .map(|t| TileRecord {
            theme: cut.theme,
            grid,
            level: t.level,
            sub_row: t.sub_row,
            sub_col: t.sub_col,
            acquired,
            blob: t.blob,
            encrypted: t.encrypted,
            key_id: t.key_id,
            insert_epoch: 0,
        })
        .collect();
    let meta = ImageMetaRecord {
        theme: cut.theme,
        grid,
        acquired,
        source: cut.sources[0].clone(),
        visible: true,
        key_id: None,
        center_place_name: None,
        insert_epoch: 0,
    };
    Ok(TileBatch {
        tiles,
        metas: vec![meta],
        originals: Vec::new(),
    })
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path().join("store"))?;
    let date = NaiveDate::from_ymd_opt(1996, 4, 2).ok_or("date")?;

    let n = store.put_tiles(batch(300, 3501, date)?)?;
    println!("inserted {n} tiles, epoch {}", store.epoch());
    let k = store.epoch();
    let base = dir.path().join("base.snap");
    store.snapshot_full(&base)?;
    store.put_tiles(batch(301, 3501, date)?)?;

    let cells: Vec<GridId> = store.visible_cells(Theme::Usgs).into_iter().collect();
    let t = store
        .get_tile(Theme::Usgs, cells[0], Level::Tile, 3, 4, None)?
        .ok_or("tile missing")?;
    println!("{} tile 3/4: {} bytes acquired {}", t.grid, t.blob.len(), t.acquired);
    let browse = store.get_range(Theme::Usgs, Level::Browse, &cells)?;
    println!("{} browse images over {} cells", browse.len(), cells.len());

    // Hidden imagery reads as absent; unhiding brings back the same bytes.
    store.hide_region(Theme::Usgs, &cells[..1], false)?;
    assert!(store.get_tile(Theme::Usgs, cells[0], Level::Tile, 3, 4, None)?.is_none());
    store.hide_region(Theme::Usgs, &cells[..1], true)?;
    let again = store.get_tile(Theme::Usgs, cells[0], Level::Tile, 3, 4, None)?;
    assert_eq!(again.map(|r| r.blob), Some(t.blob));

    // The full snapshot taken at k plus the increment since k restores the
    // store as it is now.
    let inc = dir.path().join("inc.snap");
    let s = store.snapshot_incremental(&inc, k)?;
    println!("incremental since {k}: {} records up to epoch {}", s.records, s.until);
    let copy = Store::open(dir.path().join("copy"))?;
    let restored = copy.restore(&[&base, &inc])?;
    assert_eq!(copy.epoch(), store.epoch());
    assert_eq!(copy.stats()?.tiles, store.stats()?.tiles);
    println!("restored {restored} records at epoch {}", copy.epoch());

    let c = store.compact()?;
    let stats = store.stats()?;
    println!(
        "compacted {} records into {} segment(s); {} tiles, {} bytes",
        c.records, c.segments, stats.tiles, stats.tile_bytes
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
