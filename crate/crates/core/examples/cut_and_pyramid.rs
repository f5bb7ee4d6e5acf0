//! One USGS cut from the bundled aerial fixture: slice it, build the pyramid,
//! encode every product and check the size budget. Then the same for a
//! synthetic SPIN-2 cut, whose full-resolution tiles come out obfuscated.
//!
//! ```text
//! cargo run --example cut_and_pyramid
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use terratile::pyramid::{
    build_pyramid, codec, crypt, mosaic, process_cut, slice, spin2_cut_dims, tile_key, tile_nonce,
    Cut, Raster,
};
use terratile::spatial_index::{GridId, UGridId, ZGridId};
use terratile::{synthetic, Level, Theme};

fn fixture() -> Result<Raster, Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/natural_1800x1200.png");
    let img = image::open(path)?.to_luma8();
    Ok(Raster::new(img.width(), img.height(), img.into_raw())?)
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let acquired = NaiveDate::from_ymd_opt(1995, 6, 1).ok_or("date")?;
    let cut = Cut {
        theme: Theme::Usgs,
        grid: GridId::U(UGridId::from_indices(10, 300, 3501)?),
        raster: fixture()?,
        acquired,
        sources: vec!["natural".into()],
    };

    // Slicing is lossless before compression.
    let tiles = slice(&cut)?;
    let rows: Vec<Vec<Raster>> = tiles.chunks(8).map(<[Raster]>::to_vec).collect();
    assert_eq!(mosaic(&rows)?, cut.raster);

    let p = build_pyramid(&cut);
    let full = (cut.raster.width() * cut.raster.height()) as f64;
    for (name, r) in [("browse", &p.browse), ("thumb", &p.thumb), ("jump", &p.jump)] {
        let ratio = (r.width() * r.height()) as f64 / full;
        println!("{name:<6} {:>4} x {:<4} 1/{:.0} of the cut", r.width(), r.height(), 1.0 / ratio);
    }

    let products = process_cut(&cut, None)?;
    let mut per_level: BTreeMap<Level, (usize, usize)> = BTreeMap::new();
    for t in &products {
        let e = per_level.entry(t.level).or_default();
        e.0 += 1;
        e.1 += t.blob.len();
    }
    println!("{} products for {}", products.len(), cut.grid);
    for (level, (n, bytes)) in &per_level {
        println!("  {:<6} {n:>3} images {bytes:>7} bytes", level.name());
    }
    let sizes: Vec<usize> = products
        .iter()
        .filter(|t| t.level == Level::Tile)
        .map(|t| t.blob.len())
        .collect();
    let small = sizes.iter().filter(|&&s| s <= 10 * 1024).count();
    println!(
        "  {small}/{} tiles <= 10 KB, largest {} bytes",
        sizes.len(),
        sizes.iter().max().unwrap_or(&0)
    );
    let first = codec::decode_jpeg(&products[0].blob)?;
    assert_eq!((first.width(), first.height()), (225, 150));

    // SPIN-2: a 5 x 5 cut with obfuscated full-resolution tiles.
    let z = ZGridId::from_indices(2757, 12285)?;
    let centre = GridId::Z(z).extent().center()?;
    let (w, h) = spin2_cut_dims(centre.lat());
    let raster = synthetic::terrain_raster(w, h, 0.0, 0.0, 1.56, 9);
    let cut = Cut {
        theme: Theme::Spin2,
        grid: GridId::Z(z),
        raster,
        acquired,
        sources: vec!["kvr".into()],
    };
    let key = tile_key(b"demo secret", cut.theme, cut.grid, cut.acquired);
    let products = process_cut(&cut, Some(&key))?;
    let t = &products[0];
    assert!(t.encrypted && !codec::is_jpeg(&t.blob));
    let plain = crypt::light_decrypt(&t.blob, &key, &tile_nonce(cut.grid, t.level, t.sub_row, t.sub_col))?;
    assert!(codec::is_jpeg(&plain));
    println!(
        "{} products for SPIN-2 cell {} ({w} x {h} px), key id {}",
        products.len(),
        cut.grid,
        t.key_id.as_deref().unwrap_or("-")
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
