//! Acceptance suite: one PASS/FAIL line per criterion, tolerances and time
//! limits pinned below. Runs without the libtest harness so every line prints.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::NaiveDate;
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tower::ServiceExt;

use terratile::gazetteer::{Gazetteer, PlaceHit, SearchQuery, FEATURE_TYPES, PAGE_SIZE};
use terratile::loader::{self, LoadError, RunOptions};
use terratile::pyramid::{
    build_pyramid, mosaic, process_cut, slice, spin2_cut_dims, tile_key, Cut, Raster,
};
use terratile::server::coverage::{self, CoverageLevel, COVERED};
use terratile::server::page::{build_page, view_dims, PageDescriptor, PageRequest, ViewSize};
use terratile::server::{router, AppState, ServerConfig};
use terratile::spatial_index::utm::haversine_m;
use terratile::spatial_index::{
    deinterleave, geo_to_utm, geo_to_zgrid, interleave, utm_to_geo, GeoPoint, GridBox, GridId,
    UGridId, ZGridId,
};
use terratile::store::{HitKind, ImageMetaRecord, PickRecord, Store, TileBatch, TileRecord};
use terratile::{synthetic, Level, Theme};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria = [
        Criterion { name: "zgrid-cardinality", limit: Duration::from_secs(1), run: zgrid_cardinality },
        Criterion { name: "morton-oracle", limit: Duration::from_secs(10), run: morton_oracle },
        Criterion { name: "utm-round-trip", limit: Duration::from_secs(5), run: utm_round_trip },
        Criterion { name: "cut-product-counts", limit: Duration::from_secs(5), run: cut_product_counts },
        Criterion { name: "pyramid-ratios", limit: Duration::from_secs(1), run: pyramid_ratios },
        Criterion { name: "tile-budget", limit: Duration::from_secs(10), run: tile_budget },
        Criterion { name: "slice-mosaic-identity", limit: Duration::from_secs(10), run: slice_mosaic_identity },
        Criterion { name: "gazetteer-oracle", limit: Duration::from_secs(30), run: gazetteer_oracle },
        Criterion { name: "loader-crash-safety", limit: Duration::from_secs(120), run: loader_crash_safety },
        Criterion { name: "snapshot-algebra", limit: Duration::from_secs(30), run: snapshot_algebra },
        Criterion { name: "pan-reuse", limit: Duration::from_secs(5), run: pan_reuse },
        Criterion { name: "hide-semantics", limit: Duration::from_secs(5), run: hide_semantics },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str())))
    {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.run)
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let took = started.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the time limit")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:<22} {:>7.2}s / {:>3}s  {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---- spatial index -------------------------------------------------------

const ZGRID_CELLS: u64 = 298_598_400;

fn zgrid_cardinality() -> Outcome {
    let world = GridBox::Geo {
        south: -90.0,
        west: -180.0,
        north: 90.0,
        east: 180.0,
    };
    let ((u0, u1), (v0, v1)) = world.index_rect().ok_or("world box has no index range")?;
    let count = (u1 - u0 + 1) as u64 * (v1 - v0 + 1) as u64;
    // The corners of the range are the extreme cells of the grid.
    let sw = geo_to_zgrid(GeoPoint::new(-90.0, -180.0).map_err(|e| e.to_string())?);
    let ne = geo_to_zgrid(GeoPoint::new(90.0, 179.999_999).map_err(|e| e.to_string())?);
    let corners = (sw.lon_index(), sw.lat_index()) == (u0, v0)
        && (ne.lon_index(), ne.lat_index()) == (u1, v1);
    check(
        count == ZGRID_CELLS && corners,
        format!("{} x {} = {count} cells (expected {ZGRID_CELLS})", u1 - u0 + 1, v1 - v0 + 1),
    )
}

fn oracle_interleave(u: u32, v: u32) -> u32 {
    (0..15).fold(0, |c, i| c | ((u >> i) & 1) << (2 * i) | ((v >> i) & 1) << (2 * i + 1))
}

fn oracle_deinterleave(code: u32) -> (u32, u32) {
    (0..15).fold((0, 0), |(u, v), i| {
        (u | ((code >> (2 * i)) & 1) << i, v | ((code >> (2 * i + 1)) & 1) << i)
    })
}

fn morton_oracle() -> Outcome {
    let mut pairs: Vec<(u32, u32)> = (0..256).flat_map(|u| (0..256).map(move |v| (u, v))).collect();
    let mut rng = StdRng::seed_from_u64(0x2d0e);
    pairs.extend((0..1_000_000).map(|_| (rng.gen_range(0..1 << 15), rng.gen_range(0..1 << 15))));
    let mut mismatches = 0;
    for &(u, v) in &pairs {
        let code = interleave(u, v).map_err(|e| e.to_string())?;
        let back = deinterleave(code).map_err(|e| e.to_string())?;
        if code != oracle_interleave(u, v) || back != (u, v) || oracle_deinterleave(code) != (u, v) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{} pairs, {mismatches} mismatches", pairs.len()))
}

/// Pinned round-trip tolerance in metres.
const UTM_TOLERANCE_M: f64 = 0.5;

fn utm_round_trip() -> Outcome {
    // Zones 10..=19 span 126 W to 66 W; northern hemisphere only.
    let mut worst = 0.0f64;
    let mut samples = 0;
    let mut zones = HashSet::new();
    for lat in 0..=84 {
        for lon in -126..=-67 {
            let p = GeoPoint::new(lat as f64, lon as f64).map_err(|e| e.to_string())?;
            let utm = geo_to_utm(p).map_err(|e| e.to_string())?;
            zones.insert(utm.zone());
            let back = utm_to_geo(utm).map_err(|e| e.to_string())?;
            worst = worst.max(haversine_m(p, back));
            samples += 1;
        }
    }
    check(
        worst <= UTM_TOLERANCE_M && zones.len() == 10,
        format!("{samples} points in {} zones, worst {worst:.2e} m (limit {UTM_TOLERANCE_M} m)", zones.len()),
    )
}

// ---- pyramid -------------------------------------------------------------

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn usgs_cut(e: u32, n: u32, raster: Raster) -> Cut {
    Cut {
        theme: Theme::Usgs,
        grid: GridId::U(UGridId::from_indices(10, e, n).expect("valid cell")),
        raster,
        acquired: date(1995, 6, 1),
        sources: vec!["fixture".into()],
    }
}

fn spin2_cut(raster: Raster) -> Cut {
    Cut {
        theme: Theme::Spin2,
        grid: GridId::Z(ZGridId::from_indices(2757, 12285).expect("valid cell")),
        raster,
        acquired: date(1998, 6, 1),
        sources: vec!["fixture".into()],
    }
}

fn cut_product_counts() -> Outcome {
    let (x0, y0) = synthetic::ugrid_corner(300, 3501);
    let usgs = usgs_cut(300, 3501, synthetic::terrain_raster(1800, 1200, x0, y0, 1.0, 1));
    let (w, h) = spin2_cut_dims(37.974);
    let spin2 = spin2_cut(synthetic::terrain_raster(w, h, 0.0, 0.0, 1.56, 2));
    let key = tile_key(b"acceptance", Theme::Spin2, spin2.grid, spin2.acquired);
    let a = process_cut(&usgs, None).map_err(|e| e.to_string())?.len();
    let b = process_cut(&spin2, Some(&key)).map_err(|e| e.to_string())?.len();
    check(a == 67 && b == 28, format!("USGS {a} (expected 67), SPIN-2 {b} (expected 28)"))
}

/// Pinned relative tolerance on pyramid pixel-count ratios.
const RATIO_TOLERANCE: f64 = 0.02;

fn pyramid_ratios() -> Outcome {
    let cut = usgs_cut(300, 3501, Raster::filled(1800, 1200, 128));
    let p = build_pyramid(&cut);
    let full = (1800 * 1200) as f64;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, r, expected) in [
        ("browse", &p.browse, 1.0 / 64.0),
        ("thumb", &p.thumb, 1.0 / 256.0),
        ("jump", &p.jump, 1.0 / 1024.0),
    ] {
        let ratio = (r.width() * r.height()) as f64 / full;
        let dev = (ratio / expected - 1.0).abs();
        worst = worst.max(dev);
        parts.push(format!("{name} 1/{:.1}", 1.0 / ratio));
    }
    check(
        worst <= RATIO_TOLERANCE,
        format!("{}; worst deviation {:.2}% (limit 2%)", parts.join(", "), worst * 100.0),
    )
}

const SOFT_BUDGET: usize = 10 * 1024;
const HARD_BUDGET: usize = 16 * 1024;
const SOFT_SHARE: f64 = 0.90;

fn tile_budget() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/natural_1800x1200.png");
    let img = image::open(path).map_err(|e| e.to_string())?.to_luma8();
    let raster = Raster::new(img.width(), img.height(), img.into_raw()).map_err(|e| e.to_string())?;
    let cut = usgs_cut(300, 3501, raster);
    let sizes: Vec<usize> = process_cut(&cut, None)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|t| t.level == Level::Tile)
        .map(|t| t.blob.len())
        .collect();
    let soft = sizes.iter().filter(|&&s| s <= SOFT_BUDGET).count();
    let hard = sizes.iter().filter(|&&s| s <= HARD_BUDGET).count();
    let share = soft as f64 / sizes.len() as f64;
    check(
        sizes.len() == 64 && share >= SOFT_SHARE && hard == sizes.len(),
        format!(
            "{soft}/{} tiles <= 10 KB ({:.1}%, need 90%), {hard} <= 16 KB, largest {} B",
            sizes.len(),
            share * 100.0,
            sizes.iter().max().unwrap_or(&0)
        ),
    )
}

fn slice_mosaic_identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x51ce);
    let mut failures = 0;
    for i in 0..100 {
        let cut = if rng.gen_bool(0.5) {
            let pixels = (0..1800 * 1200).map(|_| rng.gen()).collect();
            usgs_cut(300, 3501, Raster::new(1800, 1200, pixels).map_err(|e| e.to_string())?)
        } else {
            let (w, h) = spin2_cut_dims(rng.gen_range(0.0..70.0));
            let pixels = (0..w * h).map(|_| rng.gen()).collect();
            spin2_cut(Raster::new(w, h, pixels).map_err(|e| e.to_string())?)
        };
        let n = cut.theme.tiles_per_side() as usize;
        let tiles = slice(&cut).map_err(|e| format!("cut {i}: {e}"))?;
        let rows: Vec<Vec<Raster>> = tiles.chunks(n).map(<[Raster]>::to_vec).collect();
        if tiles.len() != n * n || mosaic(&rows).map_err(|e| e.to_string())? != cut.raster {
            failures += 1;
        }
    }
    check(failures == 0, format!("100 random cuts, {failures} differ"))
}

// ---- gazetteer -----------------------------------------------------------

const COUNTRIES: [(&str, &[&str]); 3] = [
    ("United States", &["USA", "US", "United States of America"]),
    ("Canada", &["CA", "CAN"]),
    ("Mexico", &["MX", "Estados Unidos Mexicanos"]),
];

/// (country, state, aliases)
const STATES: [(&str, &str, &[&str]); 6] = [
    ("United States", "California", &["CA", "Calif."]),
    ("United States", "Washington", &["WA"]),
    ("United States", "Texas", &["TX"]),
    ("Canada", "British Columbia", &["BC"]),
    ("Canada", "Ontario", &["ON"]),
    ("Mexico", "Sonora", &["SON"]),
];

#[derive(Clone)]
struct Row {
    place_id: u64,
    alternate_name: String,
    country: &'static str,
    state: Option<&'static str>,
    feature_type: u8,
    lat: f64,
    lon: f64,
}

fn gazetteer_fixture(places: u64, rng: &mut StdRng) -> (String, Vec<Row>) {
    let stems = ["Spring", "Springfield", "Oak", "Oakland", "Lake", "San", "Santa", "Port", "port", "Mill"];
    let mut text = String::new();
    for (name, aliases) in COUNTRIES {
        text.push_str(&format!("@country|{name}|{}\n", aliases.join("|")));
    }
    for (country, name, aliases) in STATES {
        text.push_str(&format!("@state|{country}|{name}|{}\n", aliases.join("|")));
    }
    let mut rows = Vec::new();
    for place_id in 0..places {
        let name = format!("{} {}", stems[rng.gen_range(0..stems.len())], rng.gen_range(0..60));
        let (country, state) = match rng.gen_range(0..10) {
            0 => ("Mexico", None),
            1 => ("Canada", None),
            2 => ("United States", None),
            k => {
                let (c, s, _) = STATES[k as usize % STATES.len()];
                (c, Some(s))
            }
        };
        let feature_type = rng.gen_range(1..=12);
        let lat = 25.0 + rng.gen::<f64>() * 25.0;
        let lon = -125.0 + rng.gen::<f64>() * 50.0;
        let spellings = if rng.gen_bool(0.25) { 2 } else { 1 };
        for k in 0..spellings {
            let alternate_name = if k == 0 { name.clone() } else { format!("Old {name}") };
            text.push_str(&format!(
                "{place_id}|{name}|{alternate_name}|{country}|{}|{feature_type}|{lat:.5}|{lon:.5}\n",
                state.unwrap_or("")
            ));
            rows.push(Row {
                place_id,
                alternate_name,
                country,
                state,
                feature_type,
                lat: format!("{lat:.5}").parse().expect("float"),
                lon: format!("{lon:.5}").parse().expect("float"),
            });
        }
    }
    (text, rows)
}

fn resolve_country(s: &str) -> Option<&'static str> {
    let s = s.trim().to_lowercase();
    COUNTRIES
        .iter()
        .find(|(name, aliases)| name.to_lowercase() == s || aliases.iter().any(|a| a.to_lowercase() == s))
        .map(|c| c.0)
}

fn resolve_state(country: &str, s: &str) -> Option<&'static str> {
    let s = s.trim().to_lowercase();
    STATES
        .iter()
        .find(|(c, name, aliases)| {
            *c == country && (name.to_lowercase() == s || aliases.iter().any(|a| a.to_lowercase() == s))
        })
        .map(|st| st.1)
}

fn resolve_type(s: &str) -> Option<u8> {
    if let Ok(id) = s.trim().parse::<u8>() {
        return (1..=12).contains(&id).then_some(id);
    }
    let s = s.trim().to_lowercase();
    FEATURE_TYPES
        .iter()
        .position(|d| d.to_lowercase() == s || d.split('/').any(|p| p.trim().to_lowercase() == s))
        .map(|i| i as u8 + 1)
}

/// Brute-force filter and sort; `imaged` holds the rows with imagery.
fn gazetteer_expected(rows: &[Row], imaged: &HashSet<usize>, q: &SearchQuery) -> Vec<(u64, String)> {
    let name = q.name.as_deref().map(|n| n.trim().to_lowercase());
    let country = match (q.country.as_deref(), q.state.as_deref()) {
        (Some(c), _) => Some(resolve_country(c)),
        (None, Some(_)) => Some(Some("United States")),
        (None, None) => None,
    };
    let state = q.state.as_deref().map(|s| country.flatten().and_then(|c| resolve_state(c, s)));
    let ty = q.feature_type.as_deref().map(resolve_type);
    let mut hits: Vec<(usize, &Row)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            name.as_ref().is_none_or(|n| r.alternate_name.to_lowercase().starts_with(n.as_str()))
                && country.is_none_or(|c| c == Some(r.country))
                && state.is_none_or(|s| s.is_some() && s == r.state)
                && ty.is_none_or(|t| t == Some(r.feature_type))
        })
        .collect();
    hits.sort_by_key(|(i, r)| {
        (
            !imaged.contains(i),
            r.alternate_name.to_lowercase(),
            r.alternate_name.clone(),
            r.feature_type,
            r.place_id,
            *i,
        )
    });
    hits.into_iter().map(|(_, r)| (r.place_id, r.alternate_name.clone())).collect()
}

fn random_criteria(rng: &mut StdRng) -> SearchQuery {
    loop {
        let mut q = SearchQuery::default();
        if rng.gen_bool(0.5) {
            let names = ["s", "Spring", "spring 1", "Oak", "oakland 4", "Old", "old s", "port", "Mill 5", "zzz"];
            q.name = Some(names[rng.gen_range(0..names.len())].to_string());
        }
        if rng.gen_bool(0.4) {
            let states = ["California", "ca", "Calif.", "WA", "texas", "BC", "Ontario", "SON", "Atlantis"];
            q.state = Some(states[rng.gen_range(0..states.len())].to_string());
        }
        if rng.gen_bool(0.4) {
            let countries = ["USA", "us", "Canada", "CAN", "Mexico", "MX", "Narnia"];
            q.country = Some(countries[rng.gen_range(0..countries.len())].to_string());
        }
        if rng.gen_bool(0.4) {
            let types = ["1", "4", "12", "City", "lake", "Airport", "railroad station", "Park/Beach"];
            q.feature_type = Some(types[rng.gen_range(0..types.len())].to_string());
        }
        if q.name.is_some() || q.state.is_some() || q.country.is_some() || q.feature_type.is_some() {
            return q;
        }
    }
}

fn gazetteer_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x6a2e);
    let (text, rows) = gazetteer_fixture(10_000, &mut rng);
    let (gaz, counts) = Gazetteer::load_str(&text).map_err(|e| e.to_string())?;
    if counts.distinct_places != 10_000 || counts.places != rows.len() {
        return Err(format!("loaded {counts:?}"));
    }
    // Imagery on one SPIN-2 cell in five, keyed by the rows' own cells.
    let cells: Vec<GridId> = rows
        .iter()
        .map(|r| GridId::Z(geo_to_zgrid(GeoPoint::new(r.lat, r.lon).expect("valid point"))))
        .collect();
    let chosen: HashSet<GridId> = cells.iter().copied().filter(|_| rng.gen_bool(0.2)).collect();
    for &c in &chosen {
        gaz.register_image(Theme::Spin2, c, date(1998, 1, 1));
    }
    let imaged: HashSet<usize> = (0..rows.len()).filter(|i| chosen.contains(&cells[*i])).collect();

    let mut pages = 0;
    let mut rows_seen = 0;
    for n in 0..500 {
        let mut q = random_criteria(&mut rng);
        let expected = gazetteer_expected(&rows, &imaged, &q);
        let mut got: Vec<PlaceHit> = Vec::new();
        loop {
            let page = gaz.search(&q).map_err(|e| format!("query {n} {q:?}: {e}"))?;
            pages += 1;
            if page.results.len() > PAGE_SIZE {
                return Err(format!("query {n}: page of {}", page.results.len()));
            }
            got.extend(page.results);
            match page.next_cursor {
                Some(c) => q.cursor = Some(c),
                None => break,
            }
        }
        let flags: Vec<bool> = got.iter().map(|h| h.image_flag).collect();
        if flags.windows(2).any(|w| !w[0] && w[1]) {
            return Err(format!("query {n} {q:?}: image-bearing row after one without"));
        }
        let got: Vec<(u64, String)> = got.into_iter().map(|h| (h.place_id, h.alternate_name)).collect();
        if got != expected {
            return Err(format!(
                "query {n} {q:?}: {} rows, oracle {}",
                got.len(),
                expected.len()
            ));
        }
        rows_seen += got.len();
    }
    Ok(format!("500 queries, {pages} pages, {rows_seen} rows, all equal to the full scan"))
}

// ---- loader --------------------------------------------------------------

fn snapshot_bytes(store: &Store, path: &Path) -> Result<Vec<u8>, String> {
    store.snapshot_full(path).map_err(|e| e.to_string())?;
    std::fs::read(path).map_err(|e| e.to_string())
}

fn loader_crash_safety() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synthetic::three_band_fixture(&dir.path().join("src")).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        cutters: 2,
        loaders: 1,
        retry_base: Duration::from_millis(1),
        master_key: b"acceptance".to_vec(),
        kill_after: None,
    };

    let work = dir.path().join("ref-work");
    loader::plan(&manifest, &work, loader::DEFAULT_ROWS_PER_BAND).map_err(|e| e.to_string())?;
    let store = Store::open(dir.path().join("ref-store")).map_err(|e| e.to_string())?;
    let stats = loader::run(&work, &store, None, &opts).map_err(|e| e.to_string())?;
    let reference = snapshot_bytes(&store, &dir.path().join("ref.snap"))?;
    let checkpoints = stats.checkpoints;

    let work = dir.path().join("work");
    loader::plan(&manifest, &work, loader::DEFAULT_ROWS_PER_BAND).map_err(|e| e.to_string())?;
    let store = Store::open(dir.path().join("store")).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(0xdead);
    let mut kills = 0;
    let mut restarts = 0;
    while kills < 20 {
        let at = rng.gen_range(0..checkpoints);
        let killing = RunOptions {
            kill_after: Some(at),
            ..opts.clone()
        };
        restarts += 1;
        match loader::run(&work, &store, None, &killing) {
            Err(LoadError::Killed) => kills += 1,
            // Finished before reaching the kill point: start over on a fresh copy.
            Ok(_) => {
                let got = snapshot_bytes(&store, &dir.path().join("mid.snap"))?;
                if got != reference {
                    return Err(format!("run completed after {kills} kills with a different store"));
                }
                std::fs::remove_dir_all(&work).map_err(|e| e.to_string())?;
                loader::plan(&manifest, &work, loader::DEFAULT_ROWS_PER_BAND).map_err(|e| e.to_string())?;
                drop(store);
                return loader_crash_resume(dir.path(), &manifest, &opts, reference, rng, kills, restarts);
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    loader::run(&work, &store, None, &opts).map_err(|e| e.to_string())?;
    let got = snapshot_bytes(&store, &dir.path().join("final.snap"))?;
    check(
        got == reference,
        format!("20 kills over {restarts} restarts; snapshot {} B identical: {}", got.len(), got == reference),
    )
}

/// Continues the kill series on a fresh store after a run slipped through.
fn loader_crash_resume(
    root: &Path,
    manifest: &Path,
    opts: &RunOptions,
    reference: Vec<u8>,
    mut rng: StdRng,
    mut kills: usize,
    mut restarts: usize,
) -> Outcome {
    let store_dir = root.join(format!("store-{restarts}"));
    let work = root.join(format!("work-{restarts}"));
    loader::plan(manifest, &work, loader::DEFAULT_ROWS_PER_BAND).map_err(|e| e.to_string())?;
    let store = Store::open(&store_dir).map_err(|e| e.to_string())?;
    // Kill early so every restart makes at most a little progress.
    while kills < 20 {
        let killing = RunOptions {
            kill_after: Some(rng.gen_range(0..8)),
            ..opts.clone()
        };
        restarts += 1;
        match loader::run(&work, &store, None, &killing) {
            Err(LoadError::Killed) => kills += 1,
            Ok(_) => break,
            Err(e) => return Err(e.to_string()),
        }
    }
    loader::run(&work, &store, None, opts).map_err(|e| e.to_string())?;
    let got = snapshot_bytes(&store, &root.join("final.snap"))?;
    check(
        got == reference && kills == 20,
        format!("{kills} kills over {restarts} restarts; snapshot identical: {}", got == reference),
    )
}

// ---- store ---------------------------------------------------------------

fn cut_batch(e: u32, n: u32, acquired: NaiveDate, seed: u64) -> TileBatch {
    let (x0, y0) = synthetic::ugrid_corner(e, n);
    let cut = Cut {
        acquired,
        ..usgs_cut(e, n, synthetic::terrain_raster(1800, 1200, x0, y0, 1.0, seed))
    };
    let tiles = process_cut(&cut, None)
        .expect("encodes")
        .into_iter()
        .map(|t| TileRecord {
            theme: cut.theme,
            grid: cut.grid,
            level: t.level,
            sub_row: t.sub_row,
            sub_col: t.sub_col,
            acquired,
            blob: t.blob,
            encrypted: false,
            key_id: None,
            insert_epoch: 0,
        })
        .collect();
    TileBatch {
        tiles,
        metas: vec![ImageMetaRecord {
            theme: cut.theme,
            grid: cut.grid,
            acquired,
            source: format!("doq-{e}-{n}-{acquired}"),
            visible: true,
            key_id: None,
            center_place_name: None,
            insert_epoch: 0,
        }],
        originals: Vec::new(),
    }
}

fn snapshot_algebra() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: terratile::store::StoreError| e.to_string();
    let store = Store::open(dir.path().join("a")).map_err(err)?;
    store.put_tiles(cut_batch(300, 3501, date(1994, 1, 1), 1)).map_err(err)?;
    store.put_tiles(cut_batch(301, 3501, date(1994, 1, 1), 2)).map_err(err)?;
    let k = store.epoch();
    let full_k = dir.path().join("full-k.snap");
    store.snapshot_full(&full_k).map_err(err)?;

    // After k: a replacement acquisition, a new cell, a hide, a pick, hits
    // and a compaction.
    store.put_tiles(cut_batch(300, 3501, date(1997, 5, 5), 3)).map_err(err)?;
    store.put_tiles(cut_batch(300, 3502, date(1996, 1, 1), 4)).map_err(err)?;
    let hidden = GridId::U(UGridId::from_indices(10, 301, 3501).expect("cell"));
    store.hide_region(Theme::Usgs, &[hidden], false).map_err(err)?;
    store
        .add_pick(PickRecord {
            title: "Marin".into(),
            theme: Theme::Usgs,
            grid: GridId::U(UGridId::from_indices(10, 300, 3502).expect("cell")),
            caption: "hills".into(),
            insert_epoch: 0,
        })
        .map_err(err)?;
    for key in ["usgs/a", "usgs/b", "usgs/a"] {
        store.record_hit(HitKind::GridRequest, key).map_err(err)?;
    }
    store.compact().map_err(err)?;
    let m = store.epoch();
    let full_m = dir.path().join("full-m.snap");
    let inc = dir.path().join("inc.snap");
    store.snapshot_full(&full_m).map_err(err)?;
    store.snapshot_incremental(&inc, k).map_err(err)?;

    let restored = Store::open(dir.path().join("b")).map_err(err)?;
    restored.restore(&[&full_k, &inc]).map_err(err)?;
    let again = dir.path().join("again.snap");
    restored.snapshot_full(&again).map_err(err)?;
    let expected = std::fs::read(&full_m).map_err(|e| e.to_string())?;
    let got = std::fs::read(&again).map_err(|e| e.to_string())?;
    check(
        got == expected && restored.epoch() == m,
        format!("k = {k}, m = {m}; restored snapshot {} B, identical: {}", got.len(), got == expected),
    )
}

// ---- server --------------------------------------------------------------

fn pan_reuse() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let mut pairs = 0;
    for (theme, lat, lon) in [(Theme::Usgs, 37.963, -122.539), (Theme::Spin2, 37.975, -122.55), (Theme::Usgs, 44.1, -69.9)] {
        for level in Level::ALL {
            for size in [ViewSize::Small, ViewSize::Medium, ViewSize::Large] {
                let req = PageRequest { theme, lat, lon, level, size, zone: None };
                let page = build_page(&store, None, &req).map_err(|e| e.to_string())?;
                let east = page_from_url(&store, page.nav.east.as_deref().ok_or("no east link")?)?;
                let seen: HashSet<&str> = page.urls().collect();
                let shared = east.urls().filter(|u| seen.contains(u)).count();
                if shared * 2 != east.tile_count() || east.tile_count() != page.tile_count() {
                    return Err(format!("{theme} {level} {size}: {shared} of {} shared", east.tile_count()));
                }
                pairs += 1;
            }
        }
    }
    let anchors = [
        (Level::Tile, ViewSize::Small, 4),
        (Level::Tile, ViewSize::Large, 16),
        (Level::Jump, ViewSize::Small, 64),
        (Level::Jump, ViewSize::Large, 256),
    ];
    for (level, size, count) in anchors {
        let (c, r) = view_dims(level, size);
        let req = PageRequest { theme: Theme::Usgs, lat: 37.963, lon: -122.539, level, size, zone: None };
        let page = build_page(&store, None, &req).map_err(|e| e.to_string())?;
        if c * r != count || page.tile_count() != count as usize {
            return Err(format!("{level} {size}: {} tiles, expected {count}", page.tile_count()));
        }
    }
    Ok(format!("{pairs} (theme, level, size) pans share exactly 50%; anchors 4/16/64/256 hold"))
}

fn page_from_url(store: &Store, url: &str) -> Result<PageDescriptor, String> {
    let query = url.strip_prefix("/page?").ok_or("not a page url")?;
    let kv: BTreeMap<&str, &str> = query.split('&').filter_map(|p| p.split_once('=')).collect();
    let get = |k: &str| kv.get(k).copied().ok_or(format!("{k} missing"));
    let req = PageRequest {
        theme: get("theme")?.parse().map_err(|e| format!("{e}"))?,
        lat: get("lat")?.parse().map_err(|e| format!("{e}"))?,
        lon: get("lon")?.parse().map_err(|e| format!("{e}"))?,
        level: get("level")?.parse().map_err(|e| format!("{e}"))?,
        size: get("size")?.parse()?,
        zone: kv.get("zone").map(|z| z.parse()).transpose().map_err(|e| format!("{e}"))?,
    };
    build_page(store, None, &req).map_err(|e| e.to_string())
}

async fn fetch(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).expect("request"))
        .await
        .expect("infallible");
    let status = res.status();
    (status, res.into_body().collect().await.expect("body").to_bytes().to_vec())
}

/// Every tile URL of `grid`, all levels.
fn tile_urls(grid: GridId) -> Vec<String> {
    let mut out = Vec::new();
    for level in Level::ALL {
        let n = if level == Level::Tile { 8 } else { 1 };
        for r in 0..n {
            for c in 0..n {
                out.push(format!("/tile/usgs/{level}/{grid}/{r}/{c}"));
            }
        }
    }
    out
}

struct Observed {
    tiles: Vec<(StatusCode, Vec<u8>)>,
    present_slots: usize,
    green: bool,
    range: usize,
}

async fn observe(app: &axum::Router, store: &Store, grid: GridId) -> Observed {
    let mut tiles = Vec::new();
    for u in tile_urls(grid) {
        tiles.push(fetch(app, &u).await);
    }
    let c = grid.extent().center().expect("centre");
    let (_, body) = fetch(app, &format!("/page?theme=usgs&lat={}&lon={}&level=browse&size=large", c.lat(), c.lon())).await;
    let page: PageDescriptor = serde_json::from_slice(&body).expect("descriptor");
    let present_slots = page
        .tiles
        .iter()
        .flatten()
        .filter(|s| s.grid == Some(grid) && s.present)
        .count();
    let (dx, dy) = CoverageLevel::Region.degrees_per_pixel();
    let gx = ((c.lon() + 180.0) / dx).floor() as u32;
    let gy = ((90.0 - c.lat()) / dy).floor() as u32;
    let (x, y) = (gx / coverage::TILE_WIDTH, gy / coverage::TILE_HEIGHT);
    let (_, png) = fetch(app, &format!("/coverage/region/{x}/{y}?theme=usgs")).await;
    let img = image::load_from_memory(&png).expect("png").to_rgb8();
    let green = img.get_pixel(gx % coverage::TILE_WIDTH, gy % coverage::TILE_HEIGHT).0 == COVERED;
    let range = Level::ALL
        .iter()
        .map(|&l| store.get_range(Theme::Usgs, l, &[grid]).expect("range").len())
        .sum();
    Observed { tiles, present_slots, green, range }
}

fn hide_semantics() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Arc::new(Store::open(dir.path().join("store")).map_err(|e| e.to_string())?);
    store.put_tiles(cut_batch(300, 3501, date(1994, 1, 1), 1)).map_err(|e| e.to_string())?;
    store.put_tiles(cut_batch(300, 3501, date(1997, 1, 1), 2)).map_err(|e| e.to_string())?;
    store.put_tiles(cut_batch(301, 3501, date(1995, 1, 1), 3)).map_err(|e| e.to_string())?;
    let grid = GridId::U(UGridId::from_indices(10, 300, 3501).expect("cell"));
    let neighbour = GridId::U(UGridId::from_indices(10, 301, 3501).expect("cell"));
    let state = AppState::new(store.clone(), Arc::new(Gazetteer::new()), ServerConfig::default());
    let app = router(state);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;

    rt.block_on(async {
        let before = observe(&app, &store, grid).await;
        let other_before = observe(&app, &store, neighbour).await;
        if !before.tiles.iter().all(|t| t.0 == StatusCode::OK) || !before.green || before.present_slots != 1 {
            return Err("cell not fully visible before hiding".to_string());
        }
        store.hide_region(Theme::Usgs, &[grid], false).map_err(|e| e.to_string())?;
        let hidden = observe(&app, &store, grid).await;
        let other = observe(&app, &store, neighbour).await;
        let absent = hidden.tiles.iter().all(|t| t.0 == StatusCode::NOT_FOUND)
            && hidden.present_slots == 0
            && !hidden.green
            && hidden.range == 0;
        let dated = fetch(&app, &format!("/tile/usgs/tile/{grid}/0/0?date=1994-01-01")).await.0;
        let untouched = other.tiles == other_before.tiles && other.green;
        store.hide_region(Theme::Usgs, &[grid], true).map_err(|e| e.to_string())?;
        let after = observe(&app, &store, grid).await;
        let restored = after.tiles == before.tiles && after.green && after.range == before.range;
        check(
            absent && dated == StatusCode::NOT_FOUND && untouched && restored,
            format!(
                "{} reads absent while hidden: {absent}; neighbour untouched: {untouched}; unhide restores bytes: {restored}",
                hidden.tiles.len() + 3
            ),
        )
    })
}
