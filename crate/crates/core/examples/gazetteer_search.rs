//! Place-name search over the bundled Bay Area gazetteer: airports in
//! California, a cursor walk over every US place and nearest-place captions.
//!
//! ```text
//! cargo run --example gazetteer_search
//! ```

use std::path::Path;

use chrono::NaiveDate;
use terratile::gazetteer::{Gazetteer, SearchQuery};
use terratile::spatial_index::{geo_to_ugrid, GeoPoint, GridId};
use terratile::Theme;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/gazetteer_bay_area.txt");
    let (gaz, counts) = Gazetteer::load_file(path)?;
    println!(
        "{} rows, {} places, {} countries, {} states",
        counts.places, counts.distinct_places, counts.countries, counts.states
    );

    // Pretend there is imagery at Gnoss Field; image-bearing rows sort first.
    let gnoss = GridId::U(geo_to_ugrid(GeoPoint::new(38.1436, -122.5567)?)?);
    gaz.register_image(Theme::Usgs, gnoss, NaiveDate::from_ymd_opt(1997, 8, 1).ok_or("date")?);

    let airports = gaz.search(&SearchQuery {
        state: Some("Calif.".into()),
        feature_type: Some("airport".into()),
        ..SearchQuery::default()
    })?;
    println!(
        "airports in California via {} ({} rows examined):",
        airports.index.map(|i| i.to_string()).unwrap_or_default(),
        airports.rows_examined
    );
    for p in &airports.results {
        let flag = if p.image_flag { "*" } else { " " };
        println!("  {flag} {:<28} {:>8.4} {:>9.4}", p.alternate_name, p.lat, p.lon);
    }

    let mut q = SearchQuery {
        country: Some("United States of America".into()),
        ..SearchQuery::default()
    };
    let mut pages = 0;
    let mut rows = 0;
    loop {
        let page = gaz.search(&q)?;
        pages += 1;
        rows += page.results.len();
        match page.next_cursor {
            Some(c) => q.cursor = Some(c),
            None => break,
        }
    }
    println!("{rows} US rows in {pages} pages of ten");

    let prefix = gaz.search(&SearchQuery {
        name: Some("san".into()),
        ..SearchQuery::default()
    })?;
    let names: Vec<&str> = prefix.results.iter().map(|p| p.alternate_name.as_str()).collect();
    println!("names starting with \"san\": {}", names.join(", "));

    if let Some(n) = gaz.nearest_place(gnoss) {
        println!("caption for {gnoss}: {} ({:.0} m from the cell centre)", n.name, n.distance_m);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
