use super::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const HEADER: &str = "\
@country|United States|USA|US|United States of America
@country|Yemen|Yemen Arab Republic|Al Yaman|Republic of Yemen
@country|Canada|CA
@state|USA|California|CA|Calif.
@state|USA|Washington|WA
@state|Canada|British Columbia|BC
";

fn load(body: &str) -> Gazetteer {
    Gazetteer::load_str(&format!("{HEADER}{body}")).unwrap().0
}

fn q(
    name: Option<&str>,
    state: Option<&str>,
    country: Option<&str>,
    ty: Option<&str>,
) -> SearchQuery {
    SearchQuery {
        name: name.map(Into::into),
        state: state.map(Into::into),
        country: country.map(Into::into),
        feature_type: ty.map(Into::into),
        cursor: None,
    }
}

fn all_pages(g: &Gazetteer, mut query: SearchQuery) -> Vec<Vec<PlaceHit>> {
    let mut pages = Vec::new();
    loop {
        let page = g.search(&query).unwrap();
        assert!(page.results.len() <= PAGE_SIZE);
        pages.push(page.results);
        match page.next_cursor {
            Some(c) => query.cursor = Some(c),
            None => return pages,
        }
    }
}

#[test]
fn feature_types_parse() {
    assert_eq!(FeatureType::parse("Airport").unwrap().id(), 1);
    assert_eq!(FeatureType::parse("railroad station").unwrap().id(), 1);
    assert_eq!(
        FeatureType::parse("Airport/Railroad Station").unwrap().id(),
        1
    );
    assert_eq!(FeatureType::parse("12").unwrap().description(), "River");
    assert_eq!(FeatureType::parse("POINT OF INTEREST").unwrap().id(), 11);
    assert!(FeatureType::parse("Volcano").is_none());
    assert!(FeatureType::parse("13").is_none());
}

#[test]
fn alternate_names_are_rows() {
    let (g, counts) = Gazetteer::load_str(&format!(
        "{HEADER}1|Sanaa|Sanaa|Yemen||4|15.35|44.2\n1|Sanaa|San'a|Al Yaman||4|15.35|44.2\n"
    ))
    .unwrap();
    assert_eq!(counts.places, 2);
    assert_eq!(counts.distinct_places, 1);
    assert_eq!(counts.countries, 3);
    assert_eq!(counts.country_names, 4 + 4 + 2);
    assert_eq!(counts.feature_types, 12);
    // All Yemen aliases resolve to one country.
    for alias in ["Yemen", "republic of yemen", "AL YAMAN"] {
        let page = g.search(&q(None, None, Some(alias), None)).unwrap();
        assert_eq!(page.results.len(), 2, "{alias}");
        assert!(page.results.iter().all(|h| h.country == "Yemen"));
    }
}

#[test]
fn dangling_references_report_the_line() {
    let text = format!("{HEADER}# comment\n1|A|A|USA|Oregon|4|44|-120\n");
    match Gazetteer::load_str(&text) {
        Err(GazetteerError::Parse { line, .. }) => assert_eq!(line, 8),
        other => panic!("{other:?}"),
    }
    assert!(Gazetteer::load_str(&format!("{HEADER}1|A|A|Mars||4|0|0\n")).is_err());
    assert!(Gazetteer::load_str(&format!("{HEADER}1|A|A|USA||13|0|0\n")).is_err());
    assert!(Gazetteer::load_str("@state|Nowhere|X\n").is_err());
}

#[test]
fn airports_in_california() {
    let g = load(
        "10|San Francisco International|San Francisco International|USA|California|1|37.62|-122.38\n\
         11|Los Angeles International|Los Angeles International|USA|CA|1|33.94|-118.41\n\
         12|Oakland International|Oakland International|USA|California|1|37.72|-122.22\n\
         13|Sea-Tac|Sea-Tac|USA|Washington|1|47.45|-122.31\n\
         14|Oakland|Oakland|USA|California|4|37.80|-122.27\n",
    );
    let page = g
        .search(&q(None, Some("California"), None, Some("Airport")))
        .unwrap();
    assert_eq!(page.index, Some(IndexId::Akplace3));
    let names: Vec<&str> = page
        .results
        .iter()
        .map(|h| h.alternate_name.as_str())
        .collect();
    assert_eq!(
        names,
        [
            "Los Angeles International",
            "Oakland International",
            "San Francisco International"
        ]
    );

    // Imagery moves a row to the front.
    let sfo = GridId::Z(geo_to_zgrid(GeoPoint::new(37.62, -122.38).unwrap()));
    assert_eq!(
        g.register_image(
            Theme::Spin2,
            sfo,
            NaiveDate::from_ymd_opt(1998, 1, 1).unwrap()
        ),
        1
    );
    let page = g
        .search(&q(None, Some("California"), None, Some("Airport")))
        .unwrap();
    assert_eq!(
        page.results[0].alternate_name,
        "San Francisco International"
    );
    assert!(page.results[0].image_flag);
    assert!(page.results[0].spin2_date.is_some());
}

#[test]
fn unknown_names_give_empty_pages() {
    let g = load("1|A|A|USA|California|4|37|-120\n");
    for query in [
        q(None, Some("Oregon"), None, None),
        q(None, None, Some("Atlantis"), None),
        q(Some("A"), None, None, Some("Volcano")),
    ] {
        let page = g.search(&query).unwrap();
        assert!(page.results.is_empty() && page.next_cursor.is_none());
    }
    assert!(matches!(
        g.search(&SearchQuery::default()),
        Err(GazetteerError::NoCriteria)
    ));
    let bad = SearchQuery {
        cursor: Some("!!".into()),
        ..q(Some("A"), None, None, None)
    };
    assert!(matches!(g.search(&bad), Err(GazetteerError::BadCursor)));

    let empty = Gazetteer::new();
    let page = empty.search(&q(Some("A"), None, None, None)).unwrap();
    assert!(page.results.is_empty() && page.next_cursor.is_none());
}

#[test]
fn twenty_five_matches_page_10_10_5() {
    let body: String = (0..25)
        .map(|i| format!("{i}|Spring {i:02}|Spring {i:02}|USA|Washington|7|47.{i:02}|-120\n"))
        .collect();
    let g = load(&body);
    let pages = all_pages(&g, q(Some("spring"), None, None, None));
    let sizes: Vec<usize> = pages.iter().map(Vec::len).collect();
    assert_eq!(sizes, [10, 10, 5]);
    let names: Vec<String> = pages
        .concat()
        .into_iter()
        .map(|h| h.alternate_name)
        .collect();
    let expected: Vec<String> = (0..25).map(|i| format!("Spring {i:02}")).collect();
    assert_eq!(names, expected);
}

#[test]
fn index_table_matches_documentation() {
    let shape = |name, state, country, feature_type| CriteriaShape {
        name,
        state,
        country,
        feature_type,
    };
    assert_eq!(
        pick_index(shape(true, false, false, false)),
        IndexId::Akplace1
    );
    assert_eq!(
        pick_index(shape(false, false, false, true)),
        IndexId::Akplace1
    );
    assert_eq!(
        pick_index(shape(true, true, true, false)),
        IndexId::Akplace2
    );
    assert_eq!(
        pick_index(shape(false, true, true, false)),
        IndexId::Akplace2
    );
    assert_eq!(
        pick_index(shape(false, true, true, true)),
        IndexId::Akplace3
    );
    assert_eq!(
        pick_index(shape(false, true, false, true)),
        IndexId::Akplace3
    );
    assert_eq!(
        pick_index(shape(true, false, true, false)),
        IndexId::Akplace4
    );
    assert_eq!(
        pick_index(shape(false, false, true, false)),
        IndexId::Akplace4
    );
    assert_eq!(
        pick_index(shape(false, false, true, true)),
        IndexId::Akplace5
    );
}

/// A random fixture with many shared prefixes and duplicate names.
pub(crate) fn random_fixture(places: usize, seed: u64) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let stems = [
        "Spring",
        "Springfield",
        "Oak",
        "Oakland",
        "Lake",
        "San",
        "Santa",
        "Mill",
        "mill",
        "Ridge",
    ];
    let mut out = String::from(HEADER);
    for id in 0..places {
        let stem = stems[rng.gen_range(0..stems.len())];
        let name = format!("{stem} {}", rng.gen_range(0..40));
        let (country, state) = match rng.gen_range(0..6) {
            0 => ("Canada", "BC"),
            1 => ("Yemen", ""),
            2 => ("USA", ""),
            3 => ("USA", "Washington"),
            _ => ("US", "California"),
        };
        let ty = rng.gen_range(1..=12);
        let lat = 30.0 + rng.gen::<f64>() * 20.0;
        let lon = -125.0 + rng.gen::<f64>() * 10.0;
        out.push_str(&format!(
            "{id}|{name}|{name}|{country}|{state}|{ty}|{lat:.5}|{lon:.5}\n"
        ));
        if rng.gen_bool(0.3) {
            let alt = format!("{} {name}", ["Old", "New", "Port"][rng.gen_range(0..3)]);
            out.push_str(&format!(
                "{id}|{name}|{alt}|{country}|{state}|{ty}|{lat:.5}|{lon:.5}\n"
            ));
        }
    }
    out
}

/// Filter + sort over every row, independent of the indices.
fn oracle(g: &Gazetteer, query: &SearchQuery) -> Vec<PlaceHit> {
    let clean = |v: &Option<String>| {
        v.as_deref()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_lowercase)
    };
    let name = clean(&query.name);
    let state = clean(&query.state);
    let country = clean(&query.country).or(state.as_ref().map(|_| "usa".to_string()));
    let ty = clean(&query.feature_type);
    fn canonical_country(c: &str) -> &str {
        match c {
            "usa" | "us" | "united states" | "united states of america" => "united states",
            "ca" => "canada",
            other => other,
        }
    }
    fn canonical_state(s: &str) -> &str {
        match s {
            "ca" | "calif." => "california",
            "wa" => "washington",
            "bc" => "british columbia",
            other => other,
        }
    }
    let mut rows: Vec<(usize, PlaceHit)> = g
        .all_places()
        .into_iter()
        .enumerate()
        .filter(|(_, h)| {
            name.as_ref()
                .is_none_or(|n| h.alternate_name.to_lowercase().starts_with(n.as_str()))
                && country
                    .as_ref()
                    .is_none_or(|c| h.country.to_lowercase() == canonical_country(c))
                && state.as_ref().is_none_or(|s| {
                    h.state
                        .as_ref()
                        .is_some_and(|hs| hs.to_lowercase() == canonical_state(s))
                })
                && ty.as_ref().is_none_or(|t| {
                    FeatureType::parse(t).is_some_and(|t| t.description() == h.feature_type)
                })
        })
        .collect();
    rows.sort_by_key(|(i, h)| {
        (
            !h.image_flag,
            h.alternate_name.to_lowercase(),
            h.alternate_name.clone(),
            FeatureType::parse(&h.feature_type).unwrap().id(),
            h.place_id,
            *i,
        )
    });
    rows.into_iter().map(|(_, h)| h).collect()
}

#[test]
fn search_matches_full_scan_for_every_criteria_subset() {
    let g = Gazetteer::load_str(&random_fixture(1500, 7)).unwrap().0;
    // Give a scattering of cells imagery so both flag partitions are populated.
    let places = g.all_places();
    for (i, p) in places.iter().enumerate().filter(|(i, _)| i % 7 == 0) {
        let date = NaiveDate::from_ymd_opt(1990 + (i % 9) as i32, 1, 1).unwrap();
        if i % 2 == 0 {
            g.register_image(Theme::Spin2, p.zgrid, date);
        } else if let Some(u) = p.ugrid {
            g.register_image(Theme::Usgs, u, date);
        }
    }
    let names = [None, Some("spring"), Some("Oak"), Some("s"), Some("Mill 1")];
    let states = [None, Some("california"), Some("WA"), Some("bc")];
    let countries = [None, Some("usa"), Some("Canada"), Some("Yemen")];
    let types = [None, Some("lake"), Some("City"), Some("10")];
    let mut checked = 0;
    for n in names {
        for s in states {
            for c in countries {
                for t in types {
                    let query = q(n, s, c, t);
                    if query.shape() == CriteriaShape::default() {
                        continue;
                    }
                    let got: Vec<PlaceHit> = all_pages(&g, query.clone()).concat();
                    assert_eq!(got, oracle(&g, &query), "{query:?}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 5 * 4 * 4 * 4 - 1);
}

#[test]
fn first_page_reads_at_most_page_plus_one_rows() {
    let g = Gazetteer::load_str(&random_fixture(3000, 3)).unwrap().0;
    for query in [
        q(Some("spring"), None, None, None),
        q(None, None, Some("USA"), None),
        q(None, Some("CA"), None, Some("City")),
        q(Some("Oak"), Some("CA"), Some("USA"), None),
    ] {
        let page = g.search(&query).unwrap();
        assert!(
            page.rows_examined <= PAGE_SIZE + 1,
            "{query:?}: {}",
            page.rows_examined
        );
    }
}

#[test]
fn register_uses_max_date_and_counts_cell_rows() {
    let g = Gazetteer::load_str(&random_fixture(2000, 11)).unwrap().0;
    let p = g.all_places()[5].clone();
    let cell = p.zgrid;
    let in_cell = g.all_places().iter().filter(|h| h.zgrid == cell).count();
    let new = NaiveDate::from_ymd_opt(1998, 1, 1).unwrap();
    let old = NaiveDate::from_ymd_opt(1992, 1, 1).unwrap();
    assert_eq!(g.register_image(Theme::Spin2, cell, new), in_cell);
    assert_eq!(g.register_image(Theme::Spin2, cell, old), 0);
    assert_eq!(g.register_image(Theme::Spin2, cell, new), 0);
    assert!(g
        .places_in_cell(cell)
        .iter()
        .all(|h| h.spin2_date == Some(new) && h.image_flag));
    // Wrong theme for the grid type changes nothing.
    assert_eq!(g.register_image(Theme::Usgs, cell, new), 0);
}

#[test]
fn nearest_place_matches_exhaustive_distance() {
    let g = Gazetteer::load_str(&random_fixture(2000, 5)).unwrap().0;
    let places = g.all_places();
    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..200 {
        let p = GeoPoint::new(
            29.0 + rng.gen::<f64>() * 22.0,
            -126.0 + rng.gen::<f64>() * 12.0,
        )
        .unwrap();
        let cell = GridId::Z(geo_to_zgrid(p));
        let center = cell.extent().center().unwrap();
        let expected = places
            .iter()
            .map(|h| (haversine_m(center, GeoPoint::new(h.lat, h.lon).unwrap()), h))
            .filter(|(d, _)| *d <= NEAREST_RADIUS_M)
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| a.1.alternate_name.cmp(&b.1.alternate_name))
                    .then_with(|| a.1.place_id.cmp(&b.1.place_id))
            });
        let got = g.nearest_place(cell);
        match (expected, got) {
            (None, None) => {}
            (Some((d, h)), Some(n)) => {
                assert_eq!(
                    (n.place_id, &n.alternate_name),
                    (h.place_id, &h.alternate_name)
                );
                assert!((n.distance_m - d).abs() < 1e-6);
            }
            (e, g) => panic!("{e:?} vs {g:?}"),
        }
    }
    assert!(Gazetteer::new()
        .nearest_place(GridId::Z(ZGridId::from_indices(0, 0).unwrap()))
        .is_none());
}

#[test]
fn place_at_cell_center_is_nearest() {
    let cell = GridId::U(UGridId::from_indices(10, 300, 3500).unwrap());
    let c = cell.extent().center().unwrap();
    let g = load(&format!(
        "1|Here|Here|USA||11|{}|{}\n2|There|There|USA||11|{}|{}\n",
        c.lat(),
        c.lon(),
        c.lat() + 0.05,
        c.lon()
    ));
    assert_eq!(g.nearest_place(cell).unwrap().name, "Here");
}
