//! Place-name directory.
//!
//! Places form the core of a snowflake: each row points at a country, an
//! optional state and a feature type, and every alternate spelling of a place
//! is its own row sharing the place id. Countries and states carry their own
//! alias tables; lookups fold case.
//!
//! Search results are ordered image-bearing first, then by alternate name
//! (case-folded, then as written), then by feature type, with place id and row
//! as final tie-breakers. Five ordered indices serve the searches. Each is keyed
//! by a fixed prefix followed by that global order:
//!
//! | index    | prefix                 |
//! |----------|------------------------|
//! | akplace1 | none                   |
//! | akplace2 | country, state         |
//! | akplace3 | country, state, type   |
//! | akplace4 | country                |
//! | akplace5 | country, type          |
//!
//! Index choice (name may accompany any row; it narrows the scan to a name
//! prefix range inside each image-flag partition):
//!
//! | criteria                | index    | residual filter |
//! |-------------------------|----------|-----------------|
//! | country, state, type    | akplace3 |                 |
//! | country, state          | akplace2 |                 |
//! | country, type           | akplace5 |                 |
//! | country                 | akplace4 |                 |
//! | type, no country        | akplace1 | type            |
//! | name only               | akplace1 |                 |
//!
//! A state without a country implies the country `USA`. Because every index
//! orders rows identically after its prefix, results never depend on the
//! index used, and a cursor (the order key of the last row returned) resumes
//! on any of them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Bound;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::NaiveDate;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::spatial_index::utm::haversine_m;
use crate::spatial_index::{
    geo_to_ugrid, geo_to_zgrid, GeoPoint, GridId, UGridId, ZGridId, CELLS_PER_DEGREE_LAT,
    CELLS_PER_DEGREE_LON, ZGRID_COLUMNS, ZGRID_ROWS,
};
use crate::Theme;

pub const PAGE_SIZE: usize = 10;
/// Nearest-place search radius.
pub const NEAREST_RADIUS_M: f64 = 50_000.0;
/// Country assumed when a state is given alone.
pub const DEFAULT_COUNTRY: &str = "USA";

/// The closed list of place types, id 1..=12.
pub const FEATURE_TYPES: [&str; 12] = [
    "Airport/Railroad Station",
    "Bay/Gulf",
    "Cape/Peninsula",
    "City",
    "Hill/Mountain",
    "Island",
    "Lake",
    "Other Land Feature",
    "Other Water Feature",
    "Park/Beach",
    "Point of Interest",
    "River",
];

/// Feature type id 1..=12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureType(u8);

impl FeatureType {
    pub fn from_id(id: u8) -> Option<FeatureType> {
        (1..=FEATURE_TYPES.len() as u8)
            .contains(&id)
            .then_some(FeatureType(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn description(self) -> &'static str {
        FEATURE_TYPES[self.0 as usize - 1]
    }

    /// Matches the id, the full description, or any `/`-separated part of it,
    /// ignoring case.
    pub fn parse(s: &str) -> Option<FeatureType> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u8>() {
            return FeatureType::from_id(id);
        }
        let folded = fold(s);
        FEATURE_TYPES
            .iter()
            .position(|d| fold(d) == folded || d.split('/').any(|part| fold(part.trim()) == folded))
            .map(|i| FeatureType(i as u8 + 1))
    }
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.description())
    }
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

#[derive(Debug, thiserror::Error)]
pub enum GazetteerError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("a search needs at least one of name, state, country or type")]
    NoCriteria,
    #[error("malformed search cursor")]
    BadCursor,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One place row (one spelling of a place).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Place {
    pub place_id: u64,
    pub name: String,
    pub alternate_name: String,
    pub country_id: u32,
    pub state_id: Option<u32>,
    pub feature_type: FeatureType,
    pub lat: f64,
    pub lon: f64,
    pub zgrid: ZGridId,
    /// Absent outside the UTM grid (southern hemisphere, polar caps).
    pub ugrid: Option<UGridId>,
    pub usgs_date: Option<NaiveDate>,
    pub spin2_date: Option<NaiveDate>,
}

impl Place {
    pub fn image_flag(&self) -> bool {
        self.usgs_date.is_some() || self.spin2_date.is_some()
    }

    fn order_key(&self, row: u32) -> OrderKey {
        OrderKey {
            img_rank: if self.image_flag() { 0 } else { 1 },
            name_fold: fold(&self.alternate_name),
            name: self.alternate_name.clone(),
            ty: self.feature_type.0,
            place_id: self.place_id,
            row,
        }
    }
}

/// Global result order; image-bearing rows rank 0.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct OrderKey {
    img_rank: u8,
    name_fold: String,
    name: String,
    ty: u8,
    place_id: u64,
    row: u32,
}

const NO_STATE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct IxKey {
    prefix: [u32; 3],
    order: OrderKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexId {
    Akplace1,
    Akplace2,
    Akplace3,
    Akplace4,
    Akplace5,
}

impl IndexId {
    const ALL: [IndexId; 5] = [
        IndexId::Akplace1,
        IndexId::Akplace2,
        IndexId::Akplace3,
        IndexId::Akplace4,
        IndexId::Akplace5,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    fn prefix(self, country: u32, state: u32, ty: u8) -> [u32; 3] {
        match self {
            IndexId::Akplace1 => [0, 0, 0],
            IndexId::Akplace2 => [country, state, 0],
            IndexId::Akplace3 => [country, state, ty as u32],
            IndexId::Akplace4 => [country, 0, 0],
            IndexId::Akplace5 => [country, ty as u32, 0],
        }
    }
}

impl fmt::Display for IndexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "akplace{}", self.slot() + 1)
    }
}

/// Which criteria are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CriteriaShape {
    pub name: bool,
    pub state: bool,
    pub country: bool,
    pub feature_type: bool,
}

/// Index used for a criteria shape (after a lone state has implied the
/// default country).
pub fn pick_index(c: CriteriaShape) -> IndexId {
    let country = c.country || c.state;
    match (country, c.state, c.feature_type) {
        (true, true, true) => IndexId::Akplace3,
        (true, true, false) => IndexId::Akplace2,
        (true, false, true) => IndexId::Akplace5,
        (true, false, false) => IndexId::Akplace4,
        (false, _, _) => IndexId::Akplace1,
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SearchQuery {
    pub name: Option<String>,
    pub state: Option<String>,
    pub country: Option<String>,
    #[serde(rename = "type")]
    pub feature_type: Option<String>,
    pub cursor: Option<String>,
}

impl SearchQuery {
    fn clean(v: &Option<String>) -> Option<&str> {
        v.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }

    pub fn shape(&self) -> CriteriaShape {
        CriteriaShape {
            name: Self::clean(&self.name).is_some(),
            state: Self::clean(&self.state).is_some(),
            country: Self::clean(&self.country).is_some(),
            feature_type: Self::clean(&self.feature_type).is_some(),
        }
    }
}

/// A search result row with everything needed to link to imagery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceHit {
    pub place_id: u64,
    pub name: String,
    pub alternate_name: String,
    pub country: String,
    pub state: Option<String>,
    pub feature_type: String,
    pub lat: f64,
    pub lon: f64,
    pub image_flag: bool,
    pub usgs_date: Option<NaiveDate>,
    pub spin2_date: Option<NaiveDate>,
    pub zgrid: GridId,
    pub ugrid: Option<GridId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPage {
    pub results: Vec<PlaceHit>,
    pub next_cursor: Option<String>,
    pub index: Option<IndexId>,
    /// Index entries read to produce the page.
    pub rows_examined: usize,
}

impl SearchPage {
    fn empty(index: Option<IndexId>) -> SearchPage {
        SearchPage {
            results: Vec::new(),
            next_cursor: None,
            index,
            rows_examined: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearestPlace {
    pub place_id: u64,
    pub name: String,
    pub alternate_name: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadCounts {
    /// Place rows, one per spelling.
    pub places: usize,
    pub distinct_places: usize,
    pub countries: usize,
    pub country_names: usize,
    pub states: usize,
    pub state_names: usize,
    pub feature_types: usize,
}

#[derive(Debug, Clone)]
struct Country {
    name: String,
}

#[derive(Debug, Clone)]
struct State {
    name: String,
}

#[derive(Default)]
struct Inner {
    places: Vec<Place>,
    countries: Vec<Country>,
    country_alias: HashMap<String, u32>,
    states: Vec<State>,
    state_alias: HashMap<(u32, String), u32>,
    indices: [BTreeSet<IxKey>; 5],
    by_zgrid: BTreeMap<ZGridId, Vec<u32>>,
    by_ugrid: BTreeMap<UGridId, Vec<u32>>,
    /// (lat index, lon index) for radius queries.
    by_cell_rowmajor: BTreeMap<(u32, u32), Vec<u32>>,
    counts: LoadCounts,
}

impl Inner {
    fn ix_keys(&self, row: u32) -> [IxKey; 5] {
        let p = &self.places[row as usize];
        let order = p.order_key(row);
        let state = p.state_id.unwrap_or(NO_STATE);
        IndexId::ALL.map(|ix| IxKey {
            prefix: ix.prefix(p.country_id, state, p.feature_type.0),
            order: order.clone(),
        })
    }

    fn index_row(&mut self, row: u32) {
        for (slot, k) in self.ix_keys(row).into_iter().enumerate() {
            self.indices[slot].insert(k);
        }
    }

    fn unindex_row(&mut self, row: u32) {
        for (slot, k) in self.ix_keys(row).into_iter().enumerate() {
            self.indices[slot].remove(&k);
        }
    }

    fn hit(&self, row: u32) -> PlaceHit {
        let p = &self.places[row as usize];
        PlaceHit {
            place_id: p.place_id,
            name: p.name.clone(),
            alternate_name: p.alternate_name.clone(),
            country: self.countries[p.country_id as usize].name.clone(),
            state: p.state_id.map(|s| self.states[s as usize].name.clone()),
            feature_type: p.feature_type.description().to_string(),
            lat: p.lat,
            lon: p.lon,
            image_flag: p.image_flag(),
            usgs_date: p.usgs_date,
            spin2_date: p.spin2_date,
            zgrid: GridId::Z(p.zgrid),
            ugrid: p.ugrid.map(GridId::U),
        }
    }
}

/// The place directory. Reads run concurrently; mutations serialise.
#[derive(Default)]
pub struct Gazetteer {
    inner: RwLock<Inner>,
}

impl fmt::Debug for Gazetteer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gazetteer")
            .field("counts", &self.inner.read().counts)
            .finish()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GazetteerError {
    GazetteerError::Parse {
        line,
        message: message.into(),
    }
}

impl Gazetteer {
    pub fn new() -> Gazetteer {
        Gazetteer::default()
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<(Gazetteer, LoadCounts), GazetteerError> {
        let text = std::fs::read_to_string(path)?;
        Gazetteer::load_str(&text)
    }

    /// Parses the source format:
    ///
    /// ```text
    /// # comment
    /// @country|canonical name|alias|alias...
    /// @state|country name or alias|canonical name|alias...
    /// place_id|name|alternate_name|country|state|feature_type_id|lat|lon
    /// ```
    ///
    /// Directive lines may appear anywhere. The state field may be empty.
    pub fn load_str(text: &str) -> Result<(Gazetteer, LoadCounts), GazetteerError> {
        let mut inner = Inner::default();
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();

        for &(n, line) in lines.iter().filter(|(_, l)| l.starts_with("@country|")) {
            let fields: Vec<&str> = line.split('|').skip(1).map(str::trim).collect();
            let Some(canonical) = fields.first().filter(|s| !s.is_empty()) else {
                return Err(parse_err(n, "country line without a name"));
            };
            let id = inner.countries.len() as u32;
            inner.countries.push(Country {
                name: canonical.to_string(),
            });
            for alias in fields.iter().filter(|s| !s.is_empty()) {
                if let Some(prev) = inner.country_alias.insert(fold(alias), id) {
                    if prev != id {
                        return Err(parse_err(
                            n,
                            format!("country alias {alias:?} already used"),
                        ));
                    }
                }
            }
        }
        for &(n, line) in lines.iter().filter(|(_, l)| l.starts_with("@state|")) {
            let fields: Vec<&str> = line.split('|').skip(1).map(str::trim).collect();
            if fields.len() < 2 || fields[1].is_empty() {
                return Err(parse_err(n, "state line needs a country and a name"));
            }
            let Some(&country) = inner.country_alias.get(&fold(fields[0])) else {
                return Err(parse_err(n, format!("unknown country {:?}", fields[0])));
            };
            let id = inner.states.len() as u32;
            inner.states.push(State {
                name: fields[1].to_string(),
            });
            for alias in fields[1..].iter().filter(|s| !s.is_empty()) {
                if let Some(prev) = inner.state_alias.insert((country, fold(alias)), id) {
                    if prev != id {
                        return Err(parse_err(n, format!("state alias {alias:?} already used")));
                    }
                }
            }
        }

        let mut place_ids = BTreeSet::new();
        for &(n, line) in lines.iter().filter(|(_, l)| !l.starts_with('@')) {
            let f: Vec<&str> = line.split('|').map(str::trim).collect();
            if f.len() != 8 {
                return Err(parse_err(
                    n,
                    format!("expected 8 fields, found {}", f.len()),
                ));
            }
            let place_id: u64 = f[0]
                .parse()
                .map_err(|_| parse_err(n, format!("bad place id {:?}", f[0])))?;
            if f[1].is_empty() || f[2].is_empty() {
                return Err(parse_err(n, "empty name"));
            }
            let country_id = *inner
                .country_alias
                .get(&fold(f[3]))
                .ok_or_else(|| parse_err(n, format!("unknown country {:?}", f[3])))?;
            let state_id = if f[4].is_empty() {
                None
            } else {
                Some(
                    *inner
                        .state_alias
                        .get(&(country_id, fold(f[4])))
                        .ok_or_else(|| parse_err(n, format!("unknown state {:?}", f[4])))?,
                )
            };
            let feature_type = f[5]
                .parse::<u8>()
                .ok()
                .and_then(FeatureType::from_id)
                .ok_or_else(|| parse_err(n, format!("unknown feature type {:?}", f[5])))?;
            let lat: f64 = f[6].parse().map_err(|_| parse_err(n, "bad latitude"))?;
            let lon: f64 = f[7].parse().map_err(|_| parse_err(n, "bad longitude"))?;
            let point = GeoPoint::new(lat, lon).map_err(|e| parse_err(n, e.to_string()))?;
            place_ids.insert(place_id);
            inner.places.push(Place {
                place_id,
                name: f[1].to_string(),
                alternate_name: f[2].to_string(),
                country_id,
                state_id,
                feature_type,
                lat: point.lat(),
                lon: point.lon(),
                zgrid: geo_to_zgrid(point),
                ugrid: geo_to_ugrid(point).ok(),
                usgs_date: None,
                spin2_date: None,
            });
        }

        for row in 0..inner.places.len() as u32 {
            inner.index_row(row);
            let p = &inner.places[row as usize];
            let (z, u) = (p.zgrid, p.ugrid);
            inner.by_zgrid.entry(z).or_default().push(row);
            if let Some(u) = u {
                inner.by_ugrid.entry(u).or_default().push(row);
            }
            inner
                .by_cell_rowmajor
                .entry((z.lat_index(), z.lon_index()))
                .or_default()
                .push(row);
        }
        let counts = LoadCounts {
            places: inner.places.len(),
            distinct_places: place_ids.len(),
            countries: inner.countries.len(),
            country_names: inner.country_alias.len(),
            states: inner.states.len(),
            state_names: inner.state_alias.len(),
            feature_types: FEATURE_TYPES.len(),
        };
        inner.counts = counts;
        Ok((
            Gazetteer {
                inner: RwLock::new(inner),
            },
            counts,
        ))
    }

    pub fn counts(&self) -> LoadCounts {
        self.inner.read().counts
    }

    /// One page of results. Unknown country, state or type names give an
    /// empty page.
    pub fn search(&self, q: &SearchQuery) -> Result<SearchPage, GazetteerError> {
        let shape = q.shape();
        if shape == CriteriaShape::default() {
            return Err(GazetteerError::NoCriteria);
        }
        let after = match SearchQuery::clean(&q.cursor) {
            Some(c) => Some(decode_cursor(c)?),
            None => None,
        };
        let index = pick_index(shape);
        let inner = self.inner.read();

        let country_name =
            SearchQuery::clean(&q.country).or(shape.state.then_some(DEFAULT_COUNTRY));
        let country = match country_name {
            Some(c) => match inner.country_alias.get(&fold(c)) {
                Some(&id) => id,
                None => return Ok(SearchPage::empty(Some(index))),
            },
            None => 0,
        };
        let state = match SearchQuery::clean(&q.state) {
            Some(s) => match inner.state_alias.get(&(country, fold(s))) {
                Some(&id) => id,
                None => return Ok(SearchPage::empty(Some(index))),
            },
            None => NO_STATE,
        };
        let ty = match SearchQuery::clean(&q.feature_type) {
            Some(t) => match FeatureType::parse(t) {
                Some(t) => Some(t),
                None => return Ok(SearchPage::empty(Some(index))),
            },
            None => None,
        };
        let residual_type = if index == IndexId::Akplace1 { ty } else { None };
        let prefix = index.prefix(country, state, ty.map_or(0, |t| t.0));
        let name_prefix = SearchQuery::clean(&q.name).map(fold).unwrap_or_default();
        let set = &inner.indices[index.slot()];

        let mut rows = Vec::with_capacity(PAGE_SIZE + 1);
        let mut examined = 0;
        'ranks: for img_rank in [0u8, 1] {
            if after.as_ref().is_some_and(|a| a.img_rank > img_rank) {
                continue;
            }
            let start = IxKey {
                prefix,
                order: OrderKey {
                    img_rank,
                    name_fold: name_prefix.clone(),
                    name: String::new(),
                    ty: 0,
                    place_id: 0,
                    row: 0,
                },
            };
            let lower = match &after {
                Some(a) if a.img_rank == img_rank && a.name_fold >= name_prefix => {
                    Bound::Excluded(IxKey {
                        prefix,
                        order: a.clone(),
                    })
                }
                _ => Bound::Included(start),
            };
            for k in set.range((lower, Bound::Unbounded)) {
                if k.prefix != prefix
                    || k.order.img_rank != img_rank
                    || !k.order.name_fold.starts_with(&name_prefix)
                {
                    break;
                }
                examined += 1;
                let row = k.order.row;
                if residual_type.is_some_and(|t| inner.places[row as usize].feature_type != t) {
                    continue;
                }
                rows.push((k.order.clone(), row));
                if rows.len() > PAGE_SIZE {
                    break 'ranks;
                }
            }
        }
        let next_cursor = if rows.len() > PAGE_SIZE {
            rows.truncate(PAGE_SIZE);
            rows.last().map(|(k, _)| encode_cursor(k))
        } else {
            None
        };
        Ok(SearchPage {
            results: rows.iter().map(|&(_, r)| inner.hit(r)).collect(),
            next_cursor,
            index: Some(index),
            rows_examined: examined,
        })
    }

    /// Records imagery at a cell: every place row in it takes the newer of
    /// its current date and `acquired`. Returns the number of rows changed.
    pub fn register_image(&self, theme: Theme, grid: GridId, acquired: NaiveDate) -> usize {
        let mut inner = self.inner.write();
        let rows: Vec<u32> = match grid {
            GridId::Z(z) if theme == Theme::Spin2 => {
                inner.by_zgrid.get(&z).cloned().unwrap_or_default()
            }
            GridId::U(u) if theme == Theme::Usgs => {
                inner.by_ugrid.get(&u).cloned().unwrap_or_default()
            }
            _ => Vec::new(),
        };
        let mut changed = 0;
        for row in rows {
            let p = &inner.places[row as usize];
            let current = match theme {
                Theme::Usgs => p.usgs_date,
                Theme::Spin2 => p.spin2_date,
            };
            if current.is_some_and(|d| d >= acquired) {
                continue;
            }
            let flag_changes = !p.image_flag();
            if flag_changes {
                inner.unindex_row(row);
            }
            let p = &mut inner.places[row as usize];
            match theme {
                Theme::Usgs => p.usgs_date = Some(acquired),
                Theme::Spin2 => p.spin2_date = Some(acquired),
            }
            if flag_changes {
                inner.index_row(row);
            }
            changed += 1;
        }
        changed
    }

    /// Closest place to the cell centre within [`NEAREST_RADIUS_M`]; ties go
    /// to the lower alternate name, then place id.
    pub fn nearest_place(&self, grid: GridId) -> Option<NearestPlace> {
        let center = grid.extent().center().ok()?;
        let inner = self.inner.read();
        let rows = candidates_within(&inner, center, NEAREST_RADIUS_M);
        rows.into_iter()
            .map(|row| {
                let p = &inner.places[row as usize];
                let at = GeoPoint::new(p.lat, p.lon).expect("validated at load");
                (haversine_m(center, at), row)
            })
            .filter(|(d, _)| *d <= NEAREST_RADIUS_M)
            .min_by(|a, b| {
                let (pa, pb) = (&inner.places[a.1 as usize], &inner.places[b.1 as usize]);
                a.0.total_cmp(&b.0)
                    .then_with(|| pa.alternate_name.cmp(&pb.alternate_name))
                    .then_with(|| pa.place_id.cmp(&pb.place_id))
            })
            .map(|(d, row)| {
                let p = &inner.places[row as usize];
                NearestPlace {
                    place_id: p.place_id,
                    name: p.name.clone(),
                    alternate_name: p.alternate_name.clone(),
                    distance_m: d,
                }
            })
    }

    /// Place rows located in a cell of the given theme.
    pub fn places_in_cell(&self, grid: GridId) -> Vec<PlaceHit> {
        let inner = self.inner.read();
        let rows = match grid {
            GridId::Z(z) => inner.by_zgrid.get(&z),
            GridId::U(u) => inner.by_ugrid.get(&u),
        };
        rows.into_iter().flatten().map(|&r| inner.hit(r)).collect()
    }

    /// Every row, in load order. Intended for tests and reference scans.
    pub fn all_places(&self) -> Vec<PlaceHit> {
        let inner = self.inner.read();
        (0..inner.places.len() as u32)
            .map(|r| inner.hit(r))
            .collect()
    }
}

/// Rows in the lat/lon box that bounds a circle of `radius_m` around `c`.
fn candidates_within(inner: &Inner, c: GeoPoint, radius_m: f64) -> Vec<u32> {
    // Slightly under the spherical metres per degree so the box always
    // contains the circle.
    const M_PER_DEG: f64 = 110_000.0;
    let dlat = radius_m / M_PER_DEG;
    let south = (c.lat() - dlat).max(-90.0);
    let north = (c.lat() + dlat).min(90.0);
    let lat_lo = ((south + 90.0) * CELLS_PER_DEGREE_LAT).floor() as u32;
    let lat_hi = (((north + 90.0) * CELLS_PER_DEGREE_LAT).floor() as u32).min(ZGRID_ROWS - 1);

    let widest = south.abs().max(north.abs()).to_radians().cos();
    let dlon = if widest <= 1e-9 {
        360.0
    } else {
        radius_m / (M_PER_DEG * widest)
    };
    let lon_spans: Vec<(u32, u32)> = if dlon >= 180.0 {
        vec![(0, ZGRID_COLUMNS - 1)]
    } else {
        let idx = |lon: f64| ((lon + 180.0) * CELLS_PER_DEGREE_LON).floor() as i64;
        let (lo, hi) = (idx(c.lon() - dlon), idx(c.lon() + dlon));
        let n = ZGRID_COLUMNS as i64;
        if lo < 0 {
            vec![((lo + n) as u32, (n - 1) as u32), (0, hi as u32)]
        } else if hi >= n {
            vec![(lo as u32, (n - 1) as u32), (0, (hi - n) as u32)]
        } else {
            vec![(lo as u32, hi as u32)]
        }
    };
    let mut out = Vec::new();
    for lat in lat_lo..=lat_hi {
        for &(lo, hi) in &lon_spans {
            for rows in inner
                .by_cell_rowmajor
                .range((lat, lo)..=(lat, hi))
                .map(|e| e.1)
            {
                out.extend_from_slice(rows);
            }
        }
    }
    out
}

fn encode_cursor(k: &OrderKey) -> String {
    URL_SAFE_NO_PAD.encode(bincode::serialize(k).expect("cursor serialises"))
}

fn decode_cursor(s: &str) -> Result<OrderKey, GazetteerError> {
    let bytes = URL_SAFE_NO_PAD
        .decode(s)
        .map_err(|_| GazetteerError::BadCursor)?;
    bincode::deserialize(&bytes).map_err(|_| GazetteerError::BadCursor)
}

#[cfg(test)]
mod tests;
