//! Listing ingestion: price parsing, row parsing, cleaning, CSV I/O, and a
//! seeded synthetic listing generator.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{price_class, size_bin, BinTable, PriceClass, SizeVariable};

pub const CSV_HEADER: [&str; 6] = [
    "location",
    "building_size",
    "land_size",
    "bedroom",
    "bathroom",
    "price",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed price `{0}`")]
    MalformedPrice(String),
    #[error("malformed value `{value}` in column `{field}`")]
    MalformedField { field: &'static str, value: String },
    #[error("expected {expected} fields, found {found}")]
    MalformedRow { expected: usize, found: usize },
    #[error("unexpected CSV header: {0}")]
    BadHeader(String),
    #[error("no records survive cleaning ({stats})")]
    EmptyDataset { stats: CleanStats },
    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<IngestError>,
    },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::Csv(e.to_string())
    }
}

/// One advertised property as scraped or typed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub location: String,
    pub building_size: f64,
    pub land_size: f64,
    pub bedroom: u32,
    pub bathroom: u32,
    pub price: u64,
}

impl ListingRecord {
    /// Whether the record may survive cleaning.
    pub fn is_valid(&self) -> bool {
        self.building_size.is_finite()
            && self.building_size > 0.0
            && self.land_size.is_finite()
            && self.land_size > 0.0
            && self.price > 0
            && !self.location.trim().is_empty()
    }

    fn key(&self) -> (&str, u64, u64, u32, u32, u64) {
        (
            self.location.as_str(),
            self.building_size.to_bits(),
            self.land_size.to_bits(),
            self.bedroom,
            self.bathroom,
            self.price,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ListingRecord>,
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub duplicates_removed: usize,
    pub invalid_removed: usize,
}

impl std::fmt::Display for CleanStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "duplicates_removed={}, invalid_removed={}",
            self.duplicates_removed, self.invalid_removed
        )
    }
}

/// Parses a Rupiah amount such as `"Rp. 1.275.000.000"` or `"250000000"`.
///
/// Dots are thousand separators and must group digits by three. No decimal
/// fractions or signs are accepted.
pub fn parse_price(text: &str) -> Result<u64, IngestError> {
    let err = || IngestError::MalformedPrice(text.to_string());
    let mut rest = text.trim();
    if rest.get(..2).is_some_and(|p| p.eq_ignore_ascii_case("rp")) {
        rest = rest[2..].trim_start();
        if let Some(stripped) = rest.strip_prefix('.') {
            rest = stripped.trim_start();
        }
    }
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return Err(err());
    }
    let groups: Vec<&str> = rest.split('.').collect();
    if groups.len() > 1 {
        let first_ok = (1..=3).contains(&groups[0].len());
        let rest_ok = groups[1..].iter().all(|g| g.len() == 3);
        if !(first_ok && rest_ok) {
            return Err(err());
        }
    }
    let mut value: u64 = 0;
    for d in groups.concat().bytes() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(d - b'0')))
            .ok_or_else(err)?;
    }
    Ok(value)
}

/// Inverse of [`parse_price`]: `"Rp. "` followed by dot-grouped digits.
pub fn format_price(value: u64) -> String {
    let digits = value.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 4);
    out.push_str("Rp. ");
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push('.');
        }
        out.push(ch);
    }
    out
}

fn parse_size(field: &'static str, text: &str) -> Result<f64, IngestError> {
    let t = text.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::MalformedField {
            field,
            value: text.to_string(),
        }),
    }
}

fn parse_count(field: &'static str, text: &str) -> Result<u32, IngestError> {
    text.trim()
        .parse::<u32>()
        .map_err(|_| IngestError::MalformedField {
            field,
            value: text.to_string(),
        })
}

/// Parses the six fields without enforcing the positivity invariants, so that
/// the cleaning step can count such rows instead of aborting on them.
fn parse_fields<S: AsRef<str>>(fields: &[S]) -> Result<ListingRecord, IngestError> {
    if fields.len() != CSV_HEADER.len() {
        return Err(IngestError::MalformedRow {
            expected: CSV_HEADER.len(),
            found: fields.len(),
        });
    }
    let f = |i: usize| fields[i].as_ref();
    let price = parse_price(f(5)).map_err(|_| IngestError::MalformedField {
        field: "price",
        value: f(5).to_string(),
    })?;
    Ok(ListingRecord {
        location: f(0).trim().to_string(),
        building_size: parse_size("building_size", f(1))?,
        land_size: parse_size("land_size", f(2))?,
        bedroom: parse_count("bedroom", f(3))?,
        bathroom: parse_count("bathroom", f(4))?,
        price,
    })
}

/// Parses one listing in column order
/// `location, building_size, land_size, bedroom, bathroom, price`.
pub fn parse_listing<S: AsRef<str>>(fields: &[S]) -> Result<ListingRecord, IngestError> {
    let record = parse_fields(fields)?;
    if record.location.is_empty() {
        return Err(IngestError::MalformedField {
            field: "location",
            value: fields[0].as_ref().to_string(),
        });
    }
    if record.building_size <= 0.0 {
        return Err(IngestError::MalformedField {
            field: "building_size",
            value: fields[1].as_ref().to_string(),
        });
    }
    if record.land_size <= 0.0 {
        return Err(IngestError::MalformedField {
            field: "land_size",
            value: fields[2].as_ref().to_string(),
        });
    }
    Ok(record)
}

/// Drops invalid records, then collapses exact duplicates onto their first
/// occurrence. Survivors keep their relative order.
pub fn clean(
    records: Vec<ListingRecord>,
    provenance: impl Into<String>,
) -> Result<(Dataset, CleanStats), IngestError> {
    let mut stats = CleanStats::default();
    let mut kept = Vec::with_capacity(records.len());
    {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !r.is_valid() {
                stats.invalid_removed += 1;
            } else if seen.insert(r.key()) {
                kept.push(i);
            } else {
                stats.duplicates_removed += 1;
            }
        }
    }
    if kept.is_empty() {
        return Err(IngestError::EmptyDataset { stats });
    }
    let mut slots: Vec<Option<ListingRecord>> = records.into_iter().map(Some).collect();
    let records = kept
        .into_iter()
        .map(|i| slots[i].take().expect("index kept once"))
        .collect();
    Ok((
        Dataset {
            records,
            provenance: provenance.into(),
        },
        stats,
    ))
}

/// Rows read from a listing CSV before cleaning.
#[derive(Debug, Clone, PartialEq)]
pub struct RawListings {
    pub records: Vec<ListingRecord>,
    /// Rows with at least one empty field; they never reach [`clean`].
    pub incomplete_rows: usize,
}

pub fn read_listings<R: Read>(reader: R) -> Result<RawListings, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != CSV_HEADER {
        return Err(IngestError::BadHeader(header.join(",")));
    }
    let mut out = RawListings {
        records: Vec::new(),
        incomplete_rows: 0,
    };
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let at = |e: IngestError| IngestError::AtLine {
            line,
            source: Box::new(e),
        };
        if row.len() != CSV_HEADER.len() {
            return Err(at(IngestError::MalformedRow {
                expected: CSV_HEADER.len(),
                found: row.len(),
            }));
        }
        if row.iter().any(|f| f.trim().is_empty()) {
            out.incomplete_rows += 1;
            continue;
        }
        let fields: Vec<&str> = row.iter().collect();
        out.records.push(parse_fields(&fields).map_err(at)?);
    }
    Ok(out)
}

/// Writes records with a bare-integer price column.
pub fn write_listings<W: Write>(records: &[ListingRecord], writer: W) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for r in records {
        wtr.write_record([
            r.location.clone(),
            r.building_size.to_string(),
            r.land_size.to_string(),
            r.bedroom.to_string(),
            r.bathroom.to_string(),
            r.price.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(())
}

pub fn default_location_pool() -> Vec<String> {
    [
        "Antapani, Bandung",
        "Arcamanik, Bandung",
        "Bojongsoang, Bandung",
        "Cibiru, Bandung",
        "Cikutra, Bandung",
        "Cimahi, Bandung",
        "Ciwastra, Bandung",
        "Geger Kalong, Bandung",
        "Katapang, Bandung",
        "Kopo, Bandung",
        "Setiabudi, Bandung",
        "Ujungberung, Bandung",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub location_pool: Vec<String>,
}

impl SynthConfig {
    pub fn new(n: usize, noise_rate: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n,
            noise_rate,
            seed,
            location_pool: default_location_pool(),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n == 0 {
            return Err(IngestError::InvalidSynthConfig("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(IngestError::InvalidSynthConfig(format!(
                "noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self.location_pool.iter().all(|l| l.trim().is_empty()) {
            return Err(IngestError::InvalidSynthConfig(
                "location_pool has no usable location".into(),
            ));
        }
        Ok(())
    }
}

// House types: (building m², bedrooms, bathrooms). Two per size bin, far
// enough from the bin edges that the jitter never crosses one.
const HOUSE_TYPES: [(f64, u32, u32); 6] = [
    (36.0, 2, 1),
    (60.0, 2, 1),
    (100.0, 3, 2),
    (140.0, 3, 2),
    (220.0, 4, 3),
    (320.0, 5, 4),
];
const LOT_SIZES: [f64; 6] = [60.0, 90.0, 120.0, 150.0, 240.0, 400.0];
const SIZE_JITTER: i32 = 4;
const PRICE_FLOOR: u64 = 100_000_000;
const PRICE_CEILING: u64 = 5_000_000_000;
const PRICE_STEP: u64 = 1_000_000;

/// Class assigned by the generator's planted rule: the lower of the
/// building-size bin and the land-size bin under the default bins.
pub fn planted_class(building_size: f64, land_size: f64) -> PriceClass {
    let bins = BinTable::default();
    let b = size_bin(building_size, SizeVariable::Building, &bins).index();
    let l = size_bin(land_size, SizeVariable::Land, &bins).index();
    PriceClass::from_index(b.min(l)).expect("bin index < 3")
}

fn draw_price(rng: &mut ChaCha8Rng, class: PriceClass, bins: &BinTable) -> u64 {
    let (lo, hi) = bins.price_interval(class, PRICE_CEILING);
    let lo = lo.max(PRICE_FLOOR.min(hi.saturating_sub(1)));
    let first = lo.div_ceil(PRICE_STEP);
    let last = (hi - 1) / PRICE_STEP;
    if first <= last {
        rng.gen_range(first..=last) * PRICE_STEP
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates listings from a planted size-to-class rule.
///
/// Building sizes fall in `[32, 324]` m² and land sizes in `[56, 404]` m²,
/// as integer jitter around a small catalog of house types and lots. A
/// `noise_rate` fraction of records get the price of a uniformly drawn class
/// instead of the planted one.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset, IngestError> {
    config.validate()?;
    let bins = BinTable::default();
    let pool: Vec<&String> = config
        .location_pool
        .iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let location = pool[rng.gen_range(0..pool.len())].trim().to_string();
        let (building, bedroom, bathroom) = HOUSE_TYPES[rng.gen_range(0..HOUSE_TYPES.len())];
        let building = building + f64::from(rng.gen_range(-SIZE_JITTER..=SIZE_JITTER));
        let land = LOT_SIZES[rng.gen_range(0..LOT_SIZES.len())]
            + f64::from(rng.gen_range(-SIZE_JITTER..=SIZE_JITTER));
        let mut class = planted_class(building, land);
        if rng.gen::<f64>() < config.noise_rate {
            class = PriceClass::ALL[rng.gen_range(0..PriceClass::COUNT)];
        }
        let price = draw_price(&mut rng, class, &bins);
        debug_assert_eq!(price_class(price, &bins), class);
        records.push(ListingRecord {
            location,
            building_size: building,
            land_size: land,
            bedroom,
            bathroom,
            price,
        });
    }
    Ok(Dataset {
        records,
        provenance: format!(
            "synthetic(n={}, noise_rate={}, seed={})",
            config.n, config.noise_rate, config.seed
        ),
    })
}
