//! Labeled spectral libraries: data model, delimited-text ingestion and
//! writing, summaries and seeded synthetic generation.
//!
//! Ingestion is driven by an [`IngestConfig`], normally read from a small
//! TOML file. Band columns are either detected from headers that parse as
//! wavelengths (`"437"`, `"X437"`, `"437nm"`) or taken from an explicit
//! index range. Label strings are mapped to [`CropLabel`] / [`StageLabel`]
//! through canonicalization tables; a string with no entry fails the load.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CropLabel {
    Corn,
    Cotton,
    Rice,
    Soybeans,
    WinterWheat,
}

impl CropLabel {
    /// Alphabetical by name; this order is the tie-break order everywhere.
    pub const ALL: [CropLabel; 5] = [
        CropLabel::Corn,
        CropLabel::Cotton,
        CropLabel::Rice,
        CropLabel::Soybeans,
        CropLabel::WinterWheat,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CropLabel::Corn => "Corn",
            CropLabel::Cotton => "Cotton",
            CropLabel::Rice => "Rice",
            CropLabel::Soybeans => "Soybeans",
            CropLabel::WinterWheat => "WinterWheat",
        }
    }
}

impl fmt::Display for CropLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CropLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown crop {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageLabel {
    EmergeVEarly,
    EarlyMid,
    Late,
    Critical,
    MatureSenesc,
    Harvest,
}

impl StageLabel {
    pub const ALL: [StageLabel; 6] = [
        StageLabel::EmergeVEarly,
        StageLabel::EarlyMid,
        StageLabel::Late,
        StageLabel::Critical,
        StageLabel::MatureSenesc,
        StageLabel::Harvest,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StageLabel::EmergeVEarly => "EmergeVEarly",
            StageLabel::EarlyMid => "EarlyMid",
            StageLabel::Late => "Late",
            StageLabel::Critical => "Critical",
            StageLabel::MatureSenesc => "MatureSenesc",
            StageLabel::Harvest => "Harvest",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// A (crop, growth stage) pair. Ordered by crop, then stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointLabel {
    pub crop: CropLabel,
    pub stage: StageLabel,
}

impl JointLabel {
    pub const COUNT: usize = CropLabel::COUNT * StageLabel::COUNT;

    pub fn new(crop: CropLabel, stage: StageLabel) -> Self {
        Self { crop, stage }
    }

    pub fn all() -> impl Iterator<Item = JointLabel> {
        CropLabel::ALL
            .into_iter()
            .flat_map(|c| StageLabel::ALL.into_iter().map(move |s| JointLabel::new(c, s)))
    }
}

impl fmt::Display for JointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.crop, self.stage)
    }
}

/// Band centers in nanometers, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WavelengthGrid<T> {
    wavelengths_nm: Vec<T>,
}

impl<T: Scalar> WavelengthGrid<T> {
    pub fn new(wavelengths_nm: Vec<T>) -> Result<Self> {
        if wavelengths_nm.len() < 2 {
            return Err(Error::Data(format!(
                "wavelength grid needs at least 2 bands, got {}",
                wavelengths_nm.len()
            )));
        }
        if let Some(w) = wavelengths_nm.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::Data(format!(
                "wavelengths must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { wavelengths_nm })
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    pub fn wavelengths(&self) -> &[T] {
        &self.wavelengths_nm
    }
}

/// Percent reflectance per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct Spectrum<T>(Vec<T>);

impl<T: Scalar> Spectrum<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Bands outside [0, 100].
    pub fn out_of_range_count(&self) -> usize {
        let hundred = T::lit(100.0);
        self.0
            .iter()
            .filter(|&&v| v < T::zero() || v > hundred)
            .count()
    }
}

impl<T> Deref for Spectrum<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar> From<Vec<T>> for Spectrum<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SampleRecord<T> {
    pub spectrum: Spectrum<T>,
    pub crop: CropLabel,
    pub stage: StageLabel,
    /// Degrees; `None` when absent or unparseable.
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub aez: String,
    pub source_id: String,
}

impl<T: Scalar> SampleRecord<T> {
    pub fn new(spectrum: Vec<T>, crop: CropLabel, stage: StageLabel) -> Self {
        Self {
            spectrum: Spectrum::new(spectrum),
            crop,
            stage,
            latitude: None,
            longitude: None,
            aez: String::new(),
            source_id: String::new(),
        }
    }

    pub fn joint(&self) -> JointLabel {
        JointLabel::new(self.crop, self.stage)
    }
}

/// A validated, immutable spectral library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    grid: WavelengthGrid<T>,
    records: Vec<SampleRecord<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(grid: WavelengthGrid<T>, records: Vec<SampleRecord<T>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        let b = grid.len();
        for (i, r) in records.iter().enumerate() {
            if r.spectrum.len() != b {
                return Err(Error::Data(format!(
                    "record {i} has {} bands, grid has {b}",
                    r.spectrum.len()
                )));
            }
            if let Some(j) = r.spectrum.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("record {i} band {j} is not finite")));
            }
        }
        Ok(Self { grid, records })
    }

    pub fn grid(&self) -> &WavelengthGrid<T> {
        &self.grid
    }

    pub fn band_count(&self) -> usize {
        self.grid.len()
    }

    pub fn records(&self) -> &[SampleRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A new dataset holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.grid.clone(), records)
    }

    pub fn crop_counts(&self) -> [usize; CropLabel::COUNT] {
        let mut counts = [0; CropLabel::COUNT];
        for r in &self.records {
            counts[r.crop.index()] += 1;
        }
        counts
    }
}

/// A header name (matched case-insensitively) or a zero-based column index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    fn resolve(&self, headers: &[String]) -> Option<usize> {
        match self {
            ColumnRef::Index(i) => (*i < headers.len()).then_some(*i),
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name.trim())),
        }
    }

    fn describe(&self) -> String {
        match self {
            ColumnRef::Index(i) => format!("#{i}"),
            ColumnRef::Name(n) => n.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandDetection {
    /// Every unmapped column whose header parses as a wavelength.
    NumericHeader,
    /// Columns `band_first_index..=band_last_index`; headers still give wavelengths.
    IndexRange,
}

/// Column mapping, band detection and label canonicalization for ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub crop_column: ColumnRef,
    pub stage_column: ColumnRef,
    #[serde(default)]
    pub latitude_column: Option<ColumnRef>,
    #[serde(default)]
    pub longitude_column: Option<ColumnRef>,
    #[serde(default)]
    pub aez_column: Option<ColumnRef>,
    #[serde(default)]
    pub source_column: Option<ColumnRef>,
    /// When true, mapped metadata columns missing from the header are
    /// treated as absent instead of failing the load.
    #[serde(default)]
    pub optional_metadata: bool,
    #[serde(default = "default_band_detection")]
    pub band_detection: BandDetection,
    #[serde(default)]
    pub band_first_index: Option<usize>,
    #[serde(default)]
    pub band_last_index: Option<usize>,
    /// Multiplier applied to every reflectance cell (e.g. 100 for fractional files).
    #[serde(default = "default_scale")]
    pub reflectance_scale: f64,
    #[serde(default)]
    pub crop_labels: BTreeMap<String, CropLabel>,
    #[serde(default)]
    pub stage_labels: BTreeMap<String, StageLabel>,
}

fn default_delimiter() -> char {
    ','
}

fn default_band_detection() -> BandDetection {
    BandDetection::NumericHeader
}

fn default_scale() -> f64 {
    1.0
}

fn canonical_crop_table(extra: &[(&str, CropLabel)]) -> BTreeMap<String, CropLabel> {
    CropLabel::ALL
        .iter()
        .map(|c| (c.name().to_string(), *c))
        .chain(extra.iter().map(|(k, v)| (k.to_string(), *v)))
        .collect()
}

fn canonical_stage_table(extra: &[(&str, StageLabel)]) -> BTreeMap<String, StageLabel> {
    StageLabel::ALL
        .iter()
        .map(|s| (s.name().to_string(), *s))
        .chain(extra.iter().map(|(k, v)| (k.to_string(), *v)))
        .collect()
}

impl IngestConfig {
    /// Shipped default profile for the GHISACONUS library export.
    pub fn ghisaconus() -> Self {
        use CropLabel::*;
        use StageLabel::*;
        Self {
            delimiter: ',',
            crop_column: ColumnRef::Name("Crop".into()),
            stage_column: ColumnRef::Name("Stage".into()),
            latitude_column: Some(ColumnRef::Name("Lat".into())),
            longitude_column: Some(ColumnRef::Name("Long".into())),
            aez_column: Some(ColumnRef::Name("AEZ".into())),
            source_column: Some(ColumnRef::Name("Image".into())),
            optional_metadata: true,
            band_detection: BandDetection::NumericHeader,
            band_first_index: None,
            band_last_index: None,
            reflectance_scale: 1.0,
            crop_labels: canonical_crop_table(&[
                ("Winter Wheat", WinterWheat),
                ("Winter_Wheat", WinterWheat),
                ("Wheat", WinterWheat),
                ("Soybean", Soybeans),
                ("Soybn", Soybeans),
            ]),
            stage_labels: canonical_stage_table(&[
                ("Emerge_VEarly", EmergeVEarly),
                ("Emergence/Very Early Vegetative", EmergeVEarly),
                ("Emg_VE", EmergeVEarly),
                ("Early_Mid", EarlyMid),
                ("Early and Mid Vegetative", EarlyMid),
                ("Erl_Mid", EarlyMid),
                ("Late Vegetative", Late),
                ("Mature_Senesc", MatureSenesc),
                ("Maturing/Senescence", MatureSenesc),
                ("Mat_Sen", MatureSenesc),
            ]),
        }
    }

    /// Profile matching the layout produced by [`write_library`].
    pub fn toolkit() -> Self {
        Self {
            delimiter: ',',
            crop_column: ColumnRef::Name("crop".into()),
            stage_column: ColumnRef::Name("stage".into()),
            latitude_column: Some(ColumnRef::Name("latitude".into())),
            longitude_column: Some(ColumnRef::Name("longitude".into())),
            aez_column: Some(ColumnRef::Name("aez".into())),
            source_column: Some(ColumnRef::Name("source_id".into())),
            optional_metadata: true,
            band_detection: BandDetection::NumericHeader,
            band_first_index: None,
            band_last_index: None,
            reflectance_scale: 1.0,
            crop_labels: canonical_crop_table(&[]),
            stage_labels: canonical_stage_table(&[]),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be a single ASCII character".into()));
        }
        if !(self.reflectance_scale.is_finite() && self.reflectance_scale > 0.0) {
            return Err(Error::Config("reflectance_scale must be positive".into()));
        }
        let missing_crops: Vec<_> = CropLabel::ALL
            .iter()
            .filter(|c| !self.crop_labels.values().any(|v| v == *c))
            .map(|c| c.name())
            .collect();
        let missing_stages: Vec<_> = StageLabel::ALL
            .iter()
            .filter(|s| !self.stage_labels.values().any(|v| v == *s))
            .map(|s| s.name())
            .collect();
        if !missing_crops.is_empty() || !missing_stages.is_empty() {
            return Err(Error::Config(format!(
                "canonicalization tables do not reach: {}",
                missing_crops
                    .into_iter()
                    .chain(missing_stages)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        if self.band_detection == BandDetection::IndexRange {
            match (self.band_first_index, self.band_last_index) {
                (Some(a), Some(b)) if a <= b => {}
                _ => {
                    return Err(Error::Config(
                        "index-range band detection needs band_first_index <= band_last_index".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    fn lookup<L: Copy>(table: &BTreeMap<String, L>, raw: &str) -> Option<L> {
        let raw = raw.trim();
        if let Some(v) = table.get(raw) {
            return Some(*v);
        }
        let key = normalize_label(raw);
        table
            .iter()
            .find(|(k, _)| normalize_label(k) == key)
            .map(|(_, v)| *v)
    }
}

/// Lowercase, alphanumerics only: "Emerge_VEarly" and "emerge vearly" match.
fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Parses headers such as `437`, `437.5`, `X437`, `b437nm` into a wavelength.
pub fn parse_wavelength_header(h: &str) -> Option<f64> {
    let h = h.trim();
    let h = h
        .strip_suffix("nm")
        .or_else(|| h.strip_suffix("NM"))
        .unwrap_or(h)
        .trim_end();
    let digits = h.trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == '_');
    if digits.is_empty() || !digits.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    digits.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0)
}

fn parse_optional_coord(raw: &str, limit: f64) -> Option<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && v.abs() <= limit)
}

/// Reads a delimited spectral library from `path`.
pub fn load_library<T: Scalar>(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_library(file, config)
}

/// Reads a delimited spectral library from any reader.
pub fn read_library<T: Scalar, R: Read>(reader: R, config: &IngestConfig) -> Result<Dataset<T>> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(config.delimiter as u8)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Data("missing header row".into()));
    }

    let required = |c: &ColumnRef| c.resolve(&headers).ok_or_else(|| Error::MissingColumn(c.describe()));
    let crop_idx = required(&config.crop_column)?;
    let stage_idx = required(&config.stage_column)?;
    let optional = |c: &Option<ColumnRef>| -> Result<Option<usize>> {
        match c {
            None => Ok(None),
            Some(c) => match c.resolve(&headers) {
                Some(i) => Ok(Some(i)),
                None if config.optional_metadata => Ok(None),
                None => Err(Error::MissingColumn(c.describe())),
            },
        }
    };
    let lat_idx = optional(&config.latitude_column)?;
    let lon_idx = optional(&config.longitude_column)?;
    let aez_idx = optional(&config.aez_column)?;
    let src_idx = optional(&config.source_column)?;
    let mapped: Vec<usize> = [Some(crop_idx), Some(stage_idx), lat_idx, lon_idx, aez_idx, src_idx]
        .into_iter()
        .flatten()
        .collect();

    let band_cols: Vec<(usize, f64)> = match config.band_detection {
        BandDetection::NumericHeader => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .filter_map(|(i, h)| parse_wavelength_header(h).map(|w| (i, w)))
            .collect(),
        BandDetection::IndexRange => {
            let (first, last) = (
                config.band_first_index.unwrap_or(0),
                config.band_last_index.unwrap_or(0),
            );
            if last >= headers.len() {
                return Err(Error::MissingColumn(format!("#{last}")));
            }
            (first..=last)
                .map(|i| {
                    parse_wavelength_header(&headers[i])
                        .map(|w| (i, w))
                        .ok_or_else(|| {
                            Error::Data(format!("band header {:?} is not a wavelength", headers[i]))
                        })
                })
                .collect::<Result<_>>()?
        }
    };
    let grid = WavelengthGrid::new(band_cols.iter().map(|&(_, w)| T::lit(w)).collect())?;
    let scale = T::lit(config.reflectance_scale);

    let mut records = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        // 1-based data row number, header excluded
        let row_no = n + 1;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let crop_raw = cell(crop_idx);
        let crop = IngestConfig::lookup(&config.crop_labels, crop_raw).ok_or_else(|| Error::UnknownLabel {
            row: row_no,
            field: "crop",
            value: crop_raw.to_string(),
        })?;
        let stage_raw = cell(stage_idx);
        let stage =
            IngestConfig::lookup(&config.stage_labels, stage_raw).ok_or_else(|| Error::UnknownLabel {
                row: row_no,
                field: "stage",
                value: stage_raw.to_string(),
            })?;
        let spectrum = band_cols
            .iter()
            .map(|&(i, _)| {
                let raw = cell(i).trim();
                raw.parse::<T>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| v * scale)
                    .ok_or_else(|| Error::BadReflectance {
                        row: row_no,
                        column: headers[i].clone(),
                        value: raw.to_string(),
                    })
            })
            .collect::<Result<Vec<T>>>()?;
        let latitude = lat_idx.and_then(|i| parse_optional_coord(cell(i), 90.0));
        let longitude = lon_idx.and_then(|i| parse_optional_coord(cell(i), 180.0));
        records.push(SampleRecord {
            spectrum: Spectrum::new(spectrum),
            crop,
            stage,
            latitude,
            longitude,
            aez: aez_idx.map(|i| cell(i).to_string()).unwrap_or_default(),
            source_id: src_idx.map(|i| cell(i).to_string()).unwrap_or_default(),
        });
    }
    Dataset::new(grid, records)
}

/// Writes `ds` as comma-separated text readable with [`IngestConfig::toolkit`].
///
/// Columns: `crop,stage,latitude,longitude,aez,source_id` followed by one
/// column per band whose header is the wavelength. Absent coordinates are
/// empty cells; values use shortest round-trip formatting.
pub fn write_library<T: Scalar, W: Write>(ds: &Dataset<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["crop", "stage", "latitude", "longitude", "aez", "source_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ds.grid().wavelengths().iter().map(|w| w.to_string()));
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![
            r.crop.name().to_string(),
            r.stage.name().to_string(),
            r.latitude.map(|v| v.to_string()).unwrap_or_default(),
            r.longitude.map(|v| v.to_string()).unwrap_or_default(),
            r.aez.clone(),
            r.source_id.clone(),
        ];
        row.extend(r.spectrum.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_library_file<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_library(ds, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub total: usize,
    pub band_count: usize,
    pub first_wavelength_nm: f64,
    pub last_wavelength_nm: f64,
    pub crop_counts: BTreeMap<CropLabel, usize>,
    pub stage_counts: BTreeMap<StageLabel, usize>,
    /// Counts for every one of the 30 joint labels, zero when unrealized.
    pub joint_counts: BTreeMap<String, usize>,
    pub min_reflectance: f64,
    pub max_reflectance: f64,
    /// Individual band values outside [0, 100].
    pub out_of_range_values: usize,
    pub records_missing_location: usize,
}

impl Summary {
    pub fn crops_present(&self) -> usize {
        self.crop_counts.values().filter(|&&n| n > 0).count()
    }

    pub fn joint_count(&self, label: JointLabel) -> usize {
        self.joint_counts.get(&label.to_string()).copied().unwrap_or(0)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.total)?;
        writeln!(
            f,
            "bands: {} ({} nm .. {} nm)",
            self.band_count, self.first_wavelength_nm, self.last_wavelength_nm
        )?;
        writeln!(
            f,
            "reflectance range: [{}, {}], {} values outside [0, 100]",
            self.min_reflectance, self.max_reflectance, self.out_of_range_values
        )?;
        writeln!(f, "records without location: {}", self.records_missing_location)?;
        writeln!(f, "crops:")?;
        for (c, n) in &self.crop_counts {
            writeln!(f, "  {c:<12} {n}")?;
        }
        writeln!(f, "stages:")?;
        for (s, n) in &self.stage_counts {
            writeln!(f, "  {s:<12} {n}")?;
        }
        writeln!(f, "joint labels:")?;
        for (j, n) in self.joint_counts.iter().filter(|(_, &n)| n > 0) {
            writeln!(f, "  {j:<24} {n}")?;
        }
        Ok(())
    }
}

pub fn summarize<T: Scalar>(ds: &Dataset<T>) -> Summary {
    let mut crop_counts: BTreeMap<_, _> = CropLabel::ALL.iter().map(|&c| (c, 0)).collect();
    let mut stage_counts: BTreeMap<_, _> = StageLabel::ALL.iter().map(|&s| (s, 0)).collect();
    let mut joint: BTreeMap<JointLabel, usize> = JointLabel::all().map(|j| (j, 0)).collect();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut out_of_range = 0;
    let mut missing_location = 0;
    for r in ds.records() {
        *crop_counts.get_mut(&r.crop).unwrap() += 1;
        *stage_counts.get_mut(&r.stage).unwrap() += 1;
        *joint.get_mut(&r.joint()).unwrap() += 1;
        for v in r.spectrum.iter() {
            let v = v.as_f64();
            min = min.min(v);
            max = max.max(v);
        }
        out_of_range += r.spectrum.out_of_range_count();
        if r.latitude.is_none() || r.longitude.is_none() {
            missing_location += 1;
        }
    }
    let w = ds.grid().wavelengths();
    Summary {
        total: ds.len(),
        band_count: ds.band_count(),
        first_wavelength_nm: w[0].as_f64(),
        last_wavelength_nm: w[w.len() - 1].as_f64(),
        crop_counts,
        stage_counts,
        joint_counts: joint.into_iter().map(|(j, n)| (j.to_string(), n)).collect(),
        min_reflectance: min,
        max_reflectance: max,
        out_of_range_values: out_of_range,
        records_missing_location: missing_location,
    }
}

/// One Gaussian generator in a [`SyntheticSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SyntheticClass<T> {
    pub crop: CropLabel,
    pub stage: StageLabel,
    pub count: usize,
    pub mean: Vec<T>,
    /// Row-major B×B; must be symmetric positive semidefinite.
    pub covariance: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SyntheticSpec<T> {
    pub wavelengths_nm: Vec<T>,
    pub classes: Vec<SyntheticClass<T>>,
}

impl<T: Scalar> SyntheticSpec<T> {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Lower factor of a positive semidefinite matrix; zero pivots give zero columns.
fn psd_factor<T: Scalar>(cov: &Matrix<T>) -> Result<Matrix<T>> {
    let n = cov.rows();
    let scale = (0..n).map(|i| cov[(i, i)].abs()).fold(T::zero(), T::max);
    let tol = T::epsilon() * T::lit(64.0) * T::from_count(n.max(1)) * scale.max(T::one());
    if cov.max_asymmetry() > tol {
        return Err(Error::Data("synthetic covariance is not symmetric".into()));
    }
    let mut l = Matrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: d.as_f64(),
            });
        }
        if d <= tol {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Draws a labeled library from per-joint-label Gaussians. Deterministic in `seed`.
pub fn synthesize<T: Scalar>(spec: &SyntheticSpec<T>, seed: u64) -> Result<Dataset<T>> {
    let grid = WavelengthGrid::new(spec.wavelengths_nm.clone())?;
    let b = grid.len();
    if spec.classes.is_empty() {
        return Err(Error::InvalidArgument("synthetic spec lists no classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for class in &spec.classes {
        if class.mean.len() != b {
            return Err(Error::Dimension {
                expected: b,
                got: class.mean.len(),
            });
        }
        let cov = Matrix::from_rows(&class.covariance)?;
        if cov.rows() != b || cov.cols() != b {
            return Err(Error::Dimension {
                expected: b,
                got: cov.rows(),
            });
        }
        let factor = psd_factor(&cov)?;
        for _ in 0..class.count {
            let z: Vec<T> = (0..b)
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect();
            let offset = factor.mat_vec(&z)?;
            let x = class.mean.iter().zip(&offset).map(|(&m, &o)| m + o).collect();
            let mut rec = SampleRecord::new(x, class.crop, class.stage);
            rec.source_id = "synthetic".into();
            records.push(rec);
        }
    }
    Dataset::new(grid, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text() -> String {
        "Crop,Stage,Lat,Long,AEZ,Image,X437,X447\n\
         Corn,Critical,40.1,-90.2,AEZ5,img1,10.5,20\n\
         Winter Wheat,Emergence/Very Early Vegetative,bad,-100,AEZ7,img2,3,4\n"
            .to_string()
    }

    #[test]
    fn loads_mapped_columns_and_canonicalizes() {
        let ds: Dataset<f64> = read_library(csv_text().as_bytes(), &IngestConfig::ghisaconus()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.grid().wavelengths(), &[437.0, 447.0]);
        let r = &ds.records()[1];
        assert_eq!(r.crop, CropLabel::WinterWheat);
        assert_eq!(r.stage, StageLabel::EmergeVEarly);
        assert_eq!(r.latitude, None);
        assert_eq!(r.longitude, Some(-100.0));
        assert_eq!(ds.records()[0].spectrum.to_vec(), vec![10.5, 20.0]);
        assert_eq!(ds.records()[0].source_id, "img1");
    }

    #[test]
    fn unknown_label_names_row_and_string() {
        let text = "Crop,Stage,437,447\nCorn,Sprouting,1,2\n";
        let err = read_library::<f64, _>(text.as_bytes(), &IngestConfig::ghisaconus()).unwrap_err();
        match err {
            Error::UnknownLabel { row, field, value } => {
                assert_eq!((row, field, value.as_str()), (1, "stage", "Sprouting"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_reflectance_names_row_and_column() {
        let text = "Crop,Stage,437,447\nCorn,Late,1,2\nRice,Late,1,x\n";
        let err = read_library::<f64, _>(text.as_bytes(), &IngestConfig::ghisaconus()).unwrap_err();
        assert!(matches!(err, Error::BadReflectance { row: 2, ref column, .. } if column == "447"));
    }

    #[test]
    fn missing_mapped_column_fails_when_required() {
        let text = "Crop,437,447\nCorn,1,2\n";
        let err = read_library::<f64, _>(text.as_bytes(), &IngestConfig::ghisaconus()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "Stage"));
        let mut cfg = IngestConfig::ghisaconus();
        cfg.optional_metadata = false;
        let text = "Crop,Stage,437,447\nCorn,Late,1,2\n";
        assert!(matches!(
            read_library::<f64, _>(text.as_bytes(), &cfg),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn single_zero_row_loads() {
        let text = "crop,stage,latitude,longitude,aez,source_id,500,600\nRice,Harvest,,,,,0,0\n";
        let ds: Dataset<f64> = read_library(text.as_bytes(), &IngestConfig::toolkit()).unwrap();
        assert_eq!(ds.len(), 1);
        let s = summarize(&ds);
        assert_eq!(s.joint_count(JointLabel::new(CropLabel::Rice, StageLabel::Harvest)), 1);
        assert_eq!(s.joint_counts.values().sum::<usize>(), 1);
    }

    #[test]
    fn empty_input_and_header_only_fail() {
        assert!(read_library::<f64, _>("".as_bytes(), &IngestConfig::toolkit()).is_err());
        let text = "crop,stage,latitude,longitude,aez,source_id,500,600\n";
        assert!(read_library::<f64, _>(text.as_bytes(), &IngestConfig::toolkit()).is_err());
    }

    #[test]
    fn index_range_and_scale() {
        let mut cfg = IngestConfig::toolkit();
        cfg.latitude_column = None;
        cfg.longitude_column = None;
        cfg.aez_column = None;
        cfg.source_column = None;
        cfg.band_detection = BandDetection::IndexRange;
        cfg.band_first_index = Some(3);
        cfg.band_last_index = Some(4);
        cfg.reflectance_scale = 100.0;
        let text = "crop,stage,2000,437,447\nCorn,Late,7,0.25,0.5\n";
        let ds: Dataset<f64> = read_library(text.as_bytes(), &cfg).unwrap();
        assert_eq!(ds.band_count(), 2);
        assert_eq!(ds.records()[0].spectrum.to_vec(), vec![25.0, 50.0]);
    }

    #[test]
    fn out_of_range_values_are_kept_and_counted() {
        let text = "Crop,Stage,437,447\nCorn,Late,-1,120\n";
        let ds: Dataset<f64> = read_library(text.as_bytes(), &IngestConfig::ghisaconus()).unwrap();
        assert_eq!(summarize(&ds).out_of_range_values, 2);
    }

    #[test]
    fn config_must_reach_every_label() {
        let mut cfg = IngestConfig::toolkit();
        cfg.stage_labels.remove("Harvest");
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("Harvest")));
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = IngestConfig::ghisaconus();
        let back = IngestConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn wavelength_headers() {
        assert_eq!(parse_wavelength_header("X437"), Some(437.0));
        assert_eq!(parse_wavelength_header("2345nm"), Some(2345.0));
        assert_eq!(parse_wavelength_header("b_437.5"), Some(437.5));
        assert_eq!(parse_wavelength_header("Year"), None);
        assert_eq!(parse_wavelength_header("Lat"), None);
    }

    #[test]
    fn grid_must_increase() {
        assert!(WavelengthGrid::new(vec![1.0, 1.0]).is_err());
        assert!(WavelengthGrid::new(vec![1.0]).is_err());
    }

    fn two_class_spec() -> SyntheticSpec<f64> {
        SyntheticSpec {
            wavelengths_nm: vec![500.0, 800.0],
            classes: vec![
                SyntheticClass {
                    crop: CropLabel::Corn,
                    stage: StageLabel::Late,
                    count: 100,
                    mean: vec![10.0, 10.0],
                    covariance: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
                },
                SyntheticClass {
                    crop: CropLabel::Rice,
                    stage: StageLabel::Harvest,
                    count: 100,
                    mean: vec![60.0, 60.0],
                    covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
            ],
        }
    }

    #[test]
    fn synthesize_is_byte_reproducible() {
        let a = synthesize(&two_class_spec(), 7).unwrap();
        let b = synthesize(&two_class_spec(), 7).unwrap();
        assert_eq!(a.len(), 200);
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        write_library(&a, &mut wa).unwrap();
        write_library(&b, &mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = synthesize(&two_class_spec(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_covariance_reproduces_mean() {
        let mut spec = two_class_spec();
        spec.classes[0].covariance = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let ds = synthesize(&spec, 1).unwrap();
        for r in ds.records().iter().filter(|r| r.crop == CropLabel::Corn) {
            assert_eq!(r.spectrum.to_vec(), vec![10.0, 10.0]);
        }
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let mut spec = two_class_spec();
        spec.classes[0].covariance = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(synthesize(&spec, 1), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn sample_mean_obeys_law_of_large_numbers() {
        let mut spec = two_class_spec();
        spec.classes.truncate(1);
        spec.classes[0].count = 10_000;
        spec.classes[0].covariance = vec![vec![4.0, 1.0], vec![1.0, 9.0]];
        let ds = synthesize(&spec, 99).unwrap();
        for band in 0..2 {
            let mean: f64 = ds.records().iter().map(|r| r.spectrum[band]).sum::<f64>() / 10_000.0;
            let sigma = spec.classes[0].covariance[band][band].sqrt();
            assert!((mean - 10.0).abs() < 3.0 * sigma / 100.0, "band {band}: {mean}");
        }
    }

    #[test]
    fn synthetic_grid_of_thirty_labels_counts() {
        let classes = JointLabel::all()
            .map(|j| SyntheticClass {
                crop: j.crop,
                stage: j.stage,
                count: 10,
                mean: vec![j.crop.index() as f64, j.stage.index() as f64],
                covariance: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            })
            .collect();
        let spec = SyntheticSpec {
            wavelengths_nm: vec![400.0, 500.0],
            classes,
        };
        let s = summarize(&synthesize(&spec, 3).unwrap());
        assert_eq!(s.joint_counts.len(), 30);
        assert!(s.joint_counts.values().all(|&n| n == 10));
        assert_eq!(s.crops_present(), 5);
    }
}
