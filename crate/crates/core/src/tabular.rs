//! Record schema for the two person tables, CSV loading and validation, and
//! the embedding blob format.
//!
//! Missing cells are `None`. A trait score of `0` is a real value meaning
//! "insufficient information" and is never used to encode missingness.
//!
//! Column naming on disk:
//!
//! | column                    | meaning                                   |
//! |---------------------------|-------------------------------------------|
//! | `id`                      | unique person id                          |
//! | `height`, `weight`        | cm, kg                                    |
//! | `birth_year/month/day`    | integers                                  |
//! | `latitude`, `longitude`   | degrees                                   |
//! | `category`                | league, or occupation/gender label        |
//! | `score:<model>:<T>`       | one model's score for trait `T` (O,C,E,A,N) |
//! | `final:<T>`               | aggregated score for trait `T`            |
//! | `face:<attribute>`        | facial attribute, -1/0/1                  |
//! | `emb:<modality>:<k>`      | row index into an embedding matrix        |
//! | anything else             | extra feature typed by its [`ColumnKind`] |

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

/// Big Five trait, in the fixed O-C-E-A-N order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trait {
    O,
    C,
    E,
    A,
    N,
}

impl Trait {
    pub const ALL: [Trait; 5] = [Trait::O, Trait::C, Trait::E, Trait::A, Trait::N];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> &'static str {
        match self {
            Trait::O => "O",
            Trait::C => "C",
            Trait::E => "E",
            Trait::A => "A",
            Trait::N => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Trait> {
        match s.trim().to_ascii_uppercase().as_str() {
            "O" | "OPENNESS" => Some(Trait::O),
            "C" | "CONSCIENTIOUSNESS" => Some(Trait::C),
            "E" | "EXTRAVERSION" => Some(Trait::E),
            "A" | "AGREEABLENESS" => Some(Trait::A),
            "N" | "NEUROTICISM" => Some(Trait::N),
            _ => None,
        }
    }
}

/// Trait score on the 0..=3 scale; 0 means insufficient information.
///
/// The raw value is kept as read so that [`validate_record`] can report
/// out-of-domain scores instead of the loader silently clamping them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitScore(pub u8);

impl TraitScore {
    pub const INSUFFICIENT: TraitScore = TraitScore(0);

    pub fn checked(value: i64) -> Result<Self> {
        if (0..=3).contains(&value) {
            Ok(TraitScore(value as u8))
        } else {
            Err(Error::VoteOutOfDomain(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn in_domain(self) -> bool {
        self.0 <= 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BigFive(pub [TraitScore; 5]);

impl BigFive {
    pub fn new(o: u8, c: u8, e: u8, a: u8, n: u8) -> Self {
        BigFive([o, c, e, a, n].map(TraitScore))
    }

    pub fn get(&self, t: Trait) -> TraitScore {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Trait, v: TraitScore) {
        self.0[t.index()] = v;
    }
}

/// Facial attribute coding: -1 absent, 0 unknown/indeterminate, 1 present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FacialAttributeValue(pub i8);

impl FacialAttributeValue {
    pub const ABSENT: Self = FacialAttributeValue(-1);
    pub const UNKNOWN: Self = FacialAttributeValue(0);
    pub const PRESENT: Self = FacialAttributeValue(1);

    pub fn in_domain(self) -> bool {
        (-1..=1).contains(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Score,
}

/// Value of an extra (non-fixed) feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureValue {
    Continuous(f64),
    /// Index into the column's [`LabelDictionary`].
    Categorical(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub modality: String,
    pub measurement: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: String,
    pub height: Option<f64>,
    pub weight: Option<f64>,
    pub birth_year: Option<i32>,
    pub birth_month: Option<u32>,
    pub birth_day: Option<u32>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub category: Option<String>,
    pub per_model_scores: BTreeMap<String, BigFive>,
    pub final_scores: Option<BigFive>,
    pub facial_attributes: BTreeMap<String, FacialAttributeValue>,
    /// Extra typed columns; `None` marks a missing cell.
    pub features: BTreeMap<String, Option<FeatureValue>>,
    pub embedding_refs: Vec<EmbeddingRef>,
}

impl PersonRecord {
    pub fn new(id: impl Into<String>) -> Self {
        PersonRecord {
            id: id.into(),
            ..Default::default()
        }
    }
}

/// Every violated invariant of `r`, in field order. Empty means valid.
pub fn validate_record(r: &PersonRecord) -> Vec<String> {
    let mut v = Vec::new();
    if r.id.trim().is_empty() {
        v.push("id is empty".to_string());
    }
    match r.height {
        Some(h) if !(h.is_finite() && h > 0.0) => v.push(format!("height {h} must be positive")),
        _ => {}
    }
    match r.weight {
        Some(w) if !(w.is_finite() && w > 0.0) => v.push(format!("weight {w} must be positive")),
        _ => {}
    }
    if let Some(m) = r.birth_month {
        if !(1..=12).contains(&m) {
            v.push(format!("birth month {m} out of range"));
        }
    }
    if let Some(d) = r.birth_day {
        if !(1..=31).contains(&d) {
            v.push(format!("birth day {d} out of range"));
        }
    }
    if let Some(lat) = r.latitude {
        if !(lat.is_finite() && lat.abs() <= 90.0) {
            v.push(format!("latitude out of range ({lat})"));
        }
    }
    if let Some(lon) = r.longitude {
        if !(lon.is_finite() && lon.abs() <= 180.0) {
            v.push(format!("longitude out of range ({lon})"));
        }
    }
    for (model, scores) in &r.per_model_scores {
        for t in Trait::ALL {
            let s = scores.get(t);
            if !s.in_domain() {
                v.push(format!(
                    "trait score out of domain ({model}:{} = {})",
                    t.letter(),
                    s.0
                ));
            }
        }
    }
    if let Some(f) = &r.final_scores {
        for t in Trait::ALL {
            if !f.get(t).in_domain() {
                v.push(format!(
                    "trait score out of domain (final:{} = {})",
                    t.letter(),
                    f.get(t).0
                ));
            }
        }
    }
    for (name, a) in &r.facial_attributes {
        if !a.in_domain() {
            v.push(format!("facial attribute out of domain ({name} = {})", a.0));
        }
    }
    for (name, f) in &r.features {
        if let Some(FeatureValue::Continuous(x)) = f {
            if !x.is_finite() {
                v.push(format!("feature {name} is not finite"));
            }
        }
    }
    v
}

/// String labels of one categorical column, indexed by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelDictionary {
    pub labels: Vec<String>,
}

impl LabelDictionary {
    pub fn index_of(&mut self, label: &str) -> u32 {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => i as u32,
            None => {
                self.labels.push(label.to_string());
                (self.labels.len() - 1) as u32
            }
        }
    }

    pub fn label(&self, index: u32) -> Option<&str> {
        self.labels.get(index as usize).map(String::as_str)
    }
}

/// Role of a column, derived from its name.
#[derive(Debug, Clone, PartialEq)]
enum Column {
    Id,
    Height,
    Weight,
    BirthYear,
    BirthMonth,
    BirthDay,
    Latitude,
    Longitude,
    Category,
    ModelScore(String, Trait),
    FinalScore(Trait),
    Face(String),
    Embedding(String, usize),
    Extra(String, ColumnKind),
}

fn classify(name: &str, kind: ColumnKind) -> Result<Column> {
    let bad = |why: &str| Error::InvalidSchema(format!("column `{name}`: {why}"));
    let col = match name {
        "id" => Column::Id,
        "height" => Column::Height,
        "weight" => Column::Weight,
        "birth_year" => Column::BirthYear,
        "birth_month" => Column::BirthMonth,
        "birth_day" => Column::BirthDay,
        "latitude" => Column::Latitude,
        "longitude" => Column::Longitude,
        "category" => Column::Category,
        _ => {
            let parts: Vec<&str> = name.split(':').collect();
            match parts.as_slice() {
                ["score", model, t] => Column::ModelScore(
                    model.to_string(),
                    Trait::parse(t).ok_or_else(|| bad("unknown trait"))?,
                ),
                ["final", t] => Column::FinalScore(Trait::parse(t).ok_or_else(|| bad("unknown trait"))?),
                ["face", attr] => Column::Face(attr.to_string()),
                ["emb", modality, k] => Column::Embedding(
                    modality.to_string(),
                    k.parse().map_err(|_| bad("measurement index is not an integer"))?,
                ),
                _ => {
                    if kind == ColumnKind::Score {
                        return Err(bad("score kind is reserved for score:/final: columns"));
                    }
                    Column::Extra(name.to_string(), kind)
                }
            }
        }
    };
    let expected = match &col {
        Column::Height | Column::Weight | Column::Latitude | Column::Longitude => {
            Some(ColumnKind::Continuous)
        }
        Column::ModelScore(..) | Column::FinalScore(_) => Some(ColumnKind::Score),
        Column::Face(_) | Column::Category => Some(ColumnKind::Categorical),
        _ => None,
    };
    if let Some(e) = expected {
        if e != kind {
            return Err(bad(&format!("expected kind {e:?}, schema says {kind:?}")));
        }
    }
    Ok(col)
}

/// Ordered `(name, kind)` list describing a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl Schema {
    pub fn new(columns: Vec<(String, ColumnKind)>) -> Self {
        Schema { columns }
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    /// Infer kinds from names and, for extra columns, from whether every
    /// non-empty cell parses as a number.
    pub fn infer(path: &Path) -> Result<Schema> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut numeric = vec![true; header.len()];
        for row in reader.records() {
            let row = row?;
            for (i, cell) in row.iter().enumerate().take(header.len()) {
                let cell = cell.trim();
                if !cell.is_empty() && cell.parse::<f64>().is_err() {
                    numeric[i] = false;
                }
            }
        }
        let columns = header
            .into_iter()
            .zip(numeric)
            .map(|(name, is_num)| {
                let kind = match name.as_str() {
                    "height" | "weight" | "latitude" | "longitude" | "birth_year" | "birth_month"
                    | "birth_day" => ColumnKind::Continuous,
                    "id" | "category" => ColumnKind::Categorical,
                    n if n.starts_with("score:") || n.starts_with("final:") => ColumnKind::Score,
                    n if n.starts_with("face:") => ColumnKind::Categorical,
                    n if n.starts_with("emb:") => ColumnKind::Continuous,
                    _ if is_num => ColumnKind::Continuous,
                    _ => ColumnKind::Categorical,
                };
                (name, kind)
            })
            .collect();
        Ok(Schema { columns })
    }
}

/// A loaded table: records plus the label dictionaries of categorical
/// extra columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub records: Vec<PersonRecord>,
    pub labels: BTreeMap<String, LabelDictionary>,
    pub kinds: BTreeMap<String, ColumnKind>,
}

/// Outcome of a lenient load: every data row ends up in exactly one of
/// `table.records` or `rejected`.
#[derive(Debug, Clone)]
pub struct TableLoad {
    pub table: Table,
    pub rejected: Vec<RowError>,
}

/// Strict loader: any rejected row fails the whole load, with every row error
/// attached.
pub fn load_table(path: &Path, schema: &Schema) -> Result<Table> {
    let load = read_table(path, schema)?;
    if load.rejected.is_empty() {
        Ok(load.table)
    } else {
        Err(Error::InvalidRows(load.rejected))
    }
}

/// Lenient loader. Header problems are hard errors; row problems are
/// collected in [`TableLoad::rejected`].
pub fn read_table(path: &Path, schema: &Schema) -> Result<TableLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    for h in &header {
        if schema.kind_of(h).is_none() {
            return Err(Error::UnknownColumn(h.clone()));
        }
    }
    for (name, _) in &schema.columns {
        if !header.contains(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(Error::InvalidSchema(format!("duplicate column `{h}`")));
        }
    }
    let columns: Vec<Column> = header
        .iter()
        .map(|h| classify(h, schema.kind_of(h).expect("checked above")))
        .collect::<Result<_>>()?;
    if !columns.contains(&Column::Id) {
        return Err(Error::InvalidSchema("an `id` column is required".into()));
    }
    check_complete_score_blocks(&columns)?;

    let mut table = Table::default();
    for (name, kind) in &schema.columns {
        table.kinds.insert(name.clone(), *kind);
    }
    let mut rejected = Vec::new();
    let mut ids = HashSet::new();

    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if row.len() != header.len() {
            rejected.push(RowError {
                line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
            continue;
        }
        // Parse into a scratch dictionary set so that a rejected row leaves
        // no labels behind.
        let mut labels = table.labels.clone();
        match parse_row(&columns, &row, &mut labels) {
            Ok(rec) => {
                let violations = validate_record(&rec);
                if !violations.is_empty() {
                    rejected.push(RowError {
                        line,
                        message: format!("record `{}`: {}", rec.id, violations.join("; ")),
                    });
                } else if !ids.insert(rec.id.clone()) {
                    rejected.push(RowError {
                        line,
                        message: format!("duplicate id `{}`", rec.id),
                    });
                } else {
                    table.labels = labels;
                    table.records.push(rec);
                }
            }
            Err(message) => rejected.push(RowError { line, message }),
        }
    }
    Ok(TableLoad { table, rejected })
}

fn check_complete_score_blocks(columns: &[Column]) -> Result<()> {
    let mut per_model: BTreeMap<&str, Vec<Trait>> = BTreeMap::new();
    let mut finals = Vec::new();
    for c in columns {
        match c {
            Column::ModelScore(m, t) => per_model.entry(m.as_str()).or_default().push(*t),
            Column::FinalScore(t) => finals.push(*t),
            _ => {}
        }
    }
    for (m, ts) in per_model {
        if ts.len() != 5 || Trait::ALL.iter().any(|t| !ts.contains(t)) {
            return Err(Error::InvalidSchema(format!(
                "model `{m}` must have exactly one column per trait"
            )));
        }
    }
    if !finals.is_empty() && (finals.len() != 5 || Trait::ALL.iter().any(|t| !finals.contains(t))) {
        return Err(Error::InvalidSchema(
            "final scores need exactly one column per trait".into(),
        ));
    }
    Ok(())
}

fn parse_row(
    columns: &[Column],
    row: &csv::StringRecord,
    labels: &mut BTreeMap<String, LabelDictionary>,
) -> std::result::Result<PersonRecord, String> {
    let mut rec = PersonRecord::default();
    let mut model_cells: BTreeMap<String, [Option<i64>; 5]> = BTreeMap::new();
    let mut final_cells: Option<[Option<i64>; 5]> = None;

    for (col, cell) in columns.iter().zip(row.iter()) {
        let cell = cell.trim();
        let empty = cell.is_empty();
        let num = |what: &str| -> std::result::Result<Option<f64>, String> {
            if empty {
                return Ok(None);
            }
            cell.parse::<f64>()
                .map(Some)
                .map_err(|_| format!("{what}: `{cell}` is not a number"))
        };
        let int = |what: &str| -> std::result::Result<Option<i64>, String> {
            if empty {
                return Ok(None);
            }
            cell.parse::<i64>()
                .map(Some)
                .map_err(|_| format!("{what}: `{cell}` is not an integer"))
        };
        match col {
            Column::Id => rec.id = cell.to_string(),
            Column::Height => rec.height = num("height")?,
            Column::Weight => rec.weight = num("weight")?,
            Column::BirthYear => rec.birth_year = int("birth_year")?.map(|v| v as i32),
            Column::BirthMonth => {
                rec.birth_month = int("birth_month")?
                    .map(|v| u32::try_from(v).map_err(|_| format!("birth month {v} out of range")))
                    .transpose()?
            }
            Column::BirthDay => {
                rec.birth_day = int("birth_day")?
                    .map(|v| u32::try_from(v).map_err(|_| format!("birth day {v} out of range")))
                    .transpose()?
            }
            Column::Latitude => rec.latitude = num("latitude")?,
            Column::Longitude => rec.longitude = num("longitude")?,
            Column::Category => rec.category = (!empty).then(|| cell.to_string()),
            Column::ModelScore(m, t) => {
                model_cells.entry(m.clone()).or_insert([None; 5])[t.index()] = int("score")?;
            }
            Column::FinalScore(t) => {
                final_cells.get_or_insert([None; 5])[t.index()] = int("final score")?;
            }
            Column::Face(attr) => {
                if let Some(v) = int("facial attribute")? {
                    let v = i8::try_from(v)
                        .map_err(|_| format!("facial attribute {attr} = {v} out of domain"))?;
                    rec.facial_attributes
                        .insert(attr.clone(), FacialAttributeValue(v));
                }
            }
            Column::Embedding(modality, k) => {
                if let Some(v) = int("embedding row")? {
                    let row = usize::try_from(v).map_err(|_| format!("negative embedding row {v}"))?;
                    rec.embedding_refs.push(EmbeddingRef {
                        modality: modality.clone(),
                        measurement: *k,
                        row,
                    });
                }
            }
            Column::Extra(name, kind) => {
                let value = match kind {
                    ColumnKind::Continuous => num(name)?.map(FeatureValue::Continuous),
                    ColumnKind::Categorical => (!empty).then(|| {
                        FeatureValue::Categorical(labels.entry(name.clone()).or_default().index_of(cell))
                    }),
                    ColumnKind::Score => unreachable!("rejected by classify"),
                };
                rec.features.insert(name.clone(), value);
            }
        }
    }

    let to_big_five = |cells: [Option<i64>; 5], what: &str| -> std::result::Result<Option<BigFive>, String> {
        if cells.iter().all(Option::is_none) {
            return Ok(None);
        }
        let mut out = [TraitScore(0); 5];
        for (i, c) in cells.iter().enumerate() {
            let v = c.ok_or_else(|| format!("{what}: trait {} missing", Trait::ALL[i].letter()))?;
            out[i] = TraitScore(u8::try_from(v).map_err(|_| format!("trait score out of domain ({what} = {v})"))?);
        }
        Ok(Some(BigFive(out)))
    };
    for (m, cells) in model_cells {
        if let Some(b) = to_big_five(cells, &m)? {
            rec.per_model_scores.insert(m, b);
        }
    }
    if let Some(cells) = final_cells {
        rec.final_scores = to_big_five(cells, "final")?;
    }
    Ok(rec)
}

/// Write records back to CSV using the same column conventions. Extra
/// categorical features are written as their labels.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut models: Vec<&String> = table
        .records
        .iter()
        .flat_map(|r| r.per_model_scores.keys())
        .collect();
    models.sort();
    models.dedup();
    let mut faces: Vec<&String> = table
        .records
        .iter()
        .flat_map(|r| r.facial_attributes.keys())
        .collect();
    faces.sort();
    faces.dedup();
    let mut extras: Vec<&String> = table.records.iter().flat_map(|r| r.features.keys()).collect();
    extras.sort();
    extras.dedup();
    let mut embs: Vec<(&str, usize)> = table
        .records
        .iter()
        .flat_map(|r| r.embedding_refs.iter().map(|e| (e.modality.as_str(), e.measurement)))
        .collect();
    embs.sort();
    embs.dedup();
    let any_final = table.records.iter().any(|r| r.final_scores.is_some());

    let mut header: Vec<String> = [
        "id", "height", "weight", "birth_year", "birth_month", "birth_day", "latitude", "longitude",
        "category",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in &models {
        for t in Trait::ALL {
            header.push(format!("score:{m}:{}", t.letter()));
        }
    }
    if any_final {
        for t in Trait::ALL {
            header.push(format!("final:{}", t.letter()));
        }
    }
    header.extend(faces.iter().map(|f| format!("face:{f}")));
    header.extend(embs.iter().map(|(m, k)| format!("emb:{m}:{k}")));
    header.extend(extras.iter().map(|e| e.to_string()));

    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&header)?;
        for r in &table.records {
            let mut row = vec![
                r.id.clone(),
                opt(r.height.map(|v| v.to_string())),
                opt(r.weight.map(|v| v.to_string())),
                opt(r.birth_year.map(|v| v.to_string())),
                opt(r.birth_month.map(|v| v.to_string())),
                opt(r.birth_day.map(|v| v.to_string())),
                opt(r.latitude.map(|v| v.to_string())),
                opt(r.longitude.map(|v| v.to_string())),
                opt(r.category.clone()),
            ];
            for m in &models {
                for t in Trait::ALL {
                    row.push(opt(r.per_model_scores.get(*m).map(|b| b.get(t).0.to_string())));
                }
            }
            if any_final {
                for t in Trait::ALL {
                    row.push(opt(r.final_scores.map(|b| b.get(t).0.to_string())));
                }
            }
            for f in &faces {
                row.push(opt(r.facial_attributes.get(*f).map(|v| v.0.to_string())));
            }
            for (m, k) in &embs {
                row.push(opt(r
                    .embedding_refs
                    .iter()
                    .find(|e| e.modality == *m && e.measurement == *k)
                    .map(|e| e.row.to_string())));
            }
            for e in &extras {
                let cell = match r.features.get(*e).copied().flatten() {
                    Some(FeatureValue::Continuous(v)) => v.to_string(),
                    Some(FeatureValue::Categorical(i)) => table
                        .labels
                        .get(*e)
                        .and_then(|d| d.label(i))
                        .map(str::to_string)
                        .unwrap_or_else(|| i.to_string()),
                    None => String::new(),
                };
                row.push(cell);
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    crate::report::write_atomic(path, &out)
}

/// Row-major 32-bit matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(Error::SizeMismatch {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn from_f64(rows: usize, dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, dim, data.iter().map(|&v| v as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.dim + j]
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_iterator(self.rows, self.dim, self.data.iter().map(|&v| v as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub rows: usize,
    pub dim: usize,
    pub dtype: String,
    pub endianness: String,
}

impl EmbeddingSidecar {
    pub fn for_shape(rows: usize, dim: usize) -> Self {
        EmbeddingSidecar {
            rows,
            dim,
            dtype: "f32".into(),
            endianness: "little".into(),
        }
    }
}

pub fn load_embeddings(data_path: &Path, sidecar_path: &Path) -> Result<EmbeddingMatrix> {
    let sidecar_text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: EmbeddingSidecar = serde_json::from_str(&sidecar_text)?;
    if sidecar.dtype != "f32" {
        return Err(Error::UnsupportedFormat {
            field: "dtype",
            value: sidecar.dtype,
        });
    }
    if sidecar.endianness != "little" {
        return Err(Error::UnsupportedFormat {
            field: "endianness",
            value: sidecar.endianness,
        });
    }
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    decode_embeddings(&bytes, sidecar.rows, sidecar.dim)
}

pub(crate) fn decode_embeddings(bytes: &[u8], rows: usize, dim: usize) -> Result<EmbeddingMatrix> {
    let expected = rows * dim;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(rows, dim, data)
}

pub(crate) fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    m.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_embeddings(m: &EmbeddingMatrix, data_path: &Path, sidecar_path: &Path) -> Result<()> {
    crate::report::write_atomic(data_path, &encode_embeddings(m))?;
    let mut sidecar = serde_json::to_string_pretty(&EmbeddingSidecar::for_shape(m.rows, m.dim))?;
    sidecar.push('\n');
    crate::report::write_atomic(sidecar_path, sidecar.as_bytes())
}
