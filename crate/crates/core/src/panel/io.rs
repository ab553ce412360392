use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::{PanelDataset, PersonId, RawObservation, WageIndex};

/// Column names of a panel file. Required columns: person, year, wage,
/// business income, birth year, transfer amount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSchema {
    pub delimiter: u8,
    pub person: String,
    pub year: String,
    pub wage: String,
    pub business_income: String,
    pub birth_year: String,
    pub transfer_amount: String,
    pub sex: String,
    pub education_level: String,
    pub age: String,
    pub parent_death_years: String,
    pub relative_death_years: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            delimiter: b',',
            person: "person".into(),
            year: "year".into(),
            wage: "wage".into(),
            business_income: "business_income".into(),
            birth_year: "birth_year".into(),
            transfer_amount: "transfer_amount".into(),
            sex: "sex".into(),
            education_level: "education_level".into(),
            age: "age".into(),
            parent_death_years: "parent_death_years".into(),
            relative_death_years: "relative_death_years".into(),
        }
    }
}

struct Cursor<'a> {
    path: String,
    row: usize,
    record: &'a csv::StringRecord,
}

impl Cursor<'_> {
    fn raw(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("").trim()
    }

    fn parse<T: std::str::FromStr>(&self, idx: usize, column: &str) -> Result<T> {
        let v = self.raw(idx);
        v.parse().map_err(|_| Error::Parse {
            path: self.path.clone(),
            row: self.row,
            column: column.to_string(),
            value: v.to_string(),
        })
    }

    fn parse_list(&self, idx: usize, column: &str) -> Result<Vec<i32>> {
        let v = self.raw(idx);
        v.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    path: self.path.clone(),
                    row: self.row,
                    column: column.to_string(),
                    value: v.to_string(),
                })
            })
            .collect()
    }
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn find(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn require(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    find(headers, name).ok_or_else(|| Error::Schema {
        column: name.to_string(),
        path: path.display().to_string(),
    })
}

/// Reads a delimiter-separated panel file (one row per person-year).
///
/// Rows are numbered from 1 for the first data row; the header is row 0.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    let mut rdr = reader(path, schema.delimiter)?;
    let headers = rdr.headers()?.clone();
    let person = require(&headers, &schema.person, path)?;
    let year = require(&headers, &schema.year, path)?;
    let wage = require(&headers, &schema.wage, path)?;
    let business = require(&headers, &schema.business_income, path)?;
    let birth = require(&headers, &schema.birth_year, path)?;
    let transfer = require(&headers, &schema.transfer_amount, path)?;
    let sex = find(&headers, &schema.sex);
    let edu = find(&headers, &schema.education_level);
    let age = find(&headers, &schema.age);
    let parents = find(&headers, &schema.parent_death_years);
    let relatives = find(&headers, &schema.relative_death_years);

    let path_str = path.display().to_string();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let c = Cursor {
            path: path_str.clone(),
            row: i + 1,
            record: &rec,
        };
        rows.push(RawObservation {
            person: PersonId(c.parse(person, &schema.person)?),
            year: c.parse(year, &schema.year)?,
            wage: c.parse(wage, &schema.wage)?,
            business_income: c.parse(business, &schema.business_income)?,
            birth_year: c.parse(birth, &schema.birth_year)?,
            transfer_amount: c.parse(transfer, &schema.transfer_amount)?,
            sex: sex.map(|k| c.parse(k, &schema.sex)).transpose()?.unwrap_or(0),
            education_level: edu
                .map(|k| c.parse(k, &schema.education_level))
                .transpose()?
                .unwrap_or(0),
            age: age.map(|k| c.parse(k, &schema.age)).transpose()?,
            parent_death_years: parents
                .map(|k| c.parse_list(k, &schema.parent_death_years))
                .transpose()?
                .unwrap_or_default(),
            relative_death_years: relatives
                .map(|k| c.parse_list(k, &schema.relative_death_years))
                .transpose()?
                .unwrap_or_default(),
        });
    }
    PanelDataset::from_observations(rows)
}

/// Two-column `(person, death_year)` file; several rows per person allowed.
pub fn load_deaths(path: impl AsRef<Path>, delimiter: u8) -> Result<BTreeMap<PersonId, Vec<i32>>> {
    let path = path.as_ref();
    let mut rdr = reader(path, delimiter)?;
    let headers = rdr.headers()?.clone();
    let person = require(&headers, "person", path)?;
    let year = require(&headers, "death_year", path)?;
    let path_str = path.display().to_string();
    let mut out: BTreeMap<PersonId, Vec<i32>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let c = Cursor {
            path: path_str.clone(),
            row: i + 1,
            record: &rec,
        };
        let id = PersonId(c.parse(person, "person")?);
        out.entry(id).or_default().push(c.parse(year, "death_year")?);
    }
    Ok(out)
}

/// Two-column `(year, wage)` file.
pub fn load_wage_index(path: impl AsRef<Path>, delimiter: u8) -> Result<WageIndex> {
    let path = path.as_ref();
    let mut rdr = reader(path, delimiter)?;
    let headers = rdr.headers()?.clone();
    let year = require(&headers, "year", path)?;
    let level = require(&headers, "wage", path)?;
    let path_str = path.display().to_string();
    let mut levels = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let c = Cursor {
            path: path_str.clone(),
            row: i + 1,
            record: &rec,
        };
        let y: i32 = c.parse(year, "year")?;
        if levels.insert(y, c.parse(level, "wage")?).is_some() {
            return Err(Error::Validation(format!("wage index lists year {y} twice")));
        }
    }
    WageIndex::new(levels)
}

fn join_years(years: &[i32]) -> String {
    years.iter().map(i32::to_string).collect::<Vec<_>>().join(";")
}

pub fn write_panel(panel: &PanelDataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    w.write_record([
        "person",
        "year",
        "wage",
        "business_income",
        "birth_year",
        "sex",
        "education_level",
        "transfer_amount",
        "parent_death_years",
        "relative_death_years",
    ])?;
    for r in panel.to_observations() {
        w.write_record([
            r.person.to_string(),
            r.year.to_string(),
            r.wage.to_string(),
            r.business_income.to_string(),
            r.birth_year.to_string(),
            r.sex.to_string(),
            r.education_level.to_string(),
            r.transfer_amount.to_string(),
            join_years(&r.parent_death_years),
            join_years(&r.relative_death_years),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_wage_index(index: &WageIndex, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    w.write_record(["year", "wage"])?;
    for (y, lvl) in index.iter() {
        w.write_record([y.to_string(), lvl.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
