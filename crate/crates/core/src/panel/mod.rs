//! Person-by-year panel data, the national wage index, transfer size
//! categories, cohort construction and descriptive tables.

mod cohort;
mod describe;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cohort::{
    assign_cohorts, categorize_transfer, CohortEntry, CohortTable, DeathSet, ExclusionReason,
    FilterSpec,
};
pub use describe::{
    death_proximity_table, sample_means, GroupMeans, Grouping, MeansAt, MeansTable,
    ProximityRow, ProximityTable, PROXIMITY_COLUMNS,
};
pub use io::{load_deaths, load_panel, load_wage_index, write_panel, write_wage_index, PanelSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonId(pub u64);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Transfer size bins relative to the national mean wage `W` of the
/// transfer year: `(0, W/2]`, `(W/2, W]`, `(W, 2W]`, `(2W, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeCategory {
    I1,
    I2,
    I3,
    I4,
}

impl SizeCategory {
    pub const ALL: [SizeCategory; 4] = [
        SizeCategory::I1,
        SizeCategory::I2,
        SizeCategory::I3,
        SizeCategory::I4,
    ];

    /// Category of a positive amount relative to the wage level; upper
    /// boundaries are inclusive.
    pub fn classify(amount: f64, wage: f64) -> Option<SizeCategory> {
        if !(amount > 0.0) || !(wage > 0.0) {
            return None;
        }
        let c = if amount <= wage / 2.0 {
            SizeCategory::I1
        } else if amount <= wage {
            SizeCategory::I2
        } else if amount <= 2.0 * wage {
            SizeCategory::I3
        } else {
            SizeCategory::I4
        };
        Some(c)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// A representative multiple of the wage level inside the bin.
    pub fn typical_ratio(self) -> f64 {
        match self {
            SizeCategory::I1 => 0.3,
            SizeCategory::I2 => 0.75,
            SizeCategory::I3 => 1.5,
            SizeCategory::I4 => 3.0,
        }
    }
}

impl fmt::Display for SizeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SizeCategory::I1 => "I1",
            SizeCategory::I2 => "I2",
            SizeCategory::I3 => "I3",
            SizeCategory::I4 => "I4",
        };
        f.write_str(s)
    }
}

impl FromStr for SizeCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I1" => Ok(SizeCategory::I1),
            "I2" => Ok(SizeCategory::I2),
            "I3" => Ok(SizeCategory::I3),
            "I4" => Ok(SizeCategory::I4),
            other => Err(Error::Config(format!("unknown size category `{other}`"))),
        }
    }
}

/// National mean annual wage by year.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WageIndex {
    levels: BTreeMap<i32, f64>,
}

impl WageIndex {
    pub fn new(levels: BTreeMap<i32, f64>) -> Result<Self> {
        if let Some((year, w)) = levels.iter().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!(
                "wage index level for {year} must be positive, got {w}"
            )));
        }
        Ok(WageIndex { levels })
    }

    /// Same level in every year of the range.
    pub fn constant(years: RangeInclusive<i32>, level: f64) -> Result<Self> {
        Self::new(years.map(|y| (y, level)).collect())
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.levels.get(&year).copied()
    }

    pub fn level(&self, year: i32) -> Result<f64> {
        self.get(year).ok_or(Error::Domain { year })
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.levels.iter().map(|(y, w)| (*y, *w))
    }

    pub fn check_covers(&self, years: RangeInclusive<i32>) -> Result<()> {
        for y in years {
            self.level(y)?;
        }
        Ok(())
    }
}

/// Columns that can serve as outcomes, covariates or table entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variable {
    Wage,
    OccupationalIncome,
    BusinessIncome,
    SelfEmployed,
    Age,
    Sex,
    BirthYear,
    EducationLevel,
    TransferAmount,
}

impl Variable {
    pub const ALL: [Variable; 9] = [
        Variable::Wage,
        Variable::OccupationalIncome,
        Variable::BusinessIncome,
        Variable::SelfEmployed,
        Variable::Age,
        Variable::Sex,
        Variable::BirthYear,
        Variable::EducationLevel,
        Variable::TransferAmount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Wage => "wage",
            Variable::OccupationalIncome => "occupational_income",
            Variable::BusinessIncome => "business_income",
            Variable::SelfEmployed => "self_employed",
            Variable::Age => "age",
            Variable::Sex => "sex",
            Variable::BirthYear => "birth_year",
            Variable::EducationLevel => "education_level",
            Variable::TransferAmount => "transfer_amount",
        }
    }

    /// Whether the variable takes integer levels and can be expanded into
    /// indicator columns.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            Variable::Age
                | Variable::Sex
                | Variable::BirthYear
                | Variable::EducationLevel
                | Variable::SelfEmployed
        )
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variable `{s}`")))
    }
}

/// One input row before balancing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub person: PersonId,
    pub year: i32,
    pub wage: f64,
    pub business_income: f64,
    pub birth_year: i32,
    pub sex: u8,
    pub education_level: u8,
    pub transfer_amount: f64,
    /// Reported age; checked against `year - birth_year` when present.
    pub age: Option<i32>,
    pub parent_death_years: Vec<i32>,
    pub relative_death_years: Vec<i32>,
}

/// Strongly balanced person-by-year panel. Immutable after construction.
///
/// Person-year values are stored row-major: person `p`, year index `y`
/// lives at `p * n_years + y`. Persons are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    persons: Vec<PersonId>,
    first_year: i32,
    last_year: i32,
    birth_year: Vec<i32>,
    sex: Vec<u8>,
    parent_death_years: Vec<Vec<i32>>,
    relative_death_years: Vec<Vec<i32>>,
    wage: Vec<f64>,
    business_income: Vec<f64>,
    occupational_income: Vec<f64>,
    education_level: Vec<u8>,
    transfer_amount: Vec<f64>,
}

impl PanelDataset {
    /// Builds and validates a panel from unordered rows.
    pub fn from_observations(mut rows: Vec<RawObservation>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("panel has no observations".into()));
        }
        let first_year = rows.iter().map(|r| r.year).min().unwrap();
        let last_year = rows.iter().map(|r| r.year).max().unwrap();
        rows.sort_by_key(|r| (r.person, r.year));
        let n_years = (last_year - first_year + 1) as usize;

        let mut persons = Vec::new();
        let mut birth_year = Vec::new();
        let mut sex = Vec::new();
        let mut parent_death_years = Vec::new();
        let mut relative_death_years = Vec::new();
        let cap = rows.len();
        let mut wage = Vec::with_capacity(cap);
        let mut business_income = Vec::with_capacity(cap);
        let mut occupational_income = Vec::with_capacity(cap);
        let mut education_level = Vec::with_capacity(cap);
        let mut transfer_amount = Vec::with_capacity(cap);

        for chunk in rows.chunk_by(|a, b| a.person == b.person) {
            let person = chunk[0].person;
            for (k, year) in (first_year..=last_year).enumerate() {
                match chunk.get(k) {
                    Some(r) if r.year == year => {}
                    Some(r) if r.year < year => {
                        return Err(Error::Validation(format!(
                            "unbalanced panel: person {person} has duplicate year {}",
                            r.year
                        )))
                    }
                    _ => {
                        return Err(Error::Validation(format!(
                            "unbalanced panel: person {person} is missing year {year}"
                        )))
                    }
                }
            }
            if chunk.len() > n_years {
                return Err(Error::Validation(format!(
                    "unbalanced panel: person {person} has duplicate year {}",
                    chunk[n_years].year
                )));
            }
            let head = &chunk[0];
            let mut parents = Vec::new();
            let mut relatives = Vec::new();
            for r in chunk {
                if r.birth_year != head.birth_year {
                    return Err(Error::Validation(format!(
                        "person {person} has inconsistent birth_year in {}",
                        r.year
                    )));
                }
                if r.sex != head.sex {
                    return Err(Error::Validation(format!(
                        "person {person} has inconsistent sex in {}",
                        r.year
                    )));
                }
                if let Some(age) = r.age {
                    if age != r.year - r.birth_year {
                        return Err(Error::Validation(format!(
                            "person {person} in {}: age {age} disagrees with birth year {}",
                            r.year, r.birth_year
                        )));
                    }
                }
                parents.extend_from_slice(&r.parent_death_years);
                relatives.extend_from_slice(&r.relative_death_years);
                wage.push(r.wage);
                business_income.push(r.business_income);
                occupational_income.push(r.wage + r.business_income);
                education_level.push(r.education_level);
                transfer_amount.push(r.transfer_amount);
            }
            parents.sort_unstable();
            parents.dedup();
            relatives.sort_unstable();
            relatives.dedup();
            persons.push(person);
            birth_year.push(head.birth_year);
            sex.push(head.sex);
            parent_death_years.push(parents);
            relative_death_years.push(relatives);
        }

        Ok(PanelDataset {
            persons,
            first_year,
            last_year,
            birth_year,
            sex,
            parent_death_years,
            relative_death_years,
            wage,
            business_income,
            occupational_income,
            education_level,
            transfer_amount,
        })
    }

    /// Replaces (or adds to) the death-year sets from a separate file.
    pub fn with_deaths(mut self, deaths: &BTreeMap<PersonId, Vec<i32>>, set: DeathSet) -> Result<Self> {
        for (id, years) in deaths {
            let p = self.person_index(*id).ok_or_else(|| {
                Error::Validation(format!("death record for unknown person {id}"))
            })?;
            let target = match set {
                DeathSet::Parental => &mut self.parent_death_years[p],
                DeathSet::Relative => &mut self.relative_death_years[p],
            };
            target.extend_from_slice(years);
            target.sort_unstable();
            target.dedup();
        }
        Ok(self)
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }

    pub fn n_observations(&self) -> usize {
        self.n_persons() * self.n_years()
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.last_year
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.first_year..=self.last_year
    }

    pub fn persons(&self) -> &[PersonId] {
        &self.persons
    }

    pub fn person_index(&self, id: PersonId) -> Option<usize> {
        self.persons.binary_search(&id).ok()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        (self.first_year..=self.last_year)
            .contains(&year)
            .then(|| (year - self.first_year) as usize)
    }

    fn at(&self, person: usize, year_idx: usize) -> usize {
        person * self.n_years() + year_idx
    }

    pub fn birth_year(&self, person: usize) -> i32 {
        self.birth_year[person]
    }

    pub fn sex(&self, person: usize) -> u8 {
        self.sex[person]
    }

    pub fn age(&self, person: usize, year: i32) -> i32 {
        year - self.birth_year[person]
    }

    pub fn wage(&self, person: usize, year_idx: usize) -> f64 {
        self.wage[self.at(person, year_idx)]
    }

    pub fn business_income(&self, person: usize, year_idx: usize) -> f64 {
        self.business_income[self.at(person, year_idx)]
    }

    pub fn transfer_amount(&self, person: usize, year_idx: usize) -> f64 {
        self.transfer_amount[self.at(person, year_idx)]
    }

    pub fn education_level(&self, person: usize, year_idx: usize) -> u8 {
        self.education_level[self.at(person, year_idx)]
    }

    pub fn self_employed(&self, person: usize, year_idx: usize) -> bool {
        self.business_income(person, year_idx) != 0.0
    }

    pub fn ever_self_employed(&self, person: usize) -> bool {
        (0..self.n_years()).any(|y| self.self_employed(person, y))
    }

    pub fn death_years(&self, person: usize, set: DeathSet) -> &[i32] {
        match set {
            DeathSet::Parental => &self.parent_death_years[person],
            DeathSet::Relative => &self.relative_death_years[person],
        }
    }

    /// Years (ascending) with a positive transfer.
    pub fn transfer_years(&self, person: usize) -> Vec<i32> {
        (0..self.n_years())
            .filter(|&y| self.transfer_amount(person, y) > 0.0)
            .map(|y| self.first_year + y as i32)
            .collect()
    }

    pub fn value(&self, var: Variable, person: usize, year_idx: usize) -> f64 {
        let i = self.at(person, year_idx);
        match var {
            Variable::Wage => self.wage[i],
            Variable::OccupationalIncome => self.occupational_income[i],
            Variable::BusinessIncome => self.business_income[i],
            Variable::SelfEmployed => f64::from(u8::from(self.business_income[i] != 0.0)),
            Variable::Age => f64::from(self.first_year + year_idx as i32 - self.birth_year[person]),
            Variable::Sex => f64::from(self.sex[person]),
            Variable::BirthYear => f64::from(self.birth_year[person]),
            Variable::EducationLevel => f64::from(self.education_level[i]),
            Variable::TransferAmount => self.transfer_amount[i],
        }
    }

    /// Integer level of a discrete variable, used for indicator expansion.
    pub fn level(&self, var: Variable, person: usize, year_idx: usize) -> i32 {
        self.value(var, person, year_idx) as i32
    }

    /// Back to row form, ordered by (person, year).
    pub fn to_observations(&self) -> Vec<RawObservation> {
        let mut out = Vec::with_capacity(self.n_observations());
        for p in 0..self.n_persons() {
            for y in 0..self.n_years() {
                let i = self.at(p, y);
                out.push(RawObservation {
                    person: self.persons[p],
                    year: self.first_year + y as i32,
                    wage: self.wage[i],
                    business_income: self.business_income[i],
                    birth_year: self.birth_year[p],
                    sex: self.sex[p],
                    education_level: self.education_level[i],
                    transfer_amount: self.transfer_amount[i],
                    age: None,
                    parent_death_years: self.parent_death_years[p].clone(),
                    relative_death_years: self.relative_death_years[p].clone(),
                });
            }
        }
        out
    }
}
