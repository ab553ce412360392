use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{PanelDataset, PersonId, SizeCategory, WageIndex};

/// Which death-year set defines a qualifying event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DeathSet {
    #[default]
    Parental,
    Relative,
}

impl FromStr for DeathSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "parental" => Ok(DeathSet::Parental),
            "relative" => Ok(DeathSet::Relative),
            other => Err(Error::Config(format!("unknown death set `{other}`"))),
        }
    }
}

/// Sample restrictions applied when building the cohort table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub birth_year_range: (i32, i32),
    /// Maximum distance in years between transfer and death.
    pub death_window: u32,
    pub one_off: bool,
    /// Admit extra gifts each below half the wage level of their own year,
    /// with wage-relative ratios summing to at most one half.
    pub small_gift_allowance: bool,
    pub death_set: DeathSet,
    pub exclude_ever_self_employed: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            birth_year_range: (1951, 1975),
            death_window: 3,
            one_off: true,
            small_gift_allowance: false,
            death_set: DeathSet::Parental,
            exclude_ever_self_employed: false,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.birth_year_range.0 > self.birth_year_range.1 {
            return Err(Error::Config(format!(
                "empty birth year range [{}, {}]",
                self.birth_year_range.0, self.birth_year_range.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExclusionReason {
    BirthYearOutOfRange,
    EverSelfEmployed,
    NoTransfer,
    NoQualifyingDeath,
    MultipleTransfers,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::BirthYearOutOfRange,
        ExclusionReason::EverSelfEmployed,
        ExclusionReason::NoTransfer,
        ExclusionReason::NoQualifyingDeath,
        ExclusionReason::MultipleTransfers,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExclusionReason::BirthYearOutOfRange => "birth_year_out_of_range",
            ExclusionReason::EverSelfEmployed => "ever_self_employed",
            ExclusionReason::NoTransfer => "no_transfer",
            ExclusionReason::NoQualifyingDeath => "no_qualifying_death",
            ExclusionReason::MultipleTransfers => "multiple_transfers",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExclusionReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExclusionReason::ALL
            .into_iter()
            .find(|r| r.tag() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown exclusion reason `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub person: PersonId,
    pub event_year: Option<i32>,
    pub category: Option<SizeCategory>,
    /// Death year matched to the event transfer.
    pub death_year: Option<i32>,
    pub exclusion: Option<ExclusionReason>,
}

impl CohortEntry {
    pub fn included(&self) -> bool {
        self.exclusion.is_none()
    }
}

/// One entry per panel person, in panel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortTable {
    entries: Vec<CohortEntry>,
}

impl CohortTable {
    /// Wraps entries that must line up one-to-one with the panel persons.
    pub fn new(panel: &PanelDataset, entries: Vec<CohortEntry>) -> Result<Self> {
        if entries.len() != panel.n_persons() {
            return Err(Error::Validation(format!(
                "cohort table has {} entries for {} panel persons",
                entries.len(),
                panel.n_persons()
            )));
        }
        for (e, id) in entries.iter().zip(panel.persons()) {
            if e.person != *id {
                return Err(Error::Validation(format!(
                    "cohort table entry for person {} does not match panel person {id}",
                    e.person
                )));
            }
            if e.included() {
                match e.event_year {
                    Some(g) if panel.year_index(g).is_some() => {}
                    _ => {
                        return Err(Error::Validation(format!(
                            "included person {} needs an event year inside the panel",
                            e.person
                        )))
                    }
                }
            }
        }
        Ok(CohortTable { entries })
    }

    pub fn entries(&self) -> &[CohortEntry] {
        &self.entries
    }

    pub fn entry(&self, person: usize) -> &CohortEntry {
        &self.entries[person]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Event year of an included person matching the category filter.
    pub fn cohort_of(&self, person: usize, category: Option<SizeCategory>) -> Option<i32> {
        let e = &self.entries[person];
        if !e.included() {
            return None;
        }
        if category.is_some() && e.category != category {
            return None;
        }
        e.event_year
    }

    /// Included persons (panel indices) grouped by event year.
    pub fn cohorts(&self, category: Option<SizeCategory>) -> BTreeMap<i32, Vec<usize>> {
        let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for p in 0..self.entries.len() {
            if let Some(g) = self.cohort_of(p, category) {
                out.entry(g).or_default().push(p);
            }
        }
        out
    }

    pub fn cohort_sizes(&self, category: Option<SizeCategory>) -> BTreeMap<i32, usize> {
        self.cohorts(category)
            .into_iter()
            .map(|(g, v)| (g, v.len()))
            .collect()
    }

    pub fn n_included(&self) -> usize {
        self.entries.iter().filter(|e| e.included()).count()
    }

    /// Counts per exclusion reason plus the included count.
    pub fn exclusion_counts(&self) -> BTreeMap<Option<ExclusionReason>, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.exclusion).or_insert(0) += 1;
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path)?;
        w.write_record([
            "person",
            "event_year",
            "category",
            "death_year",
            "included",
            "exclusion_reason",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                e.person.to_string(),
                opt(e.event_year.map(|g| g.to_string())),
                opt(e.category.map(|c| c.to_string())),
                opt(e.death_year.map(|d| d.to_string())),
                u8::from(e.included()).to_string(),
                opt(e.exclusion.map(|r| r.tag().to_string())),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`CohortTable::write`] and aligns it with the panel.
    pub fn read(path: impl AsRef<Path>, delimiter: u8, panel: &PanelDataset) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .from_reader(file);
        let mut by_id = BTreeMap::new();
        let bad = |row: usize, column: &str, value: &str| Error::Parse {
            path: path.display().to_string(),
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let person = PersonId(field(0).parse().map_err(|_| bad(row, "person", &field(0)))?);
            let opt_i32 = |k: usize, name: &str| -> Result<Option<i32>> {
                let v = field(k);
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| bad(row, name, &v))
                }
            };
            let category = match field(2).as_str() {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(row, "category", s))?),
            };
            let exclusion = match field(5).as_str() {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(row, "exclusion_reason", s))?),
            };
            let entry = CohortEntry {
                person,
                event_year: opt_i32(1, "event_year")?,
                category,
                death_year: opt_i32(3, "death_year")?,
                exclusion,
            };
            if by_id.insert(person, entry).is_some() {
                return Err(Error::Validation(format!(
                    "cohort table lists person {person} twice"
                )));
            }
        }
        let mut entries = Vec::with_capacity(panel.n_persons());
        for id in panel.persons() {
            entries.push(by_id.remove(id).ok_or_else(|| {
                Error::Validation(format!("cohort table has no entry for person {id}"))
            })?);
        }
        if let Some(id) = by_id.keys().next() {
            return Err(Error::Validation(format!(
                "cohort table lists person {id} absent from the panel"
            )));
        }
        CohortTable::new(panel, entries)
    }
}

/// Size category of a transfer; `None` for non-positive amounts.
pub fn categorize_transfer(amount: f64, year: i32, index: &WageIndex) -> Result<Option<SizeCategory>> {
    let w = index.level(year)?;
    Ok(SizeCategory::classify(amount, w))
}

/// Death year nearest to `year` within `window`; ties go to the earlier death.
fn nearest_death(year: i32, deaths: &[i32], window: u32) -> Option<i32> {
    deaths
        .iter()
        .copied()
        .filter(|d| (year - d).unsigned_abs() <= window)
        .min_by_key(|d| ((year - d).unsigned_abs(), *d))
}

/// Builds the cohort table: the event of a person is the transfer lying
/// within the death window of a (parental or relative) death year.
pub fn assign_cohorts(panel: &PanelDataset, index: &WageIndex, filter: &FilterSpec) -> Result<CohortTable> {
    filter.validate()?;
    let (lo, hi) = filter.birth_year_range;
    let mut entries = Vec::with_capacity(panel.n_persons());
    for p in 0..panel.n_persons() {
        let mut entry = CohortEntry {
            person: panel.persons()[p],
            event_year: None,
            category: None,
            death_year: None,
            exclusion: None,
        };
        let birth = panel.birth_year(p);
        let transfers = panel.transfer_years(p);
        let deaths = panel.death_years(p, filter.death_set);
        let qualifying: Vec<(i32, i32)> = transfers
            .iter()
            .filter_map(|&y| nearest_death(y, deaths, filter.death_window).map(|d| (y, d)))
            .collect();

        entry.exclusion = if !(lo..=hi).contains(&birth) {
            Some(ExclusionReason::BirthYearOutOfRange)
        } else if filter.exclude_ever_self_employed && panel.ever_self_employed(p) {
            Some(ExclusionReason::EverSelfEmployed)
        } else if transfers.is_empty() {
            Some(ExclusionReason::NoTransfer)
        } else if qualifying.is_empty() {
            Some(ExclusionReason::NoQualifyingDeath)
        } else {
            None
        };

        if entry.exclusion.is_none() {
            let ratio = |y: i32| -> Result<f64> {
                let yi = panel.year_index(y).expect("transfer year inside panel");
                Ok(panel.transfer_amount(p, yi) / index.level(y)?)
            };
            let event = if !filter.one_off {
                Some(qualifying[0])
            } else if transfers.len() == 1 {
                Some(qualifying[0])
            } else if filter.small_gift_allowance {
                // largest qualifying transfer is the event, the rest must be small gifts
                let mut best = qualifying[0];
                let mut best_ratio = ratio(best.0)?;
                for &q in &qualifying[1..] {
                    let r = ratio(q.0)?;
                    if r > best_ratio {
                        best = q;
                        best_ratio = r;
                    }
                }
                let mut total = 0.0;
                let mut small = true;
                for &y in transfers.iter().filter(|&&y| y != best.0) {
                    let r = ratio(y)?;
                    small &= r < 0.5;
                    total += r;
                }
                (small && total <= 0.5).then_some(best)
            } else {
                None
            };
            match event {
                Some((g, d)) => {
                    let gi = panel.year_index(g).expect("transfer year inside panel");
                    entry.event_year = Some(g);
                    entry.death_year = Some(d);
                    entry.category = categorize_transfer(panel.transfer_amount(p, gi), g, index)?;
                }
                None => entry.exclusion = Some(ExclusionReason::MultipleTransfers),
            }
        }
        entries.push(entry);
    }
    CohortTable::new(panel, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::RawObservation;

    /// One person, 1995..=2015, transfers as `(year, amount)`.
    fn person_panel(transfers: &[(i32, f64)], deaths: &[i32], birth: i32) -> PanelDataset {
        let rows = (1995..=2015)
            .map(|y| RawObservation {
                person: PersonId(1),
                year: y,
                wage: 300.0,
                business_income: 0.0,
                birth_year: birth,
                sex: 0,
                education_level: 3,
                transfer_amount: transfers
                    .iter()
                    .find(|(ty, _)| *ty == y)
                    .map_or(0.0, |(_, a)| *a),
                age: None,
                parent_death_years: deaths.to_vec(),
                relative_death_years: vec![],
            })
            .collect();
        PanelDataset::from_observations(rows).unwrap()
    }

    fn index() -> WageIndex {
        WageIndex::constant(1995..=2015, 500.0).unwrap()
    }

    #[test]
    fn transfer_within_window_is_event() {
        let panel = person_panel(&[(2005, 800.0)], &[2003], 1960);
        let t = assign_cohorts(&panel, &index(), &FilterSpec::default()).unwrap();
        let e = t.entry(0);
        assert!(e.included());
        assert_eq!(e.event_year, Some(2005));
        assert_eq!(e.death_year, Some(2003));
        assert_eq!(e.category, Some(SizeCategory::I3));
    }

    #[test]
    fn transfer_outside_window_is_excluded() {
        let panel = person_panel(&[(2005, 800.0)], &[2000], 1960);
        let t = assign_cohorts(&panel, &index(), &FilterSpec::default()).unwrap();
        assert_eq!(t.entry(0).exclusion, Some(ExclusionReason::NoQualifyingDeath));
    }

    #[test]
    fn small_gift_allowance_admits_extra_gift() {
        let panel = person_panel(&[(2005, 1700.0), (2010, 150.0)], &[2005], 1960);
        let strict = assign_cohorts(&panel, &index(), &FilterSpec::default()).unwrap();
        assert_eq!(strict.entry(0).exclusion, Some(ExclusionReason::MultipleTransfers));

        let filter = FilterSpec {
            small_gift_allowance: true,
            ..FilterSpec::default()
        };
        let t = assign_cohorts(&panel, &index(), &filter).unwrap();
        assert!(t.entry(0).included());
        assert_eq!(t.entry(0).event_year, Some(2005));
        assert_eq!(t.entry(0).category, Some(SizeCategory::I4));
    }

    #[test]
    fn small_gifts_over_the_cap_are_rejected() {
        let filter = FilterSpec {
            small_gift_allowance: true,
            ..FilterSpec::default()
        };
        // each below half, total 0.6 of the wage level
        let panel = person_panel(&[(2005, 1700.0), (2008, 150.0), (2011, 150.0)], &[2005], 1960);
        let t = assign_cohorts(&panel, &index(), &filter).unwrap();
        assert_eq!(t.entry(0).exclusion, Some(ExclusionReason::MultipleTransfers));
        // one gift at exactly half is not small
        let panel = person_panel(&[(2005, 1700.0), (2008, 250.0)], &[2005], 1960);
        let t = assign_cohorts(&panel, &index(), &filter).unwrap();
        assert_eq!(t.entry(0).exclusion, Some(ExclusionReason::MultipleTransfers));
    }

    #[test]
    fn nearest_death_ties_go_earlier() {
        assert_eq!(nearest_death(2005, &[2003, 2007], 3), Some(2003));
        assert_eq!(nearest_death(2005, &[2001, 2006], 3), Some(2006));
        assert_eq!(nearest_death(2005, &[2001], 3), None);
    }

    #[test]
    fn filters_and_reasons() {
        let out_of_range = person_panel(&[(2005, 800.0)], &[2005], 1940);
        let t = assign_cohorts(&out_of_range, &index(), &FilterSpec::default()).unwrap();
        assert_eq!(t.entry(0).exclusion, Some(ExclusionReason::BirthYearOutOfRange));

        let none = person_panel(&[], &[2005], 1960);
        let t = assign_cohorts(&none, &index(), &FilterSpec::default()).unwrap();
        assert_eq!(t.entry(0).exclusion, Some(ExclusionReason::NoTransfer));

        let loose = FilterSpec {
            one_off: false,
            ..FilterSpec::default()
        };
        let two = person_panel(&[(2001, 900.0), (2005, 800.0)], &[2005], 1960);
        let t = assign_cohorts(&two, &index(), &loose).unwrap();
        assert_eq!(t.entry(0).event_year, Some(2005));
    }

    #[test]
    fn table_file_round_trip() {
        let panel = person_panel(&[(2005, 800.0)], &[2003], 1960);
        let t = assign_cohorts(&panel, &index(), &FilterSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohorts.csv");
        t.write(&path, b',').unwrap();
        assert_eq!(CohortTable::read(&path, b',', &panel).unwrap(), t);
    }

    #[test]
    fn domain_error_outside_index() {
        let idx = WageIndex::constant(2000..=2001, 500.0).unwrap();
        assert!(matches!(
            categorize_transfer(100.0, 1999, &idx),
            Err(Error::Domain { year: 1999 })
        ));
        assert_eq!(categorize_transfer(0.0, 2000, &idx).unwrap(), None);
    }
}
