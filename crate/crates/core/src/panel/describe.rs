use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{CohortTable, DeathSet, PanelDataset, SizeCategory, Variable, WageIndex};

/// Columns of the proximity table: all transfers, then I1..I4.
pub const PROXIMITY_COLUMNS: [&str; 5] = ["All", "I1", "I2", "I3", "I4"];

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityRow {
    pub delta: u32,
    /// Percent of transfers within `delta` years of a death, per column;
    /// `None` when the column has no transfers.
    pub shares: [Option<f64>; 5],
    /// Change against the previous row (zero for the first row).
    pub gains: [Option<f64>; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityTable {
    pub rows: Vec<ProximityRow>,
    /// Number of transfers per column.
    pub counts: [usize; 5],
}

/// Share of transfers falling inside `[d - delta, d + delta]` of some death
/// year `d`, by size category. The unit is a transfer record (person-year
/// with a positive amount), categorized at its own year.
pub fn death_proximity_table(
    panel: &PanelDataset,
    index: &WageIndex,
    deltas: &[u32],
    set: DeathSet,
) -> Result<ProximityTable> {
    // (column, distance to nearest death or None)
    let mut transfers: Vec<(usize, Option<u32>)> = Vec::new();
    for p in 0..panel.n_persons() {
        let deaths = panel.death_years(p, set);
        for y in 0..panel.n_years() {
            let amount = panel.transfer_amount(p, y);
            let year = panel.first_year() + y as i32;
            let Some(cat) = SizeCategory::classify(amount, index.level(year)?) else {
                continue;
            };
            let dist = deaths.iter().map(|d| (year - d).unsigned_abs()).min();
            transfers.push((cat.index() + 1, dist));
        }
    }
    let mut counts = [0usize; 5];
    for (col, _) in &transfers {
        counts[0] += 1;
        counts[*col] += 1;
    }
    let mut rows: Vec<ProximityRow> = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut hits = [0usize; 5];
        for (col, dist) in &transfers {
            if dist.is_some_and(|d| d <= delta) {
                hits[0] += 1;
                hits[*col] += 1;
            }
        }
        let mut shares = [None; 5];
        for c in 0..5 {
            if counts[c] > 0 {
                shares[c] = Some(100.0 * hits[c] as f64 / counts[c] as f64);
            }
        }
        let gains = match rows.last() {
            None => shares.map(|s| s.map(|_| 0.0)),
            Some(prev) => {
                let mut g = [None; 5];
                for c in 0..5 {
                    g[c] = shares[c].zip(prev.shares[c]).map(|(a, b)| a - b);
                }
                g
            }
        };
        rows.push(ProximityRow { delta, shares, gains });
    }
    Ok(ProximityTable { rows, counts })
}

impl ProximityTable {
    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        let mut header = vec!["delta".to_string(), "row".to_string()];
        header.extend(PROXIMITY_COLUMNS.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.delta.to_string(), "share".to_string()];
            rec.extend(r.shares.iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
            let mut rec = vec![r.delta.to_string(), "gain".to_string()];
            rec.extend(r.gains.iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
        let mut rec = vec![String::new(), "count".to_string()];
        rec.extend(self.counts.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Category,
    Sex,
    /// Age at the event year below 50 versus 50 and over.
    AgeAt50,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "category" => Ok(Grouping::Category),
            "sex" => Ok(Grouping::Sex),
            "age50" | "age" => Ok(Grouping::AgeAt50),
            other => Err(Error::Config(format!("unknown grouping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeansAt {
    /// Each person evaluated at their own event year.
    EventYear,
    /// All person-years of the panel.
    FullPeriod,
}

impl FromStr for MeansAt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "event_year" => Ok(MeansAt::EventYear),
            "full_period" => Ok(MeansAt::FullPeriod),
            other => Err(Error::Config(format!("unknown evaluation point `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMeans {
    pub label: String,
    pub persons: usize,
    pub observations: usize,
    /// Mean per variable of [`MeansTable::variables`]; `None` for empty groups.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeansTable {
    pub variables: Vec<Variable>,
    pub groups: Vec<GroupMeans>,
}

fn group_labels(grouping: Grouping) -> Vec<String> {
    match grouping {
        Grouping::Category => {
            let mut v = vec!["All".to_string()];
            v.extend(SizeCategory::ALL.iter().map(|c| c.to_string()));
            v
        }
        Grouping::Sex => vec!["sex=0".into(), "sex=1".into()],
        Grouping::AgeAt50 => vec!["age<50".into(), "age>=50".into()],
    }
}

/// Arithmetic means of every variable for included persons, by group.
pub fn sample_means(
    panel: &PanelDataset,
    cohorts: &CohortTable,
    grouping: Grouping,
    at: MeansAt,
) -> MeansTable {
    let variables = Variable::ALL.to_vec();
    let labels = group_labels(grouping);
    let mut sums = vec![vec![0.0; variables.len()]; labels.len()];
    let mut persons = vec![0usize; labels.len()];
    let mut obs = vec![0usize; labels.len()];

    for p in 0..panel.n_persons() {
        let e = cohorts.entry(p);
        let (true, Some(g)) = (e.included(), e.event_year) else {
            continue;
        };
        let groups: Vec<usize> = match grouping {
            Grouping::Category => {
                let mut v = vec![0];
                if let Some(c) = e.category {
                    v.push(c.index() + 1);
                }
                v
            }
            Grouping::Sex => vec![usize::from(panel.sex(p) != 0)],
            Grouping::AgeAt50 => vec![usize::from(panel.age(p, g) >= 50)],
        };
        let years: Vec<usize> = match at {
            MeansAt::EventYear => vec![panel.year_index(g).expect("event year in panel")],
            MeansAt::FullPeriod => (0..panel.n_years()).collect(),
        };
        for &k in &groups {
            persons[k] += 1;
            for &y in &years {
                obs[k] += 1;
                for (j, v) in variables.iter().enumerate() {
                    sums[k][j] += panel.value(*v, p, y);
                }
            }
        }
    }

    let groups = labels
        .into_iter()
        .enumerate()
        .map(|(k, label)| GroupMeans {
            label,
            persons: persons[k],
            observations: obs[k],
            means: sums[k]
                .iter()
                .map(|s| (obs[k] > 0).then(|| s / obs[k] as f64))
                .collect(),
        })
        .collect();
    MeansTable { variables, groups }
}

impl MeansTable {
    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        let mut header = vec!["group".to_string(), "persons".to_string(), "observations".to_string()];
        header.extend(self.variables.iter().map(|v| v.name().to_string()));
        w.write_record(&header)?;
        for g in &self.groups {
            let mut rec = vec![g.label.clone(), g.persons.to_string(), g.observations.to_string()];
            rec.extend(
                g.means
                    .iter()
                    .map(|m| m.map_or_else(|| "NA".to_string(), |x| x.to_string())),
            );
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
