//! Synthetic staggered-adoption panels with known cohort-time effects.
//!
//! Untreated wages follow `base + a_i + l_t + f(age) + e_it` with a
//! person effect `a_i` (partly driven by education), a common year effect,
//! a concave age profile and Gaussian noise. Treated persons additionally
//! get `tau(g, s)` from `s >= -anticipation` on. Cohort membership may be
//! tilted toward observables for matching experiments; trends stay
//! parallel in either case.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::{balanced_set_from_keys, weighted_points, AggregationScheme, RelativeCells, SchemeKind};
use crate::error::{Error, Result};
use crate::panel::{
    CohortEntry, CohortTable, ExclusionReason, PanelDataset, PersonId, RawObservation, SizeCategory, WageIndex,
};

/// True effect `tau(g, s)` at or after the anticipation onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EffectModel {
    Constant(f64),
    /// `base * (1 + cohort_slope * (g - g_first)) * decay^max(s, 0)`.
    HeterogeneousDecay { base: f64, cohort_slope: f64, decay: f64 },
    /// Explicit `(g, s) -> tau`; must cover every treated cell generated.
    Table(BTreeMap<(i32, i32), f64>),
}

impl EffectModel {
    fn tau(&self, g: i32, s: i32, g_first: i32) -> Result<f64> {
        match self {
            EffectModel::Constant(t) => Ok(*t),
            EffectModel::HeterogeneousDecay {
                base,
                cohort_slope,
                decay,
            } => Ok(base * (1.0 + cohort_slope * f64::from(g - g_first)) * decay.powi(s.max(0))),
            EffectModel::Table(t) => t
                .get(&(g, s))
                .copied()
                .ok_or_else(|| Error::Config(format!("effect table has no entry for (g={g}, s={s})"))),
        }
    }
}

/// Logistic tilt of treatment toward observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub intercept: f64,
    pub education: f64,
    pub sex: f64,
}

impl Selection {
    pub fn probability(&self, education: u8, sex: u8) -> f64 {
        let x = self.intercept + self.education * f64::from(education) + self.sex * f64::from(sex);
        1.0 / (1.0 + (-x).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub years: (i32, i32),
    /// `(g, N_g)` per treated cohort.
    pub cohorts: Vec<(i32, usize)>,
    /// Persons who never receive a transfer.
    pub never_treated: usize,
    pub effect: EffectModel,
    /// Years before the event at which the effect starts.
    pub anticipation: i32,
    pub birth_years: (i32, i32),
    pub base_wage: f64,
    pub person_sd: f64,
    /// Wage gain per education level (centered at level 4).
    pub education_effect: f64,
    /// Linear and quadratic age terms around age 40.
    pub age_profile: (f64, f64),
    pub year_trend: f64,
    pub year_sd: f64,
    pub noise_sd: f64,
    pub category: SizeCategory,
    /// Constant national wage level.
    pub wage_level: f64,
    /// Death year relative to the event year.
    pub death_offset: i32,
    /// Share of never-treated persons given a random death year.
    pub never_death_share: f64,
    pub selection: Option<Selection>,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            years: (1993, 2017),
            cohorts: (1996..=2017).map(|g| (g, 100)).collect(),
            never_treated: 0,
            effect: EffectModel::Constant(-20.0),
            anticipation: 0,
            birth_years: (1951, 1975),
            base_wage: 400.0,
            person_sd: 50.0,
            education_effect: 10.0,
            age_profile: (2.0, 0.05),
            year_trend: 3.0,
            year_sd: 5.0,
            noise_sd: 20.0,
            category: SizeCategory::I4,
            wage_level: 500.0,
            death_offset: 0,
            never_death_share: 0.5,
            selection: None,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let (first, last) = self.years;
        if first > last {
            return Err(Error::Config(format!("empty year range [{first}, {last}]")));
        }
        if self.cohorts.is_empty() {
            return Err(Error::Config("no treated cohorts".into()));
        }
        let mut seen = BTreeSet::new();
        for &(g, n) in &self.cohorts {
            if n == 0 {
                return Err(Error::Config(format!("cohort {g} has size 0")));
            }
            if !(first..=last).contains(&g) {
                return Err(Error::Config(format!("cohort {g} outside [{first}, {last}]")));
            }
            if !seen.insert(g) {
                return Err(Error::Config(format!("cohort {g} listed twice")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.person_sd >= 0.0 && self.year_sd >= 0.0) {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        if self.anticipation < 0 {
            return Err(Error::Config("anticipation must be non-negative".into()));
        }
        if self.birth_years.0 > self.birth_years.1 {
            return Err(Error::Config("empty birth year range".into()));
        }
        if !(0.0..=1.0).contains(&self.never_death_share) {
            return Err(Error::Config("never_death_share must lie in [0, 1]".into()));
        }
        if !(self.wage_level > 0.0) {
            return Err(Error::Config("wage level must be positive".into()));
        }
        if self.selection.is_some() && self.never_treated == 0 {
            return Err(Error::Config("selection needs never-treated persons".into()));
        }
        Ok(())
    }

    fn g_first(&self) -> i32 {
        self.cohorts.iter().map(|c| c.0).min().unwrap_or(self.years.0)
    }

    /// Every treated `(g, s)` of the panel with its effect, zero before onset.
    pub fn truth(&self) -> Result<TruthTable> {
        let (first, last) = self.years;
        let g_first = self.g_first();
        let mut effects = BTreeMap::new();
        for &(g, _) in &self.cohorts {
            for t in first..=last {
                let s = t - g;
                let tau = if s >= -self.anticipation {
                    self.effect.tau(g, s, g_first)?
                } else {
                    0.0
                };
                effects.insert((g, s), tau);
            }
        }
        Ok(TruthTable {
            effects,
            reference: None,
        })
    }
}

/// True cohort-time effects keyed by `(g, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub effects: BTreeMap<(i32, i32), f64>,
    /// Reference event time exempt from balanced-horizon checks.
    pub reference: Option<i32>,
}

impl TruthTable {
    pub fn get(&self, g: i32, s: i32) -> Option<f64> {
        self.effects.get(&(g, s)).copied()
    }

    /// Keeps only cells that were estimated.
    pub fn restrict_to(&self, cells: &RelativeCells) -> TruthTable {
        TruthTable {
            effects: self
                .effects
                .iter()
                .filter(|(k, _)| cells.cells.contains_key(k))
                .map(|(k, v)| (*k, *v))
                .collect(),
            reference: Some(-cells.ref_offset),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record(["g", "s", "tau"])?;
        for (&(g, s), &tau) in &self.effects {
            w.write_record([g.to_string(), s.to_string(), tau.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The aggregation weights applied to the true effects: the estimand of
/// the aggregated curve.
pub fn true_att(
    truth: &TruthTable,
    scheme: &AggregationScheme,
    cohort_sizes: &BTreeMap<i32, usize>,
) -> Result<BTreeMap<i32, f64>> {
    let ref_offset = truth.reference.map_or(i32::MAX, |r| -r);
    let (lo, hi) = match (truth.effects.keys().map(|k| k.1).min(), truth.effects.keys().map(|k| k.1).max()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Ok(BTreeMap::new()),
    };
    let points = match scheme.kind {
        SchemeKind::Unbalanced => weighted_points(&truth.effects, cohort_sizes, lo..=hi, ref_offset, None)?,
        SchemeKind::Balanced { a, b } => {
            let keys: BTreeSet<(i32, i32)> = truth.effects.keys().copied().collect();
            let candidates: BTreeSet<i32> = keys.iter().map(|k| k.0).collect();
            let set = balanced_set_from_keys(&keys, &candidates, a, b, ref_offset)?;
            weighted_points(&truth.effects, cohort_sizes, a..=b, ref_offset, Some(&set))?
        }
    };
    Ok(points
        .into_iter()
        .filter_map(|p| p.estimate.map(|e| (p.s, e)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: PanelDataset,
    /// The intended cohorts; `assign_cohorts` with default filters
    /// recovers them.
    pub cohorts: CohortTable,
    pub truth: TruthTable,
    pub wage_index: WageIndex,
}

struct Draw {
    birth: i32,
    sex: u8,
    education: u8,
    z: f64,
    u: f64,
    death: Option<i32>,
    noise: Vec<f64>,
}

fn draw_person(cfg: &DgpConfig, index: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index + 1);
    let (first, last) = cfg.years;
    let birth = rng.random_range(cfg.birth_years.0..=cfg.birth_years.1);
    let sex = u8::from(rng.random_bool(0.5));
    let education = rng.random_range(0..=8u8);
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let death_draw: f64 = rng.random();
    let death_year = rng.random_range(first..=last);
    let death = (death_draw < cfg.never_death_share).then_some(death_year);
    let noise = (first..=last)
        .map(|_| cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Draw {
        birth,
        sex,
        education,
        z,
        u,
        death,
        noise,
    }
}

/// Generates the panel, its intended cohort table, the truth table and the
/// (constant) wage index.
pub fn simulate_panel(cfg: &DgpConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let (first, last) = cfg.years;
    let n_years = (last - first + 1) as usize;

    let mut year_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    year_rng.set_stream(0);
    let year_effect: Vec<f64> = (0..n_years)
        .map(|k| cfg.year_trend * k as f64 + cfg.year_sd * year_rng.sample::<f64, _>(StandardNormal))
        .collect();

    // cohort slots in configuration order, then never-treated
    let n_treated: usize = cfg.cohorts.iter().map(|c| c.1).sum();
    let slot_cohort: Vec<i32> = cfg
        .cohorts
        .iter()
        .flat_map(|&(g, n)| std::iter::repeat_n(g, n))
        .collect();

    let mut accepted: Vec<(u64, Option<i32>, Draw)> = Vec::with_capacity(n_treated + cfg.never_treated);
    match cfg.selection {
        None => {
            for i in 0..(n_treated + cfg.never_treated) {
                let g = slot_cohort.get(i).copied();
                accepted.push((i as u64, g, draw_person(cfg, i as u64)));
            }
        }
        Some(sel) => {
            let (mut treated, mut never) = (0usize, 0usize);
            let mut index = 0u64;
            let max_candidates = 1000 * (n_treated + cfg.never_treated) as u64;
            while treated < n_treated || never < cfg.never_treated {
                if index >= max_candidates {
                    return Err(Error::Config("selection model cannot fill the cohort quotas".into()));
                }
                let d = draw_person(cfg, index);
                let wants_treatment = d.u < sel.probability(d.education, d.sex);
                if wants_treatment && treated < n_treated {
                    accepted.push((index, Some(slot_cohort[treated]), d));
                    treated += 1;
                } else if !wants_treatment && never < cfg.never_treated {
                    accepted.push((index, None, d));
                    never += 1;
                }
                index += 1;
            }
        }
    }

    let g_first = cfg.g_first();
    let amount = cfg.category.typical_ratio() * cfg.wage_level;
    let (a1, a2) = cfg.age_profile;
    let mut rows = Vec::with_capacity(accepted.len() * n_years);
    let mut entries = Vec::with_capacity(accepted.len());
    for (index, g, d) in &accepted {
        let id = PersonId(index + 1);
        let alpha = cfg.person_sd * d.z + cfg.education_effect * (f64::from(d.education) - 4.0);
        let death = match g {
            Some(g) => Some(g + cfg.death_offset),
            None => d.death,
        };
        for (k, t) in (first..=last).enumerate() {
            let age = f64::from(t - d.birth) - 40.0;
            let mut y = cfg.base_wage + alpha + year_effect[k] + a1 * age - a2 * age * age + d.noise[k];
            let mut transfer = 0.0;
            if let Some(g) = g {
                let s = t - g;
                if s >= -cfg.anticipation {
                    y += cfg.effect.tau(*g, s, g_first)?;
                }
                if s == 0 {
                    transfer = amount;
                }
            }
            rows.push(RawObservation {
                person: id,
                year: t,
                wage: y,
                business_income: 0.0,
                birth_year: d.birth,
                sex: d.sex,
                education_level: d.education,
                transfer_amount: transfer,
                age: None,
                parent_death_years: death.into_iter().collect(),
                relative_death_years: Vec::new(),
            });
        }
        entries.push(CohortEntry {
            person: id,
            event_year: *g,
            category: g.map(|_| cfg.category),
            death_year: g.and(death),
            exclusion: match g {
                Some(_) => None,
                None => Some(ExclusionReason::NoTransfer),
            },
        });
    }
    let panel = PanelDataset::from_observations(rows)?;
    let cohorts = CohortTable::new(&panel, entries)?;
    let wage_index = WageIndex::constant(first..=last, cfg.wage_level)?;
    Ok(SyntheticPanel {
        panel,
        cohorts,
        truth,
        wage_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{assign_cohorts, FilterSpec};

    fn small() -> DgpConfig {
        DgpConfig {
            years: (2000, 2010),
            cohorts: vec![(2004, 5), (2006, 7), (2009, 4)],
            never_treated: 3,
            ..DgpConfig::default()
        }
    }

    #[test]
    fn seeded_and_recoverable() {
        let a = simulate_panel(&small()).unwrap();
        let b = simulate_panel(&small()).unwrap();
        assert_eq!(a, b);
        let c = simulate_panel(&DgpConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.panel, c.panel);
        let assigned = assign_cohorts(&a.panel, &a.wage_index, &FilterSpec::default()).unwrap();
        assert_eq!(assigned, a.cohorts);
        assert_eq!(a.panel.n_persons(), 19);
    }

    #[test]
    fn truth_follows_effect_model() {
        let cfg = DgpConfig {
            effect: EffectModel::HeterogeneousDecay {
                base: -20.0,
                cohort_slope: 0.02,
                decay: 0.9,
            },
            anticipation: 1,
            ..small()
        };
        let t = cfg.truth().unwrap();
        assert_eq!(t.get(2004, -2), Some(0.0));
        assert_eq!(t.get(2004, -1), Some(-20.0));
        assert!((t.get(2006, 2).unwrap() - (-20.0 * 1.04 * 0.81)).abs() < 1e-12);

        let missing = DgpConfig {
            effect: EffectModel::Table(BTreeMap::from([((2004, 0), -5.0)])),
            ..small()
        };
        assert!(matches!(missing.truth(), Err(Error::Config(_))));
    }

    #[test]
    fn true_att_weights() {
        let truth = TruthTable {
            effects: BTreeMap::from([((1, 0), -10.0), ((2, 0), -20.0)]),
            reference: None,
        };
        let sizes = BTreeMap::from([(1, 1), (2, 3)]);
        let att = true_att(&truth, &AggregationScheme::default(), &sizes).unwrap();
        assert_eq!(att[&0], -17.5);
    }

    #[test]
    fn selection_tilts_education() {
        let cfg = DgpConfig {
            cohorts: vec![(2004, 200)],
            never_treated: 200,
            selection: Some(Selection {
                intercept: -2.0,
                education: 0.5,
                sex: 0.0,
            }),
            ..small()
        };
        let s = simulate_panel(&cfg).unwrap();
        let mean_edu = |treated: bool| {
            let v: Vec<f64> = (0..s.panel.n_persons())
                .filter(|&p| s.cohorts.entry(p).included() == treated)
                .map(|p| f64::from(s.panel.education_level(p, 0)))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_edu(true) > mean_edu(false) + 1.0);
    }
}
