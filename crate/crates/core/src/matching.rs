//! Nearest-one propensity score matching baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{PivotPlan, PivotedCholesky, GRAM_TOL};
use crate::panel::{CohortTable, DeathSet, ExclusionReason, PanelDataset, PersonId, SizeCategory, Variable};

/// Inverse hyperbolic sine, `ln(x + sqrt(x^2 + 1))`.
pub fn ihs(x: f64) -> f64 {
    x.asinh()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeTransform {
    Ihs,
    Identity,
}

impl OutcomeTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            OutcomeTransform::Ihs => ihs(x),
            OutcomeTransform::Identity => x,
        }
    }
}

impl FromStr for OutcomeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ihs" => Ok(OutcomeTransform::Ihs),
            "identity" => Ok(OutcomeTransform::Identity),
            other => Err(Error::Config(format!("unknown outcome transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// Everyone without a transfer inside the clean window.
    AllNonrecipients,
    /// Of those, only persons with a death inside the treated window.
    NonrecipientsWithDeath,
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all_nonrecipients" => Ok(PoolKind::AllNonrecipients),
            "nonrecipients_with_death" => Ok(PoolKind::NonrecipientsWithDeath),
            other => Err(Error::Config(format!("unknown control pool `{other}`"))),
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::AllNonrecipients => "all_nonrecipients",
            PoolKind::NonrecipientsWithDeath => "nonrecipients_with_death",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    /// Treated cohorts, inclusive.
    pub treated_window: (i32, i32),
    /// Pool members have no transfer from `g_lo - clean_before` to
    /// `g_hi + clean_after`.
    pub clean_before: i32,
    pub clean_after: i32,
    /// Covariates are measured at `g - match_offset`.
    pub match_offset: i32,
    pub covariates: Vec<Variable>,
    pub pool: PoolKind,
    pub death_set: DeathSet,
    pub window: (i32, i32),
    pub caliper: Option<f64>,
    pub replacement: bool,
    pub outcome: Variable,
    pub transform: OutcomeTransform,
    pub category: Option<SizeCategory>,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            treated_window: (2000, 2004),
            clean_before: 6,
            clean_after: 6,
            match_offset: 3,
            covariates: vec![Variable::Age, Variable::Sex, Variable::Wage],
            pool: PoolKind::AllNonrecipients,
            death_set: DeathSet::Parental,
            window: (-6, 6),
            caliper: None,
            replacement: true,
            outcome: Variable::Wage,
            transform: OutcomeTransform::Ihs,
            category: None,
        }
    }
}

impl MatchSpec {
    pub fn validate(&self, years: (i32, i32)) -> Result<()> {
        let (lo, hi) = self.treated_window;
        if lo > hi {
            return Err(Error::Config(format!("empty treated window [{lo}, {hi}]")));
        }
        if self.clean_before <= 0 || self.clean_after <= 0 || self.match_offset <= 0 {
            return Err(Error::Config("matching offsets must be positive".into()));
        }
        if lo - self.match_offset < years.0 || hi > years.1 {
            return Err(Error::Config(format!(
                "treated window [{lo}, {hi}] with match offset {} leaves the panel [{}, {}]",
                self.match_offset, years.0, years.1
            )));
        }
        if self.window.0 > self.window.1 {
            return Err(Error::Config("empty event window".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::Config("propensity model needs at least one covariate".into()));
        }
        if self.caliper.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("caliper must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub names: Vec<String>,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after every iteration.
    pub trajectory: Vec<f64>,
}

impl PropensityFit {
    pub fn linear_index(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + x.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        logistic(self.linear_index(x))
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn log_likelihood(rows: &[(&[f64], bool)], beta: &[f64]) -> f64 {
    rows.iter()
        .map(|(x, y)| {
            let z = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            // log p = -log(1 + e^-z), log(1-p) = -log(1 + e^z)
            if *y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 25;

/// Logistic regression of treatment on covariates by iteratively
/// reweighted least squares with step halving.
pub fn fit_propensity(treated: &[Vec<f64>], pool: &[Vec<f64>], names: &[String]) -> Result<PropensityFit> {
    if treated.is_empty() || pool.is_empty() {
        return Err(Error::Estimation("propensity model needs treated and pool persons".into()));
    }
    let k = names.len();
    // a single covariate splitting the groups makes the MLE diverge
    for (j, name) in names.iter().enumerate() {
        let range = |g: &[Vec<f64>]| {
            g.iter()
                .map(|x| x[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (tl, th) = range(treated);
        let (pl, ph) = range(pool);
        if th < pl || ph < tl {
            return Err(Error::Separation {
                covariate: name.clone(),
            });
        }
    }
    let rows: Vec<(&[f64], bool)> = treated
        .iter()
        .map(|x| (x.as_slice(), true))
        .chain(pool.iter().map(|x| (x.as_slice(), false)))
        .collect();

    let mut beta = vec![0.0; k + 1];
    let share = treated.len() as f64 / rows.len() as f64;
    beta[0] = (share / (1.0 - share)).ln();
    let mut ll = log_likelihood(&rows, &beta);
    let mut trajectory = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let mut grad = vec![0.0; k + 1];
        let mut hess = vec![vec![0.0; k + 1]; k + 1];
        for (x, y) in &rows {
            let z = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let p = logistic(z);
            let w = p * (1.0 - p);
            let r = f64::from(u8::from(*y)) - p;
            let xi = |i: usize| if i == 0 { 1.0 } else { x[i - 1] };
            for i in 0..=k {
                grad[i] += xi(i) * r;
                for j in 0..=i {
                    hess[i][j] += w * xi(i) * xi(j);
                }
            }
        }
        for i in 0..=k {
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
        }
        let ch = PivotedCholesky::decompose(
            &hess,
            PivotPlan {
                leading: 1,
                trailing: 0,
            },
            GRAM_TOL,
        );
        let delta: Vec<f64> = ch.solve(&grad).into_iter().map(|d| d.unwrap_or(0.0)).collect();
        let mut step = 1.0;
        let mut next;
        let mut next_ll;
        loop {
            next = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect::<Vec<f64>>();
            next_ll = log_likelihood(&rows, &next);
            if next_ll >= ll || step < 1e-10 {
                break;
            }
            step /= 2.0;
        }
        if next_ll < ll {
            // no ascent possible along the Newton direction
            converged = true;
            break;
        }
        let change = delta.iter().map(|d| (step * d).abs()).fold(0.0, f64::max);
        beta = next;
        ll = next_ll;
        trajectory.push(ll);
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let mut all_names = vec!["intercept".to_string()];
    all_names.extend(names.iter().cloned());
    Ok(PropensityFit {
        names: all_names,
        coefficients: beta,
        converged,
        iterations,
        log_likelihood: ll,
        trajectory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub treated: PersonId,
    pub control: PersonId,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub matches: Vec<Match>,
    /// Treated persons whose nearest control lies beyond the caliper (or
    /// who found no unused control without replacement).
    pub unmatched: usize,
}

/// Pairs each treated person with the pool member of nearest score.
/// Exact ties go to the smaller person id.
pub fn nearest_one_match(
    treated: &[(PersonId, f64)],
    pool: &[(PersonId, f64)],
    caliper: Option<f64>,
    replacement: bool,
) -> Result<MatchOutcome> {
    if pool.is_empty() {
        return Err(Error::Estimation("control pool is empty".into()));
    }
    let mut pool: Vec<(PersonId, f64)> = pool.to_vec();
    pool.sort_by_key(|p| p.0);
    let mut treated: Vec<(PersonId, f64)> = treated.to_vec();
    treated.sort_by_key(|p| p.0);
    let mut used = vec![false; pool.len()];
    let mut matches = Vec::with_capacity(treated.len());
    let mut unmatched = 0;
    for &(id, score) in &treated {
        let mut best: Option<(usize, f64)> = None;
        for (j, &(_, s)) in pool.iter().enumerate() {
            if !replacement && used[j] {
                continue;
            }
            let d = (s - score).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) if caliper.is_none_or(|c| d <= c) => {
                used[j] = true;
                matches.push(Match {
                    treated: id,
                    control: pool[j].0,
                    gap: d,
                });
            }
            _ => unmatched += 1,
        }
    }
    Ok(MatchOutcome { matches, unmatched })
}

/// A matched pair located in the panel, with the treated event year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub event_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEstimate {
    pub s: i32,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub n_pairs: usize,
    /// Pairs whose event time falls outside the panel.
    pub dropped: usize,
}

/// Mean treated-minus-control difference of the transformed outcome at
/// each event time, with the paired-sample standard error.
pub fn matched_event_estimates(
    panel: &PanelDataset,
    pairs: &[MatchedPair],
    outcome: Variable,
    transform: OutcomeTransform,
    window: (i32, i32),
) -> Result<Vec<MatchedEstimate>> {
    if pairs.is_empty() {
        return Err(Error::Estimation("no matched pairs".into()));
    }
    let mut out = Vec::new();
    for s in window.0..=window.1 {
        let mut diffs = Vec::with_capacity(pairs.len());
        let mut dropped = 0;
        for p in pairs {
            match panel.year_index(p.event_year + s) {
                Some(t) => diffs.push(
                    transform.apply(panel.value(outcome, p.treated, t))
                        - transform.apply(panel.value(outcome, p.control, t)),
                ),
                None => dropped += 1,
            }
        }
        let n = diffs.len();
        let mean = (n > 0).then(|| diffs.iter().sum::<f64>() / n as f64);
        let se = mean.filter(|_| n > 1).map(|m| {
            let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        out.push(MatchedEstimate {
            s,
            estimate: mean,
            se,
            n_pairs: n,
            dropped,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_treated: f64,
    pub mean_pool: f64,
    pub mean_matched: f64,
    pub std_diff_before: f64,
    pub std_diff_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    /// Propensity fit per treated cohort.
    pub fits: BTreeMap<i32, PropensityFit>,
    pub matches: Vec<(i32, Match)>,
    pub pairs: Vec<MatchedPair>,
    pub unmatched: usize,
    pub estimates: Vec<MatchedEstimate>,
    pub balance: Vec<BalanceRow>,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Control pool for treated cohorts in the window.
pub fn control_pool(panel: &PanelDataset, cohorts: &CohortTable, spec: &MatchSpec) -> Vec<usize> {
    let (lo, hi) = spec.treated_window;
    let clean = (lo - spec.clean_before)..=(hi + spec.clean_after);
    (0..panel.n_persons())
        .filter(|&p| {
            let e = cohorts.entry(p);
            if matches!(
                e.exclusion,
                Some(ExclusionReason::BirthYearOutOfRange | ExclusionReason::EverSelfEmployed)
            ) {
                return false;
            }
            if panel.transfer_years(p).iter().any(|y| clean.contains(y)) {
                return false;
            }
            match spec.pool {
                PoolKind::AllNonrecipients => true,
                PoolKind::NonrecipientsWithDeath => panel
                    .death_years(p, spec.death_set)
                    .iter()
                    .any(|d| (lo..=hi).contains(d)),
            }
        })
        .collect()
}

/// Per-cohort propensity fits, nearest-one matching, event-time effects
/// and covariate balance.
pub fn run_matching(panel: &PanelDataset, cohorts: &CohortTable, spec: &MatchSpec) -> Result<MatchingResult> {
    spec.validate((panel.first_year(), panel.last_year()))?;
    let pool = control_pool(panel, cohorts, spec);
    if pool.is_empty() {
        return Err(Error::Estimation("control pool is empty".into()));
    }
    let names: Vec<String> = spec.covariates.iter().map(|v| v.name().to_string()).collect();
    let covariates = |p: usize, year: i32| -> Vec<f64> {
        let t = panel.year_index(year).expect("match year inside panel");
        spec.covariates.iter().map(|&v| panel.value(v, p, t)).collect()
    };

    let mut fits = BTreeMap::new();
    let mut matches = Vec::new();
    let mut pairs = Vec::new();
    let mut unmatched = 0;
    let mut balance_treated: Vec<Vec<f64>> = Vec::new();
    let mut balance_pool: Vec<Vec<f64>> = Vec::new();
    let mut balance_matched: Vec<Vec<f64>> = Vec::new();
    for (g, members) in cohorts.cohorts(spec.category) {
        if !(spec.treated_window.0..=spec.treated_window.1).contains(&g) {
            continue;
        }
        let at = g - spec.match_offset;
        let xt: Vec<Vec<f64>> = members.iter().map(|&p| covariates(p, at)).collect();
        let xp: Vec<Vec<f64>> = pool.iter().map(|&p| covariates(p, at)).collect();
        let fit = fit_propensity(&xt, &xp, &names)?;
        let st: Vec<(PersonId, f64)> = members
            .iter()
            .zip(&xt)
            .map(|(&p, x)| (panel.persons()[p], fit.score(x)))
            .collect();
        let sp: Vec<(PersonId, f64)> = pool
            .iter()
            .zip(&xp)
            .map(|(&p, x)| (panel.persons()[p], fit.score(x)))
            .collect();
        let outcome = nearest_one_match(&st, &sp, spec.caliper, spec.replacement)?;
        unmatched += outcome.unmatched;
        for m in &outcome.matches {
            let t = panel.person_index(m.treated).expect("treated in panel");
            let c = panel.person_index(m.control).expect("control in panel");
            pairs.push(MatchedPair {
                treated: t,
                control: c,
                event_year: g,
            });
            balance_matched.push(covariates(c, at));
            matches.push((g, *m));
        }
        balance_treated.extend(xt);
        balance_pool.extend(xp);
        fits.insert(g, fit);
    }
    if pairs.is_empty() {
        return Err(Error::Estimation(format!(
            "no treated persons matched in cohorts [{}, {}]",
            spec.treated_window.0, spec.treated_window.1
        )));
    }
    let estimates = matched_event_estimates(panel, &pairs, spec.outcome, spec.transform, spec.window)?;
    let balance = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = |rows: &[Vec<f64>]| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
            let (mt, vt) = mean_var(&col(&balance_treated));
            let (mp, vp) = mean_var(&col(&balance_pool));
            let (mm, vm) = mean_var(&col(&balance_matched));
            let sd = |a: f64, b: f64| ((a + b) / 2.0).sqrt();
            let std_diff = |m1: f64, m2: f64, s: f64| if s > 0.0 { (m1 - m2) / s } else { 0.0 };
            BalanceRow {
                covariate: name.clone(),
                mean_treated: mt,
                mean_pool: mp,
                mean_matched: mm,
                std_diff_before: std_diff(mt, mp, sd(vt, vp)),
                std_diff_after: std_diff(mt, mm, sd(vt, vm)),
            }
        })
        .collect();
    Ok(MatchingResult {
        fits,
        matches,
        pairs,
        unmatched,
        estimates,
        balance,
    })
}

impl MatchingResult {
    pub fn write_matches(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record(["cohort", "treated_id", "control_id", "score_gap"])?;
        for (g, m) in &self.matches {
            w.write_record([g.to_string(), m.treated.to_string(), m.control.to_string(), m.gap.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_estimates(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record(["s", "estimate", "se", "n_pairs", "dropped"])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for e in &self.estimates {
            w.write_record([
                e.s.to_string(),
                opt(e.estimate),
                opt(e.se),
                e.n_pairs.to_string(),
                e.dropped.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_balance(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record([
            "covariate",
            "mean_treated",
            "mean_pool",
            "mean_matched",
            "std_diff_before",
            "std_diff_after",
        ])?;
        for b in &self.balance {
            w.write_record([
                b.covariate.clone(),
                b.mean_treated.to_string(),
                b.mean_pool.to_string(),
                b.mean_matched.to_string(),
                b.std_diff_before.to_string(),
                b.std_diff_after.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
