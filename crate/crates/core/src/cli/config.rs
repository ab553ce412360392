//! `key = value` run configuration with environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregate::AggregationScheme;
use crate::did::{ControlStrategy, TreatmentSpec};
use crate::error::{Error, Result};
use crate::inference::BootstrapSpec;
use crate::matching::MatchSpec;
use crate::panel::{DeathSet, FilterSpec, Grouping, MeansAt, SizeCategory, Variable};
use crate::synth::{DgpConfig, EffectModel, Selection};
use crate::twfe::TwfeSpec;

pub const ENV_PREFIX: &str = "STAGDID_";

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    // inputs and outputs
    ("panel", "panel file (default <out_dir>/panel.csv)"),
    ("wage_index", "wage index file (default <out_dir>/wage_index.csv)"),
    ("deaths", "optional (person, death_year) file merged into the panel"),
    ("deaths_set", "death set the deaths file fills: parental | relative"),
    ("cohorts", "cohort table (default <out_dir>/cohorts.csv)"),
    ("delimiter", "field delimiter of every input and export (default ,)"),
    ("out_dir", "output directory (default out)"),
    ("seed", "seed for every random draw (default 1)"),
    ("workers", "worker threads, 0 = available parallelism (default 0)"),
    // sample filters
    ("birth_year_min", "earliest admitted birth year (default 1951)"),
    ("birth_year_max", "latest admitted birth year (default 1975)"),
    ("death_window", "max years between transfer and death (default 3)"),
    ("one_off", "exclude persons with more than one transfer (default true)"),
    ("small_gift_allowance", "admit small extra gifts (default false)"),
    ("death_set", "death set defining qualifying events (default parental)"),
    ("exclude_ever_self_employed", "drop persons ever self-employed (default false)"),
    // cell estimation
    ("outcome", "outcome variable (default wage)"),
    ("anticipation", "anticipation years (default 2)"),
    ("ref_offset", "reference period offset before the event (default 3)"),
    ("control", "all | nearest_<n> (default all)"),
    ("category", "all | I1 | I2 | I3 | I4 (default all)"),
    ("covariates", "comma list of discrete covariates (default age)"),
    // aggregation and bootstrap
    ("scheme", "unbalanced | balanced (default unbalanced)"),
    ("balanced_from", "balanced horizon start"),
    ("balanced_to", "balanced horizon end"),
    ("display_min", "first displayed event time (default -15)"),
    ("display_max", "last displayed event time (default 15)"),
    ("replicates", "bootstrap replicates (default 999)"),
    ("level", "band confidence level (default 0.95)"),
    // TWFE
    ("twfe_omitted", "comma list of omitted event times (default -3,-4)"),
    ("twfe_window_min", "lower binning endpoint"),
    ("twfe_window_max", "upper binning endpoint"),
    ("twfe_covariates", "comma list of covariates (default age)"),
    ("twfe_never_treated", "add never-treated persons (default false)"),
    ("twfe_compare", "also bootstrap the staggered curve and compare leads (default false)"),
    // matching
    ("match_cohort_min", "first matched cohort (default 2000)"),
    ("match_cohort_max", "last matched cohort (default 2004)"),
    ("match_clean_before", "clean years before the cohort window (default 6)"),
    ("match_clean_after", "clean years after the cohort window (default 6)"),
    ("match_offset", "matching year before the event (default 3)"),
    ("match_covariates", "comma list (default age,sex,wage)"),
    ("match_pool", "all_nonrecipients | nonrecipients_with_death"),
    ("match_event_min", "first event time (default -6)"),
    ("match_event_max", "last event time (default 6)"),
    ("match_caliper", "maximum score gap (default none)"),
    ("match_replacement", "match with replacement (default true)"),
    ("match_transform", "ihs | identity (default ihs)"),
    // descriptives
    ("describe_deltas", "comma list of proximity windows (default 0,1,2,3,4,5)"),
    ("describe_grouping", "category | sex | age50 (default category)"),
    ("describe_means_at", "event_year | full_period (default event_year)"),
    // simulation
    ("sim_year_first", "first panel year (default 1993)"),
    ("sim_year_last", "last panel year (default 2017)"),
    ("sim_cohort_first", "first treated cohort (default 1996)"),
    ("sim_cohort_last", "last treated cohort (default 2017)"),
    ("sim_cohort_size", "persons per cohort (default 100)"),
    ("sim_never_treated", "persons without a transfer (default 0)"),
    ("sim_effect", "constant | decay | table (default constant)"),
    ("sim_effect_value", "constant effect, or the base of the decay family"),
    ("sim_effect_cohort_slope", "relative effect change per cohort (default 0)"),
    ("sim_effect_decay", "per-year decay factor (default 1)"),
    ("sim_effect_table", "file with columns g, s, tau"),
    ("sim_anticipation", "years before the event the effect starts (default 0)"),
    ("sim_base_wage", "mean wage level (default 400)"),
    ("sim_person_sd", "person effect sd (default 50)"),
    ("sim_year_trend", "year effect slope (default 3)"),
    ("sim_year_sd", "year effect sd (default 5)"),
    ("sim_noise_sd", "idiosyncratic noise sd (default 20)"),
    ("sim_category", "size category of generated transfers (default I4)"),
    ("sim_wage_level", "constant national wage level (default 500)"),
    ("sim_death_offset", "death year minus event year (default 0)"),
    ("sim_selection_intercept", "logistic selection intercept"),
    ("sim_selection_education", "logistic selection slope on education"),
    ("sim_selection_sex", "logistic selection slope on sex"),
];

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Resolved configuration: file values overridden by environment values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let k = k.trim();
            if !known(k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: key `{k}` given twice", i + 1)));
            }
        }
        Ok(RunConfig { values })
    }

    /// Applies `STAGDID_<KEY>` variables; unknown names under the prefix
    /// are errors.
    pub fn with_env<I, K, V>(mut self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_ascii_lowercase();
            if !known(&key) {
                return Err(Error::Config(format!("unknown key `{key}` in {}", k.as_ref())));
            }
            self.values.insert(key, v.as_ref().trim().to_string());
        }
        Ok(self)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// File, then the process environment.
    pub fn from_sources(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(path)?.with_env(std::env::vars())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "{key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("key `{key}`: cannot read `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("key `{key}`: `{v}` is not a boolean"))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Config(format!("key `{key}`: cannot read `{s}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Typed list whose elements carry their own parse errors.
    fn parsed_list<T: FromStr<Err = Error>>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("key `{key}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    fn parsed<T: FromStr<Err = Error>>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("key `{key}`: {e}"))))
            .transpose()
    }

    pub fn delimiter(&self) -> Result<u8> {
        match self.raw("delimiter") {
            None => Ok(b','),
            Some("\\t" | "tab") => Ok(b'\t'),
            Some(v) if v.len() == 1 && v.is_ascii() => Ok(v.as_bytes()[0]),
            Some(v) => Err(Error::Config(format!("key `delimiter`: `{v}` is not a single character"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 1)
    }

    pub fn workers(&self) -> Result<usize> {
        self.get_or("workers", 0)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir").unwrap_or("out"))
    }

    /// Explicit path, or `name` inside the output directory.
    pub fn path_or_out(&self, key: &str, name: &str) -> PathBuf {
        self.raw(key)
            .map_or_else(|| self.out_dir().join(name), PathBuf::from)
    }

    pub fn category(&self) -> Result<Option<SizeCategory>> {
        match self.raw("category") {
            None | Some("all") => Ok(None),
            Some(_) => self.parsed("category"),
        }
    }

    pub fn outcome(&self) -> Result<Variable> {
        Ok(self.parsed("outcome")?.unwrap_or(Variable::Wage))
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        let d = FilterSpec::default();
        let spec = FilterSpec {
            birth_year_range: (
                self.get_or("birth_year_min", d.birth_year_range.0)?,
                self.get_or("birth_year_max", d.birth_year_range.1)?,
            ),
            death_window: self.get_or("death_window", d.death_window)?,
            one_off: self.flag("one_off", d.one_off)?,
            small_gift_allowance: self.flag("small_gift_allowance", d.small_gift_allowance)?,
            death_set: self.parsed("death_set")?.unwrap_or(d.death_set),
            exclude_ever_self_employed: self.flag("exclude_ever_self_employed", d.exclude_ever_self_employed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn deaths_set(&self) -> Result<DeathSet> {
        Ok(self.parsed("deaths_set")?.unwrap_or_default())
    }

    pub fn treatment_spec(&self) -> Result<TreatmentSpec> {
        let d = TreatmentSpec::default();
        let spec = TreatmentSpec {
            anticipation: self.get_or("anticipation", d.anticipation)?,
            ref_offset: self.get_or("ref_offset", d.ref_offset)?,
            control: self.parsed::<ControlStrategy>("control")?.unwrap_or(d.control),
            category: self.category()?,
            covariates: self.parsed_list("covariates")?.unwrap_or(d.covariates),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scheme(&self) -> Result<AggregationScheme> {
        let d = AggregationScheme::default();
        let mut scheme = match self.raw("scheme").unwrap_or("unbalanced") {
            "unbalanced" => d,
            "balanced" => AggregationScheme::balanced(self.require("balanced_from")?, self.require("balanced_to")?),
            other => return Err(Error::Config(format!("key `scheme`: unknown scheme `{other}`"))),
        };
        scheme.display_range = (
            self.get_or("display_min", d.display_range.0)?,
            self.get_or("display_max", d.display_range.1)?,
        );
        Ok(scheme)
    }

    pub fn bootstrap_spec(&self) -> Result<BootstrapSpec> {
        let d = BootstrapSpec::new(self.seed()?);
        let spec = BootstrapSpec {
            replicates: self.get_or("replicates", d.replicates)?,
            level: self.get_or("level", d.level)?,
            seed: d.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn twfe_spec(&self) -> Result<TwfeSpec> {
        let d = TwfeSpec::default();
        let window = match (self.get::<i32>("twfe_window_min")?, self.get::<i32>("twfe_window_max")?) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "keys `twfe_window_min` and `twfe_window_max` go together".into(),
                ))
            }
        };
        let spec = TwfeSpec {
            omitted: self.list("twfe_omitted")?.unwrap_or(d.omitted),
            window,
            outcome: self.outcome()?,
            covariates: self.parsed_list("twfe_covariates")?.unwrap_or(d.covariates),
            category: self.category()?,
            include_never_treated: self.flag("twfe_never_treated", d.include_never_treated)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn match_spec(&self) -> Result<MatchSpec> {
        let d = MatchSpec::default();
        Ok(MatchSpec {
            treated_window: (
                self.get_or("match_cohort_min", d.treated_window.0)?,
                self.get_or("match_cohort_max", d.treated_window.1)?,
            ),
            clean_before: self.get_or("match_clean_before", d.clean_before)?,
            clean_after: self.get_or("match_clean_after", d.clean_after)?,
            match_offset: self.get_or("match_offset", d.match_offset)?,
            covariates: self.parsed_list("match_covariates")?.unwrap_or(d.covariates),
            pool: self.parsed("match_pool")?.unwrap_or(d.pool),
            death_set: self.parsed("death_set")?.unwrap_or(d.death_set),
            window: (
                self.get_or("match_event_min", d.window.0)?,
                self.get_or("match_event_max", d.window.1)?,
            ),
            caliper: self.get("match_caliper")?,
            replacement: self.flag("match_replacement", d.replacement)?,
            outcome: self.outcome()?,
            transform: self.parsed("match_transform")?.unwrap_or(d.transform),
            category: self.category()?,
        })
    }

    pub fn describe_deltas(&self) -> Result<Vec<u32>> {
        Ok(self.list("describe_deltas")?.unwrap_or_else(|| (0..=5).collect()))
    }

    pub fn describe_grouping(&self) -> Result<Grouping> {
        Ok(self.parsed("describe_grouping")?.unwrap_or(Grouping::Category))
    }

    pub fn describe_means_at(&self) -> Result<MeansAt> {
        Ok(self.parsed("describe_means_at")?.unwrap_or(MeansAt::EventYear))
    }

    pub fn dgp_config(&self) -> Result<DgpConfig> {
        let d = DgpConfig::default();
        let first: i32 = self.get_or("sim_cohort_first", 1996)?;
        let last: i32 = self.get_or("sim_cohort_last", 2017)?;
        let size: usize = self.get_or("sim_cohort_size", 100)?;
        if first > last {
            return Err(Error::Config(format!("empty simulated cohort range [{first}, {last}]")));
        }
        let effect = match self.raw("sim_effect").unwrap_or("constant") {
            "constant" => EffectModel::Constant(self.require("sim_effect_value")?),
            "decay" => EffectModel::HeterogeneousDecay {
                base: self.require("sim_effect_value")?,
                cohort_slope: self.get_or("sim_effect_cohort_slope", 0.0)?,
                decay: self.get_or("sim_effect_decay", 1.0)?,
            },
            "table" => {
                let path: PathBuf = self.require("sim_effect_table")?;
                EffectModel::Table(read_effect_table(&path, self.delimiter()?)?)
            }
            other => return Err(Error::Config(format!("key `sim_effect`: unknown model `{other}`"))),
        };
        let selection_keys = ["sim_selection_intercept", "sim_selection_education", "sim_selection_sex"];
        let selection = if selection_keys.iter().any(|k| self.raw(k).is_some()) {
            Some(Selection {
                intercept: self.get_or(selection_keys[0], 0.0)?,
                education: self.get_or(selection_keys[1], 0.0)?,
                sex: self.get_or(selection_keys[2], 0.0)?,
            })
        } else {
            None
        };
        let cfg = DgpConfig {
            years: (
                self.get_or("sim_year_first", d.years.0)?,
                self.get_or("sim_year_last", d.years.1)?,
            ),
            cohorts: (first..=last).map(|g| (g, size)).collect(),
            never_treated: self.get_or("sim_never_treated", d.never_treated)?,
            effect,
            anticipation: self.get_or("sim_anticipation", d.anticipation)?,
            birth_years: (
                self.get_or("birth_year_min", d.birth_years.0)?,
                self.get_or("birth_year_max", d.birth_years.1)?,
            ),
            base_wage: self.get_or("sim_base_wage", d.base_wage)?,
            person_sd: self.get_or("sim_person_sd", d.person_sd)?,
            year_trend: self.get_or("sim_year_trend", d.year_trend)?,
            year_sd: self.get_or("sim_year_sd", d.year_sd)?,
            noise_sd: self.get_or("sim_noise_sd", d.noise_sd)?,
            category: self.parsed("sim_category")?.unwrap_or(d.category),
            wage_level: self.get_or("sim_wage_level", d.wage_level)?,
            death_offset: self.get_or("sim_death_offset", d.death_offset)?,
            selection,
            seed: self.seed()?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_effect_table(path: &Path, delimiter: u8) -> Result<BTreeMap<(i32, i32), f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
            path: path.display().to_string(),
        })
    };
    let (gi, si, ti) = (col("g")?, col("s")?, col("tau")?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize, name: &str| -> Result<f64> {
            let v = rec.get(k).unwrap_or("").trim();
            v.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row: i + 1,
                column: name.to_string(),
                value: v.to_string(),
            })
        };
        let g = field(gi, "g")? as i32;
        let s = field(si, "s")? as i32;
        out.insert((g, s), field(ti, "tau")?);
    }
    Ok(out)
}
