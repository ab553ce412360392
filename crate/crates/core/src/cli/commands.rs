use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::did::{estimate_all_cells, Heatmap, PreparedPanel};
use crate::error::{Error, Result};
use crate::inference::bootstrap_prepared;
use crate::matching::run_matching;
use crate::panel::{
    assign_cohorts, death_proximity_table, load_deaths, load_panel, load_wage_index, sample_means, write_panel,
    write_wage_index, CohortTable, ExclusionReason, PanelDataset, PanelSchema,
};
use crate::synth::simulate_panel;
use crate::twfe::{compare_pretrends, estimate_dynamic_twfe};

use super::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// What a command read and wrote, written as `manifest_<command>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub metadata: BTreeMap<String, Value>,
    pub timings: Vec<Timing>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Shared state of one command run.
pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub out: PathBuf,
    pub delimiter: u8,
    verbose: bool,
    started: Instant,
    manifest: Manifest,
}

impl<'a> Run<'a> {
    pub fn new(command: &str, cfg: &'a RunConfig, workers: usize, verbose: bool) -> Result<Self> {
        let out = cfg.out_dir();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            cfg,
            delimiter: cfg.delimiter()?,
            out,
            verbose,
            started: Instant::now(),
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: cfg.seed()?,
                workers,
                config: cfg.values().clone(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                metadata: BTreeMap::new(),
                timings: Vec::new(),
            },
        })
    }

    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[{:>8.2}s] {msg}", self.started.elapsed().as_secs_f64());
        }
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.log(&format!("{stage} ..."));
        let t0 = Instant::now();
        let r = f()?;
        let seconds = t0.elapsed().as_secs_f64();
        self.manifest.timings.push(Timing {
            stage: stage.to_string(),
            seconds,
        });
        self.log(&format!("{stage} done in {seconds:.2}s"));
        Ok(r)
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.manifest.outputs.push(FileRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        self.log(&format!("wrote {}", path.display()));
        Ok(())
    }

    fn meta(&mut self, key: &str, value: Value) {
        self.manifest.metadata.insert(key.to_string(), value);
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.timings.push(Timing {
            stage: "total".into(),
            seconds: self.started.elapsed().as_secs_f64(),
        });
        let path = self.out_path(&format!("manifest_{}.json", self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }

    fn load_panel(&mut self) -> Result<PanelDataset> {
        let path = self.cfg.path_or_out("panel", "panel.csv");
        self.input("panel", &path)?;
        let schema = PanelSchema {
            delimiter: self.delimiter,
            ..PanelSchema::default()
        };
        let mut panel = self.timed("load panel", || load_panel(&path, &schema))?;
        if let Some(deaths) = self.cfg.raw("deaths").map(PathBuf::from) {
            self.input("deaths", &deaths)?;
            let records = load_deaths(&deaths, self.delimiter)?;
            panel = panel.with_deaths(&records, self.cfg.deaths_set()?)?;
        }
        self.log(&format!(
            "panel: {} persons, years {}-{}",
            panel.n_persons(),
            panel.first_year(),
            panel.last_year()
        ));
        Ok(panel)
    }

    fn load_cohorts(&mut self, panel: &PanelDataset) -> Result<CohortTable> {
        let path = self.cfg.path_or_out("cohorts", "cohorts.csv");
        self.input("cohorts", &path)?;
        CohortTable::read(&path, self.delimiter, panel)
    }
}

pub fn cmd_simulate(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.dgp_config()?;
    let sim = run.timed("simulate", || simulate_panel(&cfg))?;
    let d = run.delimiter;
    let panel = run.out_path("panel.csv");
    write_panel(&sim.panel, &panel, d)?;
    run.output("panel", &panel)?;
    let index = run.out_path("wage_index.csv");
    write_wage_index(&sim.wage_index, &index, d)?;
    run.output("wage_index", &index)?;
    let truth = run.out_path("truth.csv");
    sim.truth.write(&truth, d)?;
    run.output("truth", &truth)?;
    let intended = run.out_path("cohorts_intended.csv");
    sim.cohorts.write(&intended, d)?;
    run.output("cohorts_intended", &intended)?;
    run.meta("persons", json!(sim.panel.n_persons()));
    Ok(())
}

pub fn cmd_prepare(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let index_path = run.cfg.path_or_out("wage_index", "wage_index.csv");
    run.input("wage_index", &index_path)?;
    let index = load_wage_index(&index_path, run.delimiter)?;
    let filter = run.cfg.filter_spec()?;
    let cohorts = run.timed("assign cohorts", || assign_cohorts(&panel, &index, &filter))?;

    let path = run.cfg.path_or_out("cohorts", "cohorts.csv");
    cohorts.write(&path, run.delimiter)?;
    run.output("cohorts", &path)?;

    let counts = cohorts.exclusion_counts();
    let report = run.out_path("exclusions.csv");
    let mut w = csv::WriterBuilder::new().delimiter(run.delimiter).from_path(&report)?;
    w.write_record(["reason", "persons"])?;
    let included = counts.get(&None).copied().unwrap_or(0);
    w.write_record(["included".to_string(), included.to_string()])?;
    for reason in ExclusionReason::ALL {
        let n = counts.get(&Some(reason)).copied().unwrap_or(0);
        w.write_record([reason.tag().to_string(), n.to_string()])?;
    }
    w.write_record(["total".to_string(), cohorts.len().to_string()])?;
    w.flush().map_err(|e| Error::io(&report, e))?;
    run.output("exclusions", &report)?;
    run.meta("included", json!(included));
    run.meta("persons", json!(cohorts.len()));
    Ok(())
}

fn heatmap(run: &mut Run<'_>, panel: &PanelDataset, cohorts: &CohortTable) -> Result<Heatmap> {
    let spec = run.cfg.treatment_spec()?;
    let outcome = run.cfg.outcome()?;
    run.timed("estimate cells", || estimate_all_cells(panel, cohorts, &spec, outcome))
}

pub fn cmd_estimate(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let cohorts = run.load_cohorts(&panel)?;
    let h = heatmap(run, &panel, &cohorts)?;
    let rows = h.display_rows();
    let d = run.delimiter;
    let full = run.out_path("heatmap.csv");
    Heatmap::write_rows(&rows, &full, d, false)?;
    run.output("heatmap", &full)?;
    let masked = run.out_path("heatmap_masked.csv");
    Heatmap::write_rows(&rows, &masked, d, true)?;
    run.output("heatmap_masked", &masked)?;
    let (nc, ny) = h.display_dims();
    run.meta("cohort_range", json!([h.cohort_range.0, h.cohort_range.1]));
    run.meta("grid", json!([nc, ny]));
    run.meta("estimable", json!(h.estimates.len()));
    Ok(())
}

pub fn cmd_aggregate(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let cohorts = run.load_cohorts(&panel)?;
    let spec = run.cfg.treatment_spec()?;
    let scheme = run.cfg.scheme()?;
    let boot = run.cfg.bootstrap_spec()?;
    let outcome = run.cfg.outcome()?;
    spec.validate()?;
    let prepared = PreparedPanel::new(&panel, &cohorts, &spec, outcome);
    let result = run.timed("bootstrap", || bootstrap_prepared(&prepared, &spec, &scheme, &boot))?;
    let d = run.delimiter;
    let curve = run.out_path("event_study.csv");
    result.curve.write(&curve, d)?;
    run.output("event_study", &curve)?;
    let draws = run.out_path("bootstrap_draws.csv");
    result.write_draws(&draws, d)?;
    run.output("bootstrap_draws", &draws)?;
    run.meta("scheme", json!(result.curve.scheme_tag));
    run.meta("cohort_set", json!(result.curve.cohort_set));
    run.meta("replicates", json!(boot.replicates));
    run.meta("level", json!(boot.level));
    Ok(())
}

pub fn cmd_twfe(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let cohorts = run.load_cohorts(&panel)?;
    let spec = run.cfg.twfe_spec()?;
    let result = run.timed("dynamic twfe", || estimate_dynamic_twfe(&panel, &cohorts, &spec))?;
    let d = run.delimiter;
    let path = run.out_path("twfe.csv");
    result.to_curve().write(&path, d)?;
    run.output("twfe", &path)?;
    run.meta("omitted", json!(result.omitted));
    run.meta("dropped_covariates", json!(result.dropped_covariates));
    if run.cfg.flag("twfe_compare", false)? {
        let tspec = run.cfg.treatment_spec()?;
        let scheme = run.cfg.scheme()?;
        let boot = run.cfg.bootstrap_spec()?;
        let prepared = PreparedPanel::new(&panel, &cohorts, &tspec, spec.outcome);
        let staggered = run.timed("bootstrap", || bootstrap_prepared(&prepared, &tspec, &scheme, &boot))?;
        let report = compare_pretrends(&result, &staggered.curve, -tspec.anticipation);
        let path = run.out_path("pretrends.csv");
        report.write(&path, d)?;
        run.output("pretrends", &path)?;
        if let Some(w) = &report.warning {
            eprintln!("warning: {w}");
            run.meta("pretrend_warning", json!(w));
        }
    }
    Ok(())
}

pub fn cmd_match(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let cohorts = run.load_cohorts(&panel)?;
    let spec = run.cfg.match_spec()?;
    let result = run.timed("matching", || run_matching(&panel, &cohorts, &spec))?;
    let d = run.delimiter;
    let matches = run.out_path("matches.csv");
    result.write_matches(&matches, d)?;
    run.output("matches", &matches)?;
    let estimates = run.out_path("matched_estimates.csv");
    result.write_estimates(&estimates, d)?;
    run.output("matched_estimates", &estimates)?;
    let balance = run.out_path("balance.csv");
    result.write_balance(&balance, d)?;
    run.output("balance", &balance)?;
    let fits: BTreeMap<String, Value> = result
        .fits
        .iter()
        .map(|(g, f)| {
            (
                g.to_string(),
                json!({
                    "names": f.names,
                    "coefficients": f.coefficients,
                    "converged": f.converged,
                    "iterations": f.iterations,
                    "log_likelihood": f.log_likelihood,
                }),
            )
        })
        .collect();
    run.meta("propensity", json!(fits));
    run.meta("unmatched", json!(result.unmatched));
    for (g, f) in &result.fits {
        if !f.converged {
            eprintln!("warning: propensity model for cohort {g} did not converge");
        }
    }
    Ok(())
}

pub fn cmd_describe(run: &mut Run<'_>) -> Result<()> {
    let panel = run.load_panel()?;
    let index_path = run.cfg.path_or_out("wage_index", "wage_index.csv");
    run.input("wage_index", &index_path)?;
    let index = load_wage_index(&index_path, run.delimiter)?;
    let cohorts = run.load_cohorts(&panel)?;
    let deltas = run.cfg.describe_deltas()?;
    let set = run.cfg.filter_spec()?.death_set;
    let table = run.timed("proximity", || death_proximity_table(&panel, &index, &deltas, set))?;
    let d = run.delimiter;
    let path = run.out_path("proximity.csv");
    table.write(&path, d)?;
    run.output("proximity", &path)?;
    let means = sample_means(
        &panel,
        &cohorts,
        run.cfg.describe_grouping()?,
        run.cfg.describe_means_at()?,
    );
    let path = run.out_path("means.csv");
    means.write(&path, d)?;
    run.output("means", &path)?;
    Ok(())
}
