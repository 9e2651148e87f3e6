//! `duks-sim` command line: config resolution, subcommands and artifacts.
//!
//! Settings resolve in three layers: built-in defaults, then a config file
//! (`--config`, TOML with dotted sections or a previous `manifest.json`),
//! then individual flags. Every config key has a flag of the same dotted
//! name, e.g. `--noise.alpha_exponent 2`.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage error, 3 divergence,
//! 4 a check missed its window.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::duks::SimConfig;
use crate::error::{Error, Result};
use crate::landau::ApproxOrder;
use crate::noise::NoiseScaling;
use crate::spectrum::WeightedNormParams;
use crate::validate::{
    coupled_run, epsilon_scaling_study, ou_statistics_check, pathwise_error,
    residual_order_study, Check, OuCheckSpec, StudyOptions,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

pub const MANIFEST_NAME: &str = "manifest.json";
const DEFAULT_STUDY_EPS: [f64; 3] = [0.2, 0.1, 0.05];

/// Fully resolved run settings. This is what the manifest records.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub eps: Vec<f64>,
    eps_explicit: bool,
    pub t0: f64,
    pub seed: u64,
    pub paths: Option<usize>,
    pub order: ApproxOrder,
    pub a1: Complex64,
    pub a3: Complex64,
    pub n: usize,
    pub dt: f64,
    pub cadence: f64,
    /// Physical grid size for sup norms; 0 selects `8N`.
    pub grid_points: usize,
    pub noise: NoiseScaling,
    pub r: f64,
    pub ou_tail_paths: usize,
    pub ou_zsup_paths: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            eps: vec![sim.eps],
            eps_explicit: false,
            t0: sim.t0,
            seed: sim.seed,
            paths: None,
            order: ApproxOrder::First,
            a1: sim.a1,
            a3: sim.a3,
            n: sim.n,
            dt: sim.dt,
            cadence: sim.cadence,
            grid_points: 0,
            noise: sim.scaling,
            r: WeightedNormParams::default().r(),
            ou_tail_paths: 1_000,
            ou_zsup_paths: 200,
        }
    }
}

/// Config keys accepted in files and as `--<key>` flags.
pub const CONFIG_KEYS: [&str; 18] = [
    "eps",
    "t0",
    "seed",
    "paths",
    "order",
    "a1",
    "a3",
    "grid.n",
    "grid.dt",
    "grid.cadence",
    "grid.points",
    "noise.alpha_exponent",
    "noise.c_critical_exponent",
    "noise.c_stable_exponent",
    "noise.amplitude",
    "norm.r",
    "ou.tail_paths",
    "ou.zsup_paths",
];

fn parse_f64(key: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{s}'")))
}

fn parse_int<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{s}'")))
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    let s = s.trim().trim_start_matches('[').trim_end_matches(']');
    s.split(',').map(|x| parse_f64(key, x)).collect()
}

/// `"re"` or `"re,im"`.
fn parse_complex(key: &str, s: &str) -> Result<Complex64> {
    match parse_list(key, s)?.as_slice() {
        [re] => Ok(Complex64::new(*re, 0.0)),
        [re, im] => Ok(Complex64::new(*re, *im)),
        _ => Err(Error::Config(format!("{key}: expected 're' or 're,im', got '{s}'"))),
    }
}

impl Settings {
    /// Applies one `key = value` pair given as text.
    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "eps" => {
                self.eps = parse_list(key, raw)?;
                self.eps_explicit = true;
            }
            "t0" => self.t0 = parse_f64(key, raw)?,
            "seed" => self.seed = parse_int(key, raw)?,
            "paths" => self.paths = Some(parse_int(key, raw)?),
            "order" => self.order = raw.trim().parse()?,
            "a1" => self.a1 = parse_complex(key, raw)?,
            "a3" => self.a3 = parse_complex(key, raw)?,
            "grid.n" => self.n = parse_int(key, raw)?,
            "grid.dt" => self.dt = parse_f64(key, raw)?,
            "grid.cadence" => self.cadence = parse_f64(key, raw)?,
            "grid.points" => self.grid_points = parse_int(key, raw)?,
            "noise.alpha_exponent" => self.noise.alpha_exponent = parse_f64(key, raw)?,
            "noise.c_critical_exponent" => self.noise.c_critical_exponent = parse_f64(key, raw)?,
            "noise.c_stable_exponent" => self.noise.c_stable_exponent = parse_f64(key, raw)?,
            "noise.amplitude" => self.noise.amplitude = parse_f64(key, raw)?,
            "norm.r" => self.r = parse_f64(key, raw)?,
            "ou.tail_paths" => self.ou_tail_paths = parse_int(key, raw)?,
            "ou.zsup_paths" => self.ou_zsup_paths = parse_int(key, raw)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a flat or nested JSON object of settings.
    pub fn apply_value(&mut self, value: &Value) -> Result<()> {
        let mut flat = BTreeMap::new();
        flatten("", value, &mut flat)?;
        for (key, raw) in flat {
            self.apply(&key, &raw)?;
        }
        Ok(())
    }

    /// Loads a TOML config, or the `config` block of a JSON manifest.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value = if path.extension().is_some_and(|e| e == "json") {
            let manifest: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            manifest
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: no 'config' block", path.display())))?
        } else {
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(table).map_err(|e| Error::Serde(e.to_string()))?
        };
        self.apply_value(&value)
    }

    /// Flat dotted-key map; feeding it back through [`Settings::apply_value`]
    /// reproduces these settings exactly.
    pub fn to_flat(&self) -> BTreeMap<&'static str, Value> {
        let c = |z: Complex64| json!([z.re, z.im]);
        BTreeMap::from([
            ("eps", json!(self.eps)),
            ("t0", json!(self.t0)),
            ("seed", json!(self.seed)),
            ("paths", json!(self.paths)),
            ("order", json!(self.order.to_string())),
            ("a1", c(self.a1)),
            ("a3", c(self.a3)),
            ("grid.n", json!(self.n)),
            ("grid.dt", json!(self.dt)),
            ("grid.cadence", json!(self.cadence)),
            ("grid.points", json!(self.grid_points)),
            ("noise.alpha_exponent", json!(self.noise.alpha_exponent)),
            ("noise.c_critical_exponent", json!(self.noise.c_critical_exponent)),
            ("noise.c_stable_exponent", json!(self.noise.c_stable_exponent)),
            ("noise.amplitude", json!(self.noise.amplitude)),
            ("norm.r", json!(self.r)),
            ("ou.tail_paths", json!(self.ou_tail_paths)),
            ("ou.zsup_paths", json!(self.ou_zsup_paths)),
        ])
    }

    pub fn sim_config(&self, eps: f64) -> Result<SimConfig> {
        let cfg = SimConfig {
            eps,
            t0: self.t0,
            n: self.n,
            dt: self.dt,
            cadence: self.cadence,
            scaling: self.noise.with_eps(eps),
            seed: self.seed,
            a1: self.a1,
            a3: self.a3,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn study_options(&self) -> Result<StudyOptions> {
        Ok(StudyOptions {
            norm: WeightedNormParams::new(self.r)?,
            order: self.order,
            grid: self.grid_points,
        })
    }

    fn single_eps(&self) -> Result<f64> {
        match self.eps.as_slice() {
            [eps] => Ok(*eps),
            list => Err(Error::Config(format!(
                "eps: this subcommand takes one value, got {}",
                list.len()
            ))),
        }
    }

    /// Uses the study default ε list unless one was given.
    fn study_eps(&mut self) -> Result<Vec<f64>> {
        if !self.eps_explicit {
            self.eps = DEFAULT_STUDY_EPS.to_vec();
        }
        let mut distinct = self.eps.clone();
        distinct.sort_by(|a, b| a.total_cmp(b));
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::Config(format!(
                "eps: at least 3 distinct values required, got {}",
                distinct.len()
            )));
        }
        Ok(self.eps.clone())
    }

    fn resolve_paths(&mut self, default: usize) -> Result<usize> {
        let paths = self.paths.unwrap_or(default);
        if paths == 0 {
            return Err(Error::Config("paths: must be positive".into()));
        }
        self.paths = Some(paths);
        Ok(paths)
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        Value::Null => {}
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|x| x.to_string()).collect();
            out.insert(prefix.to_string(), parts.join(","));
        }
        scalar => {
            out.insert(prefix.to_string(), scalar.to_string());
        }
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(
    name = "duks-sim",
    version,
    about = "Stochastic doubly unstable Kuramoto-Sivashinsky simulation and amplitude-equation checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One coupled full + amplitude path: trajectory CSVs and error report.
    Simulate(CommonArgs),
    /// Error ensemble over several eps values with slope fits.
    Scaling(CommonArgs),
    /// Monte-Carlo moments, tail frequencies and C_Z of the OU lattice.
    #[command(name = "ou-check")]
    OuCheck(CommonArgs),
    /// Residual orders along the amplitude ansatz.
    Residuals(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Simulate(_) => "simulate",
            Self::Scaling(_) => "scaling",
            Self::OuCheck(_) => "ou-check",
            Self::Residuals(_) => "residuals",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Self::Simulate(a) | Self::Scaling(a) | Self::OuCheck(a) | Self::Residuals(a) => a,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config with dotted sections, or a manifest.json to rerun.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for path ensembles (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Switch the noise off (noise.amplitude = 0).
    #[arg(long)]
    noise_off: bool,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    quiet: bool,

    /// eps value, or a comma-separated list for studies.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    t0: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    /// Ansatz order for E_sup_v.
    #[arg(long, value_parser = ["first", "second"])]
    order: Option<String>,
    /// Initial A1 as "re" or "re,im".
    #[arg(long, allow_hyphen_values = true)]
    a1: Option<String>,
    /// Initial A3 as "re" or "re,im".
    #[arg(long, allow_hyphen_values = true)]
    a3: Option<String>,
    #[arg(long = "grid.n")]
    grid_n: Option<String>,
    #[arg(long = "grid.dt")]
    grid_dt: Option<String>,
    #[arg(long = "grid.cadence")]
    grid_cadence: Option<String>,
    #[arg(long = "grid.points")]
    grid_points: Option<String>,
    #[arg(long = "noise.alpha_exponent")]
    noise_alpha_exponent: Option<String>,
    #[arg(long = "noise.c_critical_exponent")]
    noise_c_critical_exponent: Option<String>,
    #[arg(long = "noise.c_stable_exponent")]
    noise_c_stable_exponent: Option<String>,
    #[arg(long = "noise.amplitude")]
    noise_amplitude: Option<String>,
    #[arg(long = "norm.r")]
    norm_r: Option<String>,
    #[arg(long = "ou.tail_paths")]
    ou_tail_paths: Option<String>,
    #[arg(long = "ou.zsup_paths")]
    ou_zsup_paths: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 18] {
        [
            ("eps", &self.eps),
            ("t0", &self.t0),
            ("seed", &self.seed),
            ("paths", &self.paths),
            ("order", &self.order),
            ("a1", &self.a1),
            ("a3", &self.a3),
            ("grid.n", &self.grid_n),
            ("grid.dt", &self.grid_dt),
            ("grid.cadence", &self.grid_cadence),
            ("grid.points", &self.grid_points),
            ("noise.alpha_exponent", &self.noise_alpha_exponent),
            ("noise.c_critical_exponent", &self.noise_c_critical_exponent),
            ("noise.c_stable_exponent", &self.noise_c_stable_exponent),
            ("noise.amplitude", &self.noise_amplitude),
            ("norm.r", &self.norm_r),
            ("ou.tail_paths", &self.ou_tail_paths),
            ("ou.zsup_paths", &self.ou_zsup_paths),
        ]
    }

    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                s.apply(key, v)?;
            }
        }
        if self.noise_off {
            s.noise.amplitude = 0.0;
        }
        Ok(s)
    }
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// CSV with a leading comment line naming the manifest.
    fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# manifest={MANIFEST_NAME}\n{body}");
        self.raw(name, text.as_bytes())
    }

    /// JSON object with a `manifest` field prepended.
    fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<()> {
        let mut value = serde_json::to_value(report).map_err(|e| Error::Serde(e.to_string()))?;
        if let Value::Object(map) = &mut value {
            let mut with_ref = serde_json::Map::new();
            with_ref.insert("manifest".into(), json!(MANIFEST_NAME));
            with_ref.append(map);
            value = Value::Object(with_ref);
        }
        let mut text =
            serde_json::to_string_pretty(&value).map_err(|e| Error::Serde(e.to_string()))?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    tool: &'static str,
    version: &'static str,
    seed: u64,
    out_dir: String,
    config: BTreeMap<&'static str, Value>,
    outputs: Vec<String>,
    exit_code: u8,
    started_unix_s: f64,
    wall_clock_s: f64,
}

fn progress_line(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn checks_exit(checks: &[Check]) -> u8 {
    if checks.iter().all(|c| c.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_simulate(s: &mut Settings, out: &mut Outputs) -> Result<u8> {
    let cfg = s.sim_config(s.single_eps()?)?;
    let opts = s.study_options()?;
    match coupled_run(&cfg, 0) {
        Ok((traj, amp)) => {
            let metrics = pathwise_error(&traj, &amp, cfg.eps, &opts)?;
            out.csv("trajectory.csv", &traj.to_csv())?;
            out.csv("amplitudes.csv", &amp.to_csv())?;
            out.json(
                "error_report.json",
                &json!({
                    "eps": cfg.eps,
                    "seed": cfg.seed,
                    "path": 0,
                    "r": opts.norm.r(),
                    "order": opts.order,
                    "metrics": metrics,
                    "aborted": Value::Null,
                }),
            )?;
            Ok(EXIT_OK)
        }
        Err(Error::Divergence { k, t, magnitude }) => {
            out.json(
                "error_report.json",
                &json!({
                    "eps": cfg.eps,
                    "seed": cfg.seed,
                    "path": 0,
                    "metrics": Value::Null,
                    "aborted": { "k": k, "t": t, "magnitude": magnitude },
                }),
            )?;
            eprintln!("divergence at mode k={k}, t={t}: |value| = {magnitude}");
            Ok(EXIT_DIVERGENCE)
        }
        Err(e) => Err(e),
    }
}

fn cmd_scaling(s: &mut Settings, out: &mut Outputs, quiet: bool) -> Result<u8> {
    let eps = s.study_eps()?;
    let paths = s.resolve_paths(32)?;
    let base = s.sim_config(eps[0])?;
    for &e in &eps {
        s.sim_config(e)?;
    }
    let opts = s.study_options()?;
    let report = |e: f64, p: u64, done: usize, total: usize| {
        progress_line(quiet, &format!("[{done}/{total}] eps={e} path={p}"));
    };
    let table = epsilon_scaling_study(&base, &eps, paths, &opts, Some(&report))?;
    let checks = table.checks();

    let mut rows = String::from(
        "eps,paths,completed,e_r_median,e_r_p95,e_r_median_se,e_sup_v_median,e_sup_v_p95,e_sup_v_median_se,e_sup_u_median,e_sup_u_p95,e_sup_u_median_se,success_fraction\n",
    );
    for r in &table.rows {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.eps,
            r.paths,
            r.completed,
            r.e_r.median,
            r.e_r.p95,
            r.e_r.median_se,
            r.e_sup_v.median,
            r.e_sup_v.p95,
            r.e_sup_v.median_se,
            r.e_sup_u.median,
            r.e_sup_u.p95,
            r.e_sup_u.median_se,
            r.success_fraction
        ));
    }
    out.csv("scaling_rows.csv", &rows)?;
    out.csv("scaling_paths.csv", &table.records_csv())?;
    out.json("scaling.json", &json!({ "table": table, "checks": checks }))?;
    for c in &checks {
        progress_line(quiet, &format!("{}: {} {} -> {}", c.name, c.value, c.window, pass_word(c.pass)));
    }
    if !table.aborted.is_empty() {
        return Ok(EXIT_DIVERGENCE);
    }
    Ok(checks_exit(&checks))
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_ou_check(s: &mut Settings, out: &mut Outputs, quiet: bool) -> Result<u8> {
    let eps = s.single_eps()?;
    let cfg = s.sim_config(eps)?;
    let moment_paths = s.resolve_paths(10_000)?;
    let mut spec = OuCheckSpec::new(cfg.scaling, cfg.seed, cfg.t0);
    spec.dt = cfg.dt;
    spec.moment_paths = moment_paths;
    spec.tail_paths = s.ou_tail_paths;
    spec.zsup_paths = s.ou_zsup_paths;
    spec.zsup_n = cfg.n;
    spec.zsup_r = s.r;
    progress_line(
        quiet,
        &format!(
            "ou-check: {} moment paths, {} tail paths, {} C_Z paths",
            spec.moment_paths, spec.tail_paths, spec.zsup_paths
        ),
    );
    let report = ou_statistics_check(&spec)?;
    let checks = report.checks();

    let mut moments = String::from("k,t,empirical,standard_error,expected,pass\n");
    for m in &report.moments {
        moments.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.k, m.t, m.empirical, m.standard_error, m.expected, m.pass
        ));
    }
    let mut tails = String::from("k,t,threshold,bound,empirical,binomial_se,pass\n");
    for t in &report.tails {
        tails.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.k, t.t, t.threshold, t.bound, t.empirical, t.binomial_se, t.pass
        ));
    }
    out.csv("ou_moments.csv", &moments)?;
    out.csv("ou_tails.csv", &tails)?;
    out.json("ou_check.json", &json!({ "report": report, "checks": checks }))?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    progress_line(quiet, &format!("{} checks, {failed} failed", checks.len()));
    Ok(checks_exit(&checks))
}

fn cmd_residuals(s: &mut Settings, out: &mut Outputs, quiet: bool) -> Result<u8> {
    let eps = s.study_eps()?;
    let paths = s.resolve_paths(8)?;
    let base = s.sim_config(eps[0])?;
    for &e in &eps {
        s.sim_config(e)?;
    }
    let table = residual_order_study(&base, &eps, paths)?;
    let checks = table.checks();

    let mut csv = String::from("eps");
    for k in &table.modes {
        csv.push_str(&format!(",res_k{k}"));
    }
    for j in &table.slaved_modes {
        csv.push_str(&format!(",reduced_j{j}"));
    }
    csv.push('\n');
    for row in &table.rows {
        csv.push_str(&row.eps.to_string());
        for v in row.full_median.iter().chain(&row.integrated_reduced_median) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    out.csv("residuals.csv", &csv)?;
    out.json("residuals.json", &json!({ "table": table, "checks": checks }))?;
    for c in &checks {
        progress_line(quiet, &format!("{}: {} {} -> {}", c.name, c.value, c.window, pass_word(c.pass)));
    }
    Ok(checks_exit(&checks))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_INTERNAL,
    }
}

fn dispatch(command: &Command) -> Result<u8> {
    let args = command.args();
    let mut settings = args.settings()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let mut out = Outputs::new(&args.out_dir)?;

    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("workers: must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;

    let quiet = args.quiet;
    let code = pool.install(|| match command {
        Command::Simulate(_) => cmd_simulate(&mut settings, &mut out),
        Command::Scaling(_) => cmd_scaling(&mut settings, &mut out, quiet),
        Command::OuCheck(_) => cmd_ou_check(&mut settings, &mut out, quiet),
        Command::Residuals(_) => cmd_residuals(&mut settings, &mut out, quiet),
    })?;

    let manifest = Manifest {
        subcommand: command.name(),
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: settings.seed,
        out_dir: args.out_dir.display().to_string(),
        config: settings.to_flat(),
        outputs: out.written.clone(),
        exit_code: code,
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    write_atomic(&args.out_dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(code)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
