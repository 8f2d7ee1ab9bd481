//! Study drivers: base case, correlation sweep and weekly recalibration,
//! with the summary statistics and the CSV/JSON files they emit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{calibrate_black_scholes, calibrate_dupire, DupireConfig};
use crate::error::{Error, Result};
use crate::heston::{standard_lattice, HestonParams, QuoteSurface};
use crate::mc::{
    apply_rules, CachePolicy, ExerciseRule, HestonSimulator, PayoffSampleSet, RecalibratedRule, RecalibrationPlan,
    Rule1D, Rule2D,
};
use crate::pde1d::{price_american_put_1d, ConstantVol, ExerciseBoundary1D, Solver1DConfig};
use crate::pde2d::{price_american_put_heston, ExerciseBoundary2D, HestonGridConfig, MCSConfig};

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub se: f64,
    pub q3: f64,
    pub max: f64,
}

pub const QUARTILE_CONVENTION: &str = "type 7: linear interpolation of order statistics at (n - 1) p";

pub fn summarize(x: &[f64]) -> Result<SummaryStats> {
    if x.is_empty() {
        return Err(Error::InvalidInput("summary of an empty sample".into()));
    }
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { x.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let s = sorted(x);
    Ok(SummaryStats {
        n,
        median: quantile_sorted(&s, 0.5),
        mean,
        se: (var / n as f64).sqrt(),
        q3: quantile_sorted(&s, 0.75),
        max: s[n - 1],
    })
}

/// Matched empirical quantiles at levels `k / (n_quantiles + 1)`.
pub fn qq_pairs(a: &[f64], b: &[f64], n_quantiles: usize) -> Result<Vec<(f64, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("quantile pairs need two nonempty samples".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    Ok((1..=n_quantiles)
        .map(|k| {
            let p = k as f64 / (n_quantiles + 1) as f64;
            (quantile_sorted(&sa, p), quantile_sorted(&sb, p))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub heston: HestonParams,
    pub strike: f64,
    pub maturity: f64,
    pub quote_strikes: Vec<f64>,
    pub quote_maturities: Vec<f64>,
    /// Reference quote for the Black-Scholes fit.
    pub bs_ref_strike: f64,
    pub bs_ref_maturity: f64,
    /// Time steps shared by paths and all boundary solvers.
    pub n_steps: usize,
    pub solver_1d: Solver1DConfig,
    pub dupire: DupireConfig,
    pub heston_grid: HestonGridConfig,
    pub mcs: MCSConfig,
    pub paths: usize,
    pub seed: u64,
    pub rhos: Vec<f64>,
    pub recal_interval_days: f64,
    /// Volatility rounding before boundary solves; 0 solves every value.
    pub recal_sigma_step: f64,
    pub iv_density_dates: Vec<f64>,
    pub qq_quantiles: usize,
    pub scatter_paths: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (quote_strikes, quote_maturities) = standard_lattice();
        Self {
            heston: HestonParams::base_case(),
            strike: 10.0,
            maturity: 1.0,
            quote_strikes,
            quote_maturities,
            bs_ref_strike: 10.0,
            bs_ref_maturity: 1.0,
            n_steps: 300,
            solver_1d: Solver1DConfig::default(),
            dupire: DupireConfig::default(),
            heston_grid: HestonGridConfig::default(),
            mcs: MCSConfig::default(),
            paths: 100_000,
            seed: 20240601,
            rhos: vec![-0.5, 0.0, 0.5],
            recal_interval_days: 7.0,
            recal_sigma_step: 1e-3,
            iv_density_dates: vec![0.02, 0.347, 0.813],
            qq_quantiles: 99,
            scatter_paths: 10_000,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.heston.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.strike > 0.0 && self.maturity > 0.0) {
            return bad("strike and maturity must be positive".into());
        }
        if self.n_steps == 0 || self.paths == 0 {
            return bad("n_steps and paths must be positive".into());
        }
        let t_max = self.quote_maturities.iter().copied().fold(f64::NAN, f64::max);
        if (t_max - self.maturity).abs() > 1e-12 {
            return bad(format!("longest quoted maturity {t_max} must equal the option maturity {}", self.maturity));
        }
        if self.quote_strikes.len() < 2 || self.quote_maturities.len() < 2 {
            return bad("quote lattice needs at least two strikes and two maturities".into());
        }
        if !self.quote_strikes.contains(&self.bs_ref_strike) || !self.quote_maturities.contains(&self.bs_ref_maturity) {
            return bad("Black-Scholes reference quote is not on the lattice".into());
        }
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(r.abs() < 1.0)) {
            return bad("rhos must be a nonempty list in (-1, 1)".into());
        }
        if !(self.recal_interval_days > 0.0) || !(self.recal_sigma_step >= 0.0) {
            return bad("recalibration interval must be positive and the sigma step nonnegative".into());
        }
        if self.qq_quantiles == 0 {
            return bad("qq_quantiles must be positive".into());
        }
        self.solver_1d.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mcs.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over everything but the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn solver(&self) -> Solver1DConfig {
        Solver1DConfig { n1: self.n_steps, ..self.solver_1d }
    }

    fn mcs_cfg(&self) -> MCSConfig {
        MCSConfig { m3: self.n_steps, ..self.mcs }
    }

    fn cache_policy(&self) -> CachePolicy {
        if self.recal_sigma_step > 0.0 {
            CachePolicy::Quantized(self.recal_sigma_step)
        } else {
            CachePolicy::Exact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub payoff: SummaryStats,
    pub exercised_fraction: f64,
    /// Mean stopping time with unexercised paths at `T`.
    pub mean_tau: f64,
}

impl RuleOutcome {
    fn from_samples(set: &PayoffSampleSet) -> Result<Self> {
        let n = set.len() as f64;
        Ok(Self {
            rule: set.rule.clone(),
            payoff: summarize(&set.payoff)?,
            exercised_fraction: set.stop_step.iter().filter(|s| s.is_some()).count() as f64 / n,
            mean_tau: set.tau.iter().sum::<f64>() / n,
        })
    }
}

/// Boundaries and calibrations of the three models for one parameter set.
pub struct ModelSetup {
    pub quotes: QuoteSurface,
    pub bs_sigma: f64,
    pub dupire_error: f64,
    pub bs: ExerciseBoundary1D,
    pub dupire: ExerciseBoundary1D,
    pub heston: ExerciseBoundary2D,
}

pub fn build_models(cfg: &ExperimentConfig, p: &HestonParams, out: Option<&Path>) -> Result<ModelSetup> {
    let quotes = QuoteSurface::from_heston(p, &cfg.quote_strikes, &cfg.quote_maturities)?;
    let bs_sigma = calibrate_black_scholes(&quotes, cfg.bs_ref_strike, cfg.bs_ref_maturity)?;
    let solver = cfg.solver();
    let dcfg = DupireConfig { solver, ..cfg.dupire };
    let (dupire, heston) = rayon::join(
        || calibrate_dupire(&quotes, &dcfg),
        || price_american_put_heston(p, &cfg.heston_grid, &cfg.mcs_cfg(), cfg.strike, cfg.maturity),
    );
    let (lv, report) = dupire?;
    let (_, heston) = heston?;
    let (_, bs) = price_american_put_1d(&ConstantVol(bs_sigma), &solver, cfg.strike, cfg.maturity, p.r)?;
    let (_, dupire) = price_american_put_1d(&lv, &solver, cfg.strike, cfg.maturity, p.r)?;
    if let Some(dir) = out {
        quotes.write_csv(&dir.join("quotes.csv"))?;
        report.write_json(&dir.join("calibration_report.json"))?;
        lv.write_csv(&dir.join("local_vol.csv"))?;
        bs.write_csv(&dir.join("boundary_bs.csv"))?;
        dupire.write_csv(&dir.join("boundary_dupire.csv"))?;
        heston.write_csv(&dir.join("boundary_heston.csv"), true)?;
    }
    Ok(ModelSetup { quotes, bs_sigma, dupire_error: report.mean_rel_error, bs, dupire, heston })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseCaseSummary {
    pub rho: f64,
    pub bs_sigma: f64,
    pub dupire_mean_rel_error: f64,
    pub rules: Vec<RuleOutcome>,
}

/// One pipeline run: the summary plus the samples and boundaries behind it.
pub struct BaseCaseResult {
    pub summary: BaseCaseSummary,
    pub payoffs: Vec<PayoffSampleSet>,
    pub models: ModelSetup,
}

pub const RULES: [&str; 3] = ["heston", "bs", "dupire"];

fn write_qq(path: &Path, pairs: &[(f64, f64)], cols: [&str; 2]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(cols)?;
    for (a, b) in pairs {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn exercised_taus(set: &PayoffSampleSet) -> Vec<f64> {
    set.stop_step.iter().zip(&set.tau).filter(|(s, _)| s.is_some()).map(|(_, &t)| t).collect()
}

/// Payoff and stopping-time QQ files for each rule against the first.
fn write_qq_files(dir: &Path, sets: &[PayoffSampleSet], nq: usize) -> Result<()> {
    let base = &sets[0];
    for other in &sets[1..] {
        let stem = format!("{}_vs_{}", base.rule, other.rule);
        let cols = [base.rule.as_str(), other.rule.as_str()];
        write_qq(&dir.join(format!("qq_payoff_{stem}.csv")), &qq_pairs(&base.payoff, &other.payoff, nq)?, cols)?;
        write_qq(&dir.join(format!("qq_tau_censored_{stem}.csv")), &qq_pairs(&base.tau, &other.tau, nq)?, cols)?;
        let (a, b) = (exercised_taus(base), exercised_taus(other));
        if !a.is_empty() && !b.is_empty() {
            write_qq(&dir.join(format!("qq_tau_exercised_{stem}.csv")), &qq_pairs(&a, &b, nq)?, cols)?;
        }
    }
    Ok(())
}

fn write_scatter(path: &Path, sets: &[PayoffSampleSet], n: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["path_id".to_string()];
    head.extend(sets.iter().map(|s| format!("payoff_{}", s.rule)));
    head.extend(sets.iter().map(|s| format!("tau_{}", s.rule)));
    w.write_record(&head)?;
    for id in 0..n.min(sets[0].len()) {
        let mut row = vec![id.to_string()];
        row.extend(sets.iter().map(|s| s.payoff[id].to_string()));
        row.extend(sets.iter().map(|s| s.tau[id].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let text = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml()?);
    fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

/// Quotes, calibrations, three boundaries, one shared path stream, three rules.
pub fn run_pipeline(cfg: &ExperimentConfig, p: &HestonParams, dir: Option<&Path>) -> Result<BaseCaseResult> {
    if let Some(d) = dir {
        prepare_dir(d)?;
    }
    let models = build_models(cfg, p, dir)?;
    let sim = HestonSimulator::new(*p, cfg.paths, cfg.n_steps, cfg.maturity, cfg.seed)?;
    let rules: [&dyn ExerciseRule; 3] = [
        &Rule2D { boundary: &models.heston, tag: RULES[0].into() },
        &Rule1D { boundary: &models.bs, tag: RULES[1].into() },
        &Rule1D { boundary: &models.dupire, tag: RULES[2].into() },
    ];
    let payoffs = apply_rules(&sim, &rules, cfg.strike, p.r);
    let summary = BaseCaseSummary {
        rho: p.rho,
        bs_sigma: models.bs_sigma,
        dupire_mean_rel_error: models.dupire_error,
        rules: payoffs.iter().map(RuleOutcome::from_samples).collect::<Result<_>>()?,
    };
    if let Some(d) = dir {
        write_qq_files(d, &payoffs, cfg.qq_quantiles)?;
        write_scatter(&d.join("scatter.csv"), &payoffs, cfg.scatter_paths)?;
        write_json(&d.join("rules.json"), &summary)?;
    }
    Ok(BaseCaseResult { summary, payoffs, models })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsTable {
    pub quartile_convention: String,
    pub columns: Vec<String>,
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub q3: Vec<f64>,
    pub max: Vec<f64>,
}

impl StatsTable {
    fn new(names: &[String], stats: &[SummaryStats]) -> Self {
        Self {
            quartile_convention: QUARTILE_CONVENTION.into(),
            columns: names.to_vec(),
            median: stats.iter().map(|s| s.median).collect(),
            mean: stats.iter().map(|s| s.mean).collect(),
            se: stats.iter().map(|s| s.se).collect(),
            q3: stats.iter().map(|s| s.q3).collect(),
            max: stats.iter().map(|s| s.max).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub paths: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_case: Option<StatsTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs_sigma_by_rho: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_by_rho: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_by_rho: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_by_rho: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recalibration: Option<StatsTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dupire_mean_rel_error: Option<f64>,
}

impl Summary {
    fn for_config(cfg: &ExperimentConfig) -> Self {
        Self { config_hash: cfg.hash(), paths: cfg.paths, seed: cfg.seed, ..Default::default() }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?)
    }
}

fn rule_names(outcomes: &[RuleOutcome]) -> Vec<String> {
    outcomes.iter().map(|o| o.rule.clone()).collect()
}

pub fn run_base_case(cfg: &ExperimentConfig) -> Result<(Summary, BaseCaseResult)> {
    cfg.validate()?;
    let dir = cfg.out_dir.join("base");
    let res = run_pipeline(cfg, &cfg.heston, Some(&dir))?;
    write_config(&dir, cfg)?;
    let mut summary = Summary::for_config(cfg);
    let stats: Vec<SummaryStats> = res.summary.rules.iter().map(|o| o.payoff).collect();
    summary.base_case = Some(StatsTable::new(&rule_names(&res.summary.rules), &stats));
    summary.dupire_mean_rel_error = Some(res.summary.dupire_mean_rel_error);
    write_json(&dir.join("summary.json"), &summary)?;
    write_top_summary(&cfg.out_dir)?;
    Ok((summary, res))
}

fn rho_key(rho: f64) -> String {
    format!("{rho:+.2}")
}

pub struct CorrelationResult {
    pub rhos: Vec<f64>,
    pub runs: Vec<BaseCaseResult>,
}

/// Heston boundary sample points written for the cross-correlation comparison.
const CROSS_V: [f64; 5] = [0.0625, 0.1, 0.16, 0.25, 0.4];

pub fn run_correlation_sweep(cfg: &ExperimentConfig) -> Result<(Summary, CorrelationResult)> {
    cfg.validate()?;
    let root = cfg.out_dir.join("corr");
    prepare_dir(&root)?;
    let mut runs = Vec::with_capacity(cfg.rhos.len());
    for &rho in &cfg.rhos {
        let p = cfg.heston.with_rho(rho);
        let dir = root.join(format!("rho_{}", rho_key(rho)));
        runs.push(run_pipeline(cfg, &p, Some(&dir))?);
    }
    write_config(&root, cfg)?;

    let mut w = csv::Writer::from_path(root.join("boundaries_by_rho.csv"))?;
    w.write_record(["rho", "model", "t", "v", "boundary_price"])?;
    for (rho, run) in cfg.rhos.iter().zip(&runs) {
        let m = &run.models;
        for (n, &t) in m.bs.t.iter().enumerate() {
            w.write_record([rho.to_string(), "bs".into(), t.to_string(), String::new(), m.bs.boundary[n].to_string()])?;
            w.write_record([rho.to_string(), "dupire".into(), t.to_string(), String::new(), m.dupire.boundary[n].to_string()])?;
        }
        for (n, &t) in m.heston.t.iter().enumerate() {
            for v in CROSS_V {
                let b = m.heston.eval_at_step(n, v);
                w.write_record([rho.to_string(), "heston".into(), t.to_string(), v.to_string(), b.to_string()])?;
            }
        }
    }
    w.flush()?;

    // stopping times of each model across correlations
    for (k, name) in RULES.iter().enumerate() {
        for i in 1..runs.len() {
            let a = exercised_taus(&runs[0].payoffs[k]);
            let b = exercised_taus(&runs[i].payoffs[k]);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let path = root.join(format!("qq_tau_{name}_rho{}_vs_rho{}.csv", rho_key(cfg.rhos[0]), rho_key(cfg.rhos[i])));
            write_qq(&path, &qq_pairs(&a, &b, cfg.qq_quantiles)?, ["first_rho", "other_rho"])?;
        }
    }

    let mut summary = Summary::for_config(cfg);
    let table = |f: &dyn Fn(&RuleOutcome) -> f64| -> BTreeMap<String, Vec<f64>> {
        cfg.rhos.iter().zip(&runs).map(|(&r, run)| (rho_key(r), run.summary.rules.iter().map(f).collect())).collect()
    };
    summary.mean_by_rho = Some(table(&|o| o.payoff.mean));
    summary.se_by_rho = Some(table(&|o| o.payoff.se));
    summary.median_by_rho = Some(table(&|o| o.payoff.median));
    summary.bs_sigma_by_rho =
        Some(cfg.rhos.iter().zip(&runs).map(|(&r, run)| (rho_key(r), run.summary.bs_sigma)).collect());
    write_json(&root.join("summary.json"), &summary)?;
    write_top_summary(&cfg.out_dir)?;
    Ok((summary, CorrelationResult { rhos: cfg.rhos.clone(), runs }))
}

pub struct RecalibrationResult {
    pub payoffs: Vec<PayoffSampleSet>,
    pub plan: RecalibrationPlan,
    pub sigma: Vec<Vec<f64>>,
    pub fallbacks: usize,
    pub n_boundaries: usize,
    pub bs_sigma: f64,
}

fn write_iv_densities(dir: &Path, plan: &RecalibrationPlan, sigma: &[Vec<f64>], dates: &[f64]) -> Result<()> {
    let mut samples = csv::Writer::from_path(dir.join("iv_samples.csv"))?;
    let mut density = csv::Writer::from_path(dir.join("iv_density.csv"))?;
    samples.write_record(["date", "path_id", "sigma"])?;
    density.write_record(["date", "sigma", "density"])?;
    for &d in dates {
        let k = (0..plan.len()).min_by(|&a, &b| (plan.times[a] - d).abs().total_cmp(&(plan.times[b] - d).abs()));
        let Some(k) = k else { continue };
        let t = plan.times[k];
        let xs: Vec<f64> = sigma.iter().map(|row| row[k]).collect();
        for (id, x) in xs.iter().enumerate() {
            samples.write_record([t.to_string(), id.to_string(), x.to_string()])?;
        }
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let bins = 100;
        let width = ((hi - lo) / bins as f64).max(1e-12);
        let mut counts = vec![0usize; bins];
        for &x in &xs {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let mid = lo + (b as f64 + 0.5) * width;
            density.write_record([t.to_string(), mid.to_string(), (*c as f64 / (xs.len() as f64 * width)).to_string()])?;
        }
    }
    samples.flush()?;
    density.flush()?;
    Ok(())
}

/// Heston rule, recalibrated Black-Scholes and static Black-Scholes on one
/// path stream.
pub fn run_recalibration(cfg: &ExperimentConfig) -> Result<(Summary, RecalibrationResult)> {
    cfg.validate()?;
    let dir = cfg.out_dir.join("recal");
    prepare_dir(&dir)?;
    let p = cfg.heston;
    let quotes = QuoteSurface::from_heston(&p, &cfg.quote_strikes, &cfg.quote_maturities)?;
    let bs_sigma = calibrate_black_scholes(&quotes, cfg.bs_ref_strike, cfg.bs_ref_maturity)?;
    let solver = cfg.solver();
    let (_, heston) = price_american_put_heston(&p, &cfg.heston_grid, &cfg.mcs_cfg(), cfg.strike, cfg.maturity)?;
    let (_, bs) = price_american_put_1d(&ConstantVol(bs_sigma), &solver, cfg.strike, cfg.maturity, p.r)?;
    let sim = HestonSimulator::new(p, cfg.paths, cfg.n_steps, cfg.maturity, cfg.seed)?;
    let plan = RecalibrationPlan::every(cfg.recal_interval_days / 365.0, cfg.maturity, cfg.n_steps)?;
    let vols = crate::mc::recalibrate_paths(&sim, &p, cfg.strike, &plan)?;
    let recal = RecalibratedRule::build(&vols, &plan, cfg.cache_policy(), cfg.strike, p.r, &solver, cfg.n_steps, cfg.maturity)?;
    let rules: [&dyn ExerciseRule; 3] = [
        &Rule2D { boundary: &heston, tag: "heston".into() },
        &recal,
        &Rule1D { boundary: &bs, tag: "bs_static".into() },
    ];
    let payoffs = apply_rules(&sim, &rules, cfg.strike, p.r);
    let outcomes: Vec<RuleOutcome> = payoffs.iter().map(RuleOutcome::from_samples).collect::<Result<_>>()?;

    write_config(&dir, cfg)?;
    heston.write_csv(&dir.join("boundary_heston.csv"), true)?;
    bs.write_csv(&dir.join("boundary_bs.csv"))?;
    write_scatter(&dir.join("scatter.csv"), &payoffs, cfg.scatter_paths)?;
    write_qq_files(&dir, &payoffs, cfg.qq_quantiles)?;
    write_iv_densities(&dir, &plan, &vols.sigma, &cfg.iv_density_dates)?;
    write_json(&dir.join("rules.json"), &outcomes)?;
    let mut summary = Summary::for_config(cfg);
    let stats: Vec<SummaryStats> = outcomes.iter().map(|o| o.payoff).collect();
    summary.recalibration = Some(StatsTable::new(&rule_names(&outcomes), &stats));
    write_json(&dir.join("summary.json"), &summary)?;
    write_top_summary(&cfg.out_dir)?;
    Ok((
        summary,
        RecalibrationResult {
            payoffs,
            plan,
            sigma: vols.sigma,
            fallbacks: vols.fallbacks,
            n_boundaries: recal.boundaries.len(),
            bs_sigma,
        },
    ))
}

/// Merges the per-study summaries under `dir` into `dir/summary.json`.
pub fn write_top_summary(dir: &Path) -> Result<()> {
    let mut all = serde_json::Map::new();
    for sub in ["base", "corr", "recal"] {
        let f = dir.join(sub).join("summary.json");
        if f.exists() {
            all.insert(sub.into(), serde_json::from_str(&fs::read_to_string(f)?)?);
        }
    }
    write_json(&dir.join("summary.json"), &all)
}

/// Plain-text tables from the summaries found under `dir`.
pub fn report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let fmt_table = |title: &str, t: &StatsTable| -> String {
        let mut s = format!("{title}\n{:<12}", "");
        for c in &t.columns {
            s += &format!("{c:>16}");
        }
        s += "\n";
        let rows: [(&str, &Vec<f64>); 4] = [("median", &t.median), ("mean", &t.mean), ("3rd quart.", &t.q3), ("max", &t.max)];
        for (name, vals) in rows {
            s += &format!("{name:<12}");
            for (k, v) in vals.iter().enumerate() {
                if name == "mean" {
                    s += &format!("{:>16}", format!("{v:.4} ({:.4})", t.se[k]));
                } else {
                    s += &format!("{v:>16.4}");
                }
            }
            s += "\n";
        }
        s
    };
    let mut found = false;
    for sub in ["base", "corr", "recal"] {
        let d = dir.join(sub);
        if !d.join("summary.json").exists() {
            continue;
        }
        found = true;
        let s = Summary::read(&d)?;
        out += &format!("== {sub} (paths {}, seed {}, config {})\n", s.paths, s.seed, &s.config_hash[..12]);
        if let Some(t) = &s.base_case {
            out += &fmt_table("payoff summary", t);
        }
        if let Some(e) = s.dupire_mean_rel_error {
            out += &format!("dupire repricing mean rel. error {:.4}%\n", 100.0 * e);
        }
        if let (Some(m), Some(se), Some(med), Some(sig)) = (&s.mean_by_rho, &s.se_by_rho, &s.median_by_rho, &s.bs_sigma_by_rho) {
            out += &format!("{:<8}{:>10}{:>28}{:>28}\n", "rho", "bs sigma", "mean heston/bs/dupire", "median heston/bs/dupire");
            for (k, means) in m {
                let ms: Vec<String> = means.iter().zip(&se[k]).map(|(a, b)| format!("{a:.3}({b:.3})")).collect();
                let md: Vec<String> = med[k].iter().map(|a| format!("{a:.3}")).collect();
                out += &format!("{k:<8}{:>10.5}{:>28}{:>28}\n", sig[k], ms.join(" "), md.join(" "));
            }
        }
        if let Some(t) = &s.recalibration {
            out += &fmt_table("recalibration", t);
        }
    }
    if !found {
        return Err(Error::Config(format!("no summary.json under {}", dir.display())));
    }
    Ok(out)
}
