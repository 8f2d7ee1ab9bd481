//! Heston paths (Milstein, full truncation), exercise rules evaluated on
//! paths, and a Longstaff-Schwartz boundary estimator with a randomized
//! starting price.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::recalibrate_bs_on_path;
use crate::error::{Error, Result};
use crate::heston::{HestonParams, StateAt};
use crate::pde1d::{price_american_put_1d, ConstantVol, ExerciseBoundary1D, LocalVolFn, Solver1DConfig};
use crate::pde2d::ExerciseBoundary2D;

pub const GENERATOR: &str = "chacha8/stream-per-path/ziggurat-normal";

/// Paths per rayon work item.
const CHUNK: usize = 512;

fn path_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Anything that can hand out path `id` on the simulation grid.
pub trait PathSource: Sync {
    fn n_paths(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn dt(&self) -> f64;
    /// Writes `S` and `v` at steps `0..=n_steps`.
    fn fill(&self, id: usize, s: &mut [f64], v: &mut [f64]);

    fn maturity(&self) -> f64 {
        self.dt() * self.n_steps() as f64
    }
}

/// One Milstein step for `(ln S, v)` given independent normals.
#[inline]
fn milstein_step(p: &HestonParams, dt: f64, x: f64, v: f64, z1: f64, z2: f64) -> (f64, f64) {
    let sq = dt.sqrt();
    let vp = v.max(0.0);
    let dw1 = sq * z1;
    let dwv = p.rho * dw1 + (1.0 - p.rho * p.rho).sqrt() * sq * z2;
    let x_next = x + (p.r - 0.5 * vp) * dt + vp.sqrt() * dw1;
    let v_next = v + p.kappa * (p.theta - vp) * dt
        + p.sigma_v * vp.sqrt() * dwv
        + 0.25 * p.sigma_v * p.sigma_v * (dwv * dwv - dt);
    (x_next, v_next.max(0.0))
}

fn simulate_into(p: &HestonParams, dt: f64, rng: &mut ChaCha8Rng, s0: f64, s: &mut [f64], v: &mut [f64]) {
    let mut x = s0.ln();
    let mut var = p.v0;
    s[0] = s0;
    v[0] = var;
    for n in 1..s.len() {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        (x, var) = milstein_step(p, dt, x, var, z1, z2);
        s[n] = x.exp();
        v[n] = var;
    }
}

/// Regenerates each path from `(seed, id)` on demand; nothing is stored.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HestonSimulator {
    pub params: HestonParams,
    pub n_paths: usize,
    pub n_steps: usize,
    pub maturity: f64,
    pub seed: u64,
}

impl HestonSimulator {
    pub fn new(params: HestonParams, n_paths: usize, n_steps: usize, maturity: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        if !params.feller_holds() {
            return Err(Error::InvalidInput("Feller condition 2 kappa theta >= sigma_v^2 fails".into()));
        }
        if n_steps == 0 || n_paths == 0 || !(maturity > 0.0) {
            return Err(Error::InvalidInput("need n_paths, n_steps >= 1 and maturity > 0".into()));
        }
        Ok(Self { params, n_paths, n_steps, maturity, seed })
    }
}

impl PathSource for HestonSimulator {
    fn n_paths(&self) -> usize {
        self.n_paths
    }
    fn n_steps(&self) -> usize {
        self.n_steps
    }
    fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }
    fn fill(&self, id: usize, s: &mut [f64], v: &mut [f64]) {
        let mut rng = path_rng(self.seed, id);
        simulate_into(&self.params, self.dt(), &mut rng, self.params.s0, s, v);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathSetMeta {
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    generator: String,
    params: HestonParams,
    layout: String,
}

const LAYOUT: &str = "f64 little-endian; S block then v block; path-major, n_steps + 1 values per path";

/// Materialized paths, `s[id * (n_steps + 1) + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub generator: String,
    pub params: HestonParams,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn simulate_heston(p: &HestonParams, n_paths: usize, n_steps: usize, maturity: f64, seed: u64) -> Result<PathSet> {
    let sim = HestonSimulator::new(*p, n_paths, n_steps, maturity, seed)?;
    Ok(PathSet::collect(&sim, *p, seed))
}

impl PathSet {
    pub fn collect(src: &dyn PathSource, params: HestonParams, seed: u64) -> Self {
        let w = src.n_steps() + 1;
        let mut s = vec![0.0; src.n_paths() * w];
        let mut v = vec![0.0; src.n_paths() * w];
        s.par_chunks_mut(w).zip(v.par_chunks_mut(w)).enumerate().for_each(|(id, (sr, vr))| src.fill(id, sr, vr));
        Self {
            n_paths: src.n_paths(),
            n_steps: src.n_steps(),
            dt: src.dt(),
            seed,
            generator: GENERATOR.into(),
            params,
            s,
            v,
        }
    }

    pub fn s_path(&self, id: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.s[id * w..(id + 1) * w]
    }

    pub fn v_path(&self, id: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.v[id * w..(id + 1) * w]
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 * self.s.len());
        for x in self.s.iter().chain(&self.v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        let meta = PathSetMeta {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            dt: self.dt,
            seed: self.seed,
            generator: self.generator.clone(),
            params: self.params,
            layout: LAYOUT.into(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: PathSetMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
        let n = meta.n_paths * (meta.n_steps + 1);
        if bytes.len() != 16 * n {
            return Err(Error::InvalidInput(format!("path file holds {} bytes, expected {}", bytes.len(), 16 * n)));
        }
        let vals: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let (s, v) = vals.split_at(n);
        Ok(Self {
            n_paths: meta.n_paths,
            n_steps: meta.n_steps,
            dt: meta.dt,
            seed: meta.seed,
            generator: meta.generator,
            params: meta.params,
            s: s.to_vec(),
            v: v.to_vec(),
        })
    }
}

impl PathSource for PathSet {
    fn n_paths(&self) -> usize {
        self.n_paths
    }
    fn n_steps(&self) -> usize {
        self.n_steps
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn fill(&self, id: usize, s: &mut [f64], v: &mut [f64]) {
        s.copy_from_slice(self.s_path(id));
        v.copy_from_slice(self.v_path(id));
    }
}

/// Per-path stopping outcome of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSampleSet {
    pub rule: String,
    /// `None` when the rule never fired; the claim is then held to `T`.
    pub stop_step: Vec<Option<u32>>,
    pub tau: Vec<f64>,
    pub payoff: Vec<f64>,
}

impl PayoffSampleSet {
    pub fn len(&self) -> usize {
        self.payoff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payoff.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path_id", "stop_step", "tau", "payoff"])?;
        for (id, ((st, tau), pay)) in self.stop_step.iter().zip(&self.tau).zip(&self.payoff).enumerate() {
            let st = st.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([id.to_string(), st, tau.to_string(), pay.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A stopping rule on the simulation grid.
pub trait ExerciseRule: Sync {
    fn tag(&self) -> String;
    /// First grid step at which the holder exercises.
    fn first_exercise(&self, id: usize, s: &[f64], v: &[f64]) -> Option<usize>;
}

fn check_time_grid(t: &[f64], src: &dyn PathSource) -> Result<()> {
    let n = src.n_steps();
    if t.len() != n + 1 || t.iter().enumerate().any(|(j, &tj)| (tj - j as f64 * src.dt()).abs() > 1e-9) {
        return Err(Error::GridMismatch(format!(
            "boundary has {} nodes, paths have {} steps of {}",
            t.len(),
            n,
            src.dt()
        )));
    }
    Ok(())
}

/// Exercise when `S(t_n) <= B(t_n)`.
pub struct Rule1D<'a> {
    pub boundary: &'a ExerciseBoundary1D,
    pub tag: String,
}

impl ExerciseRule for Rule1D<'_> {
    fn tag(&self) -> String {
        self.tag.clone()
    }
    fn first_exercise(&self, _id: usize, s: &[f64], _v: &[f64]) -> Option<usize> {
        s.iter().zip(&self.boundary.boundary).position(|(s, b)| s <= b)
    }
}

/// Exercise when `S(t_n) <= B(t_n, v(t_n))`.
pub struct Rule2D<'a> {
    pub boundary: &'a ExerciseBoundary2D,
    pub tag: String,
}

impl ExerciseRule for Rule2D<'_> {
    fn tag(&self) -> String {
        self.tag.clone()
    }
    fn first_exercise(&self, _id: usize, s: &[f64], v: &[f64]) -> Option<usize> {
        (0..s.len()).find(|&n| s[n] <= self.boundary.eval_at_step(n, v[n]))
    }
}

#[derive(Clone, Copy)]
struct Outcome {
    stop: Option<u32>,
    tau: f64,
    payoff: f64,
}

/// Evaluates all rules on the same paths in one pass.
pub fn apply_rules(src: &dyn PathSource, rules: &[&dyn ExerciseRule], strike: f64, r: f64) -> Vec<PayoffSampleSet> {
    let n = src.n_steps();
    let dt = src.dt();
    let nr = rules.len();
    let n_paths = src.n_paths();
    let chunks: Vec<Vec<Outcome>> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s = vec![0.0; n + 1];
            let mut v = vec![0.0; n + 1];
            let ids = c * CHUNK..((c + 1) * CHUNK).min(n_paths);
            let mut out = Vec::with_capacity(ids.len() * nr);
            for id in ids {
                src.fill(id, &mut s, &mut v);
                for rule in rules {
                    let stop = rule.first_exercise(id, &s, &v);
                    let k = stop.unwrap_or(n);
                    let tau = k as f64 * dt;
                    let payoff = (-r * tau).exp() * (strike - s[k]).max(0.0);
                    out.push(Outcome { stop: stop.map(|x| x as u32), tau, payoff });
                }
            }
            out
        })
        .collect();
    (0..nr)
        .map(|k| {
            let it = chunks.iter().flat_map(|c| c.iter().skip(k).step_by(nr));
            let mut set = PayoffSampleSet {
                rule: rules[k].tag(),
                stop_step: Vec::with_capacity(n_paths),
                tau: Vec::with_capacity(n_paths),
                payoff: Vec::with_capacity(n_paths),
            };
            for o in it {
                set.stop_step.push(o.stop);
                set.tau.push(o.tau);
                set.payoff.push(o.payoff);
            }
            set
        })
        .collect()
}

pub fn apply_rule_1d(src: &dyn PathSource, b: &ExerciseBoundary1D, strike: f64, r: f64) -> Result<PayoffSampleSet> {
    check_time_grid(&b.t, src)?;
    let rule = Rule1D { boundary: b, tag: "1d".into() };
    Ok(apply_rules(src, &[&rule], strike, r).remove(0))
}

pub fn apply_rule_2d(src: &dyn PathSource, b: &ExerciseBoundary2D, strike: f64, r: f64) -> Result<PayoffSampleSet> {
    check_time_grid(&b.t, src)?;
    let rule = Rule2D { boundary: b, tag: "2d".into() };
    Ok(apply_rules(src, &[&rule], strike, r).remove(0))
}

/// Recalibration dates `k * interval < T`, snapped to the path grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationPlan {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
}

impl RecalibrationPlan {
    pub fn every(interval: f64, maturity: f64, n_steps: usize) -> Result<Self> {
        if !(interval > 0.0) || !(maturity > 0.0) || n_steps == 0 {
            return Err(Error::InvalidInput("recalibration interval and maturity must be positive".into()));
        }
        let dt = maturity / n_steps as f64;
        let mut steps: Vec<usize> = Vec::new();
        let mut k = 0usize;
        while (k as f64) * interval < maturity - 1e-12 {
            let n = ((k as f64 * interval) / dt).round() as usize;
            if n < n_steps && steps.last() != Some(&n) {
                steps.push(n);
            }
            k += 1;
        }
        let times = steps.iter().map(|&n| n as f64 * dt).collect();
        Ok(Self { steps, times })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// How recalibrated volatilities map to boundary solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CachePolicy {
    /// One solve per distinct volatility.
    Exact,
    /// Volatility rounded to a multiple of the step before solving.
    Quantized(f64),
}

impl CachePolicy {
    fn key(&self, sigma: f64) -> (i64, f64) {
        match *self {
            CachePolicy::Exact => (sigma.to_bits() as i64, sigma),
            CachePolicy::Quantized(q) => {
                let k = (sigma / q).round() as i64;
                (k, k as f64 * q)
            }
        }
    }
}

/// Black-Scholes volatilities per path and date, `sigma[id][k]`.
#[derive(Debug, Clone)]
pub struct RecalibratedVols {
    pub sigma: Vec<Vec<f64>>,
    /// Inversions that failed and reused the previous date's value.
    pub fallbacks: usize,
}

/// Fits Black-Scholes to the Heston put at every date on every path.
pub fn recalibrate_paths(src: &dyn PathSource, p: &HestonParams, strike: f64, plan: &RecalibrationPlan) -> Result<RecalibratedVols> {
    let n = src.n_steps();
    let maturity = src.maturity();
    let rows: Vec<(Vec<f64>, usize)> = (0..src.n_paths())
        .into_par_iter()
        .map_init(
            || (vec![0.0; n + 1], vec![0.0; n + 1]),
            |(s, v), id| -> Result<(Vec<f64>, usize)> {
                src.fill(id, s, v);
                let mut out: Vec<f64> = Vec::with_capacity(plan.len());
                let mut fails = 0;
                for (&step, &t) in plan.steps.iter().zip(&plan.times) {
                    let state = StateAt { t, s: s[step], v: v[step] };
                    match (recalibrate_bs_on_path(state, p, strike, maturity), out.last()) {
                        (Ok(sig), _) => out.push(sig),
                        (Err(_), Some(&prev)) => {
                            fails += 1;
                            out.push(prev);
                        }
                        (Err(e), None) => return Err(e),
                    }
                }
                Ok((out, fails))
            },
        )
        .collect::<Result<_>>()?;
    let fallbacks = rows.iter().map(|r| r.1).sum();
    Ok(RecalibratedVols { sigma: rows.into_iter().map(|r| r.0).collect(), fallbacks })
}

/// Piecewise rule: on `[t_k, t_{k+1})` the Black-Scholes boundary for the
/// volatility fitted at `t_k`. With constant volatility the boundary depends
/// only on time to maturity, so one full-horizon solve per volatility serves
/// every date.
pub struct RecalibratedRule {
    pub plan: RecalibrationPlan,
    /// Index into `boundaries` per path and date.
    pub choice: Vec<Vec<u32>>,
    pub boundaries: Vec<ExerciseBoundary1D>,
    pub sigmas: Vec<f64>,
}

impl RecalibratedRule {
    pub fn build(
        vols: &RecalibratedVols,
        plan: &RecalibrationPlan,
        policy: CachePolicy,
        strike: f64,
        r: f64,
        solver: &Solver1DConfig,
        n_steps: usize,
        maturity: f64,
    ) -> Result<Self> {
        let mut keys: BTreeMap<i64, f64> = BTreeMap::new();
        for row in &vols.sigma {
            for &s in row {
                let (k, sq) = policy.key(s);
                keys.entry(k).or_insert(sq);
            }
        }
        let index: BTreeMap<i64, u32> = keys.keys().enumerate().map(|(i, &k)| (k, i as u32)).collect();
        let sigmas: Vec<f64> = keys.values().copied().collect();
        let cfg = Solver1DConfig { n1: n_steps, ..*solver };
        let boundaries = sigmas
            .par_iter()
            .map(|&sig| price_american_put_1d(&ConstantVol(sig), &cfg, strike, maturity, r).map(|(_, b)| b))
            .collect::<Result<Vec<_>>>()?;
        let choice = vols.sigma.iter().map(|row| row.iter().map(|&s| index[&policy.key(s).0]).collect()).collect();
        Ok(Self { plan: plan.clone(), choice, boundaries, sigmas })
    }
}

impl ExerciseRule for RecalibratedRule {
    fn tag(&self) -> String {
        "bs_recalibrated".into()
    }
    fn first_exercise(&self, id: usize, s: &[f64], _v: &[f64]) -> Option<usize> {
        let row = &self.choice[id];
        let start = self.plan.steps[0];
        let mut k = 0;
        (start..s.len()).find(|&n| {
            while k + 1 < self.plan.len() && self.plan.steps[k + 1] <= n {
                k += 1;
            }
            s[n] <= self.boundaries[row[k] as usize].boundary[n]
        })
    }
}

/// Recalibrated rule output: the payoffs plus the fitted volatilities.
pub struct RecalibratedRun {
    pub payoffs: PayoffSampleSet,
    pub vols: RecalibratedVols,
    pub n_boundaries: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn apply_rule_recalibrated(
    src: &dyn PathSource,
    p: &HestonParams,
    strike: f64,
    plan: &RecalibrationPlan,
    policy: CachePolicy,
    solver: &Solver1DConfig,
) -> Result<RecalibratedRun> {
    if plan.steps.first() != Some(&0) || plan.steps.iter().any(|&n| n >= src.n_steps()) {
        return Err(Error::GridMismatch("recalibration dates must start at 0 and precede maturity".into()));
    }
    let vols = recalibrate_paths(src, p, strike, plan)?;
    let rule = RecalibratedRule::build(&vols, plan, policy, strike, p.r, solver, src.n_steps(), src.maturity())?;
    let payoffs = apply_rules(src, &[&rule], strike, p.r).remove(0);
    Ok(RecalibratedRun { payoffs, n_boundaries: rule.boundaries.len(), vols })
}

// ---------------------------------------------------------------- Longstaff-Schwartz

/// Dynamics for the regression paths.
#[derive(Clone, Copy)]
pub enum LsModel<'a> {
    BlackScholes { sigma: f64, r: f64 },
    LocalVol { vol: &'a dyn LocalVolFn, r: f64 },
    Heston(HestonParams),
}

impl LsModel<'_> {
    fn rate(&self) -> f64 {
        match self {
            LsModel::BlackScholes { r, .. } | LsModel::LocalVol { r, .. } => *r,
            LsModel::Heston(p) => p.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Constant plus `S, ..., S^d`.
    Powers(usize),
    /// Constant plus `S, S^2, S^3, v, Sv, S^2 v`.
    HestonMixed,
}

impl Basis {
    fn len(&self) -> usize {
        match self {
            Basis::Powers(d) => d + 1,
            Basis::HestonMixed => 7,
        }
    }

    /// Prices enter as `u = 2 S / K - 1`, which spans the same polynomials
    /// as raw powers of `S` and keeps the normal equations well scaled.
    fn eval(&self, u: f64, v: f64, out: &mut [f64]) {
        match *self {
            Basis::Powers(d) => {
                out[0] = 1.0;
                for k in 1..=d {
                    out[k] = out[k - 1] * u;
                }
            }
            Basis::HestonMixed => {
                out.copy_from_slice(&[1.0, u, u * u, u * u * u, v, u * v, u * u * v]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub maturity: f64,
    pub strike: f64,
    pub seed: u64,
    pub start_mean: f64,
    pub start_sd: f64,
    pub basis: Basis,
    /// Regress on in-the-money paths only.
    pub itm_only: bool,
}

impl LsConfig {
    pub fn new(basis: Basis, n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps: 300,
            maturity: 1.0,
            strike: 10.0,
            seed,
            start_mean: 10.0,
            start_sd: 2.5,
            basis,
            itm_only: true,
        }
    }
}

/// Fitted continuation values; `coeffs[n]` is `None` where the regression
/// was rank deficient or had too few paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsEstimator {
    pub basis: Basis,
    pub strike: f64,
    pub dt: f64,
    pub coeffs: Vec<Option<Vec<f64>>>,
    pub skipped: usize,
}

/// Price grid for the boundary root scan, as a fraction of the strike.
const SCAN_POINTS: usize = 2000;

impl LsEstimator {
    pub fn continuation(&self, n: usize, s: f64, v: f64) -> Option<f64> {
        let c = self.coeffs[n].as_ref()?;
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.eval(2.0 * s / self.strike - 1.0, v, &mut phi);
        Some(phi.iter().zip(c).map(|(a, b)| a * b).sum())
    }

    fn raw_boundary(&self, n: usize, v: f64) -> Option<f64> {
        self.coeffs[n].as_ref()?;
        let k = self.strike;
        let mut prev = k;
        for i in 1..SCAN_POINTS {
            let s = k * (1.0 - i as f64 / SCAN_POINTS as f64);
            let g = k - s - self.continuation(n, s, v).expect("coefficients present");
            if g >= 0.0 {
                // bisect on (s, prev]
                let (mut lo, mut hi) = (s, prev);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if k - mid - self.continuation(n, mid, v).expect("coefficients present") >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(lo);
            }
            prev = s;
        }
        Some(0.0)
    }

    /// Largest price below the strike where exercise beats the fitted
    /// continuation; skipped steps carry the previous (later-step) value.
    pub fn boundary(&self, v: f64) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out = vec![self.strike; n];
        for j in (0..n).rev() {
            let next = if j + 1 < n { out[j + 1] } else { self.strike };
            out[j] = self.raw_boundary(j, v).unwrap_or(next);
        }
        out
    }

    pub fn boundary_at(&self, n: usize, v: f64) -> f64 {
        let mut j = n;
        loop {
            if let Some(b) = self.raw_boundary(j, v) {
                return b;
            }
            if j + 1 >= self.coeffs.len() {
                return self.strike;
            }
            j += 1;
        }
    }
}

impl ExerciseRule for LsEstimator {
    fn tag(&self) -> String {
        "longstaff_schwartz".into()
    }
    fn first_exercise(&self, _id: usize, s: &[f64], v: &[f64]) -> Option<usize> {
        let last = s.len() - 1;
        (0..s.len()).find(|&n| {
            let pay = self.strike - s[n];
            pay > 0.0 && (n == last || self.continuation(n, s[n], v[n]).is_some_and(|c| pay >= c))
        })
    }
}

fn truncated_start(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let s = mean + sd * z;
        if s > 0.0 {
            return s;
        }
    }
}

/// Simulates regression paths, `f32` storage, `n_steps + 1` values per path.
fn ls_paths(model: &LsModel, cfg: &LsConfig) -> (Vec<f32>, Option<Vec<f32>>) {
    let w = cfg.n_steps + 1;
    let dt = cfg.maturity / cfg.n_steps as f64;
    let heston = matches!(model, LsModel::Heston(_));
    let mut s = vec![0f32; cfg.n_paths * w];
    let mut v = if heston { vec![0f32; cfg.n_paths * w] } else { Vec::new() };
    let fill = |id: usize, sr: &mut [f32], vr: Option<&mut [f32]>| {
        let mut rng = path_rng(cfg.seed, id);
        let s0 = truncated_start(&mut rng, cfg.start_mean, cfg.start_sd);
        match model {
            LsModel::BlackScholes { sigma, r } => {
                let mut x = s0.ln();
                sr[0] = s0 as f32;
                for n in 1..w {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x += (r - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z;
                    sr[n] = x.exp() as f32;
                }
            }
            LsModel::LocalVol { vol, r } => {
                let mut x = s0.ln();
                sr[0] = s0 as f32;
                for n in 1..w {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let sig = vol.sigma((n - 1) as f64 * dt, x.exp());
                    x += (r - 0.5 * sig * sig) * dt + sig * dt.sqrt() * z;
                    sr[n] = x.exp() as f32;
                }
            }
            LsModel::Heston(p) => {
                let mut s64 = vec![0.0; w];
                let mut v64 = vec![0.0; w];
                simulate_into(p, dt, &mut rng, s0, &mut s64, &mut v64);
                for n in 0..w {
                    sr[n] = s64[n] as f32;
                }
                if let Some(vr) = vr {
                    for n in 0..w {
                        vr[n] = v64[n] as f32;
                    }
                }
            }
        }
    };
    if heston {
        s.par_chunks_mut(w).zip(v.par_chunks_mut(w)).enumerate().for_each(|(id, (sr, vr))| fill(id, sr, Some(vr)));
        (s, Some(v))
    } else {
        s.par_chunks_mut(w).enumerate().for_each(|(id, sr)| fill(id, sr, None));
        (s, None)
    }
}

/// Solves the normal equations; `None` if numerically rank deficient.
fn regress(xtx: DMatrix<f64>, xty: DVector<f64>) -> Option<Vec<f64>> {
    let svd = xtx.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() < 1e-13 * smax {
        return None;
    }
    svd.solve(&xty, 0.0).ok().map(|x| x.iter().copied().collect())
}

/// Backward-inductive regression of discounted continuation values.
pub fn ls_exercise_rule(model: &LsModel, cfg: &LsConfig) -> Result<LsEstimator> {
    if cfg.n_paths < 10 || cfg.n_steps == 0 || !(cfg.maturity > 0.0) || !(cfg.strike > 0.0) || !(cfg.start_sd >= 0.0) {
        return Err(Error::InvalidInput("bad Longstaff-Schwartz configuration".into()));
    }
    match (model, cfg.basis) {
        (LsModel::Heston(p), _) => p.validate()?,
        (_, Basis::HestonMixed) => {
            return Err(Error::InvalidInput("mixed basis needs a variance state".into()));
        }
        _ => {}
    }
    if let Basis::Powers(d) = cfg.basis {
        if d == 0 {
            return Err(Error::InvalidInput("basis needs at least one power".into()));
        }
    }
    let (s, v) = ls_paths(model, cfg);
    let w = cfg.n_steps + 1;
    let dt = cfg.maturity / cfg.n_steps as f64;
    let disc = (-model.rate() * dt).exp();
    let k = cfg.strike;
    let nb = cfg.basis.len();
    let mut cf: Vec<f64> = (0..cfg.n_paths).map(|id| (k - s[id * w + cfg.n_steps] as f64).max(0.0)).collect();
    let mut coeffs: Vec<Option<Vec<f64>>> = vec![None; w];
    let mut skipped = 0;
    let state = |id: usize, n: usize| -> (f64, f64) {
        let sv = s[id * w + n] as f64;
        let vv = v.as_ref().map_or(0.0, |v| v[id * w + n] as f64);
        (sv, vv)
    };
    for n in (0..cfg.n_steps).rev() {
        for c in cf.iter_mut() {
            *c *= disc;
        }
        // fixed chunks reduced in order keep the sums independent of scheduling
        let partials: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..cfg.n_paths.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let (mut a, mut b, mut m, mut phi) = (vec![0.0; nb * nb], vec![0.0; nb], 0usize, vec![0.0; nb]);
                for id in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                    let (sv, vv) = state(id, n);
                    if !cfg.itm_only || sv < k {
                        cfg.basis.eval(2.0 * sv / k - 1.0, vv, &mut phi);
                        for i in 0..nb {
                            b[i] += phi[i] * cf[id];
                            for j in 0..nb {
                                a[i * nb + j] += phi[i] * phi[j];
                            }
                        }
                        m += 1;
                    }
                }
                (a, b, m)
            })
            .collect();
        let (mut xtx, mut xty, mut count) = (vec![0.0; nb * nb], vec![0.0; nb], 0);
        for (a, b, m) in partials {
            xtx.iter_mut().zip(a).for_each(|(x, y)| *x += y);
            xty.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            count += m;
        }
        let fit = if count >= 2 * nb {
            regress(DMatrix::from_row_slice(nb, nb, &xtx), DVector::from_vec(xty))
        } else {
            None
        };
        let Some(beta) = fit else {
            skipped += 1;
            continue;
        };
        cf.par_iter_mut().enumerate().for_each_init(
            || vec![0.0; nb],
            |phi, (id, c)| {
                let (sv, vv) = state(id, n);
                let pay = k - sv;
                if pay > 0.0 {
                    cfg.basis.eval(2.0 * sv / k - 1.0, vv, phi);
                    let cont: f64 = phi.iter().zip(&beta).map(|(a, b)| a * b).sum();
                    if pay >= cont {
                        *c = pay;
                    }
                }
            },
        );
        coeffs[n] = Some(beta);
    }
    // expiry: exercise whenever in the money
    coeffs[cfg.n_steps] = Some(vec![0.0; nb]);
    Ok(LsEstimator { basis: cfg.basis, strike: k, dt, coeffs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_snaps_weekly_dates() {
        let plan = RecalibrationPlan::every(7.0 / 365.0, 1.0, 300).unwrap();
        assert_eq!(plan.len(), 53);
        assert_eq!(plan.steps[0], 0);
        assert_eq!(plan.steps[1], 6);
        assert!(plan.steps.windows(2).all(|w| w[0] < w[1]));
        assert!(*plan.steps.last().unwrap() < 300);
    }

    #[test]
    fn cache_keys() {
        assert_eq!(CachePolicy::Quantized(1e-3).key(0.37049), (370, 0.37));
        let (_, s) = CachePolicy::Exact.key(0.3704);
        assert_eq!(s, 0.3704);
    }

    #[test]
    fn basis_values() {
        let mut out = vec![0.0; 4];
        Basis::Powers(3).eval(0.5, 0.0, &mut out);
        assert_eq!(out, vec![1.0, 0.5, 0.25, 0.125]);
        let mut out = vec![0.0; 7];
        Basis::HestonMixed.eval(2.0, 0.1, &mut out);
        assert_eq!(out, vec![1.0, 2.0, 4.0, 8.0, 0.1, 0.2, 0.4]);
    }

    #[test]
    fn same_seed_same_path() {
        let sim = HestonSimulator::new(HestonParams::base_case(), 4, 50, 1.0, 9).unwrap();
        let (mut a, mut b) = (vec![0.0; 51], vec![0.0; 51]);
        let (mut c, mut d) = (vec![0.0; 51], vec![0.0; 51]);
        sim.fill(3, &mut a, &mut b);
        sim.fill(3, &mut c, &mut d);
        assert_eq!(a, c);
        assert_eq!(b, d);
        sim.fill(2, &mut c, &mut d);
        assert_ne!(a, c);
    }
}
