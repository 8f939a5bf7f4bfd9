//! Benchmark harness: declarative experiment configs, the repetition and
//! averaging protocol per algorithm, the non-private baseline, and CSV
//! reports. Every repetition draws from its own derived random stream, so a
//! report does not depend on thread scheduling.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{gen_synthetic, load_csv, normalize, Dataset, SyntheticSpec};
use crate::dplloyd::{dplloyd, dplloyd_one_round, DPLloydParams};
use crate::error::{DpError, Result};
use crate::error_models::{
    predict_dplloyd_mse, predict_eugkm_bias_bound, predict_eugkm_variance, predict_hybrid_one_round_mse,
    ErrorModelParams, DEFAULT_RHO,
};
use crate::eugkm::{eugkm, DEFAULT_THETA};
use crate::gkm::{gkm, BlockPolicy, GkmParams};
use crate::hybrid::{decide, HybridParams};
use crate::kmeans::{lloyd_default, nicv, sphere_packing_init, Centroids};
use crate::mechanisms::{derive_seed, Budget, Rng};
use crate::pgkm::{pgkm, PgkmParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algorithm {
    LloydBaseline,
    DPLloyd,
    Gkm,
    Gkm3k,
    Pgkm,
    Eugkm,
    Hybrid,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::LloydBaseline,
        Algorithm::DPLloyd,
        Algorithm::Gkm,
        Algorithm::Gkm3k,
        Algorithm::Pgkm,
        Algorithm::Eugkm,
        Algorithm::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LloydBaseline => "lloyd_baseline",
            Algorithm::DPLloyd => "dplloyd",
            Algorithm::Gkm => "gkm",
            Algorithm::Gkm3k => "gkm3k",
            Algorithm::Pgkm => "pgkm",
            Algorithm::Eugkm => "eugkm",
            Algorithm::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Repetition counts. `dplloyd` is per initial set; `hybrid` counts synopses
/// and `hybrid_refine` the one-round refinements drawn from each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reps {
    pub init_sets: usize,
    pub dplloyd: usize,
    pub gkm: usize,
    pub gkm3k: usize,
    pub pgkm: usize,
    pub eugkm: usize,
    pub hybrid: usize,
    pub hybrid_refine: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// 30 initial sets, 100 DPLloyd runs per set, 100 GkM/PGkM runs,
    /// 10 EUGkM synopses, 10 x 10 hybrid runs.
    Paper,
    /// 10 initial sets and 10 repetitions everywhere.
    Desk,
}

impl Protocol {
    pub fn reps(self) -> Reps {
        match self {
            Protocol::Paper => Reps {
                init_sets: 30,
                dplloyd: 100,
                gkm: 100,
                gkm3k: 100,
                pgkm: 100,
                eugkm: 10,
                hybrid: 10,
                hybrid_refine: 10,
            },
            Protocol::Desk => Reps {
                init_sets: 10,
                dplloyd: 10,
                gkm: 10,
                gkm3k: 10,
                pgkm: 10,
                eugkm: 10,
                hybrid: 10,
                hybrid_refine: 10,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub k: usize,
    pub r: f64,
    pub eps_list: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub protocol: Protocol,
    /// Explicit repetition counts keyed by config name (`dplloyd`,
    /// `init_sets`, ...); these win over the protocol defaults.
    pub reps_overrides: BTreeMap<String, usize>,
    pub master_seed: u64,
    pub theta: f64,
    pub rho: f64,
    pub t: usize,
    /// Record wall-clock milliseconds; off by default so reports are
    /// byte-for-byte reproducible.
    pub timing: bool,
}

const REPS_KEYS: [&str; 8] = [
    "init_sets",
    "dplloyd",
    "gkm",
    "gkm3k",
    "pgkm",
    "eugkm",
    "hybrid",
    "hybrid_refine",
];

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, k: usize, eps_list: Vec<f64>, algorithms: Vec<Algorithm>) -> Self {
        ExperimentConfig {
            dataset,
            k,
            r: 1.0,
            eps_list,
            algorithms,
            protocol: Protocol::Paper,
            reps_overrides: BTreeMap::new(),
            master_seed: 0,
            theta: DEFAULT_THETA,
            rho: DEFAULT_RHO,
            t: 5,
            timing: false,
        }
    }

    pub fn reps(&self) -> Reps {
        let mut reps = self.protocol.reps();
        for (key, &value) in &self.reps_overrides {
            let slot = match key.as_str() {
                "init_sets" => &mut reps.init_sets,
                "dplloyd" => &mut reps.dplloyd,
                "gkm" => &mut reps.gkm,
                "gkm3k" => &mut reps.gkm3k,
                "pgkm" => &mut reps.pgkm,
                "eugkm" => &mut reps.eugkm,
                "hybrid" => &mut reps.hybrid,
                "hybrid_refine" => &mut reps.hybrid_refine,
                _ => continue,
            };
            *slot = value;
        }
        reps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DpError::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.eps_list.is_empty() {
            return bad("eps list is empty".into());
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return bad(format!("eps values must be positive, got {e}"));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if self.t == 0 {
            return bad("t must be at least 1".into());
        }
        if !(0.0..=0.5).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 0.5], got {}", self.rho));
        }
        if !(self.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        let reps = self.reps();
        if reps.init_sets == 0 {
            return bad("init_sets must be at least 1".into());
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `#` starts a comment. Relative
    /// `dataset.path` values are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DpError::Config(format!("line {}: expected `key = value`", idx + 1)))?;
            kv.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }

        fn num<T: std::str::FromStr>(key: &str, line: usize, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| DpError::Config(format!("line {line}: bad value `{value}` for `{key}`")))
        }

        let take = |kv: &mut BTreeMap<String, (usize, String)>, key: &str| kv.remove(key);

        let seed: u64 = match take(&mut kv, "seed") {
            Some((line, v)) => num("seed", line, &v)?,
            None => 0,
        };
        let r: f64 = match take(&mut kv, "r") {
            Some((line, v)) => num("r", line, &v)?,
            None => 1.0,
        };

        let path = take(&mut kv, "dataset.path");
        let syn_keys = ["synthetic.d", "synthetic.k", "synthetic.n", "synthetic.separation", "synthetic.std", "synthetic.seed"];
        let mut syn: BTreeMap<&str, (usize, String)> = BTreeMap::new();
        for key in syn_keys {
            if let Some(v) = take(&mut kv, key) {
                syn.insert(key, v);
            }
        }
        let dataset = match (path, syn.is_empty()) {
            (Some(_), false) => {
                return Err(DpError::Config("give either dataset.path or synthetic.*, not both".into()))
            }
            (Some((_, p)), true) => {
                let p = PathBuf::from(p);
                DatasetSource::Csv(match base_dir {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p,
                })
            }
            (None, false) => {
                let get = |key: &str| syn.get(key);
                let required = |key: &str| {
                    get(key).ok_or_else(|| DpError::Config(format!("missing `{key}`")))
                };
                let (l, v) = required("synthetic.d")?;
                let d: usize = num("synthetic.d", *l, v)?;
                let (l, v) = required("synthetic.k")?;
                let sk: usize = num("synthetic.k", *l, v)?;
                let (l, v) = required("synthetic.n")?;
                let n: usize = num("synthetic.n", *l, v)?;
                let separation = match get("synthetic.separation") {
                    Some((l, v)) => num("synthetic.separation", *l, v)?,
                    None => 0.5 * r,
                };
                let cluster_std = match get("synthetic.std") {
                    Some((l, v)) => Some(num("synthetic.std", *l, v)?),
                    None => None,
                };
                let syn_seed = match get("synthetic.seed") {
                    Some((l, v)) => num("synthetic.seed", *l, v)?,
                    None => seed,
                };
                DatasetSource::Synthetic(SyntheticSpec {
                    d,
                    k: sk,
                    n,
                    separation,
                    cluster_std,
                    r,
                    seed: syn_seed,
                })
            }
            (None, true) => return Err(DpError::Config("missing dataset.path or synthetic.* keys".into())),
        };

        let k = match (take(&mut kv, "k"), &dataset) {
            (Some((line, v)), _) => num("k", line, &v)?,
            (None, DatasetSource::Synthetic(spec)) => spec.k,
            (None, DatasetSource::Csv(_)) => return Err(DpError::Config("missing `k`".into())),
        };
        let eps_list = match take(&mut kv, "eps") {
            Some((line, v)) => v
                .split(',')
                .map(|e| num("eps", line, e.trim()))
                .collect::<Result<Vec<f64>>>()?,
            None => return Err(DpError::Config("missing `eps`".into())),
        };
        let algorithms = match take(&mut kv, "algorithms") {
            Some((line, v)) => v
                .split(',')
                .map(|a| {
                    Algorithm::parse(a.trim())
                        .ok_or_else(|| DpError::Config(format!("line {line}: unknown algorithm `{}`", a.trim())))
                })
                .collect::<Result<Vec<_>>>()?,
            None => Algorithm::ALL.to_vec(),
        };

        let mut cfg = ExperimentConfig::new(dataset, k, eps_list, algorithms);
        cfg.r = r;
        cfg.master_seed = seed;
        if let Some((line, v)) = take(&mut kv, "theta") {
            cfg.theta = num("theta", line, &v)?;
        }
        if let Some((line, v)) = take(&mut kv, "rho") {
            cfg.rho = num("rho", line, &v)?;
        }
        if let Some((line, v)) = take(&mut kv, "t") {
            cfg.t = num("t", line, &v)?;
        }
        if let Some((line, v)) = take(&mut kv, "timing") {
            cfg.timing = num("timing", line, &v)?;
        }
        if let Some((line, v)) = take(&mut kv, "protocol") {
            cfg.protocol = match v.as_str() {
                "paper" => Protocol::Paper,
                "desk" => Protocol::Desk,
                other => return Err(DpError::Config(format!("line {line}: unknown protocol `{other}`"))),
            };
        }
        if let Some((line, v)) = take(&mut kv, "reps") {
            let n: usize = num("reps", line, &v)?;
            for key in REPS_KEYS.iter().filter(|k| **k != "init_sets") {
                cfg.reps_overrides.insert(key.to_string(), n);
            }
        }
        if let Some((line, v)) = take(&mut kv, "init_sets") {
            cfg.reps_overrides.insert("init_sets".into(), num("init_sets", line, &v)?);
        }
        let rep_keys: Vec<String> = kv.keys().filter(|k| k.starts_with("reps.")).cloned().collect();
        for key in rep_keys {
            let (line, v) = kv.remove(&key).expect("present");
            let name = &key["reps.".len()..];
            if !REPS_KEYS.contains(&name) {
                return Err(DpError::Config(format!("line {line}: unknown repetition key `{key}`")));
            }
            cfg.reps_overrides.insert(name.to_string(), num(&key, line, &v)?);
        }
        if let Some((key, (line, _))) = kv.into_iter().next() {
            return Err(DpError::Config(format!("line {line}: unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DpError::io(path, e))?;
        ExperimentConfig::parse(&text, path.parent())
    }
}

/// Loads (and normalizes) or generates the configured dataset.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Csv(path) => normalize(&load_csv(path, None)?, config.r),
        DatasetSource::Synthetic(spec) => Ok(gen_synthetic(spec)?.0),
    }
}

/// `count` sphere-packing initial sets with seeds derived from `master_seed`.
pub fn make_init_sets(d: usize, k: usize, r: f64, count: usize, master_seed: u64) -> Vec<Centroids> {
    (0..count)
        .into_par_iter()
        .map(|i| sphere_packing_init(d, k, r, derive_seed(master_seed, "init_sets", i as u64)))
        .collect()
}

/// Lowest NICV of non-private Lloyd over the initial sets.
pub fn run_baseline(data: &Dataset, init_sets: &[Centroids]) -> Result<f64> {
    if init_sets.is_empty() {
        return Err(DpError::param("baseline needs at least one initial set"));
    }
    let scores: Vec<f64> = init_sets
        .par_iter()
        .map(|init| nicv(data, &lloyd_default(data, init)))
        .collect();
    Ok(scores.into_iter().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub eps: f64,
    pub mean_nicv: f64,
    pub std_nicv: f64,
    pub n_runs: usize,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub baseline_nicv: f64,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "algorithm,eps,mean_nicv,std_nicv,n_runs,wall_ms";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.algorithm, row.eps, row.mean_nicv, row.std_nicv, row.n_runs, row.wall_ms
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn row(&self, algorithm: Algorithm, eps: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.eps == eps)
    }
}

/// Mean and sample standard deviation, two-pass, in input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn audit(budget: &Budget, what: &str) -> Result<()> {
    if budget.is_exhausted() {
        Ok(())
    } else {
        Err(DpError::Audit(format!(
            "{what} spent {} of {}",
            budget.spent(),
            budget.total()
        )))
    }
}

/// A single private run with a fresh budget; the ledger must end at `eps`.
fn audited(eps: f64, what: &str, f: impl FnOnce(&mut Budget) -> Result<Centroids>, data: &Dataset) -> Result<f64> {
    let mut budget = Budget::new(eps)?;
    let c = f(&mut budget)?;
    audit(&budget, what)?;
    Ok(nicv(data, &c))
}

/// Everything a repetition needs besides its index.
pub struct Workload<'a> {
    pub data: &'a Dataset,
    pub k: usize,
    pub init_sets: &'a [Centroids],
    pub seed: u64,
    pub theta: f64,
    pub rho: f64,
    pub t: usize,
}

/// Raw-data NICV for every repetition of one algorithm at one `eps`, in a
/// fixed order.
pub fn run_cell(w: &Workload<'_>, algorithm: Algorithm, eps: f64, reps: &Reps) -> Result<Vec<f64>> {
    let label = format!("{}@{:016x}", algorithm.name(), eps.to_bits());
    let rng = |index: u64| Rng::derived(w.seed, &label, index);
    let data = w.data;
    let k = w.k;
    match algorithm {
        Algorithm::LloydBaseline => Ok(vec![run_baseline(data, w.init_sets)?]),
        Algorithm::DPLloyd => {
            let params = DPLloydParams { t: w.t, clamp: true };
            let per_set = reps.dplloyd;
            (0..w.init_sets.len() * per_set)
                .into_par_iter()
                .map(|i| {
                    let init = &w.init_sets[i / per_set];
                    audited(eps, &label, |b| dplloyd(data, init, eps, &params, &mut rng(i as u64), b), data)
                })
                .collect()
        }
        Algorithm::Gkm | Algorithm::Gkm3k => {
            let (policy, n) = if algorithm == Algorithm::Gkm {
                (BlockPolicy::NPow04, reps.gkm)
            } else {
                (BlockPolicy::ThreeK, reps.gkm3k)
            };
            let params = GkmParams::new(policy);
            (0..n)
                .into_par_iter()
                .map(|i| audited(eps, &label, |b| gkm(data, k, eps, &params, &mut rng(i as u64), b), data))
                .collect()
        }
        Algorithm::Pgkm => {
            let params = PgkmParams::default();
            (0..reps.pgkm)
                .into_par_iter()
                .map(|i| audited(eps, &label, |b| pgkm(data, k, eps, &params, &mut rng(i as u64), b), data))
                .collect()
        }
        Algorithm::Eugkm => (0..reps.eugkm)
            .into_par_iter()
            .map(|i| {
                audited(
                    eps,
                    &label,
                    |b| Ok(eugkm(data, k, eps, w.theta, w.init_sets, &mut rng(i as u64), b)?.0),
                    data,
                )
            })
            .collect(),
        Algorithm::Hybrid => {
            let r = data.domain()?;
            let params = HybridParams {
                theta: w.theta,
                rho: w.rho,
                t: w.t,
            };
            let decision = decide(data.n(), data.d(), k, r, eps, &params);
            let per_synopsis: Vec<Result<Vec<f64>>> = (0..reps.hybrid)
                .into_par_iter()
                .map(|s| {
                    let mut stage_rng = rng(s as u64);
                    let mut budget = Budget::new(eps)?;
                    if !decision.applied_hybrid {
                        let (c, _) = eugkm(data, k, eps, w.theta, w.init_sets, &mut stage_rng, &mut budget)?;
                        audit(&budget, &label)?;
                        return Ok(vec![nicv(data, &c)]);
                    }
                    let (mid, _) = eugkm(data, k, eps / 2.0, w.theta, w.init_sets, &mut stage_rng, &mut budget)?;
                    (0..reps.hybrid_refine)
                        .map(|j| {
                            let mut b = budget.clone();
                            let mut refine_rng =
                                Rng::derived(w.seed, &format!("{label}.refine"), (s * reps.hybrid_refine + j) as u64);
                            let c = dplloyd_one_round(data, &mid, eps / 2.0, &mut refine_rng, &mut b)?;
                            audit(&b, &label)?;
                            Ok(nicv(data, &c))
                        })
                        .collect()
                })
                .collect();
            let mut out = Vec::new();
            for chunk in per_synopsis {
                out.extend(chunk?);
            }
            Ok(out)
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let data = load_dataset(config)?;
    let r = data.domain()?;
    let reps = config.reps();
    let init_sets = make_init_sets(data.d(), config.k, r, reps.init_sets, config.master_seed);
    let baseline_nicv = run_baseline(&data, &init_sets)?;
    let workload = Workload {
        data: &data,
        k: config.k,
        init_sets: &init_sets,
        seed: config.master_seed,
        theta: config.theta,
        rho: config.rho,
        t: config.t,
    };
    let mut rows = Vec::new();
    for &algorithm in &config.algorithms {
        for &eps in &config.eps_list {
            let start = Instant::now();
            let (values, n_runs) = if algorithm == Algorithm::LloydBaseline {
                (vec![baseline_nicv], init_sets.len())
            } else {
                let v = run_cell(&workload, algorithm, eps, &reps)?;
                let n = v.len();
                (v, n)
            };
            let (mean_nicv, std_nicv) = mean_std(&values);
            rows.push(ReportRow {
                algorithm,
                eps,
                mean_nicv,
                std_nicv,
                n_runs,
                wall_ms: if config.timing { start.elapsed().as_millis() } else { 0 },
            });
        }
    }
    Ok(Report { baseline_nicv, rows })
}

/// Parameter lattice for the error-model table.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictLattice {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub eps: Vec<f64>,
    pub t: usize,
    pub r: f64,
    pub rho: f64,
    pub theta: f64,
}

pub const PREDICT_HEADER: &str =
    "n,d,k,eps,t,m_cells,dplloyd_mse,eugkm_variance,eugkm_bias_bound,hybrid_one_round_mse,eps_threshold,applied_hybrid";

/// One CSV row per lattice point with every predictor and the hybrid threshold.
pub fn predict_table(lattice: &PredictLattice) -> String {
    let mut out = String::from(PREDICT_HEADER);
    out.push('\n');
    for &n in &lattice.n {
        for &d in &lattice.d {
            for &k in &lattice.k {
                for &eps in &lattice.eps {
                    let p = ErrorModelParams {
                        n,
                        d,
                        k,
                        t: lattice.t,
                        r: lattice.r,
                        rho: lattice.rho,
                        eps,
                        m_cells: None,
                        theta: lattice.theta,
                    };
                    let params = HybridParams {
                        theta: lattice.theta,
                        rho: lattice.rho,
                        t: lattice.t,
                    };
                    let decision = decide(n, d, k, lattice.r, eps, &params);
                    writeln!(
                        out,
                        "{n},{d},{k},{eps},{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                        lattice.t,
                        p.cells(),
                        predict_dplloyd_mse(&p),
                        predict_eugkm_variance(&p),
                        predict_eugkm_bias_bound(&p),
                        predict_hybrid_one_round_mse(&p),
                        decision.eps_threshold,
                        decision.applied_hybrid
                    )
                    .expect("writing to a String");
                }
            }
        }
    }
    out
}
