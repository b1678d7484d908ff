//! Seeded Monte Carlo experiments: coverage frequencies, length quantiles
//! and power of the interval-based test.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{
    balke_pearl_ate_spec, estimate_reduced_form, manski_binary_spec, BinaryIvData, EstimateOptions, StaticRecord,
};
use crate::ci::{
    conditional_ci, conventional_ci, hybrid_ci, projection_ci, CiKind, ConfidenceInterval, CriticalValues, UpperTarget,
};
use crate::error::{Error, Result};
use crate::linalg::{psd_factor, Matrix};
use crate::model::{BoundEstimate, BoundsSpec, ReducedForm};
use crate::select::{fixed_target, rule_weighted, SelectionOutcome};

/// Stratified multinomial over `(Y, D)` given a Bernoulli instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    pub label: String,
    /// `(p^{10z}, p^{01z}, p^{11z})` for `z = 0` then `z = 1`.
    pub p: Vec<f64>,
    #[serde(default = "default_q_z")]
    pub q_z: f64,
    pub n: usize,
}

fn default_q_z() -> f64 {
    0.5
}

impl Dgp {
    pub fn new(label: impl Into<String>, p: Vec<f64>, n: usize) -> Result<Self> {
        let dgp = Dgp {
            label: label.into(),
            p,
            q_z: 0.5,
            n,
        };
        dgp.validate()?;
        Ok(dgp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != 6 {
            return Err(Error::Dimension(format!(
                "DGP '{}' needs 6 probabilities, got {}",
                self.label,
                self.p.len()
            )));
        }
        if self.p.iter().any(|x| !(*x >= 0.0 && *x <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "DGP '{}' has a probability outside [0, 1]",
                self.label
            )));
        }
        for z in 0..2 {
            let s: f64 = self.p[3 * z..3 * z + 3].iter().sum();
            if s > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "DGP '{}' stratum z={z} sums to {s} > 1",
                    self.label
                )));
            }
        }
        if !(self.q_z >= 0.0 && self.q_z <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "q_z = {} is not a probability",
                self.q_z
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        Ok(())
    }

    /// Covariance of the limit of `sqrt(n)(p_hat - p)` under stratified sampling.
    pub fn sigma(&self) -> Result<Matrix<f64>> {
        if !(self.q_z > 0.0 && self.q_z < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "q_z = {} leaves a stratum empty",
                self.q_z
            )));
        }
        let mut s = Matrix::zeros(6, 6);
        for z in 0..2 {
            let pz = if z == 1 { self.q_z } else { 1.0 - self.q_z };
            for i in 0..3 {
                for j in 0..3 {
                    let (a, b) = (self.p[3 * z + i], self.p[3 * z + j]);
                    s[(3 * z + i, 3 * z + j)] = (if i == j { a } else { 0.0 } - a * b) / pz;
                }
            }
        }
        Ok(s)
    }
}

/// How each replication produces its reduced form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Simulate records and estimate cell frequencies.
    #[default]
    Multinomial,
    /// Draw `p_hat ~ N(p, Sigma / n)` with `Sigma` known.
    Gaussian,
}

/// Reduced form drawn from the Gaussian limit, with the true covariance.
pub fn sample_reduced_form<R: Rng + ?Sized>(dgp: &Dgp, rng: &mut R) -> Result<ReducedForm<f64>> {
    let sigma = dgp.sigma()?;
    let f = psd_factor(&sigma, 1e-12)?;
    let xi: Vec<f64> = (0..f.ncols()).map(|_| StandardNormal.sample(rng)).collect();
    let e = f.mul_vec(&xi);
    let scale = 1.0 / (dgp.n as f64).sqrt();
    let p_hat = dgp.p.iter().zip(&e).map(|(p, x)| p + scale * x).collect();
    ReducedForm::with_lambda_bar(dgp.n, p_hat, sigma, f64::INFINITY)
}

/// `n` i.i.d. observations from `dgp`.
pub fn sample<R: Rng + ?Sized>(dgp: &Dgp, rng: &mut R) -> BinaryIvData {
    const CELLS: [(u8, u8); 3] = [(1, 0), (0, 1), (1, 1)];
    let records = (0..dgp.n)
        .map(|_| {
            let z = u8::from(rng.random::<f64>() < dgp.q_z);
            let u: f64 = rng.random();
            let probs = &dgp.p[3 * z as usize..3 * z as usize + 3];
            let mut acc = 0.0;
            let (y, d) = CELLS
                .iter()
                .zip(probs)
                .find(|(_, &pr)| {
                    acc += pr;
                    u < acc
                })
                .map(|(c, _)| *c)
                .unwrap_or((0, 0));
            StaticRecord { y, d, z }
        })
        .collect();
    BinaryIvData::Static(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecKind {
    ManskiBinary,
    BalkePearl,
}

impl SpecKind {
    pub fn build(self) -> BoundsSpec<f64> {
        match self {
            SpecKind::ManskiBinary => manski_binary_spec(),
            SpecKind::BalkePearl => balke_pearl_ate_spec(),
        }
    }
}

/// Selection rule applied in every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimRule {
    /// Largest estimated lower bound.
    MaxLower,
    /// Largest estimated upper bound.
    MaxUpper,
    /// Largest sum of the estimated bounds.
    Weighted,
    /// Option 0, chosen in advance.
    Fixed,
}

impl SimRule {
    pub fn select(self, spec: &BoundsSpec<f64>, rf: &ReducedForm<f64>) -> Result<SelectionOutcome<f64>> {
        match self {
            SimRule::MaxLower => rule_weighted(spec, rf, 1.0, 0.0),
            SimRule::MaxUpper => rule_weighted(spec, rf, 0.0, 1.0),
            SimRule::Weighted => rule_weighted(spec, rf, 1.0, 1.0),
            SimRule::Fixed => fixed_target(spec, rf, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Coverage,
    Length,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    pub experiments: Vec<Experiment>,
    pub dgps: Vec<Dgp>,
    #[serde(default = "default_rule")]
    pub rule: SimRule,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<CiKind>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_beta_frac")]
    pub beta_frac: f64,
    #[serde(default)]
    pub upper_target: UpperTarget,
    #[serde(default = "default_spec")]
    pub spec: SpecKind,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub w0_grid: Vec<f64>,
}

fn default_rule() -> SimRule {
    SimRule::MaxLower
}
fn default_kinds() -> Vec<CiKind> {
    CiKind::ALL.to_vec()
}
fn default_alpha() -> f64 {
    0.05
}
fn default_reps() -> usize {
    2000
}
fn default_draws() -> usize {
    100_000
}
fn default_beta_frac() -> f64 {
    0.1
}
fn default_spec() -> SpecKind {
    SpecKind::ManskiBinary
}

/// Minimum replications for a coverage study.
pub const MIN_REPS: usize = 100;

impl SimConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(Error::InvalidArgument("no experiments requested".into()));
        }
        if self.dgps.is_empty() {
            return Err(Error::InvalidArgument("no DGPs given".into()));
        }
        for d in &self.dgps {
            d.validate()?;
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("no interval kinds requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} is not in (0, 1)", self.alpha)));
        }
        if self.experiments.contains(&Experiment::Coverage) && self.reps < MIN_REPS {
            return Err(Error::InvalidArgument(format!(
                "coverage needs at least {MIN_REPS} replications, got {}",
                self.reps
            )));
        }
        if self.reps == 0 || self.draws == 0 {
            return Err(Error::InvalidArgument("reps and draws must be positive".into()));
        }
        if self.experiments.contains(&Experiment::Length) {
            for k in [CiKind::Projection] {
                if !self.kinds.contains(&k) {
                    return Err(Error::InvalidArgument(
                        "length ratios need the projection interval".into(),
                    ));
                }
            }
        }
        if self.experiments.contains(&Experiment::Power) && self.w0_grid.is_empty() {
            return Err(Error::InvalidArgument("power needs a nonempty w0_grid".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        json_sha256(self)
    }
}

/// SHA-256 hex digest of the compact JSON encoding of `value`.
pub fn json_sha256<S: Serialize + ?Sized>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What one replication produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub d_hat: usize,
    /// True `(L(d_hat), U(d_hat))`.
    pub truth: (f64, f64),
    pub intervals: Vec<ConfidenceInterval>,
}

/// Per-replication random stream: the master seed with stream `(dgp << 32) | rep`.
pub fn replication_rng(seed: u64, dgp_index: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((dgp_index as u64) << 32) | rep as u64);
    rng
}

fn estimate_options() -> EstimateOptions {
    EstimateOptions {
        lambda_bar: f64::INFINITY,
        ..EstimateOptions::default()
    }
}

/// One replication of the study for `dgp`.
pub fn replicate(
    cfg: &SimConfig,
    spec: &BoundsSpec<f64>,
    dgp: &Dgp,
    truth: &BoundEstimate<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Replication> {
    let rf = match cfg.sampling {
        Sampling::Multinomial => estimate_reduced_form(&sample(dgp, rng), &estimate_options())?,
        Sampling::Gaussian => sample_reduced_form(dgp, rng)?,
    };
    let cv = CriticalValues::new(cfg.draws, rng.next_u64());
    let sel = cfg.rule.select(spec, &rf)?;
    let (a1, a2) = (cfg.alpha / 2.0, cfg.alpha / 2.0);
    let intervals = cfg
        .kinds
        .iter()
        .map(|k| match k {
            CiKind::Conventional => conventional_ci(spec, &rf, &sel, a1, a2),
            CiKind::Conditional => conditional_ci(spec, &rf, &sel, a1, a2),
            CiKind::Projection => projection_ci(spec, &rf, &sel, a1, a2, &cv),
            CiKind::Hybrid => hybrid_ci(spec, &rf, &sel, a1, a2, cfg.beta_frac, cfg.upper_target, &cv),
        })
        .collect::<Result<Vec<_>>>()?;
    let ob = truth.options[sel.d_hat];
    Ok(Replication {
        d_hat: sel.d_hat,
        truth: (ob.l_hat, ob.u_hat),
        intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256,
            seed,
        }
    }

    pub fn for_config(cfg: &SimConfig) -> Self {
        Provenance::new(cfg.hash(), cfg.seed)
    }

    pub fn header(&self) -> String {
        format!(
            "# tool={} version={} config_sha256={} seed={}\n",
            self.tool, self.version, self.config_sha256, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionCoverage {
    pub d: usize,
    pub count: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub kind: CiKind,
    pub coverage: f64,
    pub se: f64,
    pub crossed: usize,
    /// Coverage among replications selecting each option.
    pub by_option: Vec<OptionCoverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub kind: CiKind,
    #[serde(with = "crate::serde_ext::extended_vec")]
    pub quantiles: Vec<f64>,
    /// Quantile-by-quantile ratio to the projection interval.
    #[serde(with = "crate::serde_ext::extended_vec")]
    pub ratios: Vec<f64>,
    pub excluded_crossed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub w0: f64,
    pub rejection: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub kind: CiKind,
    pub points: Vec<PowerPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpReport {
    pub label: String,
    pub n: usize,
    pub p: Vec<f64>,
    /// Identified interval of option 0 at the true `p`.
    pub identified: (f64, f64),
    pub completed: usize,
    pub failed: usize,
    /// Replications where the hybrid interval left the projection interval at level beta.
    pub hybrid_containment_violations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<CoverageRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lengths: Vec<LengthRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub power: Vec<PowerRow>,
}

impl DgpReport {
    pub fn coverage_of(&self, kind: CiKind) -> Option<&CoverageRow> {
        self.coverage.iter().find(|r| r.kind == kind)
    }

    pub fn length_of(&self, kind: CiKind) -> Option<&LengthRow> {
        self.lengths.iter().find(|r| r.kind == kind)
    }

    pub fn power_of(&self, kind: CiKind) -> Option<&PowerRow> {
        self.power.iter().find(|r| r.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub name: String,
    pub alpha: f64,
    pub reps: usize,
    pub draws: usize,
    pub beta_frac: f64,
    pub rule: SimRule,
    pub spec: SpecKind,
    pub sampling: Sampling,
    pub dgps: Vec<DgpReport>,
}

/// Levels of the reported length quantiles.
pub const LENGTH_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

fn mc_se(f: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (f * (1.0 - f) / n as f64).sqrt()
    }
}

/// Type-7 sample quantile of sorted data; infinite entries propagate.
pub fn quantile_sorted(x: &[f64], level: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let h = (x.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo == hi {
        return x[lo];
    }
    if x[hi].is_infinite() {
        return x[hi];
    }
    x[lo] + frac * (x[hi] - x[lo])
}

impl SimConfig {
    /// Config with default settings for everything but the experiments and DGPs.
    pub fn new(name: impl Into<String>, experiments: Vec<Experiment>, dgps: Vec<Dgp>) -> Self {
        SimConfig {
            name: name.into(),
            experiments,
            dgps,
            rule: default_rule(),
            kinds: default_kinds(),
            alpha: default_alpha(),
            reps: default_reps(),
            seed: 0,
            draws: default_draws(),
            beta_frac: default_beta_frac(),
            upper_target: UpperTarget::default(),
            spec: default_spec(),
            sampling: Sampling::default(),
            w0_grid: Vec::new(),
        }
    }
}

/// Coverage of `kinds` under `rule` with the other settings at their defaults.
pub fn coverage_experiment(
    dgp: &Dgp,
    rule: SimRule,
    kinds: &[CiKind],
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let mut cfg = SimConfig::new("coverage", vec![Experiment::Coverage], vec![dgp.clone()]);
    cfg.rule = rule;
    cfg.kinds = kinds.to_vec();
    cfg.alpha = alpha;
    cfg.reps = reps;
    cfg.seed = seed;
    run(&cfg)
}

/// Length quantiles of the conditional, projection and hybrid intervals.
pub fn length_experiment(dgp: &Dgp, rule: SimRule, reps: usize, seed: u64) -> Result<ExperimentReport> {
    let mut cfg = SimConfig::new("length", vec![Experiment::Length], vec![dgp.clone()]);
    cfg.rule = rule;
    cfg.kinds = vec![CiKind::Conditional, CiKind::Projection, CiKind::Hybrid];
    cfg.reps = reps;
    cfg.seed = seed;
    run(&cfg)
}

/// Rejection frequencies of the hybrid test for the Balke-Pearl ATE at option 0.
pub fn power_experiment(dgp: &Dgp, w0_grid: &[f64], alpha: f64, reps: usize, seed: u64) -> Result<ExperimentReport> {
    let mut cfg = SimConfig::new("power", vec![Experiment::Power], vec![dgp.clone()]);
    cfg.spec = SpecKind::BalkePearl;
    cfg.rule = SimRule::Fixed;
    cfg.kinds = vec![CiKind::Hybrid];
    cfg.alpha = alpha;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.w0_grid = w0_grid.to_vec();
    run(&cfg)
}

/// Runs every requested experiment.
pub fn run(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = cfg.spec.build();
    let dgps = cfg
        .dgps
        .iter()
        .enumerate()
        .map(|(i, dgp)| run_dgp(cfg, &spec, i, dgp))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        provenance: Provenance::for_config(cfg),
        name: cfg.name.clone(),
        alpha: cfg.alpha,
        reps: cfg.reps,
        draws: cfg.draws,
        beta_frac: cfg.beta_frac,
        rule: cfg.rule,
        spec: cfg.spec,
        sampling: cfg.sampling,
        dgps,
    })
}

fn run_dgp(cfg: &SimConfig, spec: &BoundsSpec<f64>, index: usize, dgp: &Dgp) -> Result<DgpReport> {
    let truth = spec.evaluate(&dgp.p)?;
    let outcomes: Vec<Result<Replication>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| replicate(cfg, spec, dgp, &truth, &mut replication_rng(cfg.seed, index, rep)))
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed * 100 > cfg.reps {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::Replications {
            failed,
            reps: cfg.reps,
            first,
        });
    }
    let reps: Vec<Replication> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let completed = reps.len();
    let hybrid_containment_violations = cfg
        .kinds
        .iter()
        .position(|k| *k == CiKind::Hybrid)
        .map(|h| {
            reps.iter()
                .filter(|r| {
                    let ci = &r.intervals[h];
                    let (pl, pu) = ci
                        .diagnostics
                        .projection_at_beta
                        .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                    ci.lower < pl || ci.upper > pu
                })
                .count()
        })
        .unwrap_or(0);

    let mut report = DgpReport {
        label: dgp.label.clone(),
        n: dgp.n,
        p: dgp.p.clone(),
        identified: (truth.options[0].l_hat, truth.options[0].u_hat),
        completed,
        failed,
        hybrid_containment_violations,
        coverage: Vec::new(),
        lengths: Vec::new(),
        power: Vec::new(),
    };
    for exp in &cfg.experiments {
        match exp {
            Experiment::Coverage => report.coverage = coverage_rows(cfg, spec.num_options(), &reps),
            Experiment::Length => report.lengths = length_rows(cfg, &reps),
            Experiment::Power => report.power = power_rows(cfg, &reps),
        }
    }
    Ok(report)
}

fn coverage_rows(cfg: &SimConfig, options: usize, reps: &[Replication]) -> Vec<CoverageRow> {
    let covers = |r: &Replication, k: usize| r.intervals[k].contains(r.truth.0) && r.intervals[k].contains(r.truth.1);
    cfg.kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let hits = reps.iter().filter(|r| covers(r, k)).count();
            let f = if reps.is_empty() {
                0.0
            } else {
                hits as f64 / reps.len() as f64
            };
            let by_option = (0..options)
                .map(|d| {
                    let sub: Vec<&Replication> = reps.iter().filter(|r| r.d_hat == d).collect();
                    let h = sub.iter().filter(|r| covers(r, k)).count();
                    OptionCoverage {
                        d,
                        count: sub.len(),
                        coverage: if sub.is_empty() {
                            0.0
                        } else {
                            h as f64 / sub.len() as f64
                        },
                    }
                })
                .collect();
            CoverageRow {
                kind: *kind,
                coverage: f,
                se: mc_se(f, reps.len()),
                crossed: reps.iter().filter(|r| r.intervals[k].diagnostics.crossed).count(),
                by_option,
            }
        })
        .collect()
}

fn length_rows(cfg: &SimConfig, reps: &[Replication]) -> Vec<LengthRow> {
    let quantiles = |k: usize| -> (Vec<f64>, usize) {
        let mut lens: Vec<f64> = reps
            .iter()
            .filter(|r| !r.intervals[k].diagnostics.crossed)
            .map(|r| r.intervals[k].length())
            .collect();
        let excluded = reps.len() - lens.len();
        lens.sort_by(f64::total_cmp);
        (
            LENGTH_LEVELS.iter().map(|l| quantile_sorted(&lens, *l)).collect(),
            excluded,
        )
    };
    let proj = cfg
        .kinds
        .iter()
        .position(|k| *k == CiKind::Projection)
        .expect("validated");
    let (proj_q, _) = quantiles(proj);
    cfg.kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k != CiKind::Conventional)
        .map(|(k, kind)| {
            let (q, excluded) = quantiles(k);
            let ratios = q.iter().zip(&proj_q).map(|(a, b)| a / b).collect();
            LengthRow {
                kind: *kind,
                quantiles: q,
                ratios,
                excluded_crossed: excluded,
            }
        })
        .collect()
}

fn power_rows(cfg: &SimConfig, reps: &[Replication]) -> Vec<PowerRow> {
    cfg.kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| PowerRow {
            kind: *kind,
            points: cfg
                .w0_grid
                .iter()
                .map(|&w0| {
                    let rej = reps.iter().filter(|r| !r.intervals[k].contains(w0)).count();
                    let f = if reps.is_empty() {
                        0.0
                    } else {
                        rej as f64 / reps.len() as f64
                    };
                    PowerPoint {
                        w0,
                        rejection: f,
                        se: mc_se(f, reps.len()),
                    }
                })
                .collect(),
        })
        .collect()
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per DGP, kind and statistic.
    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.header();
        out.push_str("experiment,dgp,n,kind,metric,level,value,se\n");
        for d in &self.dgps {
            for r in &d.coverage {
                out.push_str(&format!(
                    "coverage,{},{},{},coverage,,{},{}\n",
                    d.label,
                    d.n,
                    r.kind.label(),
                    r.coverage,
                    r.se
                ));
            }
            for r in &d.lengths {
                for ((l, q), ratio) in LENGTH_LEVELS.iter().zip(&r.quantiles).zip(&r.ratios) {
                    out.push_str(&format!(
                        "length,{},{},{},quantile,{l},{q},\n",
                        d.label,
                        d.n,
                        r.kind.label()
                    ));
                    out.push_str(&format!(
                        "length,{},{},{},ratio,{l},{ratio},\n",
                        d.label,
                        d.n,
                        r.kind.label()
                    ));
                }
            }
            for r in &d.power {
                for pt in &r.points {
                    out.push_str(&format!(
                        "power,{},{},{},rejection,{},{},{}\n",
                        d.label,
                        d.n,
                        r.kind.label(),
                        pt.w0,
                        pt.rejection,
                        pt.se
                    ));
                }
            }
        }
        out
    }

    /// Gnuplot data blocks, one per DGP, separated by two blank lines.
    pub fn to_dat(&self) -> String {
        let mut out = self.provenance.header();
        for d in &self.dgps {
            if !d.lengths.is_empty() {
                out.push_str(&format!("# length ratios dgp={} n={}\n# level", d.label, d.n));
                for r in &d.lengths {
                    out.push_str(&format!(" {}", r.kind.label()));
                }
                out.push('\n');
                for (i, l) in LENGTH_LEVELS.iter().enumerate() {
                    out.push_str(&format!("{l}"));
                    for r in &d.lengths {
                        out.push_str(&format!(" {}", r.ratios[i]));
                    }
                    out.push('\n');
                }
                out.push_str("\n\n");
            }
            if !d.power.is_empty() {
                out.push_str(&format!(
                    "# power dgp={} n={} identified={} {}\n# w0",
                    d.label, d.n, d.identified.0, d.identified.1
                ));
                for r in &d.power {
                    out.push_str(&format!(" {}", r.kind.label()));
                }
                out.push('\n');
                for (i, w0) in d.power[0].points.iter().map(|p| p.w0).enumerate() {
                    out.push_str(&format!("{w0}"));
                    for r in &d.power {
                        out.push_str(&format!(" {}", r.points[i].rejection));
                    }
                    out.push('\n');
                }
                out.push_str("\n\n");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::static_coord;

    fn cfg(experiments: Vec<Experiment>, dgps: Vec<Dgp>, reps: usize) -> SimConfig {
        let mut c = SimConfig::new("test", experiments, dgps);
        c.reps = reps;
        c.seed = 42;
        c.draws = 2000;
        c
    }

    fn uniform(n: usize) -> Dgp {
        Dgp::new("uniform", vec![0.25; 6], n).unwrap()
    }

    #[test]
    fn experiment_wrappers_match_run() {
        let d = uniform(100);
        let a = coverage_experiment(&d, SimRule::MaxLower, &[CiKind::Conventional], 0.1, 100, 3).unwrap();
        let mut c = SimConfig::new("coverage", vec![Experiment::Coverage], vec![d.clone()]);
        (c.kinds, c.alpha, c.reps, c.seed) = (vec![CiKind::Conventional], 0.1, 100, 3);
        assert_eq!(a, run(&c).unwrap());
        let p = power_experiment(&d, &[-1.0, 0.0], 0.05, 20, 1).unwrap();
        assert_eq!(p.spec, SpecKind::BalkePearl);
        assert_eq!(p.dgps[0].power_of(CiKind::Hybrid).unwrap().points.len(), 2);
        let l = length_experiment(&d, SimRule::MaxLower, 20, 1).unwrap();
        assert_eq!(l.dgps[0].lengths.len(), 3);
    }

    #[test]
    fn degenerate_instrument() {
        let mut d = uniform(500);
        d.q_z = 1.0;
        let BinaryIvData::Static(recs) = sample(&d, &mut ChaCha8Rng::seed_from_u64(1)) else {
            panic!("static data expected")
        };
        assert!(recs.iter().all(|r| r.z == 1));
    }

    #[test]
    fn cell_frequencies_converge() {
        let d = Dgp::new("calibrated", vec![0.08, 0.001, 0.001, 0.073, 0.139, 0.473], 1_000_000).unwrap();
        let BinaryIvData::Static(recs) = sample(&d, &mut ChaCha8Rng::seed_from_u64(2)) else {
            panic!("static data expected")
        };
        let mut counts = [0usize; 6];
        let mut nz = [0usize; 2];
        for r in &recs {
            nz[r.z as usize] += 1;
            if let Some(k) = static_coord(r.y, r.d, r.z) {
                counts[k] += 1;
            }
        }
        for k in 0..6 {
            let m = nz[k / 3] as f64;
            let f = counts[k] as f64 / m;
            let se = (d.p[k] * (1.0 - d.p[k]) / m).sqrt();
            assert!((f - d.p[k]).abs() <= 3.0 * se, "cell {k}: {f} vs {}", d.p[k]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = uniform(200);
        let a = sample(&d, &mut replication_rng(9, 0, 3)).to_csv();
        let b = sample(&d, &mut replication_rng(9, 0, 3)).to_csv();
        let c = sample(&d, &mut replication_rng(9, 0, 4)).to_csv();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dgps() {
        assert!(Dgp::new("x", vec![0.5; 6], 10).is_err());
        assert!(Dgp::new("x", vec![0.1; 5], 10).is_err());
        assert!(Dgp::new("x", vec![0.1; 6], 0).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&x, 0.5), 3.0);
        assert_eq!(quantile_sorted(&x, 0.25), 2.0);
        assert!((quantile_sorted(&x, 0.95) - 4.8).abs() < 1e-12);
        let y = [1.0, 2.0, f64::INFINITY];
        assert_eq!(quantile_sorted(&y, 0.5), 2.0);
        assert_eq!(quantile_sorted(&y, 0.75), f64::INFINITY);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = SimConfig::from_json(
            r#"{"name": "t", "experiments": ["coverage"], "dgps": [{"label": "u", "p": [0.25,0.25,0.25,0.25,0.25,0.25], "n": 100}]}"#,
        )
        .unwrap();
        assert_eq!((c.reps, c.draws, c.alpha, c.beta_frac), (2000, 100_000, 0.05, 0.1));
        assert_eq!(c.dgps[0].q_z, 0.5);
        assert_eq!(c.rule, SimRule::MaxLower);
        assert_eq!(c.hash().len(), 64);
        assert!(SimConfig::from_json(r#"{"name": "t", "experiments": ["coverage"], "dgps": [], "bogus": 1}"#).is_err());
        let mut bad = c.clone();
        bad.reps = 50;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn self_ratio_is_one_and_frequencies_valid() {
        let c = cfg(vec![Experiment::Coverage, Experiment::Length], vec![uniform(100)], 120);
        let r = run(&c).unwrap();
        let d = &r.dgps[0];
        assert_eq!(d.completed + d.failed, 120);
        assert!(d
            .length_of(CiKind::Projection)
            .unwrap()
            .ratios
            .iter()
            .all(|x| *x == 1.0));
        for row in &d.coverage {
            assert!((0.0..=1.0).contains(&row.coverage));
            assert!((row.se - mc_se(row.coverage, d.completed)).abs() < 1e-15);
        }
        for row in &d.lengths {
            assert!(row.quantiles.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(d.hybrid_containment_violations, 0);
        assert_eq!(d.length_of(CiKind::Conventional), None);
    }

    #[test]
    fn coverage_falls_with_alpha() {
        let mut lo = cfg(vec![Experiment::Coverage], vec![uniform(100)], 150);
        lo.kinds = vec![CiKind::Conventional, CiKind::Conditional];
        let mut hi = lo.clone();
        hi.alpha = 0.5;
        let a = run(&lo).unwrap();
        let b = run(&hi).unwrap();
        for k in [CiKind::Conventional, CiKind::Conditional] {
            let ca = a.dgps[0].coverage_of(k).unwrap().coverage;
            let cb = b.dgps[0].coverage_of(k).unwrap().coverage;
            assert!(cb < ca - 0.1, "{k:?}: {cb} vs {ca}");
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = cfg(vec![Experiment::Coverage, Experiment::Length], vec![uniform(100)], 100);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run(&c).unwrap());
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| run(&c).unwrap());
        assert_eq!(one.to_json(), three.to_json());
        assert_eq!(one.to_csv(), three.to_csv());
        assert!(!one.to_json().contains("runtime"));
    }

    #[test]
    fn power_outputs() {
        let mut c = cfg(
            vec![Experiment::Power],
            vec![Dgp::new("calibrated", vec![0.08, 0.001, 0.001, 0.073, 0.139, 0.473], 1000).unwrap()],
            100,
        );
        c.spec = SpecKind::BalkePearl;
        c.rule = SimRule::Fixed;
        c.kinds = vec![CiKind::Hybrid];
        c.w0_grid = vec![-1.0, 0.0, 1.0];
        let r = run(&c).unwrap();
        let d = &r.dgps[0];
        let pts = &d.power_of(CiKind::Hybrid).unwrap().points;
        assert_eq!(pts.len(), 3);
        assert!(pts[0].rejection > 0.99 && pts[2].rejection > 0.99);
        assert!(d.identified.0 < d.identified.1);
        let csv = r.to_csv();
        assert!(csv.starts_with("# tool=boundselect"));
        assert_eq!(csv.lines().filter(|l| l.starts_with("power,")).count(), 3);
        assert!(r.to_dat().contains("# power dgp=calibrated"));
    }
}
