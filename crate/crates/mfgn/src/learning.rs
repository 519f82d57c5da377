//! Parameter estimation: expectation-maximization over uncertain tables.
//!
//! Training data is a [`TrainingTable`]: one [`Evidence`] per example, so a
//! cell may be an exact value, a noisy reading, an interval, a category
//! distribution, missing, or a weighted disjunction of such readings. Exact
//! tables reduce the procedure to classic mixture-of-Gaussians EM (plus
//! categorical counts); uncertain cells contribute through the same two
//! sufficient statistics — the responsibility-weighted first and second
//! moments of each conditioned marginal — which keeps every update in
//! closed form.
//!
//! The update rules, in the notation used throughout the crate (`q[k][i][r]`
//! is the normalized responsibility of component `i`, conjunction `r` for
//! row `k`; `v` and `lambda` the conditioned-marginal moments):
//!
//! * weights: `P[i] <- sum q / M`,
//! * continuous: `mu <- sum q v / D`, `sigma^2 <- sum q (v^2 + lambda^2) / D - mu^2`,
//! * symbolic: `t[w] <- sum q psi[w] / D`,
//!
//! where `D` sums responsibilities **only over conjunctions that observe
//! the attribute** — missing cells neither pull parameters toward a filler
//! value nor dilute the denominator. Interval cells enter through the exact
//! first and second moments of the truncated prior marginal.
//!
//! Guard rails applied after each M step, in order: a variance floor
//! (relative to the squared observed range of each attribute), a symbolic
//! probability floor (renormalized), at most one pruning of a
//! below-threshold component per iteration, and re-seeding of components
//! whose total responsibility has vanished. Every run is bit-deterministic
//! given the seed; [`FitReport`] records the log-likelihood trajectory and
//! any prune/re-seed events.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evidence::{Evidence, Observation};
use crate::gn::{log_sum_exp, std_normal_cdf, std_normal_pdf, GeneralizedNormal};
use crate::inference::{ln_elementary_likelihood, modified_marginal, posterior, Estimate, Psi};
use crate::model::{AttributeSchema, Component, Marginal, MfgnModel, Value};

/// A component's responsibility mass is considered vanished when it drops
/// below `EMPTY_RESPONSIBILITY_TOL * M`.
const EMPTY_RESPONSIBILITY_TOL: f64 = 1e-12;
/// Stream separator for the re-seed RNG so it never collides with the
/// initialization draws made from the same user seed.
const RESEED_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
/// Stream separator for cross-validation fold shuffling.
const FOLD_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Training data: one (possibly uncertain) [`Evidence`] per example row.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    schema: AttributeSchema,
    rows: Vec<Evidence>,
}

impl TrainingTable {
    /// Builds a table, validating every row against the schema. Tables must
    /// contain at least one row.
    pub fn new(schema: AttributeSchema, rows: Vec<Evidence>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DegenerateTable(
                "a training table needs at least one row".into(),
            ));
        }
        for (k, row) in rows.iter().enumerate() {
            row.validate(&schema)
                .map_err(|e| Error::DegenerateTable(format!("row {k}: {e}")))?;
        }
        Ok(Self { schema, rows })
    }

    /// Builds an exact table: every cell an [`Observation::Exact`].
    pub fn from_values(schema: AttributeSchema, rows: &[Vec<Value>]) -> Result<Self> {
        let evidence = rows
            .iter()
            .map(|row| {
                let obs: Vec<(usize, Observation)> = row
                    .iter()
                    .cloned()
                    .enumerate()
                    .map(|(j, v)| (j, Observation::Exact(v)))
                    .collect();
                Evidence::single(&schema, &obs)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(schema, evidence)
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Evidence] {
        &self.rows
    }

    /// Number of rows `M`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Knobs for [`em_fit`]. `..EmConfig::new(l, seed)` keeps the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Number of mixture components `l` to fit.
    pub components: usize,
    /// RNG seed; fits are bit-deterministic given the seed.
    pub seed: u64,
    /// Iteration cap (number of M steps). Default 500.
    pub max_iters: usize,
    /// Convergence threshold on the relative change of the total
    /// log-likelihood (`|dJ| <= tol * max(1, |J|)`). Default 1e-7;
    /// `0` disables early stopping.
    pub tol: f64,
    /// Variance floor as a fraction of each attribute's squared observed
    /// range (absolute floor when the range is zero). Default 1e-4.
    pub var_floor_factor: f64,
    /// Floor for symbolic probabilities, renormalized after flooring.
    /// Default 1e-6.
    pub sym_floor: f64,
    /// Components whose weight falls below this are pruned, at most one per
    /// iteration. Default 1e-3; `0` disables pruning.
    pub prune_threshold: f64,
}

impl EmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iters: 500,
            tol: 1e-7,
            var_floor_factor: 1e-4,
            sym_floor: 1e-6,
            prune_threshold: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::FitFailure("component count must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::FitFailure("iteration cap must be at least 1".into()));
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(Error::FitFailure(format!(
                "convergence tolerance {} is not finite and non-negative",
                self.tol
            )));
        }
        if !self.var_floor_factor.is_finite() || self.var_floor_factor <= 0.0 {
            return Err(Error::FitFailure(format!(
                "variance floor factor {} is not finite and positive",
                self.var_floor_factor
            )));
        }
        if !self.sym_floor.is_finite() || self.sym_floor < 0.0 || self.sym_floor >= 0.5 {
            return Err(Error::FitFailure(format!(
                "symbolic floor {} is not in [0, 0.5)",
                self.sym_floor
            )));
        }
        if !self.prune_threshold.is_finite()
            || self.prune_threshold < 0.0
            || self.prune_threshold >= 1.0
        {
            return Err(Error::FitFailure(format!(
                "prune threshold {} is not in [0, 1)",
                self.prune_threshold
            )));
        }
        Ok(())
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// A structural change made during one M step.
#[derive(Debug, Clone, PartialEq)]
pub enum FitEvent {
    /// Component `component` fell below the prune threshold and was removed.
    Pruned { iteration: usize, component: usize, weight: f64 },
    /// Component `component` had vanishing responsibility mass and was
    /// re-seeded at training row `row`.
    Reseeded { iteration: usize, component: usize, row: usize },
}

/// Trajectory of one EM run.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Total log-likelihood after `0, 1, 2, ...` M steps (entry 0 scores
    /// the initial model).
    pub log_likelihood: Vec<f64>,
    /// Whether the run stopped on the tolerance rather than the cap.
    pub converged: bool,
    /// Prune and re-seed events. `iteration` is the 1-based index of the M
    /// step in which the event occurred.
    pub events: Vec<FitEvent>,
}

impl FitReport {
    /// Number of M steps applied.
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    /// Log-likelihood of the returned model.
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("a report holds at least one entry")
    }
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, j) in self.log_likelihood.iter().enumerate() {
            for e in &self.events {
                match e {
                    FitEvent::Pruned { iteration, component, weight } if *iteration == t => {
                        writeln!(f, "pruned component {component} (weight {weight:.3e})")?;
                    }
                    FitEvent::Reseeded { iteration, component, row } if *iteration == t => {
                        writeln!(f, "reseeded component {component} at row {row}")?;
                    }
                    _ => {}
                }
            }
            writeln!(f, "iter {t} log-likelihood {j:.6}")?;
        }
        if self.converged {
            writeln!(f, "converged after {} iterations", self.iterations())
        } else {
            writeln!(f, "stopped at max iterations ({})", self.iterations())
        }
    }
}

/// Per-attribute empirical summaries of a table, used for initialization,
/// re-seeding and variance floors.
struct AttrStats {
    /// Continuous attributes: weighted mean/std/min/max of cell centers.
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    /// Symbolic attributes: add-one-smoothed category frequencies.
    freqs: Vec<f64>,
}

/// A representative location for one cell, used only by initialization
/// heuristics (never by the EM updates themselves).
fn obs_center(o: &Observation) -> Option<f64> {
    match o {
        Observation::Exact(Value::Continuous(v)) => Some(*v),
        Observation::Gaussian { s, bias, .. } => Some(s - bias),
        Observation::Interval { a, b } => {
            if a.is_finite() && b.is_finite() {
                Some(0.5 * (a + b))
            } else if a.is_finite() {
                Some(*a)
            } else if b.is_finite() {
                Some(*b)
            } else {
                None
            }
        }
        Observation::NormalMixture(parts) => {
            let wsum: f64 = parts.iter().map(|(w, _)| w).sum();
            let msum: f64 = parts.iter().map(|(w, g)| w * g.mu).sum();
            Some(msum / wsum)
        }
        _ => None,
    }
}

/// Weighted center of attribute `j` across a row's conjunctions, if any
/// conjunction observes it with a locatable cell.
fn row_center(row: &Evidence, j: usize) -> Option<f64> {
    let mut mass = 0.0;
    let mut sum = 0.0;
    for conj in &row.conjunctions {
        if let Some(c) = obs_center(&conj.observations[j]) {
            mass += conj.weight;
            sum += conj.weight * c;
        }
    }
    if mass > 0.0 {
        Some(sum / mass)
    } else {
        None
    }
}

fn attribute_stats(schema: &AttributeSchema, rows: &[Evidence]) -> Result<Vec<AttrStats>> {
    let mut out = Vec::with_capacity(schema.len());
    for j in 0..schema.len() {
        let attr = schema.attr(j);
        if attr.is_symbolic() {
            let kcount = schema.category_count(j);
            let mut mass = vec![0.0; kcount];
            let mut total = 0.0;
            for row in rows {
                let row_w: f64 = row.conjunctions.iter().map(|c| c.weight).sum();
                for conj in &row.conjunctions {
                    let w = conj.weight / row_w;
                    match &conj.observations[j] {
                        Observation::Exact(Value::Symbolic(k)) => {
                            mass[*k] += w;
                            total += w;
                        }
                        Observation::SymbolicDist(p) => {
                            for (m, pv) in mass.iter_mut().zip(p) {
                                *m += w * pv;
                            }
                            total += w;
                        }
                        _ => {}
                    }
                }
            }
            if total == 0.0 {
                return Err(Error::DegenerateTable(format!(
                    "attribute '{}' is missing in every row",
                    attr.name
                )));
            }
            let freqs: Vec<f64> =
                mass.iter().map(|m| (m + 1.0) / (total + kcount as f64)).collect();
            out.push(AttrStats { mean: 0.0, std: 0.0, min: 0.0, max: 0.0, freqs });
        } else {
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for row in rows {
                let row_w: f64 = row.conjunctions.iter().map(|c| c.weight).sum();
                for conj in &row.conjunctions {
                    if let Some(c) = obs_center(&conj.observations[j]) {
                        let w = conj.weight / row_w;
                        s0 += w;
                        s1 += w * c;
                        s2 += w * c * c;
                        min = min.min(c);
                        max = max.max(c);
                    }
                }
            }
            if s0 == 0.0 {
                return Err(Error::DegenerateTable(format!(
                    "attribute '{}' is missing in every row",
                    attr.name
                )));
            }
            let mean = s1 / s0;
            let std = (s2 / s0 - mean * mean).max(0.0).sqrt();
            out.push(AttrStats { mean, std, min, max, freqs: Vec::new() })
        }
    }
    Ok(out)
}

/// Variance floor per attribute: `var_floor_factor * range^2`, falling back
/// to the bare factor when the observed range is zero (constant column).
fn var_floors(schema: &AttributeSchema, stats: &[AttrStats], cfg: &EmConfig) -> Vec<f64> {
    (0..schema.len())
        .map(|j| {
            if schema.attr(j).is_symbolic() {
                0.0
            } else {
                let range = stats[j].max - stats[j].min;
                if range > 0.0 {
                    cfg.var_floor_factor * range * range
                } else {
                    cfg.var_floor_factor
                }
            }
        })
        .collect()
}

/// Builds one component located at `row` (empirical fallbacks for cells the
/// row does not locate), with the empirical spread on every attribute.
fn seeded_component(
    schema: &AttributeSchema,
    row: &Evidence,
    stats: &[AttrStats],
    floors: &[f64],
    weight: f64,
) -> Component {
    let marginals = (0..schema.len())
        .map(|j| {
            if schema.attr(j).is_symbolic() {
                Marginal::Symbolic(stats[j].freqs.clone())
            } else {
                let mu = row_center(row, j).unwrap_or(stats[j].mean);
                let sigma = stats[j].std.max(floors[j].sqrt());
                Marginal::Continuous(GeneralizedNormal { mu, sigma })
            }
        })
        .collect();
    Component { weight, marginals }
}

fn lower_rows(table: &TrainingTable) -> Vec<Evidence> {
    table.rows().iter().map(Evidence::lower_mixtures).collect()
}

fn em_init_inner(
    schema: &AttributeSchema,
    rows: &[Evidence],
    stats: &[AttrStats],
    cfg: &EmConfig,
) -> Result<MfgnModel> {
    let m = rows.len();
    let l = cfg.components;
    if l > m {
        return Err(Error::DegenerateTable(format!(
            "cannot fit {l} components to {m} rows"
        )));
    }
    let floors = var_floors(schema, stats, cfg);
    let components: Vec<Component> = if l == 1 {
        // Single component: the empirical moments, no randomness involved.
        let marginals = (0..schema.len())
            .map(|j| {
                if schema.attr(j).is_symbolic() {
                    Marginal::Symbolic(stats[j].freqs.clone())
                } else {
                    Marginal::Continuous(GeneralizedNormal {
                        mu: stats[j].mean,
                        sigma: stats[j].std.max(floors[j].sqrt()),
                    })
                }
            })
            .collect();
        vec![Component { weight: 1.0, marginals }]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let picks = rand::seq::index::sample(&mut rng, m, l);
        picks
            .iter()
            .map(|k| seeded_component(schema, &rows[k], stats, &floors, 1.0 / l as f64))
            .collect()
    };
    MfgnModel::new(schema.clone(), components)
}

/// Deterministic starting model for [`em_fit`]: component means drawn from
/// `l` distinct random rows' cell centers (empirical attribute mean where a
/// row leaves the cell unlocated), dispersions at the empirical attribute
/// std, symbolic vectors at the smoothed empirical frequencies, and uniform
/// weights. `l = 1` uses the empirical moments outright, ignoring the seed.
pub fn em_init(table: &TrainingTable, cfg: &EmConfig) -> Result<MfgnModel> {
    cfg.validate()?;
    let rows = lower_rows(table);
    let stats = attribute_stats(table.schema(), &rows)?;
    em_init_inner(table.schema(), &rows, &stats, cfg)
}

/// Sufficient statistics gathered by one E step.
struct EStep {
    /// Total log-likelihood of the table under the scored model.
    j: f64,
    /// Per-row log-likelihoods.
    row_ll: Vec<f64>,
    /// `s[i]`: total responsibility of component `i`.
    s: Vec<f64>,
    /// `d[i][j]`: responsibility mass of component `i` restricted to
    /// conjunctions that observe attribute `j`.
    d: Vec<Vec<f64>>,
    /// `a[i][j]`: responsibility-weighted first moments (continuous).
    a: Vec<Vec<f64>>,
    /// `b[i][j]`: responsibility-weighted second moments (continuous).
    b: Vec<Vec<f64>>,
    /// `t[i][j][w]`: responsibility-weighted conditioned category masses.
    t: Vec<Vec<Vec<f64>>>,
}

/// Exact first and second moments of a generalized normal truncated to
/// `[a, b]`. The caller guarantees the interval carries positive mass.
fn truncated_moments(base: &GeneralizedNormal, a: f64, b: f64) -> (f64, f64) {
    if base.is_impulse() {
        // Positive mass means the impulse lies inside the interval.
        return (base.mu, base.mu * base.mu);
    }
    let alpha = (a - base.mu) / base.sigma;
    let beta = (b - base.mu) / base.sigma;
    let z = std_normal_cdf(beta) - std_normal_cdf(alpha);
    let pa = std_normal_pdf(alpha);
    let pb = std_normal_pdf(beta);
    let delta = (pa - pb) / z;
    let mean = base.mu + base.sigma * delta;
    let ta = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let tb = if beta.is_finite() { beta * pb } else { 0.0 };
    let var = (base.sigma * base.sigma * (1.0 + (ta - tb) / z - delta * delta)).max(0.0);
    (mean, var + mean * mean)
}

/// Log-weights `ln(P[i] pi[r] beta[i][r])` of one row, conjunction-major
/// (`r` outer, `i` inner) — the same fixed order inference uses.
fn conj_ln_weights(model: &MfgnModel, row: &Evidence, buf: &mut Vec<f64>) -> Result<()> {
    buf.clear();
    for conj in &row.conjunctions {
        let ln_pi = conj.weight.ln();
        for comp in model.components() {
            let mut lw = comp.weight.ln() + ln_pi;
            for (j, o) in conj.observations.iter().enumerate() {
                if lw == f64::NEG_INFINITY {
                    break;
                }
                lw += ln_elementary_likelihood(comp, j, o)?;
            }
            buf.push(lw);
        }
    }
    Ok(())
}

fn e_step(model: &MfgnModel, rows: &[Evidence]) -> Result<EStep> {
    let schema = model.schema();
    let l = model.component_count();
    let n = schema.len();
    let mut es = EStep {
        j: 0.0,
        row_ll: Vec::with_capacity(rows.len()),
        s: vec![0.0; l],
        d: vec![vec![0.0; n]; l],
        a: vec![vec![0.0; n]; l],
        b: vec![vec![0.0; n]; l],
        t: (0..l)
            .map(|_| (0..n).map(|j| vec![0.0; schema.category_count(j)]).collect())
            .collect(),
    };
    let mut lnw: Vec<f64> = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        conj_ln_weights(model, row, &mut lnw)?;
        let ll = log_sum_exp(&lnw);
        if ll == f64::NEG_INFINITY {
            return Err(Error::FitFailure(format!(
                "training row {k} has zero likelihood under the current model"
            )));
        }
        es.row_ll.push(ll);
        es.j += ll;
        let mut idx = 0;
        for conj in &row.conjunctions {
            for (i, comp) in model.components().iter().enumerate() {
                let q = (lnw[idx] - ll).exp();
                idx += 1;
                if q == 0.0 {
                    continue;
                }
                es.s[i] += q;
                for (j, o) in conj.observations.iter().enumerate() {
                    if o.is_missing() {
                        continue;
                    }
                    // q > 0 implies every elementary likelihood of this
                    // conjunction is positive, so the conditioned marginal
                    // exists.
                    match modified_marginal(comp, j, o)? {
                        Psi::Continuous { v, lambda } => {
                            es.d[i][j] += q;
                            es.a[i][j] += q * v;
                            es.b[i][j] += q * (v * v + lambda * lambda);
                        }
                        Psi::Truncated { base, a, b } => {
                            let (m1, m2) = truncated_moments(&base, a, b);
                            es.d[i][j] += q;
                            es.a[i][j] += q * m1;
                            es.b[i][j] += q * m2;
                        }
                        Psi::Symbolic(p) => {
                            es.d[i][j] += q;
                            for (acc, pv) in es.t[i][j].iter_mut().zip(&p) {
                                *acc += q * pv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(es)
}

/// Closed-form M step. Attributes with zero observed responsibility mass
/// for a component keep that component's previous parameters.
fn m_step(
    model: &MfgnModel,
    es: &EStep,
    floors: &[f64],
    cfg: &EmConfig,
) -> Vec<Component> {
    let schema = model.schema();
    let total: f64 = es.s.iter().sum();
    model
        .components()
        .iter()
        .enumerate()
        .map(|(i, old)| {
            let weight = es.s[i] / total;
            let marginals = (0..schema.len())
                .map(|j| {
                    if es.d[i][j] == 0.0 {
                        return old.marginals[j].clone();
                    }
                    if schema.attr(j).is_symbolic() {
                        let mut t: Vec<f64> = es.t[i][j]
                            .iter()
                            .map(|x| (x / es.d[i][j]).max(cfg.sym_floor))
                            .collect();
                        let sum: f64 = t.iter().sum();
                        for v in &mut t {
                            *v /= sum;
                        }
                        Marginal::Symbolic(t)
                    } else {
                        let mu = es.a[i][j] / es.d[i][j];
                        let var = (es.b[i][j] / es.d[i][j] - mu * mu).max(floors[j]);
                        Marginal::Continuous(GeneralizedNormal { mu, sigma: var.sqrt() })
                    }
                })
                .collect();
            Component { weight, marginals }
        })
        .collect()
}

/// Picks a row uniformly among the worst quartile by log-likelihood.
fn pick_high_residual_row(row_ll: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut order: Vec<usize> = (0..row_ll.len()).collect();
    order.sort_by(|&x, &y| row_ll[x].partial_cmp(&row_ll[y]).expect("row scores are not NaN"));
    let count = (row_ll.len() / 4).max(1);
    order[rng.gen_range(0..count)]
}

/// Fits an `l`-component model to a (possibly uncertain) table.
///
/// Starts from [`em_init`] and alternates closed-form E and M steps until
/// the relative log-likelihood change drops below `cfg.tol` or `cfg.max_iters`
/// M steps have been applied. Guard rails per iteration: variance and
/// symbolic floors, at most one pruning of a component below
/// `cfg.prune_threshold` (never the last one), and re-seeding of components
/// with vanished responsibility at a random high-residual row. The run is
/// bit-deterministic given `cfg.seed`.
///
/// Errors: an attribute missing in every row, more components than rows,
/// or a training row with zero likelihood under the current model.
pub fn em_fit(table: &TrainingTable, cfg: &EmConfig) -> Result<(MfgnModel, FitReport)> {
    cfg.validate()?;
    let schema = table.schema().clone();
    let rows = lower_rows(table);
    let stats = attribute_stats(&schema, &rows)?;
    let floors = var_floors(&schema, &stats, cfg);
    let mut model = em_init_inner(&schema, &rows, &stats, cfg)?;
    let m = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ RESEED_STREAM);
    let mut report = FitReport { log_likelihood: Vec::new(), converged: false, events: Vec::new() };
    loop {
        let es = e_step(&model, &rows)?;
        let done = report.log_likelihood.len();
        if done > 0 {
            let prev = report.log_likelihood[done - 1];
            if (es.j - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
                report.log_likelihood.push(es.j);
                report.converged = true;
                break;
            }
        }
        report.log_likelihood.push(es.j);
        if done == cfg.max_iters {
            break;
        }
        let iteration = done + 1;
        let mut comps = m_step(&model, &es, &floors, cfg);
        let mut s = es.s.clone();
        if cfg.prune_threshold > 0.0 && comps.len() > 1 {
            let mut weakest: Option<usize> = None;
            for (i, c) in comps.iter().enumerate() {
                if c.weight < cfg.prune_threshold
                    && weakest.is_none_or(|w| c.weight < comps[w].weight)
                {
                    weakest = Some(i);
                }
            }
            if let Some(i) = weakest {
                let weight = comps[i].weight;
                comps.remove(i);
                s.remove(i);
                let sum: f64 = comps.iter().map(|c| c.weight).sum();
                for c in &mut comps {
                    c.weight /= sum;
                }
                report.events.push(FitEvent::Pruned { iteration, component: i, weight });
            }
        }
        let empty_tol = EMPTY_RESPONSIBILITY_TOL * m as f64;
        for i in 0..comps.len() {
            if s[i] < empty_tol {
                let row = pick_high_residual_row(&es.row_ll, &mut rng);
                comps[i] = seeded_component(&schema, &rows[row], &stats, &floors, 1.0 / m as f64);
                let sum: f64 = comps.iter().map(|c| c.weight).sum();
                for c in &mut comps {
                    c.weight /= sum;
                }
                report.events.push(FitEvent::Reseeded { iteration, component: i, row });
            }
        }
        model = MfgnModel::new(schema.clone(), comps)?;
    }
    Ok((model, report))
}

/// Total log-likelihood of a table under a model (the quantity EM ascends).
/// A row with zero likelihood is an error naming the row.
pub fn log_likelihood(model: &MfgnModel, table: &TrainingTable) -> Result<f64> {
    let rows = lower_rows(table);
    let mut lnw: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for (k, row) in rows.iter().enumerate() {
        conj_ln_weights(model, row, &mut lnw)?;
        let ll = log_sum_exp(&lnw);
        if ll == f64::NEG_INFINITY {
            return Err(Error::FitFailure(format!(
                "row {k} has zero likelihood under the model"
            )));
        }
        total += ll;
    }
    Ok(total)
}

/// [`em_fit`] specialized to tables of independently corrupted readings:
/// every cell must be exact, missing, a Gaussian reading (continuous), or a
/// category distribution (symbolic), with a single conjunction per row.
/// The algebra is shared with [`em_fit`]; this entry point only enforces
/// the shape of the table up front.
pub fn gaussian_noise_fit(table: &TrainingTable, cfg: &EmConfig) -> Result<(MfgnModel, FitReport)> {
    let schema = table.schema();
    for (k, row) in table.rows().iter().enumerate() {
        if row.conjunctions.len() != 1 {
            return Err(Error::Unsupported(format!(
                "row {k}: noisy-reading tables are unconditional (one conjunction per row), \
                 found {}",
                row.conjunctions.len()
            )));
        }
        for (j, o) in row.conjunctions[0].observations.iter().enumerate() {
            let ok = matches!(o, Observation::Exact(_) | Observation::Missing)
                || if schema.attr(j).is_symbolic() {
                    matches!(o, Observation::SymbolicDist(_))
                } else {
                    matches!(o, Observation::Gaussian { .. })
                };
            if !ok {
                return Err(Error::Unsupported(format!(
                    "row {k}, attribute '{}': not an exact, missing or noisy reading",
                    schema.attr(j).name
                )));
            }
        }
    }
    em_fit(table, cfg)
}

/// How [`select_components`] scores a candidate component count.
pub enum Validation<'a> {
    /// Fit on the full training table, score on this held-out table.
    HoldOut(&'a TrainingTable),
    /// `k`-fold cross-validation on the training table (`2 <= k <= M`),
    /// folds drawn by a seeded shuffle.
    KFold(usize),
}

/// Score sheet for one candidate component count.
#[derive(Debug, Clone)]
pub struct SelectionScore {
    pub components: usize,
    /// Mean held-out log-likelihood per row, or minus the task error when a
    /// target attribute is designated (higher is better in both cases).
    /// `None` when the fit failed.
    pub score: Option<f64>,
    /// The fit/score error, for candidates that failed.
    pub error: Option<String>,
}

fn derive_seed(base: u64, tag: u64, sub: u64) -> u64 {
    let mut x = base
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ sub.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Scores a fitted model on a held-out table: mean log-likelihood per row,
/// or, when `target` is designated, minus the prediction error for that
/// attribute (misclassification rate for symbolic targets, root mean squared
/// error of the posterior mean for continuous ones). Only rows whose every
/// conjunction carries the same exact target value are scored.
fn holdout_score(model: &MfgnModel, val: &TrainingTable, target: Option<usize>) -> Result<f64> {
    let Some(target) = target else {
        return Ok(log_likelihood(model, val)? / val.len() as f64);
    };
    let schema = val.schema();
    let mut scored = 0usize;
    let mut acc = 0.0;
    for row in val.rows() {
        let mut truth: Option<Value> = None;
        let mut usable = true;
        for conj in &row.conjunctions {
            match (&conj.observations[target], &truth) {
                (Observation::Exact(v), None) => truth = Some(*v),
                (Observation::Exact(v), Some(t)) if v == t => {}
                _ => {
                    usable = false;
                    break;
                }
            }
        }
        let (Some(truth), true) = (truth, usable) else { continue };
        let mut masked = row.clone();
        for conj in &mut masked.conjunctions {
            conj.observations[target] = Observation::Missing;
        }
        let post = posterior(model, &masked, &[target])?;
        match (post.estimate(target, None)?, truth) {
            (Estimate::Symbolic { ep, .. }, Value::Symbolic(k)) => {
                acc += if ep == k { 0.0 } else { 1.0 };
            }
            (Estimate::Continuous { mean, .. }, Value::Continuous(v)) => {
                acc += (mean - v) * (mean - v);
            }
            _ => unreachable!("estimate kind always matches the attribute kind"),
        }
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::DegenerateTable(
            "no validation row carries an exact value for the target attribute".into(),
        ));
    }
    let err = if schema.attr(target).is_symbolic() {
        acc / scored as f64
    } else {
        (acc / scored as f64).sqrt()
    };
    Ok(-err)
}

/// Fits every candidate component count and returns the best along with the
/// full score sheet.
///
/// Each candidate gets a fresh deterministic seed derived from `cfg.seed`.
/// Scores are mean held-out log-likelihood per row, or minus the prediction
/// error for a designated `target` attribute. Failed fits are recorded in
/// the sheet (not fatal) unless every candidate fails. Ties go to the
/// smallest count.
pub fn select_components(
    table: &TrainingTable,
    l_range: &[usize],
    validation: Validation<'_>,
    cfg: &EmConfig,
    target: Option<usize>,
) -> Result<(usize, Vec<SelectionScore>)> {
    cfg.validate()?;
    if l_range.is_empty() {
        return Err(Error::FitFailure("no candidate component counts given".into()));
    }
    if let Some(j) = target {
        if j >= table.schema().len() {
            return Err(Error::ValueMismatch(format!(
                "target attribute index {j} out of range"
            )));
        }
    }
    // Build (train, validation) splits up front so every candidate sees the
    // same data.
    let splits: Vec<(TrainingTable, TrainingTable)> = match validation {
        Validation::HoldOut(val) => {
            if val.schema() != table.schema() {
                return Err(Error::Schema(
                    "validation table schema does not match the training schema".into(),
                ));
            }
            vec![(table.clone(), val.clone())]
        }
        Validation::KFold(k) => {
            let m = table.len();
            if k < 2 || k > m {
                return Err(Error::DegenerateTable(format!(
                    "{k}-fold validation needs 2 <= k <= {m}"
                )));
            }
            let mut order: Vec<usize> = (0..m).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ FOLD_STREAM);
            for i in (1..m).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            (0..k)
                .map(|f| {
                    let mut train = Vec::new();
                    let mut val = Vec::new();
                    for (pos, &row) in order.iter().enumerate() {
                        if pos % k == f {
                            val.push(table.rows()[row].clone());
                        } else {
                            train.push(table.rows()[row].clone());
                        }
                    }
                    Ok((
                        TrainingTable::new(table.schema().clone(), train)?,
                        TrainingTable::new(table.schema().clone(), val)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut sheet = Vec::with_capacity(l_range.len());
    for (ci, &l) in l_range.iter().enumerate() {
        let mut fold_scores = Vec::with_capacity(splits.len());
        let mut failure: Option<String> = None;
        for (fi, (train, val)) in splits.iter().enumerate() {
            let fit_cfg = EmConfig {
                components: l,
                seed: derive_seed(cfg.seed, ci as u64 + 1, fi as u64 + 1),
                ..cfg.clone()
            };
            match em_fit(train, &fit_cfg).and_then(|(m, _)| holdout_score(&m, val, target)) {
                Ok(s) => fold_scores.push(s),
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        sheet.push(match failure {
            Some(e) => SelectionScore { components: l, score: None, error: Some(e) },
            None => SelectionScore {
                components: l,
                score: Some(fold_scores.iter().sum::<f64>() / fold_scores.len() as f64),
                error: None,
            },
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for sc in &sheet {
        let Some(s) = sc.score else { continue };
        let better = match best {
            None => true,
            Some((bl, bs)) => s > bs || (s == bs && sc.components < bl),
        };
        if better {
            best = Some((sc.components, s));
        }
    }
    match best {
        Some((l, _)) => Ok((l, sheet)),
        None => Err(Error::FitFailure(format!(
            "every candidate component count failed; first failure: {}",
            sheet[0].error.as_deref().unwrap_or("unknown")
        ))),
    }
}
