//! Closed-form posterior inference (pattern completion).
//!
//! Given a fitted mixture and evidence in disjunctive form, the posterior
//! over any subset of target attributes is again a mixture: one term per
//! (component, conjunction) pair. Each term carries
//!
//! * a responsibility `alpha[i][r] ∝ P_i * pi_r * beta[i][r]`, where
//!   `beta[i][r]` is the product over attributes of the *elementary
//!   likelihood* of conjunction `r`'s observation under component `i`'s
//!   marginal, and
//! * per target attribute a *modified marginal* `psi` — the component
//!   marginal conditioned on that single observation.
//!
//! Everything is exact: the elementary likelihoods and modified marginals
//! have closed forms for every observation kind, so no sampling or
//! iterative approximation is involved. Likelihood products are
//! accumulated in log space and responsibilities normalized with
//! log-sum-exp in a fixed order, which keeps results deterministic and
//! immune to underflow. Terms whose responsibility falls below a prune
//! threshold are dropped and the rest renormalized.

use crate::error::{Error, Result};
use crate::evidence::{Evidence, Observation};
use crate::gn::{log_sum_exp, GeneralizedNormal};
use crate::model::{AttributeKind, AttributeSchema, Component, Marginal, MfgnModel, Value};

/// Default responsibility prune threshold.
pub const DEFAULT_PRUNE: f64 = 1e-12;

/// Options for [`posterior_with`].
#[derive(Debug, Clone, Copy)]
pub struct PosteriorOptions {
    /// Terms with responsibility below this are dropped (0 keeps all).
    pub prune: f64,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        Self { prune: DEFAULT_PRUNE }
    }
}

/// A component marginal conditioned on one elementary observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Psi {
    /// Generalized normal `N(z; v, lambda)` (continuous attribute).
    Continuous { v: f64, lambda: f64 },
    /// Category distribution (symbolic attribute).
    Symbolic(Vec<f64>),
    /// The prior marginal truncated to `[a, b]` (continuous attribute
    /// under an interval observation). Mean and variance of truncated
    /// normals are deliberately not folded into moment estimators; use
    /// the posterior density instead.
    Truncated { base: GeneralizedNormal, a: f64, b: f64 },
}

/// One term of the posterior mixture.
#[derive(Debug, Clone)]
pub struct PosteriorTerm {
    /// Mixture component index `i`.
    pub component: usize,
    /// Conjunction index `r` in the (lowered) evidence.
    pub conjunction: usize,
    /// Normalized responsibility `alpha[i][r]`.
    pub alpha: f64,
    /// Modified marginals, aligned with [`Posterior::targets`].
    pub psis: Vec<Psi>,
}

/// Posterior mixture over a set of target attributes.
#[derive(Debug, Clone)]
pub struct Posterior {
    schema: AttributeSchema,
    targets: Vec<usize>,
    terms: Vec<PosteriorTerm>,
    log_evidence: f64,
}

/// Point summary of one target attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    /// Posterior mean and standard deviation. A completion is reported as
    /// `mean ± 2·std`.
    Continuous { mean: f64, std: f64 },
    /// Full posterior category distribution plus derived summaries: the
    /// maximum-a-posteriori category (lowest index on ties), the entropy
    /// of the distribution, the error probability `1 - max q`, and whether
    /// that error probability exceeded the caller's rejection threshold.
    Symbolic { q: Vec<f64>, ep: usize, entropy: f64, error_prob: f64, rejected: bool },
}

/// Likelihood of a single elementary observation under one component's
/// marginal for attribute `j` (the factor `beta[i][r]^j`).
pub fn elementary_likelihood(c: &Component, j: usize, o: &Observation) -> Result<f64> {
    Ok(ln_elementary_likelihood(c, j, o)?.exp())
}

/// [`elementary_likelihood`] in log space (`-inf` where the likelihood is
/// zero).
pub fn ln_elementary_likelihood(c: &Component, j: usize, o: &Observation) -> Result<f64> {
    let m = c.marginals.get(j).ok_or_else(|| {
        Error::ValueMismatch(format!("attribute index {j} out of range"))
    })?;
    let kind_err = |msg: &str| -> Result<f64> {
        Err(Error::KindMismatch { attr: format!("#{j}"), msg: msg.to_string() })
    };
    match (m, o) {
        (_, Observation::Missing) => Ok(0.0),
        (Marginal::Continuous(gn), Observation::Exact(Value::Continuous(v))) => Ok(gn.ln_pdf(*v)),
        (Marginal::Continuous(gn), Observation::Gaussian { s, eps, bias }) => {
            Ok(gn.ln_overlap(&GeneralizedNormal { mu: s - bias, sigma: *eps }))
        }
        (Marginal::Continuous(gn), Observation::Interval { a, b }) => {
            Ok(gn.interval_mass(*a, *b)?.ln())
        }
        (Marginal::Continuous(gn), Observation::NormalMixture(parts)) => {
            let terms: Vec<f64> =
                parts.iter().map(|(w, g)| w.ln() + gn.ln_overlap(g)).collect();
            Ok(log_sum_exp(&terms))
        }
        (Marginal::Symbolic(t), Observation::Exact(Value::Symbolic(k))) => {
            match t.get(*k) {
                Some(p) => Ok(p.ln()),
                None => kind_err(&format!("category index {k} out of range")),
            }
        }
        (Marginal::Symbolic(t), Observation::SymbolicDist(p)) => {
            if p.len() != t.len() {
                return kind_err("distribution length does not match the category count");
            }
            Ok(p.iter().zip(t).map(|(a, b)| a * b).sum::<f64>().ln())
        }
        _ => kind_err("observation kind does not match the marginal kind"),
    }
}

/// The component marginal for attribute `j` conditioned on a single
/// elementary observation (the factor `psi[i][r]^j` of the posterior).
///
/// Defined whenever the observation has positive elementary likelihood;
/// a zero-likelihood observation has no conditional and is an error.
/// `NormalMixture` observations are not handled here — a mixture
/// likelihood is a disjunction, and [`posterior`] lowers it into extra
/// conjunctions before conditioning.
pub fn modified_marginal(c: &Component, j: usize, o: &Observation) -> Result<Psi> {
    let m = c.marginals.get(j).ok_or_else(|| {
        Error::ValueMismatch(format!("attribute index {j} out of range"))
    })?;
    let kind_err = |msg: &str| -> Result<Psi> {
        Err(Error::KindMismatch { attr: format!("#{j}"), msg: msg.to_string() })
    };
    match (m, o) {
        // No information: the prior marginal.
        (Marginal::Continuous(gn), Observation::Missing) => {
            Ok(Psi::Continuous { v: gn.mu, lambda: gn.sigma })
        }
        (Marginal::Symbolic(t), Observation::Missing) => Ok(Psi::Symbolic(t.clone())),
        // Exact values collapse the marginal onto an impulse.
        (Marginal::Continuous(_), Observation::Exact(Value::Continuous(v))) => {
            Ok(Psi::Continuous { v: *v, lambda: 0.0 })
        }
        (Marginal::Symbolic(t), Observation::Exact(Value::Symbolic(k))) => {
            if *k >= t.len() {
                return kind_err(&format!("category index {k} out of range"));
            }
            let mut q = vec![0.0; t.len()];
            q[*k] = 1.0;
            Ok(Psi::Symbolic(q))
        }
        // Gaussian reading: precision-weighted combination of prior and
        // (bias-corrected) reading. gamma = sigma^2 / (sigma^2 + eps^2):
        //   v      = gamma (s - bias) + (1 - gamma) mu
        //   lambda = sqrt(gamma) eps
        (Marginal::Continuous(gn), Observation::Gaussian { s, eps, bias }) => {
            let va = gn.sigma * gn.sigma;
            let vb = eps * eps;
            let rho2 = va + vb;
            let v = (va * (s - bias) + vb * gn.mu) / rho2;
            let lambda = gn.sigma * eps / rho2.sqrt();
            Ok(Psi::Continuous { v, lambda })
        }
        // Interval: the prior truncated to [a, b].
        (Marginal::Continuous(gn), Observation::Interval { a, b }) => {
            if gn.interval_mass(*a, *b)? == 0.0 {
                return Err(Error::ZeroEvidence(format!(
                    "the marginal places no mass on [{a}, {b}]"
                )));
            }
            Ok(Psi::Truncated { base: *gn, a: *a, b: *b })
        }
        // Category likelihoods reweight the prior vector.
        (Marginal::Symbolic(t), Observation::SymbolicDist(p)) => {
            if p.len() != t.len() {
                return kind_err("distribution length does not match the category count");
            }
            let prod: Vec<f64> = p.iter().zip(t).map(|(a, b)| a * b).collect();
            let tau: f64 = prod.iter().sum();
            if tau == 0.0 {
                return Err(Error::ZeroEvidence(
                    "the observation rules out every category the marginal supports".into(),
                ));
            }
            Ok(Psi::Symbolic(prod.iter().map(|v| v / tau).collect()))
        }
        (Marginal::Continuous(_), Observation::NormalMixture(_)) => Err(Error::Unsupported(
            "a likelihood mixture is a disjunction; lower it into conjunctions before conditioning"
                .into(),
        )),
        _ => kind_err("observation kind does not match the marginal kind"),
    }
}

/// Posterior with default options. See [`posterior_with`].
pub fn posterior(model: &MfgnModel, evidence: &Evidence, targets: &[usize]) -> Result<Posterior> {
    posterior_with(model, evidence, targets, PosteriorOptions::default())
}

/// Computes the exact posterior mixture over `targets` given `evidence`.
///
/// `NormalMixture` observations are first lowered into additional weighted
/// conjunctions (a mixture likelihood on an attribute *is* a disjunction),
/// so every remaining observation has a closed-form conditional. The
/// returned posterior carries the log of the total evidence
/// `ln sum_{i,r} P_i pi_r beta[i][r]`; evidence with zero likelihood under
/// the model is an error.
pub fn posterior_with(
    model: &MfgnModel,
    evidence: &Evidence,
    targets: &[usize],
    options: PosteriorOptions,
) -> Result<Posterior> {
    let schema = model.schema();
    evidence.validate(schema)?;
    if targets.is_empty() {
        return Err(Error::ValueMismatch("no target attributes requested".into()));
    }
    for (pos, &j) in targets.iter().enumerate() {
        if j >= schema.len() {
            return Err(Error::ValueMismatch(format!("target attribute index {j} out of range")));
        }
        if targets[..pos].contains(&j) {
            return Err(Error::ValueMismatch(format!(
                "target attribute `{}` requested twice",
                schema.attr(j).name
            )));
        }
    }
    if !(0.0..1.0).contains(&options.prune) {
        return Err(Error::ValueMismatch(format!(
            "prune threshold {} must lie in [0, 1)",
            options.prune
        )));
    }

    let lowered = evidence.lower_mixtures();

    // Log-weights ln(P_i pi_r beta[i][r]) in fixed (r outer, i inner) order.
    let mut raw: Vec<(usize, usize, f64)> = Vec::new();
    for (r, conj) in lowered.conjunctions.iter().enumerate() {
        let ln_pi = conj.weight.ln();
        for (i, comp) in model.components().iter().enumerate() {
            let mut ln_w = comp.weight.ln() + ln_pi;
            for (j, o) in conj.observations.iter().enumerate() {
                if o.is_missing() {
                    continue;
                }
                ln_w += ln_elementary_likelihood(comp, j, o)?;
                if ln_w == f64::NEG_INFINITY {
                    break;
                }
            }
            raw.push((i, r, ln_w));
        }
    }
    let lnz = log_sum_exp(&raw.iter().map(|&(_, _, w)| w).collect::<Vec<_>>());
    if lnz == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidence(
            "the evidence has zero likelihood under the model".into(),
        ));
    }

    // Responsibilities, pruning, renormalization.
    let mut kept: Vec<(usize, usize, f64)> = raw
        .into_iter()
        .filter_map(|(i, r, w)| {
            let alpha = (w - lnz).exp();
            (alpha > options.prune || (options.prune == 0.0 && alpha > 0.0))
                .then_some((i, r, alpha))
        })
        .collect();
    let total: f64 = kept.iter().map(|&(_, _, a)| a).sum();
    // `total > 0` is guaranteed: the largest responsibility is at least
    // 1 / (number of terms), far above any legal threshold.
    for t in &mut kept {
        t.2 /= total;
    }

    // Modified marginals only for surviving terms (zero-likelihood terms
    // have no conditional).
    let mut terms = Vec::with_capacity(kept.len());
    for (i, r, alpha) in kept {
        let comp = &model.components()[i];
        let conj = &lowered.conjunctions[r];
        let psis = targets
            .iter()
            .map(|&j| modified_marginal(comp, j, &conj.observations[j]))
            .collect::<Result<Vec<_>>>()?;
        terms.push(PosteriorTerm { component: i, conjunction: r, alpha, psis });
    }

    Ok(Posterior {
        schema: schema.clone(),
        targets: targets.to_vec(),
        terms,
        log_evidence: lnz,
    })
}

impl Posterior {
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn terms(&self) -> &[PosteriorTerm] {
        &self.terms
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    /// Log of the total evidence `ln sum_{i,r} P_i pi_r beta[i][r]`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    fn target_pos(&self, j: usize) -> Result<usize> {
        self.targets.iter().position(|&t| t == j).ok_or_else(|| {
            Error::ValueMismatch(format!(
                "attribute `{}` is not a target of this posterior",
                self.schema.attr(j).name
            ))
        })
    }

    /// Point summary of target attribute `j`.
    ///
    /// Continuous targets yield the posterior mean and standard deviation
    /// (exact mixture moments). Symbolic targets yield the full posterior
    /// category distribution with its MAP category, entropy and error
    /// probability; `rejection` is an optional error-probability threshold
    /// above which the estimate is flagged as rejected.
    ///
    /// A continuous target carrying an interval observation has a
    /// truncated posterior whose moments are not reduced here; ask for
    /// [`Posterior::pdf`] instead.
    pub fn estimate(&self, j: usize, rejection: Option<f64>) -> Result<Estimate> {
        let pos = self.target_pos(j)?;
        match &self.schema.attr(j).kind {
            AttributeKind::Continuous => {
                let mean = self.raw_moment(pos, 1)?;
                let m2 = self.raw_moment(pos, 2)?;
                // Guard the tiny negative excursions of exact-value
                // posteriors (variance 0 up to rounding).
                let var = (m2 - mean * mean).max(0.0);
                Ok(Estimate::Continuous { mean, std: var.sqrt() })
            }
            AttributeKind::Symbolic(labels) => {
                let mut q = vec![0.0; labels.len()];
                for term in &self.terms {
                    match &term.psis[pos] {
                        Psi::Symbolic(p) => {
                            for (dst, v) in q.iter_mut().zip(p) {
                                *dst += term.alpha * v;
                            }
                        }
                        _ => unreachable!("kind checked when the posterior was built"),
                    }
                }
                // Each term's psi sums to one, so q does too up to rounding.
                let total: f64 = q.iter().sum();
                for v in &mut q {
                    *v /= total;
                }
                let mut ep = 0;
                for (k, v) in q.iter().enumerate() {
                    if *v > q[ep] {
                        ep = k;
                    }
                }
                let entropy = -q.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
                let error_prob = 1.0 - q[ep];
                let rejected = rejection.is_some_and(|tau| error_prob > tau);
                Ok(Estimate::Symbolic { q, ep, entropy, error_prob, rejected })
            }
        }
    }

    /// Posterior density (continuous target) or probability (symbolic
    /// target) at a point.
    pub fn pdf(&self, j: usize, at: &Value) -> Result<f64> {
        let pos = self.target_pos(j)?;
        match (at, &self.schema.attr(j).kind) {
            (Value::Continuous(x), AttributeKind::Continuous) => {
                let mut total = 0.0;
                for term in &self.terms {
                    total += term.alpha
                        * match &term.psis[pos] {
                            Psi::Continuous { v, lambda } => {
                                GeneralizedNormal { mu: *v, sigma: *lambda }.pdf(*x)
                            }
                            Psi::Truncated { base, a, b } => {
                                if *a <= *x && *x <= *b {
                                    // Positive mass was checked at build time.
                                    base.pdf(*x) / base.interval_mass(*a, *b)?
                                } else {
                                    0.0
                                }
                            }
                            Psi::Symbolic(_) => {
                                unreachable!("kind checked when the posterior was built")
                            }
                        };
                }
                Ok(total)
            }
            (Value::Symbolic(k), AttributeKind::Symbolic(labels)) => {
                if *k >= labels.len() {
                    return Err(Error::ValueMismatch(format!(
                        "category index {k} out of range ({} categories)",
                        labels.len()
                    )));
                }
                match self.estimate(j, None)? {
                    Estimate::Symbolic { q, .. } => Ok(q[*k]),
                    Estimate::Continuous { .. } => unreachable!("symbolic estimate"),
                }
            }
            _ => Err(Error::ValueMismatch(
                "value kind does not match the attribute kind".into(),
            )),
        }
    }

    /// Raw posterior moment `E[z^k]`, `k` in {1, 2}, of a continuous
    /// target. Undefined (an error) when the target carries an interval
    /// observation in any surviving term.
    pub fn moment(&self, j: usize, k: u32) -> Result<f64> {
        if !matches!(self.schema.attr(j).kind, AttributeKind::Continuous) {
            return Err(Error::UnsupportedEstimator(format!(
                "moments are defined for continuous attributes; `{}` is symbolic",
                self.schema.attr(j).name
            )));
        }
        let pos = self.target_pos(j)?;
        self.raw_moment(pos, k)
    }

    fn raw_moment(&self, pos: usize, k: u32) -> Result<f64> {
        if !matches!(k, 1 | 2) {
            return Err(Error::UnsupportedEstimator(format!(
                "only the first two moments are available, not k = {k}"
            )));
        }
        let mut total = 0.0;
        for term in &self.terms {
            match &term.psis[pos] {
                Psi::Continuous { v, lambda } => {
                    total += term.alpha
                        * if k == 1 { *v } else { v * v + lambda * lambda };
                }
                Psi::Truncated { .. } => {
                    return Err(Error::UnsupportedEstimator(format!(
                        "target `{}` carries an interval observation; its truncated posterior has no reduced moments — evaluate the posterior density instead",
                        self.schema.attr(self.targets[pos]).name
                    )));
                }
                Psi::Symbolic(_) => {
                    return Err(Error::UnsupportedEstimator(
                        "moments are defined for continuous attributes".into(),
                    ));
                }
            }
        }
        Ok(total)
    }
}
