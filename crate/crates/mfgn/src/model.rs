//! Mixture-of-factorized-generalized-normals model.
//!
//! A model is a finite mixture whose components factorize over a fixed,
//! heterogeneous attribute schema: every component carries one generalized
//! normal per continuous attribute and one dense probability vector per
//! symbolic attribute. Categories are encoded as exact integer indices into
//! the schema's label list, so symbolic marginals never go through floating
//! point category identity.
//!
//! The module also defines the plain-text model file format used by
//! [`MfgnModel::save`] / [`MfgnModel::load`]: a `mfgn-model v1` header, the
//! schema, then each component's weight and per-attribute marginals in
//! schema order. Floats are written with 17 significant digits so that a
//! save/load round trip is bit-exact.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gn::{log_sum_exp, GeneralizedNormal};

/// Kind (and, for symbolic attributes, value set) of one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeKind {
    /// Real-valued attribute.
    Continuous,
    /// Categorical attribute with the given labels.
    Symbolic(Vec<String>),
}

/// One named attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.to_string(), kind: AttributeKind::Continuous }
    }

    pub fn symbolic(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Symbolic(labels.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self.kind, AttributeKind::Symbolic(_))
    }
}

/// An ordered, validated list of attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    /// Validates that names are non-empty and unique, and that every
    /// symbolic attribute has at least one uniquely labeled category.
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        for (j, attr) in attributes.iter().enumerate() {
            if attr.name.is_empty() || attr.name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Schema(format!(
                    "attribute {j} has an empty or whitespace-containing name"
                )));
            }
            if attributes[..j].iter().any(|a| a.name == attr.name) {
                return Err(Error::Schema(format!("duplicate attribute name `{}`", attr.name)));
            }
            if let AttributeKind::Symbolic(labels) = &attr.kind {
                if labels.is_empty() {
                    return Err(Error::Schema(format!(
                        "symbolic attribute `{}` has no categories",
                        attr.name
                    )));
                }
                for (k, label) in labels.iter().enumerate() {
                    if label.is_empty() || label.chars().any(|c| c.is_whitespace()) {
                        return Err(Error::Schema(format!(
                            "category {k} of `{}` has an empty or whitespace-containing label",
                            attr.name
                        )));
                    }
                    if labels[..k].contains(label) {
                        return Err(Error::Schema(format!(
                            "duplicate category `{label}` on attribute `{}`",
                            attr.name
                        )));
                    }
                }
            }
        }
        Ok(Self { attributes })
    }

    /// Number of attributes.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attr(&self, j: usize) -> &Attribute {
        &self.attributes[j]
    }

    /// Index of the attribute with the given name.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Number of categories of symbolic attribute `j` (0 for continuous).
    pub fn category_count(&self, j: usize) -> usize {
        match &self.attributes[j].kind {
            AttributeKind::Continuous => 0,
            AttributeKind::Symbolic(labels) => labels.len(),
        }
    }

    /// Index of `label` within symbolic attribute `j`.
    pub fn category_index(&self, j: usize, label: &str) -> Result<usize> {
        match &self.attributes[j].kind {
            AttributeKind::Continuous => Err(Error::KindMismatch {
                attr: self.attributes[j].name.clone(),
                msg: "continuous attribute has no categories".into(),
            }),
            AttributeKind::Symbolic(labels) => {
                labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownCategory {
                    attr: self.attributes[j].name.clone(),
                    cat: label.to_string(),
                })
            }
        }
    }
}

/// One attribute value: a real number or a category index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Continuous(f64),
    Symbolic(usize),
}

/// Per-attribute factor of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    /// Density (or impulse) over a continuous attribute.
    Continuous(GeneralizedNormal),
    /// Dense probability vector over a symbolic attribute's categories.
    Symbolic(Vec<f64>),
}

impl Marginal {
    /// Log-density (or log-probability) of a single value.
    pub fn ln_density(&self, v: &Value) -> Result<f64> {
        match (self, v) {
            (Marginal::Continuous(gn), Value::Continuous(x)) => Ok(gn.ln_pdf(*x)),
            (Marginal::Symbolic(t), Value::Symbolic(c)) => {
                let p = *t.get(*c).ok_or_else(|| {
                    Error::ValueMismatch(format!("category index {c} out of range"))
                })?;
                Ok(p.ln())
            }
            _ => Err(Error::ValueMismatch(
                "value kind does not match marginal kind".into(),
            )),
        }
    }
}

/// One mixture component: a weight and one marginal per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub marginals: Vec<Marginal>,
}

/// A mixture of factorized generalized normals over a fixed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgnModel {
    schema: AttributeSchema,
    components: Vec<Component>,
}

/// Tolerance on weight/probability sums accepted by the constructor.
const SUM_TOL: f64 = 1e-9;
/// Loose tolerance within which [`MfgnModel::load`] renormalizes weight
/// sums (hand-written files often carry rounded weights).
const LOAD_RENORM_TOL: f64 = 0.02;

impl MfgnModel {
    /// Builds a model and validates its invariants: at least one component,
    /// non-negative weights summing to one (within `1e-9`), marginals
    /// matching the schema's kinds, finite parameters, and symbolic vectors
    /// that are non-negative and sum to one (within `1e-9`).
    pub fn new(schema: AttributeSchema, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Model("model has no components".into()));
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight < 0.0 || !c.weight.is_finite()) {
            return Err(Error::Model("component weights must be finite and non-negative".into()));
        }
        if (wsum - 1.0).abs() > SUM_TOL {
            return Err(Error::Model(format!(
                "component weights sum to {wsum}, expected 1"
            )));
        }
        for (i, comp) in components.iter().enumerate() {
            if comp.marginals.len() != schema.len() {
                return Err(Error::Model(format!(
                    "component {i} has {} marginals for {} attributes",
                    comp.marginals.len(),
                    schema.len()
                )));
            }
            for (j, m) in comp.marginals.iter().enumerate() {
                let attr = schema.attr(j);
                match (m, &attr.kind) {
                    (Marginal::Continuous(gn), AttributeKind::Continuous) => {
                        // Re-run the constructor checks on raw struct input.
                        GeneralizedNormal::new(gn.mu, gn.sigma)?;
                    }
                    (Marginal::Symbolic(t), AttributeKind::Symbolic(labels)) => {
                        if t.len() != labels.len() {
                            return Err(Error::Model(format!(
                                "component {i}, attribute `{}`: {} probabilities for {} categories",
                                attr.name,
                                t.len(),
                                labels.len()
                            )));
                        }
                        if t.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                            return Err(Error::Model(format!(
                                "component {i}, attribute `{}`: probabilities must be finite and non-negative",
                                attr.name
                            )));
                        }
                        let s: f64 = t.iter().sum();
                        if (s - 1.0).abs() > SUM_TOL {
                            return Err(Error::Model(format!(
                                "component {i}, attribute `{}`: probabilities sum to {s}, expected 1",
                                attr.name
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Model(format!(
                            "component {i}, attribute `{}`: marginal kind does not match schema",
                            attr.name
                        )));
                    }
                }
            }
        }
        Ok(Self { schema, components })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Number of mixture components.
    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Checks a full value vector against the schema.
    fn validate_row(&self, z: &[Value]) -> Result<()> {
        if z.len() != self.schema.len() {
            return Err(Error::ValueMismatch(format!(
                "value vector has {} entries for {} attributes",
                z.len(),
                self.schema.len()
            )));
        }
        for (j, v) in z.iter().enumerate() {
            self.validate_value(j, v)?;
        }
        Ok(())
    }

    fn validate_value(&self, j: usize, v: &Value) -> Result<()> {
        let attr = self.schema.attr(j);
        match (v, &attr.kind) {
            (Value::Continuous(x), AttributeKind::Continuous) => {
                if x.is_nan() {
                    return Err(Error::ValueMismatch(format!(
                        "attribute `{}`: value is NaN",
                        attr.name
                    )));
                }
            }
            (Value::Symbolic(c), AttributeKind::Symbolic(labels)) => {
                if *c >= labels.len() {
                    return Err(Error::ValueMismatch(format!(
                        "attribute `{}`: category index {c} out of range ({} categories)",
                        attr.name,
                        labels.len()
                    )));
                }
            }
            _ => {
                return Err(Error::ValueMismatch(format!(
                    "attribute `{}`: value kind does not match attribute kind",
                    attr.name
                )));
            }
        }
        Ok(())
    }

    /// Joint density of one complete value vector. Accumulated in log
    /// space, returned on the linear scale.
    pub fn joint_density(&self, z: &[Value]) -> Result<f64> {
        self.validate_row(z)?;
        let mut terms = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mut ln = comp.weight.ln();
            for (j, v) in z.iter().enumerate() {
                ln += comp.marginals[j].ln_density(v)?;
            }
            terms.push(ln);
        }
        Ok(log_sum_exp(&terms).exp())
    }

    /// Marginal density over a subset of attributes, given as
    /// `(attribute index, value)` pairs. The subset must be non-empty and
    /// free of duplicates; all remaining attributes are integrated out
    /// (which the factorization makes free).
    pub fn marginal_density(&self, subset: &[(usize, Value)]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::ValueMismatch("marginal over an empty attribute set".into()));
        }
        for (pos, (j, v)) in subset.iter().enumerate() {
            if *j >= self.schema.len() {
                return Err(Error::ValueMismatch(format!("attribute index {j} out of range")));
            }
            if subset[..pos].iter().any(|(j2, _)| j2 == j) {
                return Err(Error::ValueMismatch(format!(
                    "attribute `{}` appears twice in the marginal subset",
                    self.schema.attr(*j).name
                )));
            }
            self.validate_value(*j, v)?;
        }
        let mut terms = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mut ln = comp.weight.ln();
            for (j, v) in subset {
                ln += comp.marginals[*j].ln_density(v)?;
            }
            terms.push(ln);
        }
        Ok(log_sum_exp(&terms).exp())
    }

    /// Draws one complete row: pick a component by weight, then sample each
    /// marginal independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Value> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut comp = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                comp = i;
                break;
            }
        }
        self.components[comp]
            .marginals
            .iter()
            .map(|m| match m {
                Marginal::Continuous(gn) => Value::Continuous(gn.sample(rng)),
                Marginal::Symbolic(t) => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut cat = t.len() - 1;
                    for (k, p) in t.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            cat = k;
                            break;
                        }
                    }
                    Value::Symbolic(cat)
                }
            })
            .collect()
    }

    /// Draws `n` rows from a fresh deterministic generator seeded with
    /// `seed`.
    pub fn sample_rows(&self, n: usize, seed: u64) -> Vec<Vec<Value>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    /// Serializes the model to the plain-text `mfgn-model v1` format.
    /// Floats carry 17 significant digits, making save/load bit-exact.
    pub fn save(&self) -> String {
        let mut out = String::new();
        out.push_str("mfgn-model v1\n");
        out.push_str("schema\n");
        for attr in self.schema.attributes() {
            match &attr.kind {
                AttributeKind::Continuous => {
                    let _ = writeln!(out, "attr {} continuous", attr.name);
                }
                AttributeKind::Symbolic(labels) => {
                    let _ = writeln!(out, "attr {} symbolic {}", attr.name, labels.join(" "));
                }
            }
        }
        for comp in &self.components {
            out.push_str("component\n");
            let _ = writeln!(out, "weight {:.16e}", comp.weight);
            for m in &comp.marginals {
                match m {
                    Marginal::Continuous(gn) => {
                        let _ = writeln!(out, "gn {:.16e} {:.16e}", gn.mu, gn.sigma);
                    }
                    Marginal::Symbolic(t) => {
                        let cells: Vec<String> =
                            t.iter().map(|p| format!("{p:.16e}")).collect();
                        let _ = writeln!(out, "cat {}", cells.join(" "));
                    }
                }
            }
        }
        out
    }

    /// Parses the `mfgn-model v1` text format. Blank lines and lines
    /// starting with `#` are ignored. Weight sums within `1e-12` of one are
    /// kept bit-exact; sums off by at most 0.02 (as happens with weights
    /// rounded for presentation) are renormalized; anything further off is
    /// a structured error naming the offending sum.
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (line, header) = lines
            .next()
            .ok_or_else(|| Error::ModelFormat { line: 1, msg: "empty model file".into() })?;
        if header != "mfgn-model v1" {
            return Err(Error::ModelFormat {
                line,
                msg: format!("expected header `mfgn-model v1`, found `{header}`"),
            });
        }
        let (line, schema_kw) = lines.next().ok_or_else(|| Error::ModelFormat {
            line,
            msg: "missing `schema` section".into(),
        })?;
        if schema_kw != "schema" {
            return Err(Error::ModelFormat {
                line,
                msg: format!("expected `schema`, found `{schema_kw}`"),
            });
        }

        let mut attributes = Vec::new();
        let mut pending: Option<(usize, &str)> = None;
        for (ln, l) in lines.by_ref() {
            if l == "component" {
                pending = Some((ln, l));
                break;
            }
            let mut parts = l.split_whitespace();
            match parts.next() {
                Some("attr") => {}
                _ => {
                    return Err(Error::ModelFormat {
                        line: ln,
                        msg: format!("expected `attr` or `component`, found `{l}`"),
                    })
                }
            }
            let name = parts.next().ok_or_else(|| Error::ModelFormat {
                line: ln,
                msg: "attr line is missing a name".into(),
            })?;
            match parts.next() {
                Some("continuous") => {
                    if parts.next().is_some() {
                        return Err(Error::ModelFormat {
                            line: ln,
                            msg: "trailing tokens after `continuous`".into(),
                        });
                    }
                    attributes.push(Attribute::continuous(name));
                }
                Some("symbolic") => {
                    let labels: Vec<&str> = parts.collect();
                    if labels.is_empty() {
                        return Err(Error::ModelFormat {
                            line: ln,
                            msg: format!("symbolic attribute `{name}` lists no categories"),
                        });
                    }
                    attributes.push(Attribute::symbolic(name, &labels));
                }
                other => {
                    return Err(Error::ModelFormat {
                        line: ln,
                        msg: format!("expected `continuous` or `symbolic`, found {other:?}"),
                    })
                }
            }
        }
        let schema = AttributeSchema::new(attributes)
            .map_err(|e| Error::ModelFormat { line: 1, msg: e.to_string() })?;

        let mut components: Vec<Component> = Vec::new();
        let mut cur: Option<(Option<f64>, Vec<Marginal>, usize)> = None;

        let parse_f64 = |tok: &str, ln: usize| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| Error::ModelFormat {
                line: ln,
                msg: format!("cannot parse number `{tok}`"),
            })
        };

        let finish = |cur: Option<(Option<f64>, Vec<Marginal>, usize)>,
                      components: &mut Vec<Component>,
                      schema: &AttributeSchema|
         -> Result<()> {
            if let Some((weight, marginals, ln)) = cur {
                let weight = weight.ok_or_else(|| Error::ModelFormat {
                    line: ln,
                    msg: "component is missing its `weight` line".into(),
                })?;
                if marginals.len() != schema.len() {
                    return Err(Error::ModelFormat {
                        line: ln,
                        msg: format!(
                            "component has {} marginal lines for {} attributes",
                            marginals.len(),
                            schema.len()
                        ),
                    });
                }
                components.push(Component { weight, marginals });
            }
            Ok(())
        };

        let remaining: Vec<(usize, &str)> = pending.into_iter().chain(lines).collect();
        for (ln, l) in remaining {
            if l == "component" {
                finish(cur.take(), &mut components, &schema)?;
                cur = Some((None, Vec::new(), ln));
                continue;
            }
            let state = cur.as_mut().ok_or_else(|| Error::ModelFormat {
                line: ln,
                msg: format!("expected `component`, found `{l}`"),
            })?;
            let mut parts = l.split_whitespace();
            match parts.next() {
                Some("weight") => {
                    let tok = parts.next().ok_or_else(|| Error::ModelFormat {
                        line: ln,
                        msg: "weight line is missing its value".into(),
                    })?;
                    if state.0.is_some() {
                        return Err(Error::ModelFormat {
                            line: ln,
                            msg: "duplicate weight line".into(),
                        });
                    }
                    state.0 = Some(parse_f64(tok, ln)?);
                }
                Some("gn") => {
                    let mu = parse_f64(
                        parts.next().ok_or_else(|| Error::ModelFormat {
                            line: ln,
                            msg: "gn line needs a location and a dispersion".into(),
                        })?,
                        ln,
                    )?;
                    let sigma = parse_f64(
                        parts.next().ok_or_else(|| Error::ModelFormat {
                            line: ln,
                            msg: "gn line needs a location and a dispersion".into(),
                        })?,
                        ln,
                    )?;
                    state.1.push(Marginal::Continuous(
                        GeneralizedNormal::new(mu, sigma)
                            .map_err(|e| Error::ModelFormat { line: ln, msg: e.to_string() })?,
                    ));
                }
                Some("cat") => {
                    let mut t = Vec::new();
                    for tok in parts {
                        t.push(parse_f64(tok, ln)?);
                    }
                    state.1.push(Marginal::Symbolic(t));
                }
                other => {
                    return Err(Error::ModelFormat {
                        line: ln,
                        msg: format!("expected `weight`, `gn` or `cat`, found {other:?}"),
                    })
                }
            }
        }
        finish(cur.take(), &mut components, &schema)?;

        if components.is_empty() {
            return Err(Error::ModelFormat { line: 1, msg: "model file has no components".into() });
        }

        // Rounded presentation weights (components and symbolic vectors) are
        // renormalized when close; exact files pass through untouched.
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if !wsum.is_finite() || (wsum - 1.0).abs() > LOAD_RENORM_TOL {
            return Err(Error::ModelFormat {
                line: 1,
                msg: format!("component weights sum to {wsum}, expected 1"),
            });
        }
        if (wsum - 1.0).abs() > 1e-12 {
            for c in &mut components {
                c.weight /= wsum;
            }
        }
        for (i, comp) in components.iter_mut().enumerate() {
            for (j, m) in comp.marginals.iter_mut().enumerate() {
                if let Marginal::Symbolic(t) = m {
                    let s: f64 = t.iter().sum();
                    if !s.is_finite() || (s - 1.0).abs() > LOAD_RENORM_TOL {
                        return Err(Error::ModelFormat {
                            line: 1,
                            msg: format!(
                                "component {i}, attribute `{}`: probabilities sum to {s}, expected 1",
                                schema.attr(j).name
                            ),
                        });
                    }
                    if (s - 1.0).abs() > 1e-12 {
                        for p in t.iter_mut() {
                            *p /= s;
                        }
                    }
                }
            }
        }

        Self::new(schema, components)
    }
}
