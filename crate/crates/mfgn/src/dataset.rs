//! Dataset files: comma-separated tables with uncertain-cell syntax, the
//! schema sidecar format, and seeded corruption pipelines for degradation
//! studies.
//!
//! A dataset is a UTF-8 text file. The first non-blank line is a header of
//! column names: every schema attribute exactly once, in any order, plus
//! the optional reserved columns `#id` and `#w`. Consecutive physical rows
//! sharing an `#id` value merge into one example whose conjunctions are
//! weighted by `#w` (default 1) — a disjunctive ("either this reading or
//! that one") training row. Cell grammar, by attribute kind:
//!
//! | cell                  | meaning                                        |
//! |-----------------------|------------------------------------------------|
//! | `5.1`                 | exact continuous value                         |
//! | `?`                   | missing                                        |
//! | `7+-1`                | Gaussian reading `s = 7` with `eps = 0.5`      |
//! | `[2,3]`               | interval (bounds may be `-inf`/`inf`)          |
//! | `7+-2\|0.7;5+-2\|0.3` | weighted mixture of Gaussian readings          |
//! | `red`                 | exact category                                 |
//! | `red\|0.8;green\|0.2` | category likelihoods (unlisted labels get 0)   |
//!
//! The reading in `s+-e` spans `±e` around `s`, reported dispersion
//! `eps = e/2`; `e = 0` degrades to an exact value. The mixture form mirrors
//! the symbolic one — `reading|weight` parts separated by `;` — and is what
//! corruption annotation uses to express "this reading may or may not carry
//! an offset".
//!
//! [`CorruptionSpec`] degrades a dataset deterministically given a seed.
//! Each attribute draws from its own RNG stream, so corrupting disjoint
//! attribute sets in separate passes equals one combined pass. One
//! realization is rendered twice: raw corrupted values (what a naive
//! pipeline would train on) and likelihood-annotated cells that tell the
//! learner exactly how each value was degraded.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evidence::{Conjunction, Evidence, Observation};
use crate::gn::GeneralizedNormal;
use crate::learning::TrainingTable;
use crate::model::{Attribute, AttributeKind, AttributeSchema, Value};

/// Parses a schema sidecar: one `attr <name> continuous` or
/// `attr <name> symbolic <label>...` line per attribute; `#` comments and
/// blank lines are skipped.
pub fn load_schema(text: &str) -> Result<AttributeSchema> {
    let mut attrs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let data_err = |msg: String| Error::Data { line: ln + 1, msg };
        let mut toks = line.split_whitespace();
        if toks.next() != Some("attr") {
            return Err(data_err("expected an `attr` line".into()));
        }
        let name = toks
            .next()
            .ok_or_else(|| data_err("missing attribute name".into()))?;
        match toks.next() {
            Some("continuous") => {
                if toks.next().is_some() {
                    return Err(data_err("trailing tokens after `continuous`".into()));
                }
                attrs.push(Attribute::continuous(name));
            }
            Some("symbolic") => {
                let labels: Vec<&str> = toks.collect();
                if labels.is_empty() {
                    return Err(data_err(format!(
                        "symbolic attribute `{name}` needs at least one label"
                    )));
                }
                attrs.push(Attribute::symbolic(name, &labels));
            }
            other => {
                return Err(data_err(format!(
                    "expected `continuous` or `symbolic`, found `{}`",
                    other.unwrap_or("")
                )))
            }
        }
    }
    AttributeSchema::new(attrs)
}

/// Renders a schema in the sidecar format accepted by [`load_schema`].
pub fn save_schema(schema: &AttributeSchema) -> String {
    let mut out = String::new();
    for attr in schema.attributes() {
        match &attr.kind {
            AttributeKind::Continuous => {
                out.push_str(&format!("attr {} continuous\n", attr.name));
            }
            AttributeKind::Symbolic(labels) => {
                out.push_str(&format!("attr {} symbolic {}\n", attr.name, labels.join(" ")));
            }
        }
    }
    out
}

/// One physical dataset row: raw cell text in schema order plus the
/// reserved-column values.
#[derive(Debug, Clone)]
pub struct PhysicalRow {
    /// Source line (1-based), for error messages.
    pub line: usize,
    /// `#id` cell, when present and non-empty.
    pub id: Option<String>,
    /// `#w` conjunction weight (1 when the column is absent or empty).
    pub weight: f64,
    /// Raw cell text per attribute, in schema order.
    pub cells: Vec<String>,
}

/// A parsed dataset file: schema-ordered raw cells, one entry per physical
/// row. Cell *text* is preserved verbatim so that rewriting passes (the
/// corruption pipeline) leave untouched cells byte-identical.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: AttributeSchema,
    rows: Vec<PhysicalRow>,
}

/// Splits one dataset line on commas, except inside `[...]` interval cells.
fn split_cells(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in line.chars() {
        match ch {
            '[' => {
                depth += 1;
                cur.push(ch);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    out.push(cur.trim().to_string());
    out
}

fn parse_f64(text: &str) -> std::result::Result<f64, String> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| format!("`{text}` is not a number"))?;
    if v.is_nan() {
        return Err(format!("`{text}` is not a number"));
    }
    Ok(v)
}

/// Parses `s` or `s+-e` into a generalized-normal reading (`eps = e/2`).
fn parse_reading(text: &str) -> std::result::Result<(f64, f64), String> {
    match text.find("+-") {
        None => Ok((parse_f64(text)?, 0.0)),
        Some(at) => {
            let s = parse_f64(&text[..at])?;
            let e = parse_f64(&text[at + 2..])?;
            if e < 0.0 || !e.is_finite() {
                return Err(format!("reading span `{}` is not finite and non-negative", &text[at + 2..]));
            }
            Ok((s, e / 2.0))
        }
    }
}

/// Parses one cell against attribute `j` of the schema.
pub fn parse_cell(
    text: &str,
    schema: &AttributeSchema,
    j: usize,
) -> std::result::Result<Observation, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty cell (use `?` for a missing value)".into());
    }
    if text == "?" {
        return Ok(Observation::Missing);
    }
    if schema.attr(j).is_symbolic() {
        if text.contains('|') {
            let count = schema.category_count(j);
            let mut p = vec![0.0; count];
            let mut seen = vec![false; count];
            for part in text.split(';') {
                let (label, prob) = part
                    .split_once('|')
                    .ok_or_else(|| format!("`{part}` is not a `label|probability` pair"))?;
                let k = schema
                    .category_index(j, label.trim())
                    .map_err(|e| e.to_string())?;
                if seen[k] {
                    return Err(format!("category `{}` listed twice", label.trim()));
                }
                seen[k] = true;
                p[k] = parse_f64(prob)?;
            }
            Ok(Observation::SymbolicDist(p))
        } else {
            let k = schema.category_index(j, text).map_err(|e| e.to_string())?;
            Ok(Observation::Exact(Value::Symbolic(k)))
        }
    } else if let Some(inner) = text.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| format!("unterminated interval `{text}`"))?;
        let (a, b) = inner
            .split_once(',')
            .ok_or_else(|| format!("interval `{text}` needs two comma-separated bounds"))?;
        Ok(Observation::Interval { a: parse_f64(a)?, b: parse_f64(b)? })
    } else if text.contains('|') {
        let mut parts = Vec::new();
        for part in text.split(';') {
            let (reading, weight) = part
                .rsplit_once('|')
                .ok_or_else(|| format!("`{part}` is not a `reading|weight` pair"))?;
            let (s, eps) = parse_reading(reading)?;
            let w = parse_f64(weight)?;
            parts.push((w, GeneralizedNormal { mu: s, sigma: eps }));
        }
        Ok(Observation::NormalMixture(parts))
    } else {
        let (s, eps) = parse_reading(text)?;
        Ok(Observation::around(s, eps))
    }
}

/// Renders an observation in the canonical cell grammar. Gaussian bias is
/// folded into the reading (`s - bias ± 2eps`), since a cell carries no
/// separate bias field.
pub fn format_observation(o: &Observation, schema: &AttributeSchema, j: usize) -> String {
    match o {
        Observation::Missing => "?".to_string(),
        Observation::Exact(Value::Continuous(v)) => format!("{v}"),
        Observation::Exact(Value::Symbolic(k)) => match &schema.attr(j).kind {
            AttributeKind::Symbolic(labels) => labels[*k].clone(),
            AttributeKind::Continuous => unreachable!("symbolic value on a continuous attribute"),
        },
        Observation::Gaussian { s, eps, bias } => format!("{}+-{}", s - bias, 2.0 * eps),
        Observation::Interval { a, b } => format!("[{a},{b}]"),
        Observation::SymbolicDist(p) => match &schema.attr(j).kind {
            AttributeKind::Symbolic(labels) => p
                .iter()
                .zip(labels)
                .filter(|(q, _)| **q > 0.0)
                .map(|(q, label)| format!("{label}|{q}"))
                .collect::<Vec<_>>()
                .join(";"),
            AttributeKind::Continuous => unreachable!("symbolic dist on a continuous attribute"),
        },
        Observation::NormalMixture(parts) => parts
            .iter()
            .map(|(w, g)| {
                if g.is_impulse() {
                    format!("{}|{w}", g.mu)
                } else {
                    format!("{}+-{}|{w}", g.mu, 2.0 * g.sigma)
                }
            })
            .collect::<Vec<_>>()
            .join(";"),
    }
}

impl Dataset {
    /// Parses a dataset file. Blank lines are skipped; the first non-blank
    /// line is the header.
    pub fn parse(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let data_err =
            |line: usize, msg: String| Error::Data { line, msg };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((header_ln, header)) = lines.next() else {
            return Err(data_err(1, "dataset has no header line".into()));
        };
        // Map header columns onto schema attributes and reserved columns.
        let names = split_cells(header);
        let mut col_attr: Vec<Option<usize>> = Vec::with_capacity(names.len());
        let mut id_col = None;
        let mut w_col = None;
        let mut seen = vec![false; schema.len()];
        for (c, name) in names.iter().enumerate() {
            match name.as_str() {
                "#id" => {
                    if id_col.replace(c).is_some() {
                        return Err(data_err(header_ln, "duplicate `#id` column".into()));
                    }
                    col_attr.push(None);
                }
                "#w" => {
                    if w_col.replace(c).is_some() {
                        return Err(data_err(header_ln, "duplicate `#w` column".into()));
                    }
                    col_attr.push(None);
                }
                other => {
                    let j = schema
                        .index_of(other)
                        .map_err(|e| data_err(header_ln, e.to_string()))?;
                    if seen[j] {
                        return Err(data_err(header_ln, format!("duplicate column `{other}`")));
                    }
                    seen[j] = true;
                    col_attr.push(Some(j));
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(data_err(
                header_ln,
                format!("header lacks a column for attribute `{}`", schema.attr(j).name),
            ));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines {
            let cells = split_cells(line);
            if cells.len() != names.len() {
                return Err(data_err(
                    ln,
                    format!("expected {} cells, found {}", names.len(), cells.len()),
                ));
            }
            let id = id_col.and_then(|c| {
                let v = cells[c].trim();
                if v.is_empty() {
                    None
                } else {
                    Some(v.to_string())
                }
            });
            let weight = match w_col {
                None => 1.0,
                Some(c) if cells[c].trim().is_empty() => 1.0,
                Some(c) => {
                    let w = parse_f64(&cells[c]).map_err(|e| data_err(ln, e))?;
                    if !w.is_finite() || w <= 0.0 {
                        return Err(data_err(ln, format!("conjunction weight {w} must be positive")));
                    }
                    w
                }
            };
            let mut ordered = vec![String::new(); schema.len()];
            for (c, cell) in cells.iter().enumerate() {
                if let Some(j) = col_attr[c] {
                    ordered[j] = cell.clone();
                }
            }
            // Validate cell syntax eagerly so errors carry file positions.
            for (j, cell) in ordered.iter().enumerate() {
                parse_cell(cell, schema, j).map_err(|e| {
                    data_err(ln, format!("attribute `{}`: {e}", schema.attr(j).name))
                })?;
            }
            rows.push(PhysicalRow { line: ln, id, weight, cells: ordered });
        }
        if rows.is_empty() {
            return Err(data_err(header_ln, "dataset has no data rows".into()));
        }
        Ok(Self { schema: schema.clone(), rows })
    }

    /// Builds an exact dataset (canonical cell text) from value rows.
    pub fn from_values(schema: &AttributeSchema, rows: &[Vec<Value>]) -> Result<Self> {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                if row.len() != schema.len() {
                    return Err(Error::ValueMismatch(format!(
                        "row {k} has {} values for {} attributes",
                        row.len(),
                        schema.len()
                    )));
                }
                let cells = row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| format_observation(&Observation::Exact(*v), schema, j))
                    .collect();
                Ok(PhysicalRow { line: k + 2, id: None, weight: 1.0, cells })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { schema: schema.clone(), rows })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[PhysicalRow] {
        &self.rows
    }

    /// Renders the dataset: canonical header (schema order, then `#id`/`#w`
    /// when used), cells verbatim.
    pub fn emit(&self) -> String {
        let has_id = self.rows.iter().any(|r| r.id.is_some());
        let has_w = self.rows.iter().any(|r| r.weight != 1.0);
        let mut header: Vec<String> =
            self.schema.attributes().iter().map(|a| a.name.clone()).collect();
        if has_id {
            header.push("#id".into());
        }
        if has_w {
            header.push("#w".into());
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut cells = row.cells.clone();
            if has_id {
                cells.push(row.id.clone().unwrap_or_default());
            }
            if has_w {
                cells.push(if row.weight == 1.0 {
                    String::new()
                } else {
                    format!("{}", row.weight)
                });
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Groups physical rows into training examples: consecutive rows with
    /// the same `#id` become one multi-conjunction row.
    pub fn to_table(&self) -> Result<TrainingTable> {
        let mut evidence: Vec<Evidence> = Vec::new();
        let mut closed: HashSet<String> = HashSet::new();
        let mut current: Option<(String, Vec<Conjunction>)> = None;
        let close =
            |current: &mut Option<(String, Vec<Conjunction>)>,
             evidence: &mut Vec<Evidence>,
             closed: &mut HashSet<String>| {
                if let Some((id, conjs)) = current.take() {
                    evidence.push(Evidence { conjunctions: conjs });
                    closed.insert(id);
                }
            };
        for row in &self.rows {
            let observations = row
                .cells
                .iter()
                .enumerate()
                .map(|(j, cell)| {
                    parse_cell(cell, &self.schema, j).map_err(|e| Error::Data {
                        line: row.line,
                        msg: format!("attribute `{}`: {e}", self.schema.attr(j).name),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let conj = Conjunction { weight: row.weight, observations };
            match (&mut current, &row.id) {
                (Some((id, conjs)), Some(rid)) if id == rid => conjs.push(conj),
                (_, Some(rid)) => {
                    close(&mut current, &mut evidence, &mut closed);
                    if closed.contains(rid) {
                        return Err(Error::Data {
                            line: row.line,
                            msg: format!("`#id` {rid} reused non-contiguously"),
                        });
                    }
                    current = Some((rid.clone(), vec![conj]));
                }
                (_, None) => {
                    close(&mut current, &mut evidence, &mut closed);
                    evidence.push(Evidence { conjunctions: vec![conj] });
                }
            }
        }
        close(&mut current, &mut evidence, &mut closed);
        TrainingTable::new(self.schema.clone(), evidence)
    }
}

/// Parses and groups a dataset file in one step.
pub fn ingest(text: &str, schema: &AttributeSchema) -> Result<TrainingTable> {
    Dataset::parse(text, schema)?.to_table()
}

/// Comparison operator of a censoring predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensorOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CensorOp {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "<" => Some(Self::Lt),
            "<=" => Some(Self::Le),
            ">" => Some(Self::Gt),
            ">=" => Some(Self::Ge),
            _ => None,
        }
    }

    fn holds(self, v: f64, threshold: f64) -> bool {
        match self {
            Self::Lt => v < threshold,
            Self::Le => v <= threshold,
            Self::Gt => v > threshold,
            Self::Ge => v >= threshold,
        }
    }
}

/// Per-attribute degradation directives (all optional):
/// additive Gaussian noise, a Bernoulli systematic offset, symbolic label
/// flips, missing-at-random erasure, and censoring with a user-supplied
/// replacement likelihood.
#[derive(Debug, Clone, Default)]
struct AttrCorruption {
    noise: Option<f64>,
    bias: Option<(f64, f64)>,
    flip: Option<f64>,
    missing: Option<f64>,
    censor: Option<(CensorOp, f64, String)>,
}

/// A parsed corruption-spec file: line-oriented directives
///
/// ```text
/// noise x 1.0            # add N(0, 1) to every exact x cell
/// bias y 0.5 0.3         # add 0.5 to y in 30% of the rows
/// flip U 0.2             # replace the label by another in 20% of rows
/// missing z 0.25         # erase 25% of z cells
/// censor x > 9 [9,inf]   # clip at 9; annotated cells say "at least 9"
/// ```
///
/// `#` comments and blank lines are skipped. Within one attribute the
/// pipeline order is fixed: noise, bias, flip, missing, censor.
#[derive(Debug, Clone)]
pub struct CorruptionSpec {
    per_attr: Vec<AttrCorruption>,
}

impl CorruptionSpec {
    pub fn parse(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let mut per_attr: Vec<AttrCorruption> = vec![AttrCorruption::default(); schema.len()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let data_err = |msg: String| Error::Data { line: ln + 1, msg };
            let toks: Vec<&str> = line.split_whitespace().collect();
            let kind = toks[0];
            let attr_name = toks
                .get(1)
                .ok_or_else(|| data_err(format!("`{kind}` needs an attribute name")))?;
            let j = schema.index_of(attr_name).map_err(|e| data_err(e.to_string()))?;
            let symbolic = schema.attr(j).is_symbolic();
            let arity_err = || data_err(format!("wrong number of arguments for `{kind}`"));
            let num = |i: usize| -> Result<f64> {
                toks.get(i)
                    .ok_or_else(arity_err)
                    .and_then(|t| parse_f64(t).map_err(data_err))
            };
            let prob = |i: usize| -> Result<f64> {
                let p = num(i)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(data_err(format!("probability {p} is not in [0, 1]")));
                }
                Ok(p)
            };
            let kind_guard = |want_symbolic: bool| -> Result<()> {
                if symbolic != want_symbolic {
                    return Err(data_err(format!(
                        "`{kind}` applies to {} attributes, but `{attr_name}` is not one",
                        if want_symbolic { "symbolic" } else { "continuous" }
                    )));
                }
                Ok(())
            };
            let slot = &mut per_attr[j];
            let dup = |present: bool| -> Result<()> {
                if present {
                    return Err(data_err(format!("duplicate `{kind}` directive for `{attr_name}`")));
                }
                Ok(())
            };
            match kind {
                "noise" => {
                    kind_guard(false)?;
                    dup(slot.noise.is_some())?;
                    if toks.len() != 3 {
                        return Err(arity_err());
                    }
                    let sigma = num(2)?;
                    if sigma < 0.0 || !sigma.is_finite() {
                        return Err(data_err(format!(
                            "noise dispersion {sigma} is not finite and non-negative"
                        )));
                    }
                    slot.noise = Some(sigma);
                }
                "bias" => {
                    kind_guard(false)?;
                    dup(slot.bias.is_some())?;
                    if toks.len() != 4 {
                        return Err(arity_err());
                    }
                    slot.bias = Some((num(2)?, prob(3)?));
                }
                "flip" => {
                    kind_guard(true)?;
                    dup(slot.flip.is_some())?;
                    if toks.len() != 3 {
                        return Err(arity_err());
                    }
                    if schema.category_count(j) < 2 {
                        return Err(data_err(format!(
                            "cannot flip `{attr_name}`: it has a single category"
                        )));
                    }
                    slot.flip = Some(prob(2)?);
                }
                "missing" => {
                    dup(slot.missing.is_some())?;
                    if toks.len() != 3 {
                        return Err(arity_err());
                    }
                    slot.missing = Some(prob(2)?);
                }
                "censor" => {
                    kind_guard(false)?;
                    dup(slot.censor.is_some())?;
                    if toks.len() != 5 {
                        return Err(arity_err());
                    }
                    let op = CensorOp::parse(toks[2]).ok_or_else(|| {
                        data_err(format!("`{}` is not one of <, <=, >, >=", toks[2]))
                    })?;
                    let threshold = num(3)?;
                    let replacement = toks[4].to_string();
                    parse_cell(&replacement, schema, j).map_err(|e| {
                        data_err(format!("replacement cell `{replacement}`: {e}"))
                    })?;
                    slot.censor = Some((op, threshold, replacement));
                }
                other => {
                    return Err(data_err(format!(
                        "unknown directive `{other}` (expected noise, bias, flip, missing or censor)"
                    )))
                }
            }
        }
        Ok(Self { per_attr })
    }

    /// Applies one degradation realization, deterministically given `seed`,
    /// and renders it twice: `(raw, annotated)`. Raw cells carry the
    /// corrupted values as if they were clean; annotated cells carry the
    /// matching likelihoods. Only exact cells are degraded; uncertain or
    /// missing input cells pass through verbatim. Each attribute draws from
    /// its own seeded stream, so specs over disjoint attribute sets commute.
    pub fn apply(&self, data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
        let schema = data.schema();
        let mut raw = data.clone();
        let mut ann = data.clone();
        for (j, c) in self.per_attr.iter().enumerate() {
            let noise = c.noise.filter(|s| *s > 0.0);
            let bias = c.bias.filter(|(_, p)| *p > 0.0);
            let flip = c.flip.filter(|p| *p > 0.0);
            let missing = c.missing.filter(|p| *p > 0.0);
            let censor = c.censor.as_ref();
            if noise.is_none() && bias.is_none() && flip.is_none() && missing.is_none() && censor.is_none() {
                continue;
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ fnv1a(schema.attr(j).name.as_bytes()));
            for (r, row) in data.rows.iter().enumerate() {
                let obs = parse_cell(&row.cells[j], schema, j).map_err(|e| Error::Data {
                    line: row.line,
                    msg: format!("attribute `{}`: {e}", schema.attr(j).name),
                })?;
                match obs {
                    Observation::Exact(Value::Continuous(value)) => {
                        let mut v = value;
                        let mut touched = false;
                        if let Some(sigma) = noise {
                            let z: f64 = rng.sample(StandardNormal);
                            v += sigma * z;
                            touched = true;
                        }
                        if let Some((delta, p)) = bias {
                            if rng.gen::<f64>() < p {
                                v += delta;
                            }
                            touched = true;
                        }
                        if let Some(p) = missing {
                            if rng.gen::<f64>() < p {
                                raw.rows[r].cells[j] = "?".into();
                                ann.rows[r].cells[j] = "?".into();
                                continue;
                            }
                        }
                        if let Some((op, threshold, replacement)) = censor {
                            if op.holds(v, *threshold) {
                                raw.rows[r].cells[j] = format!("{threshold}");
                                ann.rows[r].cells[j] = replacement.clone();
                                continue;
                            }
                        }
                        if touched {
                            raw.rows[r].cells[j] = format!("{v}");
                            ann.rows[r].cells[j] = annotate_continuous(v, noise, bias);
                        }
                    }
                    Observation::Exact(Value::Symbolic(k)) => {
                        let count = schema.category_count(j);
                        let mut k_obs = k;
                        let mut touched = false;
                        if let Some(p) = flip {
                            if rng.gen::<f64>() < p {
                                let o = rng.gen_range(0..count - 1);
                                k_obs = if o >= k { o + 1 } else { o };
                            }
                            touched = true;
                        }
                        if let Some(p) = missing {
                            if rng.gen::<f64>() < p {
                                raw.rows[r].cells[j] = "?".into();
                                ann.rows[r].cells[j] = "?".into();
                                continue;
                            }
                        }
                        if touched {
                            let p = flip.expect("touched implies a flip directive");
                            raw.rows[r].cells[j] = format_observation(
                                &Observation::Exact(Value::Symbolic(k_obs)),
                                schema,
                                j,
                            );
                            // P(observed | true): 1-p on the observed label,
                            // p/(K-1) on every other.
                            let mut dist = vec![p / (count - 1) as f64; count];
                            dist[k_obs] = 1.0 - p;
                            ann.rows[r].cells[j] =
                                format_observation(&Observation::SymbolicDist(dist), schema, j);
                        }
                    }
                    // Uncertain or missing input cells pass through.
                    _ => {}
                }
            }
        }
        Ok((raw, ann))
    }
}

/// Annotated cell for a continuous reading `v` after the noise and bias
/// stages: `v ± 2σ` for pure noise, a two-part mixture when the reading may
/// carry an offset.
fn annotate_continuous(v: f64, noise: Option<f64>, bias: Option<(f64, f64)>) -> String {
    let part = |center: f64| match noise {
        Some(sigma) => format!("{center}+-{}", 2.0 * sigma),
        None => format!("{center}"),
    };
    match bias {
        None => part(v),
        Some((delta, p)) if p >= 1.0 => format!("{}|1", part(v - delta)),
        Some((delta, p)) => format!("{}|{};{}|{}", part(v), 1.0 - p, part(v - delta), p),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
