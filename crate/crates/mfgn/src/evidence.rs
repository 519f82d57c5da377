//! Evidence: uncertain observations, the query language, and expansion.
//!
//! Information about an instance is a weighted disjunction of conjunctions
//! of *elementary observations*, one per attribute. Each conjunction plays
//! the role of a virtual sensor reading with relative strength given by its
//! weight; attributes the conjunction says nothing about are `Missing`.
//!
//! The textual query language builds such evidence compositionally:
//!
//! ```text
//! expr   := or
//! or     := branch (OR branch)*
//! branch := ["w:" NUM] and
//! and    := atom (AND atom)*
//! atom   := "(" expr ")" | obs
//! obs    := NAME "=" VALUE            exact value (number or category)
//!         | NAME "=" "?"              explicitly unobserved
//!         | NAME "~" NUM "+-" NUM ["bias" NUM]
//!         | NAME "in" "[" NUM "," NUM "]"
//!         | NAME "=" "{" NAME ":" NUM ("," NAME ":" NUM)* "}"
//! ```
//!
//! Keywords (`OR`, `AND`, `in`, `bias`, `w:`) are case-insensitive. A
//! reading `s +- e` covers roughly a four-dispersion span, so it denotes a
//! Gaussian likelihood with `eps = e / 2`; `+- 0` degrades to an exact
//! value. [`expand`] lowers the composed expression into the flat
//! disjunctive form: `AND` distributes over `OR`, branch weights multiply
//! along each path, and two observations meeting on the same attribute are
//! fused into one elementary observation where the calculus allows it.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gn::GeneralizedNormal;
use crate::model::{AttributeKind, AttributeSchema, Value};

/// Sum tolerance for user-supplied discrete distributions.
const DIST_SUM_TOL: f64 = 1e-9;

/// One elementary observation of a single attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// The attribute is known exactly.
    Exact(Value),
    /// Gaussian likelihood `N(z; s - bias, eps)` of a noisy reading `s`
    /// with dispersion `eps > 0` and systematic offset `bias` (the sensor
    /// reads `z + bias` on average). Continuous attributes only.
    Gaussian { s: f64, eps: f64, bias: f64 },
    /// Nothing is known about the attribute.
    Missing,
    /// The attribute is known to lie in `[a, b]` (bounds may be infinite).
    /// Continuous attributes only.
    Interval { a: f64, b: f64 },
    /// Relative likelihood per category. Non-negative, sums to one.
    SymbolicDist(Vec<f64>),
    /// Weighted sum of generalized-normal likelihoods over one continuous
    /// attribute (e.g. a reading that may or may not carry an offset).
    /// Weights are positive; they need not sum to one.
    NormalMixture(Vec<(f64, GeneralizedNormal)>),
}

impl Observation {
    /// Gaussian observation without bias (`eps = 0` degrades to exact).
    pub fn around(s: f64, eps: f64) -> Self {
        if eps == 0.0 {
            Observation::Exact(Value::Continuous(s))
        } else {
            Observation::Gaussian { s, eps, bias: 0.0 }
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Observation::Missing)
    }

    /// Validates the observation against attribute `j` of the schema.
    pub fn validate(&self, schema: &AttributeSchema, j: usize) -> Result<()> {
        let attr = schema.attr(j);
        let kind_err = |msg: &str| {
            Err(Error::KindMismatch { attr: attr.name.clone(), msg: msg.to_string() })
        };
        match self {
            Observation::Missing => Ok(()),
            Observation::Exact(Value::Continuous(x)) => match &attr.kind {
                AttributeKind::Continuous => {
                    if x.is_finite() {
                        Ok(())
                    } else {
                        kind_err("exact value must be finite")
                    }
                }
                AttributeKind::Symbolic(_) => kind_err("numeric value on a symbolic attribute"),
            },
            Observation::Exact(Value::Symbolic(c)) => match &attr.kind {
                AttributeKind::Symbolic(labels) if *c < labels.len() => Ok(()),
                AttributeKind::Symbolic(labels) => kind_err(&format!(
                    "category index {c} out of range ({} categories)",
                    labels.len()
                )),
                AttributeKind::Continuous => kind_err("category on a continuous attribute"),
            },
            Observation::Gaussian { s, eps, bias } => match &attr.kind {
                AttributeKind::Continuous => {
                    if !s.is_finite() || !bias.is_finite() {
                        kind_err("reading and bias must be finite")
                    } else if *eps <= 0.0 || !eps.is_finite() {
                        kind_err("uncertain reading needs dispersion > 0 (use an exact value)")
                    } else {
                        Ok(())
                    }
                }
                AttributeKind::Symbolic(_) => {
                    kind_err("uncertain numeric reading on a symbolic attribute")
                }
            },
            Observation::Interval { a, b } => match &attr.kind {
                AttributeKind::Continuous => {
                    if a.is_nan() || b.is_nan() || a > b {
                        Err(Error::InvalidInterval { a: *a, b: *b })
                    } else {
                        Ok(())
                    }
                }
                AttributeKind::Symbolic(_) => kind_err("interval on a symbolic attribute"),
            },
            Observation::SymbolicDist(p) => match &attr.kind {
                AttributeKind::Symbolic(labels) => {
                    if p.len() != labels.len() {
                        return kind_err(&format!(
                            "{} likelihoods for {} categories",
                            p.len(),
                            labels.len()
                        ));
                    }
                    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                        return kind_err("category likelihoods must be finite and non-negative");
                    }
                    let s: f64 = p.iter().sum();
                    if (s - 1.0).abs() > DIST_SUM_TOL {
                        return kind_err(&format!("category likelihoods sum to {s}, expected 1"));
                    }
                    Ok(())
                }
                AttributeKind::Continuous => {
                    kind_err("category distribution on a continuous attribute")
                }
            },
            Observation::NormalMixture(parts) => match &attr.kind {
                AttributeKind::Continuous => {
                    if parts.is_empty() {
                        return kind_err("empty likelihood mixture");
                    }
                    for (w, gn) in parts {
                        if *w <= 0.0 || !w.is_finite() {
                            return kind_err("mixture weights must be positive and finite");
                        }
                        GeneralizedNormal::new(gn.mu, gn.sigma)?;
                    }
                    Ok(())
                }
                AttributeKind::Symbolic(_) => {
                    kind_err("numeric likelihood mixture on a symbolic attribute")
                }
            },
        }
    }

    /// Likelihood of the observation at a candidate attribute value, using
    /// the indicator convention for exact values and intervals. This is the
    /// direct (unfactorized) reading of the observation semantics — the
    /// reference the closed-form machinery is tested against.
    pub fn likelihood(&self, v: &Value) -> f64 {
        match (self, v) {
            (Observation::Missing, _) => 1.0,
            (Observation::Exact(Value::Continuous(a)), Value::Continuous(x)) => {
                if x == a {
                    1.0
                } else {
                    0.0
                }
            }
            (Observation::Exact(Value::Symbolic(c)), Value::Symbolic(k)) => {
                if c == k {
                    1.0
                } else {
                    0.0
                }
            }
            (Observation::Gaussian { s, eps, bias }, Value::Continuous(x)) => {
                GeneralizedNormal { mu: s - bias, sigma: *eps }.pdf(*x)
            }
            (Observation::Interval { a, b }, Value::Continuous(x)) => {
                if *a <= *x && *x <= *b {
                    1.0
                } else {
                    0.0
                }
            }
            (Observation::SymbolicDist(p), Value::Symbolic(k)) => p.get(*k).copied().unwrap_or(0.0),
            (Observation::NormalMixture(parts), Value::Continuous(x)) => {
                parts.iter().map(|(w, gn)| w * gn.pdf(*x)).sum()
            }
            _ => 0.0,
        }
    }
}

/// One conjunction: a weighted joint reading with one observation per
/// attribute (in schema order).
#[derive(Debug, Clone, PartialEq)]
pub struct Conjunction {
    /// Relative strength of this reading. Positive; the disjunction's
    /// weights need not sum to one.
    pub weight: f64,
    /// One observation per schema attribute.
    pub observations: Vec<Observation>,
}

/// Evidence: a weighted disjunction of conjunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub conjunctions: Vec<Conjunction>,
}

impl Evidence {
    /// Builds single-conjunction evidence from `(attribute, observation)`
    /// pairs; unmentioned attributes are `Missing`.
    pub fn single(schema: &AttributeSchema, obs: &[(usize, Observation)]) -> Result<Self> {
        let mut observations = vec![Observation::Missing; schema.len()];
        for (j, o) in obs {
            if *j >= schema.len() {
                return Err(Error::ValueMismatch(format!("attribute index {j} out of range")));
            }
            if !observations[*j].is_missing() {
                return Err(Error::UnsupportedConjunction(format!(
                    "attribute `{}` observed twice; fuse observations first",
                    schema.attr(*j).name
                )));
            }
            observations[*j] = o.clone();
        }
        let ev = Evidence { conjunctions: vec![Conjunction { weight: 1.0, observations }] };
        ev.validate(schema)?;
        Ok(ev)
    }

    /// Validates shape, weights and every observation against the schema.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.conjunctions.is_empty() {
            return Err(Error::ZeroEvidence("evidence has no conjunctions".into()));
        }
        for conj in &self.conjunctions {
            if conj.weight <= 0.0 || !conj.weight.is_finite() {
                return Err(Error::ZeroEvidence(format!(
                    "conjunction weight {} is not positive and finite",
                    conj.weight
                )));
            }
            if conj.observations.len() != schema.len() {
                return Err(Error::ValueMismatch(format!(
                    "conjunction has {} observations for {} attributes",
                    conj.observations.len(),
                    schema.len()
                )));
            }
            for (j, o) in conj.observations.iter().enumerate() {
                o.validate(schema, j)?;
            }
        }
        Ok(())
    }

    /// Rescales the weights to sum to one. Evidence weights are relative
    /// strengths — inference never requires this — but normalized weights
    /// read naturally as branch probabilities.
    pub fn normalize_weights(&self) -> Result<Evidence> {
        let total: f64 = self.conjunctions.iter().map(|c| c.weight).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroWeights);
        }
        Ok(Evidence {
            conjunctions: self
                .conjunctions
                .iter()
                .map(|c| Conjunction { weight: c.weight / total, observations: c.observations.clone() })
                .collect(),
        })
    }

    /// Rewrites every `NormalMixture` observation into plain conjunctions:
    /// a mixture likelihood on one attribute is exactly a disjunction over
    /// its parts, so each conjunction splits into the cartesian product of
    /// its mixtures' parts, weights multiplying along the way. The result
    /// contains only `Exact`, `Gaussian`, `Missing`, `Interval` and
    /// `SymbolicDist` observations and has identical likelihood semantics.
    pub fn lower_mixtures(&self) -> Evidence {
        let mut out = Vec::new();
        for conj in &self.conjunctions {
            // (weight, partially rewritten observation vector) work list.
            let mut partial: Vec<(f64, Vec<Observation>)> =
                vec![(conj.weight, Vec::with_capacity(conj.observations.len()))];
            for o in &conj.observations {
                match o {
                    Observation::NormalMixture(parts) => {
                        let mut next = Vec::with_capacity(partial.len() * parts.len());
                        for (w, prefix) in &partial {
                            for (pw, gn) in parts {
                                let mut obs = prefix.clone();
                                obs.push(if gn.is_impulse() {
                                    Observation::Exact(Value::Continuous(gn.mu))
                                } else {
                                    Observation::Gaussian { s: gn.mu, eps: gn.sigma, bias: 0.0 }
                                });
                                next.push((w * pw, obs));
                            }
                        }
                        partial = next;
                    }
                    _ => {
                        for (_, prefix) in &mut partial {
                            prefix.push(o.clone());
                        }
                    }
                }
            }
            for (w, observations) in partial {
                out.push(Conjunction { weight: w, observations });
            }
        }
        Evidence { conjunctions: out }
    }

    /// Attributes carrying at least one informative (non-`Missing`)
    /// observation.
    pub fn observed_attributes(&self) -> Vec<usize> {
        let n = self.conjunctions.first().map_or(0, |c| c.observations.len());
        (0..n)
            .filter(|&j| self.conjunctions.iter().any(|c| !c.observations[j].is_missing()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Expression AST
// ---------------------------------------------------------------------------

/// A composed (not yet expanded) evidence expression.
#[derive(Debug, Clone, PartialEq)]
pub enum EvidenceExpr {
    /// One elementary observation of one attribute.
    Leaf { attr: usize, obs: Observation },
    /// Conjunction of sub-expressions.
    And(Vec<EvidenceExpr>),
    /// Weighted disjunction of sub-expressions.
    Or(Vec<(f64, EvidenceExpr)>),
}

impl EvidenceExpr {
    /// Attributes mentioned by a non-`Missing` observation anywhere in the
    /// expression.
    pub fn observed_attributes(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        fn walk(e: &EvidenceExpr, seen: &mut Vec<usize>) {
            match e {
                EvidenceExpr::Leaf { attr, obs } => {
                    if !obs.is_missing() && !seen.contains(attr) {
                        seen.push(*attr);
                    }
                }
                EvidenceExpr::And(children) => children.iter().for_each(|c| walk(c, seen)),
                EvidenceExpr::Or(branches) => branches.iter().for_each(|(_, c)| walk(c, seen)),
            }
        }
        walk(self, &mut seen);
        seen.sort_unstable();
        seen
    }

    /// Renders the expression in query syntax; `parse_query` of the result
    /// reproduces the expression exactly.
    pub fn print(&self, schema: &AttributeSchema) -> String {
        // Binding strength: Or < And < Leaf. A child at most as tightly
        // bound as its parent is parenthesized, which both preserves
        // semantics and round-trips deliberately nested shapes.
        fn level(e: &EvidenceExpr) -> u8 {
            match e {
                EvidenceExpr::Or(_) => 0,
                EvidenceExpr::And(_) => 1,
                EvidenceExpr::Leaf { .. } => 2,
            }
        }
        fn go(e: &EvidenceExpr, schema: &AttributeSchema, out: &mut String) {
            match e {
                EvidenceExpr::Leaf { attr, obs } => {
                    let name = &schema.attr(*attr).name;
                    match obs {
                        Observation::Exact(Value::Continuous(v)) => {
                            let _ = write!(out, "{name} = {v}");
                        }
                        Observation::Exact(Value::Symbolic(c)) => {
                            let label = match &schema.attr(*attr).kind {
                                AttributeKind::Symbolic(labels) => &labels[*c],
                                AttributeKind::Continuous => unreachable!("validated leaf"),
                            };
                            let _ = write!(out, "{name} = {label}");
                        }
                        Observation::Missing => {
                            let _ = write!(out, "{name} = ?");
                        }
                        Observation::Gaussian { s, eps, bias } => {
                            let _ = write!(out, "{name} ~ {s} +- {}", 2.0 * eps);
                            if *bias != 0.0 {
                                let _ = write!(out, " bias {bias}");
                            }
                        }
                        Observation::Interval { a, b } => {
                            let _ = write!(out, "{name} in [{a}, {b}]");
                        }
                        Observation::SymbolicDist(p) => {
                            let labels = match &schema.attr(*attr).kind {
                                AttributeKind::Symbolic(labels) => labels,
                                AttributeKind::Continuous => unreachable!("validated leaf"),
                            };
                            let _ = write!(out, "{name} = {{");
                            let mut first = true;
                            for (k, v) in p.iter().enumerate() {
                                if *v != 0.0 {
                                    if !first {
                                        out.push_str(", ");
                                    }
                                    let _ = write!(out, "{}: {v}", labels[k]);
                                    first = false;
                                }
                            }
                            out.push('}');
                        }
                        Observation::NormalMixture(_) => {
                            unreachable!("mixtures have no query syntax; lower them first")
                        }
                    }
                }
                EvidenceExpr::And(children) => {
                    let mut first = true;
                    for c in children {
                        if !first {
                            out.push_str(" AND ");
                        }
                        wrap(c, level(e), schema, out);
                        first = false;
                    }
                }
                EvidenceExpr::Or(branches) => {
                    let mut first = true;
                    for (w, c) in branches {
                        if !first {
                            out.push_str(" OR ");
                        }
                        let _ = write!(out, "w:{w} ");
                        wrap(c, level(e), schema, out);
                        first = false;
                    }
                }
            }
        }
        fn wrap(child: &EvidenceExpr, parent_level: u8, schema: &AttributeSchema, out: &mut String) {
            if level(child) <= parent_level {
                out.push('(');
                go(child, schema, out);
                out.push(')');
            } else {
                go(child, schema, out);
            }
        }
        let mut out = String::new();
        go(self, schema, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    /// Identifier or keyword (attribute name, category label, OR, AND, …).
    Ident(String),
    /// Numeric literal (value plus original spelling for category lookup).
    Num(f64, String),
    /// `+-`
    PlusMinus,
    /// Single-char punctuation: `= ~ ( ) { } [ ] , : ?`
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    // A '-' can only start a number where a value is expected, i.e. not
    // right after a number or identifier (the grammar never subtracts).
    let mut prev_is_value = false;

    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let bump = |chars: &mut std::iter::Peekable<std::str::Chars>,
                        line: &mut usize,
                        col: &mut usize|
         -> Option<char> {
            let c = chars.next()?;
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            Some(c)
        };

        if c.is_whitespace() {
            bump(&mut chars, &mut line, &mut col);
            continue;
        }
        if c == '+' {
            bump(&mut chars, &mut line, &mut col);
            if chars.peek() == Some(&'-') {
                bump(&mut chars, &mut line, &mut col);
                toks.push(Token { tok: Tok::PlusMinus, line: tline, col: tcol });
                prev_is_value = false;
                continue;
            }
            return Err(Error::QuerySyntax {
                line: tline,
                col: tcol,
                msg: "stray `+` (did you mean `+-`?)".into(),
            });
        }
        let starts_number = c.is_ascii_digit()
            || c == '.'
            || (c == '-' && !prev_is_value);
        if starts_number {
            let mut s = String::new();
            if c == '-' {
                s.push(c);
                bump(&mut chars, &mut line, &mut col);
            }
            let mut saw_digit = false;
            let mut saw_dot = false;
            while let Some(&d) = chars.peek() {
                if d.is_ascii_digit() {
                    saw_digit = true;
                } else if d == '.' && !saw_dot {
                    saw_dot = true;
                } else {
                    break;
                }
                s.push(d);
                bump(&mut chars, &mut line, &mut col);
            }
            // Optional exponent.
            if saw_digit && matches!(chars.peek(), Some('e') | Some('E')) {
                let mut lookahead = chars.clone();
                lookahead.next();
                let sign = matches!(lookahead.peek(), Some('+') | Some('-'));
                if sign {
                    lookahead.next();
                }
                if matches!(lookahead.peek(), Some(d) if d.is_ascii_digit()) {
                    s.push(bump(&mut chars, &mut line, &mut col).unwrap());
                    if sign {
                        s.push(bump(&mut chars, &mut line, &mut col).unwrap());
                    }
                    while matches!(chars.peek(), Some(d) if d.is_ascii_digit()) {
                        s.push(bump(&mut chars, &mut line, &mut col).unwrap());
                    }
                }
            }
            if !saw_digit {
                return Err(Error::QuerySyntax {
                    line: tline,
                    col: tcol,
                    msg: format!("malformed number `{s}`"),
                });
            }
            let v: f64 = s.parse().map_err(|_| Error::QuerySyntax {
                line: tline,
                col: tcol,
                msg: format!("malformed number `{s}`"),
            })?;
            toks.push(Token { tok: Tok::Num(v, s), line: tline, col: tcol });
            prev_is_value = true;
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            let mut s = String::new();
            while matches!(chars.peek(), Some(&d) if d.is_alphanumeric() || d == '_' || d == '.') {
                s.push(bump(&mut chars, &mut line, &mut col).unwrap());
            }
            // After a keyword a number (possibly negative) may follow, e.g.
            // `bias -0.5`; after a name or label it never does.
            prev_is_value = !["or", "and", "in", "bias", "w"]
                .iter()
                .any(|kw| s.eq_ignore_ascii_case(kw));
            toks.push(Token { tok: Tok::Ident(s), line: tline, col: tcol });
            continue;
        }
        if "=~(){}[],:?".contains(c) {
            bump(&mut chars, &mut line, &mut col);
            toks.push(Token { tok: Tok::Punct(c), line: tline, col: tcol });
            prev_is_value = c == ')' || c == '}' || c == ']' || c == '?';
            continue;
        }
        return Err(Error::QuerySyntax {
            line: tline,
            col: tcol,
            msg: format!("unexpected character `{c}`"),
        });
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    schema: &'a AttributeSchema,
    end_line: usize,
    end_col: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or((self.end_line, self.end_col), |t| (t.line, t.col))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.here();
        Err(Error::QuerySyntax { line, col, msg: msg.into() })
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_punct(&mut self, c: char, what: &str) -> Result<()> {
        match self.next() {
            Some(Token { tok: Tok::Punct(p), .. }) if p == c => Ok(()),
            Some(t) => Err(Error::QuerySyntax {
                line: t.line,
                col: t.col,
                msg: format!("expected `{c}` {what}"),
            }),
            None => self.err(format!("expected `{c}` {what}")),
        }
    }

    fn expect_number(&mut self, what: &str) -> Result<f64> {
        match self.next() {
            Some(Token { tok: Tok::Num(v, _), .. }) => Ok(v),
            Some(t) => Err(Error::QuerySyntax {
                line: t.line,
                col: t.col,
                msg: format!("expected a number {what}"),
            }),
            None => self.err(format!("expected a number {what}")),
        }
    }

    /// expr := or
    fn expr(&mut self) -> Result<EvidenceExpr> {
        self.or()
    }

    /// or := branch (OR branch)*
    fn or(&mut self) -> Result<EvidenceExpr> {
        let first = self.branch()?;
        let mut branches = vec![first];
        while self.is_keyword("or") {
            self.next();
            branches.push(self.branch()?);
        }
        if branches.len() == 1 {
            let (w, e) = branches.pop().unwrap();
            // A lone branch without an explicit weight stays the bare
            // expression; an explicit weight forces a one-branch
            // disjunction so that the weight survives expansion.
            if w == 1.0 {
                return Ok(e);
            }
            return Ok(EvidenceExpr::Or(vec![(w, e)]));
        }
        Ok(EvidenceExpr::Or(branches))
    }

    /// branch := ["w:" NUM] and
    fn branch(&mut self) -> Result<(f64, EvidenceExpr)> {
        let mut weight = 1.0;
        if self.is_keyword("w")
            && matches!(self.toks.get(self.pos + 1), Some(Token { tok: Tok::Punct(':'), .. }))
        {
            self.next();
            self.next();
            weight = self.expect_number("after `w:`")?;
            if weight <= 0.0 || !weight.is_finite() {
                return self.err(format!("branch weight {weight} must be positive"));
            }
        }
        Ok((weight, self.and()?))
    }

    /// and := atom (AND atom)*
    fn and(&mut self) -> Result<EvidenceExpr> {
        let first = self.atom()?;
        let mut children = vec![first];
        while self.is_keyword("and") {
            self.next();
            children.push(self.atom()?);
        }
        if children.len() == 1 {
            return Ok(children.pop().unwrap());
        }
        Ok(EvidenceExpr::And(children))
    }

    /// atom := "(" expr ")" | obs
    fn atom(&mut self) -> Result<EvidenceExpr> {
        if matches!(self.peek(), Some(Token { tok: Tok::Punct('('), .. })) {
            self.next();
            let e = self.expr()?;
            self.expect_punct(')', "to close the group")?;
            return Ok(e);
        }
        self.obs()
    }

    /// obs := NAME followed by one of the observation forms.
    fn obs(&mut self) -> Result<EvidenceExpr> {
        let (name, nline, ncol) = match self.next() {
            Some(Token { tok: Tok::Ident(s), line, col }) => (s, line, col),
            Some(t) => {
                return Err(Error::QuerySyntax {
                    line: t.line,
                    col: t.col,
                    msg: "expected an attribute name".into(),
                })
            }
            None => return self.err("expected an attribute name"),
        };
        let attr = self.schema.index_of(&name).map_err(|_| Error::QuerySyntax {
            line: nline,
            col: ncol,
            msg: format!("unknown attribute `{name}`"),
        })?;
        let symbolic = self.schema.attr(attr).is_symbolic();

        match self.next() {
            Some(Token { tok: Tok::Punct('='), .. }) => {
                // Exact value, `?`, or category distribution.
                match self.peek().cloned() {
                    Some(Token { tok: Tok::Punct('?'), .. }) => {
                        self.next();
                        Ok(EvidenceExpr::Leaf { attr, obs: Observation::Missing })
                    }
                    Some(Token { tok: Tok::Punct('{'), line, col }) => {
                        if !symbolic {
                            return Err(Error::QuerySyntax {
                                line,
                                col,
                                msg: format!(
                                    "attribute `{name}` is continuous; category distributions apply to symbolic attributes"
                                ),
                            });
                        }
                        self.next();
                        let mut p = vec![0.0; self.schema.category_count(attr)];
                        loop {
                            let (label, lline, lcol) = match self.next() {
                                Some(Token { tok: Tok::Ident(s), line, col }) => (s, line, col),
                                Some(Token { tok: Tok::Num(_, s), line, col }) => (s, line, col),
                                _ => return self.err("expected a category label"),
                            };
                            let k = self.schema.category_index(attr, &label).map_err(|_| {
                                Error::QuerySyntax {
                                    line: lline,
                                    col: lcol,
                                    msg: format!("unknown category `{label}` for `{name}`"),
                                }
                            })?;
                            self.expect_punct(':', "after the category label")?;
                            p[k] = self.expect_number("as the category likelihood")?;
                            match self.next() {
                                Some(Token { tok: Tok::Punct(','), .. }) => continue,
                                Some(Token { tok: Tok::Punct('}'), .. }) => break,
                                _ => return self.err("expected `,` or `}` in the distribution"),
                            }
                        }
                        let obs = Observation::SymbolicDist(p);
                        obs.validate(self.schema, attr).map_err(|e| Error::QuerySyntax {
                            line,
                            col,
                            msg: e.to_string(),
                        })?;
                        Ok(EvidenceExpr::Leaf { attr, obs })
                    }
                    Some(Token { tok: Tok::Num(v, raw), line, col }) => {
                        self.next();
                        if symbolic {
                            // Numeric-looking category labels are legal.
                            let k = self.schema.category_index(attr, &raw).map_err(|_| {
                                Error::QuerySyntax {
                                    line,
                                    col,
                                    msg: format!("unknown category `{raw}` for `{name}`"),
                                }
                            })?;
                            Ok(EvidenceExpr::Leaf {
                                attr,
                                obs: Observation::Exact(Value::Symbolic(k)),
                            })
                        } else {
                            Ok(EvidenceExpr::Leaf {
                                attr,
                                obs: Observation::Exact(Value::Continuous(v)),
                            })
                        }
                    }
                    Some(Token { tok: Tok::Ident(label), line, col }) => {
                        self.next();
                        if !symbolic {
                            return Err(Error::QuerySyntax {
                                line,
                                col,
                                msg: format!(
                                    "attribute `{name}` is continuous; `{label}` is not a number"
                                ),
                            });
                        }
                        let k = self.schema.category_index(attr, &label).map_err(|_| {
                            Error::QuerySyntax {
                                line,
                                col,
                                msg: format!("unknown category `{label}` for `{name}`"),
                            }
                        })?;
                        Ok(EvidenceExpr::Leaf { attr, obs: Observation::Exact(Value::Symbolic(k)) })
                    }
                    _ => self.err("expected a value after `=`"),
                }
            }
            Some(Token { tok: Tok::Punct('~'), line, col }) => {
                if symbolic {
                    return Err(Error::QuerySyntax {
                        line,
                        col,
                        msg: format!(
                            "attribute `{name}` is symbolic; `~` readings apply to continuous attributes"
                        ),
                    });
                }
                let s = self.expect_number("as the reading")?;
                match self.next() {
                    Some(Token { tok: Tok::PlusMinus, .. }) => {}
                    _ => return self.err("expected `+-` after the reading"),
                }
                let e = self.expect_number("as the reading tolerance")?;
                if e < 0.0 {
                    return self.err(format!("reading tolerance {e} must be non-negative"));
                }
                let mut bias = 0.0;
                if self.is_keyword("bias") {
                    self.next();
                    bias = self.expect_number("after `bias`")?;
                }
                // `s +- e` spans two dispersions either side.
                let eps = e / 2.0;
                let obs = if eps == 0.0 {
                    Observation::Exact(Value::Continuous(s - bias))
                } else {
                    Observation::Gaussian { s, eps, bias }
                };
                Ok(EvidenceExpr::Leaf { attr, obs })
            }
            Some(Token { tok: Tok::Ident(kw), line, col }) if kw.eq_ignore_ascii_case("in") => {
                if symbolic {
                    return Err(Error::QuerySyntax {
                        line,
                        col,
                        msg: format!(
                            "attribute `{name}` is symbolic; intervals apply to continuous attributes"
                        ),
                    });
                }
                self.expect_punct('[', "to open the interval")?;
                let a = self.expect_number("as the lower bound")?;
                self.expect_punct(',', "between the bounds")?;
                let b = self.expect_number("as the upper bound")?;
                self.expect_punct(']', "to close the interval")?;
                if a > b {
                    return Err(Error::InvalidInterval { a, b });
                }
                Ok(EvidenceExpr::Leaf { attr, obs: Observation::Interval { a, b } })
            }
            Some(t) => Err(Error::QuerySyntax {
                line: t.line,
                col: t.col,
                msg: format!("expected `=`, `~` or `in` after `{name}`"),
            }),
            None => self.err(format!("expected `=`, `~` or `in` after `{name}`")),
        }
    }
}

/// Parses query text against a schema into an evidence expression.
pub fn parse_query(text: &str, schema: &AttributeSchema) -> Result<EvidenceExpr> {
    let toks = tokenize(text)?;
    let end_line = text.lines().count().max(1);
    let end_col = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    let mut p = Parser { toks, pos: 0, schema, end_line, end_col };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(Error::QuerySyntax {
            line: t.line,
            col: t.col,
            msg: "trailing input after the expression".into(),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

/// Fuses two observations of the same attribute into one, returning the
/// fused observation and a multiplicative weight factor. A zero factor
/// marks an impossible combination (e.g. two different exact values); the
/// path is then dropped.
fn fuse(
    schema: &AttributeSchema,
    j: usize,
    a: &Observation,
    b: &Observation,
) -> Result<(Observation, f64)> {
    use Observation::*;
    let name = || schema.attr(j).name.clone();

    // Missing is the neutral element.
    if a.is_missing() {
        return Ok((b.clone(), 1.0));
    }
    if b.is_missing() {
        return Ok((a.clone(), 1.0));
    }

    // Interval and mixture likelihoods do not stay in the family under
    // pointwise products with other observations.
    if matches!(a, Interval { .. }) || matches!(b, Interval { .. }) {
        return Err(Error::UnsupportedConjunction(format!(
            "attribute `{}`: an interval cannot be combined with another observation of the same attribute",
            name()
        )));
    }
    if matches!(a, NormalMixture(_)) || matches!(b, NormalMixture(_)) {
        return Err(Error::UnsupportedConjunction(format!(
            "attribute `{}`: a likelihood mixture cannot be combined with another observation of the same attribute",
            name()
        )));
    }

    let as_gn = |o: &Observation| -> Option<GeneralizedNormal> {
        match o {
            Exact(Value::Continuous(v)) => Some(GeneralizedNormal::impulse(*v)),
            Gaussian { s, eps, bias } => {
                Some(GeneralizedNormal { mu: s - bias, sigma: *eps })
            }
            _ => None,
        }
    };

    match (as_gn(a), as_gn(b)) {
        // Continuous x continuous: the product rule, with the scale
        // becoming part of the path weight.
        (Some(ga), Some(gb)) => {
            let (gn, scale) = ga.product(&gb);
            let obs = if gn.is_impulse() {
                Exact(Value::Continuous(gn.mu))
            } else {
                Gaussian { s: gn.mu, eps: gn.sigma, bias: 0.0 }
            };
            Ok((obs, scale))
        }
        _ => {
            // Symbolic cases.
            let as_dist = |o: &Observation| -> Option<Vec<f64>> {
                match o {
                    Exact(Value::Symbolic(c)) => {
                        let mut p = vec![0.0; schema.category_count(j)];
                        p[*c] = 1.0;
                        Some(p)
                    }
                    SymbolicDist(p) => Some(p.clone()),
                    _ => None,
                }
            };
            match (as_dist(a), as_dist(b)) {
                (Some(pa), Some(pb)) => {
                    let prod: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
                    let tau: f64 = prod.iter().sum();
                    if tau == 0.0 {
                        return Ok((Missing, 0.0));
                    }
                    // An exact factor sifts the other distribution.
                    if let Exact(v) = a {
                        return Ok((Exact(*v), tau));
                    }
                    if let Exact(v) = b {
                        return Ok((Exact(*v), tau));
                    }
                    let obs = SymbolicDist(prod.iter().map(|p| p / tau).collect());
                    Ok((obs, tau))
                }
                _ => Err(Error::UnsupportedConjunction(format!(
                    "attribute `{}`: observations of different kinds cannot be combined",
                    name()
                ))),
            }
        }
    }
}

/// Expands a composed expression into flat disjunctive evidence.
///
/// `AND` distributes over `OR` (earlier conjuncts vary slowest in the
/// resulting enumeration), branch weights multiply along each path, and
/// same-attribute observations are fused via [`fuse`]. Paths whose fusion
/// is impossible (weight zero) are dropped; if every path drops, the
/// expression is self-contradictory and an error is returned.
pub fn expand(expr: &EvidenceExpr, schema: &AttributeSchema) -> Result<Evidence> {
    type Path = (f64, Vec<Observation>);

    fn paths(e: &EvidenceExpr, schema: &AttributeSchema) -> Result<Vec<Path>> {
        match e {
            EvidenceExpr::Leaf { attr, obs } => {
                obs.validate(schema, *attr)?;
                let mut observations = vec![Observation::Missing; schema.len()];
                observations[*attr] = obs.clone();
                Ok(vec![(1.0, observations)])
            }
            EvidenceExpr::And(children) => {
                let mut acc: Vec<Path> = vec![(1.0, vec![Observation::Missing; schema.len()])];
                for child in children {
                    let rhs = paths(child, schema)?;
                    let mut next = Vec::with_capacity(acc.len() * rhs.len());
                    for (wa, oa) in &acc {
                        for (wb, ob) in &rhs {
                            let mut w = wa * wb;
                            let mut obs = Vec::with_capacity(schema.len());
                            for j in 0..schema.len() {
                                let (fused, factor) = fuse(schema, j, &oa[j], &ob[j])?;
                                w *= factor;
                                obs.push(fused);
                            }
                            if w > 0.0 {
                                next.push((w, obs));
                            }
                        }
                    }
                    acc = next;
                }
                Ok(acc)
            }
            EvidenceExpr::Or(branches) => {
                let mut acc = Vec::new();
                for (w, child) in branches {
                    for (pw, obs) in paths(child, schema)? {
                        let w = w * pw;
                        if w > 0.0 {
                            acc.push((w, obs));
                        }
                    }
                }
                Ok(acc)
            }
        }
    }

    let flat = paths(expr, schema)?;
    if flat.is_empty() {
        return Err(Error::ZeroEvidence(
            "the expression is self-contradictory: every disjunction branch vanished".into(),
        ));
    }
    let ev = Evidence {
        conjunctions: flat
            .into_iter()
            .map(|(weight, observations)| Conjunction { weight, observations })
            .collect(),
    };
    ev.validate(schema)?;
    Ok(ev)
}
