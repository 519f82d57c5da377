//! Fixtures and independent oracles shared by the integration suites.
#![allow(dead_code)]

use mfgn::evidence::{Conjunction, Evidence, Observation};
use mfgn::gn::GeneralizedNormal;
use mfgn::model::{
    Attribute, AttributeSchema, Component, Marginal, MfgnModel, Value,
};

/// Six-component Iris joint density (the committed reference model).
pub const IRIS_MODEL_TEXT: &str = include_str!("../../../../data/iris-6c.model");

/// The 150-example Iris dataset and its schema sidecar.
pub const IRIS_DATA: &str = include_str!("../../../../data/iris.csv");
pub const IRIS_SCHEMA: &str = include_str!("../../../../data/iris.schema");

pub fn iris_model() -> MfgnModel {
    MfgnModel::load(IRIS_MODEL_TEXT).expect("committed model parses")
}

/// Seven-component reference density over (x, y, color): two continuous
/// attributes plus a binary symbolic one, weights summing to one exactly.
pub fn table1_model() -> MfgnModel {
    let schema = AttributeSchema::new(vec![
        Attribute::continuous("x"),
        Attribute::continuous("y"),
        Attribute::symbolic("color", &["white", "black"]),
    ])
    .expect("valid schema");
    let rows: [(f64, f64, f64, f64, f64, f64, f64); 7] = [
        (0.14, -0.40, 0.24, -0.27, 0.20, 0.0, 1.0),
        (0.09, -0.76, 0.19, -0.68, 0.18, 0.0, 1.0),
        (0.20, 0.55, 0.23, 0.66, 0.24, 0.0, 1.0),
        (0.17, -0.71, 0.27, 0.76, 0.22, 1.0, 0.0),
        (0.13, 0.21, 0.17, -0.14, 0.19, 0.74, 0.26),
        (0.18, -0.14, 0.18, 0.26, 0.17, 0.55, 0.45),
        (0.09, 0.65, 0.16, -0.64, 0.19, 1.0, 0.0),
    ];
    let components = rows
        .iter()
        .map(|&(p, mx, sx, my, sy, tw, tb)| Component {
            weight: p,
            marginals: vec![
                Marginal::Continuous(GeneralizedNormal { mu: mx, sigma: sx }),
                Marginal::Continuous(GeneralizedNormal { mu: my, sigma: sy }),
                Marginal::Symbolic(vec![tw, tb]),
            ],
        })
        .collect();
    MfgnModel::new(schema, components).expect("valid model")
}

/// The two-component synthetic generator used in the degradation studies:
/// `.5 N(x,0,2) N(y,0,1) {white}  +  .5 N(x,2,1) N(y,2,2) {black}`.
pub fn synthetic_generator() -> MfgnModel {
    let schema = AttributeSchema::new(vec![
        Attribute::continuous("x"),
        Attribute::continuous("y"),
        Attribute::symbolic("w", &["white", "black"]),
    ])
    .expect("valid schema");
    MfgnModel::new(
        schema,
        vec![
            Component {
                weight: 0.5,
                marginals: vec![
                    Marginal::Continuous(GeneralizedNormal { mu: 0.0, sigma: 2.0 }),
                    Marginal::Continuous(GeneralizedNormal { mu: 0.0, sigma: 1.0 }),
                    Marginal::Symbolic(vec![1.0, 0.0]),
                ],
            },
            Component {
                weight: 0.5,
                marginals: vec![
                    Marginal::Continuous(GeneralizedNormal { mu: 2.0, sigma: 1.0 }),
                    Marginal::Continuous(GeneralizedNormal { mu: 2.0, sigma: 2.0 }),
                    Marginal::Symbolic(vec![0.0, 1.0]),
                ],
            },
        ],
    )
    .expect("valid model")
}

/// The 11 tabulated generator parameters, in report order:
/// `P1, mu1x, mu1y, sg1x, sg1y, t1_white, mu2x, mu2y, sg2x, sg2y, t2_black`.
pub const GENERATOR_TRUTH: [f64; 11] =
    [0.5, 0.0, 0.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 1.0];

/// Extracts the same 11 parameters from a fitted 2-component model of the
/// synthetic domain, trying both component orders and keeping the one with
/// the smaller total absolute error against [`GENERATOR_TRUTH`].
pub fn generator_params(model: &MfgnModel) -> [f64; 11] {
    assert_eq!(model.component_count(), 2, "the protocol fits l = 2");
    let get = |i: usize| -> (f64, f64, f64, f64, f64, f64, f64) {
        let c = &model.components()[i];
        let (Marginal::Continuous(gx), Marginal::Continuous(gy), Marginal::Symbolic(t)) =
            (&c.marginals[0], &c.marginals[1], &c.marginals[2])
        else {
            panic!("synthetic schema is (continuous, continuous, symbolic)")
        };
        (c.weight, gx.mu, gy.mu, gx.sigma, gy.sigma, t[0], t[1])
    };
    let assemble = |a: usize, b: usize| -> [f64; 11] {
        let (p, m1x, m1y, s1x, s1y, t1w, _) = get(a);
        let (_, m2x, m2y, s2x, s2y, _, t2b) = get(b);
        [p, m1x, m1y, s1x, s1y, t1w, m2x, m2y, s2x, s2y, t2b]
    };
    let err = |params: &[f64; 11]| -> f64 {
        params.iter().zip(&GENERATOR_TRUTH).map(|(a, b)| (a - b).abs()).sum()
    };
    let fwd = assemble(0, 1);
    let rev = assemble(1, 0);
    if err(&fwd) <= err(&rev) {
        fwd
    } else {
        rev
    }
}

/// Single-conjunction evidence from sparse (attribute, observation) pairs.
pub fn observe(schema: &AttributeSchema, obs: &[(usize, Observation)]) -> Evidence {
    Evidence::single(schema, obs).expect("valid evidence")
}

/// A reading `s +- e` (dispersion `e / 2`), the query-language convention.
pub fn around(s: f64, e: f64) -> Observation {
    Observation::around(s, e / 2.0)
}

/// Two-conjunction evidence, each pairing one uncertain reading with a
/// shared category likelihood — the structured-query fixture.
pub fn two_branch_evidence(
    schema: &AttributeSchema,
    attr: usize,
    readings: [Observation; 2],
    sym_attr: usize,
    sym: Vec<f64>,
) -> Evidence {
    let [r0, r1] = readings;
    let base = vec![Observation::Missing; schema.len()];
    let mut c0 = base.clone();
    c0[attr] = r0;
    c0[sym_attr] = Observation::SymbolicDist(sym.clone());
    let mut c1 = base;
    c1[attr] = r1;
    c1[sym_attr] = Observation::SymbolicDist(sym);
    Evidence {
        conjunctions: vec![
            Conjunction { weight: 0.5, observations: c0 },
            Conjunction { weight: 0.5, observations: c1 },
        ],
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 48)
}

/// Quadrature over `[a, b]` split at interior breakpoints (integrand kinks
/// or jumps, e.g. truncation bounds), so the adaptive rule never straddles
/// a discontinuity.
pub fn integrate_split(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(|p, q| p.partial_cmp(q).expect("finite breakpoints"));
    cuts.dedup();
    let mut points = vec![a];
    points.extend(cuts);
    points.push(b);
    let n = (points.len() - 1) as f64;
    points
        .windows(2)
        .map(|w| integrate(f, w[0], w[1], tol / n))
        .sum()
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Relative difference `|a - b| / max(1, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Deterministically shuffles `0..n` (Fisher–Yates over a seeded stream).
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Renders value rows as dataset text (header `x,y,...` in schema order).
pub fn rows_to_csv(schema: &AttributeSchema, rows: &[Vec<Value>]) -> String {
    mfgn::dataset::Dataset::from_values(schema, rows)
        .expect("rows match the schema")
        .emit()
}

/// A random mixture over `n_cont` continuous and `n_sym` symbolic
/// attributes with `l` components. All dispersions are strictly positive
/// and all category probabilities strictly positive, so every observation
/// kind has positive likelihood under the model.
pub fn random_model<R: rand::Rng>(
    rng: &mut R,
    n_cont: usize,
    n_sym: usize,
    l: usize,
) -> MfgnModel {
    const LABELS: [&str; 4] = ["red", "green", "blue", "amber"];
    let mut attrs = Vec::new();
    for c in 0..n_cont {
        attrs.push(Attribute::continuous(&format!("x{c}")));
    }
    for s in 0..n_sym {
        let k = rng.gen_range(2..=LABELS.len());
        attrs.push(Attribute::symbolic(&format!("u{s}"), &LABELS[..k]));
    }
    let schema = AttributeSchema::new(attrs).expect("generated schema is valid");
    let mut weights: Vec<f64> = (0..l).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let components = weights
        .into_iter()
        .map(|weight| {
            let marginals = (0..schema.len())
                .map(|j| {
                    if schema.attr(j).is_symbolic() {
                        let k = schema.category_count(j);
                        let mut t: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                        let s: f64 = t.iter().sum();
                        t.iter_mut().for_each(|v| *v /= s);
                        Marginal::Symbolic(t)
                    } else {
                        Marginal::Continuous(GeneralizedNormal {
                            mu: rng.gen_range(-3.0..3.0),
                            sigma: rng.gen_range(0.2..2.0),
                        })
                    }
                })
                .collect();
            Component { weight, marginals }
        })
        .collect();
    MfgnModel::new(schema, components).expect("generated model is valid")
}

/// A random elementary observation valid for attribute `j` of `model` and
/// guaranteed positive likelihood under it.
pub fn random_observation<R: rand::Rng>(
    rng: &mut R,
    model: &MfgnModel,
    j: usize,
    allow_mixture: bool,
) -> Observation {
    let schema = model.schema();
    if schema.attr(j).is_symbolic() {
        let k = schema.category_count(j);
        match rng.gen_range(0u8..10) {
            0..=3 => Observation::Missing,
            4..=6 => Observation::Exact(Value::Symbolic(rng.gen_range(0..k))),
            _ => {
                let mut p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                Observation::SymbolicDist(p)
            }
        }
    } else {
        match rng.gen_range(0u8..20) {
            0..=6 => Observation::Missing,
            7..=9 => Observation::Exact(Value::Continuous(rng.gen_range(-4.0..4.0))),
            10..=14 => Observation::Gaussian {
                s: rng.gen_range(-4.0..4.0),
                eps: rng.gen_range(0.05..1.5),
                bias: if rng.gen_bool(0.25) { rng.gen_range(-1.0..1.0) } else { 0.0 },
            },
            15..=17 => {
                let c = rng.gen_range(-3.0..3.0);
                let w = rng.gen_range(0.1..4.0);
                match rng.gen_range(0u8..6) {
                    0 => Observation::Interval { a: f64::NEG_INFINITY, b: c },
                    1 => Observation::Interval { a: c, b: f64::INFINITY },
                    _ => Observation::Interval { a: c - w, b: c + w },
                }
            }
            _ if allow_mixture => {
                let parts = (0..rng.gen_range(2..=3usize))
                    .map(|_| {
                        (
                            rng.gen_range(0.2..1.0),
                            GeneralizedNormal {
                                mu: rng.gen_range(-4.0..4.0),
                                sigma: rng.gen_range(0.05..1.0),
                            },
                        )
                    })
                    .collect();
                Observation::NormalMixture(parts)
            }
            _ => Observation::Gaussian {
                s: rng.gen_range(-4.0..4.0),
                eps: rng.gen_range(0.05..1.5),
                bias: 0.0,
            },
        }
    }
}

/// Random evidence for `model`: 1–3 weighted conjunctions of random
/// observations, never identically missing.
pub fn random_evidence<R: rand::Rng>(
    rng: &mut R,
    model: &MfgnModel,
    allow_mixture: bool,
) -> Evidence {
    let schema = model.schema();
    loop {
        let conjunctions: Vec<Conjunction> = (0..rng.gen_range(1..=3usize))
            .map(|_| Conjunction {
                weight: rng.gen_range(0.1..2.0),
                observations: (0..schema.len())
                    .map(|j| random_observation(rng, model, j, allow_mixture))
                    .collect(),
            })
            .collect();
        let any_observed = conjunctions
            .iter()
            .any(|c| c.observations.iter().any(|o| !o.is_missing()));
        if any_observed {
            let ev = Evidence { conjunctions };
            ev.validate(schema).expect("generated evidence is valid");
            return ev;
        }
    }
}
