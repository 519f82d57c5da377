//! Batch front end: train mixture models on uncertain tables, answer
//! completion queries, score models on held-out data, and run the
//! degradation protocols used in the benchmark studies.
//!
//! Exit codes: 0 success, 2 data error (unreadable or malformed files,
//! unknown attributes, bad queries), 3 fit failure, 4 zero evidence,
//! 64 usage error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mfgn::dataset::{format_observation, load_schema, parse_cell, save_schema, CorruptionSpec, Dataset};
use mfgn::evidence::{expand, parse_query, Observation};
use mfgn::inference::{posterior, Estimate, Posterior};
use mfgn::learning::{em_fit, EmConfig};
use mfgn::model::{AttributeKind, AttributeSchema, MfgnModel, Value};
use mfgn::Error;

const EXIT_DATA: u8 = 2;
const EXIT_FIT: u8 = 3;
const EXIT_ZERO_EVIDENCE: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "mfgn",
    version,
    about = "Mixture-model pattern completion over tables with uncertain cells"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a mixture model to a dataset.
    Train(TrainArgs),
    /// Report posterior summaries of target attributes given a query.
    Infer(InferArgs),
    /// Infer every attribute the query leaves unobserved.
    Complete(CompleteArgs),
    /// Score a model on a test dataset.
    Eval(EvalArgs),
    /// Draw rows from a model into a dataset file.
    Sample(SampleArgs),
    /// Degrade a dataset according to a corruption spec.
    Corrupt(CorruptArgs),
    /// Print plottable per-row cell centers from a dataset.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar file.
    #[arg(long)]
    schema: PathBuf,
    /// Number of mixture components (at least 1).
    #[arg(long)]
    components: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration cap.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative log-likelihood convergence threshold (0 disables).
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Variance floor as a fraction of each attribute's squared range.
    #[arg(long, default_value_t = 1e-4)]
    var_floor: f64,
    /// Probability floor for symbolic tables.
    #[arg(long, default_value_t = 1e-6)]
    sym_floor: f64,
    /// Components whose weight falls below this are pruned while fitting.
    #[arg(long, default_value_t = 1e-3)]
    prune: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Query, e.g. "x = 5 AND u = {U2: .5, U3: .5}".
    #[arg(long)]
    query: String,
    /// Comma-separated target attributes (default: all unobserved ones).
    #[arg(long)]
    targets: Option<String>,
    /// Rejection threshold on the symbolic error probability, in [0, 1].
    #[arg(long)]
    reject: Option<f64>,
    /// Decimal places (default: 1 for continuous summaries, 2 for
    /// probabilities).
    #[arg(long)]
    precision: Option<usize>,
    /// Append a posterior density curve for ATTR over [LO, HI].
    #[arg(long, num_args = 4, value_names = ["ATTR", "LO", "HI", "STEPS"])]
    density: Option<Vec<String>>,
}

#[derive(Args)]
struct CompleteArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Query, e.g. "x = 5 AND w ~ 1 +- 0.5".
    #[arg(long)]
    query: String,
    /// Rejection threshold on the symbolic error probability, in [0, 1].
    #[arg(long)]
    reject: Option<f64>,
    /// Decimal places (default: 1 for continuous summaries, 2 for
    /// probabilities).
    #[arg(long)]
    precision: Option<usize>,
    /// Append a posterior density curve for ATTR over [LO, HI].
    #[arg(long, num_args = 4, value_names = ["ATTR", "LO", "HI", "STEPS"])]
    density: Option<Vec<String>>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Test dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar file.
    #[arg(long)]
    schema: PathBuf,
    /// Comma-separated targets to score by masking and re-inferring.
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Number of rows to draw (at least 1).
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the model's schema sidecar here.
    #[arg(long)]
    out_schema: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptArgs {
    /// Input dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar file.
    #[arg(long)]
    schema: PathBuf,
    /// Corruption spec file (noise / bias / flip / missing / censor lines).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output for the raw corrupted values.
    #[arg(long)]
    out_raw: Option<PathBuf>,
    /// Output for the likelihood-annotated cells.
    #[arg(long)]
    out_annotated: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar file.
    #[arg(long)]
    schema: PathBuf,
    /// Comma-separated attributes to print (default: all).
    #[arg(long)]
    attrs: Option<String>,
}

enum CliError {
    Usage(String),
    File(String, std::io::Error),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "{msg}"),
            Self::File(path, e) => write!(f, "{path}: {e}"),
            Self::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::File(..) => EXIT_DATA,
            Self::Lib(Error::FitFailure(_) | Error::DegenerateTable(_)) => EXIT_FIT,
            Self::Lib(Error::ZeroEvidence(_)) => EXIT_ZERO_EVIDENCE,
            Self::Lib(_) => EXIT_DATA,
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (`mfgn plot-data | head`),
    // like any other line-oriented unix tool.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Infer(a) => infer(a),
        Cmd::Complete(a) => infer(InferArgs {
            model: a.model,
            query: a.query,
            targets: None,
            reject: a.reject,
            precision: a.precision,
            density: a.density,
        }),
        Cmd::Eval(a) => eval(a),
        Cmd::Sample(a) => sample(a),
        Cmd::Corrupt(a) => corrupt(a),
        Cmd::PlotData(a) => plot_data(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::File(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::File(path.display().to_string(), e))
}

fn load_model(path: &Path) -> Result<MfgnModel, CliError> {
    Ok(MfgnModel::load(&read_text(path)?)?)
}

fn load_dataset(data: &Path, schema: &Path) -> Result<(AttributeSchema, Dataset), CliError> {
    let schema = load_schema(&read_text(schema)?)?;
    let dataset = Dataset::parse(&read_text(data)?, &schema)?;
    Ok((schema, dataset))
}

/// Resolves a comma-separated attribute list against a schema.
fn parse_attr_list(list: &str, schema: &AttributeSchema) -> Result<Vec<usize>, CliError> {
    let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(CliError::Usage("empty attribute list".into()));
    }
    Ok(names
        .into_iter()
        .map(|n| schema.index_of(n))
        .collect::<Result<Vec<_>, _>>()?)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    if a.components == 0 {
        return Err(CliError::Usage("--components must be at least 1".into()));
    }
    let (_, data) = load_dataset(&a.data, &a.schema)?;
    let table = data.to_table()?;
    let cfg = EmConfig {
        components: a.components,
        seed: a.seed,
        max_iters: a.max_iters,
        tol: a.tol,
        var_floor_factor: a.var_floor,
        sym_floor: a.sym_floor,
        prune_threshold: a.prune,
    };
    let (model, report) = em_fit(&table, &cfg)?;
    write_text(&a.out, &model.save())?;
    print!("{report}");
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), CliError> {
    if let Some(tau) = a.reject {
        if !(0.0..=1.0).contains(&tau) {
            return Err(CliError::Usage(format!("--reject {tau} is not in [0, 1]")));
        }
    }
    let model = load_model(&a.model)?;
    let schema = model.schema().clone();
    let expr = parse_query(&a.query, &schema)?;
    let evidence = expand(&expr, &schema)?;
    let targets = match &a.targets {
        Some(list) => parse_attr_list(list, &schema)?,
        None => {
            let observed = evidence.observed_attributes();
            let free: Vec<usize> = (0..schema.len()).filter(|j| !observed.contains(j)).collect();
            if free.is_empty() {
                return Err(CliError::Usage(
                    "the query observes every attribute; pass --targets explicitly".into(),
                ));
            }
            free
        }
    };
    let post = posterior(&model, &evidence, &targets)?;
    let cont_prec = a.precision.unwrap_or(1);
    let prob_prec = a.precision.unwrap_or(2);
    for &j in &targets {
        let name = &schema.attr(j).name;
        match post.estimate(j, a.reject)? {
            Estimate::Continuous { mean, std } => {
                let half = 2.0 * std;
                println!("{name}: {mean:.p$} \u{b1} {half:.p$}", p = cont_prec);
            }
            Estimate::Symbolic { q, ep, entropy, error_prob, rejected } => {
                let AttributeKind::Symbolic(labels) = &schema.attr(j).kind else {
                    unreachable!("symbolic estimate on a continuous attribute")
                };
                let mut line = format!("{name}:");
                let cutoff = 0.5 * 10f64.powi(-(prob_prec as i32));
                for (k, &p) in q.iter().enumerate() {
                    if p >= cutoff {
                        line += &format!(" {label}:{p:.d$}", label = labels[k], d = prob_prec);
                    }
                }
                line += &format!(
                    " ep={label} H={entropy:.d$} E={error_prob:.d$}",
                    label = labels[ep],
                    d = prob_prec
                );
                if rejected {
                    line += " REJECTED";
                }
                println!("{line}");
            }
        }
    }
    println!("log-evidence: {:.6}", post.log_evidence());
    if let Some(d) = &a.density {
        density_curve(&post, &schema, d, &targets)?;
    }
    Ok(())
}

/// Appends the `--density` curve: a header line, then `z pdf` pairs.
fn density_curve(
    post: &Posterior,
    schema: &AttributeSchema,
    spec: &[String],
    targets: &[usize],
) -> Result<(), CliError> {
    let usage = |msg: String| CliError::Usage(msg);
    let j = schema.index_of(&spec[0])?;
    if !targets.contains(&j) {
        return Err(usage(format!("--density attribute `{}` is not a target", spec[0])));
    }
    let lo: f64 = spec[1]
        .parse()
        .map_err(|_| usage(format!("--density bound `{}` is not a number", spec[1])))?;
    let hi: f64 = spec[2]
        .parse()
        .map_err(|_| usage(format!("--density bound `{}` is not a number", spec[2])))?;
    let steps: usize = spec[3]
        .parse()
        .map_err(|_| usage(format!("--density step count `{}` is not an integer", spec[3])))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(usage(format!("--density range [{lo}, {hi}] is not a finite interval")));
    }
    if steps < 2 {
        return Err(usage("--density needs at least 2 steps".into()));
    }
    println!("density {} {steps}", spec[0]);
    for i in 0..steps {
        let z = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
        let p = post.pdf(j, &Value::Continuous(z))?;
        println!("{z:.6e} {p:.6e}");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let (schema, data) = load_dataset(&a.data, &a.schema)?;
    if &schema != model.schema() {
        return Err(Error::Schema("test dataset schema does not match the model".into()).into());
    }
    let table = data.to_table()?;
    let targets = match &a.targets {
        Some(list) => parse_attr_list(list, &schema)?,
        None => Vec::new(),
    };
    for &j in &targets {
        let name = &schema.attr(j).name;
        let mut scored = 0usize;
        let mut misses = 0usize;
        let mut sse = 0.0f64;
        for row in table.rows() {
            // Score only rows that pin the target to one exact value.
            let mut truth = None;
            let consistent = row.conjunctions.iter().all(|c| match &c.observations[j] {
                Observation::Exact(v) => *truth.get_or_insert(*v) == *v,
                _ => false,
            });
            if !consistent {
                continue;
            }
            let truth = truth.expect("consistent row has a truth value");
            let mut masked = row.clone();
            for c in &mut masked.conjunctions {
                c.observations[j] = Observation::Missing;
            }
            let post = posterior(&model, &masked, &[j])?;
            scored += 1;
            match (post.estimate(j, None)?, truth) {
                (Estimate::Symbolic { ep, .. }, Value::Symbolic(k)) => {
                    if ep != k {
                        misses += 1;
                    }
                }
                (Estimate::Continuous { mean, .. }, Value::Continuous(v)) => {
                    sse += (mean - v) * (mean - v);
                }
                _ => unreachable!("estimate kind follows the attribute kind"),
            }
        }
        if scored == 0 {
            return Err(Error::ValueMismatch(format!(
                "no test row pins target `{name}` to a single exact value"
            ))
            .into());
        }
        match schema.attr(j).kind {
            AttributeKind::Symbolic(_) => {
                println!("error {name} {:.4}", misses as f64 / scored as f64);
            }
            AttributeKind::Continuous => {
                println!("rmse {name} {:.4}", (sse / scored as f64).sqrt());
            }
        }
    }
    // Held-out mean log-likelihood; the throwaway target keeps the
    // posterior machinery happy and does not affect the evidence.
    let mut total = 0.0f64;
    for row in table.rows() {
        total += posterior(&model, row, &[0])?.log_evidence();
    }
    println!("mean-log-likelihood {:.6}", total / table.len() as f64);
    Ok(())
}

fn sample(a: SampleArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let rows = model.sample_rows(a.count, a.seed);
    let data = Dataset::from_values(model.schema(), &rows)?;
    write_text(&a.out, &data.emit())?;
    if let Some(path) = &a.out_schema {
        write_text(path, &save_schema(model.schema()))?;
    }
    Ok(())
}

fn corrupt(a: CorruptArgs) -> Result<(), CliError> {
    if a.out_raw.is_none() && a.out_annotated.is_none() {
        return Err(CliError::Usage(
            "pass at least one of --out-raw and --out-annotated".into(),
        ));
    }
    let (schema, data) = load_dataset(&a.data, &a.schema)?;
    let spec = CorruptionSpec::parse(&read_text(&a.spec)?, &schema)?;
    let (raw, annotated) = spec.apply(&data, a.seed)?;
    if let Some(path) = &a.out_raw {
        write_text(path, &raw.emit())?;
    }
    if let Some(path) = &a.out_annotated {
        write_text(path, &annotated.emit())?;
    }
    Ok(())
}

fn plot_data(a: PlotDataArgs) -> Result<(), CliError> {
    let (schema, data) = load_dataset(&a.data, &a.schema)?;
    let attrs = match &a.attrs {
        Some(list) => parse_attr_list(list, &schema)?,
        None => (0..schema.len()).collect(),
    };
    let names: Vec<&str> = attrs.iter().map(|&j| schema.attr(j).name.as_str()).collect();
    println!("{}", names.join(" "));
    for row in data.rows() {
        let cols: Vec<String> = attrs
            .iter()
            .map(|&j| {
                let obs = parse_cell(&row.cells[j], &schema, j).map_err(|e| Error::Data {
                    line: row.line,
                    msg: format!("attribute `{}`: {e}", schema.attr(j).name),
                })?;
                Ok(center_text(&obs, &schema, j))
            })
            .collect::<Result<_, Error>>()?;
        println!("{}", cols.join(" "));
    }
    Ok(())
}

/// Plottable center of one cell: the reading, interval midpoint, mixture
/// mean, or most likely category; `?` when the cell carries no location.
fn center_text(obs: &Observation, schema: &AttributeSchema, j: usize) -> String {
    match obs {
        Observation::Missing => "?".into(),
        Observation::Exact(_) => format_observation(obs, schema, j),
        Observation::Gaussian { s, bias, .. } => format!("{}", s - bias),
        Observation::Interval { a, b } => match (a.is_finite(), b.is_finite()) {
            (true, true) => format!("{}", 0.5 * (a + b)),
            (true, false) => format!("{a}"),
            (false, true) => format!("{b}"),
            (false, false) => "?".into(),
        },
        Observation::SymbolicDist(p) => {
            let best = p
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).expect("finite probabilities").then(y.0.cmp(&x.0)))
                .map(|(k, _)| k)
                .expect("validated dist is non-empty");
            format_observation(&Observation::Exact(Value::Symbolic(best)), schema, j)
        }
        Observation::NormalMixture(parts) => {
            let w: f64 = parts.iter().map(|(w, _)| w).sum();
            if w <= 0.0 {
                "?".into()
            } else {
                format!("{}", parts.iter().map(|(w, g)| w * g.mu).sum::<f64>() / w)
            }
        }
    }
}
