//! pass@k estimation, output equivalence and error reporting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::status_histogram;
use crate::model::{Cell, ExecStatus, ExecutionRecord, Intent, ProgrammaticContext, VarKind, VariableSnapshot, OUTPUT_VAR};
use crate::table::format_cell;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`, evaluated as a product so
/// no binomial coefficient is ever formed.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if c > n || k == 0 || k > n {
        return Err(Error::Domain(format!("pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")));
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// 1 when any of the first `k` samples is correct.
pub fn pass_at_k_empirical(correct_in_order: &[bool], k: usize) -> Result<f64> {
    if k == 0 || k > correct_in_order.len() {
        return Err(Error::Domain(format!("k={k} outside 1..={}", correct_in_order.len())));
    }
    Ok(if correct_in_order[..k].iter().any(|c| *c) { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOptions {
    pub tol: f64,
    /// Compare rows as multisets instead of in order.
    pub sorted_rows: bool,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            sorted_rows: false,
        }
    }
}

fn numeric(cell: &Cell) -> Option<f64> {
    match cell {
        Cell::Int(i) => Some(*i as f64),
        Cell::Float(f) => Some(*f),
        _ => None,
    }
}

fn is_missing(cell: &Cell) -> bool {
    matches!(cell, Cell::Null) || matches!(cell, Cell::Float(f) if f.is_nan())
}

pub fn cells_equal(a: &Cell, b: &Cell, tol: f64) -> bool {
    if is_missing(a) || is_missing(b) {
        return is_missing(a) && is_missing(b);
    }
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => x == y || (x - y).abs() <= tol,
        _ => match (a, b) {
            (Cell::Bool(x), Cell::Bool(y)) => x == y,
            (Cell::Text(x), Cell::Text(y)) => x.trim() == y.trim(),
            _ => format_cell(a).trim() == format_cell(b).trim(),
        },
    }
}

/// Total order used to sort cells: missing, then numbers, then booleans,
/// then text.
fn cell_order(a: &Cell, b: &Cell) -> Ordering {
    fn rank(c: &Cell) -> u8 {
        if is_missing(c) {
            0
        } else if numeric(c).is_some() {
            1
        } else if matches!(c, Cell::Bool(_)) {
            2
        } else {
            3
        }
    }
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        _ if is_missing(a) => Ordering::Equal,
        (Cell::Bool(x), Cell::Bool(y)) => x.cmp(y),
        _ => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => format_cell(a).trim().cmp(format_cell(b).trim()),
        },
    })
}

fn columns_equal(a: &[Cell], b: &[Cell], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y, tol))
}

fn sorted_column(col: &[Cell]) -> Vec<Cell> {
    let mut out = col.to_vec();
    out.sort_by(cell_order);
    out
}

enum Shape<'a> {
    Scalar(&'a Cell),
    Table { names: Vec<&'a str>, cells: &'a [Vec<Cell>] },
}

fn shape_of(var: &VariableSnapshot) -> Result<Shape<'_>> {
    let cells = var
        .cells
        .as_deref()
        .ok_or_else(|| Error::Incomparable(format!("{} carries no cell values", var.name)))?;
    if var.kind == VarKind::Scalar {
        return var
            .scalar_value()
            .map(Shape::Scalar)
            .ok_or_else(|| Error::Incomparable(format!("scalar {} does not hold one value", var.name)));
    }
    let names = match &var.columns {
        Some(columns) => columns.iter().map(|(n, _)| n.as_str()).collect(),
        None => vec![""; cells.len()],
    };
    Ok(Shape::Table { names, cells })
}

/// Augmenting-path bipartite matching. `adj[r]` lists candidate columns
/// compatible with reference column `r`, most preferred first.
fn find_matching(adj: &[Vec<usize>], n_right: usize) -> Option<Vec<usize>> {
    fn augment(r: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &c in &adj[r] {
            if seen[c] {
                continue;
            }
            seen[c] = true;
            if owner[c].is_none_or(|other| augment(other, adj, seen, owner)) {
                owner[c] = Some(r);
                return true;
            }
        }
        false
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    for r in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if !augment(r, adj, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut mapping = vec![0; adj.len()];
    for (c, r) in owner.iter().enumerate() {
        if let Some(r) = r {
            mapping[*r] = c;
        }
    }
    Some(mapping)
}

fn sorted_rows(cells: &[&Vec<Cell>]) -> Vec<Vec<Cell>> {
    let rows = cells.first().map_or(0, |c| c.len());
    let mut grid: Vec<Vec<Cell>> = (0..rows).map(|r| cells.iter().map(|c| c[r].clone()).collect()).collect();
    grid.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| cell_order(x, y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    grid
}

fn tables_equivalent(
    cand_names: &[&str],
    cand: &[Vec<Cell>],
    ref_names: &[&str],
    reference: &[Vec<Cell>],
    options: &EquivalenceOptions,
) -> bool {
    let rows = |t: &[Vec<Cell>]| t.first().map_or(0, Vec::len);
    if reference.len() > cand.len() || rows(reference) != rows(cand) {
        return false;
    }
    let (cand_cols, ref_cols): (Vec<Vec<Cell>>, Vec<Vec<Cell>>) = if options.sorted_rows {
        (cand.iter().map(|c| sorted_column(c)).collect(), reference.iter().map(|c| sorted_column(c)).collect())
    } else {
        (cand.to_vec(), reference.to_vec())
    };
    let adj: Vec<Vec<usize>> = ref_cols
        .iter()
        .enumerate()
        .map(|(r, rc)| {
            let mut options_for: Vec<usize> = (0..cand_cols.len())
                .filter(|&c| columns_equal(rc, &cand_cols[c], options.tol))
                .collect();
            options_for.sort_by_key(|&c| (cand_names[c] != ref_names[r], c != r, c));
            options_for
        })
        .collect();
    let Some(mapping) = find_matching(&adj, cand_cols.len()) else {
        return false;
    };
    if !options.sorted_rows {
        return true;
    }
    let ref_view: Vec<&Vec<Cell>> = reference.iter().collect();
    let cand_view: Vec<&Vec<Cell>> = mapping.iter().map(|&c| &cand[c]).collect();
    sorted_rows(&ref_view)
        .iter()
        .zip(sorted_rows(&cand_view).iter())
        .all(|(a, b)| a.iter().zip(b).all(|(x, y)| cells_equal(x, y, options.tol)))
}

/// Whether `candidate` reproduces `reference`: scalars within tolerance,
/// tables when every reference column maps to a distinct candidate column
/// with matching values. Names are ignored and extra candidate columns are
/// allowed.
pub fn outputs_equivalent(
    candidate: &VariableSnapshot,
    reference: &VariableSnapshot,
    options: &EquivalenceOptions,
) -> Result<bool> {
    match (shape_of(candidate)?, shape_of(reference)?) {
        (Shape::Scalar(a), Shape::Scalar(b)) => Ok(cells_equal(a, b, options.tol)),
        (Shape::Table { names: cn, cells: cc }, Shape::Table { names: rn, cells: rc }) => {
            Ok(tables_equivalent(&cn, cc, &rn, rc, options))
        }
        _ => Err(Error::Incomparable(format!(
            "{} ({:?}) vs {} ({:?})",
            candidate.name, candidate.kind, reference.name, reference.kind
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProblem {
    pub problem_id: String,
    pub context: ProgrammaticContext,
    pub intent: Intent,
    pub reference_solution: String,
    pub reference_output: VariableSnapshot,
}

/// One predicted sample and its execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub problem_id: String,
    pub sample_index: u32,
    pub execution: ExecutionRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtKInput {
    pub n: u64,
    pub c: u64,
    pub k: u64,
}

impl PassAtKInput {
    pub fn estimate(&self) -> Result<f64> {
        pass_at_k(self.n, self.c, self.k)
    }
}

/// Whether any output of a prediction matches the reference, trying
/// `__output__` first. Incomparable pairs count as mismatches.
pub fn prediction_correct(record: &ExecutionRecord, reference: &VariableSnapshot, options: &EquivalenceOptions) -> bool {
    if record.status != ExecStatus::Ok {
        return false;
    }
    let mut outputs: Vec<&VariableSnapshot> = record.output_vars.iter().collect();
    outputs.sort_by_key(|v| v.name != OUTPUT_VAR);
    outputs
        .into_iter()
        .any(|v| outputs_equivalent(v, reference, options).unwrap_or(false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScore {
    pub problem_id: String,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub estimator: String,
    pub problem_count: usize,
    pub samples_per_problem: usize,
    pub pass_at_k: BTreeMap<String, f64>,
    pub execution_rate: f64,
    pub status_histogram: BTreeMap<String, usize>,
    pub problems: Vec<ProblemScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreOptions {
    pub equivalence: EquivalenceOptions,
    pub empirical: bool,
}

pub fn score_corpus(
    problems: &[EvalProblem],
    predictions: &[PredictionRecord],
    ks: &[u64],
    options: &ScoreOptions,
) -> Result<EvalReport> {
    if problems.is_empty() {
        return Err(Error::Invalid("no problems to score".into()));
    }
    if ks.is_empty() {
        return Err(Error::Invalid("no k values given".into()));
    }
    let mut grouped: HashMap<&str, Vec<&PredictionRecord>> =
        problems.iter().map(|p| (p.problem_id.as_str(), Vec::new())).collect();
    for prediction in predictions {
        grouped
            .get_mut(prediction.problem_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("prediction for unknown problem {}", prediction.problem_id)))?
            .push(prediction);
    }
    let n = grouped[problems[0].problem_id.as_str()].len();
    if let Some(p) = problems.iter().find(|p| grouped[p.problem_id.as_str()].len() != n) {
        return Err(Error::RaggedSamples(format!(
            "{} has {} samples, {} has {n}",
            p.problem_id,
            grouped[p.problem_id.as_str()].len(),
            problems[0].problem_id
        )));
    }
    if let Some(k) = ks.iter().find(|k| **k == 0 || **k as usize > n) {
        return Err(Error::Domain(format!("k={k} outside 1..={n}")));
    }
    let scored: Vec<(ProblemScore, Vec<bool>)> = problems
        .par_iter()
        .map(|problem| {
            let mut samples = grouped[problem.problem_id.as_str()].clone();
            samples.sort_by_key(|p| p.sample_index);
            let correct: Vec<bool> = samples
                .iter()
                .map(|p| prediction_correct(&p.execution, &problem.reference_output, &options.equivalence))
                .collect();
            let score = ProblemScore {
                problem_id: problem.problem_id.clone(),
                n,
                c: correct.iter().filter(|c| **c).count(),
            };
            (score, correct)
        })
        .collect();
    let mut pass = BTreeMap::new();
    for &k in ks {
        let mut total = 0.0;
        for (score, correct) in &scored {
            total += if options.empirical {
                pass_at_k_empirical(correct, k as usize)?
            } else {
                pass_at_k(n as u64, score.c as u64, k)?
            };
        }
        pass.insert(format!("pass@{k}"), total / scored.len() as f64);
    }
    let executions: Vec<ExecutionRecord> = predictions.iter().map(|p| p.execution.clone()).collect();
    let report = error_report(&executions);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        estimator: if options.empirical { "empirical" } else { "unbiased" }.to_string(),
        problem_count: problems.len(),
        samples_per_problem: n,
        pass_at_k: pass,
        execution_rate: report.execution_rate,
        status_histogram: status_histogram(&executions)
            .into_iter()
            .map(|(s, c)| (s.as_str().to_string(), c))
            .collect(),
        problems: scored.into_iter().map(|(s, _)| s).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub status: String,
    pub count: usize,
}

/// Frequency of each status over an execution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub total: usize,
    /// Statuses that occur at least once.
    pub table: BTreeMap<String, usize>,
    pub schema_errors: usize,
    pub syntax_errors: usize,
    pub execution_rate: f64,
    /// Every status in taxonomy order, for plotting.
    pub series: Vec<SeriesPoint>,
}

pub fn error_report(records: &[ExecutionRecord]) -> ErrorReport {
    let histogram = status_histogram(records);
    let ok = histogram[&ExecStatus::Ok];
    ErrorReport {
        schema_version: REPORT_SCHEMA_VERSION,
        total: records.len(),
        table: histogram
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(s, n)| (s.as_str().to_string(), *n))
            .collect(),
        schema_errors: histogram[&ExecStatus::SchemaError],
        syntax_errors: histogram[&ExecStatus::SyntaxError],
        execution_rate: if records.is_empty() { 0.0 } else { ok as f64 / records.len() as f64 },
        series: ExecStatus::ALL
            .iter()
            .map(|s| SeriesPoint {
                status: s.as_str().to_string(),
                count: histogram[s],
            })
            .collect(),
    }
}
