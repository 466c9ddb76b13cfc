//! Synthetic task data: uniform range sampling for the single-module
//! arithmetic task, truth tables, and integer comparison pairs.

use crate::error::{NalmError, Result};
use crate::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Union of half-open real intervals sampled uniformly by total length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pieces: Vec<(f64, f64)>,
}

impl RangeSpec {
    pub fn new(pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(NalmError::InvalidRange("no pieces".into()));
        }
        for &(lo, hi) in &pieces {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(NalmError::InvalidRange(format!("piece [{lo}, {hi}) is not a valid interval")));
            }
        }
        Ok(RangeSpec { pieces })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        RangeSpec::new(vec![(lo, hi)])
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn total_length(&self) -> f64 {
        self.pieces.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|&(lo, hi)| x >= lo && x < hi)
    }

    pub fn overlaps(&self, other: &RangeSpec) -> bool {
        self.pieces.iter().any(|&(alo, ahi)| other.pieces.iter().any(|&(blo, bhi)| alo < bhi && blo < ahi))
    }

    /// One uniform draw over the union; pieces are weighted by length.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let mut u = rng.gen::<f64>() * self.total_length();
        for &(lo, hi) in &self.pieces {
            let len = hi - lo;
            if u < len {
                return lo + u;
            }
            u -= len;
        }
        // Fell off the end by rounding; return the last piece's interior.
        let (lo, hi) = *self.pieces.last().expect("non-empty");
        lo + 0.5 * (hi - lo)
    }

    /// Rendered like the benchmark tables, e.g. `U[1,2)` or `U[[-6,-2),[2,6)]`.
    pub fn label(&self) -> String {
        let piece = |&(lo, hi): &(f64, f64)| format!("[{},{})", fmt_num(lo), fmt_num(hi));
        if self.pieces.len() == 1 {
            format!("U{}", piece(&self.pieces[0]))
        } else {
            format!("U[{}]", self.pieces.iter().map(piece).collect::<Vec<_>>().join(","))
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl FromStr for RangeSpec {
    type Err = NalmError;

    /// Parses `[1,2)`, `U[1,2)`, or a piece list `[[-6,-2),[2,6)]`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches(['U', 'u']).trim();
        let inner = t
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix([')', ']']))
            .ok_or_else(|| NalmError::InvalidRange(format!("malformed range: {s}")))?;
        if inner.contains('[') {
            // Piece list: split on "),[" boundaries.
            let mut pieces = Vec::new();
            for part in inner.split("),") {
                let part = part.trim().trim_start_matches('[').trim_end_matches(')');
                pieces.push(parse_piece(part, s)?);
            }
            RangeSpec::new(pieces)
        } else {
            RangeSpec::new(vec![parse_piece(inner, s)?])
        }
    }
}

fn parse_piece(body: &str, original: &str) -> Result<(f64, f64)> {
    let mut it = body.split(',').map(str::trim);
    let lo = it
        .next()
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| NalmError::InvalidRange(format!("malformed range: {original}")))?;
    let hi = it
        .next()
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| NalmError::InvalidRange(format!("malformed range: {original}")))?;
    if it.next().is_some() {
        return Err(NalmError::InvalidRange(format!("malformed range: {original}")));
    }
    Ok((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Add,
    Sub,
    Mul,
    Div,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Add, Operation::Sub, Operation::Mul, Operation::Div];

    pub fn id(&self) -> &'static str {
        match self {
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::Div => "div",
        }
    }

    pub fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            Operation::Add => a + b,
            Operation::Sub => a - b,
            Operation::Mul => a * b,
            Operation::Div => a / b,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Operation {
    type Err = NalmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "add" | "+" | "addition" => Operation::Add,
            "sub" | "-" | "subtraction" => Operation::Sub,
            "mul" | "*" | "multiplication" => Operation::Mul,
            "div" | "/" | "division" => Operation::Div,
            _ => return Err(NalmError::InvalidConfig(format!("unknown operation: {s}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolOp {
    And,
    Or,
    Xor,
    Nand,
    Nor,
}

impl BoolOp {
    pub fn apply(&self, bits: &[bool]) -> bool {
        let and = bits.iter().all(|&b| b);
        let or = bits.iter().any(|&b| b);
        match self {
            BoolOp::And => and,
            BoolOp::Or => or,
            BoolOp::Xor => bits.iter().filter(|&&b| b).count() % 2 == 1,
            BoolOp::Nand => !and,
            BoolOp::Nor => !or,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            BoolOp::And => "and",
            BoolOp::Or => "or",
            BoolOp::Xor => "xor",
            BoolOp::Nand => "nand",
            BoolOp::Nor => "nor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn apply(&self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Gt => "gt",
            CmpOp::Le => "le",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }
}

/// What one run trains on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// y = x1 op x2; remaining inputs are redundant.
    Arithmetic(Operation),
    /// All 2^I boolean rows, labeled by the op over the inputs.
    TruthTable(BoolOp),
    /// Integer operand pairs with a {0, 1} comparison label.
    Comparison(CmpOp),
}

impl TaskKind {
    pub fn id(&self) -> String {
        match self {
            TaskKind::Arithmetic(op) => op.id().to_string(),
            TaskKind::TruthTable(op) => op.id().to_string(),
            TaskKind::Comparison(op) => op.id().to_string(),
        }
    }
}

/// Full description of a single benchmark task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub input_size: usize,
    /// Training/validation draw range.
    pub interp: RangeSpec,
    /// Held-out test draw range.
    pub extrap: RangeSpec,
    pub batch: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl TaskSpec {
    /// Arithmetic task with the benchmark defaults: batch 128, fixed
    /// 10,000-sample validation and test sets.
    pub fn arithmetic(op: Operation, input_size: usize, interp: RangeSpec, extrap: RangeSpec) -> Self {
        TaskSpec {
            task: TaskKind::Arithmetic(op),
            input_size,
            interp,
            extrap,
            batch: 128,
            val_size: 10_000,
            test_size: 10_000,
        }
    }

    pub fn comparison(op: CmpOp, train: (f64, f64), test: (f64, f64)) -> Result<Self> {
        Ok(TaskSpec {
            task: TaskKind::Comparison(op),
            input_size: 2,
            interp: RangeSpec::single(train.0, train.1)?,
            extrap: RangeSpec::single(test.0, test.1)?,
            batch: 128,
            val_size: 10_000,
            test_size: 10_000,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Columns x1..xI then y, '.' decimal separator, header row included.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let cols = self.x.cols();
        for i in 0..cols {
            out.push_str(&format!("x{}", i + 1));
            out.push(',');
        }
        out.push_str("y\n");
        for r in 0..self.x.rows() {
            for c in 0..cols {
                out.push_str(&format!("{:.17e},", self.x.get(r, c)));
            }
            out.push_str(&format!("{:.17e}\n", self.y.get(r, 0)));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// n x I matrix of uniform draws from `range`.
pub fn sample_batch(range: &RangeSpec, input_size: usize, n: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(n, input_size);
    for r in 0..n {
        for c in 0..input_size {
            m.set(r, c, range.sample(rng));
        }
    }
    m
}

/// y = x1 op x2 per row; redundant columns are ignored.
pub fn compute_target(x: &Matrix, op: Operation) -> Result<Matrix> {
    if x.cols() < 2 {
        return Err(NalmError::InvalidInput(format!("arithmetic tasks need at least 2 inputs, got {}", x.cols())));
    }
    let mut y = Matrix::zeros(x.rows(), 1);
    for r in 0..x.rows() {
        y.set(r, 0, op.apply(x.get(r, 0), x.get(r, 1)));
    }
    Ok(y)
}

/// One labeled batch for `spec`. Division rows with |x2| below 1e-9 are
/// redrawn; only ranges straddling zero can produce them.
fn draw_labeled(spec: &TaskSpec, range: &RangeSpec, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    match &spec.task {
        TaskKind::Arithmetic(op) => {
            let mut x = sample_batch(range, spec.input_size, n, rng);
            if *op == Operation::Div {
                for r in 0..n {
                    while x.get(r, 1).abs() < 1e-9 {
                        x.set(r, 1, range.sample(rng));
                    }
                }
            }
            let y = compute_target(&x, *op)?;
            Ok(Dataset { x, y })
        }
        TaskKind::TruthTable(op) => Ok(sample_truth_table(*op, spec.input_size, n, rng)),
        TaskKind::Comparison(op) => {
            // Integer-valued operands: floor of a uniform draw over the range.
            let mut x = Matrix::zeros(n, spec.input_size);
            let mut y = Matrix::zeros(n, 1);
            for r in 0..n {
                for c in 0..spec.input_size {
                    x.set(r, c, range.sample(rng).floor());
                }
                y.set(r, 0, if op.apply(x.get(r, 0), x.get(r, 1)) { 1.0 } else { 0.0 });
            }
            Ok(Dataset { x, y })
        }
    }
}

/// All 2^I rows of the truth table for `op`.
pub fn truth_table(op: BoolOp, input_size: usize) -> Dataset {
    let rows = 1usize << input_size;
    let mut x = Matrix::zeros(rows, input_size);
    let mut y = Matrix::zeros(rows, 1);
    for r in 0..rows {
        let bits: Vec<bool> = (0..input_size).map(|c| (r >> (input_size - 1 - c)) & 1 == 1).collect();
        for (c, &b) in bits.iter().enumerate() {
            x.set(r, c, if b { 1.0 } else { 0.0 });
        }
        y.set(r, 0, if op.apply(&bits) { 1.0 } else { 0.0 });
    }
    Dataset { x, y }
}

fn sample_truth_table(op: BoolOp, input_size: usize, n: usize, rng: &mut impl Rng) -> Dataset {
    let table = truth_table(op, input_size);
    let mut x = Matrix::zeros(n, input_size);
    let mut y = Matrix::zeros(n, 1);
    for r in 0..n {
        let pick = rng.gen_range(0..table.len());
        for c in 0..input_size {
            x.set(r, c, table.x.get(pick, c));
        }
        y.set(r, 0, table.y.get(pick, 0));
    }
    Dataset { x, y }
}

/// Integer comparison dataset over `[lo, hi)` (uniform, floored).
pub fn comparison_dataset(op: CmpOp, lo: f64, hi: f64, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let spec = TaskSpec::comparison(op, (lo, hi), (lo, hi))?;
    draw_labeled(&spec, &spec.interp.clone(), n, rng)
}

/// Materialized data for one run: a fresh training batch every iteration plus
/// validation and test sets fixed when the task is built.
pub struct TaskData {
    spec: TaskSpec,
    train_rng: ChaCha8Rng,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds the datasets for `spec`. Truth-table tasks evaluate on the full
/// enumerated table; everything else draws validation from the interpolation
/// range and test from the extrapolation range, once, up front.
pub fn build_task(spec: &TaskSpec, seed: u64) -> Result<TaskData> {
    let mut val_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut test_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let train_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let (val, test) = match &spec.task {
        TaskKind::TruthTable(op) => {
            let t = truth_table(*op, spec.input_size);
            (t.clone(), t)
        }
        _ => (
            draw_labeled(spec, &spec.interp, spec.val_size, &mut val_rng)?,
            draw_labeled(spec, &spec.extrap, spec.test_size, &mut test_rng)?,
        ),
    };
    Ok(TaskData { spec: spec.clone(), train_rng, val, test })
}

impl TaskData {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// The next training batch from the interpolation range.
    pub fn train_batch(&mut self) -> Result<Dataset> {
        let spec = self.spec.clone();
        draw_labeled(&spec, &spec.interp.clone(), spec.batch, &mut self.train_rng)
    }
}
