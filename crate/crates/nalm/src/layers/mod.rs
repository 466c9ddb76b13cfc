//! The neural arithmetic/logic module zoo: forward definitions, weight
//! constructions, regularizers, schedules, initialization and projection.
//!
//! A [`Module`] owns its parameter tensors plus per-kind hyperparameters and
//! is bound into a fresh [`Graph`](crate::autodiff::Graph) every batch. The
//! trainable parameter order reported by [`Module::param_names`] is the
//! contract shared by [`Module::forward`] (leaf order), the optimizer state
//! and the serialized weight document.

mod arithmetic;
mod extract;
mod gradcheck_suite;
mod logic;
mod schedule;

pub use arithmetic::LN_PHI;
pub use extract::{extract_expression, Extraction};
pub use gradcheck_suite::{grad_check_kind, grad_check_module, randomize_safely, safe_input};
pub use schedule::{beta_scale, inalu_reg_active, lambda_scale, should_reinit, ReinitConfig};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::Operation;
use crate::error::{NalmError, Result};
use crate::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Every implemented module kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    NacAdd,
    NacMul,
    Nalu,
    GNalu,
    INalu,
    Nau,
    Nmu,
    Npu,
    RealNpu,
    Nlrl,
    Nsr,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 11] = [
        ModuleKind::NacAdd,
        ModuleKind::NacMul,
        ModuleKind::Nalu,
        ModuleKind::GNalu,
        ModuleKind::INalu,
        ModuleKind::Nau,
        ModuleKind::Nmu,
        ModuleKind::Npu,
        ModuleKind::RealNpu,
        ModuleKind::Nlrl,
        ModuleKind::Nsr,
    ];

    /// The nine arithmetic kinds, in benchmark table order.
    pub const ARITHMETIC: [ModuleKind; 9] = [
        ModuleKind::NacAdd,
        ModuleKind::NacMul,
        ModuleKind::Nalu,
        ModuleKind::GNalu,
        ModuleKind::INalu,
        ModuleKind::Nau,
        ModuleKind::Nmu,
        ModuleKind::Npu,
        ModuleKind::RealNpu,
    ];

    /// Stable lowercase identifier used in files and CSV cells.
    pub fn id(&self) -> &'static str {
        match self {
            ModuleKind::NacAdd => "nac_add",
            ModuleKind::NacMul => "nac_mul",
            ModuleKind::Nalu => "nalu",
            ModuleKind::GNalu => "gnalu",
            ModuleKind::INalu => "inalu",
            ModuleKind::Nau => "nau",
            ModuleKind::Nmu => "nmu",
            ModuleKind::Npu => "npu",
            ModuleKind::RealNpu => "real_npu",
            ModuleKind::Nlrl => "nlrl",
            ModuleKind::Nsr => "nsr",
        }
    }

    /// Human-facing name for chart legends.
    pub fn pretty(&self) -> &'static str {
        match self {
            ModuleKind::NacAdd => "NAC+",
            ModuleKind::NacMul => "NAC*",
            ModuleKind::Nalu => "NALU",
            ModuleKind::GNalu => "G-NALU",
            ModuleKind::INalu => "iNALU",
            ModuleKind::Nau => "NAU",
            ModuleKind::Nmu => "NMU",
            ModuleKind::Npu => "NPU",
            ModuleKind::RealNpu => "RealNPU",
            ModuleKind::Nlrl => "NLRL",
            ModuleKind::Nsr => "NSR",
        }
    }

    pub fn is_logic(&self) -> bool {
        matches!(self, ModuleKind::Nlrl | ModuleKind::Nsr)
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ModuleKind {
    type Err = NalmError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match norm.as_str() {
            "nac_add" | "nacadd" | "nac+" => ModuleKind::NacAdd,
            "nac_mul" | "nacmul" | "nac*" | "nac." => ModuleKind::NacMul,
            "nalu" => ModuleKind::Nalu,
            "gnalu" | "g_nalu" => ModuleKind::GNalu,
            "inalu" | "i_nalu" => ModuleKind::INalu,
            "nau" => ModuleKind::Nau,
            "nmu" => ModuleKind::Nmu,
            "npu" => ModuleKind::Npu,
            "real_npu" | "realnpu" => ModuleKind::RealNpu,
            "nlrl" => ModuleKind::Nlrl,
            "nsr" => ModuleKind::Nsr,
            _ => return Err(NalmError::InvalidConfig(format!("unknown module name: {s}"))),
        })
    }
}

/// Per-module hyperparameters. Defaults come from the single-module benchmark
/// configuration; operation-dependent values are resolved by
/// [`Hyper::for_kind`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    /// Small constant added inside guarded logs.
    pub eps_log: f64,
    /// Ceiling on the multiplicative path's summed log terms (iNALU).
    pub omega: f64,
    /// Discretization target for the iNALU regularizer.
    pub t_disc: f64,
    /// The iNALU regularizer stays off until this many iterations have run.
    pub reg_min_iter: u64,
    /// Sparsity regularizer strength and ramp window (NAU / NMU).
    pub lambda_hat: f64,
    pub lambda_start: u64,
    pub lambda_end: u64,
    /// L1 schedule (NPU / RealNPU).
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_growth: f64,
    pub beta_step: u64,
    /// Difference scaling for the NSR comparison path.
    pub lambda_nsr: f64,
    /// Number of redundant NSR operand-selection paths.
    pub redundancy: usize,
    /// NLRL: include the OR path and output gating instead of the
    /// negation-wrapped AND-only form.
    pub nlrl_full: bool,
    /// iNALU reinitialization: check period, iteration floor, and the loss
    /// history capacity backing the check.
    pub reinit_period: u64,
    pub reinit_min_iter: u64,
    pub loss_history_cap: usize,
    /// Element-wise gradient clip interval (iNALU).
    pub grad_clip: Option<(f64, f64)>,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            eps_log: 1e-7,
            omega: 20.0,
            t_disc: 20.0,
            reg_min_iter: 10_000,
            lambda_hat: 0.0,
            lambda_start: 20_000,
            lambda_end: 35_000,
            beta_start: 1e-7,
            beta_end: 1e-5,
            beta_growth: 10.0,
            beta_step: 10_000,
            lambda_nsr: 1.0,
            redundancy: 1,
            nlrl_full: false,
            reinit_period: 10,
            reinit_min_iter: 10_000,
            loss_history_cap: 5_000,
            grad_clip: None,
        }
    }
}

impl Hyper {
    /// Benchmark defaults for a module kind, specialized to the operation it
    /// will be trained on where the defaults differ (the NPU L1 schedule is
    /// gentler for division, and only the iNALU clips gradients).
    pub fn for_kind(kind: ModuleKind, op: Option<Operation>) -> Hyper {
        let mut h = Hyper::default();
        match (kind, op) {
            (ModuleKind::Nau, _) => h.lambda_hat = 0.01,
            (ModuleKind::Nmu, _) => h.lambda_hat = 10.0,
            (ModuleKind::INalu, _) => h.grad_clip = Some((-0.1, 0.1)),
            (ModuleKind::Npu | ModuleKind::RealNpu, Some(Operation::Div)) => {
                h.beta_start = 1e-9;
                h.beta_end = 1e-7;
            }
            _ => {}
        }
        h
    }
}

/// Parameter tensors, by module family.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    /// Shared by NAC+, NAC* (no gate) and by NALU / G-NALU (with gate).
    Nac { w_hat: Tensor, m_hat: Tensor, gate: Option<Tensor> },
    INalu { w_hat_add: Tensor, m_hat_add: Tensor, w_hat_mul: Tensor, m_hat_mul: Tensor, gate: Tensor },
    /// Single clamped weight matrix (NAU, NMU).
    Linear { w: Tensor },
    /// NPU family; `w_imag` is absent for the RealNPU.
    Npu { w_real: Tensor, w_imag: Option<Tensor>, gate: Tensor },
    Nlrl { neg_gate: Tensor, op_weights: Tensor, out_gate: Tensor },
    Nsr { paths: Vec<NsrPath>, shift: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NsrPath {
    pub op1_select: Tensor,
    pub op2_select: Tensor,
    pub sign_scale: Tensor,
    pub zero_scale: Tensor,
}

/// A module kind plus its parameters and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Module {
    pub kind: ModuleKind,
    pub input_size: usize,
    pub output_size: usize,
    pub hyper: Hyper,
    pub params: Params,
}

/// Output node plus the trainable parameter leaves, in `param_names` order.
pub struct Bound {
    pub output: NodeId,
    pub leaves: Vec<NodeId>,
}

impl Module {
    /// Fresh module with seeded random initialization.
    ///
    /// Schemes: NALU-family logits are Xavier-uniform (gate gain 1); iNALU
    /// draws normals with std 0.5 around means +1 (weight logits), -1
    /// (selection logits) and 0 (gate); NAU is Xavier-uniform clamped into
    /// [-1, 1]; NMU is uniform on [0.25, 0.75]; the NPU family starts with a
    /// Xavier-uniform real matrix, zero imaginary matrix and all gates at 0.5.
    pub fn init(kind: ModuleKind, input_size: usize, output_size: usize, hyper: Hyper, rng: &mut impl Rng) -> Module {
        let params = draw_params(kind, input_size, output_size, &hyper, rng);
        Module { kind, input_size, output_size, hyper, params }
    }

    /// Redraws every parameter from the initialization scheme, in place.
    pub fn reinit(&mut self, rng: &mut impl Rng) {
        self.params = draw_params(self.kind, self.input_size, self.output_size, &self.hyper, rng);
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.params {
            Params::Nac { gate, .. } => {
                let mut names = vec!["w_hat".to_string(), "m_hat".to_string()];
                if gate.is_some() {
                    names.push("gate".to_string());
                }
                names
            }
            Params::INalu { .. } => {
                ["w_hat_add", "m_hat_add", "w_hat_mul", "m_hat_mul", "gate"].iter().map(|s| s.to_string()).collect()
            }
            Params::Linear { .. } => vec!["w".to_string()],
            Params::Npu { w_imag, .. } => {
                let mut names = vec!["w_real".to_string()];
                if w_imag.is_some() {
                    names.push("w_imag".to_string());
                }
                names.push("gate".to_string());
                names
            }
            Params::Nlrl { .. } => ["neg_gate", "op_weights", "out_gate"].iter().map(|s| s.to_string()).collect(),
            Params::Nsr { paths, .. } => {
                let mut names = Vec::new();
                for p in 0..paths.len() {
                    names.push(format!("op1_select_{p}"));
                    names.push(format!("op2_select_{p}"));
                    names.push(format!("sign_scale_{p}"));
                    names.push(format!("zero_scale_{p}"));
                }
                names.push("shift".to_string());
                names
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match &self.params {
            Params::Nac { w_hat, m_hat, gate } => {
                let mut v = vec![w_hat, m_hat];
                if let Some(g) = gate {
                    v.push(g);
                }
                v
            }
            Params::INalu { w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate } => {
                vec![w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate]
            }
            Params::Linear { w } => vec![w],
            Params::Npu { w_real, w_imag, gate } => {
                let mut v = vec![w_real];
                if let Some(im) = w_imag {
                    v.push(im);
                }
                v.push(gate);
                v
            }
            Params::Nlrl { neg_gate, op_weights, out_gate } => vec![neg_gate, op_weights, out_gate],
            Params::Nsr { paths, shift } => {
                let mut v = Vec::new();
                for p in paths {
                    v.push(&p.op1_select);
                    v.push(&p.op2_select);
                    v.push(&p.sign_scale);
                    v.push(&p.zero_scale);
                }
                v.push(shift);
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.params {
            Params::Nac { w_hat, m_hat, gate } => {
                let mut v = vec![w_hat, m_hat];
                if let Some(g) = gate {
                    v.push(g);
                }
                v
            }
            Params::INalu { w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate } => {
                vec![w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate]
            }
            Params::Linear { w } => vec![w],
            Params::Npu { w_real, w_imag, gate } => {
                let mut v = vec![w_real];
                if let Some(im) = w_imag {
                    v.push(im);
                }
                v.push(gate);
                v
            }
            Params::Nlrl { neg_gate, op_weights, out_gate } => vec![neg_gate, op_weights, out_gate],
            Params::Nsr { paths, shift } => {
                let mut v = Vec::new();
                for p in paths {
                    v.push(&mut p.op1_select);
                    v.push(&mut p.op2_select);
                    v.push(&mut p.sign_scale);
                    v.push(&mut p.zero_scale);
                }
                v.push(shift);
                v
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Post-step projection: NAU weights back into [-1, 1], NMU weights into
    /// [0, 1]. Other kinds constrain inside the forward pass instead.
    pub fn project(&mut self) {
        let range = match self.kind {
            ModuleKind::Nau => Some((-1.0, 1.0)),
            ModuleKind::Nmu => Some((0.0, 1.0)),
            _ => None,
        };
        if let (Some((lo, hi)), Params::Linear { w }) = (range, &mut self.params) {
            let data = w.value.as_mut_slice();
            for v in data {
                *v = v.clamp(lo, hi);
            }
        }
    }

    /// Records the forward pass on `g`, leafing every parameter.
    ///
    /// `x` must be a batch x input_size node already on the graph.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<Bound> {
        match self.kind {
            ModuleKind::Nlrl | ModuleKind::Nsr => logic::forward(self, g, x),
            _ => arithmetic::forward(self, g, x),
        }
    }

    /// Convenience forward on a throwaway graph; returns the output values.
    pub fn forward_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xid = g.input(x);
        let bound = self.forward(&mut g, xid)?;
        Ok(g.value(bound.output).clone())
    }

    /// Regularization penalty node for the current iteration, if one is
    /// active. `leaves` must come from the same graph's [`Bound`].
    pub fn penalty(&self, g: &mut Graph, leaves: &[NodeId], iteration: u64, recent_mean_loss: f64) -> Result<Option<NodeId>> {
        match self.kind {
            ModuleKind::Nau | ModuleKind::Nmu => {
                let lambda = lambda_scale(iteration, self.hyper.lambda_start, self.hyper.lambda_end, self.hyper.lambda_hat);
                if lambda == 0.0 {
                    return Ok(None);
                }
                // mean over elements of min(|w|, 1 - |w|), scaled by lambda.
                let w = leaves[0];
                let a = g.abs(w);
                let b = g.one_minus(a);
                let m = g.min(a, b)?;
                let mean = g.mean_all(m);
                Ok(Some(g.scale(mean, lambda)))
            }
            ModuleKind::INalu => {
                if !inalu_reg_active(recent_mean_loss, iteration, self.hyper.reg_min_iter) {
                    return Ok(None);
                }
                // (1/t) * sum over parameter groups of mean(max(t - |theta|, 0)).
                let t = self.hyper.t_disc;
                let mut acc: Option<NodeId> = None;
                for &leaf in leaves {
                    let a = g.abs(leaf);
                    let shifted = g.affine(a, -1.0, t);
                    let r = g.relu(shifted);
                    let mean = g.mean_all(r);
                    acc = Some(match acc {
                        None => mean,
                        Some(prev) => g.add(prev, mean)?,
                    });
                }
                Ok(acc.map(|n| g.scale(n, 1.0 / t)))
            }
            ModuleKind::Npu | ModuleKind::RealNpu => {
                let beta = beta_scale(
                    iteration,
                    self.hyper.beta_start,
                    self.hyper.beta_end,
                    self.hyper.beta_growth,
                    self.hyper.beta_step,
                );
                if beta == 0.0 {
                    return Ok(None);
                }
                let mut acc: Option<NodeId> = None;
                for &leaf in leaves {
                    let a = g.abs(leaf);
                    let s = g.sum_all(a);
                    acc = Some(match acc {
                        None => s,
                        Some(prev) => g.add(prev, s)?,
                    });
                }
                Ok(acc.map(|n| g.scale(n, beta)))
            }
            _ => Ok(None),
        }
    }

    /// Distance of the worst effective-weight element from the discrete set
    /// {-1, 0, 1}: max over elements of min(|w|, 1 - |w|), floored at 1e-16.
    ///
    /// Measured on the matrices the forward actually applies to inputs: the
    /// tanh * sigmoid composition for the NALU family (both paths for the
    /// iNALU), the clamped weights for NAU / NMU, the real and imaginary
    /// matrices jointly for the NPU, and gate/weight activations for the
    /// logic kinds.
    pub fn sparsity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut visit = |m: &Matrix| {
            for &w in m.as_slice() {
                let d = (w.abs().min(1.0 - w.abs())).clamp(0.0, 0.5);
                worst = worst.max(d);
            }
        };
        match (&self.params, self.kind) {
            (Params::Nac { w_hat, m_hat, .. }, kind) => {
                visit(&effective_weights(&w_hat.value, &m_hat.value, kind == ModuleKind::GNalu));
            }
            (Params::INalu { w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, .. }, _) => {
                visit(&effective_weights(&w_hat_add.value, &m_hat_add.value, false));
                visit(&effective_weights(&w_hat_mul.value, &m_hat_mul.value, false));
            }
            (Params::Linear { w }, _) => visit(&w.value),
            (Params::Npu { w_real, w_imag, .. }, _) => {
                visit(&w_real.value);
                if let Some(im) = w_imag {
                    visit(&im.value);
                }
            }
            (Params::Nlrl { neg_gate, op_weights, out_gate }, _) => {
                visit(&neg_gate.value.map(crate::autodiff::sigmoid));
                visit(&op_weights.value);
                visit(&out_gate.value.map(crate::autodiff::sigmoid));
            }
            (Params::Nsr { paths, .. }, _) => {
                for p in paths {
                    visit(&softmax_cols_matrix(&p.op1_select.value));
                    visit(&softmax_cols_matrix(&p.op2_select.value));
                }
            }
        }
        worst.max(1e-16)
    }
}

/// tanh(w_hat) * sigmoid(m_hat) element-wise; the golden-ratio variant uses
/// the rescaled activations.
pub(crate) fn effective_weights(w_hat: &Matrix, m_hat: &Matrix, golden_base: bool) -> Matrix {
    let scale = if golden_base { arithmetic::LN_PHI } else { 1.0 };
    w_hat.zip_map(m_hat, |w, m| (w * scale).tanh() * crate::autodiff::sigmoid(m * scale))
}

fn softmax_cols_matrix(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for c in 0..x.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..x.rows() {
            max = max.max(x.get(r, c));
        }
        let mut denom = 0.0;
        for r in 0..x.rows() {
            let e = (x.get(r, c) - max).exp();
            out.set(r, c, e);
            denom += e;
        }
        for r in 0..x.rows() {
            out.set(r, c, out.get(r, c) / denom);
        }
    }
    out
}

fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new(-bound, bound);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

fn normal_matrix(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(mean, std).expect("valid normal");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Uniform::new(lo, hi);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

fn draw_params(kind: ModuleKind, i: usize, o: usize, hyper: &Hyper, rng: &mut impl Rng) -> Params {
    let t = |m: Matrix| Tensor::new(m, true);
    match kind {
        ModuleKind::NacAdd | ModuleKind::NacMul => Params::Nac {
            w_hat: t(xavier_uniform(i, o, rng)),
            m_hat: t(xavier_uniform(i, o, rng)),
            gate: None,
        },
        ModuleKind::Nalu | ModuleKind::GNalu => Params::Nac {
            w_hat: t(xavier_uniform(i, o, rng)),
            m_hat: t(xavier_uniform(i, o, rng)),
            gate: Some(t(xavier_uniform(i, o, rng))),
        },
        ModuleKind::INalu => Params::INalu {
            w_hat_add: t(normal_matrix(i, o, 1.0, 0.5, rng)),
            m_hat_add: t(normal_matrix(i, o, -1.0, 0.5, rng)),
            w_hat_mul: t(normal_matrix(i, o, 1.0, 0.5, rng)),
            m_hat_mul: t(normal_matrix(i, o, -1.0, 0.5, rng)),
            gate: t(normal_matrix(1, o, 0.0, 0.5, rng)),
        },
        ModuleKind::Nau => {
            let mut w = xavier_uniform(i, o, rng);
            for v in w.as_mut_slice() {
                *v = v.clamp(-1.0, 1.0);
            }
            Params::Linear { w: t(w) }
        }
        ModuleKind::Nmu => Params::Linear { w: t(uniform_matrix(i, o, 0.25, 0.75, rng)) },
        ModuleKind::Npu => Params::Npu {
            w_real: t(xavier_uniform(i, o, rng)),
            w_imag: Some(t(Matrix::zeros(i, o))),
            gate: t(Matrix::filled(1, i, 0.5)),
        },
        ModuleKind::RealNpu => Params::Npu {
            w_real: t(xavier_uniform(i, o, rng)),
            w_imag: None,
            gate: t(Matrix::filled(1, i, 0.5)),
        },
        ModuleKind::Nlrl => Params::Nlrl {
            neg_gate: t(xavier_uniform(i, o, rng)),
            op_weights: t(xavier_uniform(i, o, rng)),
            out_gate: t(xavier_uniform(1, o, rng)),
        },
        ModuleKind::Nsr => {
            let paths = (0..hyper.redundancy.max(1))
                .map(|_| NsrPath {
                    op1_select: t(normal_matrix(i, o, 0.0, 1.0, rng)),
                    op2_select: t(normal_matrix(i, o, 0.0, 1.0, rng)),
                    sign_scale: t(normal_matrix(1, o, 0.0, 1.0, rng)),
                    zero_scale: t(normal_matrix(1, o, 0.0, 1.0, rng)),
                })
                .collect();
            Params::Nsr { paths, shift: t(Matrix::zeros(1, o)) }
        }
    }
}

/// Serialized weight document: kind, shapes, named parameter arrays and
/// hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsDoc {
    pub kind: ModuleKind,
    pub input_size: usize,
    pub output_size: usize,
    pub hyper: Hyper,
    pub params: BTreeMap<String, Matrix>,
}

impl Module {
    pub fn to_doc(&self) -> WeightsDoc {
        let params = self
            .param_names()
            .into_iter()
            .zip(self.params().into_iter().map(|t| t.value.clone()))
            .collect();
        WeightsDoc {
            kind: self.kind,
            input_size: self.input_size,
            output_size: self.output_size,
            hyper: self.hyper.clone(),
            params,
        }
    }

    pub fn from_doc(doc: &WeightsDoc) -> Result<Module> {
        // Draw a skeleton with the right shapes, then overwrite values.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut module = Module::init(doc.kind, doc.input_size, doc.output_size, doc.hyper.clone(), &mut rng);
        let names = module.param_names();
        for (name, tensor) in names.iter().zip(module.params_mut()) {
            let stored = doc
                .params
                .get(name)
                .ok_or_else(|| NalmError::InvalidInput(format!("weight document missing parameter {name}")))?;
            if stored.shape() != tensor.value.shape() {
                return Err(NalmError::InvalidInput(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    tensor.value.shape()
                )));
            }
            tensor.value = stored.clone();
            tensor.zero_grad();
        }
        Ok(module)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Module> {
        let doc: WeightsDoc = serde_json::from_str(s)?;
        Module::from_doc(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_per_seed() {
        for kind in ModuleKind::ALL {
            let h = Hyper::for_kind(kind, None);
            let a = Module::init(kind, 3, 2, h.clone(), &mut ChaCha8Rng::seed_from_u64(7));
            let b = Module::init(kind, 3, 2, h, &mut ChaCha8Rng::seed_from_u64(7));
            assert_eq!(a.params(), b.params(), "{kind} init not deterministic");
        }
    }

    #[test]
    fn nmu_init_within_band() {
        let m = Module::init(ModuleKind::Nmu, 4, 2, Hyper::default(), &mut ChaCha8Rng::seed_from_u64(1));
        for &w in m.params()[0].value.as_slice() {
            assert!((0.25..=0.75).contains(&w));
        }
    }

    #[test]
    fn nau_init_clamped() {
        let m = Module::init(ModuleKind::Nau, 2, 1, Hyper::default(), &mut ChaCha8Rng::seed_from_u64(1));
        for &w in m.params()[0].value.as_slice() {
            assert!((-1.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn weights_json_roundtrip() {
        for kind in ModuleKind::ALL {
            let h = Hyper::for_kind(kind, None);
            let m = Module::init(kind, 3, 2, h, &mut ChaCha8Rng::seed_from_u64(3));
            let json = m.to_json().unwrap();
            let back = Module::from_json(&json).unwrap();
            assert_eq!(m.params(), back.params(), "{kind} roundtrip");
            assert_eq!(m.hyper, back.hyper);
        }
    }

    #[test]
    fn kind_parsing_accepts_aliases() {
        assert_eq!("nac+".parse::<ModuleKind>().unwrap(), ModuleKind::NacAdd);
        assert_eq!("NAC-mul".parse::<ModuleKind>().unwrap(), ModuleKind::NacMul);
        assert_eq!("RealNPU".parse::<ModuleKind>().unwrap(), ModuleKind::RealNpu);
        assert!("frobnicator".parse::<ModuleKind>().is_err());
    }
}
