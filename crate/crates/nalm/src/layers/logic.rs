//! Forward definitions for the two logic module kinds.
//!
//! NLRL models boolean rules on inputs in {0, 1} (relaxed to [0, 1] during
//! training) through per-input negation gates and a log-space conjunction.
//! The default form wraps the AND block in a second negation gate, which by
//! De Morgan's laws also covers disjunction without the poorly scaling
//! OR construction; the full OR + output-gate form is available behind
//! `Hyper::nlrl_full`.
//!
//! NSR learns comparisons: two softmax selections pick the operands, and
//! smooth sign/zero bits of their scaled difference are rescaled, shifted and
//! squashed into the probability that the comparison holds. The output keeps
//! the complement alongside, so downstream layers see both branches.

use super::{Bound, Module, Params};
use crate::autodiff::{Graph, NodeId};
use crate::error::{NalmError, Result};

pub(crate) fn forward(module: &Module, g: &mut Graph, x: NodeId) -> Result<Bound> {
    match &module.params {
        Params::Nlrl { neg_gate, op_weights, out_gate } => {
            if let Some(&bad) = g.value(x).as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(NalmError::InvalidInput(format!(
                    "NLRL inputs must lie in [0, 1], got {bad}"
                )));
            }
            let eps = module.hyper.eps_log;
            let ng = g.param(neg_gate);
            let aw = g.param(op_weights);
            let og = g.param(out_gate);

            let mut out_cols = Vec::with_capacity(module.output_size);
            for o in 0..module.output_size {
                // Per-output negation view: x_hat = (1 - s)*x + s*(1 - x).
                let ng_col = g.col_slice(ng, o)?;
                let ng_row = g.transpose(ng_col);
                let s = g.sigmoid(ng_row);
                let s_off = g.one_minus(s);
                let keep = g.mul_row_vec(x, s_off)?;
                let x_flip = g.one_minus(x);
                let negated = g.mul_row_vec(x_flip, s)?;
                let x_hat = g.add(keep, negated)?;

                let a_col = g.col_slice(aw, o)?;
                // Conjunction in log space, like the multiplicative sub-unit.
                let ax = g.abs(x_hat);
                let shifted = g.add_scalar(ax, eps);
                let lnx = g.ln(shifted)?;
                let z_and = {
                    let summed = g.matmul(lnx, a_col)?;
                    g.exp(summed)
                };

                let gate_col = g.col_slice(og, o)?; // 1x1
                let t = g.sigmoid(gate_col);
                let t_off = g.one_minus(t);
                let col = if module.hyper.nlrl_full {
                    // OR path: 1 - prod_i (1 - a*x_hat); gate mixes AND (off)
                    // with OR (on).
                    let x_inv = g.one_minus(x_hat);
                    let prod = g.gated_prod(x_inv, a_col)?;
                    let z_or = g.one_minus(prod);
                    let and_part = g.mul_row_vec(z_and, t_off)?;
                    let or_part = g.mul_row_vec(z_or, t)?;
                    g.add(and_part, or_part)?
                } else {
                    // Second negation gate around the AND block.
                    let z_not = g.one_minus(z_and);
                    let and_part = g.mul_row_vec(z_and, t_off)?;
                    let neg_part = g.mul_row_vec(z_not, t)?;
                    g.add(and_part, neg_part)?
                };
                out_cols.push(col);
            }
            let output = g.hstack(&out_cols)?;
            Ok(Bound { output, leaves: vec![ng, aw, og] })
        }
        Params::Nsr { paths, shift } => {
            let lambda = module.hyper.lambda_nsr;
            let mut leaves = Vec::with_capacity(paths.len() * 4 + 1);
            let mut z_total: Option<NodeId> = None;
            for path in paths {
                let v1 = g.param(&path.op1_select);
                let v2 = g.param(&path.op2_select);
                let ws = g.param(&path.sign_scale);
                let wz = g.param(&path.zero_scale);
                leaves.extend([v1, v2, ws, wz]);

                let s1 = g.softmax_cols(v1);
                let s2 = g.softmax_cols(v2);
                let op1 = g.matmul(x, s1)?;
                let op2 = g.matmul(x, s2)?;
                let diff = g.sub(op1, op2)?;
                let scaled = g.scale(diff, lambda);

                // Smooth sign and zero bits of the difference.
                let sign_bit = g.tanh(scaled);
                let sq = g.mul(sign_bit, sign_bit)?;
                let zero_bit = g.affine(sq, -2.0, 1.0);

                let s_part = g.mul_row_vec(sign_bit, ws)?;
                let z_part = g.mul_row_vec(zero_bit, wz)?;
                let z_path = g.add(s_part, z_part)?;
                z_total = Some(match z_total {
                    None => z_path,
                    Some(acc) => g.add(acc, z_path)?,
                });
            }
            let sh = g.param(shift);
            leaves.push(sh);
            let z_acc = z_total.expect("NSR always has at least one path");
            let z = g.add_row_vec(z_acc, sh)?;
            let truth = g.sigmoid(z);
            let complement = g.one_minus(truth);

            // Output columns: the O truth values, then their complements.
            let mut cols = Vec::with_capacity(2 * module.output_size);
            for o in 0..module.output_size {
                cols.push(g.col_slice(truth, o)?);
            }
            for o in 0..module.output_size {
                cols.push(g.col_slice(complement, o)?);
            }
            let output = g.hstack(&cols)?;
            Ok(Bound { output, leaves })
        }
        _ => unreachable!("parameter family does not match a logic kind"),
    }
}
