//! Forward definitions for the nine arithmetic module kinds.
//!
//! All of them map a batch x I input to a batch x O output through some
//! combination of an additive path `x . W` and a multiplicative path built in
//! log space, `exp(ln(|x| + eps) . W)`. The weight matrix W is either learned
//! directly under clamping (NAU, NMU) or constructed as tanh(w_hat) *
//! sigmoid(m_hat), which biases entries toward {-1, 0, 1}: within a path, +1
//! selects add/multiply, -1 subtract/divide, 0 ignores the input.

use super::{Bound, Module, ModuleKind, Params};
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;

/// ln of the golden ratio; the G-NALU's activations rescale by this so the
/// sigmoid/tanh transitions are smoother than with the natural base.
pub const LN_PHI: f64 = 0.481_211_825_059_603_47;

pub(crate) fn forward(module: &Module, g: &mut Graph, x: NodeId) -> Result<Bound> {
    let eps = module.hyper.eps_log;
    match (&module.params, module.kind) {
        (Params::Nac { w_hat, m_hat, gate: None }, kind) => {
            let wh = g.param(w_hat);
            let mh = g.param(m_hat);
            let w_eff = effective(g, wh, mh, false)?;
            let out = match kind {
                ModuleKind::NacAdd => additive_path(g, x, w_eff)?,
                ModuleKind::NacMul => multiplicative_path(g, x, w_eff, eps)?,
                _ => unreachable!("gateless Nac params only back NAC+ and NAC*"),
            };
            Ok(Bound { output: out, leaves: vec![wh, mh] })
        }
        (Params::Nac { w_hat, m_hat, gate: Some(gate) }, kind) => {
            let golden = kind == ModuleKind::GNalu;
            let wh = g.param(w_hat);
            let mh = g.param(m_hat);
            let gt = g.param(gate);
            let w_eff = effective(g, wh, mh, golden)?;
            let add = additive_path(g, x, w_eff)?;
            // The golden-ratio power and its matching log base cancel, so the
            // multiplicative path reduces to the natural-base form for both.
            let mul = multiplicative_path(g, x, w_eff, eps)?;
            let gate_logits = g.matmul(x, gt)?;
            let gate_logits = if golden { g.scale(gate_logits, LN_PHI) } else { gate_logits };
            let gate_open = g.sigmoid(gate_logits);
            let out = mix(g, gate_open, add, mul)?;
            Ok(Bound { output: out, leaves: vec![wh, mh, gt] })
        }
        (Params::INalu { w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate }, _) => {
            let wha = g.param(w_hat_add);
            let mha = g.param(m_hat_add);
            let whm = g.param(w_hat_mul);
            let mhm = g.param(m_hat_mul);
            let gt = g.param(gate);

            let w_add = effective(g, wha, mha, false)?;
            let w_mul = effective(g, whm, mhm, false)?;
            let add = additive_path(g, x, w_add)?;

            // Multiplicative path: eps floor inside the log, and the summed
            // log terms are capped at omega before exponentiation.
            let ax = g.abs(x);
            let floored = g.clamp(ax, eps, f64::INFINITY);
            let lnx = g.ln(floored)?;
            let summed = g.matmul(lnx, w_mul)?;
            let capped = g.clamp_max(summed, module.hyper.omega);
            let mul = g.exp(capped);

            // Sign correction: product over inputs of sign(x_i)*|w| + 1 - |w|,
            // so unselected inputs contribute a factor of 1.
            let sx = g.sign(x);
            let w_mag = g.abs(w_mul);
            let sign_fix = g.gated_prod(sx, w_mag)?;
            let mul_signed = g.mul(mul, sign_fix)?;

            // Input-independent gate: one sigmoid logit per output element.
            let gate_open = g.sigmoid(gt);
            let gate_closed = g.one_minus(gate_open);
            let add_part = g.mul_row_vec(add, gate_open)?;
            let mul_part = g.mul_row_vec(mul_signed, gate_closed)?;
            let out = g.add(add_part, mul_part)?;
            Ok(Bound { output: out, leaves: vec![wha, mha, whm, mhm, gt] })
        }
        (Params::Linear { w }, ModuleKind::Nau) => {
            let wp = g.param(w);
            let out = g.matmul(x, wp)?;
            Ok(Bound { output: out, leaves: vec![wp] })
        }
        (Params::Linear { w }, ModuleKind::Nmu) => {
            // prod_i (w*x + 1 - w): weight 1 multiplies the input in, weight 0
            // replaces it with the multiplicative identity.
            let wp = g.param(w);
            let out = g.gated_prod(x, wp)?;
            Ok(Bound { output: out, leaves: vec![wp] })
        }
        (Params::Npu { w_real, w_imag, gate }, _) => {
            let wr = g.param(w_real);
            let gt = g.param(gate);
            let mut leaves = vec![wr];

            // Relevance gate in [0, 1]; gated inputs map toward the
            // multiplicative identity: r = gate*(|x| + eps) + (1 - gate).
            let gate_c = g.clamp(gt, 0.0, 1.0);
            let ax = g.abs(x);
            let shifted = g.add_scalar(ax, eps - 1.0);
            let gated = g.mul_row_vec(shifted, gate_c)?;
            let r = g.add_scalar(gated, 1.0);
            let ln_r = g.ln(r)?;
            // Complex phase per input: pi * gate where the input is negative.
            let mask = g.neg_mask_pi(x);
            let k = g.mul_row_vec(mask, gate_c)?;

            let re = g.matmul(ln_r, wr)?;
            let k_re = g.matmul(k, wr)?;
            let out = if let Some(w_imag) = w_imag {
                let wi = g.param(w_imag);
                leaves.push(wi);
                let k_im = g.matmul(k, wi)?;
                let im = g.matmul(ln_r, wi)?;
                let mag = g.sub(re, k_im)?;
                let phase = g.add(im, k_re)?;
                let e = g.exp(mag);
                let c = g.cos(phase);
                g.mul(e, c)?
            } else {
                let e = g.exp(re);
                let c = g.cos(k_re);
                g.mul(e, c)?
            };
            leaves.push(gt);
            Ok(Bound { output: out, leaves })
        }
        _ => unreachable!("parameter family does not match an arithmetic kind"),
    }
}

/// tanh(w_hat) * sigmoid(m_hat), optionally with the golden-ratio base.
fn effective(g: &mut Graph, w_hat: NodeId, m_hat: NodeId, golden: bool) -> Result<NodeId> {
    let (wh, mh) = if golden {
        (g.scale(w_hat, LN_PHI), g.scale(m_hat, LN_PHI))
    } else {
        (w_hat, m_hat)
    };
    let t = g.tanh(wh);
    let s = g.sigmoid(mh);
    g.mul(t, s)
}

fn additive_path(g: &mut Graph, x: NodeId, w_eff: NodeId) -> Result<NodeId> {
    g.matmul(x, w_eff)
}

/// exp(ln(|x| + eps) . W). Strictly positive, which is exactly why a sign
/// correction or retrieval mechanism is needed for negative targets.
fn multiplicative_path(g: &mut Graph, x: NodeId, w_eff: NodeId, eps: f64) -> Result<NodeId> {
    let ax = g.abs(x);
    let shifted = g.add_scalar(ax, eps);
    let lnx = g.ln(shifted)?;
    let summed = g.matmul(lnx, w_eff)?;
    Ok(g.exp(summed))
}

/// gate*a + (1 - gate)*m, element-wise over batch x O.
fn mix(g: &mut Graph, gate: NodeId, add: NodeId, mul: NodeId) -> Result<NodeId> {
    let closed = g.one_minus(gate);
    let a = g.mul(gate, add)?;
    let m = g.mul(closed, mul)?;
    g.add(a, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::layers::Hyper;
    use crate::matrix::Matrix;

    /// Logit magnitude large enough that tanh/sigmoid saturate exactly in f64.
    pub(crate) const SAT: f64 = 40.0;

    /// NALU with hand-set saturated logits so the effective weights are
    /// exactly [1, -1, 0] and the gate is pinned.
    fn golden_nalu(gate_open: bool, eps: f64) -> Module {
        let w_hat = Matrix::col_vec(&[SAT, -SAT, 0.0]);
        let m_hat = Matrix::col_vec(&[SAT, SAT, -SAT]);
        // Positive inputs make x . gate_col large positive (or negative).
        let gate = Matrix::col_vec(&[if gate_open { SAT } else { -SAT }, 0.0, 0.0]);
        let hyper = Hyper { eps_log: eps, ..Hyper::default() };
        Module {
            kind: ModuleKind::Nalu,
            input_size: 3,
            output_size: 1,
            hyper,
            params: Params::Nac {
                w_hat: Tensor::new(w_hat, true),
                m_hat: Tensor::new(m_hat, true),
                gate: Some(Tensor::new(gate, true)),
            },
        }
    }

    #[test]
    fn nalu_worked_example_additive() {
        // x = [2, 3, 4], effective weights [1, -1, 0], open gate: 2 - 3 = -1.
        let m = golden_nalu(true, 0.0);
        let y = m.forward_matrix(&Matrix::row_vec(&[2.0, 3.0, 4.0])).unwrap();
        assert!((y.get(0, 0) - (-1.0)).abs() < 1e-9, "got {}", y.get(0, 0));
    }

    #[test]
    fn nalu_worked_example_multiplicative() {
        // Same weights through the log-exp path: 2^1 * 3^-1 * 4^0 = 2/3.
        let m = golden_nalu(false, 0.0);
        let y = m.forward_matrix(&Matrix::row_vec(&[2.0, 3.0, 4.0])).unwrap();
        assert!((y.get(0, 0) - 2.0 / 3.0).abs() < 1e-9, "got {}", y.get(0, 0));
    }

    #[test]
    fn nac_mul_loses_input_sign() {
        let w_hat = Matrix::col_vec(&[SAT, SAT]);
        let m_hat = Matrix::col_vec(&[SAT, SAT]);
        let m = Module {
            kind: ModuleKind::NacMul,
            input_size: 2,
            output_size: 1,
            hyper: Hyper { eps_log: 0.0, ..Hyper::default() },
            params: Params::Nac { w_hat: Tensor::new(w_hat, true), m_hat: Tensor::new(m_hat, true), gate: None },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[-2.0, 3.0])).unwrap();
        assert!((y.get(0, 0) - 6.0).abs() < 1e-9, "sign should be dropped, got {}", y.get(0, 0));
    }

    #[test]
    fn nau_linear_combination() {
        let m = Module {
            kind: ModuleKind::Nau,
            input_size: 2,
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Linear { w: Tensor::new(Matrix::col_vec(&[1.0, -1.0]), true) },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[5.0, 3.0])).unwrap();
        assert_eq!(y.get(0, 0), 2.0);
    }

    #[test]
    fn nmu_identity_for_unselected_inputs() {
        let m = Module {
            kind: ModuleKind::Nmu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Linear { w: Tensor::new(Matrix::col_vec(&[1.0, 0.0]), true) },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[2.0, 3.0])).unwrap();
        assert_eq!(y.get(0, 0), 2.0);
        let half = Module {
            kind: ModuleKind::Nmu,
            input_size: 1,
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Linear { w: Tensor::new(Matrix::col_vec(&[0.5]), true) },
        };
        let y = half.forward_matrix(&Matrix::row_vec(&[2.0])).unwrap();
        assert_eq!(y.get(0, 0), 1.5);
    }

    #[test]
    fn realnpu_sign_retrieval() {
        // w_real [1, 1], gates open, x = [-2, 3]: cos(pi) recovers the minus.
        let m = Module {
            kind: ModuleKind::RealNpu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper { eps_log: 0.0, ..Hyper::default() },
            params: Params::Npu {
                w_real: Tensor::new(Matrix::col_vec(&[1.0, 1.0]), true),
                w_imag: None,
                gate: Tensor::new(Matrix::row_vec(&[1.0, 1.0]), true),
            },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[-2.0, 3.0])).unwrap();
        assert!((y.get(0, 0) - (-6.0)).abs() < 1e-9, "got {}", y.get(0, 0));
        // Two negatives: cos(2*pi) = 1, sign restored to positive.
        let y = m.forward_matrix(&Matrix::row_vec(&[-2.0, -3.0])).unwrap();
        assert!((y.get(0, 0) - 6.0).abs() < 1e-9, "got {}", y.get(0, 0));
    }

    #[test]
    fn realnpu_division_weights() {
        let m = Module {
            kind: ModuleKind::RealNpu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper { eps_log: 0.0, ..Hyper::default() },
            params: Params::Npu {
                w_real: Tensor::new(Matrix::col_vec(&[1.0, -1.0]), true),
                w_imag: None,
                gate: Tensor::new(Matrix::row_vec(&[1.0, 1.0]), true),
            },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[6.0, 3.0])).unwrap();
        assert!((y.get(0, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn npu_square_root_via_fractional_weight() {
        let m = Module {
            kind: ModuleKind::Npu,
            input_size: 1,
            output_size: 1,
            hyper: Hyper { eps_log: 0.0, ..Hyper::default() },
            params: Params::Npu {
                w_real: Tensor::new(Matrix::col_vec(&[0.5]), true),
                w_imag: Some(Tensor::new(Matrix::col_vec(&[0.0]), true)),
                gate: Tensor::new(Matrix::row_vec(&[1.0]), true),
            },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[4.0])).unwrap();
        assert!((y.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn npu_closed_gates_output_one() {
        let m = Module {
            kind: ModuleKind::Npu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Npu {
                w_real: Tensor::new(Matrix::col_vec(&[0.7, -0.3]), true),
                w_imag: Some(Tensor::new(Matrix::col_vec(&[0.2, 0.1]), true)),
                gate: Tensor::new(Matrix::row_vec(&[0.0, 0.0]), true),
            },
        };
        for x in [[3.0, -5.0], [0.4, 0.9], [-1.0, -2.0]] {
            let y = m.forward_matrix(&Matrix::row_vec(&x)).unwrap();
            assert_eq!(y.get(0, 0), 1.0, "closed gates must give exactly 1");
        }
    }

    #[test]
    fn gnalu_base_cancels_in_mul_path() {
        // The golden-ratio activations saturate more slowly (logits are
        // rescaled by ln(phi) < 1), so pin them with larger values.
        let sat = 100.0;
        let w_hat = Matrix::col_vec(&[sat, sat]);
        let m_hat = Matrix::col_vec(&[sat, sat]);
        let gate = Matrix::col_vec(&[-sat, -sat]);
        let m = Module {
            kind: ModuleKind::GNalu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper { eps_log: 0.0, ..Hyper::default() },
            params: Params::Nac {
                w_hat: Tensor::new(w_hat, true),
                m_hat: Tensor::new(m_hat, true),
                gate: Some(Tensor::new(gate, true)),
            },
        };
        let y = m.forward_matrix(&Matrix::row_vec(&[2.0, 3.0])).unwrap();
        assert!((y.get(0, 0) - 6.0).abs() < 1e-9, "got {}", y.get(0, 0));
    }

    #[test]
    fn inalu_sign_correction_values() {
        // x = [-2, 3] with |w| = [1, 1]: sign product is -1.
        // With |w| = [1, 0] the unselected input contributes +1.
        let mk = |w: &[f64]| {
            let mut g = Graph::new();
            let x = g.input(&Matrix::row_vec(&[-2.0, 3.0]));
            let sx = g.sign(x);
            let w = g.input(&Matrix::col_vec(w));
            let out = g.gated_prod(sx, w).unwrap();
            g.value(out).get(0, 0)
        };
        assert_eq!(mk(&[1.0, 1.0]), -1.0);
        assert_eq!(mk(&[1.0, 0.0]), -1.0);
    }
}
