//! Symbolic readout of trained weights.
//!
//! Converged modules are transparent: each effective weight has a direct
//! operation-level reading (+1 add/multiply, -1 subtract/divide, 0 ignore;
//! fractional powers for the NPU family). This renders that reading as text,
//! flagging any weight that is not within tolerance of its discrete set.

use super::{effective_weights, Module, ModuleKind, Params};
use crate::autodiff::sigmoid;
use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct Extraction {
    /// One rendered expression per output element, `y<o> = ...`.
    pub expressions: Vec<String>,
    /// Set when some weight was not close enough to a discrete value to
    /// snap (fractional NPU powers do not count).
    pub non_discrete: bool,
}

impl std::fmt::Display for Extraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for line in &self.expressions {
            writeln!(f, "{line}")?;
        }
        if self.non_discrete {
            writeln!(f, "warning: non-discrete weights present")?;
        }
        Ok(())
    }
}

/// Renders the learned expression of every output element.
pub fn extract_expression(module: &Module, tolerance: f64) -> Extraction {
    let mut non_discrete = false;
    let mut expressions = Vec::with_capacity(module.output_size);
    for o in 0..module.output_size {
        let body = match (&module.params, module.kind) {
            (Params::Nac { w_hat, m_hat, gate: None }, ModuleKind::NacAdd) => {
                let w = effective_weights(&w_hat.value, &m_hat.value, false);
                additive(&w, o, tolerance, &mut non_discrete)
            }
            (Params::Nac { w_hat, m_hat, gate: None }, _) => {
                let w = effective_weights(&w_hat.value, &m_hat.value, false);
                multiplicative(&w, o, tolerance, &mut non_discrete)
            }
            (Params::Nac { w_hat, m_hat, gate: Some(_) }, kind) => {
                let w = effective_weights(&w_hat.value, &m_hat.value, kind == ModuleKind::GNalu);
                let add = additive(&w, o, tolerance, &mut non_discrete);
                let mul = multiplicative(&w, o, tolerance, &mut non_discrete);
                // The gate depends on the input, so both paths are reported.
                format!("gate(x) ? ({add}) : ({mul})")
            }
            (Params::INalu { w_hat_add, m_hat_add, w_hat_mul, m_hat_mul, gate }, _) => {
                let g = sigmoid(gate.value.get(0, o));
                if g > 1.0 - tolerance {
                    let w = effective_weights(&w_hat_add.value, &m_hat_add.value, false);
                    additive(&w, o, tolerance, &mut non_discrete)
                } else if g < tolerance {
                    let w = effective_weights(&w_hat_mul.value, &m_hat_mul.value, false);
                    multiplicative(&w, o, tolerance, &mut non_discrete)
                } else {
                    non_discrete = true;
                    let wa = effective_weights(&w_hat_add.value, &m_hat_add.value, false);
                    let wm = effective_weights(&w_hat_mul.value, &m_hat_mul.value, false);
                    let add = additive(&wa, o, tolerance, &mut non_discrete);
                    let mul = multiplicative(&wm, o, tolerance, &mut non_discrete);
                    format!("{g:.3}*({add}) + {:.3}*({mul})", 1.0 - g)
                }
            }
            (Params::Linear { w }, ModuleKind::Nau) => additive(&w.value, o, tolerance, &mut non_discrete),
            (Params::Linear { w }, _) => nmu_product(&w.value, o, tolerance, &mut non_discrete),
            (Params::Npu { w_real, w_imag, gate }, _) => {
                npu_powers(&w_real.value, w_imag.as_ref().map(|t| &t.value), &gate.value, o, tolerance, &mut non_discrete)
            }
            (Params::Nlrl { neg_gate, op_weights, out_gate }, _) => {
                nlrl_rule(&neg_gate.value, &op_weights.value, &out_gate.value, module.hyper.nlrl_full, o, tolerance, &mut non_discrete)
            }
            (Params::Nsr { paths, shift }, _) => {
                nsr_comparison(paths, &shift.value, o, tolerance, &mut non_discrete)
            }
        };
        expressions.push(format!("y{o} = {body}"));
    }
    Extraction { expressions, non_discrete }
}

fn snap(w: f64, targets: &[f64], tol: f64) -> Option<f64> {
    targets.iter().copied().find(|t| (w - t).abs() <= tol)
}

/// Sum of +/- input terms; zero weights drop out, an empty sum is "0".
fn additive(w: &Matrix, o: usize, tol: f64, non_discrete: &mut bool) -> String {
    let mut terms: Vec<String> = Vec::new();
    for i in 0..w.rows() {
        let v = w.get(i, o);
        match snap(v, &[-1.0, 0.0, 1.0], tol) {
            Some(0.0) => {}
            Some(t) if t > 0.0 => terms.push(format!("+ x{i}")),
            Some(_) => terms.push(format!("- x{i}")),
            None => {
                *non_discrete = true;
                terms.push(format!("+ {v:.3}*x{i}"));
            }
        }
    }
    render_signed(terms, "0")
}

/// Product/quotient of inputs; zero weights drop out, an empty product is "1".
fn multiplicative(w: &Matrix, o: usize, tol: f64, non_discrete: &mut bool) -> String {
    let mut num: Vec<String> = Vec::new();
    let mut den: Vec<String> = Vec::new();
    for i in 0..w.rows() {
        let v = w.get(i, o);
        match snap(v, &[-1.0, 0.0, 1.0], tol) {
            Some(0.0) => {}
            Some(t) if t > 0.0 => num.push(format!("x{i}")),
            Some(_) => den.push(format!("x{i}")),
            None => {
                *non_discrete = true;
                num.push(format!("x{i}^{v:.3}"));
            }
        }
    }
    render_ratio(num, den)
}

/// NMU factors: weight 1 keeps the input, 0 drops it, anything else is the
/// literal interpolation factor.
fn nmu_product(w: &Matrix, o: usize, tol: f64, non_discrete: &mut bool) -> String {
    let mut factors: Vec<String> = Vec::new();
    for i in 0..w.rows() {
        let v = w.get(i, o);
        match snap(v, &[0.0, 1.0], tol) {
            Some(0.0) => {}
            Some(_) => factors.push(format!("x{i}")),
            None => {
                *non_discrete = true;
                factors.push(format!("({v:.3}*x{i} + {:.3})", 1.0 - v));
            }
        }
    }
    if factors.is_empty() {
        "1".to_string()
    } else {
        factors.join(" * ")
    }
}

/// Products of powers; gate-deselected inputs drop out, fractional powers are
/// legitimate and rendered as exponents.
fn npu_powers(
    w_re: &Matrix,
    w_im: Option<&Matrix>,
    gate: &Matrix,
    o: usize,
    tol: f64,
    non_discrete: &mut bool,
) -> String {
    let mut num: Vec<String> = Vec::new();
    let mut den: Vec<String> = Vec::new();
    for i in 0..w_re.rows() {
        let g = gate.get(0, i).clamp(0.0, 1.0);
        if g <= tol {
            continue;
        }
        if g < 1.0 - tol {
            *non_discrete = true;
        }
        let v = w_re.get(i, o);
        match snap(v, &[-1.0, 0.0, 1.0], tol) {
            Some(0.0) => {}
            Some(t) if t > 0.0 => num.push(format!("x{i}")),
            Some(_) => den.push(format!("x{i}")),
            None => num.push(format!("x{i}^{v:.3}")),
        }
        if let Some(im) = w_im {
            if im.get(i, o).abs() > tol {
                *non_discrete = true;
                num.push(format!("[imag x{i}^{:.3}]", im.get(i, o)));
            }
        }
    }
    render_ratio(num, den)
}

fn nlrl_rule(
    neg_gate: &Matrix,
    op_weights: &Matrix,
    out_gate: &Matrix,
    full: bool,
    o: usize,
    tol: f64,
    non_discrete: &mut bool,
) -> String {
    let mut args: Vec<String> = Vec::new();
    for i in 0..op_weights.rows() {
        let a = op_weights.get(i, o);
        let negated = sigmoid(neg_gate.get(i, o));
        let lit = if negated > 1.0 - tol {
            format!("!x{i}")
        } else if negated < tol {
            format!("x{i}")
        } else {
            *non_discrete = true;
            format!("~x{i}")
        };
        match snap(a, &[0.0, 1.0], tol) {
            Some(0.0) => {}
            Some(_) => args.push(lit),
            None => {
                *non_discrete = true;
                args.push(format!("{lit}^{a:.3}"));
            }
        }
    }
    let and = if args.is_empty() { "1".to_string() } else { format!("AND({})", args.join(", ")) };
    let t = sigmoid(out_gate.get(0, o));
    if full {
        if t < tol {
            and
        } else {
            *non_discrete = true;
            format!("mix[{t:.2}] of {and} and OR-path")
        }
    } else if t > 1.0 - tol {
        format!("NOT {and}")
    } else if t < tol {
        and
    } else {
        *non_discrete = true;
        format!("mix[{t:.2}] of {and} and NOT {and}")
    }
}

fn nsr_comparison(paths: &[super::NsrPath], shift: &Matrix, o: usize, tol: f64, non_discrete: &mut bool) -> String {
    let mut parts = Vec::new();
    for (p, path) in paths.iter().enumerate() {
        let sel1 = dominant_row(&path.op1_select.value, o, tol, non_discrete);
        let sel2 = dominant_row(&path.op2_select.value, o, tol, non_discrete);
        parts.push(format!(
            "path{p}: sign(x{sel1} - x{sel2})*{:.3} + zero(x{sel1} - x{sel2})*{:.3}",
            path.sign_scale.value.get(0, o),
            path.zero_scale.value.get(0, o)
        ));
    }
    format!("sigmoid({} + {:.3})", parts.join(" + "), shift.get(0, o))
}

/// Index with the largest softmax mass in column `o`.
fn dominant_row(v: &Matrix, o: usize, tol: f64, non_discrete: &mut bool) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let mut denom = 0.0;
    for i in 0..v.rows() {
        let e = v.get(i, o).exp();
        denom += e;
        if v.get(i, o) > best_v {
            best_v = v.get(i, o);
            best = i;
        }
    }
    if best_v.exp() / denom < 1.0 - tol {
        *non_discrete = true;
    }
    best
}

fn render_signed(terms: Vec<String>, empty: &str) -> String {
    if terms.is_empty() {
        return empty.to_string();
    }
    let mut out = String::new();
    for (i, t) in terms.iter().enumerate() {
        if i == 0 {
            // Strip the leading "+ " from the first term.
            out.push_str(t.strip_prefix("+ ").unwrap_or(t));
        } else {
            out.push(' ');
            out.push_str(t);
        }
    }
    out
}

fn render_ratio(num: Vec<String>, den: Vec<String>) -> String {
    let n = if num.is_empty() { "1".to_string() } else { num.join(" * ") };
    if den.is_empty() {
        n
    } else {
        format!("{n} / {}", den.join(" / "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::layers::Hyper;

    fn linear(kind: ModuleKind, w: &[f64]) -> Module {
        Module {
            kind,
            input_size: w.len(),
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Linear { w: Tensor::new(Matrix::col_vec(w), true) },
        }
    }

    #[test]
    fn nau_sub_expression() {
        let e = extract_expression(&linear(ModuleKind::Nau, &[1.0, -1.0, 0.0]), 0.05);
        assert_eq!(e.expressions, vec!["y0 = x0 - x1"]);
        assert!(!e.non_discrete);
    }

    #[test]
    fn nmu_product_expression() {
        let e = extract_expression(&linear(ModuleKind::Nmu, &[1.0, 1.0]), 0.05);
        assert_eq!(e.expressions, vec!["y0 = x0 * x1"]);
    }

    #[test]
    fn nmu_zero_column_is_one() {
        let e = extract_expression(&linear(ModuleKind::Nmu, &[0.0, 0.0]), 0.05);
        assert_eq!(e.expressions, vec!["y0 = 1"]);
    }

    #[test]
    fn realnpu_division_expression() {
        let m = Module {
            kind: ModuleKind::RealNpu,
            input_size: 2,
            output_size: 1,
            hyper: Hyper::default(),
            params: Params::Npu {
                w_real: Tensor::new(Matrix::col_vec(&[1.0, -1.0]), true),
                w_imag: None,
                gate: Tensor::new(Matrix::row_vec(&[1.0, 1.0]), true),
            },
        };
        let e = extract_expression(&m, 0.05);
        assert_eq!(e.expressions, vec!["y0 = x0 / x1"]);
        assert!(!e.non_discrete);
    }

    #[test]
    fn non_discrete_weight_is_flagged() {
        let e = extract_expression(&linear(ModuleKind::Nau, &[0.7, 1.0]), 0.05);
        assert!(e.non_discrete);
        assert!(e.expressions[0].contains("0.700"), "{:?}", e.expressions);
    }
}
