//! Module-level gradient checking: random parameter/input draws kept away
//! from the non-differentiable spots, compared against central differences.

use super::{Hyper, Module, ModuleKind};
use crate::autodiff::{check_gradients, GradCheckReport, Graph};
use crate::error::Result;
use crate::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference check of one module forward at the given input, probed
/// through an MSE-against-zero loss.
pub fn grad_check_module(module: &Module, x: &Matrix, step: f64) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let xid = g.input(x);
    let bound = module.forward(&mut g, xid)?;
    let out_cols = g.value(bound.output).cols();
    let target = g.input(&Matrix::zeros(x.rows(), out_cols));
    let loss = g.mse(bound.output, target)?;
    check_gradients(&mut g, loss, step)
}

/// Worst relative error over `draws` random configurations of one kind.
///
/// Inputs keep |x| > 0.5 (NLRL inputs stay inside (0.5, 0.95]) and parameter
/// magnitudes stay in [0.1, 0.9], clear of clamp boundaries and the |w| kink
/// in the sign-correction product.
pub fn grad_check_kind(kind: ModuleKind, draws: usize, step: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input_size, output_size, batch) = (3, 2, 4);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let mut module = Module::init(kind, input_size, output_size, Hyper::for_kind(kind, None), &mut rng);
        randomize_safely(&mut module, &mut rng);
        let x = safe_input(kind, batch, input_size, &mut rng);
        let report = grad_check_module(&module, &x, step)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

pub fn safe_input(kind: ModuleKind, rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = if kind == ModuleKind::Nlrl {
                rng.gen_range(0.55..0.95)
            } else {
                let mag = rng.gen_range(0.5..3.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            };
            m.set(r, c, v);
        }
    }
    m
}

pub fn randomize_safely(module: &mut Module, rng: &mut impl Rng) {
    let kind = module.kind;
    let names = module.param_names();
    for (name, tensor) in names.iter().zip(module.params_mut()) {
        let positive_only = (kind == ModuleKind::Nmu && name == "w")
            || ((kind == ModuleKind::Npu || kind == ModuleKind::RealNpu) && name == "gate");
        for v in tensor.value.as_mut_slice() {
            let mag = rng.gen_range(0.1..0.9);
            *v = if positive_only || rng.gen_bool(0.5) { mag } else { -mag };
        }
    }
}
