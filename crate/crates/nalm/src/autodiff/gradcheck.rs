//! Central finite-difference checks of analytic gradients.
//!
//! The probe perturbs trainable leaf values directly on the tape and replays
//! the recorded forward, so the numeric side shares no code with `backward`.

use crate::autodiff::graph::{Graph, NodeId};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (leaf position in `trainable_leaves`, row, col) of the worst element.
    pub worst: (usize, usize, usize),
}

/// Compares analytic gradients of `loss` with central differences of step `h`
/// for every trainable leaf element.
///
/// Relative error is |analytic - numeric| / max(1, |numeric|).
pub fn check_gradients(graph: &mut Graph, loss: NodeId, h: f64) -> Result<GradCheckReport> {
    check_gradients_tampered(graph, loss, h, |_, g| g)
}

/// Like [`check_gradients`], with a hook that post-processes each analytic
/// gradient element. Tests use the hook to verify that a corrupted gradient
/// is actually caught; regular callers pass the identity.
pub fn check_gradients_tampered(
    graph: &mut Graph,
    loss: NodeId,
    h: f64,
    tamper: impl Fn(usize, f64) -> f64,
) -> Result<GradCheckReport> {
    graph.backward(loss)?;
    let leaves = graph.trainable_leaves();
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(leaves.len());
    for &leaf in &leaves {
        analytic.push(graph.grad(leaf).as_slice().to_vec());
    }

    let mut max_rel = 0.0;
    let mut worst = (0, 0, 0);
    let mut flat_index = 0usize;
    for (li, &leaf) in leaves.iter().enumerate() {
        let (rows, cols) = graph.value(leaf).shape();
        for r in 0..rows {
            for c in 0..cols {
                let orig = graph.value(leaf).get(r, c);
                graph.set_leaf_value(leaf, r, c, orig + h);
                graph.recompute();
                let up = graph.scalar(loss);
                graph.set_leaf_value(leaf, r, c, orig - h);
                graph.recompute();
                let down = graph.scalar(loss);
                graph.set_leaf_value(leaf, r, c, orig);
                let numeric = (up - down) / (2.0 * h);
                let a = tamper(flat_index, analytic[li][r * cols + c]);
                let rel = (a - numeric).abs() / numeric.abs().max(1.0);
                if rel > max_rel {
                    max_rel = rel;
                    worst = (li, r, c);
                }
                flat_index += 1;
            }
        }
    }
    // Restore the unperturbed forward values.
    graph.recompute();
    Ok(GradCheckReport { max_rel_error: max_rel, worst })
}
