//! Central finite-difference checking of backward gradients, 64-bit only.

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;
/// Below this magnitude relative error is meaningless; compare absolutely.
pub const SMALL_GRAD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Elements compared.
    pub checked: usize,
    /// Worst relative error among gradients large enough to compare relatively.
    pub max_rel_err: f64,
    /// Worst absolute error among near-zero gradients.
    pub max_abs_err: f64,
    /// Human-readable description of each failing element.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients of `loss()` against central differences for
/// every listed leaf. `loss` must rebuild its graph from the leaves' current
/// values on each call; leaves are perturbed in place and restored.
pub fn grad_check<F>(
    leaves: &[(&str, &Tensor<f64>)],
    mut loss: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    for (_, leaf) in leaves {
        leaf.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|(_, leaf)| leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: Vec::new(),
    };
    for ((name, leaf), grads) in leaves.iter().zip(&analytic) {
        let original = leaf.to_vec();
        for i in 0..original.len() {
            let mut bumped = original.clone();
            bumped[i] = original[i] + h;
            leaf.set_data(&bumped)?;
            let up = loss()?.scalar_value()?;
            bumped[i] = original[i] - h;
            leaf.set_data(&bumped)?;
            let down = loss()?.scalar_value()?;
            leaf.set_data(&original)?;

            let fd = (up - down) / (2.0 * h);
            let an = grads[i];
            let magnitude = fd.abs().max(an.abs());
            report.checked += 1;
            if magnitude < SMALL_GRAD {
                let abs_err = (fd - an).abs();
                report.max_abs_err = report.max_abs_err.max(abs_err);
                if abs_err >= ABS_TOL {
                    report
                        .failures
                        .push(format!("{name}[{i}]: analytic {an:e} vs fd {fd:e} (abs)"));
                }
            } else {
                let rel_err = (fd - an).abs() / magnitude;
                report.max_rel_err = report.max_rel_err.max(rel_err);
                if rel_err >= REL_TOL {
                    report
                        .failures
                        .push(format!("{name}[{i}]: analytic {an:e} vs fd {fd:e} (rel)"));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_a_mixed_op_graph() {
        let a = Tensor::leaf(vec![0.3, -0.7, 1.2, 0.4], &[2, 2], true).unwrap();
        let b = Tensor::leaf(vec![0.9, 0.1], &[2], true).unwrap();
        let report = grad_check(
            &[("a", &a), ("b", &b)],
            || Ok(a.mul(&b)?.softplus().add(&a.exp())?.sigmoid().sum_all()?),
            DEFAULT_H,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.checked, 6);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // sum(x * stop(x)): rebuilding the detached copy from the current
        // values each call makes the finite difference see d/dx sum(x^2) =
        // 2x while backward reports x -- a deliberate factor-two bug.
        let x = Tensor::leaf(vec![0.5, -0.25], &[2], true).unwrap();
        let report = grad_check(
            &[("x", &x)],
            || {
                let frozen = Tensor::constant(x.to_vec(), &[2])?;
                Ok(x.mul(&frozen)?.sum_all()?)
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
