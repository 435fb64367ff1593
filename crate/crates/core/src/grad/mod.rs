//! Reverse-mode gradient engine and finite-difference validation.

pub mod fd;
pub mod tape;

pub use fd::{fd_check, FdReport};
pub use tape::{Node, NodeRange, PoolSlice, Tape};

/// A log-density paired with its gradient, defined on all of `R^d`.
///
/// A value of negative infinity marks a point outside the support; the
/// gradient is only meaningful where the value is finite. Targets that
/// embed Monte-Carlo noise keep it frozen between calls to
/// [`DifferentiableTarget::refresh`], so between refreshes the target is a
/// deterministic function.
pub trait DifferentiableTarget {
    fn dim(&self) -> usize;

    /// Log-density at `x`.
    fn value(&self, x: &[f64]) -> f64;

    /// Log-density and gradient at `x`. When the returned value is not
    /// finite the contents of `grad` are unspecified.
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Advance any internal Monte-Carlo noise to the stream addressed by
    /// `iteration`. Targets without embedded noise ignore this.
    fn refresh(&mut self, iteration: u64) {
        let _ = iteration;
    }
}

/// Convenience target wrapping a closure that builds the density on a tape.
pub struct FnTarget<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> DifferentiableTarget for FnTarget<F>
where
    F: Fn(&mut Tape, NodeRange) -> Node,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut t = Tape::new();
        let r = t.inputs(x);
        let out = (self.f)(&mut t, r);
        t.val(out)
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut t = Tape::new();
        let r = t.inputs(x);
        let out = (self.f)(&mut t, r);
        let v = t.val(out);
        if v.is_finite() {
            t.backward(out);
            grad.copy_from_slice(t.grads(r));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fn_target_quadratic() {
        let target = FnTarget {
            dim: 4,
            f: |t: &mut Tape, x: NodeRange| {
                let d = t.dot_nodes(Node(x.start), Node(x.start), 4);
                t.mul_c(d, -0.5)
            },
        };
        let x = [0.1, -0.4, 2.0, 1.0];
        let mut g = [0.0; 4];
        let v = target.value_and_grad(&x, &mut g);
        assert!((v - -0.5 * (0.01 + 0.16 + 4.0 + 1.0)).abs() < 1e-14);
        for i in 0..4 {
            assert!((g[i] + x[i]).abs() < 1e-14);
        }
    }
}
