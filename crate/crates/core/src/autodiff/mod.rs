//! Reverse-mode automatic differentiation.
//!
//! Operations on [`Var`] are recorded on a thread-local tape. Each call to
//! [`value_and_grad`] records into its own segment of that tape and discards
//! the segment afterwards, so evaluations on different threads never share a
//! graph and nested calls on one thread are safe.
//!
//! ```
//! use neutra_core::autodiff::value_and_grad;
//! use num_traits::Float;
//!
//! let rec = value_and_grad(|x| x[0].exp() * x[1], &[0.0, 2.0]);
//! assert_eq!(rec.value, 2.0);
//! assert_eq!(rec.gradient, vec![2.0, 1.0]);
//! ```

mod tape;
mod var;

pub use var::Var;

/// Value and gradient of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// A NaN or infinity appeared in the value, the gradient or any recorded
    /// intermediate. The gradient must not be used when this is set.
    pub divergent: bool,
}

impl GradientRecord {
    pub fn is_usable(&self) -> bool {
        !self.divergent
    }
}

/// Evaluate `f` at `theta` and its gradient with one reverse sweep.
pub fn value_and_grad<F>(f: F, theta: &[f64]) -> GradientRecord
where
    F: FnOnce(&[Var]) -> Var,
{
    let mark = tape::mark();
    let inputs: Vec<Var> = theta.iter().map(|&t| Var::input(t)).collect();
    let out = f(&inputs);
    let wrt: Vec<u32> = inputs.iter().map(|v| v.index()).collect();
    let gradient = tape::adjoints(out.index(), &wrt);
    let non_finite = tape::saw_non_finite();
    tape::rewind(mark);
    let value = out.val();
    let divergent =
        non_finite || !value.is_finite() || gradient.iter().any(|g| !g.is_finite());
    GradientRecord {
        value,
        gradient,
        divergent,
    }
}

/// Central finite differences `(f(θ + h e_i) − f(θ − h e_i)) / 2h`.
pub fn finite_difference_grad<F>(f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Dense Jacobian of a vector function, one reverse sweep per output.
pub fn jacobian<F>(f: F, x: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(&[Var]) -> Vec<Var>,
{
    let n_out = {
        let mark = tape::mark();
        let inputs: Vec<Var> = x.iter().map(|&t| Var::input(t)).collect();
        let n = f(&inputs).len();
        tape::rewind(mark);
        n
    };
    (0..n_out)
        .map(|row| value_and_grad(|v| f(v)[row], x).gradient)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Real;
    use num_traits::Float;
    use proptest::prelude::*;

    #[test]
    fn square() {
        let r = value_and_grad(|x| x[0] * x[0], &[3.0]);
        assert_eq!(r.value, 9.0);
        assert_eq!(r.gradient, vec![6.0]);
        assert!(!r.divergent);
    }

    #[test]
    fn product_rule() {
        let r = value_and_grad(|x| x[0].exp() * x[1], &[0.0, 2.0]);
        assert_eq!(r.value, 2.0);
        assert_eq!(r.gradient, vec![2.0, 1.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let r = value_and_grad(|_| Var::constant(4.2), &[1.0, -2.0, 3.0]);
        assert_eq!(r.value, 4.2);
        assert_eq!(r.gradient, vec![0.0; 3]);
    }

    #[test]
    fn finite_difference_identity_is_unit_vector() {
        let g = finite_difference_grad(|x| x[0], &[0.3, -1.2, 5.0], 1e-4);
        assert!((g[0] - 1.0).abs() < 1e-10);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn finite_difference_quadratic_error() {
        // Central differences are exact for quadratics up to rounding.
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[1];
        let theta = [0.7, -1.3];
        let g = finite_difference_grad(f, &theta, 1e-4);
        let exact = [6.0 * 0.7 + 2.6, -1.4 - 1.3 + 1.0];
        for (a, b) in g.iter().zip(exact) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn non_finite_intermediate_is_flagged() {
        let r = value_and_grad(|x| (x[0] - x[0]).ln() * Var::constant(0.0) + x[0], &[1.0]);
        assert!(r.divergent);
        let r = value_and_grad(|x| (x[0] * Var::constant(1e200)).exp(), &[1.0]);
        assert!(r.divergent);
        let r = value_and_grad(|x| x[0].ln(), &[2.0]);
        assert!(!r.divergent);
    }

    #[test]
    fn nested_sessions_are_isolated() {
        let outer = value_and_grad(
            |x| {
                let inner = value_and_grad(|y| y[0] * y[0] * y[0], &[2.0]);
                assert_eq!(inner.gradient, vec![12.0]);
                x[0] * Var::constant(inner.value)
            },
            &[1.5],
        );
        assert_eq!(outer.value, 12.0);
        assert_eq!(outer.gradient, vec![8.0]);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let f = |x: &[Var]| (x[0].tanh() * x[1].exp() + x[2].sqrt()).ln() - x[1].erf();
        let theta = [0.3, -0.4, 2.0];
        let a = value_and_grad(f, &theta);
        let b = value_and_grad(f, &theta);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        for (x, y) in a.gradient.iter().zip(&b.gradient) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    /// Composite over every supported primitive.
    fn composite<T: Real>(x: &[T]) -> T {
        let a = x[0];
        let b = x[1];
        let c = x[2];
        let s = T::sum(&[a, b, c]);
        let d = T::dot(&[a, b, c], &[c, a, b]);
        (a * b - c / (T::one() + b * b)).exp() * T::cst(0.1)
            + (T::cst(2.0) + a * a).ln()
            + c.tanh()
            + (T::cst(1.5) + b * b).sqrt()
            + a.erf()
            + b.std_normal_cdf()
            + (T::cst(1.0) + c * c).powf(T::cst(0.7))
            + a.powi(3)
            + a.max(b)
            + b.min(c)
            + s * d
    }

    #[test]
    fn composite_matches_finite_differences() {
        for theta in [[0.3, -0.8, 1.1], [-1.2, 0.4, 0.05], [0.9, 0.7, -0.6]] {
            let r = value_and_grad(composite::<Var>, &theta);
            assert!((r.value - composite::<f64>(&theta)).abs() < 1e-13);
            let fd = finite_difference_grad(composite::<f64>, &theta, 1e-5);
            for (g, h) in r.gradient.iter().zip(&fd) {
                assert!((g - h).abs() < 1e-7 * (1.0 + h.abs()), "{g} vs {h}");
            }
        }
    }

    #[test]
    fn jacobian_of_linear_map() {
        let j = jacobian(|x| vec![x[0] + x[1], x[0] * Var::constant(3.0)], &[1.0, 2.0]);
        assert_eq!(j, vec![vec![1.0, 1.0], vec![3.0, 0.0]]);
    }

    fn f1<T: Real>(x: &[T]) -> T {
        x[0].exp() * x[1] + x[1].tanh()
    }
    fn f2<T: Real>(x: &[T]) -> T {
        (x[0] * x[0] + T::one()).ln() - x[1].erf() * x[0]
    }

    proptest! {
        #[test]
        fn gradient_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64,
                              x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let theta = [x, y];
            let g1 = value_and_grad(f1::<Var>, &theta).gradient;
            let g2 = value_and_grad(f2::<Var>, &theta).gradient;
            let combo = value_and_grad(
                |v| Var::constant(a) * f1(v) + Var::constant(b) * f2(v),
                &theta,
            ).gradient;
            for i in 0..2 {
                let expected = a * g1[i] + b * g2[i];
                prop_assert!((combo[i] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
            }
        }
    }
}
