//! Trapezoid rules over the triangle `t <= t_1 <= t_2 <= T`.

use crate::domain::{Interval, KernelExpr};
use crate::error::{Error, Result};

fn grid(interval: Interval, nodes: usize) -> Result<Vec<f64>> {
    if nodes < 2 {
        return Err(Error::InvalidArgument("quadrature needs at least two nodes per axis".into()));
    }
    let h = interval.length() / (nodes - 1) as f64;
    Ok((0..nodes).map(|i| interval.start + h * i as f64).collect())
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// `∫_t^T ∫_t^x f(x, y) dy dx`, `x` outer.
pub fn integrate_below(f: impl Fn(f64, f64) -> f64, interval: Interval, nodes: usize) -> Result<f64> {
    let xs = grid(interval, nodes)?;
    let outer: Vec<f64> = (0..nodes)
        .map(|i| {
            let ys: Vec<f64> = xs[..=i].iter().map(|&y| f(xs[i], y)).collect();
            trapezoid(&xs[..=i], &ys)
        })
        .collect();
    Ok(trapezoid(&xs, &outer))
}

/// `∫_t^T ∫_y^T f(x, y) dx dy`, `y` outer.
pub fn integrate_above(f: impl Fn(f64, f64) -> f64, interval: Interval, nodes: usize) -> Result<f64> {
    let xs = grid(interval, nodes)?;
    let outer: Vec<f64> = (0..nodes)
        .map(|i| {
            let vals: Vec<f64> = xs[i..].iter().map(|&x| f(x, xs[i])).collect();
            trapezoid(&xs[i..], &vals)
        })
        .collect();
    Ok(trapezoid(&xs, &outer))
}

/// `∫∫_{t_1 < t_2} Φ_1(t_2, t_1) Φ_2(t_1, t_2) dt_1 dt_2`.
pub fn simplex_quadrature(phi1: &KernelExpr, phi2: &KernelExpr, interval: Interval, nodes: usize) -> Result<f64> {
    phi1.validate(2)?;
    phi2.validate(2)?;
    integrate_below(|t2, t1| phi1.eval(&[t2, t1], interval) * phi2.eval(&[t1, t2], interval), interval, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WeightExpr;

    #[test]
    fn polynomial_triangle() {
        // ∫_0^1 ∫_0^x x y dy dx = 1/8, trapezoid error O(h^2).
        let iv = Interval::unit();
        let coarse = (integrate_below(|x, y| x * y, iv, 65).unwrap() - 0.125).abs();
        let fine = (integrate_below(|x, y| x * y, iv, 129).unwrap() - 0.125).abs();
        assert!(coarse < 1e-3);
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn order_swap_on_triangle() {
        let iv = Interval::new(0.5, 2.0).unwrap();
        let f = |x: f64| x.cos();
        let g = |y: f64| (0.3 * y).exp();
        let below = integrate_below(|x, y| f(x) * g(y), iv, 201).unwrap();
        let above = integrate_above(|x, y| f(x) * g(y), iv, 201).unwrap();
        // Both are O(h^2) approximations of the same integral.
        assert!((below - above).abs() < 1e-4, "{below} vs {above}");
    }

    #[test]
    fn simplex_constant_kernel_is_half_square() {
        let iv = Interval::new(0.0, 2.0).unwrap();
        let one = KernelExpr::constant(1.0);
        assert!((simplex_quadrature(&one, &one, iv, 11).unwrap() - 2.0).abs() < 1e-12);
        let s = KernelExpr::separable(vec![WeightExpr::one(), WeightExpr::one()]);
        assert!(simplex_quadrature(&s, &one, iv, 1).is_err());
    }
}
