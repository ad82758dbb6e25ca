//! Interval-halving minimization of unimodal functions.
//!
//! Each step probes two points `ε/2` either side of the current midpoint and
//! keeps the part of the interval that must hold the minimum. The interval
//! shrinks as `L_n = (L_{n-1} + ε) / 2`, so the `n`-th probed midpoint lies
//! within `(b - a - ε) / 2^n + ε / 2` of the minimizer.

use super::PitchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichotomySpec {
    pub a: f64,
    pub b: f64,
    /// Separation of the two probe points.
    pub eps: f64,
    pub max_iter: usize,
}

impl DichotomySpec {
    pub fn new(a: f64, b: f64, eps: f64) -> Self {
        Self {
            a,
            b,
            eps,
            max_iter: 200,
        }
    }

    pub fn validate(&self) -> Result<(), PitchError> {
        if !(self.a.is_finite() && self.b.is_finite() && self.a < self.b) {
            return Err(PitchError::InvalidInterval(format!(
                "need a < b, got [{}, {}]",
                self.a, self.b
            )));
        }
        if !(self.eps > 0.0 && self.eps < (self.b - self.a) / 2.0) {
            return Err(PitchError::InvalidInterval(format!(
                "eps {} must lie in (0, (b-a)/2)",
                self.eps
            )));
        }
        Ok(())
    }

    /// Right-hand side of the midpoint error bound after `n` halvings.
    pub fn error_bound(&self, n: usize) -> f64 {
        (self.b - self.a - self.eps) / 2f64.powi(n as i32) + self.eps / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyResult {
    /// Midpoint of the final interval.
    pub x_star: f64,
    pub iterations: usize,
    /// `midpoints[n-1]` is the midpoint probed at step `n`.
    pub midpoints: Vec<f64>,
    /// Final bracketing interval.
    pub interval: (f64, f64),
}

/// Minimizes a unimodal `f` on `[a, b]`; stops once the interval is at most
/// `2ε` wide or after `max_iter` steps.
pub fn dichotomy_minimize<F>(mut f: F, spec: &DichotomySpec) -> Result<DichotomyResult, PitchError>
where
    F: FnMut(f64) -> f64,
{
    spec.validate()?;
    let (mut lo, mut hi) = (spec.a, spec.b);
    let half_eps = spec.eps / 2.0;
    let mut midpoints = Vec::new();
    while hi - lo > 2.0 * spec.eps && midpoints.len() < spec.max_iter {
        let mid = 0.5 * (lo + hi);
        midpoints.push(mid);
        let (x1, x2) = (mid - half_eps, mid + half_eps);
        if f(x1) <= f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    Ok(DichotomyResult {
        x_star: 0.5 * (lo + hi),
        iterations: midpoints.len(),
        midpoints,
        interval: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_parabola() {
        let r = dichotomy_minimize(|x| (x - 3.0).powi(2), &DichotomySpec::new(0.0, 10.0, 1e-6)).unwrap();
        assert!((r.x_star - 3.0).abs() < 1e-5);
        assert!(r.interval.1 - r.interval.0 <= 2e-6);
    }

    #[test]
    fn absolute_value() {
        let r = dichotomy_minimize(f64::abs, &DichotomySpec::new(-1.0, 1.0, 1e-6)).unwrap();
        assert!(r.x_star.abs() < 1e-5);
    }

    #[test]
    fn minimum_at_boundary() {
        let r = dichotomy_minimize(|x| x, &DichotomySpec::new(2.0, 5.0, 1e-4)).unwrap();
        assert!((r.x_star - 2.0).abs() <= 1e-4);
    }

    #[test]
    fn interval_length_recurrence() {
        let spec = DichotomySpec::new(0.0, 1.0, 0.01);
        let r = dichotomy_minimize(|x| (x - 0.3).powi(2), &spec).unwrap();
        let width = r.interval.1 - r.interval.0;
        let n = r.iterations as i32;
        let predicted = (1.0 - 0.01) / 2f64.powi(n) + 0.01;
        assert!((width - predicted).abs() < 1e-12);
    }

    #[test]
    fn iteration_cap() {
        let mut spec = DichotomySpec::new(0.0, 1.0, 1e-9);
        spec.max_iter = 5;
        let r = dichotomy_minimize(|x| x * x, &spec).unwrap();
        assert_eq!(r.iterations, 5);
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(matches!(
            dichotomy_minimize(|x| x, &DichotomySpec::new(1.0, 0.0, 1e-3)),
            Err(PitchError::InvalidInterval(_))
        ));
        assert!(matches!(
            dichotomy_minimize(|x| x, &DichotomySpec::new(0.0, 1.0, 0.6)),
            Err(PitchError::InvalidInterval(_))
        ));
    }
}
