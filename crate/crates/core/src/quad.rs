//! Adaptive Simpson quadrature.
//!
//! Every integral in the crate (cumulative hazards, normalizers, hatted
//! coefficients, survival bounds) goes through [`Quadrature::integrate`].
//! The tolerance is absolute and is distributed over subintervals in
//! proportion to their width, so a long smooth tail does not starve a short
//! peaked region of accuracy.

use crate::error::{Error, Result};

/// Adaptive Simpson rule with an absolute tolerance and a cap on the number
/// of subintervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub max_intervals: usize,
    /// Number of equal panels the range is split into before adapting.
    pub initial_panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_intervals: 1 << 20,
            initial_panels: 16,
        }
    }
}

/// Value of an integral together with the accumulated error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
}

impl Quadrature {
    pub fn with_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[lo, hi]`. Reversed bounds flip the sign; an empty
    /// range integrates to zero.
    pub fn integrate<F>(&self, mut f: F, lo: f64, hi: f64) -> Result<Estimate>
    where
        F: FnMut(f64) -> f64,
    {
        if lo == hi {
            return Ok(Estimate {
                value: 0.0,
                error: 0.0,
                intervals: 0,
            });
        }
        if hi < lo {
            let e = self.integrate(f, hi, lo)?;
            return Ok(Estimate {
                value: -e.value,
                ..e
            });
        }
        let width = hi - lo;
        let panels = self.initial_panels.max(1);
        let mut stack: Vec<Panel> = Vec::with_capacity(64);
        let h = width / panels as f64;
        let mut fa = f(lo);
        for k in 0..panels {
            let a = lo + h * k as f64;
            let b = if k + 1 == panels { hi } else { lo + h * (k + 1) as f64 };
            let m = 0.5 * (a + b);
            let fm = f(m);
            let fb = f(b);
            stack.push(Panel {
                a,
                b,
                fa,
                fm,
                fb,
                whole: simpson(a, b, fa, fm, fb),
                tol: self.abs_tol * (b - a) / width,
            });
            fa = fb;
        }

        let mut value = 0.0;
        let mut error = 0.0;
        let mut intervals = panels;
        while let Some(p) = stack.pop() {
            let m = 0.5 * (p.a + p.b);
            let lm = 0.5 * (p.a + m);
            let rm = 0.5 * (m + p.b);
            let flm = f(lm);
            let frm = f(rm);
            let left = simpson(p.a, m, p.fa, flm, p.fm);
            let right = simpson(m, p.b, p.fm, frm, p.fb);
            let diff = left + right - p.whole;
            if !diff.is_finite() {
                return Err(Error::Quadrature {
                    lo,
                    hi,
                    intervals,
                });
            }
            // Lyness criterion; stop splitting once the panel is at the
            // resolution limit of f64.
            let tiny = (p.b - p.a) <= 4.0 * f64::EPSILON * p.a.abs().max(p.b.abs()).max(1.0);
            if diff.abs() <= 15.0 * p.tol || tiny {
                value += left + right + diff / 15.0;
                error += diff.abs() / 15.0;
                continue;
            }
            intervals += 1;
            if intervals > self.max_intervals {
                return Err(Error::Quadrature {
                    lo,
                    hi,
                    intervals,
                });
            }
            let tol = 0.5 * p.tol;
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol,
            });
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                tol,
            });
        }
        Ok(Estimate {
            value,
            error,
            intervals,
        })
    }

    /// Shorthand returning only the value.
    pub fn value<F>(&self, f: F, lo: f64, hi: f64) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.integrate(f, lo, hi).map(|e| e.value)
    }
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Trapezoid rule over a tabulated series `(t_k, y_k)`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(t.len(), y.len());
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum()
}
