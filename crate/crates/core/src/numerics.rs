//! Small numerical kernels shared by the sampler and the oracle:
//! adaptive Simpson quadrature, a safeguarded Newton minimizer for strictly
//! convex one-dimensional functions, and a stable log-sum-exp reduction.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("adaptive quadrature failed to converge on [{a}, {b}] (tol {tol}, max depth {max_depth})")]
    QuadratureNoConvergence {
        a: f64,
        b: f64,
        tol: f64,
        max_depth: u32,
    },
    #[error("minimizer failed to converge after {iters} iterations (last bracket [{lo}, {hi}])")]
    MinimizerNoConvergence { iters: u32, lo: f64, hi: f64 },
}

/// Adaptive Simpson integration of `f` over [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, NumericsError> {
    const MAX_DEPTH: u32 = 40;
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, (f64, f64)> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err((a, b));
        }
        let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Ok(l + r)
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH).map_err(|_| {
        NumericsError::QuadratureNoConvergence {
            a,
            b,
            tol,
            max_depth: MAX_DEPTH,
        }
    })
}

/// Minimize a strictly convex C^2 function given its derivative, starting from
/// a bracket [lo, hi] with g(lo) <= 0 <= g(hi). Newton steps are clipped to the
/// shrinking bracket (bisection fallback), so convergence is guaranteed for
/// curvature bounded away from zero.
pub fn minimize_convex<G, H>(g: G, h: H, mut lo: f64, mut hi: f64) -> Result<f64, NumericsError>
where
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    const MAX_ITERS: u32 = 200;
    debug_assert!(lo <= hi);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERS {
        let gx = g(x);
        if gx.abs() < 1e-13 || hi - lo < 1e-14 * (1.0 + x.abs()) {
            return Ok(x);
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = gx / h(x);
        let newton = x - step;
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(NumericsError::MinimizerNoConvergence {
        iters: MAX_ITERS,
        lo,
        hi,
    })
}

/// log(sum exp(x_i)) computed against the running maximum; returns -inf for
/// an empty slice. The result is invariant (to rounding) under permutation.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}
