//! Deterministic bounded scalar minimization.
//!
//! A uniform scan locates the best grid point, then golden-section search
//! refines inside the two neighbouring scan cells. The scan protects against
//! local minima and against `+inf` plateaus (infeasible parameter regions);
//! golden-section needs no derivatives, so piecewise-smooth objectives such as
//! lattice prices are fine.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSearch {
    pub lo: f64,
    pub hi: f64,
    /// Target width of the final bracket.
    pub tol: f64,
    /// Points in the initial uniform scan, endpoints included.
    pub scan_points: usize,
}

impl ScalarSearch {
    pub fn new(lo: f64, hi: f64, tol: f64) -> Self {
        Self {
            lo,
            hi,
            tol,
            scan_points: 64,
        }
    }

    pub fn with_scan_points(self, scan_points: usize) -> Self {
        Self { scan_points, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub argmin: f64,
    pub value: f64,
    /// Golden-section iterations after the scan.
    pub iterations: usize,
    pub evaluations: usize,
    pub boundary_hit: bool,
}

/// Minimizes `objective` over `[search.lo, search.hi]`.
///
/// Infeasible points may return `+inf`. If every evaluated point is infinite
/// the returned `value` is infinite and the caller decides what that means.
/// A NaN anywhere aborts with the offending abscissa.
pub fn minimize_scalar<F>(mut objective: F, search: &ScalarSearch) -> Result<Minimum>
where
    F: FnMut(f64) -> f64,
{
    let ScalarSearch {
        lo,
        hi,
        tol,
        scan_points,
    } = *search;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidInput(format!("empty search interval [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }

    let mut evaluations = 0usize;
    let mut eval = |x: f64| -> Result<f64> {
        evaluations += 1;
        let v = objective(x);
        if v.is_nan() {
            Err(Error::NanObjective { x })
        } else {
            Ok(v)
        }
    };

    if lo == hi {
        let value = eval(lo)?;
        return Ok(Minimum {
            argmin: lo,
            value,
            iterations: 0,
            evaluations: 1,
            boundary_hit: true,
        });
    }

    let n = scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |i: usize| if i == n - 1 { hi } else { lo + step * i as f64 };

    let mut best_i = 0;
    let mut best_x = lo;
    let mut best_v = f64::INFINITY;
    for i in 0..n {
        let x = grid(i);
        let v = eval(x)?;
        if v < best_v {
            best_i = i;
            best_x = x;
            best_v = v;
        }
    }

    let mut iterations = 0;
    if best_v.is_finite() {
        let (x, v, its) = golden_refine(
            &mut eval,
            grid(best_i.saturating_sub(1)),
            grid((best_i + 1).min(n - 1)),
            tol,
        )?;
        iterations = its;
        if v < best_v {
            best_x = x;
            best_v = v;
        }
    }

    let boundary_hit = best_x - lo <= tol || hi - best_x <= tol;
    Ok(Minimum {
        argmin: best_x,
        value: best_v,
        iterations,
        evaluations,
        boundary_hit,
    })
}

/// Golden-section search on `[a, b]`; returns the better final probe.
pub(crate) fn golden_refine<E>(eval: &mut E, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64, usize)>
where
    E: FnMut(f64) -> Result<f64>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    let mut iterations = 0;
    while b - a > tol && iterations < 500 {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(if fc <= fd {
        (c, fc, iterations)
    } else {
        (d, fd, iterations)
    })
}

/// Minimizes `residual(x)^2` over `[search.lo, search.hi]`.
///
/// `None` marks an infeasible point (objective `+inf`). On top of the scan and
/// golden-section pass of [`minimize_scalar`], every scan cell whose end
/// points have residuals of opposite sign is bisected down to `tol`. That
/// catches roots sitting in valleys narrower than the scan spacing, which
/// golden-section alone can step over. The bracket holding the winner is then
/// bisected to floating-point resolution. The residual is assumed continuous
/// on its feasible set.
pub fn minimize_squared_residual<F>(mut residual: F, search: &ScalarSearch) -> Result<Minimum>
where
    F: FnMut(f64) -> Option<f64>,
{
    let ScalarSearch {
        lo,
        hi,
        tol,
        scan_points,
    } = *search;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidInput(format!("empty search interval [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }

    let mut evaluations = 0usize;
    let mut eval = |x: f64| -> Result<Option<f64>> {
        evaluations += 1;
        match residual(x) {
            Some(r) if r.is_nan() => Err(Error::NanObjective { x }),
            other => Ok(other),
        }
    };
    let square = |r: Option<f64>| r.map_or(f64::INFINITY, |r| r * r);

    if lo == hi {
        let value = square(eval(lo)?);
        return Ok(Minimum {
            argmin: lo,
            value,
            iterations: 0,
            evaluations: 1,
            boundary_hit: true,
        });
    }

    let n = scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |i: usize| if i == n - 1 { hi } else { lo + step * i as f64 };
    let mut scan = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid(i);
        scan.push((x, eval(x)?));
    }

    let mut best = (lo, f64::INFINITY);
    let consider = |best: &mut (f64, f64), x: f64, v: f64| {
        if v < best.1 {
            *best = (x, v);
        }
    };
    for &(x, r) in &scan {
        consider(&mut best, x, square(r));
    }
    let mut iterations = 0;

    // Bisect every sign change of the residual between neighbouring scan points.
    let mut brackets = Vec::new();
    for w in scan.windows(2) {
        let ((a, Some(ra)), (b, Some(rb))) = (w[0], w[1]) else {
            continue;
        };
        if ra == 0.0 || rb == 0.0 || ra.signum() == rb.signum() {
            continue;
        }
        let mut bracket = Bracket::new(a, ra, b);
        iterations += bracket.bisect(&mut eval, |b| b.b - b.a > tol)?;
        consider(&mut best, bracket.best_at, bracket.best);
        brackets.push(bracket);
    }

    // Golden-section around the best scan point covers fits with no exact root.
    let best_i = scan
        .iter()
        .enumerate()
        .min_by(|x, y| square(x.1 .1).total_cmp(&square(y.1 .1)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if square(scan[best_i].1).is_finite() {
        let mut obj = |x: f64| eval(x).map(square);
        let (x, v, its) = golden_refine(
            &mut obj,
            grid(best_i.saturating_sub(1)),
            grid((best_i + 1).min(n - 1)),
            tol,
        )?;
        iterations += its;
        consider(&mut best, x, v);
    }

    // When the best point came from a root bracket, drive that bracket down to
    // floating-point resolution so the residual reaches rounding level.
    if let Some(bracket) = brackets.iter_mut().find(|b| b.best == best.1 && b.best > 0.0) {
        iterations += bracket.bisect(&mut eval, |b| {
            let m = 0.5 * (b.a + b.b);
            m > b.a && m < b.b
        })?;
        consider(&mut best, bracket.best_at, bracket.best);
    }

    let (argmin, value) = best;
    Ok(Minimum {
        argmin,
        value,
        iterations,
        evaluations,
        boundary_hit: argmin - lo <= tol || hi - argmin <= tol,
    })
}

/// A sign-change interval of the residual: `ra` is the residual at `a`, the
/// residual at `b` has the opposite sign.
struct Bracket {
    a: f64,
    ra: f64,
    b: f64,
    /// Smallest squared residual seen inside the bracket, and where.
    best: f64,
    best_at: f64,
}

impl Bracket {
    fn new(a: f64, ra: f64, b: f64) -> Self {
        Self {
            a,
            ra,
            b,
            best: f64::INFINITY,
            best_at: a,
        }
    }

    /// Halves the bracket while `go` holds; returns the number of halvings.
    fn bisect<E, G>(&mut self, eval: &mut E, go: G) -> Result<usize>
    where
        E: FnMut(f64) -> Result<Option<f64>>,
        G: Fn(&Self) -> bool,
    {
        let mut halvings = 0;
        while go(self) && halvings < 2_000 {
            halvings += 1;
            let m = 0.5 * (self.a + self.b);
            let Some(rm) = eval(m)? else { break };
            if rm * rm < self.best {
                self.best = rm * rm;
                self.best_at = m;
            }
            if rm == 0.0 {
                break;
            }
            if rm.signum() == self.ra.signum() {
                self.a = m;
                self.ra = rm;
            } else {
                self.b = m;
            }
        }
        Ok(halvings)
    }
}
