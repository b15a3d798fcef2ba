//! Bounded one-dimensional maximisation.

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's method (golden section with parabolic interpolation) for the
/// maximum of `f` on `[lo, hi]`. Terminates when the bracket is narrower
/// than `2 * tol` around the current best point.
///
/// Returns `(argmax, max)`. The end points themselves are never evaluated;
/// use [`maximize_scan`] when the maximum may sit on a bound.
pub fn brent_maximize<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let eps = f64::EPSILON.sqrt() * 1e-3;
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    // Work on -f so the textbook minimisation update applies unchanged.
    let mut fx = -f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol + eps * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = -f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, -fx)
}

/// Maximum of `f` on `[lo, hi]` for functions that may be multimodal or
/// peak on a bound: evaluates `f` on `scan_points` equally spaced nodes
/// (end points included), then refines with Brent inside the two cells
/// adjacent to the best node. The returned point is whichever of the best
/// node and the refined point scores higher.
pub fn maximize_scan<F>(mut f: F, lo: f64, hi: f64, scan_points: usize, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let n = scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..n {
        let x = if i == n - 1 { hi } else { lo + step * i as f64 };
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
            best_i = i;
        }
    }
    let a = if best_i == 0 { lo } else { lo + step * (best_i - 1) as f64 };
    let b = if best_i == n - 1 { hi } else { lo + step * (best_i + 1) as f64 };
    let refined = brent_maximize(&mut f, a, b, tol, 200);
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}
