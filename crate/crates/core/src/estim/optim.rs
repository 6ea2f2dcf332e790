//! Derivative-free optimisers.

/// Result of a minimisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Hooke–Jeeves pattern search minimising `f` from `x0`.
pub fn hooke_jeeves(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64, max_evals: usize) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut base = x0.to_vec();
    let mut fbase = eval(&base, &mut evals);
    let mut h = step;

    let explore = |point: &[f64], fpoint: f64, h: f64, evals: &mut usize, eval: &mut dyn FnMut(&[f64], &mut usize) -> f64| {
        let mut x = point.to_vec();
        let mut fx = fpoint;
        for i in 0..n {
            let orig = x[i];
            x[i] = orig + h;
            let up = eval(&x, evals);
            if up < fx {
                fx = up;
                continue;
            }
            x[i] = orig - h;
            let down = eval(&x, evals);
            if down < fx {
                fx = down;
                continue;
            }
            x[i] = orig;
        }
        (x, fx)
    };

    while h > tol && evals < max_evals {
        let (x1, f1) = explore(&base, fbase, h, &mut evals, &mut eval);
        if f1 < fbase {
            // Pattern moves while they keep paying off.
            let mut prev = base;
            let mut cur = x1;
            let mut fcur = f1;
            loop {
                if evals >= max_evals {
                    break;
                }
                let pattern: Vec<f64> = cur.iter().zip(&prev).map(|(c, p)| 2.0 * c - p).collect();
                let fp = eval(&pattern, &mut evals);
                let (x2, f2) = explore(&pattern, fp, h, &mut evals, &mut eval);
                if f2 < fcur {
                    prev = cur;
                    cur = x2;
                    fcur = f2;
                } else {
                    break;
                }
            }
            base = cur;
            fbase = fcur;
        } else {
            h *= 0.5;
        }
    }
    Minimum { x: base, value: fbase, evals, converged: h <= tol }
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(c, fc), (d, fd), (x, fx)].into_iter().min_by(|p, q| p.1.total_cmp(&q.1)).unwrap()
}
