//! Fit of the low-dimensional similarity curve `1 / (1 + a·d^{2b})`.

const SAMPLES: usize = 300;

/// Least-squares `(a, b)` matching a plateau of 1 up to `min_dist` followed
/// by exponential decay with the given spread.
pub fn fit_curve(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..SAMPLES)
        .map(|i| 3.0 * spread * i as f64 / (SAMPLES - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();

    // Levenberg-Marquardt on two parameters.
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(&xs, &ys, a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let xp = pow2b(x, b);
            let denom = 1.0 + a * xp;
            let r = 1.0 / denom - y;
            let da = -xp / (denom * denom);
            let db = if x > 0.0 {
                -a * xp * 2.0 * x.ln() / (denom * denom)
            } else {
                0.0
            };
            let j = [da, db];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let m = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let step_b = -(-m[1][0] * jtr[0] + m[0][0] * jtr[1]) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let new_cost = sse(&xs, &ys, na, nb);
                if new_cost < cost {
                    let converged = (cost - new_cost) < 1e-15 * cost.max(1e-300)
                        || (step_a.abs() < 1e-12 && step_b.abs() < 1e-12);
                    a = na;
                    b = nb;
                    cost = new_cost;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = !converged;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn pow2b(x: f64, b: f64) -> f64 {
    if x > 0.0 {
        x.powf(2.0 * b)
    } else {
        0.0
    }
}

fn sse(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = 1.0 / (1.0 + a * pow2b(x, b)) - y;
            r * r
        })
        .sum()
}
