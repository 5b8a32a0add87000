//! Centered uniform B-splines and their derivatives.

/// Binomial coefficient for small arguments.
fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Centered B-spline of degree `d`, supported on `|t| < (d+1)/2`.
pub fn basis(d: u32, t: f64) -> f64 {
    let a = t.abs();
    match d {
        0 => {
            if (-0.5..0.5).contains(&t) {
                1.0
            } else {
                0.0
            }
        }
        1 => (1.0 - a).max(0.0),
        2 => {
            if a < 0.5 {
                0.75 - a * a
            } else if a < 1.5 {
                let r = 1.5 - a;
                0.5 * r * r
            } else {
                0.0
            }
        }
        3 => {
            if a < 1.0 {
                2.0 / 3.0 - a * a + 0.5 * a * a * a
            } else if a < 2.0 {
                let r = 2.0 - a;
                r * r * r / 6.0
            } else {
                0.0
            }
        }
        _ => {
            let half = f64::from(d + 1) / 2.0;
            if a >= half {
                return 0.0;
            }
            // truncated-power form
            let mut acc = 0.0;
            for j in 0..=d + 1 {
                let x = t + half - f64::from(j);
                if x > 0.0 {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binomial(d + 1, j) * x.powi(d as i32);
                }
            }
            acc / factorial(d)
        }
    }
}

/// First derivative of [`basis`].
pub fn basis_d1(d: u32, t: f64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    basis(d - 1, t + 0.5) - basis(d - 1, t - 0.5)
}

/// Second derivative of [`basis`] (zero almost everywhere for `d < 2`).
pub fn basis_d2(d: u32, t: f64) -> f64 {
    if d < 2 {
        return 0.0;
    }
    basis(d - 2, t + 1.0) - 2.0 * basis(d - 2, t) + basis(d - 2, t - 1.0)
}

/// Dilated basis `beta(t / h)`.
pub fn basis_scaled(d: u32, h: f64, t: f64) -> f64 {
    basis(d, t / h)
}
