//! Special functions used by the analytic densities and characteristic
//! functions.

use std::f64::consts::PI;

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// `Vol(B_R)` in `R^d`.
pub fn ball_volume(d: usize, radius: f64) -> f64 {
    unit_ball_volume(d) * radius.powi(d as i32)
}

/// Riemann zeta at an integer argument `s >= 2` (Euler-Maclaurin, 64 terms).
pub fn zeta(s: u32) -> f64 {
    assert!(s >= 2, "zeta diverges at s = {s}");
    const N: u32 = 64;
    // B_2, B_4, B_6, B_8, B_10 divided by (2j)!
    const B: [f64; 5] = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0];
    let sf = s as f64;
    let nf = N as f64;
    let mut sum: f64 = (1..N).rev().map(|n| (n as f64).powf(-sf)).sum();
    sum += nf.powf(1.0 - sf) / (sf - 1.0) + 0.5 * nf.powf(-sf);
    let mut rising = sf; // s (s+1) ... (s + 2j - 2)
    for (j, b) in B.iter().enumerate() {
        sum += b * rising * nf.powf(-sf - 2.0 * j as f64 - 1.0);
        rising *= (sf + 2.0 * j as f64 + 1.0) * (sf + 2.0 * j as f64 + 2.0);
    }
    sum
}

/// Bessel function of the first kind of order zero.
pub fn bessel_j0(x: f64) -> f64 {
    bessel_j(0, x)
}

/// Bessel function of the first kind of order one.
pub fn bessel_j1(x: f64) -> f64 {
    bessel_j(1, x)
}

/// `J_n(x)` for small integer orders: power series below 12, Hankel
/// expansion truncated at its smallest term above.
pub fn bessel_j(order: u32, x: f64) -> f64 {
    let sign = if x < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
    let x = x.abs();
    let nu = order as f64;
    if x < 12.0 {
        let half = 0.5 * x;
        let q = half * half;
        let mut term = half.powi(order as i32) / (1..=order).map(|k| k as f64).product::<f64>();
        let mut sum = term;
        let mut k = 1.0;
        while k < 200.0 {
            term *= -q / (k * (k + nu));
            sum += term;
            if term.abs() <= 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        sign * sum
    } else {
        let mu = 4.0 * nu * nu;
        let mut p = 1.0;
        let mut qsum = 0.0;
        let mut term = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..80 {
            let kf = k as f64;
            let odd = (2.0 * kf - 1.0).powi(2);
            term *= (mu - odd) / (kf * 8.0 * x);
            if term.abs() >= prev || term.abs() < 1e-17 {
                break;
            }
            prev = term.abs();
            // term = a_k(nu) / x^k; P takes even k with (-1)^{k/2}, Q odd k with (-1)^{(k-1)/2}.
            match k % 4 {
                0 => p += term,
                1 => qsum += term,
                2 => p -= term,
                _ => qsum -= term,
            }
        }
        let phase = x - 0.5 * nu * PI - 0.25 * PI;
        sign * (2.0 / (PI * x)).sqrt() * (p * phase.cos() - qsum * phase.sin())
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((ball_volume(2, 10.0) - 100.0 * PI).abs() < 1e-11);
    }

    #[test]
    fn zeta_closed_forms() {
        assert!((zeta(2) - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(4) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(3) - 1.202_056_903_159_594_2).abs() < 1e-14);
    }

    #[test]
    fn bessel_matches_integral_representation() {
        // J_n(x) = (1/pi) * int_0^pi cos(n t - x sin t) dt, evaluated with a
        // fine Gauss-Legendre composite rule.
        let gl = gauss_legendre(20);
        for (n, x) in [0u32, 1]
            .into_iter()
            .flat_map(|n| [0.0, 0.5, 2.404_825_557_695_773, 7.3, 11.9, 12.1, 30.0, 157.0].map(move |x| (n, x)))
        {
            let panels = 200;
            let h = PI / panels as f64;
            let mut acc = 0.0;
            for k in 0..panels {
                let a = k as f64 * h;
                for &(t, w) in &gl {
                    let s = a + 0.5 * h * (t + 1.0);
                    acc += 0.5 * h * w * (n as f64 * s - x * s.sin()).cos();
                }
            }
            let want = acc / PI;
            let got = bessel_j(n, x);
            assert!((got - want).abs() < 1e-12, "n={n} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(10);
        let w: f64 = rule.iter().map(|r| r.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        let x18: f64 = rule.iter().map(|(x, w)| w * x.powi(18)).sum();
        assert!((x18 - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }
}
