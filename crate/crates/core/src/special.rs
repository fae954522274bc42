//! Modified Bessel functions of the first kind for integer order.

/// `I_k(z)` by the ascending series, stopped once a term drops below 1e-18 of the sum.
pub fn bessel_i(k: i64, z: f64) -> f64 {
    let k = k.unsigned_abs();
    if z == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if z < 0.0 {
        let v = bessel_i(k as i64, -z);
        return if k % 2 == 1 { -v } else { v };
    }
    let half = 0.5 * z;
    let ln_first = k as f64 * half.ln() - ln_factorial(k);
    if ln_first < -745.0 {
        return 0.0;
    }
    let q = half * half;
    let mut term = ln_first.exp();
    let mut sum = term;
    let mut m = 0u64;
    loop {
        m += 1;
        term *= q / (m as f64 * (m + k) as f64);
        sum += term;
        if term < 1e-18 * sum && m as f64 > half {
            break;
        }
        if m > 10_000 {
            break;
        }
    }
    sum
}

pub fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

pub fn factorial(k: u64) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// `sum_p I_{k + side p}(z)`: the coefficient `e^{z cos}` shows on a lattice of `side` points.
pub fn wrapped_bessel_i(k: i64, z: f64, side: usize) -> f64 {
    let s = side as i64;
    let mut sum = bessel_i(k, z);
    for p in 1.. {
        let a = bessel_i(k + s * p, z);
        let b = bessel_i(k - s * p, z);
        sum += a + b;
        if a.abs() + b.abs() <= 1e-20 * sum.abs() || p > 1000 {
            break;
        }
    }
    sum
}
