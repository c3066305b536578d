//! Modal Legendre basis on the master cell [-1, 1]^dim.
//!
//! The 2D basis is the tensor product `P_i(xi) P_j(eta)` with the local index
//! running x-fastest: `l = j * (p + 1) + i`.

/// `(P_n(x), P_n'(x))` by the three-term recurrences.
pub fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut pm, mut p) = (1.0, x); // P_0, P_1
    let (mut dm, mut d) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let pn = ((2.0 * kf + 1.0) * x * p - kf * pm) / (kf + 1.0);
        let dn = dm + (2.0 * kf + 1.0) * p;
        pm = p;
        p = pn;
        dm = d;
        d = dn;
    }
    (p, d)
}

/// Values and derivatives of `P_0 .. P_p` at `x`, appended to the given
/// buffers (cleared first).
pub fn legendre_all(p: usize, x: f64, vals: &mut Vec<f64>, derivs: &mut Vec<f64>) {
    vals.clear();
    derivs.clear();
    vals.push(1.0);
    derivs.push(0.0);
    if p == 0 {
        return;
    }
    vals.push(x);
    derivs.push(1.0);
    for k in 1..p {
        let kf = k as f64;
        let pn = ((2.0 * kf + 1.0) * x * vals[k] - kf * vals[k - 1]) / (kf + 1.0);
        let dn = derivs[k - 1] + (2.0 * kf + 1.0) * vals[k];
        vals.push(pn);
        derivs.push(dn);
    }
}

/// Monomial coefficients of `P_k`, lowest power first. Exact small rationals
/// up to moderate `k`; used by the analytic log-kernel integrals.
pub fn legendre_monomial_coeffs(k: usize) -> Vec<f64> {
    let mut prev = vec![1.0]; // P_0
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0]; // P_1
    for m in 1..k {
        let mf = m as f64;
        // (m+1) P_{m+1} = (2m+1) x P_m - m P_{m-1}
        let mut next = vec![0.0; m + 2];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] += (2.0 * mf + 1.0) * c;
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] -= mf * c;
        }
        for c in next.iter_mut() {
            *c /= mf + 1.0;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Squared L2 norm of `P_k` on [-1, 1]: `2 / (2k + 1)`.
pub fn legendre_norm_sq(k: usize) -> f64 {
    2.0 / (2.0 * k as f64 + 1.0)
}

/// Split a tensor local index into per-axis degrees.
pub fn tensor_split(l: usize, p: usize, dim: usize) -> [usize; 2] {
    if dim == 1 {
        [l, 0]
    } else {
        [l % (p + 1), l / (p + 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_values() {
        // P_2(x) = (3x^2 - 1)/2, P_3(x) = (5x^3 - 3x)/2
        let mut v = Vec::new();
        let mut d = Vec::new();
        legendre_all(3, 0.4, &mut v, &mut d);
        assert!((v[2] - (3.0 * 0.16 - 1.0) / 2.0).abs() < 1e-15);
        assert!((v[3] - (5.0 * 0.064 - 3.0 * 0.4) / 2.0).abs() < 1e-15);
        assert!((d[2] - 3.0 * 0.4).abs() < 1e-15);
        assert!((d[3] - (15.0 * 0.16 - 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn endpoint_values() {
        let mut v = Vec::new();
        let mut d = Vec::new();
        for p in 0..7 {
            legendre_all(6, 1.0, &mut v, &mut d);
            assert_eq!(v[p], 1.0);
            legendre_all(6, -1.0, &mut v, &mut d);
            assert!((v[p] - if p % 2 == 0 { 1.0 } else { -1.0 }).abs() < 1e-13);
        }
    }

    #[test]
    fn pair_matches_all() {
        let mut v = Vec::new();
        let mut d = Vec::new();
        for n in 0..9 {
            for &x in &[-0.9, -0.3, 0.0, 0.5, 0.99] {
                legendre_all(n, x, &mut v, &mut d);
                let (p, dp) = legendre_pair(n, x);
                assert!((p - v[n]).abs() < 1e-14);
                assert!((dp - d[n]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn monomial_coeffs_reproduce_values() {
        for k in 0..8 {
            let c = legendre_monomial_coeffs(k);
            assert_eq!(c.len(), k + 1);
            for &x in &[-1.0, -0.35, 0.2, 0.8, 1.0] {
                let horner: f64 = c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck);
                let (p, _) = legendre_pair(k, x);
                assert!((horner - p).abs() < 1e-13, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn tensor_split_round_trip() {
        let p = 3;
        for l in 0..(p + 1) * (p + 1) {
            let [i, j] = tensor_split(l, p, 2);
            assert_eq!(j * (p + 1) + i, l);
            assert!(i <= p && j <= p);
        }
        assert_eq!(tensor_split(2, 3, 1), [2, 0]);
    }
}
