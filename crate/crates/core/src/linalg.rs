//! Exact linear algebra over the rationals.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::rational::{as_natural, format_rational, Rational};

/// Solves `m · x = b` by Gaussian elimination with exact pivots.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut m: Vec<Vec<Rational>>, mut b: Vec<Rational>) -> Result<Vec<Rational>> {
    let n = b.len();
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::Construction(format!("system is not square ({n} unknowns)")));
    }
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return Err(Error::Construction(format!("singular system at column {col}")));
        };
        m.swap(col, p);
        b.swap(col, p);
        let inv = m[col][col].recip();
        for k in col..n {
            m[col][k] = &m[col][k] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let f = m[r][col].clone();
            for k in col..n {
                let d = &f * &m[col][k];
                m[r][k] -= d;
            }
            let d = &f * &b[col];
            b[r] -= d;
        }
    }
    Ok(b)
}

/// Coefficients `c` of the polynomial with `Σ_j c_j x_k^j = y_k` at distinct
/// nodes, via Newton divided differences expanded into monomial form.
pub fn vandermonde_solve(xs: &[Rational], ys: &[Rational]) -> Result<Vec<Rational>> {
    let n = xs.len();
    if ys.len() != n {
        return Err(Error::Construction("node and value counts differ".into()));
    }
    let mut dd = ys.to_vec();
    for level in 1..n {
        for k in (level..n).rev() {
            let den = &xs[k] - &xs[k - level];
            if den.is_zero() {
                return Err(Error::Construction("repeated interpolation node".into()));
            }
            dd[k] = (&dd[k] - &dd[k - 1]) / den;
        }
    }
    // Horner on the Newton form: p = dd0 + (x-x0)(dd1 + (x-x1)(...)).
    let mut coeffs: Vec<Rational> = vec![Rational::zero(); n];
    for k in (0..n).rev() {
        // coeffs <- coeffs * (x - xs[k]) + dd[k]
        let mut next = vec![Rational::zero(); n];
        for j in 0..n {
            if coeffs[j].is_zero() {
                continue;
            }
            if j + 1 < n {
                next[j + 1] += &coeffs[j];
            }
            next[j] -= &coeffs[j] * &xs[k];
        }
        next[0] += &dd[k];
        coeffs = next;
    }
    Ok(coeffs)
}

/// Checks that every entry is a natural number.
pub fn to_naturals(values: &[Rational], what: &str) -> Result<Vec<BigUint>> {
    values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            as_natural(v).ok_or_else(|| {
                Error::Construction(format!(
                    "{what}: entry {j} is {} where a natural number is required",
                    format_rational(v)
                ))
            })
        })
        .collect()
}

pub fn identity(n: usize) -> Vec<Vec<Rational>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Rational::one() } else { Rational::zero() })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{from_int, ratio};
    use proptest::prelude::*;

    #[test]
    fn small_system() {
        let m = vec![vec![ratio(1, 2), ratio(1, 2)], vec![ratio(1, 3), ratio(1, 6)]];
        let x = solve(m, vec![from_int(1), ratio(1, 2)]).unwrap();
        assert_eq!(x, vec![from_int(1), from_int(1)]);
    }

    #[test]
    fn singular_is_reported() {
        let m = vec![vec![from_int(1), from_int(2)], vec![from_int(2), from_int(4)]];
        assert!(solve(m, vec![from_int(1), from_int(2)]).is_err());
    }

    #[test]
    fn naturals_reject_fractions() {
        assert!(to_naturals(&[ratio(1, 2)], "x").is_err());
        assert!(to_naturals(&[from_int(-1)], "x").is_err());
        assert_eq!(to_naturals(&[from_int(3)], "x").unwrap(), vec![BigUint::from(3u8)]);
    }

    proptest! {
        #[test]
        fn interpolation_recovers_polynomial(coeffs in proptest::collection::vec(-50i64..50, 1..8)) {
            let n = coeffs.len();
            let xs: Vec<Rational> = (1..=n as i64).map(from_int).collect();
            let ys: Vec<Rational> = xs
                .iter()
                .map(|x| coeffs.iter().rev().fold(Rational::zero(), |acc, &c| acc * x + from_int(c)))
                .collect();
            let got = vandermonde_solve(&xs, &ys).unwrap();
            let want: Vec<Rational> = coeffs.iter().map(|&c| from_int(c)).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn gauss_inverts_product(a in proptest::collection::vec(-9i64..10, 9), x in proptest::collection::vec(-9i64..10, 3)) {
            let m: Vec<Vec<Rational>> = (0..3).map(|i| (0..3).map(|j| from_int(a[3 * i + j] + if i == j { 40 } else { 0 })).collect()).collect();
            let x: Vec<Rational> = x.into_iter().map(from_int).collect();
            let b: Vec<Rational> = m.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
            prop_assert_eq!(solve(m, b).unwrap(), x);
        }
    }
}
