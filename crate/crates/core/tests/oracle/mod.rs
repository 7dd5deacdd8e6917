//! Exact-arithmetic brute-force reference for the variance estimators.
//!
//! Everything here runs on `BigRational` and deliberately takes the long road:
//! the regression coefficients come from solving the normal equations with a
//! general Gauss-Jordan elimination, the sandwich uses a general k x k matrix
//! product, and the delta-method variance uses the linearized ratio
//! `(r_g - ratio * n_g)` directly rather than the moment expansion. None of it
//! shares code with the `clustervar` crate.

#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite input")
}

pub fn frac(n: i64, d: i64) -> Q {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().expect("representable")
}

#[derive(Debug, Clone)]
pub struct ExactValues {
    pub alpha_hat: Q,
    pub tau_hat: Q,
    pub residuals: Vec<Q>,
    pub bread_inverse: [[Q; 2]; 2],
    pub meat: [[Q; 2]; 2],
    pub sandwich: [[Q; 2]; 2],
    pub var_simplified: Q,
    pub var_delta_pop: Q,
    /// `None` when an arm has fewer than two clusters.
    pub var_delta_sample: Option<Q>,
}

fn gauss_jordan_inverse(m: &[Vec<Q>]) -> Vec<Vec<Q>> {
    let k = m.len();
    let mut aug: Vec<Vec<Q>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            for j in 0..k {
                r.push(if i == j { Q::one() } else { Q::zero() });
            }
            r
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k)
            .find(|&r| !aug[r][col].is_zero())
            .expect("singular design");
        aug.swap(col, pivot);
        let p = aug[col][col].clone();
        for x in aug[col].iter_mut() {
            *x = &*x / &p;
        }
        for r in 0..k {
            if r != col && !aug[r][col].is_zero() {
                let f = aug[r][col].clone();
                let pivot_row = aug[col].clone();
                for (x, p) in aug[r].iter_mut().zip(&pivot_row) {
                    *x = &*x - p * &f;
                }
            }
        }
    }
    aug.into_iter().map(|r| r[k..].to_vec()).collect()
}

fn matmul(a: &[Vec<Q>], b: &[Vec<Q>]) -> Vec<Vec<Q>> {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..inner).fold(Q::zero(), |acc, t| acc + &a[i][t] * &b[t][j]))
                .collect()
        })
        .collect()
}

fn to_arr(m: &[Vec<Q>]) -> [[Q; 2]; 2] {
    [
        [m[0][0].clone(), m[0][1].clone()],
        [m[1][0].clone(), m[1][1].clone()],
    ]
}

/// Linearized delta-method variance of one arm's ratio of means.
fn delta_arm(clusters: &[(Q, Q)], sample: bool) -> Option<Q> {
    let g = clusters.len();
    if g == 0 || (sample && g < 2) {
        return None;
    }
    let gq = Q::from_integer(BigInt::from(g));
    let r_total = clusters.iter().fold(Q::zero(), |a, (r, _)| a + r);
    let n_total = clusters.iter().fold(Q::zero(), |a, (_, n)| a + n);
    let ratio = &r_total / &n_total;
    let n_bar = &n_total / &gq;
    let ss = clusters.iter().fold(Q::zero(), |a, (r, n)| {
        let d = r - &ratio * n;
        a + &d * &d
    });
    let divisor = if sample {
        Q::from_integer(BigInt::from(g - 1))
    } else {
        gq.clone()
    };
    Some(ss / divisor / (gq * &n_bar * &n_bar))
}

/// Brute-force every estimator on `(cluster_id, w, y)` rows.
pub fn exact(rows: &[(&str, u8, f64)]) -> ExactValues {
    let xs: Vec<[Q; 2]> = rows
        .iter()
        .map(|&(_, w, _)| [Q::one(), Q::from_integer(BigInt::from(w))])
        .collect();
    let ys: Vec<Q> = rows.iter().map(|&(_, _, y)| q(y)).collect();

    let mut xtx = vec![vec![Q::zero(); 2]; 2];
    let mut xty = vec![vec![Q::zero()]; 2];
    for (x, y) in xs.iter().zip(&ys) {
        for a in 0..2 {
            for b in 0..2 {
                xtx[a][b] = &xtx[a][b] + &x[a] * &x[b];
            }
            xty[a][0] = &xty[a][0] + &x[a] * y;
        }
    }
    let inv = gauss_jordan_inverse(&xtx);
    let beta = matmul(&inv, &xty);
    let (alpha_hat, tau_hat) = (beta[0][0].clone(), beta[1][0].clone());

    let residuals: Vec<Q> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - &x[0] * &alpha_hat - &x[1] * &tau_hat)
        .collect();

    // cluster -> (score vector, arm, residual sum, outcome sum, size)
    let mut by_cluster: BTreeMap<&str, ([Q; 2], u8, Q, Q, Q)> = BTreeMap::new();
    for ((row, x), e) in rows.iter().zip(&xs).zip(&residuals) {
        let entry = by_cluster.entry(row.0).or_insert_with(|| {
            (
                [Q::zero(), Q::zero()],
                row.1,
                Q::zero(),
                Q::zero(),
                Q::zero(),
            )
        });
        entry.0[0] = &entry.0[0] + &x[0] * e;
        entry.0[1] = &entry.0[1] + &x[1] * e;
        entry.2 = &entry.2 + e;
        entry.3 = &entry.3 + q(row.2);
        entry.4 = &entry.4 + Q::one();
    }

    let mut meat = vec![vec![Q::zero(); 2]; 2];
    for (score, ..) in by_cluster.values() {
        for a in 0..2 {
            for b in 0..2 {
                meat[a][b] = &meat[a][b] + &score[a] * &score[b];
            }
        }
    }
    let sandwich = matmul(&matmul(&inv, &meat), &inv);

    let n_t = Q::from_integer(BigInt::from(rows.iter().filter(|r| r.1 == 1).count()));
    let n_c = Q::from_integer(BigInt::from(rows.iter().filter(|r| r.1 == 0).count()));
    let (mut sst, mut ssc) = (Q::zero(), Q::zero());
    let (mut arm_t, mut arm_c) = (Vec::new(), Vec::new());
    for (_, w, s, r, n) in by_cluster.values() {
        if *w == 1 {
            sst += s * s;
            arm_t.push((r.clone(), n.clone()));
        } else {
            ssc += s * s;
            arm_c.push((r.clone(), n.clone()));
        }
    }
    let var_simplified = sst / (&n_t * &n_t) + ssc / (&n_c * &n_c);
    let var_delta_pop = delta_arm(&arm_t, false).expect("treated arm")
        + delta_arm(&arm_c, false).expect("control arm");
    let var_delta_sample = match (delta_arm(&arm_t, true), delta_arm(&arm_c, true)) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };

    ExactValues {
        alpha_hat,
        tau_hat,
        residuals,
        bread_inverse: to_arr(&inv),
        meat: to_arr(&meat),
        sandwich: to_arr(&sandwich),
        var_simplified,
        var_delta_pop,
        var_delta_sample,
    }
}

/// Relative error of `got` against an exact reference, floored at `floor`.
pub fn rel_err(got: f64, want: &Q, floor: f64) -> f64 {
    let want_f = to_f64(want);
    let diff = (q(got) - want).abs();
    to_f64(&diff) / want_f.abs().max(floor)
}

/// The four-cluster hand instance used throughout the docs and tests.
pub fn d0_rows() -> Vec<(&'static str, u8, f64)> {
    vec![
        ("g1", 1, 1.0),
        ("g1", 1, 0.0),
        ("g2", 1, 1.0),
        ("g3", 0, 0.0),
        ("g3", 0, 0.0),
        ("g4", 0, 1.0),
    ]
}

/// Seeded random cluster-randomized instance as owned `(cluster_id, w, y)` rows.
///
/// Both arms get between 1 and `max_clusters_per_arm` clusters of 1 to 15
/// units. The outcome family is drawn per instance: Bernoulli, uniform on
/// [-10, 10], small integers, or a heavy right tail. Rows are shuffled.
pub fn random_rows(seed: u64, max_clusters_per_arm: usize) -> Vec<(String, u8, f64)> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x05EE_D0F0_AC1E);
    let family = rng.random_range(0..4u8);
    let p: f64 = rng.random_range(0.05..0.95);
    let mut rows = Vec::new();
    for w in [0u8, 1] {
        let clusters = rng.random_range(1..=max_clusters_per_arm);
        for c in 0..clusters {
            let id = format!("{}{c}", if w == 1 { "t" } else { "c" });
            let size = rng.random_range(1..=15);
            let level: f64 = rng.random_range(-1.0..1.0);
            for _ in 0..size {
                let y = match family {
                    0 => f64::from(u8::from(rng.random::<f64>() < p)),
                    1 => rng.random_range(-10.0..10.0) + level,
                    2 => f64::from(rng.random_range(0..100u32)),
                    _ => (3.0 * rng.random::<f64>() + level).exp(),
                };
                rows.push((id.clone(), w, y));
            }
        }
    }
    rows.shuffle(&mut rng);
    rows
}

pub fn borrow_rows(rows: &[(String, u8, f64)]) -> Vec<(&str, u8, f64)> {
    rows.iter().map(|(c, w, y)| (c.as_str(), *w, *y)).collect()
}
