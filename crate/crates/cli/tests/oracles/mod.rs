//! Exact mixing factor for tiny deployments by full enumeration of the
//! ideal slot process: every transmitter subset, every listener choice and
//! every order of the candidate list.

use aloha_gossip::Deployment;
use nalgebra::{DMatrix, DVector};

fn permutations(items: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn pair_update(n: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut w = DMatrix::identity(n, n);
    for &(i, j) in pairs {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e[j] = -1.0;
        w -= 0.5 * &e * e.transpose();
    }
    w
}

/// `E[Wᵀ Π W]` for access probability `p`, built from explicit matrix products.
pub fn exact_second_moment(d: &Deployment, p: f64) -> DMatrix<f64> {
    let n = d.len();
    assert!(n <= 6, "enumeration is exponential");
    let pi = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut acc = DMatrix::zeros(n, n);
    for mask in 0u32..(1 << n) {
        let is_tx = |i: usize| mask & (1 << i) != 0;
        let k = mask.count_ones() as i32;
        let p_mask = p.powi(k) * (1.0 - p).powi(n as i32 - k);
        if p_mask == 0.0 {
            continue;
        }
        let listeners: Vec<(usize, Vec<usize>)> = (0..n)
            .filter(|&i| !is_tx(i))
            .map(|i| (i, d.neighbors(i).iter().copied().filter(|&j| is_tx(j)).collect::<Vec<_>>()))
            .filter(|(_, opts)| !opts.is_empty())
            .collect();
        let combos: usize = listeners.iter().map(|(_, o)| o.len()).product();
        for c in 0..combos {
            let mut rem = c;
            let cands: Vec<(usize, usize)> = listeners
                .iter()
                .map(|(l, opts)| {
                    let pick = opts[rem % opts.len()];
                    rem /= opts.len();
                    (*l, pick)
                })
                .collect();
            let orders = permutations(&cands);
            let weight = p_mask / combos as f64 / orders.len() as f64;
            for order in orders {
                let mut used = vec![false; n];
                let matching: Vec<(usize, usize)> = order
                    .into_iter()
                    .filter(|&(_, t)| !std::mem::replace(&mut used[t], true))
                    .collect();
                let w = pair_update(n, &matching);
                acc += weight * (w.transpose() * &pi * &w);
            }
        }
    }
    acc
}

/// Largest eigenvalue of `E[Wᵀ Π W]` on the complement of the all-ones
/// vector, by projected power iteration.
pub fn exact_rho(d: &Deployment, p: f64) -> f64 {
    let m = exact_second_moment(d, p);
    let n = d.len();
    let project = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    let mut v = DVector::from_fn(n, |i, _| ((i + 2) as f64).sqrt());
    project(&mut v);
    v.normalize_mut();
    let mut rho = 0.0;
    for _ in 0..200_000 {
        let mut next = &m * &v;
        project(&mut next);
        rho = v.dot(&next);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        next /= norm;
        if (&next - &v).amax() < 1e-15 {
            break;
        }
        v = next;
    }
    rho
}
