//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use latentnet::network::Network;
use latentnet::{assemble_input, Rating, RatingScale, SparseRatings};

/// Half squared error of one presentation.
pub fn half_error(net: &Network, q: &[f64], user: usize, target: f64) -> f64 {
    let (out, _) = net.forward(q, user).unwrap();
    0.5 * (target - out) * (target - out)
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of the half error with respect to every weight and
/// bias, layer by layer as `(weights[to*inputs+from], biases)`.
pub fn fd_weight_gradient(net: &Network, q: &[f64], user: usize, target: f64, step: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for k in 0..net.weights().layers().len() {
        let layer = &net.weights().layers()[k];
        let (inputs, outputs) = (layer.inputs(), layer.outputs());
        let mut gw = vec![0.0; inputs * outputs];
        let mut gb = vec![0.0; outputs];
        for to in 0..outputs {
            for from in 0..inputs {
                let w = layer.weight(from, to);
                probe.weights_mut().layers_mut()[k].set_weight(from, to, w + step);
                let up = half_error(&probe, q, user, target);
                probe.weights_mut().layers_mut()[k].set_weight(from, to, w - step);
                let down = half_error(&probe, q, user, target);
                probe.weights_mut().layers_mut()[k].set_weight(from, to, w);
                gw[to * inputs + from] = (up - down) / (2.0 * step);
            }
            let b = layer.bias(to);
            probe.weights_mut().layers_mut()[k].set_bias(to, b + step);
            let up = half_error(&probe, q, user, target);
            probe.weights_mut().layers_mut()[k].set_bias(to, b - step);
            let down = half_error(&probe, q, user, target);
            probe.weights_mut().layers_mut()[k].set_bias(to, b);
            gb[to] = (up - down) / (2.0 * step);
        }
        out.push((gw, gb));
    }
    out
}

/// Central differences with respect to the latent part of the input.
pub fn fd_latent_gradient(
    net: &Network,
    latent: &[f64],
    profile: &[f64],
    user: usize,
    target: f64,
    step: f64,
) -> Vec<f64> {
    let topology = net.topology();
    (0..latent.len())
        .map(|i| {
            let mut v = latent.to_vec();
            v[i] = latent[i] + step;
            let up = half_error(net, &assemble_input(&v, profile, topology).unwrap(), user, target);
            v[i] = latent[i] - step;
            let down = half_error(net, &assemble_input(&v, profile, topology).unwrap(), user, target);
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Mode of the multiset obtained by replicating each rating `weight` times;
/// ties go to the lowest rating.
pub fn brute_force_mode(bins: &[(f64, u64)]) -> f64 {
    let mut expanded = Vec::new();
    for &(r, w) in bins {
        for _ in 0..w {
            expanded.push(r);
        }
    }
    expanded.sort_by(f64::total_cmp);
    let (mut best, mut best_count) = (expanded[0], 0);
    let mut start = 0;
    while start < expanded.len() {
        let end = start + expanded[start..].iter().take_while(|&&x| x == expanded[start]).count();
        if end - start > best_count {
            best = expanded[start];
            best_count = end - start;
        }
        start = end;
    }
    best
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[col + 1 + offset] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Least-squares fit of `x_ic = v_i . w_c + b_c` to a full matrix by
/// alternating exact solves; returns the reconstruction RMSE.
pub fn alternating_least_squares_rmse(rows: &[Vec<f64>], rank: usize, sweeps: usize) -> f64 {
    let (m, n) = (rows.len(), rows[0].len());
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..rank).map(|k| ((i * 7 + k * 3) as f64 * 0.61).sin()).collect())
        .collect();
    let mut w = vec![vec![0.0; rank + 1]; n];
    for _ in 0..sweeps {
        for (c, wc) in w.iter_mut().enumerate() {
            let mut a = vec![vec![0.0; rank + 1]; rank + 1];
            let mut b = vec![0.0; rank + 1];
            for (i, vi) in v.iter().enumerate() {
                let x: Vec<f64> = vi.iter().copied().chain([1.0]).collect();
                for p in 0..=rank {
                    for q in 0..=rank {
                        a[p][q] += x[p] * x[q];
                    }
                    b[p] += x[p] * rows[i][c];
                }
            }
            for (p, row) in a.iter_mut().enumerate() {
                row[p] += 1e-12;
            }
            *wc = solve(a, b);
        }
        for (i, vi) in v.iter_mut().enumerate() {
            let mut a = vec![vec![0.0; rank]; rank];
            let mut b = vec![0.0; rank];
            for (c, wc) in w.iter().enumerate() {
                for p in 0..rank {
                    for q in 0..rank {
                        a[p][q] += wc[p] * wc[q];
                    }
                    b[p] += wc[p] * (rows[i][c] - wc[rank]);
                }
            }
            for (p, row) in a.iter_mut().enumerate() {
                row[p] += 1e-12;
            }
            *vi = solve(a, b);
        }
    }
    let mut sum = 0.0;
    for i in 0..m {
        for c in 0..n {
            let pred: f64 = (0..rank).map(|k| v[i][k] * w[c][k]).sum::<f64>() + w[c][rank];
            sum += (rows[i][c] - pred).powi(2);
        }
    }
    (sum / (m * n) as f64).sqrt()
}

pub fn dense(rows: &[Vec<f64>], scale: RatingScale) -> SparseRatings {
    let triples = rows
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(u, &value)| Rating {
                item: i as u32,
                user: u as u32,
                value,
            })
        })
        .collect();
    SparseRatings::new(triples, rows.len(), rows[0].len(), scale).unwrap()
}

/// Noiseless rank-2 matrix with entries inside `[0.05, 0.95]`.
pub fn rank_two(m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| {
            let a = [(0.37 * i as f64).sin(), (0.91 * i as f64).cos()];
            (0..n)
                .map(|u| {
                    let b = [(0.53 * u as f64).cos(), (1.3 * u as f64).sin()];
                    0.5 + 0.25 * a[0] * b[0] + 0.2 * a[1] * b[1]
                })
                .collect()
        })
        .collect()
}
