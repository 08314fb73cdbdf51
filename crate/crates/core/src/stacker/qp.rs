//! Minimize `αᵀ R α` over the probability simplex for a symmetric PSD `R`.
//!
//! Primal active-set method. On each face the objective is minimized by a
//! Newton step in the sum-zero subspace; when the reduced Hessian is singular
//! and the gradient has a component along its null space, the objective is
//! linear along that direction and the step runs to the face boundary.

use faer::{Mat, Side};
use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const ZERO_STEP: f64 = 1e-13;

/// Relative KKT residual of `alpha` for `min αᵀRα` on the simplex. Active
/// coordinates must share a gradient value; inactive ones may only exceed it.
/// The residual is scaled by `‖Rα‖∞`, floored at `√ε · max|R|` so that optima
/// with `Rα ≈ 0` are not judged on rounding noise.
pub fn kkt_residual(r: ArrayView2<'_, f64>, alpha: ArrayView1<'_, f64>) -> f64 {
    let g = r.dot(&alpha);
    let level: f64 = alpha.iter().zip(g.iter()).map(|(a, gi)| a * gi).sum();
    let mut worst: f64 = 0.0;
    for (a, gi) in alpha.iter().zip(g.iter()) {
        if *a > 0.0 {
            worst = worst.max((gi - level).abs());
        } else {
            worst = worst.max(level - gi);
        }
    }
    let floor = f64::EPSILON.sqrt() * r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

pub fn objective(r: ArrayView2<'_, f64>, alpha: ArrayView1<'_, f64>) -> f64 {
    alpha.dot(&r.dot(&alpha))
}

fn validate(r: ArrayView2<'_, f64>) -> Result<f64> {
    let k = r.nrows();
    if k == 0 {
        return Err(Error::invalid("empty matrix: no feature spaces to weight"));
    }
    if r.ncols() != k {
        return Err(Error::shape(format!("R must be square, got {:?}", r.shape())));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("R contains NaN or infinite values"));
    }
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..k {
        for j in 0..i {
            if (r[[i, j]] - r[[j, i]]).abs() > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::invalid(format!("R is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(scale)
}

/// Weights on the simplex minimizing `αᵀ R α`.
pub fn solve_simplex_qp(r: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let scale = validate(r)?;
    let k = r.nrows();
    if k == 1 {
        return Ok(Array1::ones(1));
    }
    let start = (0..k).fold(0, |b, j| if r[[j, j]] < r[[b, b]] { j } else { b });
    let mut alpha = Array1::zeros(k);
    alpha[start] = 1.0;
    if scale == 0.0 {
        return Ok(alpha);
    }
    let rs = r.mapv(|v| v / scale);
    let mut free = vec![start];
    let max_iter = 100 * k + 100;

    for _ in 0..max_iter {
        let g = rs.dot(&alpha);
        let m = free.len();
        let mut stationary = m == 1;
        if m > 1 {
            let (dir, newton) = face_direction(&rs, &free, &g);
            let step_norm = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if step_norm <= ZERO_STEP {
                stationary = true;
            } else {
                let mut t_max = f64::INFINITY;
                let mut blocking = None;
                for (pos, &i) in free.iter().enumerate() {
                    if dir[pos] < 0.0 {
                        let t = alpha[i] / -dir[pos];
                        if t < t_max {
                            t_max = t;
                            blocking = Some(pos);
                        }
                    }
                }
                let t = if newton { t_max.min(1.0) } else { t_max };
                if t.is_finite() {
                    for (pos, &i) in free.iter().enumerate() {
                        alpha[i] += t * dir[pos];
                    }
                    match blocking {
                        Some(pos) if t == t_max => {
                            alpha[free[pos]] = 0.0;
                            free.remove(pos);
                            continue;
                        }
                        _ => stationary = newton,
                    }
                } else {
                    stationary = true;
                }
                if !stationary {
                    continue;
                }
            }
        }
        if stationary {
            let g = rs.dot(&alpha);
            let level = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
            let tol = 1e-12 * g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let entering = (0..k)
                .filter(|i| !free.contains(i))
                .map(|i| (i, g[i] - level))
                .filter(|&(_, gap)| gap < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match entering {
                Some((i, _)) => {
                    free.push(i);
                    free.sort_unstable();
                }
                None => return Ok(finish(alpha)),
            }
        }
    }
    let alpha = finish(alpha);
    if kkt_residual(r, alpha.view()) <= 1e-6 {
        Ok(alpha)
    } else {
        Err(Error::Numerical("simplex QP did not converge".into()))
    }
}

/// Descent direction on the face spanned by `free`, and whether it is a Newton step.
fn face_direction(rs: &ndarray::Array2<f64>, free: &[usize], g: &Array1<f64>) -> (Vec<f64>, bool) {
    let m = free.len();
    let inv_m = 1.0 / m as f64;
    // P = I - 11ᵀ/m projects onto sum-zero directions
    let h_raw = Mat::from_fn(m, m, |a, b| rs[[free[a], free[b]]]);
    let row_mean: Vec<f64> = (0..m).map(|a| (0..m).map(|b| h_raw[(a, b)]).sum::<f64>() * inv_m).collect();
    let all_mean = row_mean.iter().sum::<f64>() * inv_m;
    let h = Mat::from_fn(m, m, |a, b| h_raw[(a, b)] - row_mean[a] - row_mean[b] + all_mean);
    let g_mean = free.iter().map(|&i| g[i]).sum::<f64>() * inv_m;
    let gp: Vec<f64> = free.iter().map(|&i| g[i] - g_mean).collect();

    let evd = h.self_adjoint_eigen(Side::Lower).expect("small symmetric eigendecomposition");
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let top = (0..m).map(|i| vals[i]).fold(0.0f64, f64::max);
    let tol = 1e-11 * top.max(1e-300);

    let mut null_part = vec![0.0; m];
    let mut newton = vec![0.0; m];
    for e in 0..m {
        let coef: f64 = (0..m).map(|a| vecs[(a, e)] * gp[a]).sum();
        if vals[e] <= tol {
            for a in 0..m {
                null_part[a] += coef * vecs[(a, e)];
            }
        } else {
            for a in 0..m {
                newton[a] -= coef / vals[e] * vecs[(a, e)];
            }
        }
    }
    let center = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() * inv_m;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    center(&mut null_part);
    let g_scale = gp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let null_norm = null_part.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if null_norm > 1e-9 * g_scale.max(1e-300) && null_norm > ZERO_STEP {
        (null_part.into_iter().map(|v| -v).collect(), false)
    } else {
        center(&mut newton);
        (newton, true)
    }
}

fn finish(mut alpha: Array1<f64>) -> Array1<f64> {
    alpha.mapv_inplace(|v| v.max(0.0));
    let s = alpha.sum();
    alpha / s
}
