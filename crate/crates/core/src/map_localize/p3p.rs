//! Minimal three-point absolute pose solver.
//!
//! Classic distance-based formulation: with bearings `f_i`, unknown depths
//! `s_i` and world distances `d_ij`, the law of cosines gives three quadratics
//! `s_i^2 + s_j^2 - 2 s_i s_j cos_ij = d_ij^2`. Substituting `s_2 = u s_1` and
//! `s_3 = v s_1` eliminates `s_1` and `u`, leaving a quartic in `v`.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

use crate::geometry::Pose;

/// Up to four camera poses consistent with three bearing/point pairs.
///
/// `bearings` are unit vectors in camera coordinates, `points` world coordinates.
pub fn solve(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let [f1, f2, f3] = bearings;
    let [p1, p2, p3] = points;
    let a2 = (p2 - p3).norm_squared(); // opposite p1
    let b2 = (p1 - p3).norm_squared(); // opposite p2
    let c2 = (p1 - p2).norm_squared(); // opposite p3
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let cos_a = f2.dot(f3);
    let cos_b = f1.dot(f3);
    let cos_g = f1.dot(f2);
    let k = (a2 - c2) / b2;
    let cb = c2 / b2;

    // u(v) = N(v) / D(v)
    let num = [1.0 + k, -2.0 * k * cos_b, k - 1.0];
    let den = [2.0 * cos_g, -2.0 * cos_a];
    let base = [1.0, -2.0 * cos_b, 1.0]; // 1 + v^2 - 2 v cos_b

    // D^2 + N^2 - 2 cos_g N D - cb * base * D^2 = 0
    let d2 = poly_mul(&den, &den);
    let mut quartic = [0.0; 5];
    add_into(&mut quartic, &d2, 1.0);
    add_into(&mut quartic, &poly_mul(&num, &num), 1.0);
    add_into(&mut quartic, &poly_mul(&num, &den), -2.0 * cos_g);
    add_into(&mut quartic, &poly_mul(&base, &d2), -cb);

    let mut poses = Vec::new();
    for v in real_roots_quartic(&quartic) {
        let d = den[0] + den[1] * v;
        if d.abs() < 1e-12 {
            continue;
        }
        let u = (num[0] + num[1] * v + num[2] * v * v) / d;
        let denom = 1.0 + v * v - 2.0 * v * cos_b;
        if denom <= 0.0 || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / denom).sqrt();
        let local = [f1 * s1, f2 * (u * s1), f3 * (v * s1)];
        if let Some(pose) = align_triangles(points, &local) {
            poses.push(pose);
        }
    }
    poses
}

/// Rigid transform mapping the world triangle onto the camera-frame triangle.
fn align_triangles(world: &[Vector3<f64>; 3], local: &[Vector3<f64>; 3]) -> Option<Pose> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(1e-12)?;
        let e3 = e1.cross(&(p[2] - p[0])).try_normalize(1e-12)?;
        let e2 = e3.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, e3]))
    };
    let fw = frame(world)?;
    let fl = frame(local)?;
    let r = fl * fw.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = local[0] - rotation * world[0];
    Some(Pose::from_rt(rotation, t))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn add_into(acc: &mut [f64; 5], p: &[f64], scale: f64) {
    for (i, v) in p.iter().enumerate() {
        acc[i] += scale * v;
    }
}

fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots of `c0 + c1 x + c2 x^2 + c3 x^3 + c4 x^4`, via companion-matrix
/// eigenvalues polished with Newton steps.
pub(crate) fn real_roots_quartic(c: &[f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let degree = (0..5).rev().find(|&i| c[i].abs() > 1e-14 * scale).unwrap_or(0);
    let candidates: Vec<f64> = match degree {
        0 => Vec::new(),
        1 => vec![-c[0] / c[1]],
        _ => {
            // companion matrix of the monic polynomial, padded to 4x4 for lower degrees
            let mut m = Matrix4::<f64>::zeros();
            let lead = c[degree];
            for i in 1..degree {
                m[(i, i - 1)] = 1.0;
            }
            for i in 0..degree {
                m[(i, degree - 1)] = -c[i] / lead;
            }
            m.complex_eigenvalues()
                .iter()
                .take(4)
                .filter(|z| z.im.abs() <= 1e-5 * (1.0 + z.re.abs()))
                .map(|z| z.re)
                .collect()
        }
    };
    // For degree < 4 the padded companion matrix contributes spurious zero
    // eigenvalues; they are discarded by the residual check below.
    let deriv: Vec<f64> = (1..5).map(|i| c[i] * i as f64).collect();
    let mut roots: Vec<f64> = Vec::new();
    for mut x in candidates {
        for _ in 0..8 {
            let fx = eval(c, x);
            let dfx = eval(&deriv, x);
            if dfx.abs() < 1e-300 {
                break;
            }
            let step = fx / dfx;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let magnitude: f64 = c.iter().enumerate().map(|(i, ci)| (ci * x.powi(i as i32)).abs()).sum();
        if eval(c, x).abs() <= 1e-8 * magnitude.max(1e-300) && !roots.iter().any(|r| (r - x).abs() < 1e-12) {
            roots.push(x);
        }
    }
    roots
}
