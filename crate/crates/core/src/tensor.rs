//! Small dense 3×3 tensor helpers, generic over [`Scalar`].
//!
//! Lower-dimensional problems embed into 3×3 with the unused rows and
//! columns set to the identity.

use crate::ad::Scalar;

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];

pub fn zeros<S: Scalar>() -> Mat3<S> {
    [[S::zero(); 3]; 3]
}

pub fn identity<S: Scalar>() -> Mat3<S> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = S::one();
    }
    m
}

pub fn lift<S: Scalar>(m: &Mat3<f64>) -> Mat3<S> {
    m.map(|r| r.map(S::cst))
}

pub fn values<S: Scalar>(m: &Mat3<S>) -> Mat3<f64> {
    m.map(|r| r.map(|x| x.value()))
}

pub fn mul<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut c = zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// `a · bᵀ`
pub fn mul_bt<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut c = zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1] + a[i][2] * b[j][2];
        }
    }
    c
}

pub fn transpose<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let mut t = *a;
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn add<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][j] + b[i][j];
        }
    }
    c
}

pub fn sub<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][j] - b[i][j];
        }
    }
    c
}

pub fn scale<S: Scalar>(a: &Mat3<S>, s: S) -> Mat3<S> {
    a.map(|r| r.map(|x| x * s))
}

pub fn trace<S: Scalar>(a: &Mat3<S>) -> S {
    a[0][0] + a[1][1] + a[2][2]
}

pub fn det<S: Scalar>(a: &Mat3<S>) -> S {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Cofactor matrix, `det(a) · a⁻ᵀ`.
pub fn cofactor<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let mut c = zeros();
    c[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    c[0][1] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    c[0][2] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    c[1][0] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
    c[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
    c[1][2] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
    c[2][0] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
    c[2][1] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
    c[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    c
}

pub fn inverse<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let inv_det = S::one() / det(a);
    transpose(&scale(&cofactor(a), inv_det))
}

pub fn deviator<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let m = trace(a) / 3.0;
    let mut d = *a;
    for (i, row) in d.iter_mut().enumerate() {
        row[i] -= m;
    }
    d
}

pub fn ddot<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> S {
    let mut s = S::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn add_diag<S: Scalar>(a: &Mat3<S>, s: S) -> Mat3<S> {
    let mut c = *a;
    for (i, row) in c.iter_mut().enumerate() {
        row[i] += s;
    }
    c
}

pub fn sym<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (a[i][j] + a[j][i]) * 0.5;
        }
    }
    c
}

pub fn frob_norm(a: &Mat3<f64>) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// True when the out-of-plane couplings (entries (0,2), (1,2), (2,0), (2,1))
/// are structurally zero.
pub fn is_plane<S: Scalar>(a: &Mat3<S>) -> bool {
    a[0][2].is_structural_zero()
        && a[1][2].is_structural_zero()
        && a[2][0].is_structural_zero()
        && a[2][1].is_structural_zero()
}

/// Principal logarithm of a symmetric positive-definite matrix.
///
/// Plane-structured inputs use a closed form for the in-plane 2×2 block that
/// stays smooth through repeated eigenvalues. General inputs use inverse
/// scaling and squaring with Denman–Beavers square roots, which is also
/// smooth everywhere.
pub fn log_spd<S: Scalar>(b: &Mat3<S>) -> Mat3<S> {
    if is_plane(b) {
        let mut out = zeros();
        let l2 = log_spd_2x2(b[0][0], (b[0][1] + b[1][0]) * 0.5, b[1][1]);
        out[0][0] = l2[0];
        out[0][1] = l2[1];
        out[1][0] = l2[1];
        out[1][1] = l2[2];
        out[2][2] = b[2][2].ln();
        out
    } else {
        log_spd_general(b)
    }
}

/// Log of the symmetric 2×2 matrix `[[a, c], [c, d]]`, returned as
/// `[l00, l01, l11]`.
///
/// With `m` the mean eigenvalue and `s` the squared eigenvalue half-gap,
/// `ln B = α I + β B` where `β = g(s/m²)/m`, `g(y) = atanh(√y)/√y` and
/// `α = ½ ln det B − g`. `g` is expanded in a series for small `y`.
pub fn log_spd_2x2<S: Scalar>(a: S, c: S, d: S) -> [S; 3] {
    let m = (a + d) * 0.5;
    let half = (a - d) * 0.5;
    let s = half * half + c * c;
    let y = s / (m * m);
    let g = if y.value() < 1e-3 {
        // Σ y^k / (2k + 1); eight terms reach round-off for y < 1e-3.
        let mut term = S::one();
        let mut sum = S::one();
        for k in 1..8 {
            term *= y;
            sum += term / (2 * k + 1) as f64;
        }
        sum
    } else {
        let r = y.sqrt();
        ((S::one() + r) / (S::one() - r)).ln() * 0.5 / r
    };
    let beta = g / m;
    let det = a * d - c * c;
    let alpha = det.ln() * 0.5 - g;
    [alpha + beta * a, beta * c, alpha + beta * d]
}

fn log_spd_general<S: Scalar>(b: &Mat3<S>) -> Mat3<S> {
    let c = trace(b) / 3.0;
    let mut a = scale(b, S::one() / c);
    let mut k = 0u32;
    while dist_from_identity(&a) > 0.05 && k < 30 {
        a = sqrt_spd(&a);
        k += 1;
    }
    // ln(I + X) = 2 atanh(Z), Z = X (2I + X)⁻¹, all factors commute.
    let x = add_diag(&a, -S::one());
    let z = mul(&x, &inverse(&add_diag(&x, S::cst(2.0))));
    let z2 = mul(&z, &z);
    let mut term = z;
    let mut sum = z;
    for n in 1..8 {
        term = mul(&term, &z2);
        sum = add(&sum, &scale(&term, S::cst(1.0 / (2 * n + 1) as f64)));
    }
    let factor = 2.0 * f64::from(1u32 << k.min(30));
    add_diag(&scale(&sum, S::cst(factor)), c.ln())
}

fn dist_from_identity<S: Scalar>(a: &Mat3<S>) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let t = a[i][j].value() - if i == j { 1.0 } else { 0.0 };
            s += t * t;
        }
    }
    s.sqrt()
}

/// Denman–Beavers square root of an SPD matrix.
pub fn sqrt_spd<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let mut y = *a;
    let mut z = identity::<S>();
    let mut settled = 0;
    for _ in 0..60 {
        let y_next = scale(&add(&y, &inverse(&z)), S::cst(0.5));
        let z_next = scale(&add(&z, &inverse(&y)), S::cst(0.5));
        let change = max_abs_diff(&values(&y_next), &values(&y));
        y = y_next;
        z = z_next;
        // Two extra sweeps after the values settle so the derivatives
        // settle as well.
        if change <= 1e-15 * frob_norm(&values(&y)) {
            settled += 1;
            if settled > 2 {
                break;
            }
        }
    }
    y
}

/// Symmetric eigen-decomposition by cyclic Jacobi (plain `f64`).
/// Returns eigenvalues and eigenvectors as matrix columns.
pub fn sym_eigen(a: &Mat3<f64>) -> ([f64; 3], Mat3<f64>) {
    let mut m = *a;
    let mut v = identity::<f64>();
    for _ in 0..50 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off < 1e-300 || off < 1e-17 * (m[0][0].abs() + m[1][1].abs() + m[2][2].abs()) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q] == 0.0 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = identity::<f64>();
            rot[p][p] = c;
            rot[q][q] = c;
            rot[p][q] = s;
            rot[q][p] = -s;
            m = mul(&transpose(&rot), &mul(&m, &rot));
            v = mul(&v, &rot);
        }
    }
    ([m[0][0], m[1][1], m[2][2]], v)
}

/// Applies a scalar function to the eigenvalues of a symmetric matrix.
pub fn sym_fn(a: &Mat3<f64>, f: impl Fn(f64) -> f64) -> Mat3<f64> {
    let (lam, v) = sym_eigen(a);
    let mut d = zeros::<f64>();
    for i in 0..3 {
        d[i][i] = f(lam[i]);
    }
    mul(&v, &mul_bt(&d, &v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation(ax: f64, ay: f64, az: f64) -> Mat3<f64> {
        let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
        let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
        let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
        mul(&rz, &mul(&ry, &rx))
    }

    #[test]
    fn log_matches_eigen_route() {
        let f = [[1.3, 0.2, 0.1], [-0.1, 0.8, 0.05], [0.02, 0.3, 1.1]];
        let b = mul_bt(&f, &f);
        let reference = sym_fn(&b, f64::ln);
        let l = log_spd(&b);
        assert!(max_abs_diff(&l, &reference) < 1e-13, "{l:?} vs {reference:?}");
    }

    #[test]
    fn plane_log_smooth_through_repeated_eigenvalues() {
        for b in [
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[2.0, 1e-9, 0.0], [1e-9, 2.0, 0.0], [0.0, 0.0, 0.7]],
            [[0.3, 0.1, 0.0], [0.1, 2.5, 0.0], [0.0, 0.0, 1.0]],
        ] {
            let reference = sym_fn(&b, f64::ln);
            assert!(max_abs_diff(&log_spd(&b), &reference) < 1e-14);
        }
    }

    #[test]
    fn rotated_log_is_rotated() {
        let b = [[2.0, 0.3, 0.0], [0.3, 0.5, 0.0], [0.0, 0.0, 1.2]];
        let r = rotation(0.3, -0.7, 1.1);
        let rb = mul_bt(&mul(&r, &b), &r);
        let lhs = log_spd(&rb);
        let rhs = mul_bt(&mul(&r, &log_spd(&b)), &r);
        assert!(max_abs_diff(&lhs, &rhs) < 1e-13);
    }

    #[test]
    fn inverse_and_cofactor() {
        let a = [[2.0, 1.0, 0.0], [0.5, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let prod = mul(&a, &inverse(&a));
        assert!(max_abs_diff(&prod, &identity()) < 1e-15);
    }
}
