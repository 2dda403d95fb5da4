//! Grid weighting functions: contiguous GIMP and linear hat functions in
//! tensor-product form, plus the block-size rule for seeded differentiation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Scalar;
use crate::tensor::Mat3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("particle half-width {lp} must satisfy 0 < lp < h/2 (h = {h})")]
    HalfWidth { lp: f64, h: f64 },
    #[error(
        "particle domain overflow on axis {axis}: lp = {lp} reaches h/2 = {}; use finer particles or cap the domain",
        h / 2.0
    )]
    DomainOverflow { axis: usize, lp: f64, h: f64 },
    #[error("non-positive det F ({0}) in particle domain update")]
    Inverted(f64),
    #[error("shape function `{0}` is registered for block sizing only")]
    Unimplemented(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFunctionKind {
    Linear,
    #[default]
    Gimp,
    QuadraticBspline,
    CubicBspline,
}

impl ShapeFunctionKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFunctionKind::Linear => "linear",
            ShapeFunctionKind::Gimp => "gimp",
            ShapeFunctionKind::QuadraticBspline => "quadratic-bspline",
            ShapeFunctionKind::CubicBspline => "cubic-bspline",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "linear" => Self::Linear,
            "gimp" => Self::Gimp,
            "quadratic-bspline" => Self::QuadraticBspline,
            "cubic-bspline" => Self::CubicBspline,
            _ => return None,
        })
    }
}

/// Number of grid nodes per axis in one seeding block.
pub fn block_size(kind: ShapeFunctionKind) -> usize {
    match kind {
        ShapeFunctionKind::Linear => 3,
        ShapeFunctionKind::Gimp | ShapeFunctionKind::QuadraticBspline => 5,
        ShapeFunctionKind::CubicBspline => 7,
    }
}

/// Block size for a kind given by name; unknown names are rejected.
pub fn block_size_by_name(name: &str) -> Option<usize> {
    ShapeFunctionKind::parse(name).map(block_size)
}

/// 1D cpGIMP weight and its derivative with respect to the particle
/// position, for signed distance `xi = x_p − x_i`.
///
/// Each branch is a half-open interval in `|xi|`.
pub fn gimp_weight_1d<S: Scalar>(xi: S, lp: S, h: f64) -> (S, S) {
    let a = xi.value().abs();
    let lpv = lp.value();
    let sign = if xi.value() < 0.0 { -1.0 } else { 1.0 };
    if a < lpv {
        let w = S::one() - (xi * xi + lp * lp) / (lp * (2.0 * h));
        let dw = -xi / (lp * h);
        (w, dw)
    } else if a < h - lpv {
        let axi = xi * sign;
        (S::one() - axi / h, S::cst(-sign / h))
    } else if a < h + lpv {
        let axi = xi * sign;
        let t = lp + h - axi;
        let w = t * t / (lp * (4.0 * h));
        let dw = -(t / (lp * (2.0 * h))) * sign;
        (w, dw)
    } else {
        (S::zero(), S::zero())
    }
}

/// 1D linear hat function and derivative.
pub fn linear_weight_1d<S: Scalar>(xi: S, h: f64) -> (S, S) {
    let a = xi.value().abs();
    if a < h {
        let sign = if xi.value() < 0.0 { -1.0 } else { 1.0 };
        (S::one() - xi * sign / h, S::cst(-sign / h))
    } else {
        (S::zero(), S::zero())
    }
}

pub fn check_half_width(lp: f64, h: f64) -> Result<(), ShapeError> {
    if lp > 0.0 && lp < h / 2.0 {
        Ok(())
    } else {
        Err(ShapeError::HalfWidth { lp, h })
    }
}

/// Weight and gradient of one node for a particle in `dim` dimensions.
///
/// `xp` is the particle position, `xi` the node position, `lp` the particle
/// half-widths and `h` the spacings. Unused axes are ignored.
pub fn weight_nd<S: Scalar>(
    kind: ShapeFunctionKind,
    dim: usize,
    xp: &[S; 3],
    xi: &[f64; 3],
    lp: &[S; 3],
    h: &[f64; 3],
) -> Result<(S, [S; 3]), ShapeError> {
    let mut w1 = [S::one(); 3];
    let mut d1 = [S::zero(); 3];
    for a in 0..dim {
        let r = xp[a] - xi[a];
        let (w, d) = match kind {
            ShapeFunctionKind::Gimp => gimp_weight_1d(r, lp[a], h[a]),
            ShapeFunctionKind::Linear => linear_weight_1d(r, h[a]),
            ShapeFunctionKind::QuadraticBspline => return Err(ShapeError::Unimplemented("quadratic-bspline")),
            ShapeFunctionKind::CubicBspline => return Err(ShapeError::Unimplemented("cubic-bspline")),
        };
        w1[a] = w;
        d1[a] = d;
    }
    let mut w = S::one();
    for &wa in w1.iter().take(dim) {
        w *= wa;
    }
    let mut grad = [S::zero(); 3];
    for (a, g) in grad.iter_mut().enumerate().take(dim) {
        let mut prod = d1[a];
        for b in 0..dim {
            if b != a {
                prod *= w1[b];
            }
        }
        *g = prod;
    }
    Ok((w, grad))
}

/// cpGIMP domain update `lp_α = lp0_α · F_αα`.
pub fn update_particle_domain(f: &Mat3<f64>, lp0: &[f64; 3], h: &[f64; 3], dim: usize) -> Result<[f64; 3], ShapeError> {
    let j = crate::tensor::det(f);
    if j <= 0.0 {
        return Err(ShapeError::Inverted(j));
    }
    let mut lp = *lp0;
    for a in 0..dim {
        lp[a] = lp0[a] * f[a][a];
        if lp[a] >= h[a] / 2.0 {
            return Err(ShapeError::DomainOverflow { axis: a, lp: lp[a], h: h[a] });
        }
        if lp[a] <= 0.0 {
            return Err(ShapeError::HalfWidth { lp: lp[a], h: h[a] });
        }
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Average of the linear hat over [xi - lp, xi + lp] by composite
    /// Gauss–Legendre quadrature, split at the hat's kinks.
    fn hat_average(xi: f64, lp: f64, h: f64) -> f64 {
        let hat = |x: f64| (1.0 - x.abs() / h).max(0.0);
        let (a, b) = (xi - lp, xi + lp);
        let mut cuts = vec![a, b];
        for k in [-h, 0.0, h] {
            if k > a && k < b {
                cuts.push(k);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let gp = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        let gw = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
            for (p, w) in gp.iter().zip(gw) {
                total += w * half * hat(mid + half * p);
            }
        }
        total / (2.0 * lp)
    }

    #[test]
    fn gimp_matches_quadrature_oracle() {
        let h = 1.3;
        for &lp in &[0.25 * h, h / 8.0, 0.4 * h] {
            for k in 0..200 {
                let xi = -1.6 * h + 3.2 * h * k as f64 / 199.0;
                let (w, _) = gimp_weight_1d(xi, lp, h);
                assert!((w - hat_average(xi, lp, h)).abs() < 1e-13, "xi={xi} lp={lp}");
            }
        }
        let h = 1.0;
        assert!((gimp_weight_1d(0.0, 0.25, h).0 - 0.875).abs() < 1e-15);
        assert!((hat_average(0.0, 0.25, h) - 0.875).abs() < 1e-14);
        assert!((gimp_weight_1d(0.5, 0.125, h).0 - 0.5).abs() < 1e-15);
        assert_eq!(gimp_weight_1d(1.25, 0.25, h), (0.0, 0.0));
    }

    #[test]
    fn gimp_derivative_matches_central_differences() {
        let (h, lp) = (0.8, 0.15);
        let eps = 1e-6;
        for k in 0..300 {
            let xi = -1.0 + 2.0 * k as f64 / 299.0;
            let near_break = [lp, h - lp, h + lp].iter().any(|b| (xi.abs() - b).abs() < 1e-4);
            if near_break {
                continue;
            }
            let (_, dw) = gimp_weight_1d(xi, lp, h);
            let fd = (gimp_weight_1d(xi + eps, lp, h).0 - gimp_weight_1d(xi - eps, lp, h).0) / (2.0 * eps);
            assert!((dw - fd).abs() < 1e-8, "xi={xi}: {dw} vs {fd}");
        }
    }

    #[test]
    fn block_sizes() {
        assert_eq!(block_size(ShapeFunctionKind::Gimp), 5);
        assert_eq!(block_size(ShapeFunctionKind::Linear), 3);
        assert_eq!(block_size(ShapeFunctionKind::QuadraticBspline), 5);
        assert_eq!(block_size(ShapeFunctionKind::CubicBspline), 7);
        assert_eq!(block_size_by_name("wendland"), None);
    }

    #[test]
    fn partition_of_unity_2d() {
        let h = [0.5, 0.5, 1.0];
        let lp = [0.125, 0.1, 0.0];
        for xp in [[1.13, 2.41, 0.0], [1.0, 1.0, 0.0], [0.77, 1.5, 0.0]] {
            let mut sw = 0.0;
            let mut sg = [0.0; 2];
            for i in 0..10 {
                for j in 0..10 {
                    let xi = [i as f64 * h[0], j as f64 * h[1], 0.0];
                    let (w, g) = weight_nd(ShapeFunctionKind::Gimp, 2, &xp, &xi, &lp, &h).unwrap();
                    sw += w;
                    sg[0] += g[0];
                    sg[1] += g[1];
                }
            }
            assert!((sw - 1.0).abs() < 1e-12);
            assert!(sg[0].abs() < 1e-12 && sg[1].abs() < 1e-12);
        }
        // Particle centred on a node: zero gradient at that node.
        let (_, g) = weight_nd(ShapeFunctionKind::Gimp, 2, &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &lp, &h).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn domain_update_rule() {
        let h = [1.0, 1.0, 1.0];
        let lp0 = [0.1, 0.2, 0.0];
        let id = crate::tensor::identity::<f64>();
        assert_eq!(update_particle_domain(&id, &lp0, &h, 2).unwrap(), lp0);
        let mut f = id;
        f[0][0] = 2.0;
        assert_eq!(update_particle_domain(&f, &lp0, &h, 2).unwrap(), [0.2, 0.2, 0.0]);
        f[0][0] = 6.0;
        assert!(matches!(update_particle_domain(&f, &lp0, &h, 2), Err(ShapeError::DomainOverflow { axis: 0, .. })));
    }
}
