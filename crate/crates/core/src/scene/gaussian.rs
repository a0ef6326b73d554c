use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// One splat in its stored (optimizable) parameterization.
///
/// Scale is kept in log space and opacity as a pre-sigmoid logit so that any
/// real-valued parameter vector decodes to a valid Gaussian. The quaternion is
/// `(w, x, y, z)` and is normalized on use, never on storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Gaussian {
    /// Builds a Gaussian from decoded values (positive scale, opacity in (0, 1)).
    pub fn from_decoded(
        position: Vector3<f64>,
        rotation: Vector4<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        Self {
            position,
            rotation,
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        compose_covariance(&self.rotation, &self.log_scale)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn unit_quaternion(q: &Vector4<f64>) -> Result<(Vector4<f64>, f64)> {
    let norm = q.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("quaternion {q:?}")));
    }
    if norm == 0.0 {
        return Err(Error::Degenerate("zero-norm quaternion".into()));
    }
    Ok((q / norm, norm))
}

fn rotation_from_unit(n: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion in the direction of `q`; a zero quaternion is returned unchanged.
pub fn normalize_quaternion(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n > 0.0 {
        q / n
    } else {
        *q
    }
}

/// Gradient through [`normalize_quaternion`].
pub fn normalize_quaternion_vjp(q: &Vector4<f64>, grad: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n == 0.0 {
        return Vector4::zeros();
    }
    let u = q / n;
    (grad - u * u.dot(grad)) / n
}

/// Rotation matrix of `q = (w, x, y, z)`. The input is normalized first, so any
/// non-zero multiple of a unit quaternion maps to the same rotation.
pub fn quat_to_rot(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let (n, _) = unit_quaternion(q)?;
    Ok(rotation_from_unit(&n))
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized) quaternion.
pub fn quat_to_rot_vjp(q: &Vector4<f64>, rot_grad: &Matrix3<f64>) -> Result<Vector4<f64>> {
    let (n, norm) = unit_quaternion(q)?;
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    let g = rot_grad;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let unit_grad = Vector4::new(dw, dx, dy, dz);
    Ok((unit_grad - n * n.dot(&unit_grad)) / norm)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn compose_covariance(q: &Vector4<f64>, log_scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let r = quat_to_rot(q)?;
    let s2 = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()));
    let cov = r * s2 * r.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

/// Gradient of a scalar through [`compose_covariance`]: returns `(∂/∂q, ∂/∂log_scale)`.
pub fn compose_covariance_vjp(
    q: &Vector4<f64>,
    log_scale: &Vector3<f64>,
    cov_grad: &Matrix3<f64>,
) -> Result<(Vector4<f64>, Vector3<f64>)> {
    let r = quat_to_rot(q)?;
    let s2 = log_scale.map(|s| (2.0 * s).exp());
    let sym = (cov_grad + cov_grad.transpose()) * 0.5;
    let r_grad = 2.0 * sym * r * Matrix3::from_diagonal(&s2);
    let inner = r.transpose() * sym * r;
    let scale_grad = Vector3::new(
        2.0 * s2[0] * inner[(0, 0)],
        2.0 * s2[1] * inner[(1, 1)],
        2.0 * s2[2] * inner[(2, 2)],
    );
    Ok((quat_to_rot_vjp(q, &r_grad)?, scale_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_quaternion_is_identity() {
        let r = quat_to_rot(&Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(r, Matrix3::identity());
        let r2 = quat_to_rot(&Vector4::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(r2, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let h = 0.5f64.sqrt();
        let r = quat_to_rot(&Vector4::new(h, h, 0.0, 0.0)).unwrap();
        let v = r * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            quat_to_rot(&Vector4::zeros()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn diagonal_covariance() {
        let q = Vector4::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(
            compose_covariance(&q, &Vector3::zeros()).unwrap(),
            Matrix3::identity()
        );
        let cov = compose_covariance(&q, &Vector3::new(2f64.ln(), 0.0, 0.0)).unwrap();
        assert!((cov - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-14);
    }

    #[test]
    fn quaternion_vjp_matches_finite_differences() {
        let q = Vector4::new(0.7, -0.3, 0.5, 0.2);
        let s = Vector3::new(-1.0, 0.3, 0.1);
        let w = Matrix3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.4, 0.2, 0.9, -0.7);
        let f = |q: &Vector4<f64>, s: &Vector3<f64>| {
            compose_covariance(q, s).unwrap().component_mul(&w).sum()
        };
        let (gq, gs) = compose_covariance_vjp(&q, &s, &w).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut a = q;
            let mut b = q;
            a[k] += h;
            b[k] -= h;
            let fd = (f(&a, &s) - f(&b, &s)) / (2.0 * h);
            assert!((fd - gq[k]).abs() < 1e-7, "q[{k}] {fd} vs {}", gq[k]);
        }
        for k in 0..3 {
            let mut a = s;
            let mut b = s;
            a[k] += h;
            b[k] -= h;
            let fd = (f(&q, &a) - f(&q, &b)) / (2.0 * h);
            assert!((fd - gs[k]).abs() < 1e-7);
        }
    }

    fn quat() -> impl Strategy<Value = Vector4<f64>> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(Vector4::from)
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd_with_squared_scales(
            q in quat(),
            s in prop::array::uniform3(-2.0f64..1.0),
        ) {
            let s = Vector3::from(s);
            let cov = compose_covariance(&q, &s).unwrap();
            prop_assert_eq!(cov, cov.transpose());
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|x| (2.0 * x).exp()).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0));
            }
        }

        #[test]
        fn rotation_preserves_norms(q in quat(), v in prop::array::uniform3(-5.0f64..5.0)) {
            let v = Vector3::from(v);
            let r = quat_to_rot(&q).unwrap();
            prop_assert!(((r * v).norm() - v.norm()).abs() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
