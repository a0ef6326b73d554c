//! Moore–Penrose pseudoinverse of small square matrices via one-sided Jacobi SVD.

use nalgebra::SMatrix;

use crate::error::{Error, Result};

/// Thin SVD `M = U diag(σ) Vᵀ`; singular values are not sorted.
pub struct Svd<const N: usize> {
    pub u: SMatrix<f64, N, N>,
    pub sigma: [f64; N],
    pub v: SMatrix<f64, N, N>,
}

/// One-sided (Hestenes) Jacobi SVD. Columns of `U` belonging to zero singular
/// values are left as zero vectors.
pub fn jacobi_svd<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<Svd<N>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudoinverse input".into()));
    }
    let mut u = *m;
    let mut v = SMatrix::<f64, N, N>::identity();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..N {
            for q in p + 1..N {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..N {
                    let (up, uq) = (u[(r, p)], u[(r, q)]);
                    u[(r, p)] = c * up - s * uq;
                    u[(r, q)] = s * up + c * uq;
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp - s * vq;
                    v[(r, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = [0.0; N];
    for j in 0..N {
        let norm = u.column(j).norm();
        sigma[j] = norm;
        if norm > 0.0 {
            let col = u.column(j) / norm;
            u.set_column(j, &col);
        }
    }
    Ok(Svd { u, sigma, v })
}

/// Pseudoinverse with singular values below `rel_tol · σ_max` treated as zero.
pub fn pseudo_inverse<const N: usize>(
    m: &SMatrix<f64, N, N>,
    rel_tol: f64,
) -> Result<SMatrix<f64, N, N>> {
    let svd = jacobi_svd(m)?;
    let smax = svd.sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * smax;
    let mut out = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let s = svd.sigma[j];
        if s > cutoff && s > 0.0 {
            out += svd.v.column(j) * svd.u.column(j).transpose() / s;
        }
    }
    Ok(out)
}

/// Adjoint of `P = M⁺` with respect to `M`, given `P̄`, treating the retained
/// rank as locally constant:
/// `dP = −P dM P + P Pᵀ dMᵀ (I − M P) + (I − P M) dMᵀ Pᵀ P`.
pub fn pseudo_inverse_vjp<const N: usize>(
    m: &SMatrix<f64, N, N>,
    p: &SMatrix<f64, N, N>,
    p_grad: &SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    let id = SMatrix::<f64, N, N>::identity();
    let pt = p.transpose();
    let gt = p_grad.transpose();
    -(pt * p_grad * pt) + (id - m * p) * gt * p * pt + pt * p * gt * (id - p * m)
}
