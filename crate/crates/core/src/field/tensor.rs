//! Logarithmic strain and polar decomposition of small deformation gradients.
//!
//! Both go through the spectral decomposition of `C = FᵀF`, which is symmetric and
//! well conditioned even for the large compressive stretches the rubber block sees.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector};

use super::FieldError;

/// Eigenvalues of `C` below this are treated as a collapsed direction.
const MIN_EIGENVALUE: f64 = 1e-12;

/// Eigen-decomposition `A = Q diag(λ) Qᵀ` of a small symmetric matrix by cyclic Jacobi
/// rotations. Accurate to round-off relative to `|A|`, including nearly diagonal input.
pub fn symmetric_eigen<const N: usize>(a: &SMatrix<f64, N, N>) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
    let mut a = (a + a.transpose()) * 0.5;
    let mut q = SMatrix::<f64, N, N>::identity();
    for _sweep in 0..50 {
        let mut off = 0.0;
        for p in 0..N {
            for r in p + 1..N {
                off += a[(p, r)] * a[(p, r)];
            }
        }
        if off == 0.0 || off.sqrt() <= f64::EPSILON * 1e-3 * a.norm() {
            break;
        }
        for p in 0..N {
            for r in p + 1..N {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (akp, akr) = (a[(k, p)], a[(k, r)]);
                    a[(k, p)] = c * akp - s * akr;
                    a[(k, r)] = s * akp + c * akr;
                }
                for k in 0..N {
                    let (apk, ark) = (a[(p, k)], a[(r, k)]);
                    a[(p, k)] = c * apk - s * ark;
                    a[(r, k)] = s * apk + c * ark;
                }
                for k in 0..N {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    (SVector::<f64, N>::from_fn(|i, _| a[(i, i)]), q)
}

macro_rules! spectral_kernels {
    ($log:ident, $polar:ident, $mat:ty) => {
        /// `H = ½ ln(FᵀF)`.
        pub fn $log(f: &$mat) -> Result<$mat, FieldError> {
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(FieldError::NonPositiveJacobian { det });
            }
            let (vals, q) = symmetric_eigen(&(f.transpose() * f));
            if vals.iter().any(|&c| !(c > MIN_EIGENVALUE)) {
                return Err(FieldError::NonPositiveJacobian { det });
            }
            let logs = vals.map(|c| 0.5 * c.ln());
            let h = q * <$mat>::from_diagonal(&logs) * q.transpose();
            Ok((h + h.transpose()) * 0.5)
        }

        /// `F = R·U` with `R` a proper rotation and `U` symmetric positive definite.
        pub fn $polar(f: &$mat) -> Result<($mat, $mat), FieldError> {
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(FieldError::NonPositiveJacobian { det });
            }
            let (vals, q) = symmetric_eigen(&(f.transpose() * f));
            if vals.iter().any(|&c| !(c > MIN_EIGENVALUE)) {
                return Err(FieldError::NonPositiveJacobian { det });
            }
            let stretch = vals.map(f64::sqrt);
            let u = q * <$mat>::from_diagonal(&stretch) * q.transpose();
            let u_inv = q * <$mat>::from_diagonal(&stretch.map(|s| 1.0 / s)) * q.transpose();
            let u = (u + u.transpose()) * 0.5;
            Ok((f * u_inv, u))
        }
    };
}

spectral_kernels!(log_strain_2d, polar_decompose_2d, Matrix2<f64>);
spectral_kernels!(log_strain_3d, polar_decompose_3d, Matrix3<f64>);

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn rot2(deg: f64) -> Matrix2<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    #[test]
    fn jacobi_eigen_reconstructs_nearly_diagonal_input() {
        let mut a = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.49, 1.4161, 1.44));
        a[(0, 1)] = 1.2e-8;
        a[(1, 0)] = 1.2e-8;
        a[(1, 2)] = -3e-3;
        a[(2, 1)] = -3e-3;
        let (vals, q) = symmetric_eigen(&a);
        let rec = q * Matrix3::from_diagonal(&vals) * q.transpose();
        assert!((rec - a).abs().max() < 1e-15);
        assert!((q.transpose() * q - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn identity_gives_zero() {
        assert_eq!(log_strain_3d(&Matrix3::identity()).unwrap().abs().max(), 0.0);
        assert_eq!(log_strain_2d(&Matrix2::identity()).unwrap().abs().max(), 0.0);
    }

    #[test]
    fn diagonal_isochoric_compression() {
        let lt = 0.7f64.powf(-0.5);
        let h = log_strain_3d(&Matrix3::from_diagonal(&nalgebra::Vector3::new(0.7, lt, lt))).unwrap();
        assert!((h[(0, 0)] + 0.356675).abs() < 1e-6);
        assert!((h[(1, 1)] - 0.178337).abs() < 1e-6);
        assert!((h[(2, 2)] - 0.178337).abs() < 1e-6);
        assert!(h.trace().abs() < 1e-14);
    }

    #[test]
    fn rotated_stretch_2d() {
        let f = rot2(30.0) * Matrix2::new(0.9, 0.0, 0.0, 1.1);
        let h = log_strain_2d(&f).unwrap();
        assert!((h[(0, 0)] - 0.9f64.ln()).abs() < 1e-12);
        assert!((h[(1, 1)] - 1.1f64.ln()).abs() < 1e-12);
        assert!(h[(0, 1)].abs() < 1e-12);
        assert!((h[(0, 0)] + 0.105361).abs() < 1e-6 && (h[(1, 1)] - 0.095310).abs() < 1e-6);
    }

    #[test]
    fn polar_of_identity_and_rotation() {
        let (r, u) = polar_decompose_2d(&Matrix2::identity()).unwrap();
        assert!((r - Matrix2::identity()).abs().max() < 1e-15);
        assert!((u - Matrix2::identity()).abs().max() < 1e-15);
        let rot = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let (r, u) = polar_decompose_3d(&rot).unwrap();
        assert!((r - rot).abs().max() < 1e-12);
        assert!((u - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_inverted_gradient() {
        let f = Matrix2::new(1.0, 0.0, 0.0, -0.5);
        assert!(matches!(log_strain_2d(&f), Err(FieldError::NonPositiveJacobian { det }) if det == -0.5));
        assert!(polar_decompose_3d(&Matrix3::zeros()).is_err());
    }

    fn well_conditioned() -> impl Strategy<Value = Matrix3<f64>> {
        (prop::array::uniform9(-0.4f64..0.4), prop::array::uniform3(-3.0f64..3.0)).prop_map(|(d, a)| {
            let r = Rotation3::from_euler_angles(a[0], a[1], a[2]).into_inner();
            r * (Matrix3::identity() + Matrix3::from_row_slice(&d) * 0.5)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn polar_reconstructs(f in well_conditioned()) {
            prop_assume!(f.determinant() > 0.05);
            let (r, u) = polar_decompose_3d(&f).unwrap();
            prop_assert!((r * u - f).abs().max() < 1e-10);
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
            prop_assert!((u - u.transpose()).abs().max() < 1e-12);
        }

        #[test]
        fn log_strain_trace_and_objectivity(f in well_conditioned(), a in prop::array::uniform3(-3.0f64..3.0)) {
            prop_assume!(f.determinant() > 0.05);
            let h = log_strain_3d(&f).unwrap();
            prop_assert!((h.trace() - f.determinant().ln()).abs() < 1e-10);
            let q = Rotation3::from_euler_angles(a[0], a[1], a[2]).into_inner();
            let hr = log_strain_3d(&(q * f)).unwrap();
            prop_assert!((hr - h).abs().max() < 1e-10);
            prop_assert!((h - h.transpose()).abs().max() < 1e-12);
        }
    }
}
