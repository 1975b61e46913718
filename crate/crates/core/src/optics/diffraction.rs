use std::f64::consts::PI;

use num_complex::Complex64;

use super::complex::ComplexMatrix;
use super::geometry::{OcuGeometry, Point};
use crate::error::{OcuError, Result};

/// Huygens-Fresnel coupling from one point to another inside the slab.
///
/// The obliquity factor uses `cos θ = |Δx| / r`, so it peaks on-axis.
pub fn huygens_coupling(src: Point, dst: Point, geom: &OcuGeometry) -> Result<Complex64> {
    let dx = dst.x - src.x;
    let dy = dst.y - src.y;
    let r = dx.hypot(dy);
    if r == 0.0 {
        return Err(OcuError::SingularGeometry { x: src.x, y: src.y });
    }
    let lambda = geom.wavelength;
    let cos_theta = dx.abs() / r;
    let amplitude = (1.0 + cos_theta) / (2.0 * r);
    let propagation = Complex64::from_polar(1.0, 2.0 * PI * r * geom.slab_index / lambda);
    let coeff = Complex64::from_polar(geom.amplitude_coeff, geom.phase_coeff);
    // 1/(jλ) = -j/λ
    let prefactor = Complex64::new(0.0, -1.0 / lambda);
    Ok(prefactor * amplitude * propagation * coeff)
}

/// `dst.len() × src.len()` coupling matrix between two planes.
pub fn diffraction_matrix(src: &[Point], dst: &[Point], geom: &OcuGeometry) -> Result<ComplexMatrix> {
    let mut m = ComplexMatrix::zeros(dst.len(), src.len());
    for (v, &d) in dst.iter().enumerate() {
        for (u, &s) in src.iter().enumerate() {
            m[(v, u)] = huygens_coupling(s, d, geom)?;
        }
    }
    Ok(m)
}

/// Diagonal mask `diag(exp(jφ))` for one metaline.
pub fn phase_mask_matrix(phases: &[f64]) -> Result<ComplexMatrix> {
    if phases.iter().any(|p| !p.is_finite()) {
        return Err(OcuError::NonFinite("phase mask"));
    }
    let diag: Vec<Complex64> = phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    Ok(ComplexMatrix::diagonal(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::geometry::MICRON;

    fn geom() -> OcuGeometry {
        OcuGeometry::new(9, 50, 3)
    }

    #[test]
    fn on_axis_magnitude_is_inverse_lambda_r() {
        let g = geom();
        let r = 75.0 * MICRON;
        let z = huygens_coupling(Point::new(0.0, 0.0), Point::new(r, 0.0), &g).unwrap();
        let expected = 1.0 / (g.wavelength * r);
        assert!((z.norm() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn mirrored_destinations_match_exactly() {
        let g = geom();
        let src = [Point::new(0.0, 0.0)];
        let dst = [Point::new(75.0 * MICRON, 12.0 * MICRON), Point::new(75.0 * MICRON, -12.0 * MICRON)];
        let m = diffraction_matrix(&src, &dst, &g).unwrap();
        assert_eq!(m[(0, 0)], m[(1, 0)]);
    }

    #[test]
    fn coincident_points_are_singular() {
        let g = geom();
        let p = Point::new(1e-6, 2e-6);
        assert!(matches!(
            diffraction_matrix(&[p], &[p], &g),
            Err(OcuError::SingularGeometry { .. })
        ));
    }

    #[test]
    fn three_by_three_matches_scalar_evaluation() {
        let g = geom();
        let p = g.metaunit_period;
        let src: Vec<Point> = [-p, 0.0, p].iter().map(|&y| Point::new(0.0, y)).collect();
        let dst: Vec<Point> = [-p, 0.0, p].iter().map(|&y| Point::new(g.layer_gap, y)).collect();
        let m = diffraction_matrix(&src, &dst, &g).unwrap();
        for (v, d) in dst.iter().enumerate() {
            for (u, s) in src.iter().enumerate() {
                // Written out with real arithmetic, independent of Complex64 helpers.
                let dx = d.x - s.x;
                let dy = d.y - s.y;
                let r = (dx * dx + dy * dy).sqrt();
                let cos_t = dx / r;
                let mag = (1.0 + cos_t) / (2.0 * r) / g.wavelength;
                let arg = 2.0 * PI * r * g.slab_index / g.wavelength;
                // (1/j) e^{j arg} = e^{j (arg - π/2)}
                let re = mag * (arg - PI / 2.0).cos();
                let im = mag * (arg - PI / 2.0).sin();
                let z = m[(v, u)];
                assert!((z.re - re).abs() <= 1e-9 * mag, "re mismatch at ({v},{u})");
                assert!((z.im - im).abs() <= 1e-9 * mag, "im mismatch at ({v},{u})");
            }
        }
    }

    #[test]
    fn reciprocity() {
        let g = geom();
        let a = [Point::new(0.0, -3.0e-6), Point::new(0.0, 7.5e-6)];
        let b = [Point::new(g.layer_gap, 1.0e-6), Point::new(g.layer_gap, -20.0e-6), Point::new(g.layer_gap, 0.0)];
        let ab = diffraction_matrix(&a, &b, &g).unwrap();
        let ba = diffraction_matrix(&b, &a, &g).unwrap();
        for v in 0..b.len() {
            for u in 0..a.len() {
                assert_eq!(ab[(v, u)], ba[(u, v)]);
            }
        }
    }

    #[test]
    fn phase_mask_examples() {
        let zero = phase_mask_matrix(&[0.0; 4]).unwrap();
        assert_eq!(zero, ComplexMatrix::identity(4));
        let m = phase_mask_matrix(&[PI / 2.0, PI]).unwrap();
        assert!((m[(0, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((m[(1, 1)] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 0.0));
        assert!(phase_mask_matrix(&[f64::INFINITY]).is_err());
    }
}
