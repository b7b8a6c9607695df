//! Offset product grids on the unit sphere with second-order centered
//! stencils and reflection closure across the coordinate poles.
//!
//! Coordinates are `(theta, phi)` on S^2 and `(theta_1, theta_2, phi)` on
//! S^3: the polar angles run over `(0, pi)` and the final angle is periodic
//! over `[0, 2 pi)`. Nodes sit at half-steps in the polar angles
//! (`theta_i = (i + 1/2) h`), so no node ever touches a pole and the
//! reflected ghost `theta_{-1} = -h/2` coincides exactly with the mirror of
//! `theta_0`.
//!
//! Continuing a chart across a pole identifies `(theta, phi)` with
//! `(-theta, phi + pi)` on S^2, and on S^3
//!
//! ```text
//! across theta_1:  (theta_1, theta_2, phi) ~ (-theta_1, pi - theta_2, phi + pi)
//! across theta_2:  (theta_1, theta_2, phi) ~ (theta_1, -theta_2, phi + pi)
//! ```
//!
//! These deck transformations have constant diagonal Jacobians, so a tensor
//! component picks up one sign flip per index whose coordinate differential
//! is reversed: `(-1, +1)`, `(-1, -1, +1)` and `(+1, -1, +1)` respectively.
//! [`SphericalGrid::fetch`] applies the index remapping and the sign for a
//! component of given parity, which makes every stencil an ordinary centered
//! stencil on the smooth continuation — second order everywhere, exact on
//! constants.
//!
//! The half-turn shift of the periodic index requires an even resolution.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Discretized S^n (n = 2 or 3) with `resolution` nodes per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGrid {
    n: usize,
    resolution: usize,
}

/// Builds the offset product grid. `n` must be 2 or 3; the resolution must
/// be even and at least 8 per coordinate.
pub fn build_grid(n: usize, resolution: usize) -> Result<SphericalGrid> {
    if n != 2 && n != 3 {
        return Err(Error::Domain(format!(
            "spherical grids support n in {{2, 3}}, got {n}"
        )));
    }
    if resolution < 8 {
        return Err(Error::Domain(format!(
            "resolution must be at least 8 per coordinate, got {resolution}"
        )));
    }
    if resolution % 2 != 0 {
        return Err(Error::Domain(format!(
            "resolution must be even (pole closure shifts the periodic index by half a turn), got {resolution}"
        )));
    }
    Ok(SphericalGrid { n, resolution })
}

impl SphericalGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.resolution.pow(self.n as u32)
    }

    /// Grid spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        if axis + 1 == self.n {
            2.0 * std::f64::consts::PI / self.resolution as f64
        } else {
            std::f64::consts::PI / self.resolution as f64
        }
    }

    /// Angle of node index `i` along `axis` (half-offset on polar axes).
    pub fn angle(&self, axis: usize, i: usize) -> f64 {
        if axis + 1 == self.n {
            i as f64 * self.spacing(axis)
        } else {
            (i as f64 + 0.5) * self.spacing(axis)
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for &i in idx.iter().take(self.n) {
            flat = flat * self.resolution + i;
        }
        flat
    }

    pub fn unflatten(&self, node: usize) -> [usize; 3] {
        let res = self.resolution;
        let mut out = [0usize; 3];
        let mut rest = node;
        for axis in (0..self.n).rev() {
            out[axis] = rest % res;
            rest /= res;
        }
        out
    }

    /// Angles of a flat node index (unused trailing entries are zero).
    pub fn angles_at(&self, node: usize) -> [f64; 3] {
        let idx = self.unflatten(node);
        let mut out = [0.0; 3];
        for axis in 0..self.n {
            out[axis] = self.angle(axis, idx[axis]);
        }
        out
    }

    /// Midpoint-rule weight for integration over the round sphere:
    /// product of spacings times the sphere area element at the node.
    pub fn quadrature_weight(&self, node: usize) -> f64 {
        let a = self.angles_at(node);
        let jac = match self.n {
            2 => a[0].sin(),
            _ => a[0].sin().powi(2) * a[1].sin(),
        };
        let vol: f64 = (0..self.n).map(|ax| self.spacing(ax)).product();
        jac * vol
    }

    /// Resolves a possibly out-of-range multi-index to an in-range node and
    /// the sign a tensor component of the given `parity` (number of indices
    /// per coordinate axis, mod 2) picks up along the way.
    fn resolve(&self, raw: [isize; 3], parity: [usize; 3]) -> (usize, f64) {
        let res = self.resolution as isize;
        let mut idx = raw;
        let mut sign = 1.0;
        let phi_axis = self.n - 1;
        loop {
            idx[phi_axis] = idx[phi_axis].rem_euclid(res);
            if idx[0] < 0 || idx[0] >= res {
                idx[0] = if idx[0] < 0 { -1 - idx[0] } else { 2 * res - 1 - idx[0] };
                if self.n == 2 {
                    idx[1] += res / 2;
                    if parity[0] % 2 == 1 {
                        sign = -sign;
                    }
                } else {
                    idx[1] = res - 1 - idx[1];
                    idx[2] += res / 2;
                    if (parity[0] + parity[1]) % 2 == 1 {
                        sign = -sign;
                    }
                }
                continue;
            }
            if self.n == 3 && (idx[1] < 0 || idx[1] >= res) {
                idx[1] = if idx[1] < 0 { -1 - idx[1] } else { 2 * res - 1 - idx[1] };
                idx[2] += res / 2;
                if parity[1] % 2 == 1 {
                    sign = -sign;
                }
                continue;
            }
            break;
        }
        let flat = self.flatten(&[idx[0] as usize, idx[1] as usize, idx[2] as usize]);
        (flat, sign)
    }

    /// Ghost-aware fetch of a tensor-component field.
    pub fn fetch(&self, field: &[f64], raw: [isize; 3], parity: [usize; 3]) -> f64 {
        let (flat, sign) = self.resolve(raw, parity);
        sign * field[flat]
    }

    /// Like [`SphericalGrid::fetch`] for node-major interleaved storage:
    /// the component lives at `flat * stride + offset`.
    pub fn fetch_strided(
        &self,
        field: &[f64],
        stride: usize,
        offset: usize,
        raw: [isize; 3],
        parity: [usize; 3],
    ) -> f64 {
        let (flat, sign) = self.resolve(raw, parity);
        sign * field[flat * stride + offset]
    }

    /// First derivative along `axis` of an interleaved component field.
    pub fn d1_strided(
        &self,
        field: &[f64],
        stride: usize,
        offset: usize,
        node: usize,
        axis: usize,
        parity: [usize; 3],
    ) -> f64 {
        let idx = self.unflatten(node);
        let fp = self.fetch_strided(field, stride, offset, Self::offset(idx, axis, 1), parity);
        let fm = self.fetch_strided(field, stride, offset, Self::offset(idx, axis, -1), parity);
        (fp - fm) / (2.0 * self.spacing(axis))
    }

    fn offset(idx: [usize; 3], axis: usize, by: isize) -> [isize; 3] {
        let mut out = [idx[0] as isize, idx[1] as isize, idx[2] as isize];
        out[axis] += by;
        out
    }

    /// First derivative along `axis` by the centered stencil.
    pub fn d1(&self, field: &[f64], node: usize, axis: usize, parity: [usize; 3]) -> f64 {
        let idx = self.unflatten(node);
        let fp = self.fetch(field, Self::offset(idx, axis, 1), parity);
        let fm = self.fetch(field, Self::offset(idx, axis, -1), parity);
        (fp - fm) / (2.0 * self.spacing(axis))
    }

    /// Second derivative along `axis1`, `axis2` by centered stencils
    /// (three-point on the diagonal, four-point cross otherwise).
    pub fn d2(&self, field: &[f64], node: usize, axis1: usize, axis2: usize, parity: [usize; 3]) -> f64 {
        let idx = self.unflatten(node);
        if axis1 == axis2 {
            let fp = self.fetch(field, Self::offset(idx, axis1, 1), parity);
            let fm = self.fetch(field, Self::offset(idx, axis1, -1), parity);
            let f0 = field[node];
            let h = self.spacing(axis1);
            (fp - 2.0 * f0 + fm) / (h * h)
        } else {
            let corner = |s1: isize, s2: isize| {
                let mut raw = Self::offset(idx, axis1, s1);
                raw[axis2] += s2;
                self.fetch(field, raw, parity)
            };
            let (fpp, fpm, fmp, fmm) = (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1));
            (fpp - fpm - fmp + fmm) / (4.0 * self.spacing(axis1) * self.spacing(axis2))
        }
    }

    /// Flat indices of every node a full second-order stencil at `node`
    /// reads, pole and periodic remapping included. Sorted, deduplicated.
    pub fn stencil_support(&self, node: usize) -> Vec<usize> {
        let idx = self.unflatten(node);
        let mut out = vec![node];
        let p0 = [0usize; 3];
        for axis in 0..self.n {
            for s in [-1isize, 1] {
                out.push(self.resolve(Self::offset(idx, axis, s), p0).0);
            }
        }
        for a1 in 0..self.n {
            for a2 in (a1 + 1)..self.n {
                for s1 in [-1isize, 1] {
                    for s2 in [-1isize, 1] {
                        let mut raw = Self::offset(idx, a1, s1);
                        raw[a2] += s2;
                        out.push(self.resolve(raw, p0).0);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn construction_limits() {
        assert!(build_grid(4, 16).is_err());
        assert!(build_grid(2, 4).is_err());
        assert!(build_grid(2, 9).is_err());
        assert_eq!(build_grid(2, 16).unwrap().node_count(), 256);
        assert_eq!(build_grid(3, 12).unwrap().node_count(), 1728);
    }

    #[test]
    fn no_node_touches_a_pole() {
        let g = build_grid(3, 8).unwrap();
        for node in 0..g.node_count() {
            let a = g.angles_at(node);
            assert!(a[0] > 0.0 && a[0] < PI);
            assert!(a[1] > 0.0 && a[1] < PI);
        }
    }

    #[test]
    fn periodic_axis_wraps() {
        let g = build_grid(2, 8).unwrap();
        let mut field = vec![0.0; g.node_count()];
        for node in 0..g.node_count() {
            let a = g.angles_at(node);
            field[node] = a[1].sin();
        }
        // one step past the last column equals the first column
        let v = g.fetch(&field, [2, 8, 0], [0, 0, 0]);
        assert_eq!(v, field[g.flatten(&[2, 0, 0])]);
    }

    /// A smooth scalar on the sphere expressed through the embedding is the
    /// cleanest probe of the pole closure: its ghost values must agree with
    /// the values of the same function at the continued angles.
    fn smooth_scalar(n: usize, angles: [f64; 3]) -> f64 {
        let z = if n == 2 {
            vec![
                angles[0].cos(),
                angles[0].sin() * angles[1].cos(),
                angles[0].sin() * angles[1].sin(),
            ]
        } else {
            vec![
                angles[0].cos(),
                angles[0].sin() * angles[1].cos(),
                angles[0].sin() * angles[1].sin() * angles[2].cos(),
                angles[0].sin() * angles[1].sin() * angles[2].sin(),
            ]
        };
        // low-order polynomial in the ambient coordinates
        let mut v = 1.0;
        for (i, zi) in z.iter().enumerate() {
            v += (i as f64 + 1.0) * zi + 0.3 * zi * zi;
        }
        v + 0.7 * z[0] * z[1]
    }

    #[test]
    fn pole_ghosts_match_smooth_continuation() {
        for n in [2usize, 3] {
            let g = build_grid(n, 16).unwrap();
            let field: Vec<f64> = (0..g.node_count())
                .map(|node| smooth_scalar(n, g.angles_at(node)))
                .collect();
            // ghost across theta_1 = 0 at an arbitrary column
            let raw = [-1isize, 3, 5];
            let got = g.fetch(&field, raw, [0, 0, 0]);
            let h0 = g.spacing(0);
            let ghost_angles = if n == 2 {
                [-0.5 * h0, g.angle(1, 3), 0.0]
            } else {
                [-0.5 * h0, g.angle(1, 3), g.angle(2, 5)]
            };
            let expect = smooth_scalar(n, ghost_angles);
            assert!(
                (got - expect).abs() < 1e-12,
                "n = {n}: ghost {got} vs continuation {expect}"
            );
        }
    }

    #[test]
    fn stencils_are_second_order_on_smooth_fields() {
        // max-norm derivative error must shrink ~4x per doubling, poles included
        for n in [2usize, 3] {
            let errs: Vec<f64> = [8usize, 16, 32]
                .iter()
                .map(|&res| {
                    let g = build_grid(n, res).unwrap();
                    let field: Vec<f64> = (0..g.node_count())
                        .map(|node| smooth_scalar(n, g.angles_at(node)))
                        .collect();
                    let mut worst = 0.0f64;
                    for node in 0..g.node_count() {
                        let a = g.angles_at(node);
                        for axis in 0..n {
                            let h = 1e-6;
                            let mut ap = a;
                            ap[axis] += h;
                            let mut am = a;
                            am[axis] -= h;
                            let exact =
                                (smooth_scalar(n, ap) - smooth_scalar(n, am)) / (2.0 * h);
                            let got = g.d1(&field, node, axis, [0, 0, 0]);
                            worst = worst.max((got - exact).abs());
                        }
                    }
                    worst
                })
                .collect();
            let r1 = errs[0] / errs[1];
            let r2 = errs[1] / errs[2];
            assert!(r1 > 3.0 && r1 < 5.5, "n = {n}: ratio {r1}");
            assert!(r2 > 3.0 && r2 < 5.5, "n = {n}: ratio {r2}");
        }
    }

    #[test]
    fn quadrature_reproduces_sphere_area() {
        let g2 = build_grid(2, 32).unwrap();
        let area2: f64 = (0..g2.node_count()).map(|i| g2.quadrature_weight(i)).sum();
        assert!((area2 - 4.0 * PI).abs() < 1e-3 * 4.0 * PI);
        let g3 = build_grid(3, 16).unwrap();
        let area3: f64 = (0..g3.node_count()).map(|i| g3.quadrature_weight(i)).sum();
        assert!((area3 - 2.0 * PI * PI).abs() < 1e-2 * 2.0 * PI * PI);
    }

    #[test]
    fn stencil_support_is_local_and_contains_center() {
        let g = build_grid(3, 8).unwrap();
        for node in [0, 37, 511, 300] {
            let s = g.stencil_support(node);
            assert!(s.contains(&node));
            assert!(s.len() <= 19);
            for &j in &s {
                assert!(j < g.node_count());
            }
        }
    }
}
