//! Quadrature against the weight `y^a` on intervals and simplices.
//!
//! Simplices are integrated through a collapsed ("join") parametrisation:
//! the vertices sitting on the lowest `y`-level form one face, the remaining
//! vertices the opposite face, and a single Jacobi direction `t` runs between
//! them. Since `y` is affine, on an element whose lowest level is `y = 0` and
//! whose other vertices share one height, `y^a` factors as `t^a` times a
//! constant, so a Gauss-Jacobi rule in `t` makes the weighted rule exact.
//! This covers every element of the structured cylinder meshes.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{domain, Result};
use crate::mesh::{simplex_volume, CylinderMesh, Point};
use crate::special::gamma;

/// Extra Gauss points used in the `t` direction when the weight is smooth
/// but not polynomial (elements away from `y = 0`).
const SMOOTH_EXTRA_POINTS: usize = 8;

/// One-dimensional rule on `(0, 1)`.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn beta_fn(p: f64, q: f64) -> Result<f64> {
    Ok(gamma(p)? * gamma(q)? / gamma(p + q)?)
}

/// Gauss rule with `n` nodes on `(0, 1)` for the weight `(1-t)^alpha t^beta`,
/// computed by Golub-Welsch from the Jacobi recurrence.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<Rule1d> {
    if n == 0 {
        return domain("quadrature needs at least one node");
    }
    if !(alpha > -1.0 && beta > -1.0) {
        return domain(format!("Jacobi exponents must exceed -1, got ({alpha}, {beta})"));
    }
    let ab = alpha + beta;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        jacobi[(k, k)] = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let s = 2.0 * m + ab;
            let off = (4.0 * m * (m + alpha) * (m + beta) * (m + ab) / (s * s * (s + 1.0) * (s - 1.0))).sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let total = beta_fn(alpha + 1.0, beta + 1.0)?;
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (eig.eigenvalues[i] + 1.0), total * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(Rule1d {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Physical quadrature rule: points in `dim` coordinates with the weight
/// `y^weight_exponent` already folded into `weights`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub weight_exponent: f64,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, &w)| w * f(p)).sum()
    }
}

/// Gauss-Jacobi rule on `(0, 1)` for the weight `y^a`, exact for degree `2n-1`.
pub fn jacobi_rule_1d(a: f64, n: usize) -> Result<QuadratureRule> {
    if !(a.abs() < 1.0) {
        return domain(format!("weight exponent must lie in (-1, 1), got {a}"));
    }
    let rule = gauss_jacobi(n, 0.0, a)?;
    Ok(QuadratureRule {
        dim: 1,
        points: rule.nodes.iter().map(|&y| [y, 0.0, 0.0]).collect(),
        weights: rule.weights,
        weight_exponent: a,
        exactness_degree: 2 * n - 1,
    })
}

/// Rule on a simplex expressed in barycentric coordinates; weights already
/// include the volume and the `y^a` factor.
#[derive(Debug, Clone, Default)]
pub struct BaryRule {
    pub bary: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Unweighted conical-product rule on the reference simplex of dimension `m`
/// (barycentric coordinates, weights summing to `1/m!`).
fn reference_simplex_rule(m: usize, n: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if m == 0 {
        return Ok((vec![vec![1.0]], vec![1.0]));
    }
    let first = gauss_jacobi(n, (m - 1) as f64, 0.0)?;
    let (sub_pts, sub_w) = reference_simplex_rule(m - 1, n)?;
    let mut pts = Vec::with_capacity(first.nodes.len() * sub_pts.len());
    let mut wts = Vec::with_capacity(pts.capacity());
    for (&u, &wu) in first.nodes.iter().zip(&first.weights) {
        for (sp, &sw) in sub_pts.iter().zip(&sub_w) {
            let mut b = Vec::with_capacity(m + 1);
            b.push(u);
            b.extend(sp.iter().map(|&c| (1.0 - u) * c));
            pts.push(b);
            wts.push(wu * sw);
        }
    }
    Ok((pts, wts))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Precomputed building blocks for `y^a`-weighted rules on simplices of
/// dimension up to three.
#[derive(Debug, Clone)]
pub struct SimplexQuadrature {
    a: f64,
    degree: usize,
    // (p, q, touching) -> rule in the collapsed direction
    radial: HashMap<(usize, usize, bool), Rule1d>,
    // (face dimension, refined) -> reference rule
    faces: HashMap<(usize, bool), (Vec<Vec<f64>>, Vec<f64>)>,
}

impl SimplexQuadrature {
    /// Rules exact to `degree` for polynomials against `y^a` on simplices
    /// touching `y = 0` with a single upper level.
    pub fn new(a: f64, degree: usize) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return domain(format!("weight exponent must lie in (-1, 1), got {a}"));
        }
        let n = degree / 2 + 1;
        let mut radial = HashMap::new();
        let mut faces = HashMap::new();
        for dim in 1..=3usize {
            for p in 0..dim {
                let q = dim - 1 - p;
                radial.insert((p, q, true), gauss_jacobi(n, p as f64, q as f64 + a)?);
                radial.insert((p, q, false), gauss_jacobi(n + SMOOTH_EXTRA_POINTS, p as f64, q as f64)?);
            }
        }
        for m in 0..=2usize {
            faces.insert((m, false), reference_simplex_rule(m, n)?);
            faces.insert((m, true), reference_simplex_rule(m, n + SMOOTH_EXTRA_POINTS)?);
        }
        Ok(Self { a, degree, radial, faces })
    }

    pub fn weight_exponent(&self) -> f64 {
        self.a
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Rule for a simplex with vertex heights `ys` (length `dim + 1`) and
    /// volume `volume`.
    pub fn bary_rule(&self, ys: &[f64], volume: f64) -> BaryRule {
        let dim = ys.len() - 1;
        let y_max = ys.iter().cloned().fold(0.0f64, f64::max);
        let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * y_max.max(1e-300);
        let (mut lower, mut upper): (Vec<usize>, Vec<usize>) = (0..=dim).partition(|&i| ys[i] - y_lo <= tol);
        let mut touching = y_lo <= tol;
        if upper.is_empty() {
            // flat in y: the weight is the constant y_lo^a
            upper.push(lower.pop().expect("simplex has vertices"));
            touching = false;
        }
        let p = lower.len() - 1;
        let q = upper.len() - 1;
        let upper_flat = upper.iter().all(|&j| (ys[j] - ys[upper[0]]).abs() <= tol);

        let radial = &self.radial[&(p, q, touching)];
        let (lo_pts, lo_w) = &self.faces[&(p, false)];
        let (up_pts, up_w) = &self.faces[&(q, !upper_flat)];
        let scale = factorial(dim) * volume;

        let mut rule = BaryRule::default();
        rule.bary.reserve(radial.nodes.len() * lo_w.len() * up_w.len());
        for (&t, &wt) in radial.nodes.iter().zip(&radial.weights) {
            for (bl, &wl) in lo_pts.iter().zip(lo_w) {
                for (bu, &wu) in up_pts.iter().zip(up_w) {
                    let mut bary = [0.0; 4];
                    for (k, &i) in lower.iter().enumerate() {
                        bary[i] = (1.0 - t) * bl[k];
                    }
                    let mut y_upper = 0.0;
                    for (k, &j) in upper.iter().enumerate() {
                        bary[j] = t * bu[k];
                        y_upper += bu[k] * ys[j];
                    }
                    let factor = if touching {
                        y_upper.powf(self.a)
                    } else {
                        ((1.0 - t) * y_lo + t * y_upper).powf(self.a)
                    };
                    rule.bary.push(bary);
                    rule.weights.push(scale * wt * wl * wu * factor);
                }
            }
        }
        rule
    }

    /// Integral of `y^a` over a simplex.
    pub fn weighted_volume(&self, ys: &[f64], volume: f64) -> f64 {
        self.bary_rule(ys, volume).weights.iter().sum()
    }
}

/// Unweighted rule of the given exactness degree on an `m`-simplex
/// (`m <= 3`) of measure `volume`, in barycentric coordinates.
pub fn unweighted_bary_rule(m: usize, degree: usize, volume: f64) -> Result<BaryRule> {
    let (pts, wts) = reference_simplex_rule(m, degree / 2 + 1)?;
    let scale = factorial(m) * volume;
    Ok(BaryRule {
        bary: pts
            .iter()
            .map(|p| {
                let mut b = [0.0; 4];
                b[..p.len()].copy_from_slice(p);
                b
            })
            .collect(),
        weights: wts.iter().map(|w| w * scale).collect(),
    })
}

/// Weighted rule on an explicit simplex given by `dim + 1` vertices in
/// `dim` coordinates, the last coordinate being `y`.
pub fn weighted_simplex_quadrature(vertices: &[Point], dim: usize, a: f64, degree: usize) -> Result<QuadratureRule> {
    if vertices.len() != dim + 1 || !(1..=3).contains(&dim) {
        return domain(format!("a {dim}-simplex needs {} vertices, got {}", dim + 1, vertices.len()));
    }
    if vertices.iter().any(|v| v[dim - 1] < 0.0) {
        return domain("simplex has a vertex below y = 0");
    }
    let volume = simplex_volume(vertices, dim);
    if !(volume > 0.0) {
        return domain("degenerate simplex");
    }
    let ys: Vec<f64> = vertices.iter().map(|v| v[dim - 1]).collect();
    let rule = SimplexQuadrature::new(a, degree)?.bary_rule(&ys, volume);
    let points = rule
        .bary
        .iter()
        .map(|b| {
            let mut p = [0.0; 3];
            for (i, v) in vertices.iter().enumerate() {
                for c in 0..dim {
                    p[c] += b[i] * v[c];
                }
            }
            p
        })
        .collect();
    Ok(QuadratureRule { dim, points, weights: rule.weights, weight_exponent: a, exactness_degree: degree })
}

/// Region over which a Muckenhoupt ratio is measured.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    /// Axis-aligned box; only its extent in `y` matters.
    Box { y_min: f64, y_max: f64 },
    /// Union of mesh elements.
    Elements { mesh: &'a CylinderMesh, elements: &'a [usize] },
}

/// `(mean of y^a) * (mean of y^-a)` over the region.
pub fn muckenhoupt_ratio(region: Region<'_>, a: f64) -> Result<f64> {
    if !(a.abs() < 1.0) {
        return domain(format!("weight exponent must lie in (-1, 1), got {a}"));
    }
    match region {
        Region::Box { y_min, y_max } => {
            if y_min < 0.0 {
                return domain("region extends below y = 0");
            }
            if !(y_max > y_min) {
                return domain("region has no volume");
            }
            let mean = |e: f64| (y_max.powf(e + 1.0) - y_min.powf(e + 1.0)) / ((e + 1.0) * (y_max - y_min));
            Ok(mean(a) * mean(-a))
        }
        Region::Elements { mesh, elements } => {
            if elements.is_empty() {
                return domain("region has no elements");
            }
            let plus = SimplexQuadrature::new(a, 0)?;
            let minus = SimplexQuadrature::new(-a, 0)?;
            let (mut vol, mut ip, mut im) = (0.0, 0.0, 0.0);
            for &e in elements {
                let ys = mesh.element_heights(e);
                let v = mesh.element_volume(e);
                if ys.iter().any(|&y| y < 0.0) {
                    return domain("region extends below y = 0");
                }
                vol += v;
                ip += plus.weighted_volume(&ys, v);
                im += minus.weighted_volume(&ys, v);
            }
            Ok((ip / vol) * (im / vol))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn beta_closed(p: f64, q: f64) -> f64 {
        beta_fn(p, q).unwrap()
    }

    #[test]
    fn midpoint_rule_for_zero_exponent() {
        let r = jacobi_rule_1d(0.0, 1).unwrap();
        assert_relative_eq!(r.points[0][0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_node_moment_matching() {
        // node m1/m0 and weight m0 for the moments of y^0.6
        let a = 0.6;
        let r = jacobi_rule_1d(a, 1).unwrap();
        let m0 = 1.0 / (1.0 + a);
        let m1 = 1.0 / (2.0 + a);
        assert_relative_eq!(r.points[0][0], m1 / m0, max_relative = 1e-14);
        assert_relative_eq!(r.points[0][0], 0.615_384_615_384_615_4, max_relative = 1e-14);
        assert_relative_eq!(r.weights[0], 0.625, max_relative = 1e-14);
    }

    #[test]
    fn jacobi_moments_exact() {
        for &a in &[-0.6, -0.2, 0.0, 0.3, 0.6, 0.95] {
            for n in 1..=6usize {
                let r = jacobi_rule_1d(a, n).unwrap();
                assert!(r.weights.iter().all(|&w| w > 0.0));
                assert!(r.points.iter().all(|p| p[0] > 0.0 && p[0] < 1.0));
                for k in 0..=(2 * n - 1) {
                    let q = r.integrate(|p| p[0].powi(k as i32));
                    assert_relative_eq!(q, 1.0 / (k as f64 + 1.0 + a), max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobi_rejects_bad_exponent() {
        assert!(jacobi_rule_1d(1.0, 2).is_err());
        assert!(jacobi_rule_1d(-1.2, 2).is_err());
        assert!(jacobi_rule_1d(0.2, 0).is_err());
    }

    #[test]
    fn reference_triangle_monomials() {
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        for &a in &[-0.6, 0.0, 0.6] {
            for degree in [2usize, 4] {
                let r = weighted_simplex_quadrature(&tri, 2, a, degree).unwrap();
                assert!(r.weights.iter().all(|&w| w > 0.0));
                assert!(r.points.iter().all(|p| p[1] > 0.0 && p[0] > 0.0 && p[0] + p[1] < 1.0));
                for i in 0..=degree {
                    for j in 0..=(degree - i) {
                        let q = r.integrate(|p| p[0].powi(i as i32) * p[1].powi(j as i32));
                        // int x^i y^{j+a} over x + y < 1
                        let exact = beta_closed(j as f64 + a + 1.0, i as f64 + 2.0) / (i as f64 + 1.0);
                        assert_relative_eq!(q, exact, max_relative = 1e-12);
                    }
                }
            }
            let one = weighted_simplex_quadrature(&tri, 2, a, 2).unwrap().integrate(|_| 1.0);
            assert_relative_eq!(one, 1.0 / ((1.0 + a) * (2.0 + a)), max_relative = 1e-12);
        }
    }

    #[test]
    fn reference_tetrahedron_monomials() {
        let tet = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for &a in &[-0.6, 0.0, 0.6] {
            let r = weighted_simplex_quadrature(&tet, 3, a, 4).unwrap();
            let one = r.integrate(|_| 1.0);
            assert_relative_eq!(one, 1.0 / ((1.0 + a) * (2.0 + a) * (3.0 + a)), max_relative = 1e-12);
            for i in 0..=4usize {
                for j in 0..=(4 - i) {
                    for k in 0..=(4 - i - j) {
                        let q = r.integrate(|p| p[0].powi(i as i32) * p[1].powi(j as i32) * p[2].powi(k as i32));
                        // Dirichlet integral: Gamma(i+1)Gamma(j+1)Gamma(k+a+1)/Gamma(i+j+k+a+4)
                        let exact = gamma(i as f64 + 1.0).unwrap() * gamma(j as f64 + 1.0).unwrap()
                            * gamma(k as f64 + a + 1.0).unwrap()
                            / gamma((i + j + k) as f64 + a + 4.0).unwrap();
                        assert_relative_eq!(q, exact, max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn apex_on_zero_plane() {
        // one vertex at y = 0, two at y = 1
        let tri = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]];
        let a = -0.6;
        let r = weighted_simplex_quadrature(&tri, 2, a, 2).unwrap();
        // width 2y at height y
        assert_relative_eq!(r.integrate(|_| 1.0), 2.0 / (2.0 + a), max_relative = 1e-12);
        assert_relative_eq!(r.integrate(|p| p[1]), 2.0 / (3.0 + a), max_relative = 1e-12);
    }

    #[test]
    fn lifted_triangle_against_adaptive_oracle() {
        // (0,0.5),(1,0.5),(0,1.5): width (1.5 - y) at height y
        let tri = [[0.0, 0.5, 0.0], [1.0, 0.5, 0.0], [0.0, 1.5, 0.0]];
        let a = 0.6;
        let r = weighted_simplex_quadrature(&tri, 2, a, 2).unwrap();
        let n = 200_000;
        let h = 1.0 / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let y = 0.5 + (i as f64 + 0.5) * h;
                y.powf(a) * (1.5 - y) * h
            })
            .sum();
        assert_relative_eq!(r.integrate(|_| 1.0), oracle, max_relative = 1e-9);
        let closed = 1.5 * (1.5f64.powf(1.0 + a) - 0.5f64.powf(1.0 + a)) / (1.0 + a)
            - (1.5f64.powf(2.0 + a) - 0.5f64.powf(2.0 + a)) / (2.0 + a);
        assert_relative_eq!(r.integrate(|_| 1.0), closed, max_relative = 1e-12);
    }

    #[test]
    fn negative_vertex_rejected() {
        let tri = [[0.0, -0.1, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(weighted_simplex_quadrature(&tri, 2, 0.2, 2).is_err());
    }

    #[test]
    fn muckenhoupt_box_values() {
        assert_relative_eq!(muckenhoupt_ratio(Region::Box { y_min: 0.0, y_max: 1.0 }, 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            muckenhoupt_ratio(Region::Box { y_min: 0.0, y_max: 1.0 }, 0.6).unwrap(),
            1.5625,
            max_relative = 1e-14
        );
        assert!(muckenhoupt_ratio(Region::Box { y_min: -0.5, y_max: 1.0 }, 0.6).is_err());
    }

    #[test]
    fn patch_muckenhoupt_ratio_bounded_under_refinement() {
        for a in [-0.6, 0.6] {
            let mut ratios = Vec::new();
            for n in [4usize, 8, 16, 32] {
                let mesh = crate::mesh::build_cylinder_mesh(1, n, 1.0, n).unwrap();
                let v = (0..mesh.num_vertices()).find(|&v| mesh.vertex(v) == [0.5, 0.0, 0.0]).unwrap();
                let patch = mesh.patch(v, 1);
                ratios.push(muckenhoupt_ratio(Region::Elements { mesh: &mesh, elements: &patch.elements }, a).unwrap());
            }
            let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
            let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min >= 1.0 && max / min < 2.0, "{ratios:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn muckenhoupt_at_least_one(y0 in 0.0f64..2.0, len in 1e-3f64..3.0, a in -0.95f64..0.95) {
            let r = muckenhoupt_ratio(Region::Box { y_min: y0, y_max: y0 + len }, a).unwrap();
            proptest::prop_assert!(r >= 1.0 - 1e-12);
        }
    }
}
