//! Assembly of the `y^a`-weighted P1 operators on a cylinder mesh.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::mesh::{CylinderMesh, Point};
use crate::quadrature::{unweighted_bary_rule, SimplexQuadrature};
use crate::sparse::CsrMatrix;
use crate::special::FractionalOrder;

/// Default exactness degree for mass-type integrands.
pub const MASS_DEGREE: usize = 2;
/// Exactness degree used for load vectors and error integrands.
pub const LOAD_DEGREE: usize = 4;

/// Per-element weighted integrals: `int_T y^a` and `int_T lambda_i lambda_j y^a`.
#[derive(Debug, Clone)]
pub struct ElementIntegrals {
    pub weighted_volume: Vec<f64>,
    pub mass: Vec<[[f64; 4]; 4]>,
}

impl ElementIntegrals {
    pub fn new(mesh: &CylinderMesh, a: f64) -> Result<Self> {
        let quad = SimplexQuadrature::new(a, MASS_DEGREE)?;
        let n = mesh.space_dim() + 1;
        let (weighted_volume, mass): (Vec<f64>, Vec<[[f64; 4]; 4]>) = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let rule = quad.bary_rule(&mesh.element_heights(e), mesh.element_volume(e));
                let mut m = [[0.0; 4]; 4];
                for (b, &w) in rule.bary.iter().zip(&rule.weights) {
                    for i in 0..n {
                        for j in 0..n {
                            m[i][j] += w * b[i] * b[j];
                        }
                    }
                }
                (rule.weights.iter().sum::<f64>(), m)
            })
            .unzip();
        Ok(Self { weighted_volume, mass })
    }
}

/// Local stiffness `B_T grad(lambda_i) . grad(lambda_j) int_T y^a` of a
/// simplex with barycentric gradients `g` and scalar coefficient `coeff`
/// in the `x` block.
pub fn local_stiffness(g: &[Point; 4], d: usize, coeff: f64, weighted_volume: f64) -> [[f64; 4]; 4] {
    let n = d + 2;
    let mut k = [[0.0; 4]; 4];
    for i in 0..n {
        for j in i..n {
            let mut s = g[i][d] * g[j][d];
            for c in 0..d {
                s += coeff * g[i][c] * g[j][c];
            }
            k[i][j] = s * weighted_volume;
            k[j][i] = k[i][j];
        }
    }
    k
}

pub fn element_stiffness(mesh: &CylinderMesh, e: usize, coeff: f64, weighted_volume: f64) -> [[f64; 4]; 4] {
    local_stiffness(mesh.element_gradients(e), mesh.dim(), coeff, weighted_volume)
}

fn assemble_local(mesh: &CylinderMesh, local: impl Fn(usize) -> [[f64; 4]; 4] + Sync) -> CsrMatrix {
    let n = mesh.space_dim() + 1;
    let blocks: Vec<[[f64; 4]; 4]> = (0..mesh.num_elements()).into_par_iter().map(&local).collect();
    let mut trips = Vec::with_capacity(blocks.len() * n * n);
    for (e, block) in blocks.iter().enumerate() {
        let s = mesh.simplex(e);
        for i in 0..n {
            for j in 0..n {
                trips.push((s[i], s[j], block[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), mesh.num_vertices(), trips)
}

/// Weighted stiffness over all nodes, without boundary conditions, for
/// given per-element coefficient values.
pub fn assemble_stiffness_raw(mesh: &CylinderMesh, coeffs: &[f64], integrals: &ElementIntegrals) -> CsrMatrix {
    assert_eq!(coeffs.len(), mesh.num_elements());
    assemble_local(mesh, |e| element_stiffness(mesh, e, coeffs[e], integrals.weighted_volume[e]))
}

/// Weighted stiffness `int B grad(lambda_i) . grad(lambda_j) y^a` with the
/// rows and columns of Dirichlet nodes replaced by the identity.
pub fn assemble_weighted_stiffness(mesh: &CylinderMesh, field: &CoefficientField, a: f64) -> Result<CsrMatrix> {
    let coeffs = field.element_values(mesh)?;
    let integrals = ElementIntegrals::new(mesh, a)?;
    let raw = assemble_stiffness_raw(mesh, &coeffs, &integrals);
    Ok(raw.with_identity_rows(&mesh.classify_nodes().dirichlet_mask()))
}

/// Weighted mass `int lambda_i lambda_j y^a` over all nodes.
pub fn assemble_weighted_mass(mesh: &CylinderMesh, integrals: &ElementIntegrals) -> CsrMatrix {
    assemble_local(mesh, |e| integrals.mass[e])
}

/// Dense weighted mass `int_patch lambda_i lambda_j y^a` for the listed
/// nodes over the listed elements.
pub fn assemble_weighted_mass_local(
    mesh: &CylinderMesh,
    elements: &[usize],
    nodes: &[usize],
    integrals: &ElementIntegrals,
) -> Result<DMatrix<f64>> {
    if elements.is_empty() {
        return Err(Error::Domain("patch has no elements".into()));
    }
    let mut m = DMatrix::zeros(nodes.len(), nodes.len());
    let n = mesh.space_dim() + 1;
    for &e in elements {
        let s = mesh.simplex(e);
        let local: Vec<Option<usize>> = s.iter().map(|v| nodes.iter().position(|x| x == v)).collect();
        for i in 0..n {
            let Some(li) = local[i] else { continue };
            for j in 0..n {
                if let Some(lj) = local[j] {
                    m[(li, lj)] += integrals.mass[e][i][j];
                }
            }
        }
    }
    Ok(m)
}

/// Unweighted mass `int lambda_i lambda_j dx` on one trace face, in the
/// order of the face vertices.
pub fn trace_face_mass(d: usize, measure: f64) -> [[f64; 3]; 3] {
    // P1 mass on a d-simplex: |F| (1 + delta_ij) / ((d + 1)(d + 2))
    let denom = ((d + 1) * (d + 2)) as f64;
    let mut m = [[0.0; 3]; 3];
    for i in 0..=d {
        for j in 0..=d {
            m[i][j] = measure * if i == j { 2.0 } else { 1.0 } / denom;
        }
    }
    m
}

/// Load vector `c_s int_Omega f tr(lambda_i) dx` over all nodes (zero off the trace).
pub fn assemble_trace_load(mesh: &CylinderMesh, f: impl Fn(&Point) -> f64, order: &FractionalOrder) -> Result<Vec<f64>> {
    let d = mesh.dim();
    let mut load = vec![0.0; mesh.num_vertices()];
    let reference = unweighted_bary_rule(d, LOAD_DEGREE + 2, 1.0)?;
    for face in mesh.trace_faces() {
        let pts: Vec<Point> = face.vertices[..d + 1].iter().map(|&v| mesh.vertex(v)).collect();
        for (b, &w) in reference.bary.iter().zip(&reference.weights) {
            let mut x = [0.0; 3];
            for (k, p) in pts.iter().enumerate() {
                for c in 0..d {
                    x[c] += b[k] * p[c];
                }
            }
            let fx = f(&x) * w * face.measure * order.c_s;
            for (k, &v) in face.vertices[..d + 1].iter().enumerate() {
                load[v] += fx * b[k];
            }
        }
    }
    Ok(load)
}

/// Gram matrix of `||grad u||_{L2(y^a)}` (coefficient one), used for error norms.
#[derive(Debug, Clone)]
pub struct EnergyNorm {
    matrix: CsrMatrix,
}

impl EnergyNorm {
    pub fn new(mesh: &CylinderMesh, a: f64) -> Result<Self> {
        let integrals = ElementIntegrals::new(mesh, a)?;
        Ok(Self::from_integrals(mesh, &integrals))
    }

    pub fn from_integrals(mesh: &CylinderMesh, integrals: &ElementIntegrals) -> Self {
        let ones = vec![1.0; mesh.num_elements()];
        Self { matrix: assemble_stiffness_raw(mesh, &ones, integrals) }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn norm(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.matrix.nrows() {
            return Err(Error::Structural(format!(
                "function has {} nodal values, mesh has {} nodes",
                u.len(),
                self.matrix.nrows()
            )));
        }
        Ok(self.matrix.quadratic_form(u).max(0.0).sqrt())
    }

    /// `||grad(u1 - u2)||_{L2(y^a)}`.
    pub fn distance(&self, u1: &[f64], u2: &[f64]) -> Result<f64> {
        if u1.len() != u2.len() {
            return Err(Error::Structural(format!("functions have {} and {} nodal values", u1.len(), u2.len())));
        }
        let diff: Vec<f64> = u1.iter().zip(u2).map(|(x, y)| x - y).collect();
        self.norm(&diff)
    }
}

/// `||grad u||_{L2(C_T, y^a)}` of a nodal function on `mesh`.
pub fn weighted_energy_norm(mesh: &CylinderMesh, u: &[f64], a: f64) -> Result<f64> {
    EnergyNorm::new(mesh, a)?.norm(u)
}
