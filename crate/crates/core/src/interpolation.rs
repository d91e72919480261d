//! Projective quasi-interpolation onto the coarse P1 space, realised as one
//! linear functional over fine nodal values per coarse degree of freedom.
//!
//! Interior coarse nodes use the local `y^a`-weighted L2 projection onto the
//! coarse space restricted to the node patch. Trace nodes use either the
//! local unweighted projection on the trace of the patch (`Local`) or the
//! global L2 projection onto the coarse trace space (`Global`); in the
//! latter case the rows store the moments `(tr u, lambda_v)_Omega` and
//! evaluation finishes with one solve against the coarse trace mass.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::assembly::{trace_face_mass, ElementIntegrals};
use crate::error::{Error, Result};
use crate::mesh::{MeshHierarchy, NodeKind};
use crate::sparse::CsrMatrix;

/// Treatment of coarse nodes on the trace `Omega x {0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BoundaryMode {
    #[default]
    Local,
    Global,
}

impl FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            _ => Err(Error::Domain(format!("boundary mode must be `local` or `global`, got `{s}`"))),
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Local => "local",
            Self::Global => "global",
        })
    }
}

#[derive(Debug, Clone)]
struct TraceProjection {
    rows: Vec<usize>,
    nodes: Vec<usize>,
    mass: Cholesky<f64, Dyn>,
}

/// Constraint functionals whose common kernel is the fine-scale space.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    mode: BoundaryMode,
    row_nodes: Vec<usize>,
    row_kinds: Vec<NodeKind>,
    rows: CsrMatrix,
    columns: CsrMatrix,
    scales: Vec<f64>,
    n_coarse: usize,
    trace: Option<TraceProjection>,
}

/// A local piece of an integral: fine vertex ids and the local mass matrix.
struct Piece<'a> {
    vertices: &'a [usize],
    mass: [[f64; 4]; 4],
}

fn prolongation_entry(p: &CsrMatrix, fine: usize, coarse: usize) -> f64 {
    let (cols, vals) = p.row(fine);
    cols.iter().position(|&c| c == coarse).map_or(0.0, |k| vals[k])
}

/// Moments `B[j][n] = int phi_n lambda_j` over the pieces, for the coarse
/// nodes `basis`, together with the fine nodes `n` they touch.
fn moments(p: &CsrMatrix, pieces: &[Piece<'_>], basis: &[usize], scratch: &mut [usize]) -> (Vec<usize>, DMatrix<f64>) {
    let mut fine_nodes = Vec::new();
    for piece in pieces {
        for &n in piece.vertices {
            if scratch[n] == usize::MAX {
                scratch[n] = fine_nodes.len();
                fine_nodes.push(n);
            }
        }
    }
    let mut b = DMatrix::zeros(basis.len(), fine_nodes.len());
    for piece in pieces {
        let nv = piece.vertices.len();
        for (j, &cj) in basis.iter().enumerate() {
            let lam: Vec<f64> = piece.vertices.iter().map(|&n| prolongation_entry(p, n, cj)).collect();
            if lam.iter().all(|&x| x == 0.0) {
                continue;
            }
            for q in 0..nv {
                let mut s = 0.0;
                for r in 0..nv {
                    s += lam[r] * piece.mass[r][q];
                }
                b[(j, scratch[piece.vertices[q]])] += s;
            }
        }
    }
    for &n in &fine_nodes {
        scratch[n] = usize::MAX;
    }
    (fine_nodes, b)
}

/// Gram matrix `M[j][k] = sum_n B[j][n] P[n][k]`.
fn gram(p: &CsrMatrix, basis: &[usize], fine_nodes: &[usize], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(basis.len(), basis.len());
    for (col, &n) in fine_nodes.iter().enumerate() {
        for (k, &ck) in basis.iter().enumerate() {
            let pk = prolongation_entry(p, n, ck);
            if pk != 0.0 {
                for j in 0..basis.len() {
                    m[(j, k)] += b[(j, col)] * pk;
                }
            }
        }
    }
    m
}

impl ConstraintSet {
    pub fn build(hier: &MeshHierarchy, a: f64, mode: BoundaryMode) -> Result<Self> {
        let integrals = ElementIntegrals::new(&hier.fine, a)?;
        Self::from_integrals(hier, &integrals, mode)
    }

    /// Builds the rows from precomputed fine element integrals.
    pub fn from_integrals(hier: &MeshHierarchy, integrals: &ElementIntegrals, mode: BoundaryMode) -> Result<Self> {
        let coarse = &hier.coarse;
        let fine = &hier.fine;
        let d = coarse.dim();
        let p = &hier.prolongation;
        let cclass = coarse.classify_nodes();
        let fclass = fine.classify_nodes();
        let n_fine = fine.num_vertices();

        // fine trace faces grouped by coarse parent element
        let mut faces_of_parent: Vec<Vec<usize>> = vec![Vec::new(); coarse.num_elements()];
        for (i, f) in fine.trace_faces().iter().enumerate() {
            faces_of_parent[hier.parent[f.element]].push(i);
        }

        let build_row = |v: usize, scratch: &mut Vec<usize>| -> Result<(Vec<(usize, f64)>, f64)> {
            let kind = cclass.kinds[v];
            let elements = coarse.elements_of_node(v);
            let mut pieces = Vec::new();
            if kind == NodeKind::Interior {
                for &ce in elements {
                    for &fe in &hier.children[ce] {
                        pieces.push(Piece { vertices: fine.simplex(fe), mass: integrals.mass[fe] });
                    }
                }
            } else {
                for &ce in elements {
                    for &fi in &faces_of_parent[ce] {
                        let face = &fine.trace_faces()[fi];
                        let m3 = trace_face_mass(d, face.measure);
                        let mut mass = [[0.0; 4]; 4];
                        for r in 0..=d {
                            mass[r][..=d].copy_from_slice(&m3[r][..=d]);
                        }
                        pieces.push(Piece { vertices: &face.vertices[..d + 1], mass });
                    }
                }
            }
            let row: Vec<f64>;
            let fine_nodes: Vec<usize>;
            if kind == NodeKind::Trace && mode == BoundaryMode::Global {
                let (nodes, b) = moments(p, &pieces, &[v], scratch);
                fine_nodes = nodes;
                row = b.row(0).iter().copied().collect();
            } else {
                let mut basis: Vec<usize> = elements
                    .iter()
                    .flat_map(|&ce| coarse.simplex(ce).iter().copied())
                    .filter(|&c| cclass.is_dof(c) && (kind == NodeKind::Interior || cclass.kinds[c] == NodeKind::Trace))
                    .collect();
                basis.sort_unstable();
                basis.dedup();
                let (nodes, b) = moments(p, &pieces, &basis, scratch);
                let m = gram(p, &basis, &nodes, &b);
                let chol = Cholesky::new(m)
                    .ok_or_else(|| Error::Singular(format!("local mass matrix of coarse node {v} is not positive definite")))?;
                let mut e = DVector::zeros(basis.len());
                e[basis.binary_search(&v).expect("node lies in its own patch")] = 1.0;
                let coef = chol.solve(&e);
                row = (b.transpose() * coef).iter().copied().collect();
                fine_nodes = nodes;
            }
            let entries: Vec<(usize, f64)> = fine_nodes
                .iter()
                .zip(&row)
                .filter(|(&n, &val)| fclass.is_dof(n) && val != 0.0)
                .map(|(&n, &val)| (n, val))
                .collect();
            let scale = entries.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
            if !(scale > 0.0) {
                return Err(Error::Singular(format!("constraint row of coarse node {v} vanishes on the fine space")));
            }
            Ok((entries.into_iter().map(|(n, val)| (n, val / scale)).collect(), scale))
        };

        let row_nodes = cclass.dof_nodes.clone();
        let built: Vec<(Vec<(usize, f64)>, f64)> = row_nodes
            .par_iter()
            .map_init(|| vec![usize::MAX; n_fine], |scratch, &v| build_row(v, scratch))
            .collect::<Result<_>>()?;

        let mut trips = Vec::new();
        let mut scales = Vec::with_capacity(built.len());
        for (r, (entries, scale)) in built.into_iter().enumerate() {
            trips.extend(entries.into_iter().map(|(n, val)| (r, n, val)));
            scales.push(scale);
        }
        let rows = CsrMatrix::from_triplets(row_nodes.len(), n_fine, trips);
        let columns = rows.transpose();
        let row_kinds: Vec<NodeKind> = row_nodes.iter().map(|&v| cclass.kinds[v]).collect();

        let trace = if mode == BoundaryMode::Global {
            let trace_rows: Vec<usize> = (0..row_nodes.len()).filter(|&r| row_kinds[r] == NodeKind::Trace).collect();
            let nodes: Vec<usize> = trace_rows.iter().map(|&r| row_nodes[r]).collect();
            let mut m = DMatrix::zeros(nodes.len(), nodes.len());
            for (j, &r) in trace_rows.iter().enumerate() {
                let (cols, vals) = rows.row(r);
                for (&n, &val) in cols.iter().zip(vals) {
                    for (k, &ck) in nodes.iter().enumerate() {
                        m[(j, k)] += scales[r] * val * prolongation_entry(p, n, ck);
                    }
                }
            }
            let m = (&m + m.transpose()) * 0.5;
            let mass = Cholesky::new(m).ok_or_else(|| Error::Singular("coarse trace mass is not positive definite".into()))?;
            Some(TraceProjection { rows: trace_rows, nodes, mass })
        } else {
            None
        };

        Ok(Self { mode, row_nodes, row_kinds, rows, columns, scales, n_coarse: coarse.num_vertices(), trace })
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn num_rows(&self) -> usize {
        self.row_nodes.len()
    }

    /// Coarse node owning each row.
    pub fn row_nodes(&self) -> &[usize] {
        &self.row_nodes
    }

    pub fn row_kind(&self, r: usize) -> NodeKind {
        self.row_kinds[r]
    }

    /// Normalized row `r` as (fine node ids, values).
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        self.rows.row(r)
    }

    /// Normalized rows as a sparse matrix (rows x fine nodes).
    pub fn matrix(&self) -> &CsrMatrix {
        &self.rows
    }

    /// Rows with a nonzero entry at fine node `n`.
    pub fn rows_touching(&self, n: usize) -> &[usize] {
        self.columns.row(n).0
    }

    /// Normalized entries at fine node `n` as (row ids, values).
    pub fn column(&self, n: usize) -> (&[usize], &[f64]) {
        self.columns.row(n)
    }

    /// Normalized row evaluations `C u`.
    pub fn residuals(&self, u: &[f64]) -> Vec<f64> {
        self.rows.mul_vec(u)
    }

    /// Coarse nodal values of the quasi-interpolant of a fine function.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let raw = self.residuals(u);
        let mut out = vec![0.0; self.n_coarse];
        for (r, &v) in self.row_nodes.iter().enumerate() {
            out[v] = raw[r] * self.scales[r];
        }
        if let Some(t) = &self.trace {
            let b = DVector::from_iterator(t.rows.len(), t.rows.iter().map(|&r| raw[r] * self.scales[r]));
            let c = t.mass.solve(&b);
            for (k, &v) in t.nodes.iter().enumerate() {
                out[v] = c[k];
            }
        }
        out
    }
}

pub fn build_constraints(hier: &MeshHierarchy, a: f64, mode: BoundaryMode) -> Result<ConstraintSet> {
    ConstraintSet::build(hier, a, mode)
}

/// Coarse representation `I_H u`, Dirichlet coarse values zero.
pub fn apply_ih(constraints: &ConstraintSet, u: &[f64]) -> Vec<f64> {
    constraints.apply(u)
}
