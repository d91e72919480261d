//! Localized fine-scale correctors.
//!
//! For a coarse dof node `v` and layer `k` the corrector `Q_{v,k}(u_H)` is
//! the fine function in the kernel of the quasi-interpolation, supported on
//! the patch `omega_{v,k}`, with
//! `B(Q_{v,k} u_H, z) = int_{omega_v} B lambda_hat_v grad u_H . grad z y^a`
//! for all such `z`. Each patch problem is a saddle-point system
//!
//! ```text
//! [ K  C^T ] [q]   [r]
//! [ C  0   ] [m] = [0]
//! ```
//!
//! solved by block elimination: `K = L L^T` (envelope Cholesky), `Y = L^{-1} C^T`,
//! Schur complement `S = Y^T Y` factored with diagonal pivoting so that
//! constraints that are redundant on the patch drop out.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assembly::{assemble_stiffness_raw, ElementIntegrals, EnergyNorm, LOAD_DEGREE};
use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::interpolation::ConstraintSet;
use crate::mesh::{CylinderMesh, MeshHierarchy, NodeClassification, Point};
use crate::quadrature::SimplexQuadrature;
use crate::sparse::{CsrMatrix, EnvelopeCholesky, PivotedCholesky, SparseVector};

/// Relative pivot threshold below which a patch constraint counts as redundant.
const SCHUR_RANK_TOL: f64 = 1e-11;
/// Number of patch groups solved concurrently before their results are merged.
const GROUP_CHUNK: usize = 16;

/// Normalized partition-of-unity weight
/// `lambda_hat_v = lambda_v / sum_{dof v'} lambda_{v'}` at a point of the
/// coarse mesh; zero where the denominator is below `1e-14`.
pub fn pou_weight(coarse: &CylinderMesh, class: &NodeClassification, v: usize, p: &Point) -> Result<f64> {
    let (e, b) = coarse
        .locate(p)
        .ok_or_else(|| Error::Domain(format!("point {p:?} lies outside the cylinder")))?;
    Ok(pou_from_barycentric(coarse.simplex(e), &b, class, v))
}

fn pou_from_barycentric(simplex: &[usize], b: &[f64; 4], class: &NodeClassification, v: usize) -> f64 {
    let mut denom = 0.0;
    let mut num = 0.0;
    for (k, &node) in simplex.iter().enumerate() {
        if class.is_dof(node) {
            denom += b[k];
        }
        if node == v {
            num = b[k];
        }
    }
    if denom < 1e-14 || !class.is_dof(v) {
        0.0
    } else {
        num / denom
    }
}

/// Factored saddle-point system of one patch.
struct PatchSystem {
    free: Vec<usize>,
    chol: EnvelopeCholesky,
    /// `L^{-1} C^T`, row-major `free.len() x active.len()`.
    y: Vec<f64>,
    active: Vec<usize>,
    schur: PivotedCholesky,
}

impl PatchSystem {
    fn n(&self) -> usize {
        self.free.len()
    }

    fn m(&self) -> usize {
        self.active.len()
    }

    /// Solves for `nw` right-hand sides stored row-major in `rhs`.
    fn solve_many(&self, mut rhs: Vec<f64>, nw: usize) -> Vec<f64> {
        let (n, m) = (self.n(), self.m());
        self.chol.forward_many(&mut rhs, nw);
        if m > 0 && self.schur.rank() > 0 {
            // column-major views: Yt is m x n, Zt is nw x n
            let yt = DMatrix::from_column_slice(m, n, &self.y);
            let mut zt = DMatrix::from_vec(nw, n, rhs);
            let t = &yt * zt.transpose();
            let mut mu_t = DMatrix::zeros(nw, m);
            for c in 0..nw {
                let col: Vec<f64> = t.column(c).iter().copied().collect();
                let mu = self.schur.solve(&col);
                for (r, val) in mu.into_iter().enumerate() {
                    mu_t[(c, r)] = val;
                }
            }
            zt.gemm(-1.0, &mu_t, &yt, 1.0);
            rhs = zt.data.into();
        }
        self.chol.backward_many(&mut rhs, nw);
        rhs
    }
}

/// Correctors `Q_k(lambda_w)` of all coarse dof basis functions.
#[derive(Debug, Clone)]
pub struct CorrectorBasis {
    pub layer: usize,
    /// Coarse dof nodes `w`, ascending.
    pub coarse_dofs: Vec<usize>,
    /// `Q_k(lambda_w)` over fine nodes, in the order of `coarse_dofs`.
    pub correctors: Vec<SparseVector>,
    pub diagnostics: CorrectorDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectorDiagnostics {
    /// Distinct patch systems factored.
    pub patch_solves: usize,
    /// Largest number of free fine dofs in a patch.
    pub max_patch_dofs: usize,
    /// Constraints dropped as redundant, summed over patches.
    pub redundant_constraints: usize,
}

/// Corrector localization errors for one coarse node.
#[derive(Debug, Clone)]
pub struct DecayRecord {
    pub node: usize,
    pub layers: Vec<usize>,
    /// `||grad (Q_full - Q_k)(lambda_v)||_{L2(y^a)}` per layer.
    pub energies: Vec<f64>,
    /// `exp(slope)` of the fit of `log e_k` against `k`.
    pub theta: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Layers used in the fit.
    pub fit_layers: Vec<usize>,
}

/// Shared data for corrector problems on a fixed hierarchy and coefficient.
pub struct CorrectorEngine<'a> {
    hier: &'a MeshHierarchy,
    constraints: &'a ConstraintSet,
    stiffness: CsrMatrix,
    coeffs: Vec<f64>,
    pou: Vec<[f64; 4]>,
    coarse_class: NodeClassification,
    fine_class: NodeClassification,
}

impl<'a> CorrectorEngine<'a> {
    pub fn new(
        hier: &'a MeshHierarchy,
        field: &CoefficientField,
        a: f64,
        integrals: &ElementIntegrals,
        constraints: &'a ConstraintSet,
    ) -> Result<Self> {
        let coarse = &hier.coarse;
        let fine = &hier.fine;
        let coeffs = field.element_values(fine)?;
        let stiffness = assemble_stiffness_raw(fine, &coeffs, integrals);
        let coarse_class = coarse.classify_nodes();
        let fine_class = fine.classify_nodes();
        let quad = SimplexQuadrature::new(a, LOAD_DEGREE)?;
        let pou: Vec<[f64; 4]> = (0..fine.num_elements())
            .into_par_iter()
            .map(|fe| {
                let pe = hier.parent[fe];
                let cs = coarse.simplex(pe);
                let rule = quad.bary_rule(&fine.element_heights(fe), fine.element_volume(fe));
                let mut acc = [0.0; 4];
                for (b, &w) in rule.bary.iter().zip(&rule.weights) {
                    let x = fine.point_from_barycentric(fe, b);
                    let cb = coarse.barycentric(pe, &x);
                    for (k, &node) in cs.iter().enumerate() {
                        acc[k] += w * pou_from_barycentric(cs, &cb, &coarse_class, node);
                    }
                }
                acc
            })
            .collect();
        Ok(Self { hier, constraints, stiffness, coeffs, pou, coarse_class, fine_class })
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        self.hier
    }

    pub fn constraints(&self) -> &ConstraintSet {
        self.constraints
    }

    /// Fine weighted stiffness over all nodes (no boundary conditions).
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn coarse_classification(&self) -> &NodeClassification {
        &self.coarse_class
    }

    pub fn fine_classification(&self) -> &NodeClassification {
        &self.fine_class
    }

    /// `int_T lambda_hat_v y^a` for fine element `fe`.
    pub fn pou_integral(&self, fe: usize, v: usize) -> f64 {
        let cs = self.hier.coarse.simplex(self.hier.parent[fe]);
        cs.iter().position(|&c| c == v).map_or(0.0, |k| self.pou[fe][k])
    }

    /// Fine dof nodes all of whose elements lie in the coarse element set.
    fn free_dofs(&self, in_patch: &[bool]) -> Vec<usize> {
        let fine = &self.hier.fine;
        self.fine_class
            .dof_nodes
            .iter()
            .copied()
            .filter(|&n| fine.elements_of_node(n).iter().all(|&fe| in_patch[self.hier.parent[fe]]))
            .collect()
    }

    fn patch_system(&self, elements: &[usize]) -> Result<PatchSystem> {
        let mut in_patch = vec![false; self.hier.coarse.num_elements()];
        for &e in elements {
            in_patch[e] = true;
        }
        let free = self.free_dofs(&in_patch);
        let n = free.len();
        let chol = EnvelopeCholesky::factor_submatrix(&self.stiffness, &free)?;

        // active constraints ordered by their first free node, so Y has a staircase profile
        let mut first_seen: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, &node) in free.iter().enumerate() {
            for &r in self.constraints.rows_touching(node) {
                first_seen.entry(r).or_insert(i);
            }
        }
        let mut active: Vec<(usize, usize)> = first_seen.into_iter().map(|(r, i)| (i, r)).collect();
        active.sort_unstable();
        let m = active.len();
        let mut col_of = BTreeMap::new();
        for (c, &(_, r)) in active.iter().enumerate() {
            col_of.insert(r, c);
        }
        let mut y = vec![0.0; n * m];
        let mut width = vec![0usize; n];
        let mut started = 0;
        for (i, &node) in free.iter().enumerate() {
            while started < m && active[started].0 <= i {
                started += 1;
            }
            width[i] = started;
            let (rows, vals) = self.constraints.column(node);
            for (r, v) in rows.iter().zip(vals) {
                y[i * m + col_of[r]] = *v;
            }
        }
        chol.forward_many_profile(&mut y, m, &width);
        let schur = if m > 0 {
            let yt = DMatrix::from_column_slice(m, n, &y);
            let s = &yt * yt.transpose();
            PivotedCholesky::new(s.data.into(), m, SCHUR_RANK_TOL)
        } else {
            PivotedCholesky::new(Vec::new(), 0, SCHUR_RANK_TOL)
        };
        Ok(PatchSystem { free, chol, y, active: active.into_iter().map(|(_, r)| r).collect(), schur })
    }

    /// Adds the right side of node `v` for coarse functions whose gradient
    /// on coarse element `ce` is `grads(ce)[c]` for column `c`.
    fn add_rhs(&self, v: usize, local: &[usize], rhs: &mut [f64], nw: usize, grads: impl Fn(usize) -> Vec<(usize, Point)>) {
        let coarse = &self.hier.coarse;
        let fine = &self.hier.fine;
        let d = fine.dim();
        for &ce in coarse.elements_of_node(v) {
            let lv = coarse.simplex(ce).iter().position(|&c| c == v).expect("v is a vertex of its elements");
            let cols = grads(ce);
            if cols.is_empty() {
                continue;
            }
            for &fe in &self.hier.children[ce] {
                let weight = self.pou[fe][lv];
                if weight == 0.0 {
                    continue;
                }
                let coeff = self.coeffs[fe];
                let g = fine.element_gradients(fe);
                for (li, &node) in fine.simplex(fe).iter().enumerate() {
                    let i = local[node];
                    if i == usize::MAX {
                        continue;
                    }
                    for &(c, ref gu) in &cols {
                        let mut s = gu[d] * g[li][d];
                        for x in 0..d {
                            s += coeff * gu[x] * g[li][x];
                        }
                        rhs[i * nw + c] += weight * s;
                    }
                }
            }
        }
    }

    fn local_index(&self, free: &[usize]) -> Vec<usize> {
        let mut local = vec![usize::MAX; self.hier.fine.num_vertices()];
        for (i, &n) in free.iter().enumerate() {
            local[n] = i;
        }
        local
    }

    fn coarse_gradient(&self, ce: usize, u_h: &[f64]) -> Point {
        let g = self.hier.coarse.element_gradients(ce);
        let mut out = [0.0; 3];
        for (k, &node) in self.hier.coarse.simplex(ce).iter().enumerate() {
            for c in 0..3 {
                out[c] += u_h[node] * g[k][c];
            }
        }
        out
    }

    /// `Q_{v,k}(u_H)` over all fine nodes, for coarse nodal values `u_h`.
    pub fn solve_corrector(&self, v: usize, k: usize, u_h: &[f64]) -> Result<Vec<f64>> {
        let wrap = |e: Error| Error::Corrector { node: v, layer: k, source: Box::new(e) };
        if !self.coarse_class.is_dof(v) {
            return Err(wrap(Error::Domain("corrector requested for a Dirichlet node".into())));
        }
        if u_h.len() != self.hier.coarse.num_vertices() {
            return Err(Error::Structural(format!(
                "coarse function has {} values, coarse mesh has {} nodes",
                u_h.len(),
                self.hier.coarse.num_vertices()
            )));
        }
        let sys = self.patch_system(&self.hier.coarse.patch_elements(v, k)).map_err(wrap)?;
        let local = self.local_index(&sys.free);
        let mut rhs = vec![0.0; sys.n()];
        self.add_rhs(v, &local, &mut rhs, 1, |ce| vec![(0, self.coarse_gradient(ce, u_h))]);
        let q = sys.solve_many(rhs, 1);
        let mut out = vec![0.0; self.hier.fine.num_vertices()];
        for (i, &n) in sys.free.iter().enumerate() {
            out[n] = q[i];
        }
        Ok(out)
    }

    /// Coarse dof nodes sharing a coarse element with `v`.
    fn neighbours(&self, v: usize) -> Vec<usize> {
        let coarse = &self.hier.coarse;
        let mut out: Vec<usize> = coarse
            .elements_of_node(v)
            .iter()
            .flat_map(|&ce| coarse.simplex(ce).iter().copied())
            .filter(|&w| self.coarse_class.is_dof(w))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Solves all patch problems of layer `k` for the coarse basis functions
    /// in `targets` and returns `Q_k(lambda_w)` for each target.
    fn correctors_for(&self, k: usize, targets: &[usize]) -> Result<(Vec<SparseVector>, CorrectorDiagnostics)> {
        let coarse = &self.hier.coarse;
        let mut target_col = vec![usize::MAX; coarse.num_vertices()];
        for (c, &w) in targets.iter().enumerate() {
            target_col[w] = c;
        }
        // nodes whose corrector contributes to some target, grouped by patch
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for &v in &self.coarse_class.dof_nodes {
            if self.neighbours(v).iter().any(|&w| target_col[w] != usize::MAX) {
                groups.entry(coarse.patch_elements(v, k)).or_default().push(v);
            }
        }
        let groups: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
        let mut acc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); targets.len()];
        let mut compacted = vec![0usize; targets.len()];
        let mut diag = CorrectorDiagnostics::default();

        for chunk in groups.chunks(GROUP_CHUNK) {
            let results: Vec<Result<(Vec<usize>, Vec<usize>, Vec<f64>, usize)>> = chunk
                .par_iter()
                .map(|(elements, nodes)| {
                    let sys = self
                        .patch_system(elements)
                        .map_err(|e| Error::Corrector { node: nodes[0], layer: k, source: Box::new(e) })?;
                    let mut cols: Vec<usize> = nodes
                        .iter()
                        .flat_map(|&v| self.neighbours(v))
                        .filter(|&w| target_col[w] != usize::MAX)
                        .collect();
                    cols.sort_unstable();
                    cols.dedup();
                    let nw = cols.len();
                    let local = self.local_index(&sys.free);
                    let mut rhs = vec![0.0; sys.n() * nw];
                    for &v in nodes {
                        self.add_rhs(v, &local, &mut rhs, nw, |ce| {
                            let g = coarse.element_gradients(ce);
                            coarse
                                .simplex(ce)
                                .iter()
                                .enumerate()
                                .filter_map(|(lk, w)| cols.binary_search(w).ok().map(|c| (c, g[lk])))
                                .collect()
                        });
                    }
                    let q = sys.solve_many(rhs, nw);
                    let redundant = sys.m() - sys.schur.rank();
                    Ok((sys.free, cols, q, redundant))
                })
                .collect();
            for res in results {
                let (free, cols, q, redundant) = res?;
                diag.patch_solves += 1;
                diag.max_patch_dofs = diag.max_patch_dofs.max(free.len());
                diag.redundant_constraints += redundant;
                let nw = cols.len();
                for (c, &w) in cols.iter().enumerate() {
                    let t = target_col[w];
                    let list = &mut acc[t];
                    list.extend(free.iter().enumerate().map(|(i, &n)| (n as u32, q[i * nw + c])));
                    if list.len() > 2 * compacted[t] + 4096 {
                        let merged = SparseVector::from_pairs(std::mem::take(list));
                        compacted[t] = merged.nnz();
                        *list = merged.indices.into_iter().zip(merged.values).collect();
                    }
                }
            }
        }
        let correctors = acc.into_iter().map(SparseVector::from_pairs).collect();
        Ok((correctors, diag))
    }

    /// `Q_k(lambda_w) = sum_v Q_{v,k}(lambda_w)` for every coarse dof node `w`.
    pub fn corrector_basis(&self, k: usize) -> Result<CorrectorBasis> {
        let coarse_dofs = self.coarse_class.dof_nodes.clone();
        let (correctors, diagnostics) = self.correctors_for(k, &coarse_dofs)?;
        Ok(CorrectorBasis { layer: k, coarse_dofs, correctors, diagnostics })
    }

    /// `Q_k(lambda_w)` of a single basis function, over all fine nodes.
    pub fn basis_corrector(&self, w: usize, k: usize) -> Result<Vec<f64>> {
        if !self.coarse_class.is_dof(w) {
            return Err(Error::Domain(format!("coarse node {w} is not a degree of freedom")));
        }
        let (q, _) = self.correctors_for(k, &[w])?;
        Ok(q[0].to_dense(self.hier.fine.num_vertices()))
    }

    /// Layer count for which every patch covers the whole cylinder.
    pub fn full_layers(&self) -> usize {
        self.hier.coarse.full_domain_layers()
    }

    /// Localization errors of `Q_k(lambda_v)` against the full-domain
    /// corrector for `k = 1..=k_max`, with an exponential fit.
    pub fn measure_decay(&self, v: usize, k_max: usize, norm: &EnergyNorm) -> Result<DecayRecord> {
        let full = self.basis_corrector(v, self.full_layers())?;
        let mut layers = Vec::new();
        let mut energies = Vec::new();
        for k in 1..=k_max {
            let q = self.basis_corrector(v, k)?;
            layers.push(k);
            energies.push(norm.distance(&full, &q)?);
        }
        let scale = norm.norm(&full)?.max(f64::MIN_POSITIVE);
        let mut fit_layers = Vec::new();
        let mut logs = Vec::new();
        for (&k, &e) in layers.iter().zip(&energies) {
            if e < 1e-12 || e < 1e-10 * scale {
                break;
            }
            fit_layers.push(k);
            logs.push(e.ln());
        }
        let xs: Vec<f64> = fit_layers.iter().map(|&k| k as f64).collect();
        let (slope, r_squared) = linear_fit(&xs, &logs).map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared));
        Ok(DecayRecord { node: v, layers, energies, theta: slope.exp(), slope, r_squared, fit_layers })
    }
}
