//! Structured simplicial meshes of the truncated cylinder `(0,1)^d x (0,T)`.
//!
//! Every grid box is split into Kuhn simplices along the main diagonal, so
//! triangulations at spacings `h` and `h / m` are nested for any integer
//! `m` and refinement never needs case analysis.
//!
//! Coordinates are stored as `[x, y, 0]` for `d = 1` and `[x1, x2, y]` for
//! `d = 2`; the extension variable `y` is always the last used coordinate.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{domain, Error, Result};
use crate::sparse::CsrMatrix;

pub type Point = [f64; 3];

/// Volume of a simplex with `dim + 1` vertices in `dim` coordinates.
pub fn simplex_volume(v: &[Point], dim: usize) -> f64 {
    match dim {
        1 => (v[1][0] - v[0][0]).abs(),
        2 => {
            let (ax, ay) = (v[1][0] - v[0][0], v[1][1] - v[0][1]);
            let (bx, by) = (v[2][0] - v[0][0], v[2][1] - v[0][1]);
            0.5 * (ax * by - ay * bx).abs()
        }
        3 => {
            let a = sub(v[1], v[0]);
            let b = sub(v[2], v[0]);
            let c = sub(v[3], v[0]);
            det3(a, b, c).abs() / 6.0
        }
        _ => panic!("unsupported simplex dimension {dim}"),
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn det3(a: Point, b: Point, c: Point) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Gradients of the barycentric coordinates of a simplex.
pub fn barycentric_gradients(v: &[Point], dim: usize) -> [Point; 4] {
    let mut g = [[0.0; 3]; 4];
    match dim {
        2 => {
            let (ax, ay) = (v[1][0] - v[0][0], v[1][1] - v[0][1]);
            let (bx, by) = (v[2][0] - v[0][0], v[2][1] - v[0][1]);
            let det = ax * by - ay * bx;
            g[1] = [by / det, -bx / det, 0.0];
            g[2] = [-ay / det, ax / det, 0.0];
        }
        3 => {
            let a = sub(v[1], v[0]);
            let b = sub(v[2], v[0]);
            let c = sub(v[3], v[0]);
            let det = det3(a, b, c);
            let bc = cross(b, c);
            let ca = cross(c, a);
            let ab = cross(a, b);
            for k in 0..3 {
                g[1][k] = bc[k] / det;
                g[2][k] = ca[k] / det;
                g[3][k] = ab[k] / det;
            }
        }
        _ => panic!("unsupported simplex dimension {dim}"),
    }
    for k in 0..3 {
        g[0][k] = -(g[1][k] + g[2][k] + g[3][k]);
    }
    g
}

/// Kind of a mesh node with respect to the boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Free node away from `y = 0`.
    Interior,
    /// Free node on the trace `Omega x {0}`.
    Trace,
    /// Node on the lateral boundary or on the top `y = T`.
    Dirichlet,
}

/// Partition of the mesh nodes.
#[derive(Debug, Clone)]
pub struct NodeClassification {
    pub kinds: Vec<NodeKind>,
    pub interior_nodes: Vec<usize>,
    pub trace_nodes: Vec<usize>,
    pub dirichlet_nodes: Vec<usize>,
    /// Interior and trace nodes, ascending.
    pub dof_nodes: Vec<usize>,
}

impl NodeClassification {
    pub fn is_dirichlet(&self, v: usize) -> bool {
        self.kinds[v] == NodeKind::Dirichlet
    }

    pub fn is_dof(&self, v: usize) -> bool {
        self.kinds[v] != NodeKind::Dirichlet
    }

    pub fn dirichlet_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| *k == NodeKind::Dirichlet).collect()
    }
}

/// Face of an element lying on `y = 0`.
#[derive(Debug, Clone, Copy)]
pub struct TraceFace {
    pub element: usize,
    /// `d + 1` vertex ids (unused slots are `usize::MAX`).
    pub vertices: [usize; 3],
    /// `d`-dimensional measure.
    pub measure: f64,
}

/// Layered element patch around a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center_node: usize,
    pub layer: usize,
    /// Sorted element ids.
    pub elements: Vec<usize>,
    /// Indices into [`CylinderMesh::trace_faces`] of faces on `y = 0` that
    /// belong to patch elements.
    pub boundary_trace_faces: Vec<usize>,
}

impl Patch {
    pub fn contains(&self, element: usize) -> bool {
        self.elements.binary_search(&element).is_ok()
    }
}

/// Conforming simplicial mesh of the truncated cylinder.
#[derive(Debug, Clone)]
pub struct CylinderMesh {
    dim: usize,
    n_x: usize,
    n_y: usize,
    height: f64,
    vertices: Vec<Point>,
    simplices: Vec<[usize; 4]>,
    volumes: Vec<f64>,
    gradients: Vec<[Point; 4]>,
    node_elem_ptr: Vec<usize>,
    node_elem: Vec<usize>,
    trace_faces: Vec<TraceFace>,
    permutations: Vec<Vec<usize>>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
            out.push(p);
        }
    }
    out
}

/// Builds the structured Kuhn mesh with `n_x` cells per unit along each
/// spatial axis and `n_y` cells over `(0, T)`.
pub fn build_cylinder_mesh(d: usize, n_x: usize, height: f64, n_y: usize) -> Result<CylinderMesh> {
    CylinderMesh::new(d, n_x, height, n_y)
}

impl CylinderMesh {
    pub fn new(d: usize, n_x: usize, height: f64, n_y: usize) -> Result<Self> {
        if !(d == 1 || d == 2) {
            return domain(format!("spatial dimension must be 1 or 2, got {d}"));
        }
        if n_x == 0 || n_y == 0 {
            return domain("cell counts must be at least one");
        }
        if !(height > 0.0) || !height.is_finite() {
            return domain(format!("truncation height must be positive, got {height}"));
        }
        let sd = d + 1;
        let counts: Vec<usize> = (0..sd).map(|k| if k < d { n_x } else { n_y }).collect();
        let spacing: Vec<f64> = (0..sd).map(|k| if k < d { 1.0 / n_x as f64 } else { height / n_y as f64 }).collect();
        let node_counts: Vec<usize> = counts.iter().map(|c| c + 1).collect();
        let n_nodes: usize = node_counts.iter().product();

        let mut vertices = Vec::with_capacity(n_nodes);
        for id in 0..n_nodes {
            let idx = unflatten(id, &node_counts);
            let mut p = [0.0; 3];
            for k in 0..sd {
                p[k] = if idx[k] == counts[k] {
                    if k < d { 1.0 } else { height }
                } else {
                    idx[k] as f64 * spacing[k]
                };
            }
            vertices.push(p);
        }

        let perms = permutations(sd);
        let n_cells: usize = counts.iter().product();
        let mut simplices = Vec::with_capacity(n_cells * perms.len());
        for cell in 0..n_cells {
            let base = unflatten(cell, &counts);
            for perm in &perms {
                let mut corner = base.clone();
                let mut s = [usize::MAX; 4];
                s[0] = flatten(&corner, &node_counts);
                for (step, &axis) in perm.iter().enumerate() {
                    corner[axis] += 1;
                    s[step + 1] = flatten(&corner, &node_counts);
                }
                simplices.push(s);
            }
        }

        let mut mesh = Self {
            dim: d,
            n_x,
            n_y,
            height,
            vertices,
            simplices,
            volumes: Vec::new(),
            gradients: Vec::new(),
            node_elem_ptr: Vec::new(),
            node_elem: Vec::new(),
            trace_faces: Vec::new(),
            permutations: perms,
        };
        mesh.finish();
        Ok(mesh)
    }

    fn finish(&mut self) {
        let sd = self.space_dim();
        let mut volumes = Vec::with_capacity(self.simplices.len());
        let mut gradients = Vec::with_capacity(self.simplices.len());
        for e in 0..self.simplices.len() {
            let pts = self.element_points(e);
            volumes.push(simplex_volume(&pts[..sd + 1], sd));
            gradients.push(barycentric_gradients(&pts[..sd + 1], sd));
        }
        self.volumes = volumes;
        self.gradients = gradients;

        let n = self.vertices.len();
        let mut counts = vec![0usize; n + 1];
        for s in &self.simplices {
            for &v in &s[..sd + 1] {
                counts[v + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut list = vec![0usize; counts[n]];
        for (e, s) in self.simplices.iter().enumerate() {
            for &v in &s[..sd + 1] {
                list[fill[v]] = e;
                fill[v] += 1;
            }
        }
        self.node_elem_ptr = counts;
        self.node_elem = list;

        let d = self.dim;
        let mut faces = Vec::new();
        for (e, s) in self.simplices.iter().enumerate() {
            let on_trace: Vec<usize> = s[..sd + 1].iter().copied().filter(|&v| self.vertices[v][d] == 0.0).collect();
            if on_trace.len() == d + 1 {
                let mut vs = [usize::MAX; 3];
                vs[..d + 1].copy_from_slice(&on_trace);
                let pts: Vec<Point> = on_trace.iter().map(|&v| self.vertices[v]).collect();
                let measure = simplex_volume(&pts, d);
                faces.push(TraceFace { element: e, vertices: vs, measure });
            }
        }
        self.trace_faces = faces;
    }

    /// Uniformly refined mesh with `factor` times as many cells per axis.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return domain("refinement factor must be positive");
        }
        Self::new(self.dim, self.n_x * factor, self.height, self.n_y * factor)
    }

    /// Spatial dimension `d` of `Omega`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension `d + 1` of the cylinder.
    pub fn space_dim(&self) -> usize {
        self.dim + 1
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Cell width along the spatial axes.
    pub fn mesh_size(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.simplices.len()
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// The `y` coordinate of a node.
    pub fn height_of(&self, v: usize) -> f64 {
        self.vertices[v][self.dim]
    }

    pub fn simplex(&self, e: usize) -> &[usize] {
        &self.simplices[e][..self.dim + 2]
    }

    pub fn element_points(&self, e: usize) -> [Point; 4] {
        let mut pts = [[0.0; 3]; 4];
        for (k, &v) in self.simplex(e).iter().enumerate() {
            pts[k] = self.vertices[v];
        }
        pts
    }

    pub fn element_heights(&self, e: usize) -> Vec<f64> {
        self.simplex(e).iter().map(|&v| self.vertices[v][self.dim]).collect()
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    /// Gradients of the local barycentric functions of element `e`.
    pub fn element_gradients(&self, e: usize) -> &[Point; 4] {
        &self.gradients[e]
    }

    pub fn element_centroid(&self, e: usize) -> Point {
        let s = self.simplex(e);
        let mut c = [0.0; 3];
        for &v in s {
            for k in 0..3 {
                c[k] += self.vertices[v][k];
            }
        }
        c.map(|x| x / s.len() as f64)
    }

    pub fn elements_of_node(&self, v: usize) -> &[usize] {
        &self.node_elem[self.node_elem_ptr[v]..self.node_elem_ptr[v + 1]]
    }

    pub fn trace_faces(&self) -> &[TraceFace] {
        &self.trace_faces
    }

    /// Barycentric coordinates of `p` in element `e`.
    pub fn barycentric(&self, e: usize, p: &Point) -> [f64; 4] {
        let g = &self.gradients[e];
        let s = self.simplex(e);
        let v0 = self.vertices[s[0]];
        let diff = sub(*p, v0);
        let mut b = [0.0; 4];
        let mut rest = 0.0;
        for k in 1..s.len() {
            b[k] = g[k][0] * diff[0] + g[k][1] * diff[1] + g[k][2] * diff[2];
            rest += b[k];
        }
        b[0] = 1.0 - rest;
        b
    }

    /// Maps barycentric coordinates of element `e` to a physical point.
    pub fn point_from_barycentric(&self, e: usize, b: &[f64; 4]) -> Point {
        let mut p = [0.0; 3];
        for (k, &v) in self.simplex(e).iter().enumerate() {
            for c in 0..3 {
                p[c] += b[k] * self.vertices[v][c];
            }
        }
        p
    }

    /// Element containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: &Point) -> Option<(usize, [f64; 4])> {
        let sd = self.space_dim();
        let tol = 1e-12;
        let mut cell_idx = vec![0usize; sd];
        let mut frac = vec![0.0; sd];
        for k in 0..sd {
            let (n, len) = if k < self.dim { (self.n_x, 1.0) } else { (self.n_y, self.height) };
            let t = p[k] / len * n as f64;
            if t < -tol * n as f64 || t > n as f64 * (1.0 + tol) {
                return None;
            }
            let c = (t.floor().max(0.0) as usize).min(n - 1);
            cell_idx[k] = c;
            frac[k] = t - c as f64;
        }
        let mut order: Vec<usize> = (0..sd).collect();
        order.sort_by(|&i, &j| frac[j].total_cmp(&frac[i]));
        let local = self.permutations.iter().position(|perm| *perm == order)?;
        let counts: Vec<usize> = (0..sd).map(|k| if k < self.dim { self.n_x } else { self.n_y }).collect();
        let e = flatten(&cell_idx, &counts) * self.permutations.len() + local;
        Some((e, self.barycentric(e, p)))
    }

    /// Splits the nodes into interior, trace and Dirichlet nodes.
    pub fn classify_nodes(&self) -> NodeClassification {
        let d = self.dim;
        let mut kinds = Vec::with_capacity(self.vertices.len());
        let (mut interior, mut trace, mut dirichlet, mut dof) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (v, p) in self.vertices.iter().enumerate() {
            let lateral = (0..d).any(|k| p[k] == 0.0 || p[k] == 1.0);
            let kind = if lateral || p[d] == self.height {
                NodeKind::Dirichlet
            } else if p[d] == 0.0 {
                NodeKind::Trace
            } else {
                NodeKind::Interior
            };
            match kind {
                NodeKind::Dirichlet => dirichlet.push(v),
                NodeKind::Trace => {
                    trace.push(v);
                    dof.push(v);
                }
                NodeKind::Interior => {
                    interior.push(v);
                    dof.push(v);
                }
            }
            kinds.push(kind);
        }
        NodeClassification { kinds, interior_nodes: interior, trace_nodes: trace, dirichlet_nodes: dirichlet, dof_nodes: dof }
    }

    /// Elements of `omega_{v,k}`: the support of the hat function at `v`
    /// grown by `k` layers of neighbouring elements.
    pub fn patch_elements(&self, v: usize, k: usize) -> Vec<usize> {
        let mut in_patch = vec![false; self.num_elements()];
        let mut current: Vec<usize> = self.elements_of_node(v).to_vec();
        for &e in &current {
            in_patch[e] = true;
        }
        for _ in 0..k {
            let nodes: BTreeSet<usize> = current.iter().flat_map(|&e| self.simplex(e).iter().copied()).collect();
            let mut next = current.clone();
            for n in nodes {
                for &e in self.elements_of_node(n) {
                    if !in_patch[e] {
                        in_patch[e] = true;
                        next.push(e);
                    }
                }
            }
            if next.len() == current.len() {
                break;
            }
            current = next;
        }
        current.sort_unstable();
        current
    }

    pub fn patch(&self, v: usize, k: usize) -> Patch {
        let elements = self.patch_elements(v, k);
        let boundary_trace_faces = self
            .trace_faces
            .iter()
            .enumerate()
            .filter(|(_, f)| elements.binary_search(&f.element).is_ok())
            .map(|(i, _)| i)
            .collect();
        Patch { center_node: v, layer: k, elements, boundary_trace_faces }
    }

    /// Smallest layer count for which every patch is the whole mesh.
    pub fn full_domain_layers(&self) -> usize {
        // graph distance between nodes is at most twice the cell distance
        2 * self.n_x.max(self.n_y) + 1
    }

    /// Largest circumradius-to-inradius ratio over all elements.
    pub fn shape_regularity(&self) -> f64 {
        let sd = self.space_dim();
        (0..self.num_elements())
            .map(|e| {
                let pts = self.element_points(e);
                let vol = self.volumes[e];
                let mut edges = Vec::new();
                for i in 0..=sd {
                    for j in i + 1..=sd {
                        let dv = sub(pts[i], pts[j]);
                        edges.push((dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]).sqrt());
                    }
                }
                let longest = edges.iter().cloned().fold(0.0, f64::max);
                // ratio of longest edge to inradius, equivalent up to constants
                let surface: f64 = match sd {
                    2 => edges.iter().sum(),
                    _ => {
                        let s = self.simplex(e);
                        (0..4)
                            .map(|skip| {
                                let f: Vec<Point> = (0..4).filter(|&k| k != skip).map(|k| self.vertices[s[k]]).collect();
                                let c = cross(sub(f[1], f[0]), sub(f[2], f[0]));
                                0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
                            })
                            .sum()
                    }
                };
                let inradius = sd as f64 * vol / surface;
                longest / inradius
            })
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: `VERTICES n`, coordinates, `SIMPLICES m`, vertex tuples.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let sd = self.space_dim();
        writeln!(out, "VERTICES {}", self.vertices.len())?;
        for p in &self.vertices {
            let coords: Vec<String> = p[..sd].iter().map(|c| format!("{c}")).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        writeln!(out, "SIMPLICES {}", self.simplices.len())?;
        for e in 0..self.simplices.len() {
            let ids: Vec<String> = self.simplex(e).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", ids.join(" "))?;
        }
        Ok(())
    }
}

fn unflatten(mut id: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&c| {
            let r = id % c;
            id /= c;
            r
        })
        .collect()
}

fn flatten(idx: &[usize], counts: &[usize]) -> usize {
    idx.iter().zip(counts).rev().fold(0, |acc, (&i, &c)| acc * c + i)
}

/// A coarse mesh together with a nested refinement.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub coarse: CylinderMesh,
    pub fine: CylinderMesh,
    pub factor: usize,
    /// Coarse element containing each fine element.
    pub parent: Vec<usize>,
    /// Fine elements of each coarse element.
    pub children: Vec<Vec<usize>>,
    /// Fine-node values of coarse P1 functions (fine nodes x coarse nodes).
    pub prolongation: CsrMatrix,
}

impl MeshHierarchy {
    pub fn new(coarse: CylinderMesh, factor: usize) -> Result<Self> {
        let fine = coarse.refine(factor)?;
        Self::from_meshes(coarse, fine)
    }

    /// Checks nestedness and builds the refinement map.
    pub fn from_meshes(coarse: CylinderMesh, fine: CylinderMesh) -> Result<Self> {
        if coarse.dim != fine.dim
            || (coarse.height - fine.height).abs() > 1e-12 * coarse.height
            || fine.n_x % coarse.n_x != 0
            || fine.n_y % coarse.n_y != 0
            || fine.n_x / coarse.n_x != fine.n_y / coarse.n_y
        {
            return Err(Error::Structural(format!(
                "meshes are not nested: coarse {}x{} (T={}), fine {}x{} (T={})",
                coarse.n_x, coarse.n_y, coarse.height, fine.n_x, fine.n_y, fine.height
            )));
        }
        let factor = fine.n_x / coarse.n_x;
        let mut parent = Vec::with_capacity(fine.num_elements());
        let mut children = vec![Vec::new(); coarse.num_elements()];
        for e in 0..fine.num_elements() {
            let c = fine.element_centroid(e);
            let (pe, _) = coarse
                .locate(&c)
                .ok_or_else(|| Error::Structural(format!("fine element {e} lies outside the coarse mesh")))?;
            parent.push(pe);
            children[pe].push(e);
        }
        let mut trips = Vec::new();
        for v in 0..fine.num_vertices() {
            let p = fine.vertex(v);
            let (ce, b) = coarse
                .locate(&p)
                .ok_or_else(|| Error::Structural(format!("fine node {v} lies outside the coarse mesh")))?;
            for (k, &cv) in coarse.simplex(ce).iter().enumerate() {
                let w = if b[k].abs() < 1e-12 { 0.0 } else { b[k] };
                if w != 0.0 {
                    trips.push((v, cv, w));
                }
            }
        }
        let prolongation = CsrMatrix::from_triplets(fine.num_vertices(), coarse.num_vertices(), trips);
        Ok(Self { coarse, fine, factor, parent, children, prolongation })
    }

    /// Fine representation of a coarse nodal vector.
    pub fn prolong(&self, coarse_values: &[f64]) -> Vec<f64> {
        self.prolongation.mul_vec(coarse_values)
    }
}
