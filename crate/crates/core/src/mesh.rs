//! Structured triangulations of the unit square, nested coarse/fine pairs and
//! element patches.
//!
//! Every mesh is a Friedrichs–Keller triangulation: the `n x n` grid of
//! squares is split along the diagonal from the lower-left to the upper-right
//! corner. Nodes are numbered row by row (`index = j * (n + 1) + i`), elements
//! square by square in the same order, the lower triangle first.

use std::io::Write;

use crate::error::{LodError, Result};
use crate::scalar::{Scalar, Vec2};

#[derive(Debug, Clone)]
pub struct TriMesh<T> {
    divisions: usize,
    nodes: Vec<Vec2<T>>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<T>,
    // CSR adjacency node -> incident elements
    node_elem_ptr: Vec<usize>,
    node_elem: Vec<usize>,
}

impl<T: Scalar> TriMesh<T> {
    /// Builds the triangulation with `divisions` squares per side.
    pub fn new(divisions: usize) -> Result<Self> {
        if divisions == 0 {
            return Err(LodError::InvalidMesh("zero divisions".into()));
        }
        if !divisions.is_power_of_two() {
            return Err(LodError::InvalidMesh(format!(
                "divisions per side must be a power of two, got {divisions}"
            )));
        }
        let n = divisions;
        let h = T::one() / T::from_usize_lossy(n);
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([T::from_usize_lossy(i) * h, T::from_usize_lossy(j) * h]);
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                elements.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                elements.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let area = h * h * T::lit(0.5);
        let areas = vec![area; elements.len()];

        let mut counts = vec![0usize; nodes.len() + 1];
        for el in &elements {
            for &v in el {
                counts[v + 1] += 1;
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let node_elem_ptr = counts.clone();
        let mut fill = counts;
        let mut node_elem = vec![0usize; node_elem_ptr[nodes.len()]];
        for (e, el) in elements.iter().enumerate() {
            for &v in el {
                node_elem[fill[v]] = e;
                fill[v] += 1;
            }
        }

        Ok(Self { divisions, nodes, elements, boundary, areas, node_elem_ptr, node_elem })
    }

    pub fn divisions(&self) -> usize {
        self.divisions
    }

    /// Mesh width `1 / divisions`.
    pub fn h(&self) -> T {
        T::one() / T::from_usize_lossy(self.divisions)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Vec2<T>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Vec2<T> {
        self.nodes[i]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> [usize; 3] {
        self.elements[e]
    }

    pub fn area(&self, e: usize) -> T {
        self.areas[e]
    }

    pub fn areas(&self) -> &[T] {
        &self.areas
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Nodes not on the boundary, ascending.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.boundary[i]).collect()
    }

    /// Elements sharing vertex `node`.
    pub fn elements_of_node(&self, node: usize) -> &[usize] {
        &self.node_elem[self.node_elem_ptr[node]..self.node_elem_ptr[node + 1]]
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.divisions + 1) + i
    }

    pub fn barycenter(&self, e: usize) -> Vec2<T> {
        let [a, b, c] = self.elements[e];
        let third = T::one() / T::lit(3.0);
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) * third, (pa[1] + pb[1] + pc[1]) * third]
    }

    /// Gradients of the three P1 shape functions of element `e`, in vertex order.
    pub fn shape_gradients(&self, e: usize) -> [Vec2<T>; 3] {
        let [a, b, c] = self.elements[e];
        let (p0, p1, p2) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let inv = T::one() / det;
        [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ]
    }

    /// Gradient of a nodal vector on element `e`.
    pub fn gradient(&self, e: usize, values: &[T]) -> Vec2<T> {
        let g = self.shape_gradients(e);
        let el = self.elements[e];
        let mut out = [T::zero(); 2];
        for k in 0..3 {
            let v = values[el[k]];
            out[0] += g[k][0] * v;
            out[1] += g[k][1] * v;
        }
        out
    }

    /// Element containing `p`; points on shared edges go to the lower triangle
    /// of the lower-left square.
    pub fn element_containing(&self, p: Vec2<T>) -> usize {
        let n = self.divisions;
        let nf = T::from_usize_lossy(n);
        let cell = |x: T| -> (usize, T) {
            let s = (x * nf).max(T::zero());
            let mut i = s.floor().to_usize().unwrap_or(0);
            if i >= n {
                i = n - 1;
            }
            (i, s - T::from_usize_lossy(i))
        };
        let (i, dx) = cell(p[0]);
        let (j, dy) = cell(p[1]);
        let square = j * n + i;
        if dy <= dx {
            2 * square
        } else {
            2 * square + 1
        }
    }

    /// Plain-text listing: node records, then element records, one per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "divisions {}", self.divisions)?;
        writeln!(out, "nodes {}", self.num_nodes())?;
        for (p, b) in self.nodes.iter().zip(&self.boundary) {
            writeln!(out, "{} {} {}", p[0].to_f64_lossy(), p[1].to_f64_lossy(), u8::from(*b))?;
        }
        writeln!(out, "elements {}", self.num_elements())?;
        for el in &self.elements {
            writeln!(out, "{} {} {}", el[0], el[1], el[2])?;
        }
        Ok(())
    }
}

/// Coarse and fine triangulation with the fine one refining the coarse one.
#[derive(Debug, Clone)]
pub struct NestedPair<T> {
    pub coarse: TriMesh<T>,
    pub fine: TriMesh<T>,
    fine_elements_of_coarse: Vec<Vec<usize>>,
    coarse_element_of_fine: Vec<usize>,
    fine_node_of_coarse_node: Vec<usize>,
}

impl<T: Scalar> NestedPair<T> {
    pub fn new(coarse_divisions: usize, fine_divisions: usize) -> Result<Self> {
        let coarse = TriMesh::new(coarse_divisions)?;
        let fine = TriMesh::new(fine_divisions)?;
        Self::from_meshes(coarse, fine)
    }

    pub fn from_meshes(coarse: TriMesh<T>, fine: TriMesh<T>) -> Result<Self> {
        if fine.divisions() < coarse.divisions() || fine.divisions() % coarse.divisions() != 0 {
            return Err(LodError::InvalidMesh(format!(
                "fine divisions {} are not a multiple of coarse divisions {}",
                fine.divisions(),
                coarse.divisions()
            )));
        }
        let ratio = fine.divisions() / coarse.divisions();
        let mut fine_elements_of_coarse = vec![Vec::new(); coarse.num_elements()];
        let mut coarse_element_of_fine = Vec::with_capacity(fine.num_elements());
        for k in 0..fine.num_elements() {
            let t = coarse.element_containing(fine.barycenter(k));
            fine_elements_of_coarse[t].push(k);
            coarse_element_of_fine.push(t);
        }
        let fine_node_of_coarse_node = (0..=coarse.divisions())
            .flat_map(|j| (0..=coarse.divisions()).map(move |i| (i, j)))
            .map(|(i, j)| fine.node_index(i * ratio, j * ratio))
            .collect();
        Ok(Self { coarse, fine, fine_elements_of_coarse, coarse_element_of_fine, fine_node_of_coarse_node })
    }

    /// Number of fine mesh widths per coarse mesh width.
    pub fn ratio(&self) -> usize {
        self.fine.divisions() / self.coarse.divisions()
    }

    pub fn fine_elements_of(&self, coarse_element: usize) -> &[usize] {
        &self.fine_elements_of_coarse[coarse_element]
    }

    pub fn coarse_element_of(&self, fine_element: usize) -> usize {
        self.coarse_element_of_fine[fine_element]
    }

    pub fn fine_node_of_coarse_node(&self, coarse_node: usize) -> usize {
        self.fine_node_of_coarse_node[coarse_node]
    }

    /// Builds the `layers`-layer patch around coarse element `center`.
    pub fn patch(&self, center: usize, layers: usize) -> Result<Patch> {
        let coarse_elements = patch_elements(&self.coarse, center, layers)?;
        let mut fine_elements: Vec<usize> = coarse_elements
            .iter()
            .flat_map(|&t| self.fine_elements_of_coarse[t].iter().copied())
            .collect();
        fine_elements.sort_unstable();

        let mut count = vec![0u32; self.fine.num_nodes()];
        for &k in &fine_elements {
            for v in self.fine.element(k) {
                count[v] += 1;
            }
        }
        let fine_nodes: Vec<usize> = (0..self.fine.num_nodes()).filter(|&v| count[v] > 0).collect();
        let interior_fine_nodes = fine_nodes
            .iter()
            .enumerate()
            .filter(|&(_, &v)| {
                !self.fine.is_boundary(v) && count[v] as usize == self.fine.elements_of_node(v).len()
            })
            .map(|(local, _)| local)
            .collect();
        Ok(Patch { center_element: center, layers, coarse_elements, fine_elements, fine_nodes, interior_fine_nodes })
    }
}

/// Union of coarse elements reached from `center` by `layers` vertex-neighbourhood steps.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center_element: usize,
    pub layers: usize,
    /// Sorted coarse element indices.
    pub coarse_elements: Vec<usize>,
    /// Sorted fine element indices covering the patch.
    pub fine_elements: Vec<usize>,
    /// Sorted global fine node indices; position in this list is the local index.
    pub fine_nodes: Vec<usize>,
    /// Local indices of fine nodes off the patch boundary and off the domain boundary.
    pub interior_fine_nodes: Vec<usize>,
}

impl Patch {
    /// Local index of a global fine node, if the node belongs to the patch.
    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.fine_nodes.binary_search(&global).ok()
    }

    /// Global indices of the interior fine nodes, ascending.
    pub fn interior_global_nodes(&self) -> Vec<usize> {
        self.interior_fine_nodes.iter().map(|&l| self.fine_nodes[l]).collect()
    }

    pub fn contains_coarse(&self, element: usize) -> bool {
        self.coarse_elements.binary_search(&element).is_ok()
    }
}

/// Coarse element set of the patch `N^layers(center)`.
pub fn patch_elements<T: Scalar>(mesh: &TriMesh<T>, center: usize, layers: usize) -> Result<Vec<usize>> {
    if center >= mesh.num_elements() {
        return Err(LodError::IndexOutOfRange { index: center, len: mesh.num_elements() });
    }
    let mut inside = vec![false; mesh.num_elements()];
    inside[center] = true;
    let mut current = vec![center];
    for _ in 0..layers {
        let mut node_seen = vec![false; mesh.num_nodes()];
        let mut next = current.clone();
        for &t in &current {
            for v in mesh.element(t) {
                if node_seen[v] {
                    continue;
                }
                node_seen[v] = true;
                for &k in mesh.elements_of_node(v) {
                    if !inside[k] {
                        inside[k] = true;
                        next.push(k);
                    }
                }
            }
        }
        if next.len() == current.len() {
            break;
        }
        current = next;
    }
    current.sort_unstable();
    Ok(current)
}

/// `max_T |N^m(T)|`, the largest number of coarse elements in any `m`-layer patch.
pub fn overlap_constant<T: Scalar>(mesh: &TriMesh<T>, layers: usize) -> usize {
    (0..mesh.num_elements())
        .map(|t| patch_elements(mesh, t, layers).map(|p| p.len()).unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// Smallest number of layers for which every patch covers the whole mesh.
pub fn saturation_layers<T: Scalar>(mesh: &TriMesh<T>) -> usize {
    let total = mesh.num_elements();
    (0..).find(|&m| overlap_min(mesh, m) == total).unwrap_or(0)
}

fn overlap_min<T: Scalar>(mesh: &TriMesh<T>, layers: usize) -> usize {
    (0..mesh.num_elements())
        .map(|t| patch_elements(mesh, t, layers).map(|p| p.len()).unwrap_or(0))
        .min()
        .unwrap_or(0)
}
