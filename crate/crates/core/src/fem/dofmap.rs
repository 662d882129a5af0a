use crate::fem::mesh::QuadMesh;

/// Vertex → degree-of-freedom numbering, optionally with periodic
/// identification of opposite boundary vertices and a mean-zero constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    vertex_dof: Vec<Option<usize>>,
    n_dofs: usize,
    periodic: bool,
    mean_zero: bool,
}

impl DofMap {
    /// One DOF per vertex touching an active element.
    pub fn new(mesh: &QuadMesh) -> Self {
        Self::build(mesh, false, false)
    }

    /// Identifies vertex `(i, j)` with `(i mod nx, j mod ny)`.
    pub fn periodic(mesh: &QuadMesh, mean_zero: bool) -> Self {
        Self::build(mesh, true, mean_zero)
    }

    fn build(mesh: &QuadMesh, periodic: bool, mean_zero: bool) -> Self {
        let nv = mesh.n_vertices();
        let canonical = |v: usize| -> usize {
            if !periodic {
                return v;
            }
            let [i, j] = mesh.vertex_ij(v);
            mesh.vertex_index(i % mesh.nx, j % mesh.ny)
        };
        let mut used = vec![false; nv];
        for e in 0..mesh.n_elements() {
            if mesh.is_active(e) {
                for v in mesh.element_vertices(e) {
                    used[canonical(v)] = true;
                }
            }
        }
        let mut numbering = vec![None; nv];
        let mut n_dofs = 0;
        for v in 0..nv {
            if used[v] {
                numbering[v] = Some(n_dofs);
                n_dofs += 1;
            }
        }
        let vertex_dof = (0..nv).map(|v| numbering[canonical(v)]).collect();
        DofMap {
            vertex_dof,
            n_dofs,
            periodic,
            mean_zero,
        }
    }

    #[inline]
    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.vertex_dof[vertex]
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn mean_zero(&self) -> bool {
        self.mean_zero
    }

    /// Vertex values from a DOF vector (zero where a vertex carries no DOF).
    pub fn expand(&self, dofs: &[f64]) -> Vec<f64> {
        self.vertex_dof
            .iter()
            .map(|d| d.map_or(0.0, |k| dofs[k]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ReferenceCell;

    #[test]
    fn periodic_identification() {
        let m = QuadMesh::unit_square(4);
        let d = DofMap::periodic(&m, true);
        assert_eq!(d.n_dofs(), 16);
        assert_eq!(d.dof(m.vertex_index(4, 2)), d.dof(m.vertex_index(0, 2)));
        assert_eq!(d.dof(m.vertex_index(4, 4)), d.dof(0));
        assert_eq!(DofMap::new(&m).n_dofs(), 25);
    }

    #[test]
    fn hole_vertices_dropped() {
        let m = QuadMesh::unit_square(16)
            .perforate(&ReferenceCell::default(), 16)
            .unwrap();
        let d = DofMap::new(&m);
        // interior hole vertices: 3×3 strictly inside the 4×4-element hole
        assert_eq!(d.n_dofs(), 17 * 17 - 9);
        assert_eq!(d.dof(m.vertex_index(8, 8)), None);
    }
}
