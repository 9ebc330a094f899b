//! Structured rectangular grids, boundary tagging and the per-layer
//! sub-meshes used by the build-process sub-problems.
//!
//! Nodes and elements are numbered lexicographically with the build axis
//! varying slowest. The lowest `k` element rows of a mesh are therefore the
//! first `k * cross_elements()` elements, and a layer sub-mesh shares its
//! numbering with the parent: both restriction maps are prefix identities.

use std::ops::Range;

use crate::error::{Error, Result};

/// Coordinate axis. Build directions are restricted to the positive axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Axis> {
        match k {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }

    /// Default build axis: +y in 2D, +z in 3D.
    pub fn default_build(dim: usize) -> Axis {
        if dim == 3 {
            Axis::Z
        } else {
            Axis::Y
        }
    }

    /// Parses an axis-aligned unit vector such as `[0, 1]` or `[0, 0, 1]`.
    pub fn from_unit_vector(v: &[f64]) -> Result<Axis> {
        let mut found = None;
        for (k, &c) in v.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if c != 1.0 || found.is_some() {
                return Err(Error::invalid(format!(
                    "build direction {v:?} must be a positive coordinate axis"
                )));
            }
            found = Axis::from_index(k);
        }
        found.ok_or_else(|| Error::invalid("build direction must be nonzero"))
    }
}

/// Uniform grid of congruent axis-aligned quadrilaterals (2D) or hexahedra (3D).
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredMesh {
    dim: usize,
    extents: [f64; 3],
    counts: [usize; 3],
    build_axis: Axis,
    elem_strides: [usize; 3],
    node_strides: [usize; 3],
}

/// An element face: the face of `element` normal to `axis`, on the low
/// (`side == 0`) or high (`side == 1`) end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub element: usize,
    pub axis: usize,
    pub side: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    DirichletMain,
    NeumannMain,
    BuildPlate,
    LayerTop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRegion {
    pub kind: BoundaryKind,
    pub faces: Vec<Face>,
}

impl BoundaryRegion {
    pub fn measure(&self, mesh: &StructuredMesh) -> f64 {
        self.faces.iter().map(|f| mesh.face_measure(f.axis)).sum()
    }

    /// Sorted, deduplicated node indices touched by the region.
    pub fn nodes(&self, mesh: &StructuredMesh) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .faces
            .iter()
            .flat_map(|f| mesh.face_nodes(f))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

impl StructuredMesh {
    /// Builds a mesh with `counts[k]` elements of size `extents[k] / counts[k]`
    /// along each axis. `extents.len()` fixes the dimension (2 or 3).
    pub fn new(extents: &[f64], counts: &[usize], build_axis: Axis) -> Result<Self> {
        let dim = extents.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if counts.len() != dim {
            return Err(Error::invalid(format!(
                "{} element counts given for a {dim}D mesh",
                counts.len()
            )));
        }
        if let Some(e) = extents.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!("extent {e} must be positive")));
        }
        if counts.contains(&0) {
            return Err(Error::invalid("element counts must be at least 1"));
        }
        if build_axis.index() >= dim {
            return Err(Error::invalid(format!(
                "build axis {build_axis:?} does not exist in {dim}D"
            )));
        }

        let mut ext = [1.0; 3];
        let mut cnt = [1usize; 3];
        ext[..dim].copy_from_slice(extents);
        cnt[..dim].copy_from_slice(counts);

        // Axis order, fastest first, with the build axis last.
        let mut order: Vec<usize> = (0..dim).filter(|&k| k != build_axis.index()).collect();
        order.push(build_axis.index());

        let mut elem_strides = [0usize; 3];
        let mut node_strides = [0usize; 3];
        let (mut es, mut ns) = (1usize, 1usize);
        for &k in &order {
            elem_strides[k] = es;
            node_strides[k] = ns;
            es *= cnt[k];
            ns *= cnt[k] + 1;
        }

        Ok(Self {
            dim,
            extents: ext,
            counts: cnt,
            build_axis,
            elem_strides,
            node_strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn build_axis(&self) -> Axis {
        self.build_axis
    }

    /// Unit build direction as a vector of length `dim`.
    pub fn build_dir(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        b[self.build_axis.index()] = 1.0;
        b
    }

    pub fn n_elements(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn n_nodes(&self) -> usize {
        self.counts().iter().map(|c| c + 1).product()
    }

    /// Nodes per element: 4 or 8.
    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn element_size(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.extents[k] / self.counts[k] as f64)
            .collect()
    }

    pub fn element_volume(&self) -> f64 {
        self.element_size().iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.extents().iter().product()
    }

    /// Domain extent along the build direction.
    pub fn height(&self) -> f64 {
        self.extents[self.build_axis.index()]
    }

    /// Number of element rows along the build direction.
    pub fn rows(&self) -> usize {
        self.counts[self.build_axis.index()]
    }

    /// Elements in one row normal to the build direction.
    pub fn cross_elements(&self) -> usize {
        self.n_elements() / self.rows()
    }

    /// Nodes in one node plane normal to the build direction.
    pub fn cross_nodes(&self) -> usize {
        self.n_nodes() / (self.rows() + 1)
    }

    /// Measure of the build plate (length in 2D with unit thickness, area in 3D).
    pub fn plate_measure(&self) -> f64 {
        self.domain_volume() / self.height()
    }

    /// Measure of a face normal to `axis`.
    pub fn face_measure(&self, axis: usize) -> f64 {
        let h = self.element_size();
        (0..self.dim).filter(|&k| k != axis).map(|k| h[k]).product()
    }

    /// Integer grid coordinates of an element.
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let mut g = [0usize; 3];
        for k in 0..self.dim {
            g[k] = (e / self.elem_strides[k]) % self.counts[k];
        }
        g
    }

    pub fn element_index(&self, g: [usize; 3]) -> usize {
        (0..self.dim).map(|k| g[k] * self.elem_strides[k]).sum()
    }

    /// Integer grid coordinates of a node.
    pub fn node_coords(&self, n: usize) -> [usize; 3] {
        let mut g = [0usize; 3];
        for k in 0..self.dim {
            g[k] = (n / self.node_strides[k]) % (self.counts[k] + 1);
        }
        g
    }

    pub fn node_index(&self, g: [usize; 3]) -> usize {
        (0..self.dim).map(|k| g[k] * self.node_strides[k]).sum()
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let g = self.node_coords(n);
        let h = self.element_size();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = g[k] as f64 * h[k];
        }
        x
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 3] {
        let g = self.element_coords(e);
        let h = self.element_size();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (g[k] as f64 + 0.5) * h[k];
        }
        x
    }

    /// Element row index along the build direction.
    pub fn element_row(&self, e: usize) -> usize {
        self.element_coords(e)[self.build_axis.index()]
    }

    /// Global node indices of an element. Local node `a` sits at offset
    /// `(a >> k) & 1` along axis `k`; only the first `2^dim` entries are used.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let g = self.element_coords(e);
        let base = self.node_index(g);
        let mut nodes = [0usize; 8];
        for (a, node) in nodes.iter_mut().enumerate().take(self.nodes_per_element()) {
            let mut n = base;
            for k in 0..self.dim {
                if (a >> k) & 1 == 1 {
                    n += self.node_strides[k];
                }
            }
            *node = n;
        }
        nodes
    }

    /// Local node numbers (within the element) lying on a face.
    pub fn face_local_nodes(&self, axis: usize, side: u8) -> Vec<usize> {
        (0..self.nodes_per_element())
            .filter(|a| ((a >> axis) & 1) as u8 == side)
            .collect()
    }

    pub fn face_nodes(&self, face: &Face) -> Vec<usize> {
        let nodes = self.element_nodes(face.element);
        self.face_local_nodes(face.axis, face.side)
            .into_iter()
            .map(|a| nodes[a])
            .collect()
    }

    pub fn is_boundary_face(&self, face: &Face) -> bool {
        if face.element >= self.n_elements() || face.axis >= self.dim {
            return false;
        }
        let g = self.element_coords(face.element);
        match face.side {
            0 => g[face.axis] == 0,
            1 => g[face.axis] + 1 == self.counts[face.axis],
            _ => false,
        }
    }

    /// All boundary faces on the low (`side == 0`) or high end of `axis`.
    pub fn boundary_faces(&self, axis: usize, side: u8) -> Vec<Face> {
        let layer = if side == 0 { 0 } else { self.counts[axis] - 1 };
        (0..self.n_elements())
            .filter(|&e| self.element_coords(e)[axis] == layer)
            .map(|element| Face {
                element,
                axis,
                side,
            })
            .collect()
    }

    /// Build plate Γ₀: the faces with x·b = 0.
    pub fn build_plate(&self) -> BoundaryRegion {
        BoundaryRegion {
            kind: BoundaryKind::BuildPlate,
            faces: self.boundary_faces(self.build_axis.index(), 0),
        }
    }

    /// Nodes on the plane x·b = 0; these are the first `cross_nodes()` nodes.
    pub fn plate_nodes(&self) -> Range<usize> {
        0..self.cross_nodes()
    }

    /// Same grid truncated to its lowest `rows` element rows.
    fn truncated(&self, rows: usize) -> StructuredMesh {
        let b = self.build_axis.index();
        let mut extents = self.extents()[..].to_vec();
        let mut counts = self.counts()[..].to_vec();
        extents[b] = self.extents[b] / self.counts[b] as f64 * rows as f64;
        counts[b] = rows;
        StructuredMesh::new(&extents, &counts, self.build_axis)
            .expect("truncation of a valid mesh is valid")
    }
}

/// Builds a structured mesh; `build_dir` defaults to +y (2D) or +z (3D).
pub fn build_mesh(
    extents: &[f64],
    elems_per_axis: &[usize],
    build_dir: Option<&[f64]>,
) -> Result<StructuredMesh> {
    let axis = match build_dir {
        Some(v) => {
            if v.len() != extents.len() {
                return Err(Error::invalid(format!(
                    "build direction has {} components for a {}D mesh",
                    v.len(),
                    extents.len()
                )));
            }
            Axis::from_unit_vector(v)?
        }
        None => Axis::default_build(extents.len()),
    };
    StructuredMesh::new(extents, elems_per_axis, axis)
}

/// Nested decomposition of the domain into the build states Ω₁ ⊂ … ⊂ Ω_l,
/// each made of whole element rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPartition {
    rows_total: usize,
    row_height: f64,
    tops: Vec<usize>,
}

impl LayerPartition {
    /// Uniform partition: Ω_i holds the lowest `i * rows / l` rows.
    pub fn uniform(mesh: &StructuredMesh, l: usize) -> Result<Self> {
        let rows = mesh.rows();
        if l == 0 {
            return Err(Error::invalid("number of layers must be at least 1"));
        }
        if rows % l != 0 {
            return Err(Error::invalid(format!(
                "{l} layers do not divide the {rows} element rows along the build direction"
            )));
        }
        let per = rows / l;
        Ok(Self {
            rows_total: rows,
            row_height: mesh.height() / rows as f64,
            tops: (1..=l).map(|i| i * per).collect(),
        })
    }

    /// Near-uniform partition for layer counts that do not divide the row
    /// count: the top of Ω_i is the row boundary nearest to `i * rows / l`.
    pub fn snapped(mesh: &StructuredMesh, l: usize) -> Result<Self> {
        let rows = mesh.rows();
        if l == 0 || l > rows {
            return Err(Error::invalid(format!(
                "snapped partition needs 1 <= layers <= rows, got {l} layers for {rows} rows"
            )));
        }
        let tops = (1..=l)
            .map(|i| ((i * rows) as f64 / l as f64).round() as usize)
            .collect();
        Ok(Self {
            rows_total: rows,
            row_height: mesh.height() / rows as f64,
            tops,
        })
    }

    pub fn len(&self) -> usize {
        self.tops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tops.is_empty()
    }

    pub fn rows_total(&self) -> usize {
        self.rows_total
    }

    /// Element rows contained in Ω_i (1-based `i`).
    pub fn rows(&self, i: usize) -> Range<usize> {
        0..self.tops[i - 1]
    }

    /// Element rows added when going from Ω_{i-1} to Ω_i.
    pub fn added_rows(&self, i: usize) -> Range<usize> {
        let lo = if i == 1 { 0 } else { self.tops[i - 2] };
        lo..self.tops[i - 1]
    }

    /// Height h_i of the top of Ω_i above the build plate.
    pub fn height(&self, i: usize) -> f64 {
        self.tops[i - 1] as f64 * self.row_height
    }
}

pub fn make_layer_partition(mesh: &StructuredMesh, l: usize) -> Result<LayerPartition> {
    LayerPartition::uniform(mesh, l)
}

/// The partially built domain Ω_i as a mesh of its own.
#[derive(Clone, Debug)]
pub struct SubMesh {
    layer: usize,
    mesh: StructuredMesh,
    plate: BoundaryRegion,
    top: BoundaryRegion,
}

impl SubMesh {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Sub → parent element map; a prefix of the parent numbering.
    pub fn element_map(&self) -> Range<usize> {
        0..self.mesh.n_elements()
    }

    /// Sub → parent node map; a prefix of the parent numbering.
    pub fn node_map(&self) -> Range<usize> {
        0..self.mesh.n_nodes()
    }

    pub fn parent_element(&self, e: usize) -> usize {
        debug_assert!(e < self.mesh.n_elements());
        e
    }

    pub fn parent_node(&self, n: usize) -> usize {
        debug_assert!(n < self.mesh.n_nodes());
        n
    }

    /// Γ₀ of the sub-domain.
    pub fn plate(&self) -> &BoundaryRegion {
        &self.plate
    }

    /// Γ_i^u, the horizontal face set at height h_i. For the last layer this
    /// is the top face of Ω.
    pub fn top(&self) -> &BoundaryRegion {
        &self.top
    }

    /// Top of Ω_i above the plate.
    pub fn height(&self) -> f64 {
        self.mesh.height()
    }
}

pub fn extract_submesh(
    mesh: &StructuredMesh,
    partition: &LayerPartition,
    i: usize,
) -> Result<SubMesh> {
    if i == 0 || i > partition.len() {
        return Err(Error::invalid(format!(
            "layer index {i} outside 1..={}",
            partition.len()
        )));
    }
    if partition.rows_total() != mesh.rows() {
        return Err(Error::invalid("partition was built for a different mesh"));
    }
    let sub = mesh.truncated(partition.rows(i).end);
    let b = sub.build_axis().index();
    let plate = sub.build_plate();
    let top = BoundaryRegion {
        kind: BoundaryKind::LayerTop,
        faces: sub.boundary_faces(b, 1),
    };
    Ok(SubMesh {
        layer: i,
        mesh: sub,
        plate,
        top,
    })
}

/// Restriction ρ|_{Ω_i} of a parent elementwise field.
pub fn restrict_field(field: &[f64], sub: &SubMesh, parent: &StructuredMesh) -> Result<Vec<f64>> {
    if field.len() != parent.n_elements() {
        return Err(Error::invalid(format!(
            "field has {} entries, mesh has {} elements",
            field.len(),
            parent.n_elements()
        )));
    }
    Ok(sub.element_map().map(|e| field[e]).collect())
}

/// Writes a sub-mesh elementwise field back into a parent-sized buffer.
pub fn scatter_field(sub_field: &[f64], sub: &SubMesh, parent_field: &mut [f64]) -> Result<()> {
    if sub_field.len() != sub.n_elements() {
        return Err(Error::invalid("sub-field length does not match the sub-mesh"));
    }
    for (e, &v) in sub.element_map().zip(sub_field) {
        parent_field[sub.parent_element(e)] = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantilever() -> StructuredMesh {
        build_mesh(&[12.0, 6.0], &[240, 120], None).unwrap()
    }

    #[test]
    fn counts_2d_and_3d() {
        let m = cantilever();
        assert_eq!(m.n_elements(), 28800);
        assert_eq!(m.n_nodes(), 29161);
        let m = build_mesh(&[1.0, 1.0], &[1, 1], None).unwrap();
        assert_eq!((m.n_elements(), m.n_nodes()), (1, 4));
        let m = build_mesh(&[12.0, 6.0, 6.0], &[60, 30, 30], None).unwrap();
        assert_eq!((m.n_elements(), m.n_nodes()), (54000, 58621));
        assert_eq!(m.build_axis(), Axis::Z);
    }

    #[test]
    fn invalid_meshes() {
        assert!(build_mesh(&[0.0, 1.0], &[1, 1], None).is_err());
        assert!(build_mesh(&[1.0, 1.0], &[0, 1], None).is_err());
        assert!(build_mesh(&[1.0, 1.0], &[1, 1], Some(&[0.5, 0.5])).is_err());
        assert!(build_mesh(&[1.0, 1.0], &[1, 1], Some(&[0.0, -1.0])).is_err());
        assert!(build_mesh(&[1.0, 1.0], &[1, 1], Some(&[1.0, 0.0])).is_ok());
    }

    #[test]
    fn build_axis_is_slowest() {
        let m = build_mesh(&[2.0, 3.0], &[2, 3], None).unwrap();
        assert_eq!(m.element_row(0), 0);
        assert_eq!(m.element_row(1), 0);
        assert_eq!(m.element_row(2), 1);
        // Build along x: x becomes the slowest index.
        let m = build_mesh(&[2.0, 3.0], &[2, 3], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.element_coords(3), [1, 0, 0]);
        assert_eq!(m.cross_elements(), 3);
    }

    #[test]
    fn element_nodes_follow_bit_layout() {
        let m = build_mesh(&[2.0, 1.0], &[2, 1], None).unwrap();
        let n = m.element_nodes(1);
        // nodes: row 0 = 0,1,2; row 1 = 3,4,5
        assert_eq!(&n[..4], &[1, 2, 4, 5]);
        let p = m.node_position(5);
        assert_eq!((p[0], p[1]), (2.0, 1.0));
    }

    #[test]
    fn layer_partition_rules() {
        let m = cantilever();
        let p = make_layer_partition(&m, 40).unwrap();
        assert_eq!(p.rows(1), 0..3);
        assert_eq!(p.rows(40), 0..120);
        let p1 = make_layer_partition(&m, 1).unwrap();
        assert_eq!(p1.rows(1), 0..120);
        let err = make_layer_partition(&m, 80).unwrap_err().to_string();
        assert!(err.contains("80") && err.contains("120"), "{err}");
        let m30 = build_mesh(&[12.0, 6.0, 6.0], &[60, 30, 30], None).unwrap();
        let p = make_layer_partition(&m30, 30).unwrap();
        for i in 1..=30 {
            assert_eq!(p.added_rows(i).len(), 1);
        }
        let s = LayerPartition::snapped(&m, 80).unwrap();
        assert_eq!(s.rows(80), 0..120);
        for i in 2..=80 {
            assert!(s.rows(i).end > s.rows(i - 1).end);
        }
    }

    #[test]
    fn submesh_sizes_and_top_faces() {
        let m = cantilever();
        let p = make_layer_partition(&m, 40).unwrap();
        let s1 = extract_submesh(&m, &p, 1).unwrap();
        assert_eq!(s1.n_elements(), 720);
        let s2 = extract_submesh(&m, &p, 2).unwrap();
        assert_eq!(s2.top().faces.len(), 240);
        assert!((s2.height() - 0.3).abs() < 1e-12);
        let sl = extract_submesh(&m, &p, 40).unwrap();
        assert_eq!(sl.element_map(), 0..m.n_elements());
        assert!(extract_submesh(&m, &p, 0).is_err());
        assert!(extract_submesh(&m, &p, 41).is_err());
    }

    #[test]
    fn restriction() {
        let m = cantilever();
        let p = make_layer_partition(&m, 40).unwrap();
        let s = extract_submesh(&m, &p, 5).unwrap();
        let uniform = vec![0.5; m.n_elements()];
        assert!(restrict_field(&uniform, &s, &m).unwrap().iter().all(|&v| v == 0.5));
        let rows: Vec<f64> = (0..m.n_elements()).map(|e| m.element_row(e) as f64).collect();
        let r = restrict_field(&rows, &s, &m).unwrap();
        assert_eq!(r.iter().cloned().fold(f64::MIN, f64::max), 14.0);
        let last = extract_submesh(&m, &p, 40).unwrap();
        assert_eq!(restrict_field(&rows, &last, &m).unwrap(), rows);
        assert!(restrict_field(&rows[1..], &s, &m).is_err());
    }

    #[test]
    fn nesting_and_partition_of_unity() {
        let m = build_mesh(&[4.0, 2.0], &[8, 12], None).unwrap();
        let p = make_layer_partition(&m, 4).unwrap();
        let mut seen = vec![0u32; m.n_elements()];
        for i in 1..=4 {
            let si = extract_submesh(&m, &p, i).unwrap();
            if i > 1 {
                let prev = extract_submesh(&m, &p, i - 1).unwrap();
                assert!(prev.element_map().all(|e| si.element_map().contains(&e)));
            }
            for e in 0..m.n_elements() {
                if p.added_rows(i).contains(&m.element_row(e)) {
                    seen[e] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn restrict_scatter_round_trip() {
        let m = build_mesh(&[3.0, 2.0, 2.0], &[3, 2, 4], None).unwrap();
        let p = make_layer_partition(&m, 2).unwrap();
        let s = extract_submesh(&m, &p, 1).unwrap();
        let field: Vec<f64> = (0..m.n_elements()).map(|e| e as f64 * 0.1).collect();
        let r = restrict_field(&field, &s, &m).unwrap();
        let mut back = vec![-1.0; m.n_elements()];
        scatter_field(&r, &s, &mut back).unwrap();
        for e in s.element_map() {
            assert_eq!(back[e], field[e]);
        }
    }

    #[test]
    fn layer_top_measure_equals_cross_section() {
        let m = build_mesh(&[12.0, 6.0, 6.0], &[12, 6, 6], None).unwrap();
        let p = make_layer_partition(&m, 3).unwrap();
        for i in 1..=3 {
            let s = extract_submesh(&m, &p, i).unwrap();
            assert!((s.top().measure(&m) - 72.0).abs() < 1e-9);
            assert!((s.plate().measure(&m) - 72.0).abs() < 1e-9);
        }
        let m2 = cantilever();
        assert!((m2.build_plate().measure(&m2) - 12.0).abs() < 1e-9);
    }
}
