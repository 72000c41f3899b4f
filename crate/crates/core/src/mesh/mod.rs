//! Triangulated 2-D component manifolds: areas, vertex quadrature weights,
//! graph-geodesic distances and metric balls.

mod distance;
mod icosphere;
mod off;

use std::collections::BTreeMap;

pub use distance::DistanceMatrix;
pub use icosphere::build_icosphere;
pub use off::{load_mesh, parse_edge_lengths, parse_off, write_off};

use crate::error::{Error, Result};

/// Relative slack (times the perimeter) within which a triangle-inequality
/// violation is treated as a degenerate, zero-area triangle.
pub const TRIANGLE_INEQUALITY_TOLERANCE: f64 = 1e-9;

/// A triangulated surface `(E, T)` with edge lengths, and optionally the
/// derived vertex weights and all-pairs distances.
#[derive(Debug, Clone)]
pub struct TriangulatedManifold {
    positions: Option<Vec<[f64; 3]>>,
    n_vertices: usize,
    triangles: Vec<[usize; 3]>,
    edges: BTreeMap<(usize, usize), f64>,
    weights: Option<Vec<f64>>,
    distances: Option<DistanceMatrix>,
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn euclidean(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn validate_triangles(n_vertices: usize, triangles: &[[usize; 3]]) -> Result<()> {
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            if v >= n_vertices {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {v}, but there are only {n_vertices} vertices"
                )));
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::InvalidMesh(format!(
                "triangle {t} has repeated vertices {tri:?}"
            )));
        }
    }
    Ok(())
}

impl TriangulatedManifold {
    /// Mesh embedded in R^3; edge lengths are the Euclidean chord lengths.
    pub fn from_positions(positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n_vertices = positions.len();
        validate_triangles(n_vertices, &triangles)?;
        if let Some(bad) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {bad} has non-finite coordinates")));
        }
        let mut edges = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges
                    .entry(edge_key(a, b))
                    .or_insert_with(|| euclidean(&positions[a], &positions[b]));
            }
        }
        Ok(Self {
            positions: Some(positions),
            n_vertices,
            triangles,
            edges,
            weights: None,
            distances: None,
        })
    }

    /// Abstract mesh without an embedding. Every triangle edge needs a length.
    pub fn from_edge_lengths(
        n_vertices: usize,
        triangles: Vec<[usize; 3]>,
        lengths: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<Self> {
        validate_triangles(n_vertices, &triangles)?;
        let given: BTreeMap<_, _> = lengths
            .into_iter()
            .map(|((a, b), l)| (edge_key(a, b), l))
            .collect();
        let mut edges = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                let len = *given.get(&key).ok_or_else(|| {
                    Error::InvalidMesh(format!("no length given for edge {key:?}"))
                })?;
                check_length(key, len)?;
                edges.insert(key, len);
            }
        }
        Ok(Self {
            positions: None,
            n_vertices,
            triangles,
            edges,
            weights: None,
            distances: None,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn positions(&self) -> Option<&[[f64; 3]]> {
        self.positions.as_deref()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `((lo, hi), length)` with `lo < hi`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.edges.iter().map(|(&k, &l)| (k, l))
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.edges.get(&edge_key(a, b)).copied()
    }

    /// Overrides the length of an existing edge, e.g. with a curved-surface
    /// geodesic length. Invalidates derived weights and distances.
    pub fn set_edge_length(&mut self, a: usize, b: usize, length: f64) -> Result<()> {
        let key = edge_key(a, b);
        check_length(key, length)?;
        match self.edges.get_mut(&key) {
            Some(slot) => *slot = length,
            None => {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) is not an edge of the triangulation"
                )))
            }
        }
        self.weights = None;
        self.distances = None;
        Ok(())
    }

    pub fn apply_edge_lengths(
        &mut self,
        overrides: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<()> {
        for ((a, b), len) in overrides {
            self.set_edge_length(a, b, len)?;
        }
        Ok(())
    }

    fn adjacency(&self, allowed: Option<&[bool]>) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        let ok = |v: usize| allowed.is_none_or(|mask| mask[v]);
        for (&(a, b), &len) in &self.edges {
            if ok(a) && ok(b) {
                adj[a].push((b, len));
                adj[b].push((a, len));
            }
        }
        adj
    }

    /// Number of connected components of the edge graph (isolated vertices
    /// count as their own components).
    pub fn connected_components(&self) -> usize {
        let adj = self.adjacency(None);
        let mut seen = vec![false; self.n_vertices];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n_vertices {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(w, _) in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components() <= 1
    }

    fn side_lengths(&self, tri: &[usize; 3]) -> [f64; 3] {
        [
            self.edges[&edge_key(tri[0], tri[1])],
            self.edges[&edge_key(tri[1], tri[2])],
            self.edges[&edge_key(tri[2], tri[0])],
        ]
    }

    /// Flat area `A(S)` of every triangle, from its edge lengths.
    pub fn triangle_areas(&self) -> Result<Vec<f64>> {
        self.triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let [a, b, c] = self.side_lengths(tri);
                triangle_area(a, b, c).map_err(|e| match e {
                    Error::TriangleInequality { a, b, c, .. } => Error::TriangleInequality {
                        triangle: t,
                        a,
                        b,
                        c,
                    },
                    other => other,
                })
            })
            .collect()
    }

    pub fn total_area(&self) -> Result<f64> {
        Ok(self.triangle_areas()?.iter().sum())
    }

    /// Lumped vertex weights: each triangle gives a third of its area to
    /// each of its vertices.
    pub fn compute_weights(&mut self) -> Result<()> {
        let areas = self.triangle_areas()?;
        let mut weights = vec![0.0; self.n_vertices];
        for (tri, area) in self.triangles.iter().zip(&areas) {
            let share = area / 3.0;
            for &v in tri {
                weights[v] += share;
            }
        }
        self.weights = Some(weights);
        Ok(())
    }

    pub fn weights(&self) -> Result<&[f64]> {
        self.weights.as_deref().ok_or(Error::NotComputed("vertex weights"))
    }

    /// All-pairs shortest-path distances over the edge graph, optionally
    /// restricted to the subgraph induced by `allowed_vertices`.
    ///
    /// Pairs with no connecting path get `f64::INFINITY`. Rows of vertices
    /// outside the allowed set are infinite except on the diagonal.
    pub fn geodesic_distances(&self, allowed_vertices: Option<&[usize]>) -> Result<DistanceMatrix> {
        let mask = match allowed_vertices {
            Some(list) => {
                let mut mask = vec![false; self.n_vertices];
                for &v in list {
                    if v >= self.n_vertices {
                        return Err(Error::VertexOutOfRange {
                            index: v,
                            len: self.n_vertices,
                        });
                    }
                    mask[v] = true;
                }
                Some(mask)
            }
            None => None,
        };
        Ok(distance::all_pairs(&self.adjacency(mask.as_deref())))
    }

    pub fn compute_distances(&mut self) -> Result<()> {
        if !self.is_connected() {
            log::warn!(
                "mesh has {} connected components; distances across components are infinite",
                self.connected_components()
            );
        }
        self.distances = Some(self.geodesic_distances(None)?);
        Ok(())
    }

    /// Installs a precomputed (e.g. cached) distance matrix.
    pub fn set_distances(&mut self, distances: DistanceMatrix) -> Result<()> {
        if distances.len() != self.n_vertices {
            return Err(Error::Dimension(format!(
                "distance matrix has order {}, mesh has {} vertices",
                distances.len(),
                self.n_vertices
            )));
        }
        self.distances = Some(distances);
        Ok(())
    }

    pub fn distances(&self) -> Result<&DistanceMatrix> {
        self.distances.as_ref().ok_or(Error::NotComputed("geodesic distances"))
    }

    pub fn distance(&self, from: usize, to: usize) -> Result<f64> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        let d = self.distances()?.get(from, to);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Disconnected { from, to })
        }
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n_vertices {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange {
                index: v,
                len: self.n_vertices,
            })
        }
    }

    /// Open metric ball `{e : d(center, e) < r}`, in increasing vertex order.
    pub fn ball(&self, center: usize, r: f64) -> Result<Vec<usize>> {
        self.check_vertex(center)?;
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {r}")));
        }
        let row = self.distances()?.row(center);
        Ok((0..self.n_vertices).filter(|&e| row[e] < r).collect())
    }
}

fn check_length(key: (usize, usize), len: f64) -> Result<()> {
    if len.is_finite() && len >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMesh(format!("edge {key:?} has invalid length {len}")))
    }
}

/// Area of the flat triangle with the given side lengths (Heron's formula in
/// the cancellation-stable arrangement).
///
/// Violations of the triangle inequality up to
/// [`TRIANGLE_INEQUALITY_TOLERANCE`] times the perimeter give area 0.
pub fn triangle_area(l1: f64, l2: f64, l3: f64) -> Result<f64> {
    let violation = |a, b, c| Error::TriangleInequality {
        triangle: 0,
        a,
        b,
        c,
    };
    if [l1, l2, l3].iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(violation(l1, l2, l3));
    }
    let mut s = [l1, l2, l3];
    s.sort_by(|x, y| y.total_cmp(x));
    let [a, b, c] = s;
    let excess = a - (b + c);
    if excess >= 0.0 {
        let perimeter = a + b + c;
        return if excess <= TRIANGLE_INEQUALITY_TOLERANCE * perimeter {
            Ok(0.0)
        } else {
            Err(violation(l1, l2, l3))
        };
    }
    // a >= b >= c
    let product = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    Ok(0.25 * product.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn unit_tetrahedron() -> TriangulatedManifold {
        let h = 0.5f64.sqrt();
        let positions = vec![
            [h, 0.0, 0.0],
            [0.0, h, 0.0],
            [0.0, 0.0, h],
            [h, h, h],
        ];
        let triangles = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
        TriangulatedManifold::from_positions(positions, triangles).unwrap()
    }

    #[test]
    fn heron_examples() {
        assert_relative_eq!(triangle_area(3.0, 4.0, 5.0).unwrap(), 6.0, epsilon = 1e-14);
        // independent value: sqrt(s(s-a)^3) with s = 3
        let expected = (3.0f64 * 1.0 * 1.0 * 1.0).sqrt();
        assert_relative_eq!(triangle_area(2.0, 2.0, 2.0).unwrap(), expected, epsilon = 1e-14);
        assert_eq!(triangle_area(1.0, 1.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn heron_tolerance() {
        assert_eq!(triangle_area(1.0, 1.0, 2.0 + 1e-12).unwrap(), 0.0);
        let err = triangle_area(1.0, 1.0, 2.1).unwrap_err();
        assert!(matches!(err, Error::TriangleInequality { .. }));
        assert!(triangle_area(-1.0, 1.0, 1.0).is_err());
        assert!(triangle_area(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn tetrahedron_structure() {
        let m = unit_tetrahedron();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.triangles().len(), 4);
        assert_eq!(m.n_edges(), 6);
        for (_, len) in m.edges() {
            assert_relative_eq!(len, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tetrahedron_weights() {
        let mut m = unit_tetrahedron();
        m.compute_weights().unwrap();
        let expected = 3.0f64.sqrt() / 4.0;
        for &w in m.weights().unwrap() {
            assert_relative_eq!(w, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_triangle_weights_are_thirds() {
        let mut m = TriangulatedManifold::from_positions(
            vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        m.compute_weights().unwrap();
        for &w in m.weights().unwrap() {
            assert_relative_eq!(w, 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn tetrahedron_distances_and_balls() {
        let mut m = unit_tetrahedron();
        m.compute_distances().unwrap();
        let d = m.distances().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 };
                assert_relative_eq!(d.get(i, j), expected, epsilon = 1e-15);
            }
        }
        assert_eq!(m.ball(0, 1.5).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(m.ball(0, 1.0 - 1e-12).unwrap(), vec![0]);
        assert!(m.ball(7, 1.0).is_err());
        assert!(m.ball(0, 0.0).is_err());
    }

    #[test]
    fn ball_is_strict() {
        let mut m = TriangulatedManifold::from_edge_lengths(
            4,
            vec![[0, 1, 2], [1, 3, 2]],
            [((0, 1), 1.0), ((1, 2), 1.0), ((0, 2), 1.0), ((1, 3), 1.0), ((2, 3), 1.0)],
        )
        .unwrap();
        m.compute_distances().unwrap();
        let smallest = m.distances().unwrap().row(0)[1..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(m.ball(0, smallest).unwrap(), vec![0]);
        assert_eq!(m.ball(0, 100.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(m.distance(0, 3).unwrap(), 2.0);
    }

    #[test]
    fn restricted_distances() {
        // strip of two triangles: 0-1-2 and 1-3-2; removing 1 forces 0→2 direct
        let m = TriangulatedManifold::from_edge_lengths(
            4,
            vec![[0, 1, 2], [1, 3, 2]],
            [((0, 1), 1.0), ((1, 2), 1.0), ((0, 2), 5.0), ((1, 3), 1.0), ((2, 3), 1.0)],
        )
        .unwrap();
        let full = m.geodesic_distances(None).unwrap();
        assert_eq!(full.get(0, 2), 2.0);
        let sub = m.geodesic_distances(Some(&[0, 2, 3])).unwrap();
        assert_eq!(sub.get(0, 2), 5.0);
        assert_eq!(sub.get(0, 3), 6.0);
        assert!(sub.get(0, 1).is_infinite());
        assert_eq!(sub.get(1, 1), 0.0);
    }

    #[test]
    fn disconnected_distance_query_fails() {
        let mut m = TriangulatedManifold::from_positions(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 0.0],
                [6.0, 0.0, 0.0],
                [5.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        assert_eq!(m.connected_components(), 2);
        m.compute_distances().unwrap();
        assert!(m.distance(0, 1).is_ok());
        assert!(matches!(m.distance(0, 4), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn invalid_triangles_rejected() {
        let pos = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriangulatedManifold::from_positions(pos.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangulatedManifold::from_positions(pos, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn edge_override_invalidates_derived() {
        let mut m = unit_tetrahedron();
        m.compute_weights().unwrap();
        m.set_edge_length(0, 1, 1.2).unwrap();
        assert!(m.weights().is_err());
        assert_eq!(m.edge_length(1, 0), Some(1.2));
        assert!(m.set_edge_length(0, 0, 1.0).is_err());
        assert!(m.set_edge_length(0, 1, -1.0).is_err());
    }
}
