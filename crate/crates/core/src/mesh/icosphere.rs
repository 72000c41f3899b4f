use std::collections::HashMap;

use super::TriangulatedManifold;
use crate::error::{Error, Result};

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron_vertices() -> [[f64; 3]; 12] {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ]
}

fn project(p: [f64; 3], radius: f64) -> [f64; 3] {
    let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / norm * radius, p[1] / norm * radius, p[2] / norm * radius]
}

/// Geodesic icosphere: every icosahedron face is cut into `order²` triangles
/// by barycentric subdivision and the vertices are pushed onto the sphere.
///
/// Vertices on shared icosahedron edges are merged through an index map keyed
/// by (edge, step), so the mesh always has `10·order² + 2` vertices and
/// `20·order²` faces.
pub fn build_icosphere(order: usize, radius: f64) -> Result<TriangulatedManifold> {
    if order == 0 {
        return Err(Error::InvalidArgument("icosphere order must be at least 1".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "icosphere radius must be positive, got {radius}"
        )));
    }
    let n = order;
    let corners = icosahedron_vertices();
    let mut positions: Vec<[f64; 3]> = corners.iter().map(|&c| project(c, radius)).collect();
    let mut edge_points: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::with_capacity(20 * n * n);

    for face in ICOSAHEDRON_FACES {
        let [a, b, c] = face;
        let (pa, pb, pc) = (corners[a], corners[b], corners[c]);
        // local[(i, j)] = a + i/n (b - a) + j/n (c - a)
        let mut local = vec![usize::MAX; (n + 1) * (n + 1)];
        let slot = |i: usize, j: usize| i * (n + 1) + j;
        for i in 0..=n {
            for j in 0..=n - i {
                let on_edge = |from: usize, to: usize, step: usize| {
                    if from < to {
                        (from, to, step)
                    } else {
                        (to, from, n - step)
                    }
                };
                let key = match (i, j) {
                    (0, 0) => None,
                    _ if i == n => None,
                    _ if j == n => None,
                    (_, 0) => Some(on_edge(a, b, i)),
                    (0, _) => Some(on_edge(a, c, j)),
                    _ if i + j == n => Some(on_edge(b, c, j)),
                    _ => None,
                };
                let index = if (i, j) == (0, 0) {
                    a
                } else if i == n {
                    b
                } else if j == n {
                    c
                } else {
                    let mut fresh = || {
                        let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                        let p = [
                            pa[0] + u * (pb[0] - pa[0]) + v * (pc[0] - pa[0]),
                            pa[1] + u * (pb[1] - pa[1]) + v * (pc[1] - pa[1]),
                            pa[2] + u * (pb[2] - pa[2]) + v * (pc[2] - pa[2]),
                        ];
                        positions.push(project(p, radius));
                        positions.len() - 1
                    };
                    match key {
                        Some(k) => match edge_points.get(&k) {
                            Some(&existing) => existing,
                            None => {
                                let idx = fresh();
                                edge_points.insert(k, idx);
                                idx
                            }
                        },
                        None => fresh(),
                    }
                };
                local[slot(i, j)] = index;
            }
        }
        for i in 0..n {
            for j in 0..n - i {
                triangles.push([local[slot(i, j)], local[slot(i + 1, j)], local[slot(i, j + 1)]]);
                if i + j + 1 < n {
                    triangles.push([
                        local[slot(i + 1, j)],
                        local[slot(i + 1, j + 1)],
                        local[slot(i, j + 1)],
                    ]);
                }
            }
        }
    }
    TriangulatedManifold::from_positions(positions, triangles)
}
