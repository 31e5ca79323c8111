//! Delaunay adjacency on top of `delaunator`.

use delaunator::{triangulate, Point, EMPTY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DelaunayError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all points are collinear")]
    Collinear,
}

/// Symmetric neighbour lists in compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbours: Vec<usize>,
    /// Vertex triples of every triangle.
    pub triangles: Vec<[usize; 3]>,
}

impl Adjacency {
    pub fn n_points(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn n_edges(&self) -> usize {
        self.neighbours.len() / 2
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbours(i).contains(&j)
    }
}

/// Delaunay triangulation of `positions`, as adjacency lists.
pub fn delaunay_neighbors(positions: &[[f64; 2]]) -> Result<Adjacency, DelaunayError> {
    let n = positions.len();
    if n < 3 {
        return Err(DelaunayError::TooFewPoints(n));
    }
    let pts: Vec<Point> = positions.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&pts);
    if tri.triangles.is_empty() {
        return Err(DelaunayError::Collinear);
    }
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(tri.halfedges.len());
    for e in 0..tri.triangles.len() {
        let twin = tri.halfedges[e];
        if twin == EMPTY || e < twin {
            let a = tri.triangles[e];
            let b = tri.triangles[delaunator::next_halfedge(e)];
            degree[a] += 1;
            degree[b] += 1;
            edges.push((a, b));
        }
    }
    let mut offsets = vec![0usize; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + degree[i];
    }
    let mut fill = offsets[..n].to_vec();
    let mut neighbours = vec![0usize; offsets[n]];
    for (a, b) in edges {
        neighbours[fill[a]] = b;
        fill[a] += 1;
        neighbours[fill[b]] = a;
        fill[b] += 1;
    }
    let triangles = tri
        .triangles
        .chunks_exact(3)
        .map(|t| [t[0], t[1], t[2]])
        .collect();
    Ok(Adjacency {
        offsets,
        neighbours,
        triangles,
    })
}

/// Circumcircle centre and squared radius of a triangle.
pub fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([f64; 2], f64) {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    ([a[0] + ux, a[1] + uy], ux * ux + uy * uy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_and_quadrilateral() {
        let t = delaunay_neighbors(&[[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]]).unwrap();
        assert_eq!(t.n_edges(), 3);
        assert!(t.are_adjacent(0, 1) && t.are_adjacent(1, 2) && t.are_adjacent(0, 2));
        let q = delaunay_neighbors(&[[0.0, 0.0], [2.0, 0.1], [2.2, 1.9], [-0.1, 1.5]]).unwrap();
        assert_eq!(q.n_edges(), 5);
        assert_eq!(q.triangles.len(), 2);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(delaunay_neighbors(&[[0.0, 0.0], [1.0, 1.0]]), Err(DelaunayError::TooFewPoints(2)));
        let line: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert_eq!(delaunay_neighbors(&line), Err(DelaunayError::Collinear));
    }

    #[test]
    fn circumcircle_of_right_triangle() {
        let (c, r2) = circumcircle([0.0, 0.0], [2.0, 0.0], [0.0, 2.0]);
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
        assert!((r2 - 2.0).abs() < 1e-12);
    }
}
