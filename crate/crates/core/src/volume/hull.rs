//! Incremental 3D convex hull (quickhull-style conflict lists).

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

/// Closed triangulated hull with outward-facing triangles.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub vertices: Vec<Point>,
    /// Counter-clockwise seen from outside, indexing `vertices`.
    pub triangles: Vec<[usize; 3]>,
}

impl ConvexHull {
    /// Signed-tetrahedron fan from the vertex centroid.
    pub fn volume(&self) -> f64 {
        let c = self.vertices.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / self.vertices.len() as f64;
        let six: f64 = self
            .triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0]].coords - c;
                let b = self.vertices[t[1]].coords - c;
                let d = self.vertices[t[2]].coords - c;
                a.dot(&b.cross(&d))
            })
            .sum();
        six / 6.0
    }
}

fn degenerate(reason: &str) -> Error {
    Error::DegenerateGeometry {
        reason: reason.to_string(),
        value: 0.0,
    }
}

fn make_face(pts: &[Point], v: [usize; 3], interior: &Vector3<f64>) -> Face {
    let (a, b, c) = (pts[v[0]].coords, pts[v[1]].coords, pts[v[2]].coords);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    let mut v = v;
    let mut normal = if len > 0.0 { n / len } else { n };
    if normal.dot(&(interior - a)) > 0.0 {
        v.swap(1, 2);
        normal = -normal;
    }
    Face {
        v,
        offset: normal.dot(&a),
        normal,
        outside: Vec::new(),
        alive: true,
    }
}

/// Builds the hull; fewer than 4 points or a (near-)planar set is a
/// degenerate-geometry error carrying value 0.
pub fn convex_hull(points: &[Point]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(degenerate("fewer than 4 points"));
    }
    let scale = points
        .iter()
        .flat_map(|p| p.coords.iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale * 3.0;

    // Initial tetrahedron from extreme points.
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))
        .unwrap_or(0);
    let far = |f: &dyn Fn(&Point) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])))
            .unwrap_or(0)
    };
    let p0 = points[i0];
    let i1 = far(&|p| (p - p0).norm());
    let dir = points[i1] - p0;
    if dir.norm() <= eps {
        return Err(degenerate("all points coincide"));
    }
    let i2 = far(&|p| dir.cross(&(p - p0)).norm() / dir.norm());
    let n = dir.cross(&(points[i2] - p0));
    if n.norm() / dir.norm() <= eps {
        return Err(degenerate("points are collinear"));
    }
    let nu = n.normalize();
    let i3 = far(&|p| nu.dot(&(p - p0)).abs());
    if nu.dot(&(points[i3] - p0)).abs() <= eps {
        return Err(degenerate("points are coplanar"));
    }
    let interior = (p0.coords + points[i1].coords + points[i2].coords + points[i3].coords) / 4.0;
    let mut faces: Vec<Face> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(|v| make_face(points, v, &interior))
        .collect();
    let seeds = [i0, i1, i2, i3];
    for (i, p) in points.iter().enumerate() {
        if seeds.contains(&i) {
            continue;
        }
        if let Some(f) = faces.iter_mut().find(|f| f.normal.dot(&p.coords) - f.offset > eps) {
            f.outside.push(i);
        }
    }

    while let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) {
        let apex = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                let f = &faces[fi];
                (f.normal.dot(&points[a].coords)).total_cmp(&f.normal.dot(&points[b].coords))
            })
            .expect("non-empty outside set");
        let ap = points[apex].coords;
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&j| faces[j].alive && faces[j].normal.dot(&ap) - faces[j].offset > eps)
            .collect();
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for &j in &visible {
            let v = faces[j].v;
            for k in 0..3 {
                edges.insert((v[k], v[(k + 1) % 3]));
            }
        }
        let mut orphans = Vec::new();
        let mut horizon = Vec::new();
        for &j in &visible {
            faces[j].alive = false;
            orphans.append(&mut faces[j].outside);
            let v = faces[j].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                if !edges.contains(&(b, a)) {
                    horizon.push((a, b));
                }
            }
        }
        let first_new = faces.len();
        for (a, b) in horizon {
            faces.push(make_face(points, [a, b, apex], &interior));
        }
        for i in orphans {
            if i == apex {
                continue;
            }
            let p = points[i].coords;
            if let Some(f) = faces[first_new..].iter_mut().find(|f| f.normal.dot(&p) - f.offset > eps) {
                f.outside.push(i);
            }
        }
    }

    let live: Vec<&Face> = faces.iter().filter(|f| f.alive).collect();
    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(live.len());
    for f in live {
        let mut t = [0; 3];
        for (k, &v) in f.v.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(points[v]);
            }
            t[k] = remap[v];
        }
        triangles.push(t);
    }
    Ok(ConvexHull { vertices, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube() -> Vec<Point> {
        (0..8)
            .map(|i| Point::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect()
    }

    #[test]
    fn unit_cube() {
        let h = convex_hull(&cube()).unwrap();
        assert_relative_eq!(h.volume(), 1.0, epsilon = 1e-12);
        assert_eq!(h.vertices.len(), 8);
        assert_eq!(h.triangles.len(), 12);
    }

    #[test]
    fn closed_and_outward() {
        let h = convex_hull(&cube()).unwrap();
        // Each directed edge appears once and its reverse once.
        let mut edges = HashSet::new();
        for t in &h.triangles {
            for k in 0..3 {
                assert!(edges.insert((t[k], t[(k + 1) % 3])));
            }
        }
        for &(a, b) in &edges {
            assert!(edges.contains(&(b, a)));
        }
    }

    #[test]
    fn degenerate_inputs() {
        let flat: Vec<Point> = (0..10).map(|i| Point::new(i as f64, (i * i) as f64, 0.0)).collect();
        for pts in [flat, cube()[..3].to_vec(), vec![Point::origin(); 5]] {
            match convex_hull(&pts) {
                Err(Error::DegenerateGeometry { value, .. }) => assert_eq!(value, 0.0),
                other => panic!("{other:?}"),
            }
        }
    }
}
