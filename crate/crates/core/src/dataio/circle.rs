//! Smallest enclosing circle of a planar point set.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        dist(self.center, p) <= self.radius + tol
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn diameter(a: Point, b: Point) -> Circle {
    Circle {
        center: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
        radius: dist(a, b) / 2.0,
    }
}

/// Circle through three points; `None` when they are collinear.
pub fn circumcircle(a: Point, b: Point, c: Point) -> Option<Circle> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let scale = (bx * bx + by * by).max(cx * cx + cy * cy);
    if d.abs() <= 1e-14 * scale {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    Some(Circle {
        center: [a[0] + ux, a[1] + uy],
        radius: ux.hypot(uy),
    })
}

fn widest_pair(pts: [Point; 3]) -> Circle {
    let cands = [diameter(pts[0], pts[1]), diameter(pts[0], pts[2]), diameter(pts[1], pts[2])];
    cands
        .into_iter()
        .max_by(|a, b| a.radius.total_cmp(&b.radius))
        .expect("three candidates")
}

/// Smallest circle containing every point (incremental Welzl construction).
pub fn min_enclosing_circle(points: &[Point]) -> Result<Circle> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "enclosing circle needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("enclosing circle points must be finite"));
    }
    let extent = points
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let tol = 1e-12 * extent;
    let mut c = Circle {
        center: points[0],
        radius: 0.0,
    };
    for i in 1..points.len() {
        if c.contains(points[i], tol) {
            continue;
        }
        c = Circle {
            center: points[i],
            radius: 0.0,
        };
        for j in 0..i {
            if c.contains(points[j], tol) {
                continue;
            }
            c = diameter(points[i], points[j]);
            for k in 0..j {
                if c.contains(points[k], tol) {
                    continue;
                }
                let tri = [points[i], points[j], points[k]];
                c = circumcircle(tri[0], tri[1], tri[2]).unwrap_or_else(|| widest_pair(tri));
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Exhaustive oracle over every pair-diameter and triple circumcircle.
    fn brute_force(points: &[Point]) -> Circle {
        let mut cands = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                cands.push(diameter(points[i], points[j]));
                for k in j + 1..points.len() {
                    if let Some(c) = circumcircle(points[i], points[j], points[k]) {
                        cands.push(c);
                    }
                }
            }
        }
        cands
            .into_iter()
            .filter(|c| points.iter().all(|&p| c.contains(p, 1e-9)))
            .min_by(|a, b| a.radius.total_cmp(&b.radius))
            .expect("some candidate encloses all points")
    }

    #[test]
    fn diameter_case() {
        let c = min_enclosing_circle(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(c.center, [1.0, 0.0]);
        assert_eq!(c.radius, 1.0);
    }

    #[test]
    fn equilateral_triangle_on_unit_circle() {
        let pts: Vec<Point> = [0.0_f64, 120.0, 240.0]
            .iter()
            .map(|a| [a.to_radians().cos(), a.to_radians().sin()])
            .collect();
        let c = min_enclosing_circle(&pts).unwrap();
        assert!(c.center[0].abs() < 1e-12 && c.center[1].abs() < 1e-12);
        assert!((c.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_or_non_finite_points() {
        assert!(min_enclosing_circle(&[[0.0, 0.0]]).is_err());
        assert!(min_enclosing_circle(&[[0.0, 0.0], [f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn collinear_and_duplicate_points() {
        let c = min_enclosing_circle(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!((c.center[0] - 1.5).abs() < 1e-12 && (c.radius - 1.5).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_six_point_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let pts: Vec<Point> = (0..6)
                .map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)])
                .collect();
            let fast = min_enclosing_circle(&pts).unwrap();
            let slow = brute_force(&pts);
            assert!(dist(fast.center, slow.center) < 1e-6);
            assert!((fast.radius - slow.radius).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn every_point_is_enclosed(pts in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..20)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let c = min_enclosing_circle(&pts).unwrap();
            for p in &pts {
                prop_assert!(dist(c.center, *p) <= c.radius + 1e-9);
            }
        }
    }
}
