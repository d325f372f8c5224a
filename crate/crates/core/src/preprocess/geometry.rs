use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Polygon};
use crate::traj::Direction;

/// Names of the eight crosswalk endpoints, in the order they are stored:
/// clockwise around the intersection starting from the west end of the north
/// crosswalk.
pub const ENDPOINT_NAMES: [&str; 8] = [
    "n_west", "n_east", "e_north", "e_south", "s_east", "s_west", "w_south", "w_north",
];

/// Crosswalk endpoints and the four compass quadrants they induce.
///
/// Each corner of the intersection is represented by the midpoint of the two
/// endpoints nearest to it. The NE–SW and NW–SE diagonals through those corners
/// meet at `center`; the rays from `center` to the corners bound the quadrants.
/// A point lying exactly on a ray belongs to the quadrant counterclockwise of
/// it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct IntersectionGeometry {
    endpoints: [Point; 8],
    center: Point,
    /// Bearings of the NE, NW, SW, SE corner rays.
    corner_bearings: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct GeometryRepr {
    crosswalk_endpoints: Vec<Point>,
}

impl TryFrom<GeometryRepr> for IntersectionGeometry {
    type Error = Error;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        let pts: [Point; 8] = r
            .crosswalk_endpoints
            .try_into()
            .map_err(|v: Vec<Point>| Error::InvalidInput(format!("expected 8 crosswalk endpoints, got {}", v.len())))?;
        IntersectionGeometry::from_endpoints(pts)
    }
}

impl From<IntersectionGeometry> for GeometryRepr {
    fn from(g: IntersectionGeometry) -> Self {
        GeometryRepr {
            crosswalk_endpoints: g.endpoints.to_vec(),
        }
    }
}

fn line_intersection(a0: Point, a1: Point, b0: Point, b1: Point) -> Option<(f64, f64, Point)> {
    let da = a1.sub(a0);
    let db = b1.sub(b0);
    let denom = da.cross(db);
    if denom.abs() < 1e-12 {
        return None;
    }
    let r = b0.sub(a0);
    let s = r.cross(db) / denom;
    let t = r.cross(da) / denom;
    Some((s, t, a0.add(da.scale(s))))
}

impl IntersectionGeometry {
    pub fn from_endpoints(endpoints: [Point; 8]) -> Result<Self> {
        if endpoints.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite crosswalk endpoint".into()));
        }
        let [n_w, n_e, e_n, e_s, s_e, s_w, w_s, w_n] = endpoints;
        let ne = n_e.midpoint(e_n);
        let se = e_s.midpoint(s_e);
        let sw = s_w.midpoint(w_s);
        let nw = w_n.midpoint(n_w);
        let (s, t, center) = line_intersection(ne, sw, nw, se)
            .ok_or_else(|| Error::InvalidInput("intersection diagonals are parallel".into()))?;
        if !(s > 0.0 && s < 1.0 && t > 0.0 && t < 1.0) {
            return Err(Error::InvalidInput(
                "intersection diagonals do not cross inside the intersection".into(),
            ));
        }
        let bearing = |p: Point| {
            let d = p.sub(center);
            d.y.atan2(d.x).rem_euclid(TAU)
        };
        let corner_bearings = [bearing(ne), bearing(nw), bearing(sw), bearing(se)];
        // Corners must wind counterclockwise NE → NW → SW → SE.
        for i in 0..4 {
            let span = (corner_bearings[(i + 1) % 4] - corner_bearings[i]).rem_euclid(TAU);
            if !(span > 0.0 && span < std::f64::consts::PI) {
                return Err(Error::InvalidInput(
                    "crosswalk corners are not in counterclockwise order".into(),
                ));
            }
        }
        Ok(IntersectionGeometry {
            endpoints,
            center,
            corner_bearings,
        })
    }

    pub fn endpoints(&self) -> &[Point; 8] {
        &self.endpoints
    }

    pub fn center(&self) -> Point {
        self.center
    }

    /// The two endpoints of the crosswalk across each approach.
    pub fn crosswalks(&self) -> [(Direction, Point, Point); 4] {
        let e = &self.endpoints;
        [
            (Direction::N, e[0], e[1]),
            (Direction::E, e[2], e[3]),
            (Direction::S, e[4], e[5]),
            (Direction::W, e[6], e[7]),
        ]
    }

    /// Quadrant containing `p`.
    pub fn quadrant(&self, p: Point) -> Direction {
        // Sector i runs counterclockwise from corner ray i to ray i+1.
        const SECTORS: [Direction; 4] = [Direction::N, Direction::W, Direction::S, Direction::E];
        let d = p.sub(self.center);
        let theta = d.y.atan2(d.x);
        for i in 0..4 {
            let start = self.corner_bearings[i];
            let span = (self.corner_bearings[(i + 1) % 4] - start).rem_euclid(TAU);
            let mut rel = (theta - start).rem_euclid(TAU);
            if rel >= TAU {
                rel = 0.0;
            }
            if rel < span {
                return SECTORS[i];
            }
        }
        // Only reachable through rounding right at a ray; the ray's own
        // sector is the counterclockwise one.
        let nearest = (0..4)
            .min_by(|&a, &b| {
                let da = crate::geom::angle_diff(theta, self.corner_bearings[a]);
                let db = crate::geom::angle_diff(theta, self.corner_bearings[b]);
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        SECTORS[nearest]
    }

    /// Convex octagon through the eight endpoints.
    pub fn roadway_polygon(&self) -> Polygon {
        Polygon(self.endpoints.to_vec())
    }

    /// One corridor per crosswalk: the endpoint segment inflated by `margin`.
    pub fn crosswalk_polygons(&self, margin: f64) -> Vec<Polygon> {
        self.crosswalks()
            .iter()
            .map(|&(_, a, b)| Polygon::inflated_segment(a, b, margin))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Symmetric intersection with crosswalks `offset` from the center and
    /// `half_width` to either side.
    pub fn square_geometry(offset: f64, half_width: f64) -> IntersectionGeometry {
        let (c, h) = (offset, half_width);
        IntersectionGeometry::from_endpoints([
            Point::new(-h, c),
            Point::new(h, c),
            Point::new(c, h),
            Point::new(c, -h),
            Point::new(h, -c),
            Point::new(-h, -c),
            Point::new(-c, -h),
            Point::new(-c, h),
        ])
        .unwrap()
    }

    #[test]
    fn compass_quadrants() {
        let g = square_geometry(12.0, 7.0);
        assert!(g.center().dist(Point::new(0.0, 0.0)) < 1e-12);
        assert_eq!(g.quadrant(Point::new(10.0, 0.0)), Direction::E);
        assert_eq!(g.quadrant(Point::new(0.0, 10.0)), Direction::N);
        assert_eq!(g.quadrant(Point::new(-10.0, 1.0)), Direction::W);
        assert_eq!(g.quadrant(Point::new(2.0, -40.0)), Direction::S);
    }

    #[test]
    fn unit_square_east() {
        let g = square_geometry(1.0, 0.5);
        assert_eq!(g.quadrant(Point::new(10.0, 0.0)), Direction::E);
    }

    #[test]
    fn diagonal_ties_go_counterclockwise() {
        let g = square_geometry(12.0, 7.0);
        // NE ray: counterclockwise of it lies the north quadrant.
        assert_eq!(g.quadrant(Point::new(5.0, 5.0)), Direction::N);
        assert_eq!(g.quadrant(Point::new(-5.0, 5.0)), Direction::W);
        assert_eq!(g.quadrant(Point::new(-5.0, -5.0)), Direction::S);
        assert_eq!(g.quadrant(Point::new(5.0, -5.0)), Direction::E);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let p = Point::new(0.0, 0.0);
        assert!(IntersectionGeometry::from_endpoints([p; 8]).is_err());
        let g = square_geometry(12.0, 7.0);
        let mut pts = *g.endpoints();
        pts.swap(0, 4);
        pts.swap(1, 5);
        assert!(IntersectionGeometry::from_endpoints(pts).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let g = square_geometry(12.0, 7.0);
        let s = serde_json::to_string(&g).unwrap();
        let back: IntersectionGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn random_points_get_one_label() {
        let g = IntersectionGeometry::from_endpoints([
            Point::new(-6.0, 13.0),
            Point::new(8.0, 11.5),
            Point::new(12.5, 6.0),
            Point::new(11.0, -8.0),
            Point::new(7.0, -12.0),
            Point::new(-8.0, -11.0),
            Point::new(-12.0, -6.0),
            Point::new(-13.0, 7.5),
        ])
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let p = Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            counts[g.quadrant(p).code()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 10_000);
        assert!(counts.iter().all(|&c| c > 1000));
    }

    proptest! {
        #[test]
        fn quadrant_matches_dominant_axis(x in -100.0..100.0f64, y in -100.0..100.0f64) {
            let g = square_geometry(12.0, 7.0);
            prop_assume!((x.abs() - y.abs()).abs() > 1e-9);
            let expected = if x.abs() > y.abs() {
                if x > 0.0 { Direction::E } else { Direction::W }
            } else if y > 0.0 { Direction::N } else { Direction::S };
            prop_assert_eq!(g.quadrant(Point::new(x, y)), expected);
        }
    }
}
