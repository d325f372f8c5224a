use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{Direction, Maneuver, Trajectory};

use super::geometry::IntersectionGeometry;

/// Outcome of movement labeling. Anything other than a left turn, right turn
/// or straight-through pass (U-turns, tracks that never leave their entry
/// quadrant) is `Unsupported` and excluded downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Movement {
    Maneuver(Maneuver),
    Unsupported,
}

pub fn classify_entering_direction(traj: &Trajectory, geom: &IntersectionGeometry) -> Result<Direction> {
    let p = traj
        .first_valid()
        .ok_or_else(|| Error::InvalidInput(format!("trajectory `{}` has no valid points", traj.id)))?;
    Ok(geom.quadrant(p.pos()))
}

/// Ordered quadrants visited by the valid points, consecutive repeats removed.
pub fn quadrant_sequence(traj: &Trajectory, geom: &IntersectionGeometry) -> Vec<Direction> {
    let mut seq: Vec<Direction> = traj.valid_points().map(|p| geom.quadrant(p.pos())).collect();
    seq.dedup();
    seq
}

/// Maps a quadrant sequence onto a maneuver using its first (entry) and last
/// (exit) quadrants, with north up and x pointing east. A vehicle entering
/// from the south heads north, so leaving through the west quadrant is a left
/// turn and through the east quadrant a right turn.
pub fn movement_from_sequence(seq: &[Direction]) -> Movement {
    let (Some(&entry), Some(&exit)) = (seq.first(), seq.last()) else {
        return Movement::Unsupported;
    };
    if seq.len() < 2 || exit == entry {
        Movement::Unsupported
    } else if exit == entry.opposite() {
        Movement::Maneuver(Maneuver::Straight)
    } else if exit == entry.cw() {
        Movement::Maneuver(Maneuver::LeftTurn)
    } else {
        Movement::Maneuver(Maneuver::RightTurn)
    }
}

pub fn classify_movement(traj: &Trajectory, geom: &IntersectionGeometry) -> Movement {
    movement_from_sequence(&quadrant_sequence(traj, geom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;
    use crate::preprocess::geometry::tests::square_geometry;
    use crate::traj::{ObjectClass, TrackPoint};
    use Direction::*;

    fn path(points: &[Point]) -> Trajectory {
        let pts = points
            .iter()
            .enumerate()
            .map(|(i, p)| TrackPoint::new(i as f64 * 0.1, p.x, p.y, 0.0, 0.0, 0.0))
            .collect();
        Trajectory::with_class("v", ObjectClass::Vehicle, pts).unwrap()
    }

    #[test]
    fn sequences() {
        assert_eq!(movement_from_sequence(&[S, N]), Movement::Maneuver(Maneuver::Straight));
        assert_eq!(movement_from_sequence(&[S, E, N]), Movement::Maneuver(Maneuver::Straight));
        assert_eq!(movement_from_sequence(&[S, W]), Movement::Maneuver(Maneuver::LeftTurn));
        assert_eq!(movement_from_sequence(&[S, E]), Movement::Maneuver(Maneuver::RightTurn));
        assert_eq!(movement_from_sequence(&[E, S]), Movement::Maneuver(Maneuver::LeftTurn));
        assert_eq!(movement_from_sequence(&[N, E]), Movement::Maneuver(Maneuver::LeftTurn));
        assert_eq!(movement_from_sequence(&[S]), Movement::Unsupported);
        assert_eq!(movement_from_sequence(&[]), Movement::Unsupported);
        assert_eq!(movement_from_sequence(&[S, E, N, W, S]), Movement::Unsupported);
    }

    #[test]
    fn drawn_left_turn_arc() {
        // Northbound in the x = 2 lane, quarter circle onto the westbound
        // y = 2 lane.
        let g = square_geometry(12.0, 7.0);
        let mut pts: Vec<Point> = (0..30).map(|i| Point::new(2.0, -40.0 + i as f64)).collect();
        let c = Point::new(-10.0, -10.0);
        for k in 0..=20 {
            let a = std::f64::consts::FRAC_PI_2 * k as f64 / 20.0;
            pts.push(c.add(Point::new(12.0 * a.cos(), 12.0 * a.sin())));
        }
        pts.extend((1..30).map(|i| Point::new(-10.0 - i as f64, 2.0)));
        let t = path(&pts);
        assert_eq!(classify_entering_direction(&t, &g).unwrap(), S);
        assert_eq!(classify_movement(&t, &g), Movement::Maneuver(Maneuver::LeftTurn));
    }

    #[test]
    fn entering_from_south() {
        let g = square_geometry(12.0, 7.0);
        let t = path(&[Point::new(3.0, -30.0), Point::new(3.0, 30.0)]);
        assert_eq!(classify_entering_direction(&t, &g).unwrap(), S);
        assert_eq!(classify_movement(&t, &g), Movement::Maneuver(Maneuver::Straight));
    }

    #[test]
    fn invalid_points_are_skipped() {
        let g = square_geometry(12.0, 7.0);
        let mut t = path(&[Point::new(30.0, 0.0), Point::new(0.0, -30.0)]);
        t.points[0] = TrackPoint::new(0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(classify_entering_direction(&t, &g).unwrap(), S);
        t.points[1] = TrackPoint::new(0.1, f64::NAN, 0.0, 0.0, 0.0, 0.0);
        assert!(classify_entering_direction(&t, &g).is_err());
    }
}
