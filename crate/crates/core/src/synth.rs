//! Seeded synthetic scenes at a four-leg signalized intersection.
//!
//! The layout is fixed: the intersection is centred on the origin, vehicles
//! drive on the right in lanes 2 m off the centre line, and each leg has a
//! crosswalk 12 m from the centre running between ±7 m. Vehicles follow a
//! straight line or a circular turn with a speed profile that brakes into the
//! turn; pedestrians walk from the sidewalk over one crosswalk and away. A
//! requested number of conflicts pair a turning vehicle with a pedestrian on
//! its exit crosswalk at a chosen post-encroachment time; every other
//! vehicle-pedestrian pair is kept well apart in time.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::preprocess::IntersectionGeometry;
use crate::ssm::{compute_pet, FirstAgent};
use crate::traj::{Dataset, Direction, Maneuver, ObjectClass, TrackPoint, Trajectory};

pub const LANE_OFFSET: f64 = 2.0;
pub const CROSSWALK_DISTANCE: f64 = 12.0;
pub const CROSSWALK_HALF_LENGTH: f64 = 7.0;
const LEFT_RADIUS: f64 = 12.0;
const RIGHT_RADIUS: f64 = 6.0;
const SPAWN_DISTANCE: f64 = 45.0;
const SIDEWALK_RUN: f64 = 3.0;
const FRAME: f64 = 0.1;
const STEP: f64 = 0.01;
const ZONE_RADIUS: f64 = 1.0;

/// Crosswalk endpoints of the built-in layout.
pub fn scene_geometry() -> IntersectionGeometry {
    let (d, h) = (CROSSWALK_DISTANCE, CROSSWALK_HALF_LENGTH);
    IntersectionGeometry::from_endpoints([
        Point::new(-h, d),
        Point::new(h, d),
        Point::new(d, h),
        Point::new(d, -h),
        Point::new(h, -d),
        Point::new(-h, -d),
        Point::new(-d, -h),
        Point::new(-d, h),
    ])
    .expect("built-in layout is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverCounts {
    pub left: usize,
    pub right: usize,
    pub straight: usize,
}

impl Default for ManeuverCounts {
    fn default() -> Self {
        ManeuverCounts {
            left: 10,
            right: 10,
            straight: 14,
        }
    }
}

impl ManeuverCounts {
    fn get(&self, m: Maneuver) -> usize {
        match m {
            Maneuver::LeftTurn => self.left,
            Maneuver::RightTurn => self.right,
            Maneuver::Straight => self.straight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Set from the run seed, not from config.
    #[serde(skip)]
    pub seed: u64,
    /// Background vehicles per entering direction.
    pub vehicles: ManeuverCounts,
    /// Background pedestrians per crosswalk.
    pub pedestrians_per_crosswalk: usize,
    /// Pedestrian tracks moving at `fast_speed`, which preprocessing should drop.
    pub fast_pedestrians: usize,
    pub fast_speed: f64,
    pub conflicts: usize,
    /// Range of requested post-encroachment times, s.
    pub conflict_pet: [f64; 2],
    /// Scene time per engineered conflict, s.
    pub slot: f64,
    /// Minimum post-encroachment time between any other vehicle and pedestrian, s.
    pub pet_margin: f64,
    pub noise_position: f64,
    pub noise_velocity: f64,
    /// m/s
    pub cruise_speed: [f64; 2],
    pub left_turn_speed: f64,
    pub right_turn_speed: f64,
    /// m/s², braking into a turn
    pub deceleration: f64,
    /// m/s², speeding up after a turn
    pub acceleration: f64,
    pub pedestrian_speed: [f64; 2],
    /// Tracks are recorded within this distance of the centre, m.
    pub observe_radius: f64,
    /// Per-frame probability that the detector mislabels the class.
    pub class_flip_prob: f64,
    /// Probability that a background pedestrian track is split in two.
    pub fragment_prob: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            vehicles: ManeuverCounts::default(),
            pedestrians_per_crosswalk: 8,
            fast_pedestrians: 2,
            fast_speed: 4.0,
            conflicts: 16,
            conflict_pet: [0.5, 2.0],
            slot: 60.0,
            pet_margin: 5.0,
            noise_position: 0.1,
            noise_velocity: 0.1,
            cruise_speed: [9.0, 12.0],
            left_turn_speed: 6.0,
            right_turn_speed: 4.5,
            deceleration: 2.0,
            acceleration: 1.5,
            pedestrian_speed: [1.2, 1.6],
            observe_radius: 35.0,
            class_flip_prob: 0.05,
            fragment_prob: 0.1,
            max_attempts: 500,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("scenario: {what}")));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1];
        if !(self.noise_position >= 0.0 && self.noise_velocity >= 0.0) {
            return bad("noise must be nonnegative");
        }
        if !range_ok(self.cruise_speed) || !range_ok(self.pedestrian_speed) {
            return bad("speed ranges must be positive and ordered");
        }
        if !(self.left_turn_speed > 0.0 && self.right_turn_speed > 0.0 && self.fast_speed > 0.0) {
            return bad("turn and fast speeds must be positive");
        }
        if !(self.deceleration > 0.0 && self.acceleration > 0.0) {
            return bad("deceleration and acceleration must be positive");
        }
        if !(self.observe_radius > CROSSWALK_DISTANCE + 5.0 && self.observe_radius < SPAWN_DISTANCE) {
            return bad("observe_radius must lie between the crosswalks and the spawn distance");
        }
        if !(0.0..=0.5).contains(&self.class_flip_prob) || !(0.0..=1.0).contains(&self.fragment_prob) {
            return bad("probabilities out of range");
        }
        if !(self.slot > 0.0 && self.pet_margin >= 0.0) {
            return bad("slot must be positive and pet_margin nonnegative");
        }
        let [lo, hi] = self.conflict_pet;
        if self.conflicts > 0 && !(lo >= 0.0 && lo <= hi && hi < self.pet_margin && hi < self.slot / 4.0) {
            return Err(Error::InvalidInput(format!(
                "conflict PET range [{lo}, {hi}] s cannot be realised (needs 0 ≤ min ≤ max < pet_margin and a slot of at least 4× max)"
            )));
        }
        Ok(())
    }

    /// One slot per engineered conflict, and at least one per nine background
    /// vehicles.
    pub fn duration(&self) -> f64 {
        let v = &self.vehicles;
        let background = 4 * (v.left + v.right + v.straight);
        self.conflicts.max(background.div_ceil(9)).max(1) as f64 * self.slot
    }
}

// ---------------------------------------------------------------------------
// Paths and motion

#[derive(Debug, Clone, Copy)]
enum Piece {
    Line { a: Point, b: Point },
    /// Signed sweep: positive turns left.
    Arc { center: Point, radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { a, b } => a.dist(b),
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position, heading and signed curvature at distance `s` into the piece.
    fn at(&self, s: f64) -> (Point, f64, f64) {
        match *self {
            Piece::Line { a, b } => {
                let d = b.sub(a);
                let len = d.norm();
                (a.add(d.scale(s / len)), d.y.atan2(d.x), 0.0)
            }
            Piece::Arc {
                center,
                radius,
                start,
                sweep,
            } => {
                let ang = start + sweep.signum() * s / radius;
                let p = center.add(Point::new(radius * ang.cos(), radius * ang.sin()));
                (p, ang + sweep.signum() * FRAC_PI_2, sweep.signum() / radius)
            }
        }
    }

    fn rotated(&self, angle: f64) -> Piece {
        match *self {
            Piece::Line { a, b } => Piece::Line {
                a: a.rotate(angle),
                b: b.rotate(angle),
            },
            Piece::Arc {
                center,
                radius,
                start,
                sweep,
            } => Piece::Arc {
                center: center.rotate(angle),
                radius,
                start: start + angle,
                sweep,
            },
        }
    }
}

#[derive(Debug, Clone)]
struct Path {
    pieces: Vec<Piece>,
    starts: Vec<f64>,
    length: f64,
    /// Arc-length interval of the turn, if any.
    turn: Option<(f64, f64)>,
}

impl Path {
    fn new(pieces: Vec<Piece>) -> Self {
        let mut starts = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        let mut turn = None;
        for p in &pieces {
            starts.push(acc);
            if let Piece::Arc { .. } = p {
                turn = Some((acc, acc + p.length()));
            }
            acc += p.length();
        }
        Path {
            pieces,
            starts,
            length: acc,
            turn,
        }
    }

    fn at(&self, s: f64) -> (Point, f64, f64) {
        let s = s.clamp(0.0, self.length);
        let i = self.starts.partition_point(|&st| st <= s).saturating_sub(1);
        self.pieces[i].at(s - self.starts[i])
    }
}

/// Bearing (radians, counterclockwise from +x) by which the south approach is
/// rotated onto approach `d`.
fn approach_rotation(d: Direction) -> f64 {
    match d {
        Direction::S => 0.0,
        Direction::E => FRAC_PI_2,
        Direction::N => PI,
        Direction::W => -FRAC_PI_2,
    }
}

/// Path of a vehicle entering from `d` and performing `m`.
fn vehicle_path(d: Direction, m: Maneuver) -> Path {
    let w = LANE_OFFSET;
    let far = SPAWN_DISTANCE;
    let pieces = match m {
        Maneuver::Straight => vec![Piece::Line {
            a: Point::new(w, -far),
            b: Point::new(w, far),
        }],
        Maneuver::LeftTurn => {
            let c = LEFT_RADIUS - w;
            vec![
                Piece::Line {
                    a: Point::new(w, -far),
                    b: Point::new(w, -c),
                },
                Piece::Arc {
                    center: Point::new(-c, -c),
                    radius: LEFT_RADIUS,
                    start: 0.0,
                    sweep: FRAC_PI_2,
                },
                Piece::Line {
                    a: Point::new(-c, w),
                    b: Point::new(-far, w),
                },
            ]
        }
        Maneuver::RightTurn => {
            let c = RIGHT_RADIUS + w;
            vec![
                Piece::Line {
                    a: Point::new(w, -far),
                    b: Point::new(w, -c),
                },
                Piece::Arc {
                    center: Point::new(c, -c),
                    radius: RIGHT_RADIUS,
                    start: PI,
                    sweep: -FRAC_PI_2,
                },
                Piece::Line {
                    a: Point::new(c, -w),
                    b: Point::new(far, -w),
                },
            ]
        }
    };
    let rot = approach_rotation(d);
    Path::new(pieces.iter().map(|p| p.rotated(rot)).collect())
}

/// Direction of the leg a vehicle leaves by.
fn exit_leg(d: Direction, m: Maneuver) -> Direction {
    match m {
        Maneuver::Straight => d.opposite(),
        Maneuver::LeftTurn => d.cw(),
        Maneuver::RightTurn => d.ccw(),
    }
}

#[derive(Debug, Clone, Copy)]
struct SpeedProfile {
    cruise: f64,
    turn: f64,
    decel: f64,
    accel: f64,
}

/// Vehicle moving along a path: arc length sampled every `STEP` seconds by RK4.
#[derive(Debug, Clone)]
struct VehicleMotion {
    path: Path,
    profile: SpeedProfile,
    s: Vec<f64>,
}

impl VehicleMotion {
    fn new(path: Path, profile: SpeedProfile) -> Self {
        let mut m = VehicleMotion {
            path,
            profile,
            s: vec![0.0],
        };
        let mut s = 0.0;
        while s < m.path.length {
            s = m.rk4(s, STEP);
            m.s.push(s);
        }
        m
    }

    fn speed(&self, s: f64) -> f64 {
        let p = self.profile;
        match self.path.turn {
            None => p.cruise,
            Some((s0, _)) if s < s0 => p.cruise.min((p.turn * p.turn + 2.0 * p.decel * (s0 - s)).sqrt()),
            Some((_, s1)) if s > s1 => p.cruise.min((p.turn * p.turn + 2.0 * p.accel * (s - s1)).sqrt()),
            Some(_) => p.turn,
        }
    }

    fn rk4(&self, s: f64, h: f64) -> f64 {
        let k1 = self.speed(s);
        let k2 = self.speed(s + 0.5 * h * k1);
        let k3 = self.speed(s + 0.5 * h * k2);
        let k4 = self.speed(s + h * k3);
        s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    fn duration(&self) -> f64 {
        (self.s.len() - 1) as f64 * STEP
    }

    fn arc_length(&self, tau: f64) -> f64 {
        let k = ((tau / STEP).floor() as usize).min(self.s.len() - 1);
        let h = tau - k as f64 * STEP;
        if h <= 0.0 {
            self.s[k]
        } else {
            self.rk4(self.s[k], h)
        }
    }

    /// Position, velocity and yaw rate `tau` seconds after spawning.
    fn state(&self, tau: f64) -> (Point, Point, f64) {
        let s = self.arc_length(tau);
        let (p, heading, kappa) = self.path.at(s);
        let v = self.speed(s);
        (p, Point::new(v * heading.cos(), v * heading.sin()), v * kappa)
    }

    /// Entry and exit time of the disc around `c`.
    fn zone_times(&self, c: Point, r: f64) -> Option<(f64, f64)> {
        let inside = |tau: f64| self.state(tau).0.dist(c) <= r;
        let n = self.s.len();
        let first = (0..n).find(|&k| inside(k as f64 * STEP))?;
        let last = (first..n).take_while(|&k| inside(k as f64 * STEP)).last()?;
        let refine = |mut out: f64, mut inn: f64| {
            for _ in 0..40 {
                let mid = 0.5 * (out + inn);
                if inside(mid) {
                    inn = mid;
                } else {
                    out = mid;
                }
            }
            0.5 * (out + inn)
        };
        let t_in = if first == 0 { 0.0 } else { refine((first - 1) as f64 * STEP, first as f64 * STEP) };
        let t_out = if last + 1 >= n {
            last as f64 * STEP
        } else {
            refine((last + 1) as f64 * STEP, last as f64 * STEP)
        };
        Some((t_in, t_out))
    }
}

/// Pedestrian walking a polyline at constant speed.
#[derive(Debug, Clone)]
struct Walk {
    waypoints: Vec<Point>,
    speed: f64,
}

impl Walk {
    fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    fn duration(&self) -> f64 {
        self.length() / self.speed
    }

    fn state(&self, tau: f64) -> (Point, Point) {
        let mut left = (tau * self.speed).max(0.0);
        for w in self.waypoints.windows(2) {
            let len = w[0].dist(w[1]);
            let dir = w[1].sub(w[0]).scale(1.0 / len);
            if left <= len {
                return (w[0].add(dir.scale(left)), dir.scale(self.speed));
            }
            left -= len;
        }
        let n = self.waypoints.len();
        let dir = self.waypoints[n - 1].sub(self.waypoints[n - 2]);
        (self.waypoints[n - 1], dir.scale(self.speed / dir.norm()))
    }
}

/// Crosswalk of leg `d` as (end nearer the approach lane's right side, other end)
/// plus the unit normal pointing away from the intersection.
fn crosswalk(d: Direction) -> (Point, Point, Point) {
    let h = CROSSWALK_HALF_LENGTH;
    let rot = approach_rotation(d);
    let a = Point::new(-h, -CROSSWALK_DISTANCE).rotate(rot);
    let b = Point::new(h, -CROSSWALK_DISTANCE).rotate(rot);
    (a, b, Point::new(0.0, -1.0).rotate(rot))
}

/// Sidewalk → crosswalk end → other end → sidewalk, fanning out away from the road.
fn crossing_walk(leg: Direction, forward: bool, speed: f64, fan: [f64; 2]) -> Walk {
    let (a, b, out) = crosswalk(leg);
    let (from, to) = if forward { (a, b) } else { (b, a) };
    let along = to.sub(from).scale(1.0 / from.dist(to));
    let side = |base: Point, away: Point, ang: f64| {
        let d = away.scale(ang.cos()).add(out.scale(ang.sin()));
        base.add(d.scale(SIDEWALK_RUN))
    };
    Walk {
        waypoints: vec![side(from, along.scale(-1.0), fan[0]), from, to, side(to, along, fan[1])],
        speed,
    }
}

// ---------------------------------------------------------------------------
// Scene assembly

#[derive(Debug, Clone)]
enum Motion {
    Vehicle(VehicleMotion),
    Pedestrian(Walk),
}

#[derive(Debug, Clone)]
struct Agent {
    motion: Motion,
    spawn: f64,
    /// Set for vehicles.
    label: Option<(Direction, Maneuver)>,
    fast: bool,
    conflict: Option<usize>,
    requested_pet: Option<f64>,
}

impl Agent {
    fn class(&self) -> ObjectClass {
        match self.motion {
            Motion::Vehicle(_) => ObjectClass::Vehicle,
            Motion::Pedestrian(_) => ObjectClass::Pedestrian,
        }
    }

    fn end(&self) -> f64 {
        self.spawn
            + match &self.motion {
                Motion::Vehicle(v) => v.duration(),
                Motion::Pedestrian(w) => w.duration(),
            }
    }

    /// Noise-free samples on the global frame grid: (t, pos, vel, yaw rate).
    fn samples(&self, observe_radius: f64) -> Vec<(f64, Point, Point, f64)> {
        let first = (self.spawn / FRAME).ceil() as i64;
        let last = (self.end() / FRAME).floor() as i64;
        (first..=last)
            .filter_map(|f| {
                let t = f as f64 * FRAME;
                let tau = t - self.spawn;
                match &self.motion {
                    Motion::Vehicle(v) => {
                        let (p, vel, yaw) = v.state(tau);
                        (p.norm() <= observe_radius).then_some((t, p, vel, yaw))
                    }
                    Motion::Pedestrian(w) => {
                        let (p, vel) = w.state(tau);
                        Some((t, p, vel, 0.0))
                    }
                }
            })
            .collect()
    }

    fn clean_track(&self, observe_radius: f64) -> Result<Trajectory> {
        let pts = self
            .samples(observe_radius)
            .into_iter()
            .map(|(t, p, v, yaw)| TrackPoint::new(t, p.x, p.y, v.x, v.y, yaw))
            .collect();
        Trajectory::with_class("", self.class(), pts)
    }
}

/// One engineered vehicle-pedestrian conflict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeredConflict {
    pub vehicle_id: String,
    pub pedestrian_id: String,
    pub requested_pet: f64,
    /// PET of the noise-free tracks.
    pub clean_pet: f64,
    pub first: FirstAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTruth {
    pub id: String,
    pub direction: Direction,
    pub maneuver: Maneuver,
}

/// Everything the generator knows that the dataset does not say.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub vehicles: Vec<VehicleTruth>,
    pub conflicts: Vec<EngineeredConflict>,
    pub fast_pedestrians: Vec<String>,
    /// (head id, tail id) of pedestrian tracks split in two.
    pub fragments: Vec<(String, String)>,
    pub crosswalk_endpoints: Vec<Point>,
}

impl GroundTruth {
    pub fn maneuver_of(&self, id: &str) -> Option<(Direction, Maneuver)> {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .map(|v| (v.direction, v.maneuver))
    }
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    agents: Vec<Agent>,
    /// Noise-free tracks of `agents`, for spacing checks.
    tracks: Vec<Trajectory>,
}

impl Generator<'_> {
    fn uniform(&mut self, r: [f64; 2]) -> f64 {
        if r[0] == r[1] {
            r[0]
        } else {
            self.rng.random_range(r[0]..r[1])
        }
    }

    fn profile(&mut self, m: Maneuver) -> SpeedProfile {
        let s = self.spec;
        let cruise = self.uniform(s.cruise_speed);
        let turn = match m {
            Maneuver::LeftTurn => s.left_turn_speed,
            Maneuver::RightTurn => s.right_turn_speed,
            Maneuver::Straight => cruise,
        };
        let jitter = self.uniform([0.9, 1.1]);
        SpeedProfile {
            cruise,
            turn: (turn * jitter).min(cruise),
            decel: s.deceleration,
            accel: s.acceleration,
        }
    }

    fn fan(&mut self) -> [f64; 2] {
        [self.uniform([0.0, 1.0]), self.uniform([0.0, 1.0])]
    }

    /// PET of every nearby opposite-class pair stays above the margin.
    fn well_spaced(&self, agent: &Agent, track: &Trajectory) -> bool {
        let window = self.spec.pet_margin + 1.0;
        self.agents.iter().zip(&self.tracks).all(|(other, ot)| {
            if other.class() == agent.class()
                || other.end() + window < agent.spawn
                || agent.end() + window < other.spawn
            {
                return true;
            }
            let pet = match agent.class() {
                ObjectClass::Vehicle => compute_pet(track, ot, ZONE_RADIUS),
                _ => compute_pet(ot, track, ZONE_RADIUS),
            };
            pet.is_none_or(|e| e.pet > self.spec.pet_margin)
        })
    }

    fn push(&mut self, agent: Agent) -> Result<()> {
        let track = agent.clean_track(self.spec.observe_radius)?;
        self.agents.push(agent);
        self.tracks.push(track);
        Ok(())
    }

    /// Places an agent at a random time, retrying until it is well spaced.
    fn place(&mut self, mut make: impl FnMut(&mut Self, f64) -> Agent, what: &str) -> Result<()> {
        let horizon = self.spec.duration();
        for _ in 0..self.spec.max_attempts {
            let t = self.uniform([0.0, horizon]);
            let agent = make(self, t);
            let track = agent.clean_track(self.spec.observe_radius)?;
            if self.well_spaced(&agent, &track) {
                self.agents.push(agent);
                self.tracks.push(track);
                return Ok(());
            }
        }
        Err(Error::InvalidInput(format!(
            "could not place {what} without unintended conflicts; lower the density or lengthen the slot"
        )))
    }

    fn engineered(&mut self, i: usize) -> Result<()> {
        let spec = self.spec;
        let d = Direction::ALL[i % 4];
        let m = if (i / 4) % 2 == 0 { Maneuver::LeftTurn } else { Maneuver::RightTurn };
        let profile = self.profile(m);
        let motion = VehicleMotion::new(vehicle_path(d, m), profile);
        let leg = exit_leg(d, m);
        let forward = self.rng.random_bool(0.5);
        let speed = self.uniform(spec.pedestrian_speed);
        let fan = self.fan();
        let walk = crossing_walk(leg, forward, speed, fan);

        // The exit lane crosses the crosswalk at the lane offset.
        let (a, b, _) = crosswalk(leg);
        let x = exit_lane_point(d, m);
        let from = if forward { a } else { b };
        let along = SIDEWALK_RUN + from.dist(x);
        let (p_in, p_out) = ((along - ZONE_RADIUS) / speed, (along + ZONE_RADIUS) / speed);
        let (v_in, v_out) = motion
            .zone_times(x, ZONE_RADIUS)
            .ok_or_else(|| Error::InvalidInput("engineered vehicle never reaches its conflict zone".into()))?;

        let pet = self.uniform(spec.conflict_pet);
        let slot_start = i as f64 * spec.slot + 0.25 * spec.slot;
        let vehicle_first = i % 2 == 0;
        let (veh_spawn, ped_spawn) = if vehicle_first {
            // Pedestrian enters the zone `pet` after the vehicle leaves it.
            (slot_start, slot_start + v_out + pet - p_in)
        } else {
            (slot_start + p_out + pet - v_in, slot_start)
        };
        if veh_spawn < 0.0 || ped_spawn < 0.0 {
            return Err(Error::InvalidInput(format!("conflict {i}: PET {pet} s not realisable")));
        }
        self.push(Agent {
            motion: Motion::Vehicle(motion),
            spawn: veh_spawn,
            label: Some((d, m)),
            fast: false,
            conflict: Some(i),
            requested_pet: Some(pet),
        })?;
        self.push(Agent {
            motion: Motion::Pedestrian(walk),
            spawn: ped_spawn,
            label: None,
            fast: false,
            conflict: Some(i),
            requested_pet: None,
        })
    }
}

/// Where the exit lane of (`d`, `m`) crosses its crosswalk.
fn exit_lane_point(d: Direction, m: Maneuver) -> Point {
    let leg = exit_leg(d, m);
    // On leg `leg`, the outbound lane sits left of the inbound one as seen
    // from the approach: x = −w in the leg's own frame.
    Point::new(-LANE_OFFSET, -CROSSWALK_DISTANCE).rotate(approach_rotation(leg))
}

fn noisy(rng: &mut ChaCha8Rng, v: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    round_mm(v + std * z)
}

fn round_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Builds the scene: engineered conflicts first, then background vehicles,
/// then background and fast pedestrians, all reproducible from `spec.seed`.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        agents: Vec::new(),
        tracks: Vec::new(),
    };
    for i in 0..spec.conflicts {
        g.engineered(i)?;
    }
    for d in Direction::ALL {
        for m in Maneuver::ALL {
            for _ in 0..spec.vehicles.get(m) {
                g.place(
                    |g, t| {
                        let profile = g.profile(m);
                        Agent {
                            motion: Motion::Vehicle(VehicleMotion::new(vehicle_path(d, m), profile)),
                            spawn: t,
                            label: Some((d, m)),
                            fast: false,
                            conflict: None,
                            requested_pet: None,
                        }
                    },
                    "a background vehicle",
                )?;
            }
        }
    }
    let n_peds = 4 * spec.pedestrians_per_crosswalk + spec.fast_pedestrians;
    for k in 0..n_peds {
        let leg = Direction::ALL[k % 4];
        let fast = k >= 4 * spec.pedestrians_per_crosswalk;
        g.place(
            |g, t| {
                let forward = g.rng.random_bool(0.5);
                let speed = if fast { spec.fast_speed } else { g.uniform(spec.pedestrian_speed) };
                let fan = g.fan();
                Agent {
                    motion: Motion::Pedestrian(crossing_walk(leg, forward, speed, fan)),
                    spawn: t,
                    label: None,
                    fast,
                    conflict: None,
                    requested_pet: None,
                }
            },
            "a pedestrian",
        )?;
    }
    assemble(g)
}

fn assemble(mut g: Generator<'_>) -> Result<(Dataset, GroundTruth)> {
    let spec = g.spec;
    // Stable ids in order of appearance.
    let mut order: Vec<usize> = (0..g.agents.len()).collect();
    order.sort_by(|&a, &b| g.agents[a].spawn.total_cmp(&g.agents[b].spawn).then(a.cmp(&b)));
    let mut ids = vec![String::new(); g.agents.len()];
    let (mut nv, mut np) = (0, 0);
    for &i in &order {
        ids[i] = match g.agents[i].class() {
            ObjectClass::Vehicle => {
                nv += 1;
                format!("v{nv:04}")
            }
            _ => {
                np += 1;
                format!("p{np:04}")
            }
        };
    }

    let mut trajectories = Vec::new();
    let mut truth = GroundTruth {
        seed: spec.seed,
        vehicles: Vec::new(),
        conflicts: Vec::new(),
        fast_pedestrians: Vec::new(),
        fragments: Vec::new(),
        crosswalk_endpoints: scene_geometry().endpoints().to_vec(),
    };
    for &i in &order {
        let agent = &g.agents[i];
        let class = agent.class();
        let flip_to = match class {
            ObjectClass::Vehicle => ObjectClass::Misc,
            _ => ObjectClass::Cyclist,
        };
        let mut points = Vec::new();
        let mut classes = Vec::new();
        for (t, p, v, yaw) in agent.samples(spec.observe_radius) {
            let x = noisy(&mut g.rng, p.x, spec.noise_position);
            let y = noisy(&mut g.rng, p.y, spec.noise_position);
            let vx = noisy(&mut g.rng, v.x, spec.noise_velocity);
            let vy = noisy(&mut g.rng, v.y, spec.noise_velocity);
            points.push(TrackPoint::new(round_mm(t * 10.0) / 10.0, x, y, vx, vy, round_mm(yaw)));
            let flip = spec.class_flip_prob > 0.0 && g.rng.random_bool(spec.class_flip_prob);
            classes.push(if flip { flip_to } else { class });
        }
        if let Some((d, m)) = agent.label {
            truth.vehicles.push(VehicleTruth {
                id: ids[i].clone(),
                direction: d,
                maneuver: m,
            });
        }
        if agent.fast {
            truth.fast_pedestrians.push(ids[i].clone());
        }
        let split = class == ObjectClass::Pedestrian
            && agent.conflict.is_none()
            && !agent.fast
            && points.len() >= 40
            && spec.fragment_prob > 0.0
            && g.rng.random_bool(spec.fragment_prob);
        if split {
            let cut = g.rng.random_range(15..points.len() - 15);
            let tail_id = format!("{}b", ids[i]);
            let tail_pts = points.split_off(cut);
            let tail_cls = classes.split_off(cut);
            trajectories.push(Trajectory::new(ids[i].clone(), classes, points)?);
            trajectories.push(Trajectory::new(tail_id.clone(), tail_cls, tail_pts)?);
            truth.fragments.push((ids[i].clone(), tail_id));
        } else {
            trajectories.push(Trajectory::new(ids[i].clone(), classes, points)?);
        }
    }

    for c in 0..spec.conflicts {
        let find = |class: ObjectClass| {
            (0..g.agents.len())
                .find(|&i| g.agents[i].conflict == Some(c) && g.agents[i].class() == class)
                .unwrap()
        };
        let (v, p) = (find(ObjectClass::Vehicle), find(ObjectClass::Pedestrian));
        let mut tv = g.tracks[v].clone();
        tv.id = ids[v].clone();
        let mut tp = g.tracks[p].clone();
        tp.id = ids[p].clone();
        let e = compute_pet(&tv, &tp, ZONE_RADIUS)
            .ok_or_else(|| Error::InvalidInput(format!("engineered conflict {c} lost its crossing")))?;
        truth.conflicts.push(EngineeredConflict {
            vehicle_id: ids[v].clone(),
            pedestrian_id: ids[p].clone(),
            requested_pet: g.agents[v].requested_pet.unwrap_or(f64::NAN),
            clean_pet: e.pet,
            first: e.first,
        });
    }
    g.tracks.clear();
    truth.conflicts.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
    let ds = Dataset::new(trajectories)?;
    Ok((ds, truth))
}
