//! Track data model and delimited-file ingestion.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::preprocess::IntersectionGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Misc,
}

impl ObjectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Misc => "misc",
        }
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vehicle" | "veh" | "car" => Ok(ObjectClass::Vehicle),
            "pedestrian" | "ped" => Ok(ObjectClass::Pedestrian),
            "cyclist" | "bicycle" | "bike" => Ok(ObjectClass::Cyclist),
            "misc" | "unknown" => Ok(ObjectClass::Misc),
            other => Err(Error::InvalidInput(format!("unknown object class `{other}`"))),
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compass approach a vehicle enters the intersection from.
///
/// The integer code (`N=0, E=1, S=2, W=3`) is the categorical encoding used by
/// the maneuver classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Direction> {
        Direction::ALL.get(code).copied()
    }

    /// Bearing (radians, counterclockwise from +x) pointing from the
    /// intersection center towards this approach.
    pub fn bearing(self) -> f64 {
        use std::f64::consts::FRAC_PI_2;
        match self {
            Direction::E => 0.0,
            Direction::N => FRAC_PI_2,
            Direction::W => 2.0 * FRAC_PI_2,
            Direction::S => 3.0 * FRAC_PI_2,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::S => Direction::N,
            Direction::E => Direction::W,
            Direction::W => Direction::E,
        }
    }

    /// Next approach counterclockwise (viewed with north up).
    pub fn ccw(self) -> Direction {
        match self {
            Direction::E => Direction::N,
            Direction::N => Direction::W,
            Direction::W => Direction::S,
            Direction::S => Direction::E,
        }
    }

    pub fn cw(self) -> Direction {
        self.ccw().opposite()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::E => "E",
            Direction::S => "S",
            Direction::W => "W",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NORTH" => Ok(Direction::N),
            "E" | "EAST" => Ok(Direction::E),
            "S" | "SOUTH" => Ok(Direction::S),
            "W" | "WEST" => Ok(Direction::W),
            other => Err(Error::InvalidInput(format!("unknown direction `{other}`"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Movement through the intersection. The index order (left, right, straight)
/// is shared by every probability and risk vector in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Maneuver {
    LeftTurn,
    RightTurn,
    Straight,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::LeftTurn, Maneuver::RightTurn, Maneuver::Straight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Maneuver> {
        Maneuver::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::LeftTurn => "left",
            Maneuver::RightTurn => "right",
            Maneuver::Straight => "straight",
        }
    }
}

impl FromStr for Maneuver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "leftturn" | "left_turn" => Ok(Maneuver::LeftTurn),
            "right" | "rightturn" | "right_turn" => Ok(Maneuver::RightTurn),
            "straight" | "through" => Ok(Maneuver::Straight),
            other => Err(Error::InvalidInput(format!("unknown maneuver `{other}`"))),
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped observation of one tracked object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// rad/s
    pub yaw_rate: f64,
    pub valid: bool,
}

impl TrackPoint {
    /// Builds a point, deriving `valid` from the kinematic fields.
    pub fn new(t: f64, x: f64, y: f64, vx: f64, vy: f64, yaw_rate: f64) -> Self {
        let valid = x.is_finite() && y.is_finite() && vx.is_finite() && vy.is_finite();
        TrackPoint {
            t,
            x,
            y,
            vx,
            vy,
            yaw_rate,
            valid,
        }
    }

    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn vel(&self) -> Point {
        Point::new(self.vx, self.vy)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub class: ObjectClass,
    /// Raw per-frame class labels, aligned with `points`.
    pub frame_classes: Vec<ObjectClass>,
    pub points: Vec<TrackPoint>,
    pub entering_direction: Option<Direction>,
    pub maneuver: Option<Maneuver>,
}

impl Trajectory {
    /// Builds a trajectory after checking the point invariants. The class is
    /// set by majority vote over `frame_classes`.
    pub fn new(
        id: impl Into<String>,
        frame_classes: Vec<ObjectClass>,
        points: Vec<TrackPoint>,
    ) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::InvalidInput(format!("trajectory `{id}` has no points")));
        }
        if frame_classes.len() != points.len() {
            return Err(Error::LengthMismatch {
                left: frame_classes.len(),
                right: points.len(),
            });
        }
        if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidInput(format!(
                "trajectory `{id}` timestamps are not strictly increasing"
            )));
        }
        let class = majority_vote_label(&frame_classes)?;
        Ok(Trajectory {
            id,
            class,
            frame_classes,
            points,
            entering_direction: None,
            maneuver: None,
        })
    }

    /// Convenience constructor with a single class for every frame.
    pub fn with_class(id: impl Into<String>, class: ObjectClass, points: Vec<TrackPoint>) -> Result<Self> {
        let labels = vec![class; points.len()];
        Trajectory::new(id, labels, points)
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &TrackPoint> {
        self.points.iter().filter(|p| p.valid)
    }

    pub fn first_valid(&self) -> Option<&TrackPoint> {
        self.points.iter().find(|p| p.valid)
    }

    pub fn last_valid(&self) -> Option<&TrackPoint> {
        self.points.iter().rev().find(|p| p.valid)
    }

    pub fn start_time(&self) -> f64 {
        self.points[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.points[self.points.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Whether the two time supports overlap.
    pub fn overlaps_in_time(&self, other: &Trajectory) -> bool {
        self.start_time() <= other.end_time() && other.start_time() <= self.end_time()
    }

    /// Index of the point at time `t`, if present (within a tenth of a frame).
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let i = self.points.partition_point(|p| p.t < t - 1e-6);
        (i < self.points.len() && (self.points[i].t - t).abs() <= 1e-6).then_some(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub geometry: Option<IntersectionGeometry>,
    pub frame_interval: f64,
}

impl Dataset {
    pub const DEFAULT_FRAME_INTERVAL: f64 = 0.1;

    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            if seen.insert(t.id.as_str(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate trajectory id `{}`", t.id)));
            }
        }
        Ok(Dataset {
            trajectories,
            geometry: None,
            frame_interval: Self::DEFAULT_FRAME_INTERVAL,
        })
    }

    pub fn of_class(&self, class: ObjectClass) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.class == class)
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }
}

/// Positions at a fixed cadence; `points[0]` is the starting position, so a
/// `steps`-step prediction holds `steps + 1` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub points: Vec<Point>,
}

impl PredictedTrajectory {
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> Point {
        self.points[self.points.len() - 1]
    }
}

/// Returns the most frequent label; ties go to the label that appears first.
pub fn majority_vote_label(labels: &[ObjectClass]) -> Result<ObjectClass> {
    let mut tally: Vec<(ObjectClass, usize)> = Vec::with_capacity(4);
    for &l in labels {
        match tally.iter_mut().find(|(c, _)| *c == l) {
            Some(entry) => entry.1 += 1,
            None => tally.push((l, 1)),
        }
    }
    // `tally` is in first-appearance order, so a strict comparison keeps the
    // earliest label among equals.
    let mut best: Option<(ObjectClass, usize)> = None;
    for (label, count) in tally {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l).ok_or(Error::Empty("label list"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    RadPerS,
    DegPerS,
}

/// Column mapping for the delimited input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub t: String,
    pub id: String,
    pub class: String,
    pub x: String,
    pub y: String,
    pub vx: String,
    pub vy: String,
    pub yaw_rate: String,
    pub yaw_rate_unit: AngleUnit,
    /// Optional label columns written by preprocessing.
    pub direction: String,
    pub maneuver: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            t: "t".into(),
            id: "id".into(),
            class: "class".into(),
            x: "x".into(),
            y: "y".into(),
            vx: "vx".into(),
            vy: "vy".into(),
            yaw_rate: "yaw_rate".into(),
            yaw_rate_unit: AngleUnit::RadPerS,
            direction: "direction".into(),
            maneuver: "maneuver".into(),
        }
    }
}

fn parse_f64(s: &str) -> f64 {
    let s = s.trim();
    if s.is_empty() {
        return f64::NAN;
    }
    s.parse().unwrap_or(f64::NAN)
}

/// Reads a dataset from a comma-separated file.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema).map_err(|e| match e {
        Error::NoRows(_) => Error::NoRows(path.to_path_buf()),
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

/// Reads a dataset from any reader. See [`load_dataset`].
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv("<input>", e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let req = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (ct, cid, cclass) = (req(&schema.t)?, req(&schema.id)?, req(&schema.class)?);
    let (cx, cy, cvx, cvy, cyaw) = (
        req(&schema.x)?,
        req(&schema.y)?,
        req(&schema.vx)?,
        req(&schema.vy)?,
        req(&schema.yaw_rate)?,
    );
    let cdir = col(&schema.direction);
    let cman = col(&schema.maneuver);
    let yaw_scale = match schema.yaw_rate_unit {
        AngleUnit::RadPerS => 1.0,
        AngleUnit::DegPerS => std::f64::consts::PI / 180.0,
    };

    struct Group {
        id: String,
        rows: Vec<(TrackPoint, ObjectClass)>,
        direction: Option<Direction>,
        maneuver: Option<Maneuver>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv("<input>", e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let t = parse_f64(field(ct));
        let id = field(cid).to_string();
        if !t.is_finite() || id.is_empty() {
            continue;
        }
        let class = field(cclass).parse().unwrap_or(ObjectClass::Misc);
        let p = TrackPoint::new(
            t,
            parse_f64(field(cx)),
            parse_f64(field(cy)),
            parse_f64(field(cvx)),
            parse_f64(field(cvy)),
            parse_f64(field(cyaw)) * yaw_scale,
        );
        let gi = *index.entry(id.clone()).or_insert_with(|| {
            groups.push(Group {
                id,
                rows: Vec::new(),
                direction: None,
                maneuver: None,
            });
            groups.len() - 1
        });
        let g = &mut groups[gi];
        if g.direction.is_none() {
            g.direction = cdir.and_then(|c| field(c).parse().ok());
        }
        if g.maneuver.is_none() {
            g.maneuver = cman.and_then(|c| field(c).parse().ok());
        }
        g.rows.push((p, class));
    }
    if groups.is_empty() {
        return Err(Error::NoRows("<input>".into()));
    }

    let mut trajectories = Vec::with_capacity(groups.len());
    for mut g in groups {
        // Stable sort keeps the first of any duplicated timestamps in front.
        g.rows.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
        g.rows.dedup_by(|later, earlier| later.0.t == earlier.0.t);
        let (points, labels): (Vec<_>, Vec<_>) = g.rows.into_iter().unzip();
        let mut traj = Trajectory::new(g.id, labels, points)?;
        traj.entering_direction = g.direction;
        traj.maneuver = g.maneuver;
        trajectories.push(traj);
    }
    Dataset::new(trajectories)
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NaN".to_string()
    }
}

/// Writes a dataset in the canonical column layout (`t,id,class,x,y,vx,vy,
/// yaw_rate,direction,maneuver`, yaw rate in rad/s), rows ordered by time then
/// by trajectory order.
pub fn write_dataset<W: std::io::Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::csv("<output>", e);
    w.write_record(["t", "id", "class", "x", "y", "vx", "vy", "yaw_rate", "direction", "maneuver"])
        .map_err(wrap)?;
    let mut rows: Vec<(f64, usize, usize)> = ds
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(ti, tr)| tr.points.iter().enumerate().map(move |(pi, p)| (p.t, ti, pi)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, ti, pi) in rows {
        let tr = &ds.trajectories[ti];
        let p = &tr.points[pi];
        w.write_record([
            fmt_f64(p.t),
            tr.id.clone(),
            tr.frame_classes[pi].to_string(),
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.vx),
            fmt_f64(p.vy),
            fmt_f64(p.yaw_rate),
            tr.entering_direction.map(|d| d.to_string()).unwrap_or_default(),
            tr.maneuver.map(|m| m.to_string()).unwrap_or_default(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(file), ds)
}
