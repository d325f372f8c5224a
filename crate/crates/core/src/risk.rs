//! Probabilistic conflict risk: predicted paths, conflict points and the
//! maneuver-weighted mixture, plus the kinematic baseline used for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::gpr::{rollout, ClusterModels, RolloutConfig};
use crate::maneuver::{feature_row, predict_row_proba, ForestModel, ManeuverDistribution};
use crate::ssm::compute_ttc;
use crate::traj::{Direction, Maneuver, PredictedTrajectory, TrackPoint, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl KinematicState {
    pub fn at_rest(p: Point) -> Self {
        KinematicState {
            x: p.x,
            y: p.y,
            ..Default::default()
        }
    }

    /// Position and velocity of a point, no acceleration.
    pub fn from_point(p: &TrackPoint) -> Self {
        KinematicState {
            x: p.x,
            y: p.y,
            vx: p.vx,
            vy: p.vy,
            ax: 0.0,
            ay: 0.0,
        }
    }

    /// State at point `idx`, with acceleration from the backward difference of
    /// the velocities at `idx` and the previous valid point (zero if none).
    pub fn from_track(traj: &Trajectory, idx: usize) -> Result<Self> {
        let p = traj
            .points
            .get(idx)
            .filter(|p| p.valid)
            .ok_or_else(|| Error::InvalidInput(format!("no valid point {idx} in {}", traj.id)))?;
        let mut s = Self::from_point(p);
        if let Some(q) = traj.points[..idx].iter().rev().find(|q| q.valid) {
            let dt = p.t - q.t;
            if dt > 0.0 {
                s.ax = (p.vx - q.vx) / dt;
                s.ay = (p.vy - q.vy) / dt;
            }
        }
        Ok(s)
    }

    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.vx, self.vy, self.ax, self.ay].iter().all(|v| v.is_finite())
    }
}

/// Constant-velocity extrapolation, stepped like [`dynamic_model_predict`].
pub fn predict_pedestrian(state: &KinematicState, dt: f64, steps: usize) -> PredictedTrajectory {
    dynamic_model_predict(
        &KinematicState {
            ax: 0.0,
            ay: 0.0,
            ..*state
        },
        dt,
        steps,
    )
}

/// Constant-acceleration extrapolation applied step by step:
/// `x += v·dt + a·dt²/2`, `v += a·dt`.
pub fn dynamic_model_predict(state: &KinematicState, dt: f64, steps: usize) -> PredictedTrajectory {
    let mut points = Vec::with_capacity(steps + 1);
    let (mut x, mut y, mut vx, mut vy) = (state.x, state.y, state.vx, state.vy);
    points.push(Point::new(x, y));
    for _ in 0..steps {
        x += vx * dt + 0.5 * state.ax * dt * dt;
        y += vy * dt + 0.5 * state.ay * dt * dt;
        vx += state.ax * dt;
        vy += state.ay * dt;
        points.push(Point::new(x, y));
    }
    PredictedTrajectory { t0: 0.0, dt, points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub point: Point,
    /// Time for the vehicle to reach the conflict point, s.
    pub t_vehicle: f64,
    /// Time for the pedestrian to reach it, s.
    pub t_pedestrian: f64,
}

/// Scans every pair of predicted positions; among pairs closer than `radius`
/// picks the one with the smallest time gap, then the earlier pair, then the
/// closer one. The conflict point is the midpoint of the pair.
pub fn find_conflict_point(
    veh: &PredictedTrajectory,
    ped: &PredictedTrajectory,
    radius: f64,
) -> Result<Option<ConflictPoint>> {
    if veh.points.len() != ped.points.len() || (veh.dt - ped.dt).abs() > 1e-12 {
        return Err(Error::LengthMismatch {
            left: veh.points.len(),
            right: ped.points.len(),
        });
    }
    let r2 = radius * radius;
    let mut best: Option<((usize, usize, f64, usize), usize, usize)> = None;
    for (j, a) in veh.points.iter().enumerate() {
        for (k, b) in ped.points.iter().enumerate() {
            let d2 = a.dist2(*b);
            if d2 > r2 {
                continue;
            }
            let key = (j.abs_diff(k), j.min(k), d2, j);
            if best.is_none_or(|(bk, _, _)| key.partial_cmp(&bk) == Some(std::cmp::Ordering::Less)) {
                best = Some((key, j, k));
            }
        }
    }
    Ok(best.map(|(_, j, k)| ConflictPoint {
        point: veh.points[j].midpoint(ped.points[k]),
        t_vehicle: j as f64 * veh.dt,
        t_pedestrian: k as f64 * ped.dt,
    }))
}

/// `exp(−|T_veh − T_ped|)` when a conflict point exists, else 0.
pub fn maneuver_risk(times: Option<(f64, f64)>) -> f64 {
    times.map_or(0.0, |(tv, tp)| (-(tv - tp).abs()).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictAssessment {
    pub maneuver: Maneuver,
    pub conflict: Option<ConflictPoint>,
    pub risk: f64,
    /// No model for this (direction, maneuver); the risk is 0 by convention.
    pub model_absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub t: f64,
    /// Indexed like [`Maneuver::index`].
    pub assessments: Vec<ConflictAssessment>,
    pub maneuver_probs: ManeuverDistribution,
    pub risk: f64,
    pub ttc_baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// Conflict-point proximity and TTC radius, m.
    pub radius: f64,
    pub rollout: RolloutConfig,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            radius: 1.0,
            rollout: RolloutConfig::default(),
        }
    }
}

/// Everything about a vehicle's future that does not depend on the
/// pedestrian: one rollout per maneuver and the maneuver probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleForecast {
    pub t: f64,
    pub state: KinematicState,
    pub rollouts: [Option<PredictedTrajectory>; 3],
    pub probs: ManeuverDistribution,
}

pub fn forecast_vehicle(
    veh: &TrackPoint,
    dir: Direction,
    models: &ClusterModels,
    forest: Option<&ForestModel>,
    cfg: &RiskConfig,
) -> Result<VehicleForecast> {
    let forest = forest.ok_or_else(|| Error::Model("risk estimation needs a trained forest".into()))?;
    let rollouts = Maneuver::ALL.map(|m| {
        models
            .get(dir, m)
            .map(|pair| rollout(pair, veh.pos(), &cfg.rollout))
    });
    if rollouts.iter().all(Option::is_none) {
        return Err(Error::Model(format!("no trajectory models for entering direction {dir}")));
    }
    let probs = predict_row_proba(forest, &feature_row(veh, dir, forest.features)?);
    Ok(VehicleForecast {
        t: veh.t,
        state: KinematicState::from_point(veh),
        rollouts,
        probs,
    })
}

/// Combines a vehicle forecast with a constant-velocity pedestrian.
pub fn assess(forecast: &VehicleForecast, ped: &KinematicState, cfg: &RiskConfig) -> Result<RiskProfile> {
    let ped_path = predict_pedestrian(ped, cfg.rollout.dt, cfg.rollout.steps);
    let mut assessments = Vec::with_capacity(3);
    let mut risk = 0.0;
    for m in Maneuver::ALL {
        let (conflict, model_absent) = match &forecast.rollouts[m.index()] {
            Some(path) => (find_conflict_point(path, &ped_path, cfg.radius)?, false),
            None => (None, true),
        };
        let r = maneuver_risk(conflict.map(|c| (c.t_vehicle, c.t_pedestrian)));
        risk += r * forecast.probs.get(m);
        assessments.push(ConflictAssessment {
            maneuver: m,
            conflict,
            risk: r,
            model_absent,
        });
    }
    Ok(RiskProfile {
        t: forecast.t,
        assessments,
        maneuver_probs: forecast.probs,
        risk: risk.clamp(0.0, 1.0),
        ttc_baseline: compute_ttc(&forecast.state, ped, cfg.radius),
    })
}

/// Risk of one vehicle-pedestrian pair at the vehicle point's time.
pub fn estimate_risk(
    veh: &TrackPoint,
    dir: Direction,
    ped: &KinematicState,
    models: &ClusterModels,
    forest: Option<&ForestModel>,
    cfg: &RiskConfig,
) -> Result<RiskProfile> {
    assess(&forecast_vehicle(veh, dir, models, forest, cfg)?, ped, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub distances: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl PredictionError {
    pub fn from_distances(distances: Vec<f64>) -> Self {
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let std = (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        PredictionError { distances, mean, std }
    }
}

/// Per-index Euclidean distances between aligned trajectories.
pub fn trajectory_error(predicted: &[Point], actual: &[Point]) -> Result<PredictionError> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("trajectory error input"));
    }
    Ok(PredictionError::from_distances(
        predicted.iter().zip(actual).map(|(p, a)| p.dist(*a)).collect(),
    ))
}

/// Errors of the trajectory models against one observed trajectory: starting
/// from its `start_point`-th point (1-based), predict `horizon` steps with the
/// vehicle's own cluster model and with the kinematic baseline. `None` when
/// the trajectory is unlabeled, its cluster has no model, or it has too few
/// valid consecutive points.
pub fn prediction_distances(
    traj: &Trajectory,
    models: &ClusterModels,
    start_point: usize,
    horizon: usize,
    rollout_cfg: &RolloutConfig,
) -> Result<Option<(PredictionError, PredictionError)>> {
    let (Some(d), Some(m)) = (traj.entering_direction, traj.maneuver) else {
        return Ok(None);
    };
    let Some(pair) = models.get(d, m) else {
        return Ok(None);
    };
    if start_point == 0 || horizon == 0 {
        return Err(Error::Config("start point and horizon must be at least 1".into()));
    }
    let start = start_point - 1;
    let Some(window) = traj.points.get(start..=start + horizon) else {
        return Ok(None);
    };
    if window.iter().any(|p| !p.valid) {
        return Ok(None);
    }
    let dt = window[1].t - window[0].t;
    let cfg = RolloutConfig {
        dt,
        steps: horizon,
        ..*rollout_cfg
    };
    let actual: Vec<Point> = window[1..].iter().map(TrackPoint::pos).collect();
    let gp = rollout(pair, window[0].pos(), &cfg);
    let state = KinematicState::from_track(traj, start)?;
    let dynamic = dynamic_model_predict(&state, dt, horizon);
    Ok(Some((
        trajectory_error(&gp.points[1..], &actual)?,
        trajectory_error(&dynamic.points[1..], &actual)?,
    )))
}

/// Pooled prediction errors of one maneuver for one (start point, horizon) case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub start_point: usize,
    pub horizon: usize,
    pub maneuver: Maneuver,
    pub vehicles: usize,
    pub gpr_mean: f64,
    pub gpr_std: f64,
    pub dynamic_mean: f64,
    pub dynamic_std: f64,
}

/// For every case and maneuver, pools the per-step distances of all given
/// trajectories and reports their mean and population standard deviation.
pub fn prediction_study(
    trajs: &[&Trajectory],
    models: &ClusterModels,
    cases: &[(usize, usize)],
    rollout_cfg: &RolloutConfig,
) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for &(start_point, horizon) in cases {
        for m in Maneuver::ALL {
            let mut gp = Vec::new();
            let mut dy = Vec::new();
            let mut vehicles = 0;
            for t in trajs.iter().filter(|t| t.maneuver == Some(m)) {
                if let Some((g, d)) = prediction_distances(t, models, start_point, horizon, rollout_cfg)? {
                    gp.extend(g.distances);
                    dy.extend(d.distances);
                    vehicles += 1;
                }
            }
            if vehicles == 0 {
                continue;
            }
            let g = PredictionError::from_distances(gp);
            let d = PredictionError::from_distances(dy);
            rows.push(StudyRow {
                start_point,
                horizon,
                maneuver: m,
                vehicles,
                gpr_mean: g.mean,
                gpr_std: g.std,
                dynamic_mean: d.mean,
                dynamic_std: d.std,
            });
        }
    }
    Ok(rows)
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("start_point,horizon,maneuver,vehicles,gpr_mean,gpr_std,dynamic_mean,dynamic_std\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.start_point, r.horizon, r.maneuver, r.vehicles, r.gpr_mean, r.gpr_std, r.dynamic_mean, r.dynamic_std
        ));
    }
    s
}
