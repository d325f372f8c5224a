//! Acceptance suite: one pass/fail line per criterion. Exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pedrisk::config::RunConfig;
use pedrisk::geom::Point;
use pedrisk::gpr::{nlml_and_grad, GprModel, KernelConfig, KernelKind, RolloutConfig};
use pedrisk::maneuver::{run_protocol, ForestConfig, LabeledFeatures, ManeuverDistribution};
use pedrisk::pipeline::{
    load_models, risk_streams, run_preprocess, run_risk, run_synth, run_train, DATASET_FILE,
};
use pedrisk::preprocess::{merge_pedestrian_trajectories, preprocess_dataset, MergeCriteria, PreprocessConfig};
use pedrisk::risk::{assess, maneuver_risk, prediction_study, KinematicState, RiskConfig, StudyRow, VehicleForecast};
use pedrisk::ssm::{compute_pet, compute_ttc, evaluate_detection, identify_conflicts_pet};
use pedrisk::synth::{generate_scenario, ScenarioSpec};
use pedrisk::traj::{load_dataset, Dataset, Maneuver, ObjectClass, Schema, TrackPoint, Trajectory};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- GP core

fn kernel_oracle(kind: KernelKind, sigma: f64, alpha: f64, a: Point, b: Point) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    match kind {
        KernelKind::Rbf => (-d2 / (2.0 * sigma * sigma)).exp(),
        KernelKind::Rq => (1.0 + d2 / (2.0 * alpha * sigma * sigma)).powf(-alpha),
    }
}

fn dense_k(k: &KernelConfig, x: &[Point], diag: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel_oracle(k.kind, k.length_scale, k.rq_alpha, x[i], x[j]) + if i == j { diag } else { 0.0 }
    })
}

fn dense_nlml(k: &KernelConfig, x: &[Point], y: &[f64]) -> f64 {
    let m = dense_k(k, x, k.noise_variance + k.jitter);
    let inv = m.clone().try_inverse().unwrap();
    let yv = DVector::from_column_slice(y);
    0.5 * yv.dot(&(&inv * &yv)) + 0.5 * m.determinant().ln() + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect()
}

fn criterion_gp_core() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_mean, mut worst_var, mut worst_grad) = (0.0f64, 0.0f64, 0.0f64);
    let mut psd_ok = true;
    for case in 0..200 {
        let n = rng.random_range(1..=10);
        let kind = if case % 2 == 0 { KernelKind::Rbf } else { KernelKind::Rq };
        let mut k = KernelConfig::new(
            kind,
            rng.random_range(0.3..3.0),
            rng.random_range(0.3..5.0),
            rng.random_range(1e-3..0.5),
        );
        k.jitter = 0.0;
        let x = random_points(&mut rng, n);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();

        let model = GprModel::new(k.clone(), x.clone(), y.clone(), false).unwrap();
        let cov = dense_k(&k, &x, k.noise_variance + model.jitter());
        let inv = cov.try_inverse().unwrap();
        let yv = DVector::from_column_slice(&y);
        for _ in 0..5 {
            let q = Point::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let ks = DVector::from_iterator(n, x.iter().map(|&p| kernel_oracle(kind, k.length_scale, k.rq_alpha, p, q)));
            let mean = ks.dot(&(&inv * &yv));
            let var = 1.0 - ks.dot(&(&inv * &ks)) + k.noise_variance;
            let (m, v) = model.predict(q);
            worst_mean = worst_mean.max((m - mean).abs());
            worst_var = worst_var.max((v - var).abs());
        }

        let (_, grad) = nlml_and_grad(&k, &x, &y).unwrap();
        let p = k.log_params();
        for i in 0..p.len() {
            let h = 1e-5;
            let mut up = p.clone();
            let mut dn = p.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (dense_nlml(&k.with_log_params(&up), &x, &y) - dense_nlml(&k.with_log_params(&dn), &x, &y)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-3);
            worst_grad = worst_grad.max(rel);
        }

        // Kernel matrices alone, including duplicated inputs, must be PSD.
        let mut xd = x.clone();
        xd.push(x[0]);
        let eig = SymmetricEigen::new(dense_k(&k, &xd, 0.0)).eigenvalues;
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut noiseless = k.clone();
        noiseless.noise_variance = 0.0;
        noiseless.jitter = 0.0;
        let yd: Vec<f64> = (0..xd.len()).map(|i| i as f64).collect();
        psd_ok &= min_eig > -1e-10 && GprModel::new(noiseless, xd, yd, false).is_ok();
    }
    outcome(
        worst_mean <= 1e-8 && worst_var <= 1e-8 && worst_grad <= 1e-4 && psd_ok,
        format!(
            "max |Δmean| {worst_mean:.1e}, max |Δvar| {worst_var:.1e}, max grad rel err {worst_grad:.1e}, PSD with jitter {psd_ok}"
        ),
    )
}

// ---------------------------------------------------------------- risk formula

fn line(start: Point, vel: Point, dt: f64, steps: usize) -> pedrisk::traj::PredictedTrajectory {
    pedrisk::traj::PredictedTrajectory {
        t0: 0.0,
        dt,
        points: (0..=steps).map(|k| start.add(vel.scale(k as f64 * dt))).collect(),
    }
}

/// Smallest |Tveh − Tped| over all predicted position pairs within `radius`,
/// and how close any pair distance came to the radius itself.
fn brute_gap(v: &[Point], p: &[Point], dt: f64, radius: f64) -> (Option<f64>, f64) {
    let mut best: Option<f64> = None;
    let mut margin = f64::INFINITY;
    for (j, a) in v.iter().enumerate() {
        for (k, b) in p.iter().enumerate() {
            let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
            margin = margin.min((d - radius).abs());
            if d <= radius {
                let g = (j as f64 - k as f64).abs() * dt;
                best = Some(best.map_or(g, |x: f64| x.min(g)));
            }
        }
    }
    (best, margin)
}

fn criterion_risk_formula() -> Outcome {
    let mut ok = maneuver_risk(Some((2.0, 2.0))) == 1.0;
    ok &= (maneuver_risk(Some((3.0, 2.0))) - (-1.0f64).exp()).abs() <= 1e-12;
    ok &= (maneuver_risk(Some((2.0, 3.0))) - (-1.0f64).exp()).abs() <= 1e-12;
    ok &= maneuver_risk(None) == 0.0;

    let cfg = RiskConfig::default();
    let (dt, steps) = (cfg.rollout.dt, cfg.rollout.steps);
    // Offsets keep every pair distance clear of the radius boundary.
    let ped = KinematicState {
        x: 5.02,
        y: -3.03,
        vx: 0.0,
        vy: 1.5,
        ax: 0.0,
        ay: 0.0,
    };
    let ped_path: Vec<Point> = (0..=steps).map(|k| Point::new(5.02, -3.03 + 1.5 * k as f64 * dt)).collect();
    let cases: [([Option<(Point, Point)>; 3], [f64; 3]); 3] = [
        (
            [
                Some((Point::new(0.0, 0.0), Point::new(10.0, 0.0))),
                Some((Point::new(0.0, 1.0), Point::new(4.0, 0.0))),
                Some((Point::new(0.0, -10.0), Point::new(10.0, 0.0))),
            ],
            [0.2, 0.3, 0.5],
        ),
        (
            [
                Some((Point::new(-2.0, 0.0), Point::new(7.0, 0.0))),
                None,
                Some((Point::new(5.0, 6.0), Point::new(0.0, -3.0))),
            ],
            [0.6, 0.1, 0.3],
        ),
        (
            [
                Some((Point::new(0.0, 1.5), Point::new(3.0, 0.0))),
                Some((Point::new(8.0, 2.0), Point::new(-2.0, -0.5))),
                Some((Point::new(0.0, 0.5), Point::new(20.0, 0.0))),
            ],
            [0.05, 0.15, 0.8],
        ),
    ];
    let mut worst = 0.0f64;
    for (paths, probs) in cases {
        let rollouts = paths.map(|p| p.map(|(s, v)| line(s, v, dt, steps)));
        let mut expected = 0.0;
        for i in 0..3 {
            if let Some(r) = &rollouts[i] {
                let (gap, margin) = brute_gap(&r.points, &ped_path, dt, cfg.radius);
                ok &= margin > 1e-6;
                if let Some(g) = gap {
                    expected += probs[i] * (-g).exp();
                }
            }
        }
        let forecast = VehicleForecast {
            t: 0.0,
            state: KinematicState::default(),
            rollouts,
            probs: ManeuverDistribution::from_array(probs),
        };
        let got = assess(&forecast, &ped, &cfg).unwrap().risk;
        worst = worst.max((got - expected).abs());
        ok &= expected > 0.0;
    }
    outcome(
        ok && worst <= 1e-12,
        format!("point values exact; mixture max |Δ| {worst:.1e} over 3 cases"),
    )
}

// ---------------------------------------------------------------- classifier protocol

fn criterion_classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = [[-6.0, 6.0, 5.0, 0.3], [6.0, 6.0, 4.0, -0.5], [0.0, -6.0, 10.0, 0.0]];
    let mut data = LabeledFeatures::default();
    let mut group = 0;
    for (class, n_groups) in [(0usize, 20), (1, 20), (2, 80)] {
        for _ in 0..n_groups {
            let offset: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
            let dir = rng.random_range(0..4) as f64;
            for _ in 0..10 {
                let mut row: Vec<f64> = (0..4)
                    .map(|j| centers[class][j] + offset[j] + rng.random_range(-0.8..0.8))
                    .collect();
                row.push(dir);
                data.push(row, class, group);
            }
            group += 1;
        }
    }
    let out = run_protocol(&data, &ForestConfig::default(), 17).unwrap();
    let summary = out.summary();
    let per_class = &summary[..3];
    let pass = per_class.iter().all(|m| m.f1.0 >= 0.9 && m.f1.1 < 0.1);
    outcome(
        pass,
        per_class
            .iter()
            .map(|m| format!("{} F1 {:.3}±{:.3}", m.label, m.f1.0, m.f1.1))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

// ---------------------------------------------------------------- preprocessing

fn track(id: &str, t0: f64, start: Point, vel: Point, heading_vel: Option<Point>, n: usize) -> Trajectory {
    let pts: Vec<TrackPoint> = (0..n)
        .map(|k| {
            let t = t0 + k as f64 * 0.1;
            let p = start.add(vel.scale(k as f64 * 0.1));
            let v = if k == 0 { heading_vel.unwrap_or(vel) } else { vel };
            TrackPoint::new(t, p.x, p.y, v.x, v.y, 0.0)
        })
        .collect();
    Trajectory::with_class(id, ObjectClass::Pedestrian, pts).unwrap()
}

fn polar(deg: f64, r: f64) -> Point {
    let a = deg.to_radians();
    Point::new(r * a.cos(), r * a.sin())
}

fn merges(b: Trajectory) -> bool {
    let a = track("a", 0.0, Point::new(0.0, 0.0), Point::new(1.0, 0.0), None, 11);
    !merge_pedestrian_trajectories(&[a, b], &MergeCriteria::default()).links.is_empty()
}

fn criterion_preprocessing() -> Outcome {
    // Vehicle labels on a noise-free scene, crosswalks estimated from density.
    let spec = ScenarioSpec {
        seed: 11,
        noise_position: 0.0,
        noise_velocity: 0.0,
        ..ScenarioSpec::default()
    };
    let (raw, truth) = generate_scenario(&spec).unwrap();
    let out = preprocess_dataset(&raw, &PreprocessConfig::default()).unwrap();
    let labeled: Vec<&Trajectory> = out.dataset.of_class(ObjectClass::Vehicle).collect();
    let correct = truth
        .vehicles
        .iter()
        .filter(|v| {
            labeled
                .iter()
                .any(|t| t.id == v.id && t.entering_direction == Some(v.direction) && t.maneuver == Some(v.maneuver))
        })
        .count();

    // Merge thresholds at and just past each boundary. The predecessor ends
    // at (1, 0) at t = 1.0 heading +x.
    let end = Point::new(1.0, 0.0);
    let fwd = Point::new(1.0, 0.0);
    let gap = |g: f64| merges(track("b", 1.0 + g, end.add(fwd.scale(g)), fwd, None, 11));
    let dist = |d: f64| merges(track("b", 1.1, end.add(Point::new(0.0, d)), fwd, None, 11));
    let heading = |deg: f64| merges(track("b", 1.1, end.add(fwd.scale(0.1)), fwd, Some(polar(deg, 1.0)), 11));
    let chord = |deg: f64| merges(track("b", 1.1, end.add(fwd.scale(0.1)), polar(deg, 1.0), Some(polar(60.0, 1.0)), 11));
    let boundaries = [
        ("gap 0.2 s", gap(0.2), gap(0.21)),
        ("distance 1 m", dist(1.0), dist(1.01)),
        ("heading 90°", heading(90.0), heading(90.5)),
        ("trajectory angle 120°", chord(120.0), chord(120.5)),
    ];
    let merge_ok = boundaries.iter().all(|(_, at, past)| *at && !*past);
    let failed: Vec<&str> = boundaries.iter().filter(|(_, at, past)| !(*at && !*past)).map(|b| b.0).collect();
    outcome(
        correct == truth.vehicles.len() && merge_ok,
        format!(
            "{correct}/{} vehicles labeled correctly; merge boundaries {}",
            truth.vehicles.len(),
            if merge_ok { "all honored".to_string() } else { format!("violated: {}", failed.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- SSM

/// First time on a 1 ms grid at which the agents are within `radius`.
fn stepped_ttc(a: &KinematicState, b: &KinematicState, radius: f64, horizon: f64) -> Option<f64> {
    let n = (horizon / 1e-3) as usize;
    (0..=n).map(|i| i as f64 * 1e-3).find(|&t| {
        let dx = (b.x + b.vx * t) - (a.x + a.vx * t);
        let dy = (b.y + b.vy * t) - (a.y + a.vy * t);
        (dx * dx + dy * dy).sqrt() <= radius
    })
}

fn criterion_ssm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let horizon = 40.0;
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    let mut hits = 0;
    for _ in 0..100 {
        // Aim both agents near a common point at a common time, with a miss
        // offset that sometimes exceeds the radius.
        let meet = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let tm = rng.random_range(0.5..15.0);
        let va = polar(rng.random_range(0.0..360.0), rng.random_range(2.0..15.0));
        let vb = polar(rng.random_range(0.0..360.0), rng.random_range(0.5..2.0));
        let miss = polar(rng.random_range(0.0..360.0), rng.random_range(0.0..2.5));
        let pa = meet.sub(va.scale(tm));
        let pb = meet.add(miss).sub(vb.scale(tm));
        let a = KinematicState { x: pa.x, y: pa.y, vx: va.x, vy: va.y, ax: 0.0, ay: 0.0 };
        let b = KinematicState { x: pb.x, y: pb.y, vx: vb.x, vy: vb.y, ax: 0.0, ay: 0.0 };
        let fast = compute_ttc(&a, &b, 1.0).filter(|&t| t <= horizon);
        let slow = stepped_ttc(&a, &b, 1.0, horizon);
        match (fast, slow) {
            (Some(f), Some(s)) => {
                hits += 1;
                worst = worst.max((f - s).abs());
                // The grid value is the first millisecond at or after the contact.
                if !(s >= f - 1e-9 && s - f <= 1e-3 + 1e-9) {
                    mismatches += 1;
                }
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }

    // PET of the engineered pairs on the default (noisy) scene.
    let spec = ScenarioSpec::default();
    let (ds, truth) = generate_scenario(&spec).unwrap();
    let mut pet_worst = 0.0f64;
    let mut missing = 0;
    for c in &truth.conflicts {
        match (ds.get(&c.vehicle_id), ds.get(&c.pedestrian_id)) {
            (Some(v), Some(p)) => match compute_pet(v, p, 1.0) {
                Some(e) => pet_worst = pet_worst.max((e.pet - c.requested_pet).abs()),
                None => missing += 1,
            },
            _ => missing += 1,
        }
    }
    outcome(
        mismatches == 0 && missing == 0 && pet_worst <= 0.2,
        format!(
            "TTC: {hits} contacts + {} misses, max |Δ| {:.2} ms, {mismatches} mismatches; PET: {} engineered pairs, max |Δ| {pet_worst:.3} s, {missing} missing",
            100 - hits,
            worst * 1e3,
            truth.conflicts.len()
        ),
    )
}

// ---------------------------------------------------------------- scene experiments

/// Models trained through the pipeline on one scene; another scene with a
/// different seed serves as the evaluation data.
struct SceneExperiment {
    root: tempfile::TempDir,
    train_time: Duration,
    eval: Dataset,
    cfg: RunConfig,
}

impl SceneExperiment {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn build() -> Self {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        // Only split 0's forest is deployed; the full protocol is exercised separately.
        cfg.forest.splits = 1;
        let d = |n: &str| root.path().join(n);
        let start = Instant::now();
        cfg.set_seed(1);
        run_synth(&cfg, &d("train_synth")).unwrap();
        run_preprocess(&cfg, &d("train_synth"), &d("train_pre")).unwrap();
        run_train(&cfg, &d("train_pre"), &d("models")).unwrap();
        let train_time = start.elapsed();
        cfg.set_seed(2);
        run_synth(&cfg, &d("eval_synth")).unwrap();
        run_preprocess(&cfg, &d("eval_synth"), &d("eval_pre")).unwrap();
        let eval = load_dataset(d("eval_pre").join(DATASET_FILE), &Schema::default()).unwrap();
        SceneExperiment {
            root,
            train_time,
            eval,
            cfg,
        }
    }

    fn study(&self, cases: &[(usize, usize)]) -> (Vec<StudyRow>, Duration) {
        let start = Instant::now();
        let models = load_models(&self.dir("models")).unwrap();
        let vehicles: Vec<&Trajectory> = self.eval.of_class(ObjectClass::Vehicle).collect();
        let rows = prediction_study(
            &vehicles,
            &models.gpr,
            cases,
            &RolloutConfig::default(),
        )
        .unwrap();
        (rows, start.elapsed())
    }
}

fn turning_per_direction(ds: &Dataset) -> usize {
    use pedrisk::traj::Direction;
    Direction::ALL
        .iter()
        .map(|&d| {
            ds.of_class(ObjectClass::Vehicle)
                .filter(|t| t.entering_direction == Some(d) && t.maneuver != Some(Maneuver::Straight))
                .count()
        })
        .min()
        .unwrap_or(0)
}

fn criterion_table3(x: &SceneExperiment) -> Outcome {
    let (rows, study_time) = x.study(&[(10, 30), (15, 30), (20, 30)]);
    let runtime = x.train_time + study_time;
    let turning = turning_per_direction(&x.eval);
    let mut pass = turning >= 20 && runtime < Duration::from_secs(300);
    let mut parts = Vec::new();
    for start in [10, 15, 20] {
        for m in [Maneuver::LeftTurn, Maneuver::RightTurn] {
            match rows.iter().find(|r| r.start_point == start && r.maneuver == m) {
                Some(r) => {
                    let ratio = r.gpr_mean / r.dynamic_mean;
                    pass &= ratio < 0.6;
                    parts.push(format!("{m}@{start} {:.2}/{:.2} m", r.gpr_mean, r.dynamic_mean));
                }
                None => {
                    pass = false;
                    parts.push(format!("{m}@{start} missing"));
                }
            }
        }
    }
    outcome(
        pass,
        format!(
            "GPR/dynamic mean distance {}; ≥{turning} turning vehicles per direction; {:.0} s",
            parts.join(", "),
            runtime.as_secs_f64()
        ),
    )
}

fn criterion_table4(x: &SceneExperiment) -> Outcome {
    let (rows, _) = x.study(&[(10, 10), (10, 15), (10, 20)]);
    let mut pass = true;
    let mut parts = Vec::new();
    for m in Maneuver::ALL {
        let r: Vec<&StudyRow> = [10, 15, 20]
            .iter()
            .filter_map(|&h| rows.iter().find(|r| r.horizon == h && r.maneuver == m))
            .collect();
        if r.len() != 3 {
            pass = false;
            parts.push(format!("{m} missing"));
            continue;
        }
        let dyn_up = r[0].dynamic_mean < r[1].dynamic_mean && r[1].dynamic_mean < r[2].dynamic_mean;
        let gp_inc = r[2].gpr_mean - r[0].gpr_mean;
        let dyn_inc = r[2].dynamic_mean - r[0].dynamic_mean;
        pass &= dyn_up && gp_inc < dyn_inc;
        parts.push(format!(
            "{m}: dynamic {:.2}→{:.2}→{:.2}, GPR {:.2}→{:.2}→{:.2}",
            r[0].dynamic_mean, r[1].dynamic_mean, r[2].dynamic_mean, r[0].gpr_mean, r[1].gpr_mean, r[2].gpr_mean
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_detection(x: &SceneExperiment) -> Outcome {
    let cfg = &x.cfg;
    let models = load_models(&x.dir("models")).unwrap();
    let truth = identify_conflicts_pet(&x.eval, cfg.risk.pet_threshold, cfg.risk.zone_radius);
    let (streams, _, _) = risk_streams(&x.eval, &models, cfg).unwrap();
    let scores = streams
        .iter()
        .map(|s| ((s.vehicle_id.clone(), s.pedestrian_id.clone()), s.max_risk()))
        .collect();
    let r = evaluate_detection(&scores, &truth).unwrap();
    let engineered = truth.iter().all(|e| e.pet <= 3.0);
    let (sens, far, auc) = (
        r.sensitivity.unwrap_or(0.0),
        r.false_alarm_rate.unwrap_or(1.0),
        r.auc.unwrap_or(0.0),
    );
    outcome(
        truth.len() == 16 && engineered && r.negatives >= 50 && sens == 1.0 && far <= 0.25 && auc >= 0.85,
        format!(
            "{} conflicts, {} negatives; sensitivity {sens:.3}, FAR {far:.3}, AUC {auc:.3}",
            truth.len(),
            r.negatives
        ),
    )
}

// ---------------------------------------------------------------- determinism

const SMALL: &str = r#"
seed = 3

[synth]
pedestrians_per_crosswalk = 4
conflicts = 6

[synth.vehicles]
left = 4
right = 4
straight = 5

[gpr]
iterations = 40
max_points = 400
opt_points = 120

[forest]
splits = 3
frame_stride = 2

[forest.grid]
n_trees = [20, 40]
max_depth = [0, 10]
"#;

fn run_all(cfg: &RunConfig, root: &Path) {
    let d = |n: &str| root.join(n);
    run_synth(cfg, &d("synth")).unwrap();
    run_preprocess(cfg, &d("synth"), &d("pre")).unwrap();
    run_train(cfg, &d("pre"), &d("train")).unwrap();
    run_risk(cfg, &d("pre"), &d("train"), &d("risk")).unwrap();
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for stage in ["synth", "pre", "train", "risk"] {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(root.join(stage))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let cfg = RunConfig::from_toml_str(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(&cfg, a.path());
    run_all(&cfg, b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty() && fa.len() >= 15,
        format!("{} output files compared, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

/// `ACCEPTANCE_ONLY=3,6` restricts the run to the listed criteria.
fn selected(n: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim() == n.to_string()),
        Err(_) => true,
    }
}

fn main() {
    let mut results: Vec<Outcome> = Vec::new();
    let experiment = std::sync::OnceLock::new();
    let scene = || experiment.get_or_init(SceneExperiment::build);
    let criteria: [(&str, &dyn Fn() -> Outcome); 9] = [
        ("GPR numerical core", &|| {
            let start = Instant::now();
            let mut o = criterion_gp_core();
            o.pass &= start.elapsed() < Duration::from_secs(10);
            o
        }),
        ("risk formula", &criterion_risk_formula),
        ("GPR beats dynamic model on turns", &|| criterion_table3(scene())),
        ("error growth with horizon", &|| criterion_table4(scene())),
        ("maneuver classifier protocol", &criterion_classifier),
        ("conflict detection", &|| criterion_detection(scene())),
        ("preprocessing", &criterion_preprocessing),
        ("SSM oracles", &criterion_ssm),
        ("pipeline determinism", &criterion_determinism),
    ];
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !selected(i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        println!(
            "{} {} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push(o);
    }
    let passed = results.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
