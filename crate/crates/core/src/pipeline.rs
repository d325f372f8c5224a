//! The four stages behind the command line. Each reads its inputs from files,
//! writes its outputs into a directory and returns a summary. Outputs depend
//! only on the config and the inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gpr::{train_cluster_models, ClusterModels, RolloutConfig};
use crate::maneuver::{dataset_features, run_protocol, ForestModel, MetricSummary};
use crate::preprocess::{cluster_key, preprocess_dataset, PreprocessReport};
use crate::risk::{assess, forecast_vehicle, prediction_study, study_csv, KinematicState, RiskProfile, StudyRow};
use crate::ssm::{co_present_pairs, evaluate_detection, identify_conflicts_pet, ConflictEvent, FirstAgent};
use crate::synth::{generate_scenario, GroundTruth};
use crate::traj::{load_dataset, save_dataset, Dataset, Maneuver, ObjectClass, Trajectory};

pub const DATASET_FILE: &str = "dataset.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const PREPROCESS_REPORT_FILE: &str = "preprocess_report.json";
pub const DENSITY_FILE: &str = "density.csv";
pub const GPR_MODELS_FILE: &str = "gpr_models.json";
pub const FOREST_FILE: &str = "forest.json";
pub const MANEUVER_METRICS_FILE: &str = "maneuver_metrics.csv";
pub const START_POINT_STUDY_FILE: &str = "prediction_start_points.csv";
pub const HORIZON_STUDY_FILE: &str = "prediction_horizons.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const RISK_SERIES_FILE: &str = "risk_series.csv";
pub const CONFLICTS_FILE: &str = "conflicts.csv";
pub const DETECTION_FILE: &str = "detection.json";
pub const ROC_FILE: &str = "roc.csv";
pub const RISK_REPORT_FILE: &str = "risk_report.json";

/// A directory stands for the dataset file inside it.
pub fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    s.push('\n');
    write_file(path, s)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<GroundTruth> {
    let (ds, truth) = generate_scenario(&cfg.synth)?;
    prepare_dir(out)?;
    save_dataset(out.join(DATASET_FILE), &ds)?;
    write_json(&out.join(GROUND_TRUTH_FILE), &truth)?;
    Ok(truth)
}

pub fn run_preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<PreprocessReport> {
    let raw = load_dataset(dataset_path(input), &cfg.schema)?;
    let res = preprocess_dataset(&raw, &cfg.preprocess)?;
    prepare_dir(out)?;
    save_dataset(out.join(DATASET_FILE), &res.dataset)?;
    write_json(&out.join(PREPROCESS_REPORT_FILE), &res.report)?;
    if let Some(grid) = &res.density {
        write_file(&out.join(DENSITY_FILE), grid.to_csv())?;
    }
    Ok(res.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub split: usize,
    pub n_trees: usize,
    /// `None` is unlimited.
    pub max_depth: Option<usize>,
    pub val_macro_f1: f64,
    pub test_macro_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub vehicles: usize,
    pub samples: usize,
    pub splits: Vec<SplitSummary>,
    pub maneuver_metrics: Vec<MetricSummary>,
    /// (split, class) cells with an undefined metric, reported as 0.
    pub undefined_metric_cells: usize,
    /// Vehicles the trajectory models were fitted on: all but split 0's test set.
    pub gpr_training_vehicles: usize,
    pub held_out_vehicles: Vec<String>,
    pub clusters_trained: Vec<String>,
    pub clusters_absent: Vec<String>,
    pub start_point_study: Vec<StudyRow>,
    pub horizon_study: Vec<StudyRow>,
}

pub fn run_train(cfg: &RunConfig, input: &Path, out: &Path) -> Result<TrainReport> {
    let ds = load_dataset(dataset_path(input), &cfg.schema)?;
    let (features, ids) = dataset_features(&ds, cfg.forest.features, cfg.forest.frame_stride)?;
    if ids.is_empty() {
        return Err(Error::Empty("labeled vehicles"));
    }
    let protocol = run_protocol(&features, &cfg.forest, cfg.seed)?;
    let deployed = &protocol.splits[0];
    let held_out: BTreeSet<&str> = deployed.split.test.iter().map(|&g| ids[g].as_str()).collect();

    let fit_on = Dataset {
        trajectories: ds
            .of_class(ObjectClass::Vehicle)
            .filter(|t| !held_out.contains(t.id.as_str()))
            .cloned()
            .collect(),
        geometry: None,
        frame_interval: ds.frame_interval,
    };
    let models = train_cluster_models(&fit_on, &cfg.gpr)?;

    let test_trajs: Vec<&Trajectory> = ds.trajectories.iter().filter(|t| held_out.contains(t.id.as_str())).collect();
    let rollout = RolloutConfig {
        mode: cfg.risk.rollout.mode,
        ..RolloutConfig::default()
    };
    let start_point_study = prediction_study(&test_trajs, &models, &cfg.train.start_point_cases(), &rollout)?;
    let horizon_study = prediction_study(&test_trajs, &models, &cfg.train.horizon_cases(), &rollout)?;

    prepare_dir(out)?;
    write_file(&out.join(GPR_MODELS_FILE), models.to_json()?)?;
    write_file(&out.join(FOREST_FILE), deployed.model.to_json()?)?;
    write_file(&out.join(MANEUVER_METRICS_FILE), protocol.to_csv())?;
    write_file(&out.join(START_POINT_STUDY_FILE), study_csv(&start_point_study))?;
    write_file(&out.join(HORIZON_STUDY_FILE), study_csv(&horizon_study))?;

    let report = TrainReport {
        vehicles: ids.len(),
        samples: features.len(),
        splits: protocol
            .splits
            .iter()
            .enumerate()
            .map(|(i, s)| SplitSummary {
                split: i,
                n_trees: s.model.n_trees(),
                max_depth: s.model.max_depth,
                val_macro_f1: s.val_macro_f1,
                test_macro_f1: s.test.macro_f1,
            })
            .collect(),
        maneuver_metrics: protocol.summary(),
        undefined_metric_cells: protocol.undefined_cells(),
        gpr_training_vehicles: fit_on.trajectories.len(),
        held_out_vehicles: held_out.iter().map(|s| s.to_string()).collect(),
        clusters_trained: models.present().map(|p| cluster_key(p.direction, p.maneuver)).collect(),
        clusters_absent: models.absent().into_iter().map(|(d, m)| cluster_key(d, m)).collect(),
        start_point_study,
        horizon_study,
    };
    write_json(&out.join(TRAIN_REPORT_FILE), &report)?;
    Ok(report)
}

/// Trained models as written by [`run_train`].
pub struct TrainedModels {
    pub gpr: ClusterModels,
    pub forest: ForestModel,
}

pub fn load_models(dir: &Path) -> Result<TrainedModels> {
    Ok(TrainedModels {
        gpr: ClusterModels::from_json(&read_file(&dir.join(GPR_MODELS_FILE))?)?,
        forest: ForestModel::from_json(&read_file(&dir.join(FOREST_FILE))?)?,
    })
}

/// One evaluated frame of a vehicle-pedestrian pair.
#[derive(Debug, Clone)]
pub struct RiskSample {
    pub vehicle_speed: f64,
    pub profile: RiskProfile,
}

/// All evaluated frames of a co-present pair, in time order.
#[derive(Debug, Clone)]
pub struct PairStream {
    pub vehicle_id: String,
    pub pedestrian_id: String,
    pub samples: Vec<RiskSample>,
}

impl PairStream {
    pub fn max_risk(&self) -> f64 {
        self.samples.iter().map(|s| s.profile.risk).fold(0.0, f64::max)
    }

    pub fn first_alarm(&self) -> Option<f64> {
        self.samples.iter().find(|s| s.profile.risk > 0.0).map(|s| s.profile.t)
    }
}

struct VehicleStreams {
    streams: Vec<PairStream>,
    skipped: bool,
    absent_frames: usize,
}

fn vehicle_streams(
    ds: &Dataset,
    v: usize,
    peds: &[usize],
    models: &TrainedModels,
    cfg: &RunConfig,
) -> Result<VehicleStreams> {
    let veh = &ds.trajectories[v];
    let empty = |skipped| VehicleStreams {
        streams: peds
            .iter()
            .map(|&p| PairStream {
                vehicle_id: veh.id.clone(),
                pedestrian_id: ds.trajectories[p].id.clone(),
                samples: Vec::new(),
            })
            .collect(),
        skipped,
        absent_frames: 0,
    };
    let Some(dir) = veh.entering_direction else {
        return Ok(empty(true));
    };
    if Maneuver::ALL.iter().all(|&m| models.gpr.get(dir, m).is_none()) {
        return Ok(empty(true));
    }
    let risk_cfg = cfg.risk.risk_config();
    let mut forecasts = vec![None; veh.points.len()];
    let mut out = empty(false);
    for (stream, &p) in out.streams.iter_mut().zip(peds) {
        let ped = &ds.trajectories[p];
        for (i, vp) in veh.points.iter().enumerate() {
            if !vp.valid {
                continue;
            }
            let Some(j) = ped.index_at(vp.t) else {
                continue;
            };
            if !ped.points[j].valid {
                continue;
            }
            if forecasts[i].is_none() {
                forecasts[i] = Some(forecast_vehicle(vp, dir, &models.gpr, Some(&models.forest), &risk_cfg)?);
            }
            let profile = assess(
                forecasts[i].as_ref().unwrap(),
                &KinematicState::from_point(&ped.points[j]),
                &risk_cfg,
            )?;
            if profile.assessments.iter().any(|a| a.model_absent) {
                out.absent_frames += 1;
            }
            stream.samples.push(RiskSample {
                vehicle_speed: vp.speed(),
                profile,
            });
        }
    }
    Ok(out)
}

/// Risk streams for every co-present vehicle-pedestrian pair, grouped by
/// vehicle in dataset order. Also returns the number of vehicles skipped for
/// lacking a label or any trajectory model, and the number of frames where
/// some maneuver had no model.
pub fn risk_streams(ds: &Dataset, models: &TrainedModels, cfg: &RunConfig) -> Result<(Vec<PairStream>, usize, usize)> {
    let mut by_vehicle: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, p) in co_present_pairs(ds) {
        by_vehicle.entry(v).or_default().push(p);
    }
    let per_vehicle: Vec<Result<VehicleStreams>> = by_vehicle
        .into_par_iter()
        .map(|(v, peds)| vehicle_streams(ds, v, &peds, models, cfg))
        .collect();
    let mut streams = Vec::new();
    let (mut skipped, mut absent) = (0, 0);
    for r in per_vehicle {
        let r = r?;
        skipped += usize::from(r.skipped);
        absent += r.absent_frames;
        streams.extend(r.streams);
    }
    Ok((streams, skipped, absent))
}

fn series_csv(streams: &[PairStream]) -> String {
    let mut s = String::from(
        "t,vehicle_id,pedestrian_id,p_left,p_right,p_straight,risk_left,risk_right,risk_straight,risk,ttc\n",
    );
    for st in streams {
        for sample in &st.samples {
            let p = &sample.profile;
            let [pl, pr, ps] = p.maneuver_probs.as_array();
            let r = |m: Maneuver| p.assessments[m.index()].risk;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.t,
                st.vehicle_id,
                st.pedestrian_id,
                pl,
                pr,
                ps,
                r(Maneuver::LeftTurn),
                r(Maneuver::RightTurn),
                r(Maneuver::Straight),
                p.risk,
                opt(p.ttc_baseline)
            );
        }
    }
    s
}

/// Plot table for one pair; the conflict point is that of the maneuver
/// contributing most to the risk.
fn case_csv(stream: &PairStream) -> String {
    let mut s = String::from("t,risk,ttc,vehicle_speed,conflict_x,conflict_y\n");
    for sample in &stream.samples {
        let p = &sample.profile;
        let top = p
            .assessments
            .iter()
            .filter(|a| a.conflict.is_some())
            .max_by(|a, b| {
                (a.risk * p.maneuver_probs.get(a.maneuver)).total_cmp(&(b.risk * p.maneuver_probs.get(b.maneuver)))
            })
            .and_then(|a| a.conflict);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.t,
            p.risk,
            opt(p.ttc_baseline),
            sample.vehicle_speed,
            opt(top.map(|c| c.point.x)),
            opt(top.map(|c| c.point.y))
        );
    }
    s
}

fn conflicts_csv(truth: &[ConflictEvent], streams: &BTreeMap<(String, String), &PairStream>) -> String {
    let mut s = String::from(
        "vehicle_id,pedestrian_id,pet,first,zone_x,zone_y,window_start,window_end,max_risk,first_alarm_t\n",
    );
    for e in truth {
        let st = streams.get(&(e.vehicle_id.clone(), e.pedestrian_id.clone()));
        let first = match e.first {
            FirstAgent::Vehicle => "vehicle",
            FirstAgent::Pedestrian => "pedestrian",
            FirstAgent::Both => "both",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            e.vehicle_id,
            e.pedestrian_id,
            e.pet,
            first,
            e.zone_center.x,
            e.zone_center.y,
            e.window.0,
            e.window.1,
            st.map_or(0.0, |st| st.max_risk()),
            opt(st.and_then(|st| st.first_alarm()))
        );
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub co_present_pairs: usize,
    pub evaluated_frames: usize,
    /// Vehicles without an entering direction or any trajectory model; their
    /// pairs score 0.
    pub vehicles_skipped: usize,
    /// Evaluated frames in which at least one maneuver had no model (risk 0).
    pub frames_with_absent_model: usize,
    pub ground_truth_conflicts: usize,
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub sensitivity: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub auc: Option<f64>,
    pub case_studies: Vec<String>,
}

pub fn run_risk(cfg: &RunConfig, input: &Path, models_dir: &Path, out: &Path) -> Result<RiskReport> {
    let ds = load_dataset(dataset_path(input), &cfg.schema)?;
    let models = load_models(models_dir)?;
    let truth = identify_conflicts_pet(&ds, cfg.risk.pet_threshold, cfg.risk.zone_radius);
    let (streams, skipped, absent) = risk_streams(&ds, &models, cfg)?;

    let by_pair: BTreeMap<(String, String), &PairStream> = streams
        .iter()
        .map(|s| ((s.vehicle_id.clone(), s.pedestrian_id.clone()), s))
        .collect();
    let scores: BTreeMap<(String, String), f64> = by_pair.iter().map(|(k, s)| (k.clone(), s.max_risk())).collect();
    let detection = evaluate_detection(&scores, &truth)?;

    prepare_dir(out)?;
    write_file(&out.join(RISK_SERIES_FILE), series_csv(&streams))?;
    write_file(&out.join(CONFLICTS_FILE), conflicts_csv(&truth, &by_pair))?;
    write_file(&out.join(ROC_FILE), detection.roc_csv())?;
    write_json(&out.join(DETECTION_FILE), &detection)?;
    let mut case_studies = Vec::new();
    for e in truth.iter().take(cfg.risk.case_studies) {
        let name = format!("case_{}_{}.csv", e.vehicle_id, e.pedestrian_id);
        write_file(&out.join(&name), case_csv(by_pair[&(e.vehicle_id.clone(), e.pedestrian_id.clone())]))?;
        case_studies.push(name);
    }

    let report = RiskReport {
        co_present_pairs: streams.len(),
        evaluated_frames: streams.iter().map(|s| s.samples.len()).sum(),
        vehicles_skipped: skipped,
        frames_with_absent_model: absent,
        ground_truth_conflicts: truth.len(),
        positives: detection.positives,
        negatives: detection.negatives,
        true_positives: detection.true_positives,
        false_positives: detection.false_positives,
        sensitivity: detection.sensitivity,
        false_alarm_rate: detection.false_alarm_rate,
        auc: detection.auc,
        case_studies,
    };
    write_json(&out.join(RISK_REPORT_FILE), &report)?;
    Ok(report)
}
