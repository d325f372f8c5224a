use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::Maneuver;

use super::features::{FeatureMode, LabeledFeatures};
use super::forest::{train_random_forest, ForestGrid, ForestModel, N_CLASSES};
use super::metrics::{evaluate_predictions, ClassificationReport};
use super::smote::smote_oversample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub grid: ForestGrid,
    pub smote_k: usize,
    pub features: FeatureMode,
    /// Use every n-th valid point of a trajectory as a sample.
    pub frame_stride: usize,
    pub splits: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            grid: ForestGrid::default(),
            smote_k: 5,
            features: FeatureMode::Speed,
            frame_stride: 1,
            splits: 10,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

/// Group indices of one train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the groups of each class separately and cuts them by the given
/// fractions, so every class is spread over the three parts. Each part of a
/// class with at least three groups gets at least one group.
pub fn split_groups(group_labels: &[usize], train_fraction: f64, val_fraction: f64, seed: u64) -> GroupSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GroupSplit::default();
    for class in 0..N_CLASSES {
        let mut g: Vec<usize> = (0..group_labels.len()).filter(|&i| group_labels[i] == class).collect();
        g.shuffle(&mut rng);
        let n = g.len();
        let mut n_val = (val_fraction * n as f64).round() as usize;
        let mut n_test = n.saturating_sub((train_fraction * n as f64).round() as usize + n_val);
        if n >= 3 {
            n_val = n_val.max(1);
            n_test = n_test.max(1);
        }
        let n_train = n.saturating_sub(n_val + n_test);
        out.train.extend_from_slice(&g[..n_train]);
        out.val.extend_from_slice(&g[n_train..n_train + n_val.min(n - n_train)]);
        out.test.extend_from_slice(&g[(n_train + n_val).min(n)..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

fn rows_of(data: &LabeledFeatures, groups: &[usize]) -> LabeledFeatures {
    let mut member = vec![false; data.groups.iter().max().map_or(0, |m| m + 1)];
    for &g in groups {
        if g < member.len() {
            member[g] = true;
        }
    }
    let idx: Vec<usize> = (0..data.len()).filter(|&i| member[data.groups[i]]).collect();
    data.subset(&idx)
}

fn group_labels(data: &LabeledFeatures) -> Vec<usize> {
    let n = data.groups.iter().max().map_or(0, |m| m + 1);
    let mut labels = vec![usize::MAX; n];
    for (&g, &l) in data.groups.iter().zip(&data.labels) {
        labels[g] = l;
    }
    labels
}

pub fn split_seed(seed: u64, split: usize) -> u64 {
    seed ^ (split as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub split: GroupSplit,
    pub model: ForestModel,
    pub val_macro_f1: f64,
    pub test: ClassificationReport,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub splits: Vec<SplitOutcome>,
}

/// Repeated train/validation/test evaluation: every split balances its
/// training rows with SMOTE, tunes the grid on validation and scores the
/// chosen forest on test. Rows sharing a group never straddle parts.
pub fn run_protocol(data: &LabeledFeatures, cfg: &ForestConfig, seed: u64) -> Result<ProtocolOutcome> {
    if cfg.splits == 0 {
        return Err(Error::Config("forest protocol needs at least one split".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.val_fraction > 0.0 && cfg.train_fraction + cfg.val_fraction < 1.0) {
        return Err(Error::Config("split fractions must be positive and leave room for test".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty("maneuver samples"));
    }
    let labels = group_labels(data);
    let categorical = [cfg.features.direction_column()];
    let mut splits = Vec::with_capacity(cfg.splits);
    for s in 0..cfg.splits {
        let seed = split_seed(seed, s);
        let split = split_groups(&labels, cfg.train_fraction, cfg.val_fraction, seed);
        let train = rows_of(data, &split.train);
        let val = rows_of(data, &split.val);
        let test = rows_of(data, &split.test);
        if test.is_empty() {
            return Err(Error::Empty("forest test split"));
        }
        let balanced = smote_oversample(&train, N_CLASSES, cfg.smote_k, &categorical, seed);
        let sel = train_random_forest(&balanced, &val, &cfg.grid, seed, cfg.features)?;
        let pred: Vec<usize> = test.rows.iter().map(|r| sel.model.predict(r)).collect();
        splits.push(SplitOutcome {
            split,
            test: evaluate_predictions(&test.labels, &pred, N_CLASSES),
            model: sel.model,
            val_macro_f1: sel.val_macro_f1,
        });
    }
    Ok(ProtocolOutcome { splits })
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub label: String,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
}

impl ProtocolOutcome {
    /// Test metrics averaged over splits: one row per maneuver plus a macro row.
    pub fn summary(&self) -> Vec<MetricSummary> {
        let collect = |f: &dyn Fn(&ClassificationReport) -> f64| -> (f64, f64) {
            mean_std(&self.splits.iter().map(|s| f(&s.test)).collect::<Vec<_>>())
        };
        let mut rows: Vec<MetricSummary> = Maneuver::ALL
            .iter()
            .map(|m| {
                let c = m.index();
                MetricSummary {
                    label: m.as_str().to_string(),
                    precision: collect(&|r| r.per_class[c].precision),
                    recall: collect(&|r| r.per_class[c].recall),
                    f1: collect(&|r| r.per_class[c].f1),
                }
            })
            .collect();
        rows.push(MetricSummary {
            label: "macro".into(),
            precision: collect(&|r| r.macro_precision),
            recall: collect(&|r| r.macro_recall),
            f1: collect(&|r| r.macro_f1),
        });
        rows
    }

    /// Count of (split, class) cells whose test metric hit a zero denominator.
    pub fn undefined_cells(&self) -> usize {
        self.splits
            .iter()
            .flat_map(|s| s.test.per_class.iter())
            .filter(|m| m.precision_undefined || m.recall_undefined || m.f1_undefined)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("maneuver,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n");
        for r in self.summary() {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.label, r.precision.0, r.precision.1, r.recall.0, r.recall.1, r.f1.0, r.f1.1
            ));
        }
        s
    }
}
