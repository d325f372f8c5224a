use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::Maneuver;

use super::features::{FeatureMode, LabeledFeatures, ManeuverFeatures};
use super::metrics::{evaluate_predictions, ClassificationReport};

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub p_left: f64,
    pub p_right: f64,
    pub p_straight: f64,
}

impl ManeuverDistribution {
    /// Probabilities indexed like [`Maneuver::index`].
    pub fn from_array(p: [f64; 3]) -> Self {
        ManeuverDistribution {
            p_left: p[0],
            p_right: p[1],
            p_straight: p[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_left, self.p_right, self.p_straight]
    }

    pub fn get(&self, m: Maneuver) -> f64 {
        self.as_array()[m.index()]
    }

    /// Most likely maneuver; ties go to the lower index.
    pub fn argmax(&self) -> Maneuver {
        let p = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        Maneuver::from_index(best).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

/// A CART classification tree stored as a flat node arena rooted at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let total: u32 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

struct TreeBuilder<'a> {
    data: &'a LabeledFeatures,
    n_classes: usize,
    max_depth: Option<usize>,
    mtry: usize,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.data.labels[i]] += 1;
        }
        c
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = self.counts(idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts) else {
            return id;
        };
        let x = &self.data.rows;
        // Partition in place: rows going left first.
        let mut mid = 0;
        for j in 0..idx.len() {
            if x[idx[j]][feature] <= threshold {
                idx.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Best Gini split over `mtry` random features; further features are tried
    /// only when none of those admits a split.
    fn best_split(&mut self, idx: &[usize], counts: &[u32]) -> Option<(usize, f64)> {
        let n_features = self.data.rows[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(&mut self.rng);
        let n = idx.len() as f64;
        let parent = n - counts.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() / n;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut vals: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.data.rows[i][f], self.data.labels[i])));
            vals.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0f64; self.n_classes];
            let right_total: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let mut sq_l = 0.0;
            let mut sq_r: f64 = right_total.iter().map(|c| c * c).sum();
            let mut right = right_total;
            for j in 0..vals.len() - 1 {
                let c = vals[j].1;
                sq_l += 2.0 * left[c] + 1.0;
                left[c] += 1.0;
                sq_r -= 2.0 * right[c] - 1.0;
                right[c] -= 1.0;
                if vals[j].0 == vals[j + 1].0 {
                    continue;
                }
                let nl = (j + 1) as f64;
                let nr = n - nl;
                // Weighted child impurity, scaled by n.
                let impurity = (nl - sq_l / nl) + (nr - sq_r / nr);
                if impurity < parent - 1e-12 && best.is_none_or(|b| impurity < b.0) {
                    let (a, b) = (vals[j].0, vals[j + 1].0);
                    let mut t = 0.5 * (a + b);
                    if t >= b {
                        t = a;
                    }
                    best = Some((impurity, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Fits one tree on a bootstrap sample of `data`.
pub fn fit_tree(data: &LabeledFeatures, n_classes: usize, max_depth: Option<usize>, rng: ChaCha8Rng) -> DecisionTree {
    let n_features = data.rows[0].len();
    let mut b = TreeBuilder {
        data,
        n_classes,
        max_depth,
        mtry: ((n_features as f64).sqrt().floor() as usize).max(1),
        nodes: Vec::new(),
        rng,
    };
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).map(|_| b.rng.random_range(0..n)).collect();
    b.build(&mut idx, 0);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
    pub n_features: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub features: FeatureMode,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean of the per-tree leaf class frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.predict_proba(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Class with the highest mean probability; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.predict_proba(x);
        (1..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
    }

    fn prefix(&self, n: usize) -> ForestModel {
        ForestModel {
            trees: self.trees[..n].to_vec(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> ForestModel {
        ForestModel {
            trees: Vec::new(),
            n_classes: self.n_classes,
            n_features: self.n_features,
            max_depth: self.max_depth,
            seed: self.seed,
            features: self.features,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&ForestFile {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            model: self.clone(),
        })
        .map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ForestFile = serde_json::from_str(s).map_err(|e| Error::Model(e.to_string()))?;
        if f.format != FOREST_FORMAT || f.version != FOREST_VERSION {
            return Err(Error::Model(format!("unsupported forest file {} v{}", f.format, f.version)));
        }
        Ok(f.model)
    }
}

const FOREST_FORMAT: &str = "pedrisk-forest";
const FOREST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    model: ForestModel,
}

/// Trees are grown in parallel; tree `i` always draws from random stream `i`
/// of `seed`, so a smaller forest with the same seed is a prefix of a larger one.
pub fn train_forest(
    data: &LabeledFeatures,
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
    features: FeatureMode,
) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::Empty("forest training split"));
    }
    if n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let n_features = data.rows[0].len();
    if data.rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::InvalidInput("ragged feature rows".into()));
    }
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|i| fit_tree(data, N_CLASSES, max_depth, tree_rng(seed, i)))
        .collect();
    Ok(ForestModel {
        trees,
        n_classes: N_CLASSES,
        n_features,
        max_depth,
        seed,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    /// 0 means unlimited depth.
    pub max_depth: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_trees: vec![100, 300],
            max_depth: vec![0, 10, 20],
        }
    }
}

fn depth_option(d: usize) -> Option<usize> {
    (d > 0).then_some(d)
}

/// Size key for tie-breaking: fewer trees first, then shallower.
fn model_size(n_trees: usize, depth: Option<usize>) -> (usize, usize) {
    (n_trees, depth.unwrap_or(usize::MAX))
}

#[derive(Debug, Clone)]
pub struct GridSelection {
    pub model: ForestModel,
    pub val_macro_f1: f64,
    pub val_report: ClassificationReport,
}

/// Grid search on the validation split by macro F1; ties go to the smaller model.
pub fn train_random_forest(
    train: &LabeledFeatures,
    val: &LabeledFeatures,
    grid: &ForestGrid,
    seed: u64,
    features: FeatureMode,
) -> Result<GridSelection> {
    if train.is_empty() {
        return Err(Error::Empty("forest training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("forest validation split"));
    }
    if train.class_counts(N_CLASSES).iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InvalidInput("forest training split holds a single class".into()));
    }
    if grid.n_trees.is_empty() || grid.max_depth.is_empty() || grid.n_trees.contains(&0) {
        return Err(Error::Config("forest grid needs positive tree counts and at least one depth".into()));
    }
    let mut sizes = grid.n_trees.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let largest = *sizes.last().unwrap();
    let mut best: Option<GridSelection> = None;
    for &d in &grid.max_depth {
        let depth = depth_option(d);
        let full = train_forest(train, largest, depth, seed, features)?;
        for &n in &sizes {
            let model = full.prefix(n);
            let pred: Vec<usize> = val.rows.iter().map(|r| model.predict(r)).collect();
            let report = evaluate_predictions(&val.labels, &pred, N_CLASSES);
            let f1 = report.macro_f1;
            let better = match &best {
                None => true,
                Some(b) => {
                    f1 > b.val_macro_f1
                        || (f1 == b.val_macro_f1
                            && model_size(n, depth) < model_size(b.model.n_trees(), b.model.max_depth))
                }
            };
            if better {
                best = Some(GridSelection {
                    model,
                    val_macro_f1: f1,
                    val_report: report,
                });
            }
        }
    }
    Ok(best.unwrap())
}

pub fn predict_maneuver_proba(model: &ForestModel, f: &ManeuverFeatures) -> ManeuverDistribution {
    predict_row_proba(model, &f.to_row())
}

pub fn predict_row_proba(model: &ForestModel, row: &[f64]) -> ManeuverDistribution {
    let p = model.predict_proba(row);
    ManeuverDistribution::from_array([p[0], p[1], p[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::Direction;

    /// Three separable blobs with a 4:1:1 imbalance.
    pub(crate) fn blobs(n: usize, seed: u64) -> LabeledFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let mut d = LabeledFeatures::default();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            let count = if c == 2 { 4 * n } else { n };
            for _ in 0..count {
                let row = vec![
                    cx + rng.random::<f64>() * 3.0,
                    cy + rng.random::<f64>() * 3.0,
                    rng.random::<f64>() * 10.0,
                    rng.random::<f64>() - 0.5,
                    rng.random_range(0..4) as f64,
                ];
                let g = d.len();
                d.push(row, c, g);
            }
        }
        d
    }

    #[test]
    fn unanimous_leaves() {
        let leaf = DecisionTree {
            nodes: vec![Node::Leaf { counts: vec![0, 0, 7] }],
        };
        let model = ForestModel {
            trees: vec![leaf.clone(), leaf],
            n_classes: 3,
            n_features: 5,
            max_depth: None,
            seed: 0,
            features: FeatureMode::Speed,
        };
        let f = ManeuverFeatures {
            x: 0.0,
            y: 0.0,
            speed: 1.0,
            yaw_rate: 0.0,
            direction: Direction::N,
        };
        assert_eq!(predict_maneuver_proba(&model, &f).as_array(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let d = blobs(30, 1);
        let m = train_forest(&d, 20, Some(4), 3, FeatureMode::Speed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let row: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 20.0 - 5.0).collect();
            let p = predict_row_proba(&m, &row).as_array();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cluster_interior_is_argmax() {
        let d = blobs(40, 2);
        let m = train_forest(&d, 30, None, 3, FeatureMode::Speed).unwrap();
        let p = predict_row_proba(&m, &[1.5, 1.5, 5.0, 0.0, 1.0]);
        assert_eq!(p.argmax(), Maneuver::LeftTurn);
    }

    #[test]
    fn grid_search_on_separable_data() {
        let train = blobs(40, 3);
        let val = blobs(10, 4);
        let grid = ForestGrid {
            n_trees: vec![10, 30],
            max_depth: vec![0, 5],
        };
        let sel = train_random_forest(&train, &val, &grid, 7, FeatureMode::Speed).unwrap();
        assert!(sel.val_macro_f1 >= 0.95);
        // Perfect separation is reached by the smallest model, which wins ties.
        assert_eq!(sel.model.n_trees(), 10);
        assert_eq!(sel.model.max_depth, Some(5));
        let again = train_random_forest(&train, &val, &grid, 7, FeatureMode::Speed).unwrap();
        assert_eq!(sel.model, again.model);
    }

    #[test]
    fn single_class_rejected() {
        let mut d = blobs(10, 5);
        d.labels.iter_mut().for_each(|l| *l = 2);
        let r = train_random_forest(&d, &d, &ForestGrid::default(), 0, FeatureMode::Speed);
        assert!(r.is_err());
        assert!(train_random_forest(&LabeledFeatures::default(), &d, &ForestGrid::default(), 0, FeatureMode::Speed).is_err());
    }

    #[test]
    fn prefix_property_and_tree_order() {
        let d = blobs(20, 6);
        let big = train_forest(&d, 12, Some(6), 9, FeatureMode::Speed).unwrap();
        let small = train_forest(&d, 5, Some(6), 9, FeatureMode::Speed).unwrap();
        assert_eq!(&big.trees[..5], &small.trees[..]);
        let mut reversed = big.clone();
        reversed.trees.reverse();
        let q = [4.0, 4.0, 2.0, 0.1, 2.0];
        let a = big.predict_proba(&q);
        let b = reversed.predict_proba(&q);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_limit_respected() {
        let d = blobs(50, 7);
        let m = train_forest(&d, 5, Some(2), 1, FeatureMode::Speed).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn json_roundtrip() {
        let d = blobs(10, 8);
        let m = train_forest(&d, 3, None, 1, FeatureMode::Speed).unwrap();
        let back = ForestModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
