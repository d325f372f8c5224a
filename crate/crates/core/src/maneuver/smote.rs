use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::LabeledFeatures;

/// Upsamples every minority class to the majority count.
///
/// Original rows are kept first and in order; synthetic rows follow, class by
/// class. A synthetic row is `s + u·(nn − s)` on the continuous columns, with
/// `s` a random row of the class and `nn` one of its `k` nearest same-class
/// neighbours. Columns in `categorical` are copied from `s`. A class of one
/// row is duplicated.
pub fn smote_oversample(
    data: &LabeledFeatures,
    n_classes: usize,
    k: usize,
    categorical: &[usize],
    seed: u64,
) -> LabeledFeatures {
    let counts = data.class_counts(n_classes);
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut out = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cols = data.rows.first().map_or(0, Vec::len);
    let continuous: Vec<usize> = (0..n_cols).filter(|c| !categorical.contains(c)).collect();
    for class in 0..n_classes {
        let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.is_empty() || members.len() == target {
            continue;
        }
        let k = k.min(members.len() - 1);
        for _ in members.len()..target {
            let s = members[rng.random_range(0..members.len())];
            let base = &data.rows[s];
            let row = if k == 0 {
                base.clone()
            } else {
                let nn = nearest(data, &members, s, k, &continuous);
                let other = &data.rows[nn[rng.random_range(0..nn.len())]];
                let u: f64 = rng.random();
                let mut row = base.clone();
                for &c in &continuous {
                    row[c] = base[c] + u * (other[c] - base[c]);
                }
                row
            };
            out.push(row, class, data.groups[s]);
        }
    }
    out
}

/// The `k` nearest members to `s` (excluding `s`), ties by index.
fn nearest(data: &LabeledFeatures, members: &[usize], s: usize, k: usize, cols: &[usize]) -> Vec<usize> {
    let base = &data.rows[s];
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&m| m != s)
        .map(|&m| {
            let r = &data.rows[m];
            (cols.iter().map(|&c| (r[c] - base[c]).powi(2)).sum::<f64>(), m)
        })
        .collect();
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    let mut nn: Vec<usize> = d[..k].iter().map(|&(_, m)| m).collect();
    nn.sort_unstable();
    nn
}
