//! Depth-limited regression trees fit by exact greedy splitting on residuals.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree stored as an arena; node 0 is the root. Split
/// semantics: `x[feature] < threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
    max_depth: usize,
}

impl RegressionTree {
    /// Exact greedy fit. Each split maximizes the squared-loss gain
    /// ½[G_L²/(n_L+λ) + G_R²/(n_R+λ) − G²/(n+λ)] over all features and all
    /// midpoints between consecutive distinct feature values; leaves carry
    /// G/(n+λ). Splits with non-positive gain are not taken, so degenerate
    /// data yields a single leaf.
    pub fn fit(inputs: &Array2<f64>, residuals: &Array1<f64>, max_depth: usize, l2: f64) -> Self {
        assert_eq!(inputs.nrows(), residuals.len(), "rows must match residuals");
        assert!(inputs.nrows() > 0, "tree fit needs at least one row");
        let mut tree = RegressionTree {
            nodes: Vec::new(),
            max_depth,
        };
        let indices: Vec<usize> = (0..inputs.nrows()).collect();
        tree.grow(inputs, residuals, indices, 0, l2);
        tree
    }

    fn grow(
        &mut self,
        inputs: &Array2<f64>,
        residuals: &Array1<f64>,
        indices: Vec<usize>,
        depth: usize,
        l2: f64,
    ) -> usize {
        let g: f64 = indices.iter().map(|&i| residuals[i]).sum();
        let n = indices.len();
        let leaf_value = g / (n as f64 + l2);

        let split = if depth < self.max_depth && n >= 2 {
            best_split(inputs, residuals, &indices, l2)
        } else {
            None
        };

        match split {
            Some((feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| inputs[[i, feature]] < threshold);
                let slot = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { value: leaf_value }); // placeholder
                let left = self.grow(inputs, residuals, left_idx, depth + 1, l2);
                let right = self.grow(inputs, residuals, right_idx, depth + 1, l2);
                self.nodes[slot] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                slot
            }
            None => {
                self.nodes.push(TreeNode::Leaf { value: leaf_value });
                self.nodes.len() - 1
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], node: usize) -> usize {
            match &nodes[node] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// The split the root would take; exposed so the exhaustive-search oracle
    /// in tests can compare against it.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first() {
            Some(TreeNode::Split {
                feature, threshold, ..
            }) => Some((*feature, *threshold)),
            _ => None,
        }
    }
}

/// Squared-loss split gain for a fixed partition.
pub(crate) fn split_gain(g_left: f64, n_left: usize, g_right: f64, n_right: usize, l2: f64) -> f64 {
    let g = g_left + g_right;
    let n = n_left + n_right;
    0.5 * (g_left * g_left / (n_left as f64 + l2) + g_right * g_right / (n_right as f64 + l2)
        - g * g / (n as f64 + l2))
}

fn best_split(
    inputs: &Array2<f64>,
    residuals: &Array1<f64>,
    indices: &[usize],
    l2: f64,
) -> Option<(usize, f64)> {
    let g_total: f64 = indices.iter().map(|&i| residuals[i]).sum();
    let n = indices.len();
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)

    let mut order: Vec<usize> = indices.to_vec();
    for feature in 0..inputs.ncols() {
        order.sort_by(|&a, &b| {
            inputs[[a, feature]]
                .partial_cmp(&inputs[[b, feature]])
                .expect("finite features")
        });
        let mut g_left = 0.0;
        for pos in 0..n - 1 {
            g_left += residuals[order[pos]];
            let lo = inputs[[order[pos], feature]];
            let hi = inputs[[order[pos + 1], feature]];
            if lo == hi {
                continue;
            }
            let threshold = 0.5 * (lo + hi);
            let gain = split_gain(g_left, pos + 1, g_total - g_left, n - pos - 1, l2);
            let better = match best {
                Some((bg, _, _)) => gain > bg,
                None => gain > 0.0,
            };
            if better && gain > 0.0 {
                best = Some((gain, feature, threshold));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_residuals_make_a_single_leaf() {
        let inputs = array![[0.0], [1.0], [2.0]];
        let residuals = array![0.7, 0.7, 0.7];
        let tree = RegressionTree::fit(&inputs, &residuals, 3, 0.0);
        assert_eq!(tree.nodes().len(), 1);
        assert_abs_diff_eq!(tree.predict_row(array![5.0].view()), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn step_target_splits_near_zero() {
        let n = 16;
        let inputs = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let residuals = Array1::from_shape_fn(n, |i| if inputs[[i, 0]] < 0.0 { -1.0 } else { 1.0 });
        let tree = RegressionTree::fit(&inputs, &residuals, 1, 0.0);
        let (feature, threshold) = tree.root_split().expect("gainful split");
        assert_eq!(feature, 0);
        assert!(threshold.abs() < 0.1, "threshold {threshold}");
        assert_abs_diff_eq!(tree.predict_row(array![-0.5].view()), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tree.predict_row(array![0.5].view()), 1.0, epsilon = 1e-12);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn huge_l2_shrinks_leaves_to_zero() {
        let inputs = array![[0.0], [1.0], [2.0], [3.0]];
        let residuals = array![-2.0, -1.0, 1.0, 2.0];
        let tree = RegressionTree::fit(&inputs, &residuals, 2, 1e12);
        for x in [0.0, 1.5, 3.0] {
            assert!(tree.predict_row(array![x].view()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_l2_leaf_is_the_mean_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = Array2::from_shape_fn((30, 2), |_| rng.random::<f64>());
        let residuals = Array1::from_shape_fn(30, |_| rng.random_range(-1.0..1.0));
        let tree = RegressionTree::fit(&inputs, &residuals, 2, 0.0);
        // Group rows by the leaf they fall into; each leaf must equal the
        // group's mean residual.
        let mut groups: std::collections::HashMap<u64, Vec<usize>> = Default::default();
        for i in 0..30 {
            let leaf = tree.predict_row(inputs.row(i));
            groups.entry(leaf.to_bits()).or_default().push(i);
        }
        for (leaf_bits, rows) in groups {
            let mean: f64 =
                rows.iter().map(|&i| residuals[i]).sum::<f64>() / rows.len() as f64;
            assert_abs_diff_eq!(f64::from_bits(leaf_bits), mean, epsilon = 1e-12);
        }
    }

    /// Exhaustive oracle over all (feature, midpoint) candidates.
    fn oracle_best_gain(inputs: &Array2<f64>, residuals: &Array1<f64>, l2: f64) -> f64 {
        let n = inputs.nrows();
        let mut best: f64 = 0.0;
        for feature in 0..inputs.ncols() {
            let mut values: Vec<f64> = (0..n).map(|i| inputs[[i, feature]]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            for w in values.windows(2) {
                let threshold = 0.5 * (w[0] + w[1]);
                let mut gl = 0.0;
                let mut nl = 0usize;
                let mut gr = 0.0;
                let mut nr = 0usize;
                for i in 0..n {
                    if inputs[[i, feature]] < threshold {
                        gl += residuals[i];
                        nl += 1;
                    } else {
                        gr += residuals[i];
                        nr += 1;
                    }
                }
                best = best.max(split_gain(gl, nl, gr, nr, l2));
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..25 {
            let n = rng.random_range(5..=50);
            let d = rng.random_range(1..=4);
            let l2 = [0.0, 0.3][trial % 2];
            let inputs = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let residuals = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let tree = RegressionTree::fit(&inputs, &residuals, 1, l2);
            let oracle = oracle_best_gain(&inputs, &residuals, l2);
            match tree.root_split() {
                Some((feature, threshold)) => {
                    let mut gl = 0.0;
                    let mut nl = 0usize;
                    for i in 0..n {
                        if inputs[[i, feature]] < threshold {
                            gl += residuals[i];
                            nl += 1;
                        }
                    }
                    let g: f64 = residuals.sum();
                    let chosen = split_gain(gl, nl, g - gl, n - nl, l2);
                    assert!(
                        (chosen - oracle).abs() < 1e-9,
                        "trial {trial}: chosen gain {chosen} vs oracle {oracle}"
                    );
                }
                None => assert!(oracle <= 1e-12, "trial {trial}: oracle found gain {oracle}"),
            }
        }
    }

    #[test]
    fn depth_zero_is_a_single_leaf() {
        let inputs = array![[0.0], [1.0]];
        let residuals = array![1.0, 3.0];
        let tree = RegressionTree::fit(&inputs, &residuals, 0, 0.0);
        assert_eq!(tree.nodes().len(), 1);
        assert_abs_diff_eq!(tree.predict_row(array![9.0].view()), 2.0, epsilon = 1e-15);
    }
}
