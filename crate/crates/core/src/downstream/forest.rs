//! Bagged CART classification trees with Gini splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// How many candidate features each split examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRule {
    /// `⌈√d⌉`.
    #[default]
    Sqrt,
    All,
    Fixed(usize),
}

impl FeatureRule {
    pub fn count(self, d: usize) -> usize {
        let k = match self {
            FeatureRule::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeatureRule::All => d,
            FeatureRule::Fixed(k) => k,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    pub trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features: FeatureRule,
    /// Draw a bootstrap sample per tree; off trains every tree on all rows.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            features: FeatureRule::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::config("forest.trees", "must be >= 1"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::config("forest.min_samples_split", "must be >= 2"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::config("forest.min_samples_leaf", "must be >= 1"));
        }
        if self.features == FeatureRule::Fixed(0) {
            return Err(Error::config(
                "forest.features",
                "must examine at least one feature",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        positive: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Fraction of positive training rows in the leaf `row` falls into.
    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn vote(&self, row: &[f64]) -> u8 {
        u8::from(self.leaf_value(row) > 0.5)
    }

    /// Thresholds of all split nodes, root first.
    pub fn thresholds(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split {
                    feature, threshold, ..
                } => Some((feature, threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    dim: usize,
}

impl RandomForest {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Share of trees voting for class 1.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim {
            return Err(Error::Dimension {
                op: "forest predict",
                lhs: x.shape(),
                rhs: (self.dim, 1),
            });
        }
        let n = self.trees.len() as f64;
        Ok((0..x.rows())
            .map(|r| {
                let row = x.row(r);
                self.trees.iter().map(|t| f64::from(t.vote(row))).sum::<f64>() / n
            })
            .collect())
    }

    /// Majority vote; a tie goes to class 1.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| u8::from(p >= 0.5))
            .collect())
    }
}

/// Fits `spec.trees` trees, each on its own bootstrap sample. An all-one-class
/// `y` yields a forest that always predicts that class.
pub fn train_forest(x: &Matrix, y: &[u8], spec: &ForestSpec) -> Result<RandomForest> {
    spec.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            op: "train_forest",
            lhs: x.shape(),
            rhs: (y.len(), 1),
        });
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot fit a forest on zero rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::Contract("forest features must be finite".into()));
    }
    let trees = (0..spec.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64);
            let n = x.rows();
            let sample: Vec<usize> = if spec.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, sample, spec, &mut rng)
        })
        .collect();
    Ok(RandomForest { trees, dim: x.cols() })
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn grow(x: &Matrix, y: &[u8], mut sample: Vec<usize>, spec: &ForestSpec, rng: &mut ChaCha8Rng) -> Tree {
    let d = x.cols();
    let mtry = spec.features.count(d);
    let mut nodes = vec![Node::Leaf { positive: 0.0 }];
    let mut features: Vec<usize> = (0..d).collect();
    let mut buf: Vec<(f64, u8)> = Vec::with_capacity(sample.len());
    // (node index, sample range, depth)
    let mut stack = vec![(0usize, 0usize, sample.len(), 0usize)];

    while let Some((node, lo, hi, depth)) = stack.pop() {
        let rows = &mut sample[lo..hi];
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| y[r] == 1).count();
        let positive = pos as f64 / n as f64;
        let splittable = pos > 0
            && pos < n
            && n >= spec.min_samples_split
            && n >= 2 * spec.min_samples_leaf
            && spec.max_depth.is_none_or(|m| depth < m);
        let best = if splittable {
            best_split(
                x,
                y,
                rows,
                &mut features,
                mtry,
                spec.min_samples_leaf,
                &mut buf,
                rng,
            )
        } else {
            None
        };
        let Some(best) = best else {
            nodes[node] = Node::Leaf { positive };
            continue;
        };
        // Partition rows in place: `<= threshold` to the front.
        let mut split = 0;
        for i in 0..n {
            if x.get(rows[i], best.feature) <= best.threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { positive: 0.0 });
        nodes.push(Node::Leaf { positive: 0.0 });
        nodes[node] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        stack.push((right, lo + split, hi, depth + 1));
        stack.push((left, lo, lo + split, depth + 1));
    }
    Tree { nodes }
}

/// Examines features in random order until `mtry` non-constant ones have been
/// scored, keeping the split with the lowest weighted Gini impurity.
#[allow(clippy::too_many_arguments)]
fn best_split(
    x: &Matrix,
    y: &[u8],
    rows: &[usize],
    features: &mut [usize],
    mtry: usize,
    min_leaf: usize,
    buf: &mut Vec<(f64, u8)>,
    rng: &mut ChaCha8Rng,
) -> Option<Best> {
    features.shuffle(rng);
    let n = rows.len();
    let total_pos = rows.iter().filter(|&&r| y[r] == 1).count() as f64;
    let mut best: Option<Best> = None;
    let mut scored = 0;
    for &f in features.iter() {
        if scored == mtry {
            break;
        }
        buf.clear();
        buf.extend(rows.iter().map(|&r| (x.get(r, f), y[r])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if buf[0].0 == buf[n - 1].0 {
            continue;
        }
        scored += 1;
        let mut left_pos = 0.0;
        for i in 0..n - 1 {
            left_pos += f64::from(buf[i].1);
            if buf[i].0 == buf[i + 1].0 {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            if i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let right_pos = total_pos - left_pos;
            // n·Gini = n − (pos² + neg²)/n, so minimizing the weighted impurity
            // maximizes this purity score.
            let score = (left_pos * left_pos + (nl - left_pos) * (nl - left_pos)) / nl
                + (right_pos * right_pos + (nr - right_pos) * (nr - right_pos)) / nr;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Best {
                    feature: f,
                    threshold: 0.5 * (buf[i].0 + buf[i + 1].0),
                    score,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_rule() {
        assert_eq!(FeatureRule::Sqrt.count(103), 11);
        assert_eq!(FeatureRule::Sqrt.count(8), 3);
        assert_eq!(FeatureRule::Sqrt.count(1), 1);
        assert_eq!(FeatureRule::Fixed(50).count(4), 4);
    }

    #[test]
    fn pure_class_gives_constant_predictor() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let f = train_forest(&x, &[1, 1, 1], &ForestSpec::default()).unwrap();
        assert_eq!(f.predict(&x).unwrap(), vec![1, 1, 1]);
        assert_eq!(f.predict(&Matrix::from_rows(&[[-50.0]])).unwrap(), vec![1]);
    }

    #[test]
    fn depth_limit_respected() {
        let x = Matrix::from_vec(64, 1, (0..64).map(f64::from).collect()).unwrap();
        let y: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let spec = ForestSpec {
            trees: 3,
            max_depth: Some(2),
            ..ForestSpec::default()
        };
        let f = train_forest(&x, &y, &spec).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn width_mismatch() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let f = train_forest(&x, &[0, 1], &ForestSpec::default()).unwrap();
        assert!(matches!(
            f.predict(&Matrix::zeros(1, 3)),
            Err(Error::Dimension { .. })
        ));
    }
}
