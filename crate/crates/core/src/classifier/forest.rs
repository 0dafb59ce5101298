//! Random forest of depth-bounded Gini trees.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::DamageGrade;
use crate::rng::stream_rng;

pub const FORMAT_VERSION: u32 = 1;
const K: usize = DamageGrade::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 5,
        }
    }
}

/// Which data a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingConfig {
    VlsGeneric,
    VlsRegionSpecific,
    VlsGenericPlusRealDim,
    RealDim,
}

impl TrainingConfig {
    pub const ALL: [TrainingConfig; 4] = [
        TrainingConfig::VlsGeneric,
        TrainingConfig::VlsRegionSpecific,
        TrainingConfig::VlsGenericPlusRealDim,
        TrainingConfig::RealDim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingConfig::VlsGeneric => "vls-generic",
            TrainingConfig::VlsRegionSpecific => "vls-region-specific",
            TrainingConfig::VlsGenericPlusRealDim => "vls-generic-plus-real-dim",
            TrainingConfig::RealDim => "real-dim",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainingConfig::VlsGeneric => "VLS generic",
            TrainingConfig::VlsRegionSpecific => "VLS region-specific",
            TrainingConfig::VlsGenericPlusRealDim => "VLS generic + real-world DIM",
            TrainingConfig::RealDim => "Real-world DIM",
        }
    }
}

impl fmt::Display for TrainingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainingConfig::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown training config `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature_idx: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_counts: [u32; K],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u32; K] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature_idx,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature_idx] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { leaf_counts } => return leaf_counts,
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn distribution(&self, x: &[f64]) -> [f64; K] {
        let c = self.leaf(x);
        let total: u32 = c.iter().sum();
        c.map(|v| f64::from(v) / f64::from(total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub training_config: TrainingConfig,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub grade: DamageGrade,
    /// Indexed by [`DamageGrade::index`].
    pub probabilities: [f64; K],
}

/// Arg-max over grades; equal probabilities resolve to the more severe grade.
pub fn argmax_severe(p: &[f64; K]) -> DamageGrade {
    let mut best = 0;
    for k in 1..K {
        if p[k] >= p[best] {
            best = k;
        }
    }
    DamageGrade::ALL[best]
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean of per-tree leaf distributions. Per-class sums are taken in sorted
    /// order so the result does not depend on tree order.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features() {
            return Err(Error::FeatureMismatch(format!(
                "vector has {} values, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        let mut per_class: [Vec<f64>; K] = Default::default();
        for t in &self.trees {
            let d = t.distribution(x);
            for k in 0..K {
                per_class[k].push(d[k]);
            }
        }
        let n = self.trees.len() as f64;
        let mut probabilities = [0.0; K];
        for k in 0..K {
            per_class[k].sort_by(f64::total_cmp);
            probabilities[k] = per_class[k].iter().sum::<f64>() / n;
        }
        Ok(Prediction {
            grade: argmax_severe(&probabilities),
            probabilities,
        })
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<ForestModel> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                supported: FORMAT_VERSION,
            });
        }
        let model: ForestModel =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Parse("model has no trees".into()));
        }
        let d = self.n_features();
        for (ti, t) in self.trees.iter().enumerate() {
            let bad = |msg: &str| Error::Parse(format!("tree {ti}: {msg}"));
            if t.nodes.is_empty() {
                return Err(bad("no nodes"));
            }
            for (ni, n) in t.nodes.iter().enumerate() {
                match n {
                    Node::Split {
                        feature_idx,
                        left,
                        right,
                        ..
                    } => {
                        // children always follow their parent, which also rules out cycles
                        if *feature_idx >= d
                            || *left <= ni
                            || *right <= ni
                            || *left >= t.nodes.len()
                            || *right >= t.nodes.len()
                        {
                            return Err(bad("invalid split node"));
                        }
                    }
                    Node::Leaf { leaf_counts } => {
                        if leaf_counts.iter().sum::<u32>() == 0 {
                            return Err(bad("empty leaf"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ForestModel::from_json(&s)
}

fn gini(c: &[u32; K], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = f64::from(n);
    1.0 - c.iter().map(|&v| (f64::from(v) / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    max_depth: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> [u32; K] {
        let mut c = [0u32; K];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn best_split(&mut self, rows: &[usize], parent: &[u32; K]) -> Option<BestSplit> {
        let d = self.x[0].len();
        let n = rows.len() as u32;
        let parent_impurity = gini(parent, n);
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in sample(&mut self.rng, d, self.mtry.min(d)).into_iter() {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u32; K];
            for i in 0..sorted.len() - 1 {
                left[sorted[i].1] += 1;
                let (a, b) = (sorted[i].0, sorted[i + 1].0);
                if a == b {
                    continue;
                }
                let nl = (i + 1) as u32;
                let nr = n - nl;
                let mut right = *parent;
                for k in 0..K {
                    right[k] -= left[k];
                }
                let score = (f64::from(nl) * gini(&left, nl) + f64::from(nr) * gini(&right, nr))
                    / f64::from(n);
                if score < parent_impurity - 1e-12 && best.as_ref().is_none_or(|b| score < b.score)
                {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(rows);
        self.nodes.push(Node::Leaf {
            leaf_counts: counts,
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || rows.len() < 2 {
            return id;
        }
        let Some(split) = self.best_split(rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature_idx: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Bootstrap-aggregated Gini trees with `⌈√d⌉` candidate features per split.
///
/// Single-class data is accepted and yields a model that always predicts that
/// class with probability one.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[DamageGrade],
    feature_names: &[String],
    params: ForestParams,
    training_config: TrainingConfig,
    seed: u64,
) -> Result<ForestModel> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("no training vectors".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::EmptyInput("n_trees must be positive".into()));
    }
    let d = feature_names.len();
    if let Some(bad) = x.iter().find(|v| v.len() != d) {
        return Err(Error::FeatureMismatch(format!(
            "vector has {} values, expected {d}",
            bad.len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::FeatureMismatch(
            "training vectors must be finite".into(),
        ));
    }
    let labels: Vec<usize> = y.iter().map(|g| g.index()).collect();
    let mtry = ((d as f64).sqrt().ceil() as usize).max(1);
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, &[0x7ee5, t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x,
                y: &labels,
                max_depth: params.max_depth,
                mtry,
                rng,
                nodes: Vec::new(),
            };
            if d == 0 {
                b.nodes.push(Node::Leaf {
                    leaf_counts: b.counts(&rows),
                });
            } else {
                b.grow(&rows, 0);
            }
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        format_version: FORMAT_VERSION,
        params,
        feature_names: feature_names.to_vec(),
        training_config,
        seed,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn single_class() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y = vec![DamageGrade::Extreme; 10];
        let m = train_forest(
            &x,
            &y,
            &names(2),
            ForestParams::default(),
            TrainingConfig::VlsGeneric,
            1,
        )
        .unwrap();
        let p = m.predict(&[100.0, -3.0]).unwrap();
        assert_eq!(p.grade, DamageGrade::Extreme);
        assert_eq!(p.probabilities[DamageGrade::Extreme.index()], 1.0);
    }

    #[test]
    fn ties_resolve_upward() {
        assert_eq!(argmax_severe(&[0.5, 0.5, 0.0, 0.0]), DamageGrade::Heavy);
        assert_eq!(argmax_severe(&[0.25; 4]), DamageGrade::Destruction);
        assert_eq!(argmax_severe(&[0.6, 0.4, 0.0, 0.0]), DamageGrade::NoDamage);
    }

    #[test]
    fn dimension_checked() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![DamageGrade::NoDamage, DamageGrade::Heavy];
        let m = train_forest(
            &x,
            &y,
            &names(1),
            ForestParams::default(),
            TrainingConfig::VlsGeneric,
            1,
        )
        .unwrap();
        assert!(matches!(
            m.predict(&[0.0, 1.0]),
            Err(Error::FeatureMismatch(_))
        ));
    }

    #[test]
    fn training_config_names() {
        for c in TrainingConfig::ALL {
            assert_eq!(c.name().parse::<TrainingConfig>().unwrap(), c);
            assert_eq!(serde_json::to_value(c).unwrap(), c.name());
        }
    }

    #[test]
    fn json_layout() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![DamageGrade::NoDamage, DamageGrade::Heavy];
        let m = train_forest(
            &x,
            &y,
            &names(1),
            ForestParams {
                n_trees: 3,
                max_depth: 5,
            },
            TrainingConfig::RealDim,
            4,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["training_config"], "real-dim");
        assert_eq!(v["params"]["n_trees"], 3);
        let first = &v["trees"][0]["nodes"][0];
        assert!(first.get("leaf_counts").is_some() || first.get("threshold").is_some());
    }
}
