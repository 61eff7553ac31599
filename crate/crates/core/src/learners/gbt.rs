//! Second-order gradient-boosted regression trees with exact greedy splits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::glm::{logistic, softplus};
use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Poisson,
    Logistic,
    Squared,
}

impl Loss {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Loss::Poisson => eta.exp(),
            Loss::Logistic => logistic(eta),
            Loss::Squared => eta,
        }
    }

    /// Per-observation loss on the link scale, up to constants.
    pub fn value(self, y: f64, eta: f64) -> f64 {
        match self {
            Loss::Poisson => eta.exp() - y * eta,
            Loss::Logistic => y * softplus(-eta) + (1.0 - y) * softplus(eta),
            Loss::Squared => 0.5 * (y - eta) * (y - eta),
        }
    }

    fn grad_hess(self, y: f64, eta: f64) -> (f64, f64) {
        match self {
            Loss::Poisson => {
                let mu = eta.exp();
                (mu - y, mu)
            }
            Loss::Logistic => {
                let p = logistic(eta);
                (p - y, p * (1.0 - p))
            }
            Loss::Squared => (eta - y, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub learning_rate: f64,
    /// Depth of the deepest split; a stump has depth 1.
    pub max_depth: usize,
    /// Minimum number of rows in a leaf.
    pub min_leaf: usize,
    pub nrounds: usize,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub early_stop_rounds: usize,
    /// L2 penalty on leaf values.
    pub reg_lambda: f64,
    /// Cap on the absolute raw leaf value before shrinkage; 0 disables.
    /// Defaults to 0.7 for the poisson loss when unset.
    pub max_delta_step: Option<f64>,
    /// Fixed base score on the link scale; defaults to the link of the
    /// weighted mean response.
    pub base_score: Option<f64>,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
            nrounds: 200,
            early_stop_rounds: 0,
            reg_lambda: 1.0,
            max_delta_step: None,
            base_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
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

/// Regression tree; node 0 is the root. Rows with `x < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtFit {
    pub loss: Loss,
    pub names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Number of leading trees used for prediction.
    pub best_iteration: usize,
    /// Mean training loss after 0, 1, ... trees.
    pub train_loss: Vec<f64>,
    /// Mean validation loss after 0, 1, ... trees, when a holdout was given.
    pub valid_loss: Vec<f64>,
}

impl GbtFit {
    /// Link-scale predictions without offset.
    pub fn predict_link(&self, x: &DesignMatrix) -> Vec<f64> {
        let trees = &self.trees[..self.best_iteration];
        (0..x.nrows)
            .map(|i| {
                let row = x.row(i);
                self.base_score + trees.iter().map(|t| t.predict(row)).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_response(&self, x: &DesignMatrix) -> Vec<f64> {
        self.predict_link(x)
            .into_iter()
            .map(|e| self.loss.inverse_link(e))
            .collect()
    }
}

/// Training or validation rows.
pub struct GbtData<'a> {
    pub x: &'a DesignMatrix,
    pub y: &'a [f64],
    pub offset: Option<&'a [f64]>,
    pub weights: Option<&'a [f64]>,
}

impl GbtData<'_> {
    fn w(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn off(&self, i: usize) -> f64 {
        self.offset.map_or(0.0, |o| o[i])
    }

    fn mean_loss(&self, loss: Loss, eta: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &e) in eta.iter().enumerate().take(self.x.nrows) {
            let w = self.w(i);
            if w > 0.0 {
                num += w * loss.value(self.y[i], e);
                den += w;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    fn validate(&self, loss: Loss) -> Result<(), LearnerError> {
        let n = self.x.nrows;
        if self.y.len() != n
            || self.offset.is_some_and(|o| o.len() != n)
            || self.weights.is_some_and(|w| w.len() != n)
        {
            return Err(LearnerError::LengthMismatch);
        }
        let ok = |y: f64| match loss {
            Loss::Poisson => y.is_finite() && y >= 0.0,
            Loss::Logistic => (0.0..=1.0).contains(&y),
            Loss::Squared => y.is_finite(),
        };
        if let Some(i) = self.y.iter().position(|&y| !ok(y)) {
            return Err(LearnerError::BadResponse(format!(
                "response {} at row {} is invalid for loss {:?}",
                self.y[i],
                i + 1,
                loss
            )));
        }
        if self.weights.is_some_and(|w| w.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
            return Err(LearnerError::BadResponse("weights must be finite and non-negative".into()));
        }
        if self.offset.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(LearnerError::BadResponse("offsets must be finite".into()));
        }
        if self.x.data.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::BadResponse("design matrix has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_weight(g: f64, h: f64, lambda: f64, max_delta: f64) -> f64 {
    let v = -g / (h + lambda);
    if max_delta > 0.0 {
        v.clamp(-max_delta, max_delta)
    } else {
        v
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Grows one tree level by level on gradients `g` and hessians `h`.
fn grow_tree(
    x: &DesignMatrix,
    sorted: &[Vec<usize>],
    g: &[f64],
    h: &[f64],
    params: &GbtParams,
    max_delta: f64,
) -> Tree {
    let n = x.nrows;
    let p = x.ncols();
    let lambda = params.reg_lambda;
    let min_leaf = params.min_leaf.max(1);
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    // position of each row: node index, or usize::MAX when its node is final
    let mut pos = vec![0usize; n];
    let mut active: Vec<usize> = vec![0];
    let mut stats: Vec<(f64, f64, usize)> = vec![(g.iter().sum(), h.iter().sum(), n)];

    for _depth in 0..params.max_depth {
        if active.is_empty() || p == 0 {
            break;
        }
        let mut slot_of = vec![None; nodes.len()];
        for (s, &a) in active.iter().enumerate() {
            slot_of[a] = Some(s);
        }
        let slots: Vec<Option<usize>> = pos
            .iter()
            .map(|&node| if node == usize::MAX { None } else { slot_of[node] })
            .collect();
        let m = active.len();
        let parent: Vec<(f64, f64, usize)> = active.iter().map(|&a| stats[a]).collect();

        let per_column: Vec<Vec<Option<Candidate>>> = (0..p)
            .into_par_iter()
            .map(|c| {
                let mut best: Vec<Option<Candidate>> = vec![None; m];
                let mut gl = vec![0.0; m];
                let mut hl = vec![0.0; m];
                let mut cl = vec![0usize; m];
                let mut last = vec![f64::NAN; m];
                for &r in &sorted[c] {
                    let Some(s) = slots[r] else { continue };
                    let v = x.get(r, c);
                    if cl[s] > 0 && v > last[s] {
                        let (gt, ht, ct) = parent[s];
                        let (gr, hr, cr) = (gt - gl[s], ht - hl[s], ct - cl[s]);
                        if cl[s] >= min_leaf && cr >= min_leaf && hl[s] > 1e-12 && hr > 1e-12 {
                            let gain = score(gl[s], hl[s], lambda) + score(gr, hr, lambda)
                                - score(gt, ht, lambda);
                            if best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: c,
                                    threshold: 0.5 * (last[s] + v),
                                });
                            }
                        }
                    }
                    gl[s] += g[r];
                    hl[s] += h[r];
                    cl[s] += 1;
                    last[s] = v;
                }
                best
            })
            .collect();

        let mut chosen: Vec<Option<Candidate>> = vec![None; m];
        for col in &per_column {
            for s in 0..m {
                if let Some(c) = col[s] {
                    if chosen[s].is_none_or(|b| c.gain > b.gain) {
                        chosen[s] = Some(c);
                    }
                }
            }
        }

        let mut next_active = Vec::new();
        let mut children = vec![None; m];
        for (s, cand) in chosen.iter().enumerate() {
            let Some(c) = cand.filter(|c| c.gain > 1e-12) else {
                continue;
            };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            stats.push((0.0, 0.0, 0));
            stats.push((0.0, 0.0, 0));
            nodes[active[s]] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            children[s] = Some((c, left, right));
            next_active.push(left);
            next_active.push(right);
        }
        for r in 0..n {
            let Some(s) = slots[r] else { continue };
            match children[s] {
                Some((c, left, right)) => {
                    let child = if x.get(r, c.feature) < c.threshold { left } else { right };
                    pos[r] = child;
                    let st = &mut stats[child];
                    st.0 += g[r];
                    st.1 += h[r];
                    st.2 += 1;
                }
                None => pos[r] = usize::MAX,
            }
        }
        active = next_active;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            let (gs, hs, _) = stats[i];
            *value = params.learning_rate * leaf_weight(gs, hs, lambda, max_delta);
        }
    }
    Tree { nodes }
}

/// Fits boosted trees. With a holdout and `early_stop_rounds > 0`, training
/// stops once the validation loss has not improved for that many rounds and
/// `best_iteration` is the round with the lowest validation loss.
pub fn fit_gbt(
    train: &GbtData,
    loss: Loss,
    params: &GbtParams,
    valid: Option<&GbtData>,
) -> Result<GbtFit, LearnerError> {
    train.validate(loss)?;
    let n = train.x.nrows;
    if n == 0 {
        return Err(LearnerError::EmptyData);
    }
    if !(params.learning_rate >= 0.0 && params.learning_rate <= 1.0) {
        return Err(LearnerError::BadParameter(format!(
            "learning_rate must lie in [0, 1], got {}",
            params.learning_rate
        )));
    }
    if !(params.reg_lambda >= 0.0 && params.reg_lambda.is_finite()) {
        return Err(LearnerError::BadParameter("reg_lambda must be >= 0".into()));
    }
    if params.early_stop_rounds > 0 {
        match valid {
            None => return Err(LearnerError::EmptyHoldout),
            Some(v) if v.x.nrows == 0 => return Err(LearnerError::EmptyHoldout),
            Some(v) => {
                v.validate(loss)?;
                if v.x.ncols() != train.x.ncols() {
                    return Err(LearnerError::SchemaMismatch("holdout has a different number of columns".into()));
                }
            }
        }
    }
    let max_delta = params
        .max_delta_step
        .unwrap_or(if loss == Loss::Poisson { 0.7 } else { 0.0 });

    let wsum: f64 = (0..n).map(|i| train.w(i)).sum();
    if wsum <= 0.0 {
        return Err(LearnerError::EmptyData);
    }
    let base_score = params.base_score.unwrap_or_else(|| {
        let wy: f64 = (0..n).map(|i| train.w(i) * train.y[i]).sum();
        match loss {
            Loss::Poisson => {
                let exposure: f64 = (0..n).map(|i| train.w(i) * train.off(i).exp()).sum();
                (wy / exposure).max(1e-10).ln()
            }
            Loss::Logistic => {
                let m = (wy / wsum).clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
            Loss::Squared => {
                let off: f64 = (0..n).map(|i| train.w(i) * train.off(i)).sum();
                (wy - off) / wsum
            }
        }
    });

    let p = train.x.ncols();
    let sorted: Vec<Vec<usize>> = (0..p)
        .into_par_iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| train.x.get(a, c).total_cmp(&train.x.get(b, c)).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut eta: Vec<f64> = (0..n).map(|i| base_score + train.off(i)).collect();
    let mut veta: Vec<f64> = valid
        .map(|v| (0..v.x.nrows).map(|i| base_score + v.off(i)).collect())
        .unwrap_or_default();
    let mut train_loss = vec![train.mean_loss(loss, &eta)];
    let mut valid_loss = valid.map(|v| vec![v.mean_loss(loss, &veta)]).unwrap_or_default();
    let mut trees = Vec::new();
    let mut best_iteration = 0;
    let mut best_valid = valid_loss.first().copied().unwrap_or(f64::INFINITY);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    for round in 1..=params.nrounds {
        for i in 0..n {
            let w = train.w(i);
            let (gi, hi) = loss.grad_hess(train.y[i], eta[i]);
            g[i] = w * gi;
            h[i] = w * hi;
            if !g[i].is_finite() || !h[i].is_finite() {
                return Err(LearnerError::NonFiniteGradient { round });
            }
        }
        let tree = grow_tree(train.x, &sorted, &g, &h, params, max_delta);
        for (i, e) in eta.iter_mut().enumerate() {
            *e += tree.predict(train.x.row(i));
        }
        train_loss.push(train.mean_loss(loss, &eta));
        if let Some(v) = valid {
            for (i, e) in veta.iter_mut().enumerate() {
                *e += tree.predict(v.x.row(i));
            }
            let vl = v.mean_loss(loss, &veta);
            valid_loss.push(vl);
            if vl < best_valid {
                best_valid = vl;
                best_iteration = round;
            }
        } else {
            best_iteration = round;
        }
        trees.push(tree);
        if valid.is_some()
            && params.early_stop_rounds > 0
            && round - best_iteration >= params.early_stop_rounds
        {
            break;
        }
    }
    if valid.is_some() && params.early_stop_rounds == 0 {
        best_iteration = trees.len();
    }
    Ok(GbtFit {
        loss,
        names: train.x.names.clone(),
        base_score,
        learning_rate: params.learning_rate,
        trees,
        best_iteration,
        train_loss,
        valid_loss,
    })
}
