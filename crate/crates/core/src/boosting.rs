//! AdaBoost over pair-agreement weak learners.
//!
//! Two modes share one loop. `RealAdaBoost` weights learner `k` by
//! `α_k = ½·ln((1−ε_k)/ε_k)` and minimizes `Σ exp(−γ·l·Σ α_k h_k(x)h_k(y))`.
//! `BinaryCommonWeight` fixes every `α_k = 1`, so `γ` is the common step and
//! the stopping rule decides the descriptor length.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::PatchSet;
use crate::error::{Error, Result};
use crate::weaklearners::{
    best_weak_learner, is_usable, sample_candidates, validate_scales, Label, LabeledPair, PatchTable, ThresholdedWeakLearner,
    DEFAULT_SCALES,
};

const EPSILON_CLAMP: (f64, f64) = (1e-10, 0.5 - 1e-10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    RealAdaBoost,
    BinaryCommonWeight,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::RealAdaBoost => "real",
            TrainMode::BinaryCommonWeight => "binary",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_learners: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub scales: Vec<u32>,
    /// Rescale each class to mass 0.5 at start and after every round.
    pub balanced_priors: bool,
    pub seed: u64,
    pub mode: TrainMode,
    /// Draw a fresh candidate set every round instead of once.
    pub resample_candidates: bool,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, gamma: f64, max_learners: usize) -> Self {
        Self {
            max_learners,
            gamma,
            n_candidates: 500,
            scales: DEFAULT_SCALES.to_vec(),
            balanced_priors: false,
            seed: 0,
            mode,
            resample_candidates: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_learners == 0 {
            return Err(Error::InvalidConfig("max_learners must be at least 1".into()));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidConfig("n_candidates must be at least 1".into()));
        }
        validate_scales(&self.scales)
    }
}

/// Per-round training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub learner: ThresholdedWeakLearner,
    pub error: f64,
    pub alpha: f64,
    /// Unweighted exponential loss after this round.
    pub loss: f64,
    /// Geometric mean of the per-class mean losses after this round.
    pub balanced_loss: f64,
    pub weight_sum: f64,
    pub positive_mass: f64,
    pub negative_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxLearners,
    NoUsableWeakLearner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub learners: Vec<ThresholdedWeakLearner>,
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub mode: TrainMode,
    pub patch_side: usize,
    pub positive_ratio: f64,
    pub seed: u64,
    pub rounds: Vec<RoundStats>,
    pub stop_reason: StopReason,
}

impl TrainedEnsemble {
    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    /// Keeps the first `k` learners in order.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.len() {
            return Err(Error::TruncateTooLong { have: self.len(), requested: k });
        }
        let mut out = self.clone();
        out.learners.truncate(k);
        out.alphas.truncate(k);
        out.rounds.truncate(k);
        Ok(out)
    }
}

/// Sum of `w` over positive and negative pairs.
pub fn class_masses(weights: &[f64], labels: impl IntoIterator<Item = Label>) -> (f64, f64) {
    let mut masses = (0.0, 0.0);
    for (w, l) in weights.iter().zip(labels) {
        match l {
            Label::Positive => masses.0 += w,
            Label::Negative => masses.1 += w,
        }
    }
    masses
}

/// Rescales each class to total mass 0.5, preserving within-class proportions.
pub fn balance_class_weights(weights: &[f64], labels: &[Label]) -> Result<Vec<f64>> {
    if weights.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} weights but {} labels", weights.len(), labels.len())));
    }
    let (pos, neg) = class_masses(weights, labels.iter().copied());
    if pos <= 0.0 {
        return Err(Error::EmptyClass("positive"));
    }
    if neg <= 0.0 {
        return Err(Error::EmptyClass("negative"));
    }
    let (sp, sn) = (0.5 / pos, 0.5 / neg);
    Ok(weights.iter().zip(labels).map(|(w, l)| if l.is_positive() { w * sp } else { w * sn }).collect())
}

/// Pair agreements `h(x)·h(y)` of one learner over every pair.
fn agreements(wl: &ThresholdedWeakLearner, pairs: &[LabeledPair], table: &PatchTable) -> Vec<i8> {
    let responses = table.responses(&wl.feature);
    pairs.iter().map(|p| wl.respond(responses[p.x]) * wl.respond(responses[p.y])).collect()
}

fn margins(learners: &[ThresholdedWeakLearner], alphas: &[f64], pairs: &[LabeledPair], table: &PatchTable) -> Vec<f64> {
    let mut g = vec![0.0; pairs.len()];
    for (wl, &alpha) in learners.iter().zip(alphas) {
        for (gi, a) in g.iter_mut().zip(agreements(wl, pairs, table)) {
            *gi += alpha * a as f64;
        }
    }
    g
}

fn loss_terms(margins: &[f64], pairs: &[LabeledPair], gamma: f64) -> (f64, f64, usize, usize) {
    let (mut lp, mut ln, mut np, mut nn) = (0.0, 0.0, 0, 0);
    for (g, p) in margins.iter().zip(pairs) {
        let term = (-gamma * p.label.sign() * g).exp();
        if p.label.is_positive() {
            lp += term;
            np += 1;
        } else {
            ln += term;
            nn += 1;
        }
    }
    (lp, ln, np, nn)
}

fn balanced_from_terms(lp: f64, ln: f64, np: usize, nn: usize) -> f64 {
    if np == 0 || nn == 0 {
        return f64::NAN;
    }
    ((lp / np as f64) * (ln / nn as f64)).sqrt()
}

/// `Σ_i exp(−γ·l_i·Σ_k α_k h_k(x_i)h_k(y_i))`, with `α_k = 1` in binary mode.
pub fn exp_loss(ensemble: &TrainedEnsemble, pairs: &[LabeledPair], patches: &PatchTable) -> f64 {
    let g = margins(&ensemble.learners, &ensemble.alphas, pairs, patches);
    let (lp, ln, _, _) = loss_terms(&g, pairs, ensemble.gamma);
    lp + ln
}

/// Objective descended when class priors are rebalanced every round:
/// `sqrt(mean_pos_loss · mean_neg_loss)`.
pub fn balanced_exp_loss(ensemble: &TrainedEnsemble, pairs: &[LabeledPair], patches: &PatchTable) -> f64 {
    let g = margins(&ensemble.learners, &ensemble.alphas, pairs, patches);
    let (lp, ln, np, nn) = loss_terms(&g, pairs, ensemble.gamma);
    balanced_from_terms(lp, ln, np, nn)
}

fn validate_pairs(pairs: &[LabeledPair], patch_count: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let mut positives = 0usize;
    for p in pairs {
        for i in [p.x, p.y] {
            if i >= patch_count {
                return Err(Error::PatchIndexOutOfRange { index: i, count: patch_count });
            }
        }
        positives += p.label.is_positive() as usize;
    }
    if positives == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    if positives == pairs.len() {
        return Err(Error::EmptyClass("negative"));
    }
    Ok(positives as f64 / pairs.len() as f64)
}

/// Runs boosting in the mode named by `config.mode`.
///
/// Each round takes the best learner over the candidate set. A learner is
/// accepted only if its weighted error is below chance and its step shrinks
/// the loss: `(1−ε)e^{−t} + εe^{t} < 1` with step `t = γ·α`. Training stops
/// at the first rejected round or at `max_learners`.
pub fn train(patches: &PatchSet, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainedEnsemble> {
    config.validate()?;
    let table = PatchTable::new(patches.patches())?;
    train_on_table(&table, pairs, config)
}

pub fn train_on_table(table: &PatchTable, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainedEnsemble> {
    config.validate()?;
    let positive_ratio = validate_pairs(pairs, table.len())?;
    let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let n = pairs.len();

    let mut weights = vec![1.0 / n as f64; n];
    if config.balanced_priors {
        weights = balance_class_weights(&weights, &labels)?;
    }
    let mut margin = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut candidates = sample_candidates(&mut rng, config.n_candidates, table.side(), &config.scales)?;

    let mut ensemble = TrainedEnsemble {
        learners: Vec::new(),
        alphas: Vec::new(),
        gamma: config.gamma,
        mode: config.mode,
        patch_side: table.side(),
        positive_ratio,
        seed: config.seed,
        rounds: Vec::new(),
        stop_reason: StopReason::MaxLearners,
    };

    for round in 0..config.max_learners {
        if round > 0 && config.resample_candidates {
            candidates = sample_candidates(&mut rng, config.n_candidates, table.side(), &config.scales)?;
        }
        let (wl, error) = best_weak_learner(&candidates, &config.scales, pairs, table, &weights)?;
        let alpha = match config.mode {
            TrainMode::RealAdaBoost => {
                let e = error.clamp(EPSILON_CLAMP.0, EPSILON_CLAMP.1);
                0.5 * ((1.0 - e) / e).ln()
            }
            TrainMode::BinaryCommonWeight => 1.0,
        };
        let step = config.gamma * alpha;
        let loss_ratio = (1.0 - error) * (-step).exp() + error * step.exp();
        if !(is_usable(error) && loss_ratio < 1.0) {
            log::info!("round {round}: best error {error:.6} is not usable, stopping");
            if round == 0 {
                return Err(Error::NoUsableWeakLearner);
            }
            ensemble.stop_reason = StopReason::NoUsableWeakLearner;
            break;
        }

        let agree = agreements(&wl, pairs, table);
        for ((w, g), (p, &a)) in weights.iter_mut().zip(margin.iter_mut()).zip(pairs.iter().zip(&agree)) {
            let signed = p.label.sign() * a as f64;
            *w *= (-step * signed).exp();
            *g += alpha * a as f64;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        if config.balanced_priors {
            weights = balance_class_weights(&weights, &labels)?;
        }

        let (lp, ln, np, nn) = loss_terms(&margin, pairs, config.gamma);
        let (positive_mass, negative_mass) = class_masses(&weights, labels.iter().copied());
        let stats = RoundStats {
            round,
            learner: wl,
            error,
            alpha,
            loss: lp + ln,
            balanced_loss: balanced_from_terms(lp, ln, np, nn),
            weight_sum: weights.iter().sum(),
            positive_mass,
            negative_mass,
        };
        let f = wl.feature;
        log::info!(
            "round {round}: p1=({},{}) p2=({},{}) s={} T={} err={error:.6} loss={:.6}",
            f.p1.row,
            f.p1.col,
            f.p2.row,
            f.p2.col,
            f.size,
            wl.threshold,
            stats.loss
        );
        ensemble.learners.push(wl);
        ensemble.alphas.push(alpha);
        ensemble.rounds.push(stats);
    }
    Ok(ensemble)
}

pub fn adaboost_train(patches: &PatchSet, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainedEnsemble> {
    let mut config = config.clone();
    config.mode = TrainMode::RealAdaBoost;
    train(patches, pairs, &config)
}

pub fn beblid_train(patches: &PatchSet, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainedEnsemble> {
    let mut config = config.clone();
    config.mode = TrainMode::BinaryCommonWeight;
    train(patches, pairs, &config)
}

/// Number of positives for a requested ratio of `total` pairs.
pub fn positive_count(positive_ratio: f64, total: usize) -> usize {
    ((positive_ratio * total as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Samples a pair set with the requested fraction of positives.
///
/// Positives are drawn without replacement from every unordered pair of
/// patches sharing a structure id; negatives join two uniformly drawn
/// patches with different ids. The final list is shuffled.
pub fn build_unbalanced_set<R: Rng + ?Sized>(
    source: &PatchSet,
    positive_ratio: f64,
    total: usize,
    rng: &mut R,
) -> Result<Vec<LabeledPair>> {
    if !(0.0..=1.0).contains(&positive_ratio) {
        return Err(Error::InvalidConfig(format!("positive ratio {positive_ratio} outside [0, 1]")));
    }
    let n_pos = positive_count(positive_ratio, total).min(total);
    let n_neg = total - n_pos;

    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in source.ids().iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let mut candidates = Vec::new();
    for members in groups.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                candidates.push((i, j));
            }
        }
    }
    if candidates.len() < n_pos {
        return Err(Error::InsufficientPositives { requested: n_pos, available: candidates.len() });
    }
    if n_neg > 0 && groups.len() < 2 {
        return Err(Error::InvalidConfig("negatives need at least two structure ids".into()));
    }

    let mut pairs = Vec::with_capacity(total);
    for k in index::sample(rng, candidates.len(), n_pos) {
        let (i, j) = candidates[k];
        pairs.push(LabeledPair::new(i, j, Label::Positive));
    }
    let ids = source.ids();
    while pairs.len() < total {
        let i = rng.random_range(0..ids.len());
        let j = rng.random_range(0..ids.len());
        if ids[i] != ids[j] {
            pairs.push(LabeledPair::new(i, j, Label::Negative));
        }
    }
    pairs.shuffle(rng);
    Ok(pairs)
}
