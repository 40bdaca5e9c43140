//! Thresholded average-box weak learners and their selection.
//!
//! A weak learner compares the mean intensity of two equal-size boxes in the
//! canonical patch frame, quantizes the difference to an integer and
//! thresholds it. Training picks, among a random set of pixel pairs, every
//! box size and every distinct threshold, the learner whose pair agreement
//! `h(x)·h(y)` best predicts the pair labels under the current sample weights.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{GrayImage, IntegralImage, SquareBox};

/// Side of the canonical patch frame.
pub const PATCH_SIDE: usize = 32;

/// Box sizes explored during training.
pub const DEFAULT_SCALES: [u32; 7] = [3, 5, 7, 9, 11, 13, 15];

/// Weighted errors at or above this bound are no better than chance.
pub const USABLE_ERROR_BOUND: f64 = 0.5 - 1e-12;

/// Pixel coordinates `(row, col)` in the canonical patch frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub row: i16,
    pub col: i16,
}

impl Point {
    pub fn new(row: i16, col: i16) -> Self {
        Self { row, col }
    }
}

/// Candidate box centers before a size has been chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPair {
    pub p1: Point,
    pub p2: Point,
}

impl PixelPair {
    pub fn with_size(self, size: u32) -> PixelPairFeature {
        PixelPairFeature { p1: self.p1, p2: self.p2, size }
    }
}

/// Two boxes of common odd side `size` centered at `p1` and `p2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPairFeature {
    pub p1: Point,
    pub p2: Point,
    pub size: u32,
}

impl PixelPairFeature {
    pub fn new(p1: Point, p2: Point, size: u32) -> Self {
        Self { p1, p2, size }
    }

    pub fn boxes(&self) -> (SquareBox, SquareBox) {
        (
            SquareBox::new(self.p1.row as i64, self.p1.col as i64, self.size),
            SquareBox::new(self.p2.row as i64, self.p2.col as i64, self.size),
        )
    }

    /// True when both boxes fit inside a `side`×`side` patch.
    pub fn fits(&self, side: usize) -> bool {
        let (a, b) = self.boxes();
        a.fits(side, side) && b.fits(side, side)
    }
}

/// `h(x) = +1` if the quantized feature is `<= threshold`, else `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdedWeakLearner {
    pub feature: PixelPairFeature,
    pub threshold: i32,
}

impl ThresholdedWeakLearner {
    pub fn new(feature: PixelPairFeature, threshold: i32) -> Self {
        Self { feature, threshold }
    }

    #[inline]
    pub fn respond(&self, quantized: i32) -> i8 {
        if quantized <= self.threshold {
            1
        } else {
            -1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Patch pair `(x, y)` referencing a patch collection, with its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub x: usize,
    pub y: usize,
    pub label: Label,
}

impl LabeledPair {
    pub fn new(x: usize, y: usize, label: Label) -> Self {
        Self { x, y, label }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweepResult {
    pub thresholds: Vec<i32>,
    pub accuracies: Vec<f64>,
}

/// Rounds `diff / area` to the nearest integer, halves away from zero.
#[inline]
pub fn quantize_mean_difference(diff: i64, area: i64) -> i32 {
    let magnitude = (2 * diff.abs() + area) / (2 * area);
    (diff.signum() * magnitude) as i32
}

/// Quantized mean difference of `feat` on a patch's integral image.
pub fn feature_response(ii: &IntegralImage, feat: &PixelPairFeature) -> Result<i32> {
    let (a, b) = feat.boxes();
    let diff = ii.box_sum(a)? as i64 - ii.box_sum(b)? as i64;
    let size = feat.size as i64;
    Ok(quantize_mean_difference(diff, size * size))
}

pub fn wl_response(ii: &IntegralImage, wl: &ThresholdedWeakLearner) -> Result<i8> {
    Ok(wl.respond(feature_response(ii, &wl.feature)?))
}

/// `h(x)·h(y)` for a pair; `+1` predicts "same structure".
pub fn pair_agreement(wl: &ThresholdedWeakLearner, pair: &LabeledPair, patches: &[IntegralImage]) -> Result<i8> {
    let get = |i: usize| patches.get(i).ok_or(Error::PatchIndexOutOfRange { index: i, count: patches.len() });
    Ok(wl_response(get(pair.x)?, wl)? * wl_response(get(pair.y)?, wl)?)
}

fn validate_sweep_inputs(pairs: &[LabeledPair], responses: &[i32], weights: &[f64]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if pairs.len() != weights.len() {
        return Err(Error::LengthMismatch(format!("{} pairs but {} weights", pairs.len(), weights.len())));
    }
    if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidWeight { index, weight });
    }
    for p in pairs {
        for i in [p.x, p.y] {
            if i >= responses.len() {
                return Err(Error::PatchIndexOutOfRange { index: i, count: responses.len() });
            }
        }
    }
    Ok(())
}

/// Weighted pair-agreement accuracy at every distinct threshold.
///
/// `responses` holds the already-quantized feature value of every patch.
/// Each pair contributes `-l·w` when the threshold reaches its lower response
/// (the pair starts to straddle it) and `+l·w` at its upper response (both
/// sides agree again). Sweeping the sorted events from the all-agree state
/// gives the accuracy of every band in one pass. Thresholds are integers:
/// `min - 1` for the band below every value, then each distinct value `u`
/// for the band `u <= T < next`.
pub fn threshold_rate(pairs: &[LabeledPair], responses: &[i32], weights: &[f64]) -> Result<ThresholdSweepResult> {
    validate_sweep_inputs(pairs, responses, weights)?;
    let mut events = Vec::with_capacity(2 * pairs.len());
    let mut accuracy = 0.0;
    for (p, &w) in pairs.iter().zip(weights) {
        let (v1, v2) = (responses[p.x], responses[p.y]);
        let d = p.label.sign() * w;
        events.push((v1.min(v2), -d));
        events.push((v1.max(v2), d));
        if p.label.is_positive() {
            accuracy += w;
        }
    }
    // Stable, so deltas sharing a value are summed in a fixed order.
    events.sort_by_key(|e| e.0);

    let mut thresholds = vec![events[0].0 - 1];
    let mut accuracies = vec![accuracy];
    let mut i = 0;
    while i < events.len() {
        let value = events[i].0;
        let mut group = 0.0;
        while i < events.len() && events[i].0 == value {
            group += events[i].1;
            i += 1;
        }
        accuracy += group;
        thresholds.push(value);
        accuracies.push(accuracy);
    }
    Ok(ThresholdSweepResult { thresholds, accuracies })
}

/// Best threshold for integer responses confined to `[-255, 255]`.
///
/// Bucketed equivalent of [`threshold_rate`] used in the training loop:
/// identical bands, identical per-value summation order, and ties resolved
/// toward the lowest threshold. Returns `(threshold, accuracy)`.
pub(crate) fn best_threshold_dense(
    pairs: &[LabeledPair],
    responses: &[i32],
    weights: &[f64],
    positive_mass: f64,
    deltas: &mut [f64; BINS],
    occupied: &mut [bool; BINS],
) -> (i32, f64) {
    deltas.fill(0.0);
    occupied.fill(false);
    let mut lowest = BINS;
    for (p, &w) in pairs.iter().zip(weights) {
        let (v1, v2) = (responses[p.x], responses[p.y]);
        let d = p.label.sign() * w;
        let lo = (v1.min(v2) + RESPONSE_MAX) as usize;
        let hi = (v1.max(v2) + RESPONSE_MAX) as usize;
        deltas[lo] += -d;
        deltas[hi] += d;
        occupied[lo] = true;
        occupied[hi] = true;
        lowest = lowest.min(lo);
    }
    let mut best = (lowest as i32 - RESPONSE_MAX - 1, positive_mass);
    let mut accuracy = positive_mass;
    for bin in lowest..BINS {
        if occupied[bin] {
            accuracy += deltas[bin];
            if accuracy > best.1 {
                best = (bin as i32 - RESPONSE_MAX, accuracy);
            }
        }
    }
    best
}

pub(crate) const RESPONSE_MAX: i32 = 255;
pub(crate) const BINS: usize = 2 * RESPONSE_MAX as usize + 1;

/// Draws `n_pairs` distinct pixel pairs with `p1 != p2`, uniformly over the
/// centers where every size in `scales` stays inside a `patch_side` patch.
pub fn sample_candidates<R: Rng + ?Sized>(
    rng: &mut R,
    n_pairs: usize,
    patch_side: usize,
    scales: &[u32],
) -> Result<Vec<PixelPair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("n_pairs must be at least 1".into()));
    }
    validate_scales(scales)?;
    let largest = *scales.iter().max().expect("nonempty");
    let half = (largest / 2) as usize;
    if patch_side < 2 * half + 2 {
        return Err(Error::PatchTooSmall { side: patch_side, size: largest });
    }
    if patch_side > i16::MAX as usize {
        return Err(Error::InvalidConfig(format!("patch side {patch_side} too large")));
    }
    let span = patch_side - 2 * half;
    let positions = span * span;
    if n_pairs > positions * (positions - 1) {
        return Err(Error::InvalidConfig(format!(
            "{n_pairs} distinct pairs requested but only {} exist",
            positions * (positions - 1)
        )));
    }
    let lo = half as i16;
    let hi = (patch_side - half) as i16;
    let mut seen = HashSet::with_capacity(n_pairs);
    let mut out = Vec::with_capacity(n_pairs);
    while out.len() < n_pairs {
        let p1 = Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
        let p2 = Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
        if p1 == p2 {
            continue;
        }
        let pair = PixelPair { p1, p2 };
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}

pub(crate) fn validate_scales(scales: &[u32]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig("scale set is empty".into()));
    }
    if let Some(&s) = scales.iter().find(|&&s| s % 2 == 0) {
        return Err(Error::InvalidBoxSize(s));
    }
    Ok(())
}

/// Integral tables of a patch collection packed contiguously for fast
/// per-feature response evaluation across every patch.
#[derive(Clone, Debug)]
pub struct PatchTable {
    side: usize,
    stride: usize,
    sums: Vec<u32>,
    count: usize,
}

impl PatchTable {
    pub fn new(patches: &[GrayImage]) -> Result<Self> {
        let side = match patches.first() {
            Some(p) => p.width(),
            None => return Ok(Self { side: 0, stride: 1, sums: Vec::new(), count: 0 }),
        };
        if side > 1024 {
            return Err(Error::InvalidConfig(format!("patch side {side} too large")));
        }
        let stride = side + 1;
        let table = stride * stride;
        let mut sums = vec![0u32; table * patches.len()];
        for (i, p) in patches.iter().enumerate() {
            if p.width() != side || p.height() != side {
                return Err(Error::InvalidDimensions { width: p.width(), height: p.height() });
            }
            let base = i * table;
            for r in 0..side {
                let mut row_sum = 0u32;
                for c in 0..side {
                    row_sum += p.get(r, c) as u32;
                    sums[base + (r + 1) * stride + c + 1] = sums[base + r * stride + c + 1] + row_sum;
                }
            }
        }
        Ok(Self { side, stride, sums, count: patches.len() })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Quantized responses of `feat` on every patch, written into `out`.
    pub fn responses_into(&self, feat: &PixelPairFeature, out: &mut [i32]) {
        debug_assert!(feat.fits(self.side));
        debug_assert_eq!(out.len(), self.count);
        let corners = |p: Point| {
            let half = (feat.size / 2) as usize;
            let (r, c) = (p.row as usize, p.col as usize);
            let top = (r - half) * self.stride;
            let bottom = (r + half + 1) * self.stride;
            let (left, right) = (c - half, c + half + 1);
            [bottom + right, top + left, top + right, bottom + left]
        };
        let a = corners(feat.p1);
        let b = corners(feat.p2);
        let area = (feat.size * feat.size) as i64;
        let table = self.stride * self.stride;
        for (i, slot) in out.iter_mut().enumerate() {
            let t = &self.sums[i * table..(i + 1) * table];
            let sa = t[a[0]] as i64 + t[a[1]] as i64 - t[a[2]] as i64 - t[a[3]] as i64;
            let sb = t[b[0]] as i64 + t[b[1]] as i64 - t[b[2]] as i64 - t[b[3]] as i64;
            *slot = quantize_mean_difference(sa - sb, area);
        }
    }

    pub fn responses(&self, feat: &PixelPairFeature) -> Vec<i32> {
        let mut out = vec![0; self.count];
        self.responses_into(feat, &mut out);
        out
    }
}

pub fn is_usable(error: f64) -> bool {
    error < USABLE_ERROR_BOUND
}

/// Searches every candidate pair × every scale × every threshold for the
/// weak learner with the lowest weighted error `1 - accuracy`.
///
/// Ties go to the lowest candidate index, then the lowest scale, then the
/// lowest threshold; the parallel evaluation reduces in that order so the
/// result never depends on scheduling.
pub fn best_weak_learner(
    candidates: &[PixelPair],
    scales: &[u32],
    pairs: &[LabeledPair],
    patches: &PatchTable,
    weights: &[f64],
) -> Result<(ThresholdedWeakLearner, f64)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    validate_scales(scales)?;
    let mut sorted_scales = scales.to_vec();
    sorted_scales.sort_unstable();
    sorted_scales.dedup();
    for c in candidates {
        for &s in &sorted_scales {
            if !c.with_size(s).fits(patches.side()) {
                return Err(Error::PatchTooSmall { side: patches.side(), size: s });
            }
        }
    }
    // Response range check happens through validate + the box-fit invariant:
    // quantized means of 8-bit data always land in [-255, 255].
    validate_sweep_inputs(pairs, &vec![0; patches.len()], weights)?;
    let positive_mass: f64 = pairs.iter().zip(weights).filter(|(p, _)| p.label.is_positive()).map(|(_, w)| w).sum();

    let per_candidate: Vec<(ThresholdedWeakLearner, f64)> = candidates
        .par_iter()
        .map_init(
            || (vec![0i32; patches.len()], Box::new([0.0f64; BINS]), Box::new([false; BINS])),
            |(responses, deltas, occupied), cand| {
                let mut best: Option<(ThresholdedWeakLearner, f64)> = None;
                for &s in &sorted_scales {
                    let feature = cand.with_size(s);
                    patches.responses_into(&feature, responses);
                    let (t, acc) = best_threshold_dense(pairs, responses, weights, positive_mass, deltas, occupied);
                    if best.as_ref().is_none_or(|b| acc > b.1) {
                        best = Some((ThresholdedWeakLearner::new(feature, t), acc));
                    }
                }
                best.expect("at least one scale")
            },
        )
        .collect();

    let mut best = per_candidate[0];
    for &c in &per_candidate[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    let error = (1.0 - best.1).clamp(0.0, 1.0);
    Ok((best.0, error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::integral_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_mean_diff(img: &GrayImage, f: &PixelPairFeature) -> f64 {
        let h = (f.size / 2) as i64;
        let sum = |p: Point| {
            let mut s = 0.0;
            for r in p.row as i64 - h..=p.row as i64 + h {
                for c in p.col as i64 - h..=p.col as i64 + h {
                    s += img.get(r as usize, c as usize) as f64;
                }
            }
            s
        };
        (sum(f.p1) - sum(f.p2)) / (f.size as f64 * f.size as f64)
    }

    fn random_patch(rng: &mut ChaCha8Rng) -> GrayImage {
        GrayImage::from_fn(PATCH_SIDE, PATCH_SIDE, |_, _| rng.random()).unwrap()
    }

    fn random_feature(rng: &mut ChaCha8Rng) -> PixelPairFeature {
        let size = DEFAULT_SCALES[rng.random_range(0..7)];
        let h = (size / 2) as i16;
        let mut p = || Point::new(rng.random_range(h..32 - h), rng.random_range(h..32 - h));
        PixelPairFeature::new(p(), p(), size)
    }

    /// Accuracy of every integer threshold by direct evaluation.
    fn brute_accuracy(pairs: &[LabeledPair], responses: &[i32], weights: &[f64], t: i32) -> f64 {
        pairs
            .iter()
            .zip(weights)
            .filter(|(p, _)| {
                let hx = if responses[p.x] <= t { 1 } else { -1 };
                let hy = if responses[p.y] <= t { 1 } else { -1 };
                (hx * hy) as f64 == p.label.sign()
            })
            .map(|(_, w)| w)
            .sum()
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize_mean_difference(7, 2), 4);
        assert_eq!(quantize_mean_difference(-7, 2), -4);
        assert_eq!(quantize_mean_difference(5, 2), 3);
        assert_eq!(quantize_mean_difference(4, 9), 0);
        assert_eq!(quantize_mean_difference(5, 9), 1);
        assert_eq!(quantize_mean_difference(-5, 9), -1);
        assert_eq!(quantize_mean_difference(0, 9), 0);
        for diff in -2000i64..2000 {
            assert_eq!(quantize_mean_difference(diff, 25) as f64, (diff as f64 / 25.0).round());
        }
    }

    #[test]
    fn feature_response_constant_patch_is_zero() {
        let ii = integral_image(&GrayImage::filled(32, 32, 200).unwrap());
        let f = PixelPairFeature::new(Point::new(8, 8), Point::new(20, 25), 9);
        assert_eq!(feature_response(&ii, &f).unwrap(), 0);
    }

    #[test]
    fn feature_response_out_of_bounds() {
        let ii = integral_image(&GrayImage::filled(32, 32, 1).unwrap());
        let f = PixelPairFeature::new(Point::new(2, 8), Point::new(20, 25), 9);
        assert!(matches!(feature_response(&ii, &f), Err(Error::BoxOutOfBounds { .. })));
    }

    #[test]
    fn feature_response_matches_rounded_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let img = random_patch(&mut rng);
            let f = random_feature(&mut rng);
            let got = feature_response(&integral_image(&img), &f).unwrap();
            assert_eq!(got as f64, naive_mean_diff(&img, &f).round());
        }
    }

    #[test]
    fn wl_response_boundary() {
        let wl = |t| ThresholdedWeakLearner::new(PixelPairFeature::new(Point::new(5, 5), Point::new(9, 9), 3), t);
        assert_eq!(wl(4).respond(4), 1);
        assert_eq!(wl(4).respond(5), -1);
    }

    #[test]
    fn wl_response_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let img = random_patch(&mut rng);
            let wl = ThresholdedWeakLearner::new(random_feature(&mut rng), rng.random_range(-40..40));
            let expected = if naive_mean_diff(&img, &wl.feature).round() <= wl.threshold as f64 { 1 } else { -1 };
            assert_eq!(wl_response(&integral_image(&img), &wl).unwrap(), expected);
        }
    }

    #[test]
    fn pair_agreement_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let patches: Vec<_> = (0..20).map(|_| integral_image(&random_patch(&mut rng))).collect();
        for _ in 0..50 {
            let wl = ThresholdedWeakLearner::new(random_feature(&mut rng), rng.random_range(-20..20));
            let i = rng.random_range(0..20);
            let same = LabeledPair::new(i, i, Label::Positive);
            assert_eq!(pair_agreement(&wl, &same, &patches).unwrap(), 1);
            let j = rng.random_range(0..20);
            let p = LabeledPair::new(i, j, Label::Negative);
            let expected = wl_response(&patches[i], &wl).unwrap() * wl_response(&patches[j], &wl).unwrap();
            assert_eq!(pair_agreement(&wl, &p, &patches).unwrap(), expected);
            let flipped = ThresholdedWeakLearner::new(
                PixelPairFeature::new(wl.feature.p2, wl.feature.p1, wl.feature.size),
                -wl.threshold - 1,
            );
            // Swapping the boxes negates f; threshold -T-1 then flips h on every patch.
            assert_eq!(pair_agreement(&flipped, &p, &patches).unwrap(), expected);
        }
        let missing = LabeledPair::new(0, 99, Label::Positive);
        let wl = ThresholdedWeakLearner::new(random_feature(&mut rng), 0);
        assert!(matches!(pair_agreement(&wl, &missing, &patches), Err(Error::PatchIndexOutOfRange { .. })));
    }

    #[test]
    fn straddling_pair_disagrees() {
        // Patches whose feature values are exactly T and T+1.
        let f = PixelPairFeature::new(Point::new(1, 1), Point::new(1, 4), 1);
        let make = |v: u8| integral_image(&GrayImage::from_fn(6, 3, |r, c| if (r, c) == (1, 1) { v } else { 0 }).unwrap());
        let patches = vec![make(10), make(11)];
        let wl = ThresholdedWeakLearner::new(f, 10);
        assert_eq!(pair_agreement(&wl, &LabeledPair::new(0, 1, Label::Positive), &patches).unwrap(), -1);
    }

    #[test]
    fn threshold_rate_single_pair() {
        let pairs = [LabeledPair::new(0, 1, Label::Positive)];
        let r = threshold_rate(&pairs, &[3, 7], &[1.0]).unwrap();
        assert_eq!(r.thresholds, vec![2, 3, 7]);
        assert_eq!(r.accuracies, vec![1.0, 0.0, 1.0]);
        let pairs = [LabeledPair::new(0, 1, Label::Negative)];
        let r = threshold_rate(&pairs, &[3, 7], &[1.0]).unwrap();
        assert_eq!(r.accuracies, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn threshold_rate_errors() {
        assert_eq!(threshold_rate(&[], &[], &[]), Err(Error::EmptyPairs));
        let pairs = [LabeledPair::new(0, 1, Label::Positive)];
        assert!(matches!(threshold_rate(&pairs, &[1, 2], &[-0.5]), Err(Error::InvalidWeight { .. })));
        assert!(matches!(threshold_rate(&pairs, &[1, 2], &[0.5, 0.5]), Err(Error::LengthMismatch(_))));
        assert!(matches!(threshold_rate(&pairs, &[1], &[0.5]), Err(Error::PatchIndexOutOfRange { .. })));
    }

    #[test]
    fn threshold_rate_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let n_patches = rng.random_range(2..60);
            let responses: Vec<i32> = (0..n_patches).map(|_| rng.random_range(-20..20)).collect();
            let n = rng.random_range(1..100);
            let pairs: Vec<_> = (0..n)
                .map(|_| {
                    let l = if rng.random_bool(0.4) { Label::Positive } else { Label::Negative };
                    LabeledPair::new(rng.random_range(0..n_patches), rng.random_range(0..n_patches), l)
                })
                .collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let r = threshold_rate(&pairs, &responses, &weights).unwrap();
            assert!(r.thresholds.windows(2).all(|w| w[0] < w[1]));
            let total: f64 = weights.iter().sum();
            let pos: f64 = pairs.iter().zip(&weights).filter(|(p, _)| p.label.is_positive()).map(|(_, w)| w).sum();
            assert!((r.accuracies[0] - pos).abs() <= 1e-12);
            for (&t, &acc) in r.thresholds.iter().zip(&r.accuracies) {
                assert!((acc - brute_accuracy(&pairs, &responses, &weights, t)).abs() <= 1e-9);
                assert!(acc >= -1e-9 && acc <= total + 1e-9);
            }
            // Every integer threshold falls in one of the reported bands.
            for t in -25..25 {
                let band = r.thresholds.iter().rposition(|&x| x <= t).unwrap_or(0);
                let expected = brute_accuracy(&pairs, &responses, &weights, t);
                assert!((r.accuracies[band] - expected).abs() <= 1e-9, "t={t}");
            }
        }
    }

    #[test]
    fn dense_sweep_agrees_with_sorted_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut deltas = [0.0; BINS];
        let mut occupied = [false; BINS];
        for _ in 0..200 {
            let n_patches = rng.random_range(2..50);
            let responses: Vec<i32> = (0..n_patches).map(|_| rng.random_range(-255..=255)).collect();
            let n = rng.random_range(1..80);
            let pairs: Vec<_> = (0..n)
                .map(|_| {
                    let l = if rng.random_bool(0.5) { Label::Positive } else { Label::Negative };
                    LabeledPair::new(rng.random_range(0..n_patches), rng.random_range(0..n_patches), l)
                })
                .collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let pos = pairs.iter().zip(&weights).filter(|(p, _)| p.label.is_positive()).fold(0.0, |a, (_, w)| a + w);
            let sweep = threshold_rate(&pairs, &responses, &weights).unwrap();
            let mut expected = (sweep.thresholds[0], sweep.accuracies[0]);
            for (&t, &a) in sweep.thresholds.iter().zip(&sweep.accuracies) {
                if a > expected.1 {
                    expected = (t, a);
                }
            }
            let got = best_threshold_dense(&pairs, &responses, &weights, pos, &mut deltas, &mut occupied);
            assert_eq!(got.0, expected.0);
            assert!((got.1 - expected.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn sample_candidates_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let c = sample_candidates(&mut rng, 500, 32, &DEFAULT_SCALES).unwrap();
        assert_eq!(c.len(), 500);
        assert_eq!(c.iter().collect::<HashSet<_>>().len(), 500);
        for p in &c {
            assert_ne!(p.p1, p.p2);
            for &s in &DEFAULT_SCALES {
                assert!(p.with_size(s).fits(32));
            }
        }
        let a = sample_candidates(&mut ChaCha8Rng::seed_from_u64(9), 50, 32, &DEFAULT_SCALES).unwrap();
        let b = sample_candidates(&mut ChaCha8Rng::seed_from_u64(9), 50, 32, &DEFAULT_SCALES).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_candidates_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        assert!(matches!(sample_candidates(&mut rng, 5, 15, &DEFAULT_SCALES), Err(Error::PatchTooSmall { .. })));
        assert!(sample_candidates(&mut rng, 0, 32, &DEFAULT_SCALES).is_err());
        assert_eq!(sample_candidates(&mut rng, 5, 32, &[3, 4]), Err(Error::InvalidBoxSize(4)));
    }

    #[test]
    fn sample_candidates_uniform_locations() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let c = sample_candidates(&mut rng, 10_000, 32, &DEFAULT_SCALES).unwrap();
        // Valid centers span rows/cols 7..=24: an 18x18 grid.
        let mut counts = vec![0f64; 18 * 18];
        for p in &c {
            for q in [p.p1, p.p2] {
                counts[(q.row as usize - 7) * 18 + (q.col as usize - 7)] += 1.0;
            }
        }
        let expected = 20_000.0 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi-square p = {p_value}");
    }

    #[test]
    fn patch_table_matches_integral_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let patches: Vec<_> = (0..30).map(|_| random_patch(&mut rng)).collect();
        let table = PatchTable::new(&patches).unwrap();
        for _ in 0..50 {
            let f = random_feature(&mut rng);
            let got = table.responses(&f);
            for (p, &g) in patches.iter().zip(&got) {
                assert_eq!(g, feature_response(&integral_image(p), &f).unwrap());
            }
        }
    }

    fn exhaustive_best(
        candidates: &[PixelPair],
        pairs: &[LabeledPair],
        patches: &[GrayImage],
        weights: &[f64],
    ) -> (ThresholdedWeakLearner, f64) {
        let iis: Vec<_> = patches.iter().map(integral_image).collect();
        let mut best: Option<(ThresholdedWeakLearner, f64)> = None;
        for c in candidates {
            for &s in &DEFAULT_SCALES {
                let f = c.with_size(s);
                let responses: Vec<i32> = iis.iter().map(|ii| feature_response(ii, &f).unwrap()).collect();
                let min = *responses.iter().min().unwrap();
                let mut values: Vec<i32> = responses.clone();
                values.sort();
                values.dedup();
                let mut thresholds = vec![min - 1];
                thresholds.extend(values);
                for t in thresholds {
                    let wl = ThresholdedWeakLearner::new(f, t);
                    let mut err = 0.0;
                    for (p, w) in pairs.iter().zip(weights) {
                        let a = pair_agreement(&wl, p, &iis).unwrap() as f64;
                        if a != p.label.sign() {
                            err += w;
                        }
                    }
                    if best.as_ref().is_none_or(|b| err < b.1 - 1e-12) {
                        best = Some((wl, err));
                    }
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn best_weak_learner_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let patches: Vec<_> = (0..60).map(|_| random_patch(&mut rng)).collect();
        let table = PatchTable::new(&patches).unwrap();
        let candidates = sample_candidates(&mut rng, 20, 32, &DEFAULT_SCALES).unwrap();
        let pairs: Vec<_> = (0..200)
            .map(|_| {
                let l = if rng.random_bool(0.3) { Label::Positive } else { Label::Negative };
                LabeledPair::new(rng.random_range(0..60), rng.random_range(0..60), l)
            })
            .collect();
        let raw: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let (wl, err) = best_weak_learner(&candidates, &DEFAULT_SCALES, &pairs, &table, &weights).unwrap();
        let (expected_wl, expected_err) = exhaustive_best(&candidates, &pairs, &patches, &weights);
        assert!((err - expected_err).abs() < 1e-9);
        assert_eq!(wl, expected_wl);
    }

    #[test]
    fn best_weak_learner_separable_and_degenerate() {
        // Patches are dark on the left or right half; pairs are positive iff the sides match.
        let left = GrayImage::from_fn(32, 32, |_, c| if c < 16 { 0 } else { 200 }).unwrap();
        let right = GrayImage::from_fn(32, 32, |_, c| if c < 16 { 200 } else { 0 }).unwrap();
        let patches = vec![left.clone(), right.clone(), left, right];
        let table = PatchTable::new(&patches).unwrap();
        let pairs = vec![
            LabeledPair::new(0, 2, Label::Positive),
            LabeledPair::new(1, 3, Label::Positive),
            LabeledPair::new(0, 1, Label::Negative),
            LabeledPair::new(2, 3, Label::Negative),
        ];
        let weights = vec![0.25; 4];
        let candidates = vec![
            PixelPair { p1: Point::new(10, 10), p2: Point::new(20, 10) },
            PixelPair { p1: Point::new(16, 8), p2: Point::new(16, 24) },
        ];
        let (wl, err) = best_weak_learner(&candidates, &DEFAULT_SCALES, &pairs, &table, &weights).unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(wl.feature.p1, Point::new(16, 8));

        let flat = vec![GrayImage::filled(32, 32, 90).unwrap(); 4];
        let table = PatchTable::new(&flat).unwrap();
        let weights = vec![0.1, 0.2, 0.3, 0.4];
        let (_, err) = best_weak_learner(&candidates, &DEFAULT_SCALES, &pairs, &table, &weights).unwrap();
        assert!((err - 0.7).abs() < 1e-12);
        assert!(!is_usable(err));
        assert_eq!(best_weak_learner(&[], &DEFAULT_SCALES, &pairs, &table, &weights), Err(Error::EmptyCandidates));
    }
}
