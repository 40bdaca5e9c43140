//! Distances and brute-force nearest-neighbor matching.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{BinaryDescriptor, DescriptorMode, Descriptors, RealDescriptor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Hamming,
    /// Squared Euclidean distance.
    L2,
}

impl Metric {
    pub fn for_mode(mode: DescriptorMode) -> Self {
        match mode {
            DescriptorMode::Binary => Metric::Hamming,
            DescriptorMode::Real => Metric::L2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Hamming => "hamming",
            Metric::L2 => "l2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub query_index: usize,
    pub train_index: usize,
    pub distance: f64,
}

/// Number of differing bits.
pub fn hamming(a: &BinaryDescriptor, b: &BinaryDescriptor) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} bits", a.len(), b.len())));
    }
    Ok(hamming_bytes(a.bytes(), b.bytes()))
}

#[inline]
fn hamming_bytes(a: &[u8], b: &[u8]) -> u32 {
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut d = 0;
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        let x = u64::from_le_bytes(x.try_into().expect("chunk of 8"));
        let y = u64::from_le_bytes(y.try_into().expect("chunk of 8"));
        d += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        d += (x ^ y).count_ones();
    }
    d
}

/// `Σ (a_k − b_k)²`.
pub fn l2_sq(a: &RealDescriptor, b: &RealDescriptor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} dimensions", a.len(), b.len())));
    }
    Ok(l2_sq_values(&a.values, &b.values))
}

#[inline]
fn l2_sq_values(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Descriptor dimensionality, checking that every entry agrees.
fn common_dims(d: &Descriptors) -> Result<Option<usize>> {
    let lens: Vec<usize> = match d {
        Descriptors::Binary(v) => v.iter().map(BinaryDescriptor::len).collect(),
        Descriptors::Real(v) => v.iter().map(RealDescriptor::len).collect(),
    };
    match lens.first() {
        Some(&n) if lens.iter().any(|&m| m != n) => Err(Error::LengthMismatch("descriptors of mixed length".into())),
        first => Ok(first.copied()),
    }
}

/// Pairwise distances between two descriptor sets under one metric.
#[derive(Clone, Copy)]
pub(crate) enum Pairing<'a> {
    Binary(&'a [BinaryDescriptor], &'a [BinaryDescriptor]),
    Real(&'a [RealDescriptor], &'a [RealDescriptor]),
}

impl<'a> Pairing<'a> {
    pub(crate) fn new(a: &'a Descriptors, b: &'a Descriptors, metric: Metric) -> Result<Self> {
        let p = match (a, b, metric) {
            (Descriptors::Binary(x), Descriptors::Binary(y), Metric::Hamming) => Pairing::Binary(x, y),
            (Descriptors::Real(x), Descriptors::Real(y), Metric::L2) => Pairing::Real(x, y),
            _ => return Err(Error::MetricMismatch),
        };
        if let (Some(n), Some(m)) = (common_dims(a)?, common_dims(b)?) {
            if n != m {
                return Err(Error::LengthMismatch(format!("{n} vs {m} dimensions")));
            }
        }
        Ok(p)
    }

    pub(crate) fn left_len(&self) -> usize {
        match self {
            Pairing::Binary(a, _) => a.len(),
            Pairing::Real(a, _) => a.len(),
        }
    }

    pub(crate) fn right_len(&self) -> usize {
        match self {
            Pairing::Binary(_, b) => b.len(),
            Pairing::Real(_, b) => b.len(),
        }
    }

    #[inline]
    pub(crate) fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            Pairing::Binary(a, b) => hamming_bytes(a[i].bytes(), b[j].bytes()) as f64,
            Pairing::Real(a, b) => l2_sq_values(&a[i].values, &b[j].values),
        }
    }

    /// Distances from left item `i` to every right item.
    pub(crate) fn row(&self, i: usize) -> Vec<f64> {
        (0..self.right_len()).map(|j| self.distance(i, j)).collect()
    }

    fn swapped(self) -> Self {
        match self {
            Pairing::Binary(a, b) => Pairing::Binary(b, a),
            Pairing::Real(a, b) => Pairing::Real(b, a),
        }
    }

    /// Nearest right item for every left item; ties go to the lowest index.
    fn nearest(&self) -> Vec<(usize, f64)> {
        (0..self.left_len())
            .into_par_iter()
            .map(|i| {
                let mut best = (0, self.distance(i, 0));
                for j in 1..self.right_len() {
                    let d = self.distance(i, j);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    }
}

/// Nearest train descriptor for each query. With `cross_check`, only mutual
/// nearest neighbors are kept.
pub fn match_nn(queries: &Descriptors, train: &Descriptors, metric: Metric, cross_check: bool) -> Result<Vec<MatchResult>> {
    let pairing = Pairing::new(queries, train, metric)?;
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let forward = pairing.nearest();
    let backward = if cross_check && !queries.is_empty() { Some(pairing.swapped().nearest()) } else { None };
    Ok(forward
        .into_iter()
        .enumerate()
        .filter(|&(q, (t, _))| backward.as_ref().is_none_or(|b| b[t].0 == q))
        .map(|(q, (t, d))| MatchResult { query_index: q, train_index: t, distance: d })
        .collect())
}

/// One `query_index train_index distance` row per match.
pub fn format_matches(matches: &[MatchResult]) -> String {
    let mut s = String::new();
    for m in matches {
        writeln!(s, "{} {} {}", m.query_index, m.train_index, m.distance).expect("string write");
    }
    s
}

pub fn parse_matches(text: &str) -> Result<Vec<MatchResult>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse { line: n + 1, message: format!("bad match row {line:?}") };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(bad());
        }
        let distance: f64 = toks[2].parse().map_err(|_| bad())?;
        if distance.is_nan() || distance < 0.0 {
            return Err(bad());
        }
        out.push(MatchResult {
            query_index: toks[0].parse().map_err(|_| bad())?,
            train_index: toks[1].parse().map_err(|_| bad())?,
            distance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut ChaCha8Rng, bits: usize) -> BinaryDescriptor {
        BinaryDescriptor::from_bits((0..bits).map(|_| rng.random_bool(0.5)))
    }

    fn bit_loop(a: &BinaryDescriptor, b: &BinaryDescriptor) -> u32 {
        (0..a.len()).filter(|&k| a.bit(k) != b.bit(k)).count() as u32
    }

    #[test]
    fn hamming_examples_and_oracle() {
        let zero = BinaryDescriptor::from_bytes(vec![0x00], 8).unwrap();
        let ones = BinaryDescriptor::from_bytes(vec![0xFF], 8).unwrap();
        assert_eq!(hamming(&zero, &ones).unwrap(), 8);
        assert_eq!(hamming(&ones, &ones).unwrap(), 0);
        assert!(hamming(&zero, &BinaryDescriptor::zeros(16)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for _ in 0..10_000 {
            let (a, b) = (random_bits(&mut rng, 512), random_bits(&mut rng, 512));
            assert_eq!(hamming(&a, &b).unwrap(), bit_loop(&a, &b));
        }
        for bits in [1, 7, 13, 64, 100, 257] {
            let (a, b) = (random_bits(&mut rng, bits), random_bits(&mut rng, bits));
            assert_eq!(hamming(&a, &b).unwrap(), bit_loop(&a, &b));
        }
    }

    #[test]
    fn l2_examples_and_oracle() {
        let a = RealDescriptor { values: vec![2.0] };
        let b = RealDescriptor { values: vec![-2.0] };
        assert_eq!(l2_sq(&a, &b).unwrap(), 16.0);
        assert_eq!(l2_sq(&a, &a).unwrap(), 0.0);
        assert!(l2_sq(&a, &RealDescriptor { values: vec![] }).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for _ in 0..500 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut oracle = 0.0;
            for k in 0..64 {
                oracle += (x[k] - y[k]).powi(2);
            }
            let got = l2_sq(&RealDescriptor { values: x }, &RealDescriptor { values: y }).unwrap();
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    fn oracle_matches(q: &[BinaryDescriptor], t: &[BinaryDescriptor], cross: bool) -> Vec<MatchResult> {
        let nn = |a: &[BinaryDescriptor], b: &[BinaryDescriptor], i: usize| {
            let mut best = usize::MAX;
            let mut best_d = u32::MAX;
            for (j, d) in b.iter().enumerate() {
                let dist = bit_loop(&a[i], d);
                if dist < best_d {
                    best = j;
                    best_d = dist;
                }
            }
            (best, best_d)
        };
        let mut out = Vec::new();
        for i in 0..q.len() {
            let (j, d) = nn(q, t, i);
            if !cross || nn(t, q, j).0 == i {
                out.push(MatchResult { query_index: i, train_index: j, distance: d as f64 });
            }
        }
        out
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        // Short descriptors force many distance ties.
        let q: Vec<_> = (0..200).map(|_| random_bits(&mut rng, 12)).collect();
        let t: Vec<_> = (0..200).map(|_| random_bits(&mut rng, 12)).collect();
        let (dq, dt) = (Descriptors::Binary(q.clone()), Descriptors::Binary(t.clone()));
        for cross in [false, true] {
            assert_eq!(match_nn(&dq, &dt, Metric::Hamming, cross).unwrap(), oracle_matches(&q, &t, cross));
        }
    }

    #[test]
    fn trivial_matching_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let d = Descriptors::Binary((0..30).map(|_| random_bits(&mut rng, 256)).collect());
        for m in match_nn(&d, &d, Metric::Hamming, true).unwrap() {
            assert_eq!((m.query_index, m.train_index, m.distance), (m.query_index, m.query_index, 0.0));
        }
        let single = Descriptors::Binary(vec![random_bits(&mut rng, 256)]);
        assert!(match_nn(&d, &single, Metric::Hamming, false).unwrap().iter().all(|m| m.train_index == 0));
        assert_eq!(match_nn(&d, &Descriptors::Binary(vec![]), Metric::Hamming, false), Err(Error::EmptyTrainSet));
        assert_eq!(match_nn(&d, &d, Metric::L2, false), Err(Error::MetricMismatch));
        let real = Descriptors::Real(vec![RealDescriptor { values: vec![0.0; 256] }]);
        assert_eq!(match_nn(&d, &real, Metric::Hamming, false), Err(Error::MetricMismatch));
        let short = Descriptors::Binary(vec![random_bits(&mut rng, 8)]);
        assert!(matches!(match_nn(&d, &short, Metric::Hamming, false), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn real_matching_picks_nearest() {
        let t = Descriptors::Real(vec![
            RealDescriptor { values: vec![0.0, 0.0] },
            RealDescriptor { values: vec![1.0, 1.0] },
            RealDescriptor { values: vec![1.0, 1.0] },
        ]);
        let q = Descriptors::Real(vec![RealDescriptor { values: vec![0.9, 1.2] }]);
        let m = match_nn(&q, &t, Metric::L2, false).unwrap();
        assert_eq!(m[0].train_index, 1);
        assert!((m[0].distance - 0.05).abs() < 1e-12);
    }

    #[test]
    fn match_file_round_trip() {
        let ms = vec![
            MatchResult { query_index: 0, train_index: 5, distance: 3.0 },
            MatchResult { query_index: 2, train_index: 1, distance: 0.25 },
        ];
        let text = format_matches(&ms);
        assert_eq!(text, "0 5 3\n2 1 0.25\n");
        assert_eq!(parse_matches(&text).unwrap(), ms);
        assert!(parse_matches("0 1\n").is_err());
        assert!(parse_matches("0 1 -2\n").is_err());
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(seed in any::<u64>(), bits in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_bits(&mut rng, bits), random_bits(&mut rng, bits), random_bits(&mut rng, bits));
            let d = |x: &BinaryDescriptor, y: &BinaryDescriptor| hamming(x, y).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &b) == 0, a == b);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert!(d(&a, &b) as usize <= bits);
        }

        #[test]
        fn train_permutation_relabels_matches(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<_> = (0..25).map(|_| random_bits(&mut rng, 10)).collect();
            let t: Vec<_> = (0..40).map(|_| random_bits(&mut rng, 10)).collect();
            let mut perm: Vec<usize> = (0..t.len()).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<_> = perm.iter().map(|&i| t[i].clone()).collect();
            let base = match_nn(&Descriptors::Binary(q.clone()), &Descriptors::Binary(t.clone()), Metric::Hamming, false).unwrap();
            let other = match_nn(&Descriptors::Binary(q.clone()), &Descriptors::Binary(permuted), Metric::Hamming, false).unwrap();
            prop_assert_eq!(base.len(), other.len());
            for (m, o) in base.iter().zip(&other) {
                prop_assert_eq!(m.distance, o.distance);
                let tied: Vec<usize> = (0..t.len()).filter(|&j| bit_loop(&q[m.query_index], &t[j]) as f64 == m.distance).collect();
                // Relabeled back, the permuted winner is one of the tied
                // nearest neighbors; the base run picks the lowest of them.
                prop_assert!(tied.contains(&perm[o.train_index]));
                prop_assert_eq!(m.train_index, tied[0]);
            }
        }
    }
}
