//! Descriptor models and extraction.
//!
//! A model stores its weak learners in the canonical `W`×`W` patch frame.
//! At extraction time every box center is rotated and scaled around the
//! keypoint, and the box side is scaled with it, so the same learners apply
//! to keypoints of any size and orientation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{TrainMode, TrainedEnsemble};
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, IntegralImage, SquareBox};
use crate::weaklearners::{quantize_mean_difference, PatchTable, PixelPairFeature, Point, ThresholdedWeakLearner};

pub const MODEL_MAGIC: &[u8; 4] = b"BEBL";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 2 + 4 + 8;
const RECORD_LEN: usize = 4 * 2 + 2 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DescriptorMode {
    Binary,
    Real,
}

impl DescriptorMode {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorMode::Binary => "binary",
            DescriptorMode::Real => "real",
        }
    }
}

impl From<TrainMode> for DescriptorMode {
    fn from(m: TrainMode) -> Self {
        match m {
            TrainMode::BinaryCommonWeight => DescriptorMode::Binary,
            TrainMode::RealAdaBoost => DescriptorMode::Real,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorModel {
    pub mode: DescriptorMode,
    pub patch_side: u16,
    /// Support-region extent per unit of keypoint size.
    pub scale_multiplier: f64,
    pub learners: Vec<ThresholdedWeakLearner>,
    pub alphas: Vec<f64>,
}

impl DescriptorModel {
    pub fn new(
        mode: DescriptorMode,
        patch_side: u16,
        scale_multiplier: f64,
        learners: Vec<ThresholdedWeakLearner>,
        alphas: Vec<f64>,
    ) -> Result<Self> {
        let m = Self { mode, patch_side, scale_multiplier, learners, alphas };
        m.validate()?;
        Ok(m)
    }

    pub fn from_ensemble(ensemble: &TrainedEnsemble, scale_multiplier: f64) -> Result<Self> {
        let side = u16::try_from(ensemble.patch_side)
            .map_err(|_| Error::InvalidModel(format!("patch side {} too large", ensemble.patch_side)))?;
        Self::new(ensemble.mode.into(), side, scale_multiplier, ensemble.learners.clone(), ensemble.alphas.clone())
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners.len() != self.alphas.len() {
            return Err(Error::InvalidModel(format!("{} learners but {} alphas", self.learners.len(), self.alphas.len())));
        }
        if !(self.scale_multiplier > 0.0 && self.scale_multiplier.is_finite()) {
            return Err(Error::InvalidModel(format!("scale multiplier {}", self.scale_multiplier)));
        }
        for (k, (wl, &a)) in self.learners.iter().zip(&self.alphas).enumerate() {
            if !wl.feature.fits(self.patch_side as usize) {
                return Err(Error::InvalidModel(format!("learner {k} leaves the {0}x{0} frame", self.patch_side)));
            }
            let ok = match self.mode {
                DescriptorMode::Binary => a == 1.0,
                DescriptorMode::Real => a > 0.0 && a.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidModel(format!("learner {k} has weight {a} in {} mode", self.mode.name())));
            }
        }
        Ok(())
    }

    fn require(&self, mode: DescriptorMode) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyModel);
        }
        if self.mode != mode {
            return Err(Error::WrongMode { expected: mode.name(), actual: self.mode.name() });
        }
        Ok(())
    }
}

pub fn truncate_model(model: &DescriptorModel, k: usize) -> Result<DescriptorModel> {
    if k > model.len() {
        return Err(Error::TruncateTooLong { have: model.len(), requested: k });
    }
    let mut out = model.clone();
    out.learners.truncate(k);
    out.alphas.truncate(k);
    Ok(out)
}

/// Detected local structure; `angle` is in degrees, `None` when unoriented.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub angle: Option<f64>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, size: f64, angle: Option<f64>) -> Self {
        Self { x, y, size, angle }
    }

    /// Keypoint whose measurement pattern coincides with a `side`×`side`
    /// patch whose top-left pixel is `(row, col)`.
    pub fn canonical(row: usize, col: usize, side: usize) -> Self {
        let c = (side as f64 - 1.0) / 2.0;
        Self::new(col as f64 + c, row as f64 + c, side as f64, None)
    }
}

/// Box geometry of one learner placed on a keypoint, in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MappedFeature {
    pub p1: (i64, i64),
    pub p2: (i64, i64),
    pub size: u32,
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    let a = angle.rem_euclid(360.0);
    match a {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => a.to_radians().sin_cos(),
    }
}

/// Per-keypoint transform from canonical frame to image coordinates.
#[derive(Clone, Copy, Debug)]
struct Placement {
    sin: f64,
    cos: f64,
    sigma: f64,
    center: f64,
    x: f64,
    y: f64,
}

impl Placement {
    fn new(kp: &Keypoint, model: &DescriptorModel) -> Self {
        let w = model.patch_side as f64;
        let (sin, cos) = sin_cos_deg(kp.angle.unwrap_or(0.0));
        Self { sin, cos, sigma: model.scale_multiplier * kp.size / w, center: (w - 1.0) / 2.0, x: kp.x, y: kp.y }
    }

    #[inline]
    fn point(&self, p: Point) -> (i64, i64) {
        let dx = p.col as f64 - self.center;
        let dy = p.row as f64 - self.center;
        let rx = self.cos * dx - self.sin * dy;
        let ry = self.sin * dx + self.cos * dy;
        ((self.y + self.sigma * ry).round() as i64, (self.x + self.sigma * rx).round() as i64)
    }

    #[inline]
    fn size(&self, s: u32) -> u32 {
        let scaled = ((self.sigma * s as f64).round() as u32).max(1);
        if scaled.is_multiple_of(2) {
            scaled + 1
        } else {
            scaled
        }
    }

    #[inline]
    fn map(&self, feat: &PixelPairFeature) -> MappedFeature {
        MappedFeature { p1: self.point(feat.p1), p2: self.point(feat.p2), size: self.size(feat.size) }
    }
}

/// Places a canonical feature on `kp`: offsets from the patch center are
/// rotated by the keypoint angle, scaled by `scale_multiplier·size/W`, and
/// rounded to the nearest pixel. The box side scales too, forced odd.
pub fn map_feature_to_keypoint(feat: &PixelPairFeature, kp: &Keypoint, model: &DescriptorModel) -> MappedFeature {
    Placement::new(kp, model).map(feat)
}

/// Quantized responses of every learner at `kp`, or `None` when any box
/// leaves the image.
fn keypoint_responses(ii: &IntegralImage, kp: &Keypoint, model: &DescriptorModel) -> Option<Vec<i32>> {
    if !(kp.size > 0.0 && kp.size.is_finite() && kp.x.is_finite() && kp.y.is_finite()) {
        return None;
    }
    let placement = Placement::new(kp, model);
    let (w, h) = (ii.width(), ii.height());
    let mut out = Vec::with_capacity(model.len());
    for wl in &model.learners {
        let m = placement.map(&wl.feature);
        let a = SquareBox::new(m.p1.0, m.p1.1, m.size);
        let b = SquareBox::new(m.p2.0, m.p2.1, m.size);
        if !(a.fits(w, h) && b.fits(w, h)) {
            return None;
        }
        let s = m.size as usize;
        let diff = ii.box_sum_unchecked(a.row as usize, a.col as usize, s) as i64
            - ii.box_sum_unchecked(b.row as usize, b.col as usize, s) as i64;
        out.push(quantize_mean_difference(diff, (s * s) as i64));
    }
    Some(out)
}

/// `K` bits packed most-significant-first: bit `k` lives in byte `k / 8`
/// under mask `0x80 >> (k % 8)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryDescriptor {
    bytes: Vec<u8>,
    bits: usize,
}

impl BinaryDescriptor {
    pub fn zeros(bits: usize) -> Self {
        Self { bytes: vec![0; bits.div_ceil(8)], bits }
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut bytes = Vec::new();
        let mut n = 0;
        for b in bits {
            if n % 8 == 0 {
                bytes.push(0);
            }
            if b {
                *bytes.last_mut().expect("pushed") |= 0x80 >> (n % 8);
            }
            n += 1;
        }
        Self { bytes, bits: n }
    }

    pub fn from_bytes(bytes: Vec<u8>, bits: usize) -> Result<Self> {
        if bytes.len() != bits.div_ceil(8) {
            return Err(Error::LengthMismatch(format!("{bits} bits need {} bytes", bits.div_ceil(8))));
        }
        let mut d = Self { bytes, bits };
        // Padding bits are always zero so byte-wise comparisons stay exact.
        if !bits.is_multiple_of(8) {
            let last = d.bytes.len() - 1;
            d.bytes[last] &= 0xFFu8 << (8 - bits % 8);
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn bit(&self, k: usize) -> bool {
        self.bytes[k / 8] & (0x80 >> (k % 8)) != 0
    }

    pub fn set(&mut self, k: usize, value: bool) {
        let mask = 0x80 >> (k % 8);
        if value {
            self.bytes[k / 8] |= mask;
        } else {
            self.bytes[k / 8] &= !mask;
        }
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(2 * self.bytes.len());
        for b in &self.bytes {
            write!(s, "{b:02x}").expect("string write");
        }
        s
    }

    pub fn from_hex(hex: &str, bits: usize) -> Result<Self> {
        if !hex.len().is_multiple_of(2) || !hex.is_ascii() {
            return Err(Error::LengthMismatch(format!("bad hex string of length {}", hex.len())));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::LengthMismatch(e.to_string()))?;
        Self::from_bytes(bytes, bits)
    }
}

/// Entry `k` is `±sqrt(α_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDescriptor {
    pub values: Vec<f64>,
}

impl RealDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Descriptors {
    Binary(Vec<BinaryDescriptor>),
    Real(Vec<RealDescriptor>),
}

impl Descriptors {
    pub fn len(&self) -> usize {
        match self {
            Descriptors::Binary(d) => d.len(),
            Descriptors::Real(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> DescriptorMode {
        match self {
            Descriptors::Binary(_) => DescriptorMode::Binary,
            Descriptors::Real(_) => DescriptorMode::Real,
        }
    }

    /// Descriptors at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Descriptors> {
        fn pick<T: Clone>(v: &[T], indices: &[usize]) -> Result<Vec<T>> {
            indices.iter().map(|&i| v.get(i).cloned().ok_or(Error::MissingDescriptor(i))).collect()
        }
        Ok(match self {
            Descriptors::Binary(d) => Descriptors::Binary(pick(d, indices)?),
            Descriptors::Real(d) => Descriptors::Real(pick(d, indices)?),
        })
    }
}

fn binary_from_responses(responses: &[i32], model: &DescriptorModel) -> BinaryDescriptor {
    BinaryDescriptor::from_bits(responses.iter().zip(&model.learners).map(|(&v, wl)| v <= wl.threshold))
}

fn real_from_responses(responses: &[i32], model: &DescriptorModel) -> RealDescriptor {
    RealDescriptor {
        values: responses
            .iter()
            .zip(model.learners.iter().zip(&model.alphas))
            .map(|(&v, (wl, a))| a.sqrt() * wl.respond(v) as f64)
            .collect(),
    }
}

fn describe_with<T: Send>(
    ii: &IntegralImage,
    kps: &[Keypoint],
    model: &DescriptorModel,
    build: impl Fn(&[i32], &DescriptorModel) -> T + Sync,
) -> (Vec<T>, Vec<usize>) {
    let results: Vec<Option<T>> =
        kps.par_iter().with_min_len(64).map(|kp| keypoint_responses(ii, kp, model).map(|r| build(&r, model))).collect();
    let mut out = Vec::with_capacity(results.len());
    let mut kept = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        if let Some(d) = r {
            out.push(d);
            kept.push(i);
        }
    }
    (out, kept)
}

/// Binary descriptors of the keypoints whose support lies inside the image,
/// plus the input indices of those keypoints.
pub fn describe_binary(
    ii: &IntegralImage,
    kps: &[Keypoint],
    model: &DescriptorModel,
) -> Result<(Vec<BinaryDescriptor>, Vec<usize>)> {
    model.require(DescriptorMode::Binary)?;
    Ok(describe_with(ii, kps, model, binary_from_responses))
}

pub fn describe_real(ii: &IntegralImage, kps: &[Keypoint], model: &DescriptorModel) -> Result<(Vec<RealDescriptor>, Vec<usize>)> {
    model.require(DescriptorMode::Real)?;
    Ok(describe_with(ii, kps, model, real_from_responses))
}

/// Describes keypoints with whichever descriptor type the model produces.
pub fn describe(ii: &IntegralImage, kps: &[Keypoint], model: &DescriptorModel) -> Result<(Descriptors, Vec<usize>)> {
    Ok(match model.mode {
        DescriptorMode::Binary => {
            let (d, k) = describe_binary(ii, kps, model)?;
            (Descriptors::Binary(d), k)
        }
        DescriptorMode::Real => {
            let (d, k) = describe_real(ii, kps, model)?;
            (Descriptors::Real(d), k)
        }
    })
}

/// Describes canonical patches directly in the model frame, without any
/// keypoint placement.
pub fn describe_patches(patches: &[GrayImage], model: &DescriptorModel) -> Result<Descriptors> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    if let Some(p) = patches.iter().find(|p| p.width() != model.patch_side as usize || p.height() != model.patch_side as usize) {
        return Err(Error::InvalidDimensions { width: p.width(), height: p.height() });
    }
    let table = PatchTable::new(patches)?;
    let per_learner: Vec<Vec<i32>> = model.learners.par_iter().map(|wl| table.responses(&wl.feature)).collect();
    let responses = |i: usize| per_learner.iter().map(|r| r[i]).collect::<Vec<_>>();
    Ok(match model.mode {
        DescriptorMode::Binary => {
            Descriptors::Binary((0..patches.len()).map(|i| binary_from_responses(&responses(i), model)).collect())
        }
        DescriptorMode::Real => {
            Descriptors::Real((0..patches.len()).map(|i| real_from_responses(&responses(i), model)).collect())
        }
    })
}

/// Little-endian binary model file.
pub fn serialize_model(model: &DescriptorModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * model.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(match model.mode {
        DescriptorMode::Binary => 0,
        DescriptorMode::Real => 1,
    });
    out.extend_from_slice(&model.patch_side.to_le_bytes());
    out.extend_from_slice(&(model.len() as u32).to_le_bytes());
    out.extend_from_slice(&model.scale_multiplier.to_le_bytes());
    for (wl, a) in model.learners.iter().zip(&model.alphas) {
        let f = &wl.feature;
        for v in [f.p1.row, f.p1.col, f.p2.row, f.p2.col] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(f.size as u16).to_le_bytes());
        out.extend_from_slice(&wl.threshold.to_le_bytes());
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N).ok_or(Error::TruncatedModel)?;
        self.pos += N;
        Ok(chunk.try_into().expect("length checked"))
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<DescriptorModel> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>()? != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(r.take()?);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mode = match r.take::<1>()?[0] {
        0 => DescriptorMode::Binary,
        1 => DescriptorMode::Real,
        m => return Err(Error::InvalidModel(format!("unknown mode byte {m}"))),
    };
    let patch_side = u16::from_le_bytes(r.take()?);
    let k = u32::from_le_bytes(r.take()?) as usize;
    let scale_multiplier = f64::from_le_bytes(r.take()?);
    let body = bytes.len() - HEADER_LEN;
    if !body.is_multiple_of(RECORD_LEN) {
        return Err(Error::TruncatedModel);
    }
    if body / RECORD_LEN != k {
        return Err(Error::RecordCountMismatch { declared: k, actual: body / RECORD_LEN });
    }
    let mut learners = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    for _ in 0..k {
        let mut coord = || -> Result<i16> { Ok(i16::from_le_bytes(r.take()?)) };
        let (r1, c1, r2, c2) = (coord()?, coord()?, coord()?, coord()?);
        let size = u16::from_le_bytes(r.take()?) as u32;
        let threshold = i32::from_le_bytes(r.take()?);
        alphas.push(f64::from_le_bytes(r.take()?));
        learners
            .push(ThresholdedWeakLearner::new(PixelPairFeature::new(Point::new(r1, c1), Point::new(r2, c2), size), threshold));
    }
    DescriptorModel::new(mode, patch_side, scale_multiplier, learners, alphas)
}

/// Parses `x y size angle` lines; angle `-` marks an unoriented keypoint.
pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: n + 1, message };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", toks.len())));
        }
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad(format!("bad number {t:?}")));
        let (x, y, size) = (num(toks[0])?, num(toks[1])?, num(toks[2])?);
        if size.is_nan() || size <= 0.0 {
            return Err(bad(format!("keypoint size must be positive, found {size}")));
        }
        let angle = if toks[3] == "-" { None } else { Some(num(toks[3])?) };
        out.push(Keypoint::new(x, y, size, angle));
    }
    Ok(out)
}

pub fn format_keypoints(kps: &[Keypoint]) -> String {
    let mut s = String::new();
    for kp in kps {
        match kp.angle {
            Some(a) => writeln!(s, "{} {} {} {}", kp.x, kp.y, kp.size, a),
            None => writeln!(s, "{} {} {} -", kp.x, kp.y, kp.size),
        }
        .expect("string write");
    }
    s
}

/// Contents of a descriptor file.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorFile {
    pub dims: usize,
    pub descriptors: Descriptors,
    pub kept: Vec<usize>,
}

/// `K=<dims> N=<count> mode=<binary|real>`, one row per descriptor, then
/// `kept=` followed by the space-separated kept keypoint indices.
pub fn format_descriptor_file(file: &DescriptorFile) -> String {
    let mut s = format!("K={} N={} mode={}\n", file.dims, file.descriptors.len(), file.descriptors.mode().name());
    match &file.descriptors {
        Descriptors::Binary(ds) => {
            for d in ds {
                s.push_str(&d.to_hex());
                s.push('\n');
            }
        }
        Descriptors::Real(ds) => {
            for d in ds {
                let row: Vec<String> = d.values.iter().map(|v| format!("{v}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
    }
    let kept: Vec<String> = file.kept.iter().map(|i| i.to_string()).collect();
    writeln!(s, "kept={}", kept.join(" ")).expect("string write");
    s
}

pub fn parse_descriptor_file(text: &str) -> Result<DescriptorFile> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty descriptor file".into() })?;
    let bad_header = || Error::Parse { line: 1, message: format!("bad header {header:?}") };
    let mut dims = None;
    let mut count = None;
    let mut mode = None;
    for tok in header.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(bad_header)?;
        match key {
            "K" => dims = Some(value.parse::<usize>().map_err(|_| bad_header())?),
            "N" => count = Some(value.parse::<usize>().map_err(|_| bad_header())?),
            "mode" => {
                mode = Some(match value {
                    "binary" => DescriptorMode::Binary,
                    "real" => DescriptorMode::Real,
                    _ => return Err(bad_header()),
                })
            }
            _ => return Err(bad_header()),
        }
    }
    let (dims, count, mode) = (dims.ok_or_else(bad_header)?, count.ok_or_else(bad_header)?, mode.ok_or_else(bad_header)?);
    let mut binary = Vec::new();
    let mut real = Vec::new();
    for _ in 0..count {
        let (n, line) = lines.next().ok_or(Error::Parse { line: 0, message: "missing descriptor rows".into() })?;
        let bad = |message: String| Error::Parse { line: n + 1, message };
        match mode {
            DescriptorMode::Binary => binary.push(BinaryDescriptor::from_hex(line.trim(), dims).map_err(|e| bad(e.to_string()))?),
            DescriptorMode::Real => {
                let values = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad value {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != dims {
                    return Err(bad(format!("expected {dims} values, found {}", values.len())));
                }
                real.push(RealDescriptor { values });
            }
        }
    }
    let (n, line) = lines.next().ok_or(Error::Parse { line: count + 2, message: "missing kept= line".into() })?;
    let rest = line.trim().strip_prefix("kept=").ok_or(Error::Parse { line: n + 1, message: "expected kept= line".into() })?;
    let kept = rest
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Parse { line: n + 1, message: format!("bad index {t:?}") }))
        .collect::<Result<Vec<_>>>()?;
    if kept.len() != count {
        return Err(Error::CountMismatch(format!("{count} descriptors but {} kept indices", kept.len())));
    }
    let descriptors = match mode {
        DescriptorMode::Binary => Descriptors::Binary(binary),
        DescriptorMode::Real => Descriptors::Real(real),
    };
    Ok(DescriptorFile { dims, descriptors, kept })
}
