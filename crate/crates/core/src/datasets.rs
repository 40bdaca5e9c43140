//! Patch collections: Brown-style mosaics, an on-disk strip layout, pair
//! files and a synthetic generator for desk-scale experiments.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{load_pgm, write_pgm, GrayImage};
use crate::weaklearners::{Label, LabeledPair, PATCH_SIDE};

/// Side of the patches stored in Brown mosaics.
pub const BROWN_PATCH_SIDE: usize = 64;

/// Square patches of a common side, each tagged with its structure id.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    side: usize,
    patches: Vec<GrayImage>,
    ids: Vec<u32>,
}

impl PatchSet {
    pub fn new(patches: Vec<GrayImage>, ids: Vec<u32>) -> Result<Self> {
        if patches.len() != ids.len() {
            return Err(Error::CountMismatch(format!("{} patches but {} ids", patches.len(), ids.len())));
        }
        let side = patches.first().map_or(0, |p| p.width());
        if let Some(p) = patches.iter().find(|p| p.width() != side || p.height() != side) {
            return Err(Error::InvalidDimensions { width: p.width(), height: p.height() });
        }
        Ok(Self { side, patches, ids })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[GrayImage] {
        &self.patches
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<PatchSet> {
        let mut patches = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::PatchIndexOutOfRange { index: i, count: self.len() });
            }
            patches.push(self.patches[i].clone());
            ids.push(self.ids[i]);
        }
        PatchSet::new(patches, ids)
    }

    /// Stacks the patches top to bottom into one image.
    pub fn to_strip(&self) -> Result<GrayImage> {
        if self.is_empty() {
            return Err(Error::InvalidDimensions { width: 0, height: 0 });
        }
        let mut data = Vec::with_capacity(self.side * self.side * self.len());
        for p in &self.patches {
            data.extend_from_slice(p.data());
        }
        GrayImage::new(self.side, self.side * self.len(), data)
    }

    pub fn from_strip(strip: &GrayImage, ids: Vec<u32>) -> Result<PatchSet> {
        let side = strip.width();
        if !strip.height().is_multiple_of(side) {
            return Err(Error::CountMismatch(format!("strip height {} is not a multiple of its width {}", strip.height(), side)));
        }
        let count = strip.height() / side;
        if count != ids.len() {
            return Err(Error::CountMismatch(format!("{count} patches but {} ids", ids.len())));
        }
        let patches = (0..count).map(|i| strip.crop(i * side, 0, side, side)).collect::<Result<Vec<_>>>()?;
        PatchSet::new(patches, ids)
    }
}

/// Writes `patches.pgm` (vertical strip) and `ids.txt` into `dir`.
pub fn save_patchset(set: &PatchSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("patches.pgm"), write_pgm(&set.to_strip()?))?;
    let mut ids = String::new();
    for id in set.ids() {
        writeln!(ids, "{id}").expect("string write");
    }
    std::fs::write(dir.join("ids.txt"), ids)?;
    Ok(())
}

pub fn load_patchset(dir: &Path) -> Result<PatchSet> {
    let strip = load_pgm(&std::fs::read(dir.join("patches.pgm"))?)?;
    let text = std::fs::read_to_string(dir.join("ids.txt"))?;
    let ids = parse_ids(&text)?;
    PatchSet::from_strip(&strip, ids)
}

/// One integer id per nonempty line; blank lines and `#` comments are skipped.
pub fn parse_ids(text: &str) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok = line.split_whitespace().next().expect("nonempty");
        ids.push(tok.parse().map_err(|_| Error::Parse { line: n + 1, message: format!("bad id {tok:?}") })?);
    }
    Ok(ids)
}

/// Averages each 2×2 block, rounding halves up.
pub fn downscale_patch(p: &GrayImage) -> Result<GrayImage> {
    let (w, h) = (p.width(), p.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::InvalidDimensions { width: w, height: h });
    }
    GrayImage::from_fn(w / 2, h / 2, |r, c| {
        let sum = p.get(2 * r, 2 * c) as u32
            + p.get(2 * r, 2 * c + 1) as u32
            + p.get(2 * r + 1, 2 * c) as u32
            + p.get(2 * r + 1, 2 * c + 1) as u32;
        ((sum + 2) / 4) as u8
    })
}

/// Cuts a mosaic into `side`×`side` tiles in row-major order.
pub fn slice_mosaic(mosaic: &GrayImage, side: usize) -> Result<Vec<GrayImage>> {
    if !mosaic.width().is_multiple_of(side) || !mosaic.height().is_multiple_of(side) {
        return Err(Error::InvalidDimensions { width: mosaic.width(), height: mosaic.height() });
    }
    let mut out = Vec::new();
    for r in (0..mosaic.height()).step_by(side) {
        for c in (0..mosaic.width()).step_by(side) {
            out.push(mosaic.crop(r, c, side, side)?);
        }
    }
    Ok(out)
}

/// Builds a 32×32 patch set from Brown mosaics and their `info.txt`.
///
/// Each info line starts with the 3D point id of the patch at the same
/// position in mosaic order.
pub fn load_brown(mosaics: &[GrayImage], info: &str) -> Result<PatchSet> {
    let mut tiles = Vec::new();
    for m in mosaics {
        tiles.extend(slice_mosaic(m, BROWN_PATCH_SIDE)?);
    }
    let ids = parse_ids(info)?;
    if ids.len() != tiles.len() {
        return Err(Error::CountMismatch(format!("{} patches in mosaics but {} info lines", tiles.len(), ids.len())));
    }
    let patches = tiles.iter().map(downscale_patch).collect::<Result<Vec<_>>>()?;
    PatchSet::new(patches, ids)
}

/// Perturbations applied to each synthetic instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub noise_sigma: f64,
    /// Sub-pixel shift drawn uniformly from `[-max_shift, max_shift]` per axis.
    pub max_shift: f64,
    pub max_rotation_deg: f64,
    pub max_brightness: f64,
}

impl Jitter {
    pub fn none() -> Self {
        Self { noise_sigma: 0.0, max_shift: 0.0, max_rotation_deg: 0.0, max_brightness: 0.0 }
    }

    pub fn moderate() -> Self {
        Self { noise_sigma: 8.0, max_shift: 1.0, max_rotation_deg: 10.0, max_brightness: 20.0 }
    }
}

#[derive(Clone, Debug)]
enum Component {
    Edge { nx: f64, ny: f64, offset: f64, width: f64, amp: f64 },
    Blob { x: f64, y: f64, inv_two_sigma2: f64, amp: f64 },
}

/// Smooth random texture defined in continuous patch coordinates.
#[derive(Clone, Debug)]
struct BasePattern {
    level: f64,
    components: Vec<Component>,
}

impl BasePattern {
    fn random<R: Rng + ?Sized>(rng: &mut R, side: f64) -> Self {
        let half = side / 2.0;
        let mut components = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            components.push(Component::Edge {
                nx: angle.cos(),
                ny: angle.sin(),
                offset: rng.random_range(-0.5 * half..0.5 * half),
                width: rng.random_range(1.5..6.0),
                amp: rng.random_range(-60.0..60.0),
            });
        }
        for _ in 0..rng.random_range(2..=5) {
            let sigma: f64 = rng.random_range(2.0..7.0);
            components.push(Component::Blob {
                x: rng.random_range(-0.8 * half..0.8 * half),
                y: rng.random_range(-0.8 * half..0.8 * half),
                inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                amp: rng.random_range(-80.0..80.0),
            });
        }
        Self { level: rng.random_range(70.0..180.0), components }
    }

    /// Intensity at offset `(x, y)` from the patch center.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = self.level;
        for c in &self.components {
            v += match *c {
                Component::Edge { nx, ny, offset, width, amp } => amp * ((nx * x + ny * y - offset) / width).tanh(),
                Component::Blob { x: bx, y: by, inv_two_sigma2, amp } => {
                    let (dx, dy) = (x - bx, y - by);
                    amp * (-(dx * dx + dy * dy) * inv_two_sigma2).exp()
                }
            };
        }
        v
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

fn render<R: Rng + ?Sized>(base: &BasePattern, side: usize, jitter: &Jitter, rng: &mut R) -> Result<GrayImage> {
    let theta = symmetric(rng, jitter.max_rotation_deg).to_radians();
    let (sx, sy) = (symmetric(rng, jitter.max_shift), symmetric(rng, jitter.max_shift));
    let brightness = symmetric(rng, jitter.max_brightness);
    let noise = if jitter.noise_sigma > 0.0 {
        Some(Normal::new(0.0, jitter.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    GrayImage::from_fn(side, side, |r, c| {
        // Instance pixel (r, c) samples the base at the inverse transform.
        let (x, y) = (c as f64 - center - sx, r as f64 - center - sy);
        let (bx, by) = (cos * x + sin * y, -sin * x + cos * y);
        let mut v = base.eval(bx, by) + brightness;
        if let Some(n) = &noise {
            v += n.sample(rng);
        }
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// `n_structures` random base patterns, each rendered `instances` times
/// under independent jitter. Ids run `0..n_structures`, instances adjacent.
pub fn synth_patchset<R: Rng + ?Sized>(rng: &mut R, n_structures: usize, instances: usize, jitter: &Jitter) -> Result<PatchSet> {
    if n_structures == 0 || instances == 0 {
        return Err(Error::InvalidConfig("structure and instance counts must be positive".into()));
    }
    let j = jitter;
    if [j.noise_sigma, j.max_shift, j.max_rotation_deg, j.max_brightness].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig("jitter parameters must be nonnegative".into()));
    }
    let mut patches = Vec::with_capacity(n_structures * instances);
    let mut ids = Vec::with_capacity(n_structures * instances);
    for id in 0..n_structures {
        let base = BasePattern::random(rng, PATCH_SIDE as f64);
        for _ in 0..instances {
            patches.push(render(&base, PATCH_SIDE, jitter, rng)?);
            ids.push(id as u32);
        }
    }
    PatchSet::new(patches, ids)
}

/// Pair file: `N=<patch count>` header, then one `i j l` line per pair.
pub fn save_pairs(pairs: &[LabeledPair], patch_count: usize) -> String {
    let mut out = format!("N={patch_count}\n");
    for p in pairs {
        let l = if p.label.is_positive() { 1 } else { -1 };
        writeln!(out, "{} {} {}", p.x, p.y, l).expect("string write");
    }
    out
}

/// Parses a pair file, returning the pairs and the declared patch count.
pub fn load_pairs(text: &str) -> Result<(Vec<LabeledPair>, usize)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (hn, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing N= header".into() })?;
    let count: usize = header
        .trim()
        .strip_prefix("N=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or(Error::Parse { line: hn + 1, message: format!("bad header {header:?}") })?;
    let mut pairs = Vec::new();
    for (n, line) in lines {
        let bad = |message: String| Error::Parse { line: n + 1, message };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", toks.len())));
        }
        let idx = |t: &str| -> Result<usize> {
            let i: usize = t.parse().map_err(|_| bad(format!("bad index {t:?}")))?;
            if i >= count {
                return Err(Error::PatchIndexOutOfRange { index: i, count });
            }
            Ok(i)
        };
        let (x, y) = (idx(toks[0])?, idx(toks[1])?);
        let label = toks[2]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| bad(format!("label must be -1 or 1, found {:?}", toks[2])))?;
        pairs.push(LabeledPair::new(x, y, label));
    }
    Ok((pairs, count))
}
