//! Document-image degradations used to provoke OCR content errors.
//!
//! Every distortion is a pure function of the input image and a
//! [`DistortionSpec`]; all randomness comes from the spec's seed.

use crate::seed::{derive_rng, derive_seed};
use image::Rgb;
pub use image::RgbImage;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

const WHITE: [f32; 3] = [255.0, 255.0, 255.0];
const PSF_BANK_SEED: u64 = 0x7073_665f_6b65_726e;
const TEXTURE_SEED: u64 = 0x7061_7065_725f_7478;

#[derive(Debug, Error)]
pub enum ImgNoiseError {
    #[error("unknown distortion kind {0:?}")]
    UnknownKind(String),
    #[error("unknown severity mode {0:?}")]
    UnknownMode(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("parameters for {params:?} given to a {kind:?} distortion")]
    ParamsMismatch {
        kind: DistortionKind,
        params: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("PSF bank: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthClass {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Background,
    SaltPepper,
    DirtyRollers,
    Rotation,
    Binarization,
    Warping,
    Shadows,
    PsfBlur,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 8] = [
        DistortionKind::Background,
        DistortionKind::SaltPepper,
        DistortionKind::DirtyRollers,
        DistortionKind::Rotation,
        DistortionKind::Binarization,
        DistortionKind::Warping,
        DistortionKind::Shadows,
        DistortionKind::PsfBlur,
    ];
    /// Distortions that keep the text legible.
    pub const WEAK: [DistortionKind; 4] = [
        DistortionKind::Background,
        DistortionKind::Binarization,
        DistortionKind::Rotation,
        DistortionKind::PsfBlur,
    ];
    pub const STRONG: [DistortionKind; 4] = [
        DistortionKind::SaltPepper,
        DistortionKind::DirtyRollers,
        DistortionKind::Warping,
        DistortionKind::Shadows,
    ];

    pub fn strength(self) -> StrengthClass {
        if Self::WEAK.contains(&self) {
            StrengthClass::Weak
        } else {
            StrengthClass::Strong
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::Background => "background",
            DistortionKind::SaltPepper => "salt_pepper",
            DistortionKind::DirtyRollers => "dirty_rollers",
            DistortionKind::Rotation => "rotation",
            DistortionKind::Binarization => "binarization",
            DistortionKind::Warping => "warping",
            DistortionKind::Shadows => "shadows",
            DistortionKind::PsfBlur => "psf_blur",
        }
    }

    pub fn default_params(self) -> DistortionParams {
        match self {
            DistortionKind::Background => DistortionParams::Background {
                original_weight: 0.8,
                texture_count: 15,
            },
            DistortionKind::SaltPepper => DistortionParams::SaltPepper { ratio: 0.01 },
            DistortionKind::DirtyRollers => DistortionParams::DirtyRollers {
                line_prob: 0.05,
                min_thickness: 1,
                max_thickness: 3,
                orientation: RollerOrientation::Both,
            },
            DistortionKind::Rotation => DistortionParams::Rotation { max_degrees: 3.0 },
            DistortionKind::Binarization => DistortionParams::Binarization { radius: 1 },
            DistortionKind::Warping => DistortionParams::Warping {
                amplitude: 4.0,
                wavelength: 96.0,
            },
            DistortionKind::Shadows => DistortionParams::Shadows {
                min_darkening: 0.3,
                max_darkening: 0.6,
            },
            DistortionKind::PsfBlur => DistortionParams::PsfBlur { kernel_count: 100 },
        }
    }
}

impl FromStr for DistortionKind {
    type Err = ImgNoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ImgNoiseError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollerOrientation {
    Rows,
    Columns,
    Both,
}

/// Per-kind settings. Random choices (angle, texture, kernel, lines) are not
/// stored here; they are drawn from the spec seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionParams {
    /// `out = w * original + (1 - w) * texture` per channel.
    Background {
        original_weight: f64,
        texture_count: usize,
    },
    /// Fraction of pixels replaced by pure black or white.
    SaltPepper { ratio: f64 },
    /// Each row or column starts a dark line with `line_prob`.
    DirtyRollers {
        line_prob: f64,
        min_thickness: u32,
        max_thickness: u32,
        orientation: RollerOrientation,
    },
    /// Angle drawn uniformly from `[-max_degrees, max_degrees]`.
    Rotation { max_degrees: f64 },
    /// Otsu threshold followed by a dilation or erosion of the ink.
    Binarization { radius: u32 },
    /// Sinusoidal displacement in both axes, in pixels.
    Warping { amplitude: f64, wavelength: f64 },
    /// Linear luminance gradient across the page.
    Shadows {
        min_darkening: f64,
        max_darkening: f64,
    },
    /// Convolution with one kernel of the PSF bank.
    PsfBlur { kernel_count: usize },
}

impl DistortionParams {
    fn kind(&self) -> DistortionKind {
        match self {
            DistortionParams::Background { .. } => DistortionKind::Background,
            DistortionParams::SaltPepper { .. } => DistortionKind::SaltPepper,
            DistortionParams::DirtyRollers { .. } => DistortionKind::DirtyRollers,
            DistortionParams::Rotation { .. } => DistortionKind::Rotation,
            DistortionParams::Binarization { .. } => DistortionKind::Binarization,
            DistortionParams::Warping { .. } => DistortionKind::Warping,
            DistortionParams::Shadows { .. } => DistortionKind::Shadows,
            DistortionParams::PsfBlur { .. } => DistortionKind::PsfBlur,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub strength_class: StrengthClass,
    pub params: DistortionParams,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, seed: u64) -> Self {
        Self::with_params(kind.default_params(), seed)
    }

    pub fn with_params(params: DistortionParams, seed: u64) -> Self {
        let kind = params.kind();
        Self {
            kind,
            strength_class: kind.strength(),
            params,
            seed,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        derive_rng(self.seed, &["distortion", self.kind.as_str()])
    }

    /// The rotation this spec applies, in degrees; 0 for other kinds.
    pub fn rotation_degrees(&self) -> f64 {
        match self.params {
            DistortionParams::Rotation { max_degrees } if max_degrees > 0.0 => {
                self.rng().random_range(-max_degrees..=max_degrees)
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityMode {
    OneWeak,
    OneStrong,
    TwoRandom,
}

impl FromStr for SeverityMode {
    type Err = ImgNoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "one-weak" => Ok(SeverityMode::OneWeak),
            "one-strong" => Ok(SeverityMode::OneStrong),
            "two-random" => Ok(SeverityMode::TwoRandom),
            _ => Err(ImgNoiseError::UnknownMode(s.to_string())),
        }
    }
}

/// Picks the distortions a mode applies for `seed`, with default params.
pub fn draw_specs(mode: SeverityMode, seed: u64) -> Vec<DistortionSpec> {
    let mut rng = derive_rng(seed, &["severity_mode"]);
    let kinds: Vec<DistortionKind> = match mode {
        SeverityMode::OneWeak => vec![DistortionKind::WEAK[rng.random_range(0..4)]],
        SeverityMode::OneStrong => vec![DistortionKind::STRONG[rng.random_range(0..4)]],
        SeverityMode::TwoRandom => sample(&mut rng, DistortionKind::ALL.len(), 2)
            .into_iter()
            .map(|i| DistortionKind::ALL[i])
            .collect(),
    };
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| DistortionSpec::new(k, derive_seed(seed, &["spec", &i.to_string()])))
        .collect()
}

/// A fixed set of blur kernels, square with odd side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfBank {
    pub seed: u64,
    pub size: usize,
    pub kernels: Vec<Vec<f32>>,
}

impl PsfBank {
    /// Half motion-blur lines and half defocus disks, chosen per kernel.
    pub fn generate(seed: u64, count: usize, size: usize) -> Self {
        let size = size | 1;
        let c = (size / 2) as f64;
        let kernels = (0..count)
            .map(|i| {
                let mut rng = derive_rng(seed, &["psf", &i.to_string()]);
                let mut k = vec![0f32; size * size];
                if rng.random_bool(0.5) {
                    let len = rng.random_range(2.0..=(size as f64 - 1.0));
                    let angle = rng.random_range(0.0..PI);
                    let steps = (len * 4.0).ceil() as usize;
                    for s in 0..=steps {
                        let t = s as f64 / steps as f64 - 0.5;
                        let x = (c + t * len * angle.cos()).round() as usize;
                        let y = (c + t * len * angle.sin()).round() as usize;
                        k[y.min(size - 1) * size + x.min(size - 1)] += 1.0;
                    }
                } else {
                    let radius = rng.random_range(1.0..=(c - 0.5).max(1.0));
                    for y in 0..size {
                        for x in 0..size {
                            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                            k[y * size + x] = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
                        }
                    }
                }
                let sum: f32 = k.iter().sum();
                k.iter_mut().for_each(|w| *w /= sum);
                k
            })
            .collect();
        Self {
            seed,
            size,
            kernels,
        }
    }

    /// The bank used when none is supplied: 100 kernels of side 9.
    pub fn standard() -> &'static PsfBank {
        static BANK: OnceLock<PsfBank> = OnceLock::new();
        BANK.get_or_init(|| PsfBank::generate(PSF_BANK_SEED, 100, 9))
    }

    /// Reads the standard bank from `path`, generating and writing it first
    /// if the file is missing.
    pub fn load_or_generate(path: &Path) -> Result<Self, ImgNoiseError> {
        let io = |source| ImgNoiseError::Io {
            path: path.to_path_buf(),
            source,
        };
        if path.exists() {
            let bytes = std::fs::read(path).map_err(io)?;
            return Ok(serde_json::from_slice(&bytes)?);
        }
        let bank = PsfBank::standard().clone();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(path, serde_json::to_vec(&bank)?).map_err(io)?;
        Ok(bank)
    }
}

/// Applies distortions with a given PSF bank.
pub struct Distorter<'a> {
    psf: &'a PsfBank,
}

impl Default for Distorter<'static> {
    fn default() -> Self {
        Self {
            psf: PsfBank::standard(),
        }
    }
}

impl<'a> Distorter<'a> {
    pub fn new(psf: &'a PsfBank) -> Self {
        Self { psf }
    }

    pub fn distort(
        &self,
        image: &RgbImage,
        spec: &DistortionSpec,
    ) -> Result<RgbImage, ImgNoiseError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(ImgNoiseError::EmptyImage);
        }
        if spec.params.kind() != spec.kind {
            return Err(ImgNoiseError::ParamsMismatch {
                kind: spec.kind,
                params: spec.params.kind().as_str().to_string(),
            });
        }
        let mut rng = spec.rng();
        Ok(match spec.params {
            DistortionParams::Background {
                original_weight,
                texture_count,
            } => {
                let index = rng.random_range(0..texture_count.max(1));
                let tex = paper_texture(index, image.width(), image.height());
                blend(image, &tex, original_weight)
            }
            DistortionParams::SaltPepper { ratio } => salt_pepper(image, ratio, &mut rng),
            DistortionParams::DirtyRollers {
                line_prob,
                min_thickness,
                max_thickness,
                orientation,
            } => dirty_rollers(
                image,
                line_prob,
                min_thickness,
                max_thickness,
                orientation,
                &mut rng,
            ),
            DistortionParams::Rotation { .. } => rotate(image, spec.rotation_degrees()),
            DistortionParams::Binarization { radius } => {
                let dilate = rng.random_bool(0.5);
                binarize(image, radius, dilate)
            }
            DistortionParams::Warping {
                amplitude,
                wavelength,
            } => {
                let phase_x = rng.random_range(0.0..2.0 * PI);
                let phase_y = rng.random_range(0.0..2.0 * PI);
                warp(image, amplitude, wavelength, phase_x, phase_y)
            }
            DistortionParams::Shadows {
                min_darkening,
                max_darkening,
            } => {
                let direction = rng.random_range(0.0..2.0 * PI);
                let darkening = if max_darkening > min_darkening {
                    rng.random_range(min_darkening..max_darkening)
                } else {
                    min_darkening
                };
                shadow(image, direction, darkening)
            }
            DistortionParams::PsfBlur { kernel_count } => {
                let n = kernel_count.min(self.psf.kernels.len()).max(1);
                let k = &self.psf.kernels[rng.random_range(0..n)];
                convolve(image, k, self.psf.size)
            }
        })
    }

    pub fn apply_mode(
        &self,
        image: &RgbImage,
        mode: SeverityMode,
        seed: u64,
    ) -> Result<(RgbImage, Vec<DistortionSpec>), ImgNoiseError> {
        let specs = draw_specs(mode, seed);
        let mut out = image.clone();
        for spec in &specs {
            out = self.distort(&out, spec)?;
        }
        Ok((out, specs))
    }
}

pub fn distort(image: &RgbImage, spec: &DistortionSpec) -> Result<RgbImage, ImgNoiseError> {
    Distorter::default().distort(image, spec)
}

pub fn apply_mode(
    image: &RgbImage,
    mode: SeverityMode,
    seed: u64,
) -> Result<(RgbImage, Vec<DistortionSpec>), ImgNoiseError> {
    Distorter::default().apply_mode(image, mode, seed)
}

fn px(image: &RgbImage, x: u32, y: u32) -> [f32; 3] {
    let p = image.get_pixel(x, y).0;
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

fn to_rgb(v: [f32; 3]) -> Rgb<u8> {
    Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
}

/// Bilinear sample with a white page outside the image.
fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let at = |xi: i64, yi: i64| {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            WHITE
        } else {
            px(image, xi as u32, yi as u32)
        }
    };
    let (a, b, c, d) = (
        at(x0, y0),
        at(x0 + 1, y0),
        at(x0, y0 + 1),
        at(x0 + 1, y0 + 1),
    );
    let mut out = [0f32; 3];
    for i in 0..3 {
        let top = a[i] + (b[i] - a[i]) * fx;
        let bottom = c[i] + (d[i] - c[i]) * fx;
        out[i] = top + (bottom - top) * fy;
    }
    out
}

/// Procedural paper texture; the same index and size always give the same
/// texture.
pub fn paper_texture(index: usize, width: u32, height: u32) -> RgbImage {
    let mut rng = derive_rng(TEXTURE_SEED, &["texture", &index.to_string()]);
    let base = rng.random_range(222.0f32..246.0);
    let tint = [
        base,
        base - rng.random_range(2.0f32..8.0),
        base - rng.random_range(10.0f32..24.0),
    ];
    let cell = rng.random_range(24u32..64);
    let (gw, gh) = (width / cell + 2, height / cell + 2);
    let grid: Vec<f32> = (0..gw * gh)
        .map(|_| rng.random_range(-10.0f32..10.0))
        .collect();
    let mut tex = RgbImage::new(width, height);
    for (x, y, p) in tex.enumerate_pixels_mut() {
        let (gx, gy) = (x as f32 / cell as f32, y as f32 / cell as f32);
        let (ix, iy) = (gx as u32, gy as u32);
        let (fx, fy) = (gx - ix as f32, gy - iy as f32);
        let g = |i: u32, j: u32| grid[(j * gw + i) as usize];
        let low = g(ix, iy) * (1.0 - fx) * (1.0 - fy)
            + g(ix + 1, iy) * fx * (1.0 - fy)
            + g(ix, iy + 1) * (1.0 - fx) * fy
            + g(ix + 1, iy + 1) * fx * fy;
        let grain = rng.random_range(-5.0f32..5.0);
        *p = to_rgb(tint.map(|c| c + low + grain));
    }
    tex
}

fn blend(image: &RgbImage, texture: &RgbImage, original_weight: f64) -> RgbImage {
    let w = original_weight as f32;
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (a, b) = (px(image, x, y), px(texture, x, y));
        *p = to_rgb([0, 1, 2].map(|i| w * a[i] + (1.0 - w) * b[i]));
    }
    out
}

fn salt_pepper(image: &RgbImage, ratio: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let total = (image.width() * image.height()) as usize;
    let count = ((total as f64 * ratio.clamp(0.0, 1.0)).floor() as usize).min(total);
    let mut out = image.clone();
    for i in sample(rng, total, count) {
        let (x, y) = ((i as u32) % image.width(), (i as u32) / image.width());
        let v = if rng.random_bool(0.5) { 255 } else { 0 };
        out.put_pixel(x, y, Rgb([v, v, v]));
    }
    out
}

fn dirty_rollers(
    image: &RgbImage,
    line_prob: f64,
    min_thickness: u32,
    max_thickness: u32,
    orientation: RollerOrientation,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    let lo = min_thickness.max(1);
    let hi = max_thickness.max(lo);
    let mut pass = |horizontal: bool, rng: &mut ChaCha8Rng| {
        let (lines, len) = if horizontal { (h, w) } else { (w, h) };
        let mut i = 0;
        while i < lines {
            if !rng.random_bool(line_prob.clamp(0.0, 1.0)) {
                i += 1;
                continue;
            }
            let thickness = rng.random_range(lo..=hi);
            let ink = rng.random_range(30.0f32..110.0);
            for t in i..(i + thickness).min(lines) {
                for j in 0..len {
                    // rollers leave a broken, uneven trace
                    if rng.random_bool(0.15) {
                        continue;
                    }
                    let (x, y) = if horizontal { (j, t) } else { (t, j) };
                    let p = px(&out, x, y);
                    out.put_pixel(x, y, to_rgb(p.map(|c| c.min(ink))));
                }
            }
            i += thickness;
        }
    };
    if orientation != RollerOrientation::Columns {
        pass(true, rng);
    }
    if orientation != RollerOrientation::Rows {
        pass(false, rng);
    }
    out
}

/// Rotates about the image centre onto a same-size white canvas. Positive
/// angles turn the content counter-clockwise as displayed.
pub fn rotate(image: &RgbImage, degrees: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let mut out = RgbImage::new(w, h);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cx + dx * c - dy * s;
        let sy = cy + dx * s + dy * c;
        *p = to_rgb(sample_bilinear(image, sx, sy));
    }
    out
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn otsu(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &n)| i as f64 * n as f64)
        .sum();
    let (mut w0, mut sum0, mut best, mut best_t) = (0u64, 0f64, -1f64, 127u8);
    for (t, &n) in hist.iter().enumerate() {
        w0 += n;
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * n as f64;
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

/// Black-and-white version of the page, with the ink grown (`dilate`) or
/// thinned by `radius` pixels.
fn binarize(image: &RgbImage, radius: u32, dilate: bool) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut hist = [0u64; 256];
    let lum: Vec<u8> = image
        .pixels()
        .map(|p| luma([p[0] as f32, p[1] as f32, p[2] as f32]).round() as u8)
        .collect();
    lum.iter().for_each(|&l| hist[l as usize] += 1);
    let t = otsu(&hist);
    let ink: Vec<bool> = lum.iter().map(|&l| l <= t).collect();
    let r = radius as i64;
    let mut out = RgbImage::new(w, h);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let mut any = false;
        let mut all = true;
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let v = nx >= 0
                    && ny >= 0
                    && nx < w as i64
                    && ny < h as i64
                    && ink[(ny * w as i64 + nx) as usize];
                any |= v;
                all &= v;
            }
        }
        let is_ink = if dilate { any } else { all };
        let v = if is_ink { 0 } else { 255 };
        *p = Rgb([v, v, v]);
    }
    out
}

fn warp(image: &RgbImage, amplitude: f64, wavelength: f64, phase_x: f64, phase_y: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let k = 2.0 * PI / wavelength.max(1.0);
    let mut out = RgbImage::new(w, h);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let sx = x as f64 + amplitude * (k * y as f64 + phase_x).sin();
        let sy = y as f64 + amplitude * (k * x as f64 + phase_y).sin();
        *p = to_rgb(sample_bilinear(image, sx, sy));
    }
    out
}

fn shadow(image: &RgbImage, direction: f64, darkening: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = direction.sin_cos();
    let extent = (cx * c.abs() + cy * s.abs()).max(1e-9);
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let proj = ((x as f64 - cx) * c + (y as f64 - cy) * s) / extent;
        let t = ((proj + 1.0) / 2.0).clamp(0.0, 1.0);
        let factor = (1.0 - darkening * t) as f32;
        *p = to_rgb(px(image, x, y).map(|v| v * factor));
    }
    out
}

fn convolve(image: &RgbImage, kernel: &[f32], size: usize) -> RgbImage {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let half = (size / 2) as i64;
    let mut out = RgbImage::new(w as u32, h as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let mut acc = [0f32; 3];
        for ky in 0..size as i64 {
            for kx in 0..size as i64 {
                let wgt = kernel[(ky * size as i64 + kx) as usize];
                if wgt == 0.0 {
                    continue;
                }
                let sx = (x as i64 + kx - half).clamp(0, w - 1) as u32;
                let sy = (y as i64 + ky - half).clamp(0, h - 1) as u32;
                let v = px(image, sx, sy);
                for i in 0..3 {
                    acc[i] += wgt * v[i];
                }
            }
        }
        *p = to_rgb(acc);
    }
    out
}

/// Mean absolute per-channel difference, in 0..=255.
pub fn mean_abs_delta(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let sum: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    sum as f64 / a.as_raw().len() as f64
}

/// Seed for one page of a batch, so that pages sharing a run seed still get
/// independent draws.
pub fn page_seed(seed: u64, page: &str) -> u64 {
    derive_seed(seed, &["page", page])
}

/// A white page with lines of dark glyph-like boxes, for tests and demos.
pub fn synthetic_page(seed: u64, width: u32, height: u32) -> RgbImage {
    let mut rng = derive_rng(seed, &["synthetic_page"]);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = width / 10;
    let line_h = 14;
    let mut y = height / 12;
    while y + line_h < height - height / 12 {
        let mut x = margin;
        let line_end = width - margin - rng.random_range(0..width / 6);
        while x + 4 < line_end {
            let word = rng.random_range(3..9);
            for _ in 0..word {
                let gw = rng.random_range(4..8);
                let gh = rng.random_range(6..10);
                if x + gw >= line_end {
                    break;
                }
                for gx in x..x + gw {
                    for gy in y + (10 - gh)..y + 10 {
                        if rng.random_bool(0.7) {
                            img.put_pixel(gx, gy, Rgb([20, 20, 20]));
                        }
                    }
                }
                x += gw + 1;
            }
            x += 6;
        }
        y += line_h + rng.random_range(0..4);
    }
    img
}

pub fn load_png(path: &Path) -> Result<RgbImage, ImgNoiseError> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn save_png(image: &RgbImage, path: &Path) -> Result<(), ImgNoiseError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| ImgNoiseError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
