//! Input transformations applied by each sub-model before classification.
//!
//! Shifts, flips and right-angle rotations are pixel permutations and have
//! exact inverses ([`reset`]). Shifts wrap around the border. The remaining
//! kinds (noise, filters, morphology, quantization, local entropy) lose
//! information and cannot be reset. Noise kinds draw from a generator seeded
//! by the spec seed and a hash of the input, so applying the same spec to
//! the same image always gives the same result.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{content_hash, derive_seed, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("unknown transform '{0}'")]
    Unknown(String),
    #[error("transform '{0}' is irreversible and has no reset")]
    Irreversible(String),
    #[error("invalid parameters for '{id}': {reason}")]
    InvalidParams { id: String, reason: String },
    #[error("expected an [H, W, C] image, got {0:?}")]
    BadImage(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Identity,
    ShiftUp,
    ShiftDown,
    ShiftLeft,
    ShiftRight,
    ShiftTopLeft,
    ShiftTopRight,
    ShiftBottomLeft,
    ShiftBottomRight,
    FlipHorizontal,
    FlipVertical,
    FlipBoth,
    Rotate90,
    Rotate180,
    Rotate270,
    GaussianNoise,
    SaltPepperNoise,
    MedianFilter,
    GaussianBlur,
    Erosion,
    Dilation,
    Quantize4,
    Quantize8,
    EntropyNormalize,
}

const ALL_KINDS: [TransformKind; 24] = {
    use TransformKind::*;
    [
        Identity,
        ShiftUp,
        ShiftDown,
        ShiftLeft,
        ShiftRight,
        ShiftTopLeft,
        ShiftTopRight,
        ShiftBottomLeft,
        ShiftBottomRight,
        FlipHorizontal,
        FlipVertical,
        FlipBoth,
        Rotate90,
        Rotate180,
        Rotate270,
        GaussianNoise,
        SaltPepperNoise,
        MedianFilter,
        GaussianBlur,
        Erosion,
        Dilation,
        Quantize4,
        Quantize8,
        EntropyNormalize,
    ]
};

impl TransformKind {
    pub fn name(self) -> &'static str {
        use TransformKind::*;
        match self {
            Identity => "identity",
            ShiftUp => "shift-up",
            ShiftDown => "shift-down",
            ShiftLeft => "shift-left",
            ShiftRight => "shift-right",
            ShiftTopLeft => "shift-top-left",
            ShiftTopRight => "shift-top-right",
            ShiftBottomLeft => "shift-bottom-left",
            ShiftBottomRight => "shift-bottom-right",
            FlipHorizontal => "flip-horizontal",
            FlipVertical => "flip-vertical",
            FlipBoth => "flip-both",
            Rotate90 => "rotate-90",
            Rotate180 => "rotate-180",
            Rotate270 => "rotate-270",
            GaussianNoise => "gaussian-noise",
            SaltPepperNoise => "salt-pepper-noise",
            MedianFilter => "median-filter",
            GaussianBlur => "gaussian-blur",
            Erosion => "erosion",
            Dilation => "dilation",
            Quantize4 => "quantize-4",
            Quantize8 => "quantize-8",
            EntropyNormalize => "entropy-normalize",
        }
    }

    /// The fourteen pixel-permutation kinds.
    pub fn is_permutation(self) -> bool {
        use TransformKind::*;
        matches!(
            self,
            ShiftUp
                | ShiftDown
                | ShiftLeft
                | ShiftRight
                | ShiftTopLeft
                | ShiftTopRight
                | ShiftBottomLeft
                | ShiftBottomRight
                | FlipHorizontal
                | FlipVertical
                | FlipBoth
                | Rotate90
                | Rotate180
                | Rotate270
        )
    }

    /// Unit displacement `(dy, dx)` of image content for shift kinds.
    fn shift_direction(self) -> Option<(isize, isize)> {
        use TransformKind::*;
        Some(match self {
            ShiftUp => (-1, 0),
            ShiftDown => (1, 0),
            ShiftLeft => (0, -1),
            ShiftRight => (0, 1),
            ShiftTopLeft => (-1, -1),
            ShiftTopRight => (-1, 1),
            ShiftBottomLeft => (1, -1),
            ShiftBottomRight => (1, 1),
            _ => return None,
        })
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| TransformError::Unknown(s.to_string()))
    }
}

/// Kind-specific scalars. Fields a kind does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    /// Shift distance in pixels.
    pub offset: usize,
    /// Gaussian noise or blur standard deviation.
    pub sigma: f32,
    /// Salt-and-pepper corruption probability per pixel.
    pub density: f32,
    /// Odd window size for filters and morphology.
    pub kernel: usize,
    pub seed: u64,
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            offset: 3,
            sigma: 0.1,
            density: 0.05,
            kernel: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub id: String,
    pub kind: TransformKind,
    pub params: TransformParams,
    pub reversible: bool,
}

impl TransformSpec {
    pub fn new(id: impl Into<String>, kind: TransformKind, params: TransformParams) -> Result<Self, TransformError> {
        let id = id.into();
        let invalid = |reason: &str| TransformError::InvalidParams {
            id: id.clone(),
            reason: reason.to_string(),
        };
        if kind.shift_direction().is_some() && params.offset == 0 {
            return Err(invalid("shift offset must be at least one pixel"));
        }
        let windowed = matches!(
            kind,
            TransformKind::MedianFilter
                | TransformKind::GaussianBlur
                | TransformKind::Erosion
                | TransformKind::Dilation
                | TransformKind::EntropyNormalize
        );
        if windowed && params.kernel % 2 == 0 {
            return Err(invalid("kernel size must be odd"));
        }
        if !(0.0..=1.0).contains(&params.density) || !params.sigma.is_finite() || params.sigma < 0.0 {
            return Err(invalid("sigma must be non-negative and density within [0, 1]"));
        }
        Ok(Self {
            id,
            kind,
            params,
            reversible: kind.is_permutation(),
        })
    }

    /// The untransformed input, used by the "original" sub-model.
    pub fn identity() -> Self {
        Self::new("original", TransformKind::Identity, TransformParams::default()).expect("valid identity")
    }

    /// Whether [`reset`] is defined: the permutation kinds and the identity.
    pub fn is_resettable(&self) -> bool {
        self.reversible || self.kind == TransformKind::Identity
    }
}

fn reversible_spec(kind: TransformKind) -> TransformSpec {
    TransformSpec::new(kind.name(), kind, TransformParams::default()).expect("valid registry entry")
}

/// The fourteen reversible specs in registry order, optionally followed by
/// the irreversible subset.
pub fn registry(include_irreversible: bool) -> Vec<TransformSpec> {
    use TransformKind::*;
    let mut specs: Vec<TransformSpec> = [
        ShiftUp,
        ShiftDown,
        ShiftLeft,
        ShiftRight,
        ShiftTopLeft,
        ShiftTopRight,
        ShiftBottomLeft,
        ShiftBottomRight,
        FlipHorizontal,
        FlipVertical,
        FlipBoth,
        Rotate90,
        Rotate180,
        Rotate270,
    ]
    .into_iter()
    .map(reversible_spec)
    .collect();
    if include_irreversible {
        specs.extend(irreversible_registry());
    }
    specs
}

fn irreversible_registry() -> Vec<TransformSpec> {
    use TransformKind::*;
    let base = TransformParams::default();
    let entries: [(&str, TransformKind, TransformParams); 14] = [
        ("noise-gaussian-0.1", GaussianNoise, TransformParams { sigma: 0.1, ..base }),
        ("noise-gaussian-0.2", GaussianNoise, TransformParams { sigma: 0.2, ..base }),
        ("noise-salt-pepper-0.05", SaltPepperNoise, TransformParams { density: 0.05, ..base }),
        ("noise-salt-pepper-0.1", SaltPepperNoise, TransformParams { density: 0.1, ..base }),
        ("filter-median-3", MedianFilter, TransformParams { kernel: 3, ..base }),
        ("filter-median-5", MedianFilter, TransformParams { kernel: 5, ..base }),
        ("filter-gaussian-3", GaussianBlur, TransformParams { kernel: 3, sigma: 0.8, ..base }),
        ("filter-gaussian-5", GaussianBlur, TransformParams { kernel: 5, sigma: 1.2, ..base }),
        ("morph-erosion-3", Erosion, TransformParams { kernel: 3, ..base }),
        ("morph-dilation-3", Dilation, TransformParams { kernel: 3, ..base }),
        ("quantize-4", Quantize4, base),
        ("quantize-8", Quantize8, base),
        ("filter-entropy-3", EntropyNormalize, TransformParams { kernel: 3, ..base }),
        ("filter-entropy-5", EntropyNormalize, TransformParams { kernel: 5, ..base }),
    ];
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (id, kind, params))| {
            let params = TransformParams {
                seed: 1000 + i as u64,
                ..params
            };
            TransformSpec::new(id, kind, params).expect("valid registry entry")
        })
        .collect()
}

/// Finds a spec by id among the identity and the full registry.
pub fn lookup(id: &str) -> Result<TransformSpec, TransformError> {
    std::iter::once(TransformSpec::identity())
        .chain(registry(true))
        .find(|s| s.id == id)
        .ok_or_else(|| TransformError::Unknown(id.to_string()))
}

thread_local! {
    static APPLY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`apply`] calls made on the current thread.
pub fn apply_call_count() -> u64 {
    APPLY_CALLS.with(Cell::get)
}

fn image_dims(image: &Tensor) -> Result<[usize; 3], TransformError> {
    match *image.dims() {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(TransformError::BadImage(image.dims().to_vec())),
    }
}

/// Builds a `[oh, ow, c]` image whose pixel `(y, x)` is read from
/// `src(y, x)` in the input grid.
fn remap(image: &Tensor, out_hw: (usize, usize), src: impl Fn(usize, usize) -> (usize, usize)) -> Tensor {
    let [_, w, c] = image_dims(image).expect("checked by caller");
    let (oh, ow) = out_hw;
    let input = image.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = src(y, x);
            let s = (sy * w + sx) * c;
            out.extend_from_slice(&input[s..s + c]);
        }
    }
    Tensor::image(oh, ow, c, out).expect("remap dims")
}

/// Circular translation of content by `(dy, dx)` pixels.
fn roll(image: &Tensor, dy: isize, dx: isize) -> Tensor {
    let [h, w, _] = image_dims(image).expect("checked by caller");
    let (hi, wi) = (h as isize, w as isize);
    remap(image, (h, w), |y, x| {
        (
            (y as isize - dy).rem_euclid(hi) as usize,
            (x as isize - dx).rem_euclid(wi) as usize,
        )
    })
}

fn flip_horizontal(image: &Tensor) -> Tensor {
    let [h, w, _] = image_dims(image).expect("checked by caller");
    remap(image, (h, w), |y, x| (y, w - 1 - x))
}

fn flip_vertical(image: &Tensor) -> Tensor {
    let [h, w, _] = image_dims(image).expect("checked by caller");
    remap(image, (h, w), |y, x| (h - 1 - y, x))
}

/// Counter-clockwise quarter turns.
fn rotate(image: &Tensor, quarter_turns: u8) -> Tensor {
    let [h, w, _] = image_dims(image).expect("checked by caller");
    match quarter_turns % 4 {
        0 => image.clone(),
        1 => remap(image, (w, h), |y, x| (x, w - 1 - y)),
        2 => remap(image, (h, w), |y, x| (h - 1 - y, w - 1 - x)),
        _ => remap(image, (w, h), |y, x| (h - 1 - x, y)),
    }
}

/// Applies `f` to every `k×k` neighbourhood (edges replicated), per channel.
fn window_filter(image: &Tensor, k: usize, f: impl Fn(&mut [f32]) -> f32) -> Tensor {
    let [h, w, c] = image_dims(image).expect("checked by caller");
    let r = (k / 2) as isize;
    let input = image.data();
    let mut window = vec![0.0f32; k * k];
    let mut out = vec![0.0f32; input.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut n = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window[n] = input[(sy * w + sx) * c + ch];
                        n += 1;
                    }
                }
                out[(y * w + x) * c + ch] = f(&mut window);
            }
        }
    }
    Tensor::image(h, w, c, out).expect("filter dims")
}

fn gaussian_blur(image: &Tensor, k: usize, sigma: f32) -> Tensor {
    let r = (k / 2) as isize;
    let sigma = f64::from(sigma.max(1e-3));
    let mut weights = Vec::with_capacity(k * k);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    window_filter(image, k, |win| {
        win.iter().zip(&weights).map(|(&v, &wt)| f64::from(v) * wt).sum::<f64>() as f32
    })
}

fn local_entropy(image: &Tensor, k: usize) -> Tensor {
    let max_entropy = ((k * k) as f64).log2();
    window_filter(image, k, |win| {
        let mut levels: Vec<u8> = win.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        levels.sort_unstable();
        let n = levels.len() as f64;
        let mut entropy = 0.0;
        for run in levels.chunk_by(|a, b| a == b) {
            let p = run.len() as f64 / n;
            entropy -= p * p.log2();
        }
        (entropy / max_entropy) as f32
    })
}

fn quantize(image: &Tensor, levels: u32) -> Tensor {
    let steps = (levels - 1) as f32;
    image.map(|v| (v.clamp(0.0, 1.0) * steps).round() / steps)
}

fn noise_rng(spec: &TransformSpec, image: &Tensor) -> crate::rng::Prng {
    seeded(derive_seed(spec.params.seed, content_hash(image.data())))
}

/// Applies `spec` to an `[H, W, C]` image; the result is clipped to `[0, 1]`.
pub fn apply(spec: &TransformSpec, image: &Tensor) -> Result<Tensor, TransformError> {
    use TransformKind::*;
    APPLY_CALLS.with(|c| c.set(c.get() + 1));
    image_dims(image)?;
    let p = &spec.params;
    let out = if let Some((dy, dx)) = spec.kind.shift_direction() {
        let k = p.offset as isize;
        roll(image, dy * k, dx * k)
    } else {
        match spec.kind {
            Identity => image.clone(),
            FlipHorizontal => flip_horizontal(image),
            FlipVertical => flip_vertical(image),
            FlipBoth => flip_vertical(&flip_horizontal(image)),
            Rotate90 => rotate(image, 1),
            Rotate180 => rotate(image, 2),
            Rotate270 => rotate(image, 3),
            GaussianNoise => {
                let normal = Normal::new(0.0f32, p.sigma).map_err(|e| TransformError::InvalidParams {
                    id: spec.id.clone(),
                    reason: e.to_string(),
                })?;
                let mut rng = noise_rng(spec, image);
                let mut out = image.clone();
                for v in out.data_mut() {
                    *v += normal.sample(&mut rng);
                }
                out
            }
            SaltPepperNoise => {
                let mut rng = noise_rng(spec, image);
                let mut out = image.clone();
                for v in out.data_mut() {
                    if rng.random::<f32>() < p.density {
                        *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    }
                }
                out
            }
            MedianFilter => window_filter(image, p.kernel, |win| {
                win.sort_unstable_by(f32::total_cmp);
                win[win.len() / 2]
            }),
            GaussianBlur => gaussian_blur(image, p.kernel, p.sigma),
            Erosion => window_filter(image, p.kernel, |win| win.iter().copied().fold(f32::INFINITY, f32::min)),
            Dilation => window_filter(image, p.kernel, |win| win.iter().copied().fold(f32::NEG_INFINITY, f32::max)),
            Quantize4 => quantize(image, 4),
            Quantize8 => quantize(image, 8),
            EntropyNormalize => local_entropy(image, p.kernel),
            ShiftUp | ShiftDown | ShiftLeft | ShiftRight | ShiftTopLeft | ShiftTopRight | ShiftBottomLeft
            | ShiftBottomRight => unreachable!("handled above"),
        }
    };
    Ok(out.clip(0.0, 1.0))
}

/// Exact inverse of [`apply`] for resettable specs.
pub fn reset(spec: &TransformSpec, image: &Tensor) -> Result<Tensor, TransformError> {
    use TransformKind::*;
    if !spec.is_resettable() {
        return Err(TransformError::Irreversible(spec.id.clone()));
    }
    image_dims(image)?;
    if let Some((dy, dx)) = spec.kind.shift_direction() {
        let k = spec.params.offset as isize;
        return Ok(roll(image, -dy * k, -dx * k));
    }
    Ok(match spec.kind {
        Identity => image.clone(),
        FlipHorizontal => flip_horizontal(image),
        FlipVertical => flip_vertical(image),
        FlipBoth => flip_horizontal(&flip_vertical(image)),
        Rotate90 => rotate(image, 3),
        Rotate180 => rotate(image, 2),
        Rotate270 => rotate(image, 1),
        _ => unreachable!("irreversible kinds rejected above"),
    })
}
