//! Videos, the on-disk container, labeled/unlabeled splitting, consecutive
//! clip sampling and stochastic clip augmentation.
//!
//! Container layout (`.tbv`), all little-endian:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `TBV1`                              |
//! | 4..20  | `T`, `H`, `W`, `Ch` as `u32`              |
//! | 20..24 | dtype code (`1` = float32)                |
//! | 24..32 | reserved, zero                            |
//! | 32..   | `T*H*W*Ch` float32 values, row-major      |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TBV1";
pub const HEADER_LEN: usize = 32;
pub const DTYPE_F32: u32 = 1;
pub const VIDEO_EXT: &str = "tbv";
pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoKind {
    Atomic,
    Composite,
}

impl fmt::Display for VideoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VideoKind::Atomic => "atomic",
            VideoKind::Composite => "composite",
        })
    }
}

impl FromStr for VideoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(VideoKind::Atomic),
            "composite" => Ok(VideoKind::Composite),
            other => Err(Error::Argument(format!("unknown video kind '{other}'"))),
        }
    }
}

/// One video: frames `[T, H, W, Ch]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInstance {
    pub id: String,
    pub frames: Tensor<f32>,
    pub label: Option<usize>,
    pub kind: Option<VideoKind>,
}

impl VideoInstance {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.shape().len() != 4 {
            return Err(Error::contract(format!("video {} is not [T,H,W,Ch]", self.id)));
        }
        if let Some(bad) = self
            .frames
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::contract(format!(
                "video {} has frame value {bad} outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// `n` consecutive, non-overlapping clips of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet {
    pub video_id: String,
    pub clips: Vec<Tensor<f32>>,
    /// Start frame of each clip, strictly increasing.
    pub timestamps: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// Start drawn uniformly from every valid position.
    UniformRandom(u64),
    Fixed(usize),
}

pub fn write_video(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::contract("video tensor must be [T,H,W,Ch]"));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * frames.len());
    bytes.extend_from_slice(MAGIC);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::contract("video dimension exceeds u32"))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    bytes.extend_from_slice(&DTYPE_F32.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 8]);
    for v in frames.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic, expected TBV1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let dims = [word(4), word(8), word(12), word(16)].map(|d| d as usize);
    if word(20) != DTYPE_F32 {
        return Err(fail(format!("unsupported dtype code {}", word(20))));
    }
    let count: usize = dims.iter().product();
    if bytes.len() != HEADER_LEN + 4 * count {
        return Err(fail(format!(
            "payload holds {} bytes, header promises {}",
            bytes.len() - HEADER_LEN,
            4 * count
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::from_vec(&dims, data).map_err(|e| fail(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub labeled_fraction: f64,
    pub seed: u64,
}

/// Per-video kind tags from `<root>/manifest.csv`, when present.
fn read_kind_manifest(root: &Path) -> Result<BTreeMap<String, VideoKind>> {
    let path = root.join(MANIFEST_NAME);
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for (line_no, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: path.clone(),
                line: line_no + 1,
                reason: "expected video_id,class_name,class_index,kind".into(),
            });
        }
        out.insert(cols[0].to_string(), cols[3].parse()?);
    }
    Ok(out)
}

/// Every video below `root`, labeled by class directory. Videos shorter than
/// `min_frames` are skipped with a warning.
pub fn load_all(root: &Path, min_frames: usize) -> Result<Vec<VideoInstance>> {
    let kinds = read_kind_manifest(root)?;
    let class_dirs = sorted_entries(root, |p| p.is_dir())?;
    let mut videos = Vec::new();
    for (class_index, dir) in class_dirs.iter().enumerate() {
        let files = sorted_entries(dir, |p| {
            p.is_file() && p.extension().is_some_and(|e| e == VIDEO_EXT)
        })?;
        for file in files {
            let frames = read_video(&file)?;
            let id = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let video = VideoInstance {
                kind: kinds.get(&id).copied(),
                id,
                frames,
                label: Some(class_index),
            };
            video.validate().map_err(|e| Error::Load {
                path: file.clone(),
                reason: e.to_string(),
            })?;
            if video.num_frames() < min_frames {
                log::warn!(
                    "skipping {}: {} frames < required {min_frames}",
                    file.display(),
                    video.num_frames()
                );
                continue;
            }
            videos.push(video);
        }
    }
    Ok(videos)
}

/// Sorted class names (directory names) below `root`.
pub fn class_names(root: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(root, |p| p.is_dir())?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every video under `root` and splits it into labeled and unlabeled
/// sets, stratified by class.
pub fn load_dataset(
    root: &Path,
    split: SplitSpec,
    min_frames: usize,
) -> Result<(Vec<VideoInstance>, Vec<VideoInstance>)> {
    check_fraction(split.labeled_fraction)?;
    let videos = load_all(root, min_frames)?;
    split_videos(videos, split)
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Argument(format!(
            "labeled fraction must lie in (0, 1], got {f}"
        )));
    }
    Ok(())
}

/// Stratified split. The labeled total is `round(fraction * N)`; each class
/// gets `floor(fraction * n_c)` and the remainder goes to the classes with
/// the largest fractional parts (ties to the lower class index). Members
/// within a class are chosen by a seeded shuffle of the sorted ids.
pub fn split_videos(
    videos: Vec<VideoInstance>,
    split: SplitSpec,
) -> Result<(Vec<VideoInstance>, Vec<VideoInstance>)> {
    check_fraction(split.labeled_fraction)?;
    let mut by_class: BTreeMap<usize, Vec<VideoInstance>> = BTreeMap::new();
    for v in videos {
        let label = v
            .label
            .ok_or_else(|| Error::contract(format!("video {} has no label to stratify on", v.id)))?;
        by_class.entry(label).or_default().push(v);
    }
    let total: usize = by_class.values().map(Vec::len).sum();
    let target = (split.labeled_fraction * total as f64).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&c, vs)| {
            let exact = split.labeled_fraction * vs.len() as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quotas[i].1 += 1;
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for ((class, mut vs), (_, quota, _)) in by_class.into_iter().zip(quotas) {
        vs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(split.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        vs.shuffle(&mut rng);
        for (k, mut v) in vs.into_iter().enumerate() {
            if k < quota {
                labeled.push(v);
            } else {
                v.label = None;
                unlabeled.push(v);
            }
        }
    }
    labeled.sort_by(|a, b| a.id.cmp(&b.id));
    unlabeled.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((labeled, unlabeled))
}

/// Writes `video_id,split` lines for audit.
pub fn write_split_manifest(path: &Path, labeled: &[VideoInstance], unlabeled: &[VideoInstance]) -> Result<()> {
    let mut out = String::from("video_id,split\n");
    for v in labeled {
        out.push_str(&format!("{},labeled\n", v.id));
    }
    for v in unlabeled {
        out.push_str(&format!("{},unlabeled\n", v.id));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Frames `[start, start + len)` of a video.
pub fn frame_window(video: &VideoInstance, start: usize, len: usize) -> Result<Tensor<f32>> {
    if start + len > video.num_frames() {
        return Err(Error::Sampling(format!(
            "window [{start}, {}) exceeds {} frames of {}",
            start + len,
            video.num_frames(),
            video.id
        )));
    }
    video.frames.slice_outer(start, len)
}

/// Samples `n` consecutive non-overlapping clips of `clip_len` frames.
pub fn sample_consecutive_clips(
    video: &VideoInstance,
    n: usize,
    clip_len: usize,
    policy: StartPolicy,
) -> Result<ClipSet> {
    let start = match policy {
        StartPolicy::Fixed(s) => s,
        StartPolicy::UniformRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_start(video, n * clip_len, &mut rng)?
        }
    };
    clips_from(video, n, clip_len, start)
}

/// A uniformly drawn start for a window of `span` frames.
pub fn random_start<R: Rng + ?Sized>(video: &VideoInstance, span: usize, rng: &mut R) -> Result<usize> {
    let t = video.num_frames();
    if span == 0 || t < span {
        return Err(Error::Sampling(format!(
            "video {} has {t} frames, needs {span}",
            video.id
        )));
    }
    Ok(rng.random_range(0..=t - span))
}

pub fn clips_from(video: &VideoInstance, n: usize, clip_len: usize, start: usize) -> Result<ClipSet> {
    if n == 0 || clip_len == 0 {
        return Err(Error::Sampling("clip count and length must be positive".into()));
    }
    if start + n * clip_len > video.num_frames() {
        return Err(Error::Sampling(format!(
            "video {} has {} frames, {n} clips of {clip_len} from {start} need {}",
            video.id,
            video.num_frames(),
            start + n * clip_len
        )));
    }
    let timestamps: Vec<usize> = (0..n).map(|t| start + t * clip_len).collect();
    let clips = timestamps
        .iter()
        .map(|&s| video.frames.slice_outer(s, clip_len))
        .collect::<Result<_>>()?;
    Ok(ClipSet {
        video_id: video.id.clone(),
        clips,
        timestamps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub enabled: bool,
    pub out_h: usize,
    pub out_w: usize,
    /// Range of the crop's area as a fraction of the frame area.
    pub scale_min: f64,
    pub scale_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

/// Stochastic clip transformation. The same parameters are applied to every
/// frame of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub crop: CropSpec,
    pub horizontal_flip: f64,
    pub grayscale: f64,
    pub color_jitter: ColorJitter,
    pub seed: u64,
}

impl AugmentSpec {
    /// Every transformation disabled; output size equals `(h, w)`.
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            crop: CropSpec {
                enabled: false,
                out_h: h,
                out_w: w,
                scale_min: 1.0,
                scale_max: 1.0,
            },
            horizontal_flip: 0.0,
            grayscale: 0.0,
            color_jitter: ColorJitter {
                brightness: 0.0,
                contrast: 0.0,
                saturation: 0.0,
            },
            seed: 0,
        }
    }
}

/// Seeded augmentation: the same `spec.seed` always yields the same output.
pub fn augment<T: Scalar>(clip: &Tensor<T>, spec: &AugmentSpec) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    augment_with_rng(clip, spec, &mut rng)
}

/// Augmentation drawing its randomness from `rng` (`spec.seed` unused).
pub fn augment_with_rng<T: Scalar, R: Rng + ?Sized>(
    clip: &Tensor<T>,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let s = clip.shape();
    if s.len() != 4 {
        return Err(Error::contract("clip must be [F,H,W,Ch]"));
    }
    let (h, w) = (s[1], s[2]);
    let (oh, ow) = (spec.crop.out_h, spec.crop.out_w);
    let mut out = if spec.crop.enabled {
        let lo = spec.crop.scale_min.clamp(1e-3, 1.0);
        let hi = spec.crop.scale_max.clamp(lo, 1.0);
        let area = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let side = area.sqrt();
        let ch = ((side * h as f64).round() as usize).clamp(1, h);
        let cw = ((side * w as f64).round() as usize).clamp(1, w);
        let y0 = rng.random_range(0..=h - ch);
        let x0 = rng.random_range(0..=w - cw);
        crop_resize(clip, (y0, x0, ch, cw), (oh, ow))
    } else if (oh, ow) != (h, w) && oh > 0 && ow > 0 {
        crop_resize(clip, (0, 0, h, w), (oh, ow))
    } else {
        clip.clone()
    };
    if rng.random_bool(spec.horizontal_flip.clamp(0.0, 1.0)) {
        flip_horizontal(&mut out);
    }
    let jitter = &spec.color_jitter;
    if jitter.brightness > 0.0 {
        let b = T::of(rng.random_range(1.0 - jitter.brightness..=1.0 + jitter.brightness).max(0.0));
        out.data_mut().iter_mut().for_each(|v| *v *= b);
    }
    if jitter.contrast > 0.0 {
        let c = T::of(rng.random_range(1.0 - jitter.contrast..=1.0 + jitter.contrast).max(0.0));
        let mean = mean_luma(&out);
        out.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * c + mean);
    }
    if jitter.saturation > 0.0 {
        let sat = T::of(rng.random_range(1.0 - jitter.saturation..=1.0 + jitter.saturation).max(0.0));
        map_pixels(&mut out, |px| {
            let g = luma(px);
            px.iter_mut().for_each(|v| *v = g + (*v - g) * sat);
        });
    }
    if rng.random_bool(spec.grayscale.clamp(0.0, 1.0)) {
        map_pixels(&mut out, |px| {
            let g = luma(px);
            px.iter_mut().for_each(|v| *v = g);
        });
    }
    let (zero, one) = (T::zero(), T::one());
    out.data_mut().iter_mut().for_each(|v| *v = v.max(zero).min(one));
    Ok(out)
}

fn luma<T: Scalar>(px: &[T]) -> T {
    if px.len() == 3 {
        T::of(0.299) * px[0] + T::of(0.587) * px[1] + T::of(0.114) * px[2]
    } else {
        px.iter().copied().sum::<T>() / T::of(px.len() as f64)
    }
}

fn mean_luma<T: Scalar>(clip: &Tensor<T>) -> T {
    let c = clip.shape()[3];
    let pixels = clip.len() / c;
    clip.data().chunks_exact(c).map(luma).sum::<T>() / T::of(pixels.max(1) as f64)
}

fn map_pixels<T: Scalar>(clip: &mut Tensor<T>, f: impl Fn(&mut [T])) {
    let c = clip.shape()[3];
    clip.data_mut().chunks_exact_mut(c).for_each(f);
}

pub fn flip_horizontal<T: Scalar>(clip: &mut Tensor<T>) {
    let s = clip.shape().to_vec();
    let (w, c) = (s[2], s[3]);
    for row in clip.data_mut().chunks_exact_mut(w * c) {
        for x in 0..w / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (w - 1 - x) * c + ch);
            }
        }
    }
}

/// Whole-frame resample to `(oh, ow)`; a clip already at that size is
/// returned unchanged.
pub fn resize_to<T: Scalar>(clip: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = clip.shape();
    if (s[1], s[2]) == (oh, ow) {
        return clip.clone();
    }
    crop_resize(clip, (0, 0, s[1], s[2]), (oh, ow))
}

/// Center crop covering `scale` of each side, resampled to `(oh, ow)`.
pub fn center_crop_resize<T: Scalar>(clip: &Tensor<T>, scale: f64, oh: usize, ow: usize) -> Tensor<T> {
    let s = clip.shape();
    let (h, w) = (s[1], s[2]);
    let ch = ((scale * h as f64).round() as usize).clamp(1, h);
    let cw = ((scale * w as f64).round() as usize).clamp(1, w);
    if (ch, cw) == (h, w) {
        return resize_to(clip, oh, ow);
    }
    crop_resize(clip, ((h - ch) / 2, (w - cw) / 2, ch, cw), (oh, ow))
}

/// Bilinear resample of the window `(y0, x0, ch, cw)` of every frame to
/// `(oh, ow)` (pixel-centre convention; a same-size window is copied
/// exactly).
pub fn crop_resize<T: Scalar>(
    clip: &Tensor<T>,
    (y0, x0, ch, cw): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Tensor<T> {
    let s = clip.shape();
    let (f, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[f, oh, ow, c]);
    let src = clip.data();
    let coords = |o: usize, len_out: usize, len_in: usize, off: usize| -> (usize, usize, T) {
        let pos = (o as f64 + 0.5) * len_in as f64 / len_out as f64 - 0.5;
        let pos = pos.clamp(0.0, (len_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len_in - 1);
        (off + lo, off + hi, T::of(pos - lo as f64))
    };
    let ys: Vec<_> = (0..oh).map(|o| coords(o, oh, ch, y0)).collect();
    let xs: Vec<_> = (0..ow).map(|o| coords(o, ow, cw, x0)).collect();
    let dst = out.data_mut();
    for t in 0..f {
        for (oy, &(ya, yb, fy)) in ys.iter().enumerate() {
            for (ox, &(xa, xb, fx)) in xs.iter().enumerate() {
                let at = |y: usize, x: usize, k: usize| src[((t * h + y) * w + x) * c + k];
                for k in 0..c {
                    let top = at(ya, xa, k) + (at(ya, xb, k) - at(ya, xa, k)) * fx;
                    let bottom = at(yb, xa, k) + (at(yb, xb, k) - at(yb, xa, k)) * fx;
                    dst[((t * oh + oy) * ow + ox) * c + k] = top + (bottom - top) * fy;
                }
            }
        }
    }
    out
}
