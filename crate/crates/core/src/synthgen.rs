//! Synthetic moving-shape videos with two families of classes.
//!
//! *Atomic* classes repeat one short motion with a class-specific shape and
//! period, so every clip of a video looks alike. *Composite* classes chain
//! `phases` sub-motions (translate, rotate, scale, blink) in a class-specific
//! order and variant, one sub-motion per clip window. Composite classes share
//! shape and colour, so only the motions tell them apart.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_video, VideoInstance, VideoKind, MANIFEST_NAME, VIDEO_EXT};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes_atomic: usize,
    pub num_classes_composite: usize,
    pub videos_per_class: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    /// Number of sub-motions in a composite video.
    pub phases: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes_atomic: 5,
            num_classes_composite: 5,
            videos_per_class: 20,
            t: 64,
            h: 32,
            w: 32,
            channels: 3,
            phases: 4,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.num_classes_atomic + self.num_classes_composite
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::Argument("synthetic corpus needs at least 2 classes".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Argument(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.t == 0 || self.h < 8 || self.w < 8 || self.channels == 0 {
            return Err(Error::Argument("synthetic frames need T > 0, H, W >= 8, Ch > 0".into()));
        }
        if self.phases == 0 || self.t % self.phases != 0 {
            return Err(Error::Argument(format!(
                "T = {} must be a positive multiple of phases = {}",
                self.t, self.phases
            )));
        }
        Ok(())
    }

    pub fn kind_of(&self, class_id: usize) -> Option<VideoKind> {
        if class_id < self.num_classes_atomic {
            Some(VideoKind::Atomic)
        } else if class_id < self.num_classes() {
            Some(VideoKind::Composite)
        } else {
            None
        }
    }

    /// Directory name of a class; names sort in class-index order.
    pub fn class_name(&self, class_id: usize) -> String {
        if class_id < self.num_classes_atomic {
            format!("atomic_{class_id:02}")
        } else {
            format!("composite_{:02}", class_id - self.num_classes_atomic)
        }
    }

    /// Period in frames of an atomic class.
    pub fn atomic_period(&self, class_id: usize) -> usize {
        ATOMIC_PERIODS[class_id % ATOMIC_PERIODS.len()]
    }

    /// Ordered sub-motions of a composite class: a class-specific order of
    /// the motion kinds, each played in a class-specific variant.
    pub fn composite_order(&self, class_id: usize) -> Vec<SubMotion> {
        let c = class_id - self.num_classes_atomic;
        let mut kinds = Motion::ALL.to_vec();
        // Lehmer decoding of a class-specific permutation index.
        let mut index = (c * 7 + c / 24) % 24;
        let mut order = Vec::with_capacity(self.phases);
        while !kinds.is_empty() {
            let f = (1..kinds.len()).product::<usize>();
            order.push(kinds.remove(index / f));
            index %= f;
        }
        // Variant patterns are words of the ternary tetracode, so two
        // classes share at most one sub-motion.
        const CODES: [(usize, usize); 9] = [(0, 1), (1, 0), (1, 1), (2, 2), (2, 0), (0, 2), (1, 2), (2, 1), (0, 0)];
        let (a, b) = CODES[c % CODES.len()];
        let code = [a, b, (a + b) % 3, (a + 2 * b) % 3];
        (0..self.phases)
            .map(|k| {
                let motion = order[k % order.len()];
                let slot = Motion::ALL.iter().position(|&m| m == motion).expect("known motion");
                SubMotion {
                    motion,
                    variant: code[slot] as u8,
                }
            })
            .collect()
    }

    fn video_seed(&self, class_id: usize, index: usize) -> u64 {
        splitmix(self.seed ^ splitmix((class_id as u64) << 32 | index as u64))
    }
}

const ATOMIC_PERIODS: [usize; 2] = [4, 8];
const ATOMIC_COLOR: [f64; 3] = [0.95, 0.65, 0.2];
const COMPOSITE_COLOR: [f64; 3] = [0.25, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Translate,
    Rotate,
    Scale,
    Blink,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Translate, Motion::Rotate, Motion::Scale, Motion::Blink];
}

/// One phase of a composite video. The three variants of each kind survive
/// a horizontal flip: up, down or sideways; quarter turn, half turn or
/// wiggle; grow, shrink or pulse; one, two or four blinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubMotion {
    pub motion: Motion,
    /// 0, 1 or 2.
    pub variant: u8,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk,
    Square,
    Diamond,
    Cross,
    Triangle,
    Ring,
    Bar,
}

const ATOMIC_SHAPES: [Shape; 6] = [
    Shape::Disk,
    Shape::Square,
    Shape::Cross,
    Shape::Triangle,
    Shape::Diamond,
    Shape::Ring,
];

impl Shape {
    /// Signed distance (negative inside) at local coordinates scaled so the
    /// nominal radius is `r`.
    fn sdf(self, u: f64, v: f64, r: f64) -> f64 {
        match self {
            Shape::Disk => (u * u + v * v).sqrt() - r,
            Shape::Square => u.abs().max(v.abs()) - 0.85 * r,
            Shape::Diamond => (u.abs() + v.abs()) / 2f64.sqrt() - 0.8 * r,
            Shape::Cross => {
                let arm = 0.35 * r;
                (u.abs() - r).max(v.abs() - arm).min((u.abs() - arm).max(v.abs() - r))
            }
            Shape::Triangle => (0..3)
                .map(|k| {
                    let a = PI / 2.0 + 2.0 * PI * k as f64 / 3.0;
                    u * a.cos() + v * a.sin() - 0.5 * r
                })
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::Ring => ((u * u + v * v).sqrt() - 0.75 * r).abs() - 0.3 * r,
            Shape::Bar => (u.abs() - 1.4 * r).max(v.abs() - 0.4 * r),
        }
    }
}

/// Pose of the shape in one frame.
#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    angle: f64,
    scale: f64,
    alpha: f64,
}

struct Canvas<'a> {
    spec: &'a SynthSpec,
    shape: Shape,
    color: [f64; 3],
    radius: f64,
}

impl Canvas<'_> {
    fn paint(&self, pose: Pose, frame: &mut [f32]) {
        let (h, w, ch) = (self.spec.h, self.spec.w, self.spec.channels);
        let (sin, cos) = pose.angle.sin_cos();
        let color = self.channel_color();
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - pose.cx;
                let dy = y as f64 + 0.5 - pose.cy;
                let u = (cos * dx + sin * dy) / pose.scale;
                let v = (-sin * dx + cos * dy) / pose.scale;
                let d = self.shape.sdf(u, v, self.radius) * pose.scale;
                let cover = (0.5 - d).clamp(0.0, 1.0) * pose.alpha;
                if cover > 0.0 {
                    let px = &mut frame[(y * w + x) * ch..(y * w + x + 1) * ch];
                    for (p, c) in px.iter_mut().zip(&color) {
                        *p = (cover * c) as f32;
                    }
                }
            }
        }
    }

    fn channel_color(&self) -> Vec<f64> {
        if self.spec.channels == 3 {
            self.color.to_vec()
        } else {
            let g = 0.299 * self.color[0] + 0.587 * self.color[1] + 0.114 * self.color[2];
            vec![g; self.spec.channels]
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn render(
    spec: &SynthSpec,
    canvas: &Canvas<'_>,
    rng: &mut ChaCha8Rng,
    pose_at: impl Fn(usize) -> Pose,
) -> Result<Tensor<f32>> {
    let frame_len = spec.h * spec.w * spec.channels;
    let mut data = vec![0f32; spec.t * frame_len];
    for (t, frame) in data.chunks_exact_mut(frame_len).enumerate() {
        canvas.paint(pose_at(t), frame);
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::Argument(format!("noise distribution: {e}")))?;
        for v in &mut data {
            *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::from_vec(&[spec.t, spec.h, spec.w, spec.channels], data)
}

fn unit(spec: &SynthSpec) -> f64 {
    spec.h.min(spec.w) as f64 / 32.0
}

/// A video of atomic class `class_id`: the class shape oscillating in
/// position and size with the class period along a class direction.
pub fn gen_atomic(class_id: usize, seed: u64, spec: &SynthSpec) -> Result<VideoInstance> {
    spec.validate()?;
    if spec.kind_of(class_id) != Some(VideoKind::Atomic) {
        return Err(Error::contract(format!("class {class_id} is not atomic")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = unit(spec);
    let period = spec.atomic_period(class_id);
    let offset = rng.random_range(0..period);
    let (cx, cy) = (spec.w as f64 / 2.0, spec.h as f64 / 2.0);
    let dir = PI * class_id as f64 / spec.num_classes_atomic as f64;
    let amp = 1.5 * k;
    let canvas = Canvas {
        spec,
        shape: ATOMIC_SHAPES[class_id % ATOMIC_SHAPES.len()],
        color: ATOMIC_COLOR,
        radius: 4.0 * k,
    };
    let frames = render(spec, &canvas, &mut rng, |t| {
        let a = 2.0 * PI * ((t + offset) % period) as f64 / period as f64;
        Pose {
            cx: cx + amp * a.sin() * dir.cos(),
            cy: cy + amp * a.sin() * dir.sin(),
            angle: 0.0,
            scale: 1.0 + 0.2 * a.cos(),
            alpha: 1.0,
        }
    })?;
    Ok(VideoInstance {
        id: String::new(),
        frames,
        label: Some(class_id),
        kind: Some(VideoKind::Atomic),
    })
}

/// A video of composite class `class_id`: `spec.phases` sub-motions, each
/// filling one window of `T / phases` frames. Start pose, heading and
/// orientation jitter per video around values shared by all composite
/// classes.
pub fn gen_composite(class_id: usize, seed: u64, spec: &SynthSpec) -> Result<VideoInstance> {
    spec.validate()?;
    if spec.kind_of(class_id) != Some(VideoKind::Composite) {
        return Err(Error::contract(format!("class {class_id} is not composite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = unit(spec);
    let order = spec.composite_order(class_id);
    let len = spec.t / spec.phases;
    let start = Pose {
        cx: spec.w as f64 / 2.0 + rng.random_range(-2.0..=2.0) * k,
        cy: spec.h as f64 / 2.0 + rng.random_range(-2.0..=2.0) * k,
        angle: PI / 4.0 + rng.random_range(-0.3..=0.3),
        scale: 1.0,
        alpha: 1.0,
    };
    let heading = PI / 2.0 + rng.random_range(-0.3..=0.3);
    let canvas = Canvas {
        spec,
        shape: Shape::Bar,
        color: COMPOSITE_COLOR,
        radius: 5.0 * k,
    };
    let frames = render(spec, &canvas, &mut rng, |t| {
        let u = (t % len) as f64 / len as f64;
        sub_motion(order[t / len], start, u, heading, k)
    })?;
    Ok(VideoInstance {
        id: String::new(),
        frames,
        label: Some(class_id),
        kind: Some(VideoKind::Composite),
    })
}

/// Pose after fraction `u` of a sub-motion started from `from`.
fn sub_motion(sub: SubMotion, from: Pose, u: f64, heading: f64, k: f64) -> Pose {
    let mut pose = from;
    let wave = (4.0 * PI * u).sin();
    match (sub.motion, sub.variant) {
        (Motion::Translate, v) => {
            let step = (u - 0.5) * 10.0 * k;
            let dir = match v {
                0 => heading,
                1 => heading + PI,
                _ => heading - PI / 2.0,
            };
            pose.cx += step * dir.cos();
            pose.cy += step * dir.sin();
        }
        (Motion::Rotate, 0) => pose.angle += u * PI / 2.0,
        (Motion::Rotate, 1) => pose.angle += u * PI,
        (Motion::Rotate, _) => pose.angle += 0.5 * wave,
        (Motion::Scale, 0) => pose.scale = 1.0 + 0.5 * u,
        (Motion::Scale, 1) => pose.scale = 1.0 - 0.4 * u,
        (Motion::Scale, _) => pose.scale = 1.0 + 0.3 * wave,
        (Motion::Blink, v) => {
            let blinks = [1.0, 2.0, 4.0][usize::from(v.min(2))];
            pose.alpha = 0.55 + 0.45 * (2.0 * PI * blinks * u).cos();
        }
    }
    pose
}

/// Video `index` of class `class_id`, with its corpus id.
pub fn gen_video(spec: &SynthSpec, class_id: usize, index: usize) -> Result<VideoInstance> {
    let seed = spec.video_seed(class_id, index);
    let mut video = match spec.kind_of(class_id) {
        Some(VideoKind::Atomic) => gen_atomic(class_id, seed, spec)?,
        Some(VideoKind::Composite) => gen_composite(class_id, seed, spec)?,
        None => return Err(Error::contract(format!("class {class_id} out of range"))),
    };
    video.id = format!("{}_v{index:03}", spec.class_name(class_id));
    Ok(video)
}

/// The full corpus in memory, ordered by class then index.
pub fn gen_corpus(spec: &SynthSpec) -> Result<Vec<VideoInstance>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.num_classes())
        .flat_map(|c| (0..spec.videos_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter().map(|&(c, i)| gen_video(spec, c, i)).collect()
}

/// Writes the corpus as `<out_root>/<class_name>/<video_id>.tbv` plus a
/// `manifest.csv` with kind tags. Returns the number of videos written.
pub fn gen_benchmark(spec: &SynthSpec, out_root: &Path) -> Result<usize> {
    let videos = gen_corpus(spec)?;
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    for c in 0..spec.num_classes() {
        let dir = out_root.join(spec.class_name(c));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    videos.par_iter().try_for_each(|v| {
        let class = v.label.expect("generated videos are labeled");
        let path = out_root
            .join(spec.class_name(class))
            .join(format!("{}.{VIDEO_EXT}", v.id));
        write_video(&path, &v.frames)
    })?;
    let mut manifest = String::from("video_id,class_name,class_index,kind\n");
    for v in &videos {
        let class = v.label.expect("generated videos are labeled");
        let kind = v.kind.expect("generated videos are tagged");
        manifest.push_str(&format!("{},{},{class},{kind}\n", v.id, spec.class_name(class)));
    }
    let path = out_root.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(videos.len())
}
