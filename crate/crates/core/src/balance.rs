//! Temporal similarity based teacher reweighting.
//!
//! Each teacher embeds `n` consecutive clips of a video; the cosine
//! self-similarity matrices of both teachers are averaged off the diagonal
//! into a score `s`, and the teachers' class probabilities are mixed as
//! `s * p_I + (1 - s) * p_D`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::datamodel::{clips_from, resize_to, VideoInstance};
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::losses::cosine;
use crate::scalar::Scalar;

/// Score used for videos without a record.
pub const FALLBACK_SCORE: f64 = 0.5;

const CACHE_MAGIC: &str = "# timebalance similarity cache v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRecord {
    pub video_id: String,
    pub c_i: Vec<Vec<f64>>,
    pub c_d: Vec<Vec<f64>>,
    pub s: f64,
}

/// Cosine self-similarity matrix of `n >= 2` embeddings.
pub fn similarity_matrix<T: Scalar>(z: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    if z.len() < 2 {
        return Err(Error::contract("similarity matrix needs at least 2 clips"));
    }
    let n = z.len();
    let mut c = vec![vec![T::one(); n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let v = cosine(&z[a], &z[b]).max(-T::one()).min(T::one());
            c[a][b] = v;
            c[b][a] = v;
        }
    }
    Ok(c)
}

/// Mean of the off-diagonal entries of both matrices, before clamping.
pub fn similarity_score_raw<T: Scalar>(c_i: &[Vec<T>], c_d: &[Vec<T>]) -> Result<T> {
    let n = c_i.len();
    let square = |m: &[Vec<T>]| m.len() == n && m.iter().all(|r| r.len() == n);
    if n < 2 || !square(c_i) || !square(c_d) {
        return Err(Error::contract("similarity matrices must be n x n with matching n >= 2"));
    }
    let off_diagonal = |m: &[Vec<T>]| {
        let mut total = T::zero();
        for (a, row) in m.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if a != b {
                    total += v;
                }
            }
        }
        total
    };
    Ok((off_diagonal(c_i) + off_diagonal(c_d)) / T::of((2 * n * (n - 1)) as f64))
}

/// Instance similarity score, clamped to `[0, 1]`.
pub fn similarity_score<T: Scalar>(c_i: &[Vec<T>], c_d: &[Vec<T>]) -> Result<T> {
    Ok(similarity_score_raw(c_i, c_d)?.max(T::zero()).min(T::one()))
}

/// `s * p_i + (1 - s) * p_d`.
pub fn combine_teachers<T: Scalar>(p_i: &[T], p_d: &[T], s: T) -> Result<Vec<T>> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::contract(format!("teacher weight {s} outside [0, 1]")));
    }
    if p_i.len() != p_d.len() {
        return Err(Error::contract("teacher predictions differ in length"));
    }
    let r = T::one() - s;
    Ok(p_i.iter().zip(p_d).map(|(&a, &b)| s * a + r * b).collect())
}

/// Embeds `n` consecutive clips starting at frame 0 with the teacher's
/// projection head (evaluation mode, no augmentation).
pub fn clip_projections(
    teacher: &EncoderWeights<f32>,
    video: &VideoInstance,
    n: usize,
    clip_len: usize,
) -> Result<Vec<Vec<f32>>> {
    let set = clips_from(video, n, clip_len, 0)?;
    let size = teacher.config.input_size;
    let pooled = set
        .clips
        .iter()
        .map(|c| Ok(teacher.encode_clip(&resize_to(c, size, size))?.pooled))
        .collect::<Result<Vec<_>>>()?;
    Ok(teacher.project_eval(&pooled)?.into_iter().map(|p| p.z).collect())
}

pub fn score_video(
    teacher_i: &EncoderWeights<f32>,
    teacher_d: &EncoderWeights<f32>,
    video: &VideoInstance,
    n: usize,
    clip_len: usize,
) -> Result<SimilarityRecord> {
    let to64 = |m: Vec<Vec<f32>>| -> Vec<Vec<f64>> {
        m.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect()
    };
    let c_i = to64(similarity_matrix(&clip_projections(teacher_i, video, n, clip_len)?)?);
    let c_d = to64(similarity_matrix(&clip_projections(teacher_d, video, n, clip_len)?)?);
    let s = similarity_score(&c_i, &c_d)?;
    Ok(SimilarityRecord {
        video_id: video.id.clone(),
        c_i,
        c_d,
        s,
    })
}

/// Per-video scores keyed by the hashes of the two teacher checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCache {
    pub hash_invariant: String,
    pub hash_distinctive: String,
    pub n: usize,
    pub records: BTreeMap<String, SimilarityRecord>,
}

impl ScoreCache {
    /// Score of a video, or [`FALLBACK_SCORE`] with a warning when absent.
    pub fn score(&self, video_id: &str) -> f64 {
        match self.records.get(video_id) {
            Some(r) => r.s,
            None => {
                log::warn!("no similarity record for {video_id}, using s = {FALLBACK_SCORE}");
                FALLBACK_SCORE
            }
        }
    }

    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.records.iter().map(|(k, r)| (k.clone(), r.s)).collect()
    }

    pub fn matches(&self, hash_invariant: &str, hash_distinctive: &str) -> bool {
        self.hash_invariant == hash_invariant && self.hash_distinctive == hash_distinctive
    }

    /// Header lines then `video_id <TAB> s <TAB> off-diagonals`, with the
    /// `n(n-1)` off-diagonal entries of the invariant matrix followed by
    /// those of the distinctive matrix, row-major.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{CACHE_MAGIC}\nteacher_invariant\t{}\nteacher_distinctive\t{}\nn\t{}\n",
            self.hash_invariant, self.hash_distinctive, self.n
        );
        for r in self.records.values() {
            out.push_str(&r.video_id);
            out.push('\t');
            out.push_str(&format!("{:?}", r.s));
            out.push('\t');
            let values: Vec<String> = off_diagonal(&r.c_i)
                .chain(off_diagonal(&r.c_d))
                .map(|v| format!("{v:?}"))
                .collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: usize, reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(CACHE_MAGIC) {
            return Err(fail(1, "missing similarity cache header"));
        }
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| fail(0, "truncated header"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .map(str::to_string)
                .ok_or_else(|| fail(i + 1, &format!("expected '{key}'")))
        };
        let hash_invariant = header("teacher_invariant")?;
        let hash_distinctive = header("teacher_distinctive")?;
        let n: usize = header("n")?
            .parse()
            .map_err(|_| fail(4, "n is not an integer"))?;
        if n < 2 {
            return Err(fail(4, "n must be at least 2"));
        }
        let mut records = BTreeMap::new();
        for (i, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(fail(i + 1, "expected video_id, s and off-diagonal values"));
            }
            let s: f64 = cols[1].parse().map_err(|_| fail(i + 1, "bad score"))?;
            let values = cols[2]
                .split(' ')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| fail(i + 1, "bad off-diagonal value"))?;
            if values.len() != 2 * n * (n - 1) {
                return Err(fail(i + 1, "wrong number of off-diagonal values"));
            }
            let (a, b) = values.split_at(n * (n - 1));
            let record = SimilarityRecord {
                video_id: cols[0].to_string(),
                c_i: from_off_diagonal(a, n),
                c_d: from_off_diagonal(b, n),
                s,
            };
            records.insert(record.video_id.clone(), record);
        }
        Ok(Self {
            hash_invariant,
            hash_distinctive,
            n,
            records,
        })
    }
}

fn off_diagonal(m: &[Vec<f64>]) -> impl Iterator<Item = f64> + '_ {
    m.iter()
        .enumerate()
        .flat_map(|(a, row)| row.iter().enumerate().filter(move |(b, _)| *b != a).map(|(_, &v)| v))
}

fn from_off_diagonal(values: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut it = values.iter();
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| if a == b { 1.0 } else { *it.next().expect("counted") })
                .collect()
        })
        .collect()
}

/// Scores every video. Videos too short for `n` clips are skipped with a
/// warning and later fall back to [`FALLBACK_SCORE`].
pub fn precompute_scores(
    teacher_i: &EncoderWeights<f32>,
    teacher_d: &EncoderWeights<f32>,
    videos: &[VideoInstance],
    n: usize,
    clip_len: usize,
) -> Result<BTreeMap<String, SimilarityRecord>> {
    let results: Vec<Result<Option<SimilarityRecord>>> = videos
        .par_iter()
        .map(|v| {
            if v.num_frames() < n * clip_len {
                log::warn!("{} too short for scoring, s defaults to {FALLBACK_SCORE}", v.id);
                return Ok(None);
            }
            score_video(teacher_i, teacher_d, v, n, clip_len).map(Some)
        })
        .collect();
    let mut out = BTreeMap::new();
    for r in results {
        if let Some(rec) = r? {
            out.insert(rec.video_id.clone(), rec);
        }
    }
    Ok(out)
}

/// Loads the cache at `path` when its teacher hashes match and it covers
/// every video; otherwise recomputes and rewrites it. The flag reports
/// whether a recomputation happened.
#[allow(clippy::too_many_arguments)]
pub fn load_or_compute(
    path: &Path,
    teacher_i: &EncoderWeights<f32>,
    hash_i: &str,
    teacher_d: &EncoderWeights<f32>,
    hash_d: &str,
    videos: &[VideoInstance],
    n: usize,
    clip_len: usize,
) -> Result<(ScoreCache, bool)> {
    if path.exists() {
        match ScoreCache::load(path) {
            Ok(cache)
                if cache.matches(hash_i, hash_d)
                    && cache.n == n
                    && videos
                        .iter()
                        .filter(|v| v.num_frames() >= n * clip_len)
                        .all(|v| cache.records.contains_key(&v.id)) =>
            {
                return Ok((cache, false));
            }
            Ok(_) => log::info!("similarity cache {} is stale, recomputing", path.display()),
            Err(e) => log::warn!("ignoring unreadable similarity cache: {e}"),
        }
    }
    let cache = ScoreCache {
        hash_invariant: hash_i.to_string(),
        hash_distinctive: hash_d.to_string(),
        n,
        records: precompute_scores(teacher_i, teacher_d, videos, n, clip_len)?,
    };
    cache.save(path)?;
    Ok((cache, true))
}
