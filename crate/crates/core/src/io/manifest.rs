//! Dataset manifests.
//!
//! Tab-separated text, one video per line; `#` lines are comments. Columns
//! are `id split spatial temporal labels phases`. `split` is `train` or
//! `test`; `-` marks a missing temporal file. Relative paths resolve against
//! the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::embedding::{read_embeddings, read_header};
use super::labels::read_labels;
use super::{read_text, write_bytes};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const HEADER: &str = "# id\tsplit\tspatial\ttemporal\tlabels\tphases";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoEntry {
    pub id: String,
    pub split: Split,
    pub spatial: PathBuf,
    pub temporal: Option<PathBuf>,
    pub labels: PathBuf,
    pub phases: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub id: String,
    pub spatial: Matrix,
    pub temporal: Option<Matrix>,
    pub labels: Vec<usize>,
}

/// Paths are stored resolved, so entries stay valid wherever they travel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub videos: Vec<VideoEntry>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Absolute form of the directory containing `path`.
fn absolute_dir(path: &Path) -> Result<PathBuf> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::path::absolute(parent).map_err(|e| Error::io(parent, e))
}

/// `p` relative to `base` when it lies beneath it, else absolute.
fn relative_to(base: &Path, p: &Path) -> String {
    let p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    p.strip_prefix(base).unwrap_or(&p).display().to_string()
}

impl Manifest {
    /// Parses without touching the referenced files.
    pub fn parse(text: &str, base: &Path, path: &Path) -> Result<Self> {
        let mut videos: Vec<VideoEntry> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: String| Error::format(path, format!("line {}: {what}", i + 1));
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 tab-separated fields, found {}", f.len())));
            }
            if videos.iter().any(|v| v.id == f[0]) {
                return Err(bad(format!("duplicate video id {:?}", f[0])));
            }
            videos.push(VideoEntry {
                id: f[0].to_string(),
                split: f[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                spatial: resolve(base, f[2]),
                temporal: (f[3] != "-").then(|| resolve(base, f[3])),
                labels: resolve(base, f[4]),
                phases: f[5].parse().map_err(|_| bad(format!("bad phase count {:?}", f[5])))?,
            });
        }
        Ok(Self { videos })
    }

    /// Parses, then checks every referenced file against its labels.
    pub fn load(path: &Path) -> Result<Self> {
        let base = absolute_dir(path)?;
        let m = Self::parse(&read_text(path)?, &base, path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            let ctx = |e: Error| Error::Data(format!("video {}: {e}", v.id));
            let labels = read_labels(&v.labels).map_err(ctx)?;
            let spatial = read_header(&v.spatial).map_err(ctx)?;
            if spatial.frame_count != labels.len() {
                return Err(Error::Data(format!(
                    "video {}: {} labels but {} spatial frames",
                    v.id,
                    labels.len(),
                    spatial.frame_count
                )));
            }
            if let Some(t) = &v.temporal {
                let temporal = read_header(t).map_err(ctx)?;
                if temporal.frame_count != labels.len() || temporal.dim != v.phases {
                    return Err(Error::Data(format!(
                        "video {}: temporal file is {}×{}, expected {}×{}",
                        v.id,
                        temporal.frame_count,
                        temporal.dim,
                        labels.len(),
                        v.phases
                    )));
                }
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= v.phases) {
                return Err(Error::Data(format!("video {}: label {bad} outside 0..{}", v.id, v.phases)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&VideoEntry> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Paths under the manifest's directory are written relative to it.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for v in &self.videos {
            let temporal = v.temporal.as_deref().map_or_else(|| "-".to_string(), |t| relative_to(base, t));
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                v.id,
                v.split,
                relative_to(base, &v.spatial),
                temporal,
                relative_to(base, &v.labels),
                v.phases
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = absolute_dir(path)?;
        write_bytes(path, self.to_text(&base).as_bytes())
    }
}

pub fn load_video(entry: &VideoEntry) -> Result<LoadedVideo> {
    let ctx = |e: Error| Error::Data(format!("video {}: {e}", entry.id));
    let spatial = read_embeddings(&entry.spatial).map_err(ctx)?;
    let temporal = entry.temporal.as_deref().map(read_embeddings).transpose().map_err(ctx)?;
    let labels = read_labels(&entry.labels).map_err(ctx)?;
    if labels.len() != spatial.rows() || temporal.as_ref().is_some_and(|t| t.rows() != labels.len()) {
        return Err(Error::Data(format!("video {}: label and embedding lengths differ", entry.id)));
    }
    Ok(LoadedVideo {
        id: entry.id.clone(),
        spatial,
        temporal,
        labels,
    })
}

/// Loads videos on up to `available_parallelism` threads, preserving order.
pub fn load_videos(entries: &[&VideoEntry]) -> Result<Vec<LoadedVideo>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(entries.len().max(1));
    if workers <= 1 {
        return entries.iter().map(|e| load_video(e)).collect();
    }
    let chunk = entries.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|e| load_video(e)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(entries.len());
        for h in handles {
            out.extend(h.join().expect("loader thread panicked")?);
        }
        Ok(out)
    })
}
