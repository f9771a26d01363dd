//! Synthetic embedding datasets with a known phase structure.
//!
//! Each video walks through every phase in order with random dwell times.
//! A frame's spatial embedding is its phase's cluster center plus isotropic
//! Gaussian noise of scale `sigma`. With probability `ambiguity` a frame
//! instead shows the center of an adjacent phase (previous or next), which a
//! per-frame classifier cannot resolve but temporal context can.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embedding::write_embeddings;
use super::labels::write_labels;
use super::manifest::{Manifest, Split, VideoEntry};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub phases: usize,
    pub videos: usize,
    pub frames: usize,
    pub sigma: f64,
    pub ambiguity: f64,
    pub spatial_dim: usize,
    /// Aggregation window the data is meant for; `frames` must cover it.
    pub window: usize,
    /// Leading videos assigned to the training split.
    pub train_videos: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            phases: 7,
            videos: 6,
            frames: 200,
            sigma: 1.0,
            ambiguity: 0.0,
            spatial_dim: 2048,
            window: 30,
            train_videos: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phases < 2 {
            return Err(Error::Config("synthetic data needs at least 2 phases".into()));
        }
        if self.videos == 0 || self.spatial_dim == 0 {
            return Err(Error::Config("videos and spatial_dim must be positive".into()));
        }
        if self.frames < self.window || self.frames < self.phases {
            return Err(Error::Config(format!(
                "frames ({}) must be at least the window ({}) and the phase count ({})",
                self.frames, self.window, self.phases
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::Config(format!("ambiguity {} must lie in [0, 1]", self.ambiguity)));
        }
        if self.train_videos > self.videos {
            return Err(Error::Config("more training videos than videos".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub id: String,
    pub split: Split,
    pub spatial: Matrix,
    pub labels: Vec<usize>,
}

/// Monotone phase sequence of length `frames` visiting every phase.
pub fn phase_sequence(phases: usize, frames: usize, rng: &mut impl Rng) -> Vec<usize> {
    let weights: Vec<f64> = (0..phases).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let spare = frames - phases;
    let mut lengths: Vec<usize> = weights.iter().map(|w| 1 + (spare as f64 * w / total) as usize).collect();
    let mut assigned: usize = lengths.iter().sum();
    while assigned < frames {
        lengths[rng.random_range(0..phases)] += 1;
        assigned += 1;
    }
    lengths.iter().enumerate().flat_map(|(p, &n)| std::iter::repeat_n(p, n)).collect()
}

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.phases).map(|_| gaussian_row(&mut rng, spec.spatial_dim)).collect();
    let mut videos = Vec::with_capacity(spec.videos);
    for v in 0..spec.videos {
        let labels = phase_sequence(spec.phases, spec.frames, &mut rng);
        let mut spatial = Matrix::zeros(spec.frames, spec.spatial_dim);
        for (t, &y) in labels.iter().enumerate() {
            let mut shown = y;
            if spec.ambiguity > 0.0 && rng.random_bool(spec.ambiguity) {
                shown = match (y, rng.random_bool(0.5)) {
                    (0, _) => 1,
                    (y, _) if y + 1 == spec.phases => y - 1,
                    (y, true) => y + 1,
                    (y, false) => y - 1,
                };
            }
            let row = spatial.row_mut(t);
            for (d, out) in row.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *out = centers[shown][d] + spec.sigma * noise;
            }
        }
        videos.push(SyntheticVideo {
            id: format!("video{v:02}"),
            split: if v < spec.train_videos { Split::Train } else { Split::Test },
            spatial,
            labels,
        });
    }
    Ok(videos)
}

/// Writes `<id>.spatial.tsve`, `<id>.labels` and `manifest.tsv` under `dir`.
pub fn write_dataset(spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    for video in generate(spec)? {
        let spatial = dir.join(format!("{}.spatial.tsve", video.id));
        let labels = dir.join(format!("{}.labels", video.id));
        write_embeddings(&spatial, &video.spatial)?;
        write_labels(&labels, &video.labels)?;
        manifest.videos.push(VideoEntry {
            id: video.id,
            split: video.split,
            spatial,
            temporal: None,
            labels,
            phases: spec.phases,
        });
    }
    manifest.save(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SynthSpec {
        SynthSpec {
            phases: 4,
            videos: 3,
            frames: 40,
            spatial_dim: 8,
            window: 5,
            train_videos: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn sigma_zero_collapses_each_phase_to_one_point() {
        let videos = generate(&SynthSpec { sigma: 0.0, ..small() }).unwrap();
        for v in &videos {
            for t in 1..v.labels.len() {
                let same = v.spatial.row(t) == v.spatial.row(t - 1);
                assert_eq!(same, v.labels[t] == v.labels[t - 1]);
            }
        }
        assert_eq!(videos[0].spatial.row(0), videos[1].spatial.row(0));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&small(), a.path()).unwrap();
        write_dataset(&small(), b.path()).unwrap();
        for name in ["manifest.tsv", "video00.spatial.tsve", "video02.labels"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        let m = Manifest::load(&a.path().join("manifest.tsv")).unwrap();
        assert_eq!(m.split(Split::Train).len(), 2);
        assert_eq!(m.split(Split::Test).len(), 1);
        let other = generate(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(other[0].spatial, generate(&small()).unwrap()[0].spatial);
    }

    #[test]
    fn ambiguity_shows_adjacent_centers() {
        let clean = generate(&SynthSpec { sigma: 0.0, ..small() }).unwrap();
        let noisy = generate(&SynthSpec { sigma: 0.0, ambiguity: 0.5, ..small() }).unwrap();
        let center = |p: usize| {
            let v = &clean[0];
            v.spatial.row(v.labels.iter().position(|&y| y == p).unwrap()).to_vec()
        };
        let mut swapped = 0;
        for (t, &y) in noisy[0].labels.iter().enumerate() {
            let row = noisy[0].spatial.row(t);
            let shown = (0..4).find(|&p| center(p) == row).unwrap();
            assert!(shown.abs_diff(y) <= 1);
            swapped += usize::from(shown != y);
        }
        assert!(swapped > 5, "{swapped}");
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec { phases: 1, ..small() }).is_err());
        assert!(generate(&SynthSpec { frames: 4, ..small() }).is_err());
        assert!(generate(&SynthSpec { sigma: -1.0, ..small() }).is_err());
        assert!(generate(&SynthSpec { ambiguity: 1.5, ..small() }).is_err());
        assert!(generate(&SynthSpec { train_videos: 4, ..small() }).is_err());
    }

    proptest! {
        #[test]
        fn sequences_are_monotone_and_complete(phases in 2usize..9, extra in 0usize..200, seed in any::<u64>()) {
            let frames = phases + extra;
            let seq = phase_sequence(phases, frames, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(seq.len(), frames);
            prop_assert!(seq.windows(2).all(|w| w[0] <= w[1] && w[1] - w[0] <= 1));
            prop_assert_eq!(seq[0], 0);
            prop_assert_eq!(*seq.last().unwrap(), phases - 1);
        }
    }
}
