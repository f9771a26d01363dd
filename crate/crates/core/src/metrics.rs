//! Phase-recognition metrics: video-level accuracy, per-phase precision,
//! recall and Jaccard index, confusion matrices and ribbon export.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::write_bytes;

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("empty phase sequence".into()));
    }
    Ok(())
}

/// Fraction of frames whose predicted phase equals the ground truth.
pub fn video_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Entry `(i, j)` counts frames of true phase `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    phases: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(phases: usize) -> Self {
        Self {
            phases,
            counts: vec![0; phases * phases],
        }
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.phases + pred]
    }

    fn add_video(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        check_pair(pred, truth)?;
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= self.phases || t >= self.phases {
                return Err(Error::Data(format!(
                    "phase label {} outside 0..{}",
                    p.max(t),
                    self.phases
                )));
            }
            self.counts[t * self.phases + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.phases).map(|j| self.get(truth, j)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.phases).map(|i| self.get(i, pred)).sum()
    }

    /// `(TP, FP, FN)` of one phase.
    pub fn counts_for(&self, phase: usize) -> (u64, u64, u64) {
        let tp = self.get(phase, phase);
        (tp, self.col_sum(phase) - tp, self.row_sum(phase) - tp)
    }

    pub fn phase_scores(&self, phase: usize) -> PhaseScores {
        let (tp, fp, fn_) = self.counts_for(phase);
        let ratio = |den: u64| (den > 0).then(|| tp as f64 / den as f64);
        PhaseScores {
            precision: ratio(tp + fp),
            recall: ratio(tp + fn_),
            jaccard: ratio(tp + fp + fn_),
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "truth\\pred")?;
        for j in 0..self.phases {
            write!(f, "\tP{j}")?;
        }
        for i in 0..self.phases {
            write!(f, "\nP{i}")?;
            for j in 0..self.phases {
                write!(f, "\t{}", self.get(i, j))?;
            }
        }
        Ok(())
    }
}

pub fn confusion(preds: &[Vec<usize>], truths: &[Vec<usize>], phases: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} predicted videos for {} ground-truth videos",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(phases);
    for (p, t) in preds.iter().zip(truths) {
        cm.add_video(p, t)?;
    }
    Ok(cm)
}

/// Per-phase scores; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub jaccard: Option<f64>,
}

/// Mean and sample standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                count,
            };
        }
        let mut sum = 0.0;
        for v in values {
            sum += v;
        }
        let mean = sum / count as f64;
        let std = if count > 1 {
            let mut ss = 0.0;
            for v in values {
                ss += (v - mean) * (v - mean);
            }
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedScores {
    pub precision: Summary,
    pub recall: Summary,
    pub jaccard: Summary,
}

fn phase_average(scores: &[PhaseScores]) -> AveragedScores {
    let collect = |f: fn(&PhaseScores) -> Option<f64>| -> Vec<f64> { scores.iter().filter_map(f).collect() };
    AveragedScores {
        precision: Summary::of(&collect(|s| s.precision)),
        recall: Summary::of(&collect(|s| s.recall)),
        jaccard: Summary::of(&collect(|s| s.jaccard)),
    }
}

/// How PR/RE/JA are aggregated for the headline numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Pool frame counts over all videos, score each phase, average phases.
    #[default]
    Pooled,
    /// Score and phase-average each video, then average videos.
    PerVideo,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Averaging::Pooled),
            "per-video" => Ok(Averaging::PerVideo),
            other => Err(Error::Config(format!("unknown averaging '{other}'"))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Pooled => "pooled",
            Averaging::PerVideo => "per-video",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub phases: usize,
    pub averaging: Averaging,
    pub video_accuracy: Vec<f64>,
    pub accuracy: Summary,
    pub confusion: ConfusionMatrix,
    /// Scores from pooled counts, one entry per phase.
    pub per_phase: Vec<PhaseScores>,
    /// Pooled counts; mean/std across phases.
    pub pooled: AveragedScores,
    /// Per-video phase averages; mean/std across videos.
    pub per_video: AveragedScores,
}

impl MetricReport {
    pub fn headline(&self) -> &AveragedScores {
        match self.averaging {
            Averaging::Pooled => &self.pooled,
            Averaging::PerVideo => &self.per_video,
        }
    }

    /// Phases with at least one undefined score.
    pub fn undefined_phases(&self) -> Vec<usize> {
        self.per_phase
            .iter()
            .enumerate()
            .filter(|(_, s)| s.precision.is_none() || s.recall.is_none() || s.jaccard.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn phase_metrics(
    preds: &[Vec<usize>],
    truths: &[Vec<usize>],
    phases: usize,
    averaging: Averaging,
) -> Result<MetricReport> {
    let cm = confusion(preds, truths, phases)?;
    if preds.is_empty() {
        return Err(Error::Data("no videos to evaluate".into()));
    }
    let video_accuracy = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| video_accuracy(p, t))
        .collect::<Result<Vec<_>>>()?;
    let per_phase: Vec<PhaseScores> = (0..phases).map(|c| cm.phase_scores(c)).collect();
    let pooled = phase_average(&per_phase);

    let mut video_pr = Vec::new();
    let mut video_re = Vec::new();
    let mut video_ja = Vec::new();
    for (p, t) in preds.iter().zip(truths) {
        let mut single = ConfusionMatrix::new(phases);
        single.add_video(p, t)?;
        let scores: Vec<PhaseScores> = (0..phases).map(|c| single.phase_scores(c)).collect();
        let avg = phase_average(&scores);
        for (dst, s) in [
            (&mut video_pr, avg.precision),
            (&mut video_re, avg.recall),
            (&mut video_ja, avg.jaccard),
        ] {
            if s.count > 0 {
                dst.push(s.mean);
            }
        }
    }

    Ok(MetricReport {
        phases,
        averaging,
        accuracy: Summary::of(&video_accuracy),
        video_accuracy,
        confusion: cm,
        per_phase,
        pooled,
        per_video: AveragedScores {
            precision: Summary::of(&video_pr),
            recall: Summary::of(&video_re),
            jaccard: Summary::of(&video_ja),
        },
    })
}

impl fmt::Display for MetricReport {
    /// Percentages, tab separated, one record per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: f64| 100.0 * v;
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{:.1}", pct(v)));
        writeln!(f, "metric\tscope\tmean\tstd\tcount")?;
        writeln!(
            f,
            "AC\tacross-videos\t{:.1}\t{:.1}\t{}",
            pct(self.accuracy.mean),
            pct(self.accuracy.std),
            self.accuracy.count
        )?;
        for (scope, s) in [("pooled-across-phases", &self.pooled), ("per-video-across-videos", &self.per_video)] {
            for (name, m) in [("PR", s.precision), ("RE", s.recall), ("JA", s.jaccard)] {
                writeln!(f, "{name}\t{scope}\t{:.1}\t{:.1}\t{}", pct(m.mean), pct(m.std), m.count)?;
            }
        }
        writeln!(f, "phase\tPR\tRE\tJA")?;
        for (i, s) in self.per_phase.iter().enumerate() {
            writeln!(f, "P{i}\t{}\t{}\t{}", opt(s.precision), opt(s.recall), opt(s.jaccard))?;
        }
        let undefined = self.undefined_phases();
        if !undefined.is_empty() {
            writeln!(f, "# excluded undefined scores for phases {undefined:?}")?;
        }
        write!(f, "{}", self.confusion)
    }
}

/// Fixed ribbon palette; phases beyond it get generated hues.
pub fn palette_color(phase: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 10] = [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [227, 119, 194],
        [127, 127, 127],
        [188, 189, 34],
        [23, 190, 207],
    ];
    if let Some(c) = BASE.get(phase) {
        return *c;
    }
    let h = (phase as u64).wrapping_mul(2_654_435_761);
    [(h >> 8) as u8, (h >> 16) as u8, (h >> 24) as u8]
}

/// Writes `<stem>.tsv` (per-frame truth/pred) and `<stem>.ppm` (binary P6,
/// one column per frame, truth row above prediction row).
pub fn export_ribbon(pred: &[usize], truth: &[usize], stem: &Path) -> Result<(PathBuf, PathBuf)> {
    check_pair(pred, truth)?;
    let text_path = stem.with_extension("tsv");
    let image_path = stem.with_extension("ppm");

    let mut text = String::from("frame\ttruth\tpred\n");
    for (t, (&y, &p)) in truth.iter().zip(pred).enumerate() {
        text.push_str(&format!("{t}\t{y}\t{p}\n"));
    }
    write_bytes(&text_path, text.as_bytes())?;

    let width = truth.len();
    let mut image = format!("P6\n{width} 2\n255\n").into_bytes();
    for row in [truth, pred] {
        for &phase in row {
            image.extend_from_slice(&palette_color(phase));
        }
    }
    write_bytes(&image_path, &image)?;
    Ok((text_path, image_path))
}

/// Reads a ribbon text file back as `(truth, pred)`.
pub fn read_ribbon_text(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::format(path, format!("line {}", i + 1)));
        if fields.len() != 3 {
            return Err(Error::format(path, format!("line {} has {} fields", i + 1, fields.len())));
        }
        truth.push(parse(fields[1])?);
        pred.push(parse(fields[2])?);
    }
    Ok((truth, pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(video_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(video_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(video_accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap(), 0.75);
        assert!(matches!(video_accuracy(&[0, 1], &[0]), Err(Error::Data(_))));
    }

    #[test]
    fn jaccard_hand_count() {
        let report = phase_metrics(&[vec![0, 0, 1, 1]], &[vec![0, 1, 0, 1]], 2, Averaging::Pooled).unwrap();
        assert_eq!(report.confusion.counts_for(0), (1, 1, 1));
        assert_eq!(report.per_phase[0].jaccard, Some(1.0 / 3.0));
        assert_eq!(report.per_phase[0].precision, Some(0.5));
    }

    #[test]
    fn perfect_predictions() {
        let truth = vec![vec![0, 0, 2, 2, 2], vec![2, 3]];
        let report = phase_metrics(&truth, &truth, 4, Averaging::Pooled).unwrap();
        for c in [0, 2, 3] {
            let s = report.per_phase[c];
            assert_eq!((s.precision, s.recall, s.jaccard), (Some(1.0), Some(1.0), Some(1.0)));
        }
        assert_eq!(report.per_phase[1].jaccard, None);
        assert_eq!(report.undefined_phases(), vec![1]);
        assert_eq!(report.pooled.jaccard.count, 3);
        assert_eq!(report.accuracy.mean, 1.0);
    }

    #[test]
    fn confusion_hand_tally() {
        let cm = confusion(&[vec![0, 1, 1, 2, 2, 0]], &[vec![0, 1, 2, 2, 0, 0]], 3).unwrap();
        let expected = [[2, 0, 1], [0, 1, 0], [0, 1, 1]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.get(i, j), expected[i][j]);
            }
        }
        assert_eq!(cm.total(), 6);
        let identity = confusion(&[vec![0, 1, 2]], &[vec![0, 1, 2]], 3).unwrap();
        assert!((0..3).all(|i| (0..3).all(|j| (identity.get(i, j) > 0) == (i == j))));
        assert!(confusion(&[vec![3]], &[vec![0]], 3).is_err());
    }

    #[test]
    fn ribbon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = vec![0, 1, 1, 3];
        let pred = vec![0, 1, 2, 3];
        let (text, image) = export_ribbon(&pred, &truth, &dir.path().join("video01")).unwrap();
        let bytes = fs::read(&image).unwrap();
        let header = b"P6\n4 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 4 * 2 * 3);
        assert_eq!(&bytes[header.len()..header.len() + 3], &palette_color(0));
        // Second row, third column is prediction 2.
        let offset = header.len() + (4 + 2) * 3;
        assert_eq!(&bytes[offset..offset + 3], &palette_color(2));
        assert_eq!(read_ribbon_text(&text).unwrap(), (truth.clone(), pred.clone()));

        let again = export_ribbon(&pred, &truth, &dir.path().join("again")).unwrap();
        assert_eq!(fs::read(&again.1).unwrap(), bytes);
        // A regular file where a directory is needed.
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, b"").unwrap();
        assert!(export_ribbon(&pred, &truth, &blocker.join("x")).is_err());
    }

    #[test]
    fn report_prints_percentages() {
        let truth = vec![vec![0, 1, 1, 0]];
        let text = phase_metrics(&truth, &truth, 2, Averaging::Pooled).unwrap().to_string();
        assert!(text.contains("AC\tacross-videos\t100.0"), "{text}");
    }

    fn sequences() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..40).prop_flat_map(|len| {
            (
                proptest::collection::vec(0usize..5, len),
                proptest::collection::vec(0usize..5, len),
            )
        })
    }

    proptest! {
        #[test]
        fn score_invariants((pred, truth) in sequences()) {
            let report = phase_metrics(std::slice::from_ref(&pred), std::slice::from_ref(&truth), 5, Averaging::Pooled).unwrap();
            for s in &report.per_phase {
                if let (Some(j), Some(p), Some(r)) = (s.jaccard, s.precision, s.recall) {
                    prop_assert!(j <= p.min(r));
                }
            }
            for c in 0..5 {
                let count = truth.iter().filter(|&&y| y == c).count() as u64;
                prop_assert_eq!(report.confusion.row_sum(c), count);
            }
            let mut idx: Vec<usize> = (0..pred.len()).collect();
            idx.reverse();
            idx.rotate_left(pred.len() / 3);
            let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
            let t2: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
            prop_assert_eq!(video_accuracy(&p2, &t2).unwrap(), video_accuracy(&pred, &truth).unwrap());
        }
    }
}
