use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, DetectionBox};
use crate::error::{Error, Result};

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Per-class counts over one patch population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub total: u64,
    pub classes: [ClassCounts; 5],
}

impl ConfusionCounts {
    pub fn validate(&self) -> Result<()> {
        for (c, k) in ClassLabel::ALL.iter().zip(&self.classes) {
            if k.total() != self.total {
                return Err(Error::Validation(format!(
                    "{c}: TP+FP+TN+FN = {} but {} patches",
                    k.total(),
                    self.total
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, c: ClassLabel) -> &ClassCounts {
        &self.classes[c.index()]
    }

    /// Pooled counts of several populations.
    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        let mut out = *self;
        out.total += other.total;
        for (a, b) in out.classes.iter_mut().zip(&other.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.tn += b.tn;
            a.fn_ += b.fn_;
        }
        out
    }
}

pub fn confusion_from_labels(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<ConfusionCounts> {
    if truth.len() != predicted.len() {
        return Err(Error::param(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cc = ConfusionCounts {
        total: truth.len() as u64,
        ..Default::default()
    };
    for (&t, &p) in truth.iter().zip(predicted) {
        for c in ClassLabel::ALL {
            let k = &mut cc.classes[c.index()];
            match (t == c, p == c) {
                (true, true) => k.tp += 1,
                (false, true) => k.fp += 1,
                (false, false) => k.tn += 1,
                (true, false) => k.fn_ += 1,
            }
        }
    }
    Ok(cc)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Patch-level metrics of one class; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub acc: Option<f64>,
    pub bacc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tnr: Option<f64>,
}

impl ClassMetrics {
    pub fn from_counts(k: &ClassCounts) -> Self {
        let recall = ratio(k.tp, k.tp + k.fn_);
        let tnr = ratio(k.tn, k.tn + k.fp);
        let bacc = match (recall, tnr) {
            (Some(r), Some(t)) => Some((r + t) / 2.0),
            _ => None,
        };
        Self {
            acc: ratio(k.tp + k.tn, k.total()),
            bacc,
            precision: ratio(k.tp, k.tp + k.fp),
            recall,
            tnr,
        }
    }
}

/// ACC, BACC, P, R and TNR for every class.
pub fn patch_metrics(counts: &ConfusionCounts) -> Result<[(ClassLabel, ClassMetrics); 5]> {
    counts.validate()?;
    Ok(ClassLabel::ALL.map(|c| (c, ClassMetrics::from_counts(counts.get(c)))))
}

/// Bunch-level counts: ground-truth clusters, true and false detections,
/// missed clusters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub gc: u64,
    pub t_gc: u64,
    pub f_gc: u64,
    pub n_gc: u64,
}

impl ClusterCounts {
    pub fn validate(&self) -> Result<()> {
        if self.t_gc + self.n_gc != self.gc {
            return Err(Error::Validation(format!(
                "T_GC + N_GC = {} but GC = {}",
                self.t_gc + self.n_gc,
                self.gc
            )));
        }
        Ok(())
    }

    pub fn merge(&self, o: &ClusterCounts) -> ClusterCounts {
        ClusterCounts {
            gc: self.gc + o.gc,
            t_gc: self.t_gc + o.t_gc,
            f_gc: self.f_gc + o.f_gc,
            n_gc: self.n_gc + o.n_gc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterMetrics {
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn cluster_metrics(k: &ClusterCounts) -> Result<ClusterMetrics> {
    k.validate()?;
    Ok(ClusterMetrics {
        acc: ratio(k.t_gc, k.gc),
        precision: ratio(k.t_gc, k.t_gc + k.f_gc),
        recall: ratio(k.t_gc, k.t_gc + k.n_gc),
    })
}

/// Mean over images of each defined per-image metric.
pub fn per_image_mean_cluster_metrics(images: &[ClusterCounts]) -> Result<ClusterMetrics> {
    let per: Vec<ClusterMetrics> = images.iter().map(cluster_metrics).collect::<Result<_>>()?;
    let mean = |f: fn(&ClusterMetrics) -> Option<f64>| {
        let v: Vec<f64> = per.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(ClusterMetrics {
        acc: mean(|m| m.acc),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
    })
}

/// When a matched box/cluster pair counts as a true detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum MatchRule {
    /// Any truth pixel inside the box.
    #[default]
    Overlap,
    /// Intersection over union, with union = box area + cluster pixels − overlap.
    Iou(f64),
}


/// Greedy one-to-one matching by descending overlap (truth pixels inside
/// the box); ties go to the lower box, then truth, index.
pub fn match_detections(boxes: &[DetectionBox], truths: &[Vec<(u32, u32)>], rule: MatchRule) -> ClusterCounts {
    let mut pairs = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        for (ti, t) in truths.iter().enumerate() {
            let overlap = t.iter().filter(|&&(x, y)| b.contains(x, y)).count() as u64;
            if overlap > 0 {
                pairs.push((overlap, bi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut box_used = vec![false; boxes.len()];
    let mut truth_used = vec![false; truths.len()];
    let mut t_gc = 0;
    for (overlap, bi, ti) in pairs {
        if box_used[bi] || truth_used[ti] {
            continue;
        }
        box_used[bi] = true;
        truth_used[ti] = true;
        let accept = match rule {
            MatchRule::Overlap => true,
            MatchRule::Iou(th) => {
                let union = boxes[bi].area() + truths[ti].len() as u64 - overlap;
                overlap as f64 / union as f64 >= th
            }
        };
        if accept {
            t_gc += 1;
        }
    }
    let gc = truths.len() as u64;
    ClusterCounts {
        gc,
        t_gc,
        f_gc: boxes.len() as u64 - t_gc,
        n_gc: gc - t_gc,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then 70/30 into pool/test and 75/25 of the pool into
/// train/validation, each boundary rounded down.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> Result<DatasetSplit<T>> {
    if items.len() < 4 {
        return Err(Error::param(format!("need at least 4 items to split, got {}", items.len())));
    }
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = items.len() * 7 / 10;
    let train = pool * 3 / 4;
    let test = v.split_off(pool);
    let validation = v.split_off(train);
    Ok(DatasetSplit {
        train: v,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(tp: u64, fn_: u64, tn: u64, fp: u64) -> ClassCounts {
        ClassCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn hand_table() {
        let m = ClassMetrics::from_counts(&k(9, 1, 89, 1));
        assert!((m.acc.unwrap() - 0.98).abs() < 1e-12);
        assert!((m.bacc.unwrap() - (0.9 + 89.0 / 90.0) / 2.0).abs() < 1e-12);
        assert!((m.bacc.unwrap() - 0.944444444444).abs() < 1e-9);
        assert!((m.precision.unwrap() - 0.9).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.9).abs() < 1e-12);
        assert!((m.tnr.unwrap() - 0.988888888889).abs() < 1e-9);
    }

    #[test]
    fn zero_positives_undefined() {
        let m = ClassMetrics::from_counts(&k(0, 0, 10, 0));
        assert_eq!(m.recall, None);
        assert_eq!(m.bacc, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.tnr, Some(1.0));
    }

    #[test]
    fn perfect_classifier() {
        let labels: Vec<ClassLabel> = (0..50).map(|i| ClassLabel::ALL[i % 5]).collect();
        let cc = confusion_from_labels(&labels, &labels).unwrap();
        for (_, m) in patch_metrics(&cc).unwrap() {
            for v in [m.acc, m.bacc, m.precision, m.recall, m.tnr] {
                assert_eq!(v, Some(1.0));
            }
        }
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let mut cc = ConfusionCounts {
            total: 100,
            classes: [k(9, 1, 89, 1); 5],
        };
        assert!(patch_metrics(&cc).is_ok());
        cc.classes[2].tn = 3;
        assert!(matches!(patch_metrics(&cc), Err(Error::Validation(_))));
        assert!(cluster_metrics(&ClusterCounts { gc: 3, t_gc: 1, f_gc: 0, n_gc: 1 }).is_err());
    }

    #[test]
    fn cluster_examples() {
        let m = cluster_metrics(&ClusterCounts { gc: 10, t_gc: 8, f_gc: 1, n_gc: 2 }).unwrap();
        assert!((m.acc.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.precision.unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.8).abs() < 1e-12);
        let p = cluster_metrics(&ClusterCounts { gc: 5, t_gc: 5, f_gc: 0, n_gc: 0 }).unwrap();
        assert_eq!((p.acc, p.precision, p.recall), (Some(1.0), Some(1.0), Some(1.0)));
        let mean = per_image_mean_cluster_metrics(&[
            ClusterCounts { gc: 10, t_gc: 8, f_gc: 1, n_gc: 2 },
            ClusterCounts { gc: 5, t_gc: 5, f_gc: 0, n_gc: 0 },
        ])
        .unwrap();
        assert!((mean.acc.unwrap() - 0.9).abs() < 1e-12);
    }

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> DetectionBox {
        DetectionBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        }
    }

    fn square(x0: u32, y0: u32, n: u32) -> Vec<(u32, u32)> {
        (y0..y0 + n).flat_map(|y| (x0..x0 + n).map(move |x| (x, y))).collect()
    }

    #[test]
    fn matching_examples() {
        let t = vec![square(10, 10, 5)];
        let exact = match_detections(&[bx(10, 10, 14, 14)], &t, MatchRule::Overlap);
        assert_eq!(exact, ClusterCounts { gc: 1, t_gc: 1, f_gc: 0, n_gc: 0 });
        let miss = match_detections(&[bx(30, 30, 35, 35)], &t, MatchRule::Overlap);
        assert_eq!(miss, ClusterCounts { gc: 1, t_gc: 0, f_gc: 1, n_gc: 1 });
        let dup = match_detections(&[bx(10, 10, 12, 12), bx(10, 10, 14, 14)], &t, MatchRule::Overlap);
        assert_eq!(dup, ClusterCounts { gc: 1, t_gc: 1, f_gc: 1, n_gc: 0 });
        // Box 4× the cluster area: IoU 25/100.
        let loose = [bx(10, 10, 19, 19)];
        assert_eq!(match_detections(&loose, &t, MatchRule::Iou(0.25)).t_gc, 1);
        assert_eq!(match_detections(&loose, &t, MatchRule::Iou(0.3)).t_gc, 0);
        assert_eq!(match_detections(&loose, &t, MatchRule::Iou(0.3)).f_gc, 1);
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..100).collect();
        let s = split_dataset(&items, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (52, 18, 30));
        assert_eq!(split_dataset(&items, 3).unwrap(), s);
        let s = split_dataset(&items[..85], 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (44, 15, 26));
        let mut all: Vec<u32> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items[..85]);
        assert!(split_dataset(&items[..3], 0).is_err());
    }

    proptest! {
        #[test]
        fn bacc_identity(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
            let m = ClassMetrics::from_counts(&ClassCounts { tp, fp, tn, fn_ });
            if let (Some(r), Some(t), Some(b)) = (m.recall, m.tnr, m.bacc) {
                prop_assert_eq!(b, (r + t) / 2.0);
            }
        }

        #[test]
        fn cluster_identities(gc in 0u64..50, t_frac in 0.0f64..=1.0, f in 0u64..20) {
            let t = (gc as f64 * t_frac).floor() as u64;
            let m = cluster_metrics(&ClusterCounts { gc, t_gc: t, f_gc: f, n_gc: gc - t }).unwrap();
            if let Some(a) = m.acc {
                prop_assert!(a <= 1.0);
                prop_assert_eq!(m.recall, Some(a));
            }
        }

        #[test]
        fn confusion_consistent(pairs in prop::collection::vec((0usize..5, 0usize..5), 0..200)) {
            let t: Vec<ClassLabel> = pairs.iter().map(|p| ClassLabel::ALL[p.0]).collect();
            let p: Vec<ClassLabel> = pairs.iter().map(|p| ClassLabel::ALL[p.1]).collect();
            let cc = confusion_from_labels(&t, &p).unwrap();
            prop_assert!(cc.validate().is_ok());
        }
    }
}
