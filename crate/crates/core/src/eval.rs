//! Confusion matrices, per-class IoU and mIoU.

use crate::error::{Error, Result};
use crate::pointcloud::LabelArray;
use std::io::Write;

/// `C × C` counts; entry `(g, p)` is the number of points with ground truth
/// `g` predicted as `p`. Ignore-labeled points are never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes), "matrix must be square");
        Self {
            classes,
            counts: rows.concat(),
        }
    }

    /// Adds one count per non-ignored point.
    ///
    /// Fails without modifying `self` if any prediction or non-ignored label
    /// falls outside `[0, C)`.
    pub fn accumulate(&mut self, preds: &[u16], labels: &LabelArray) -> Result<()> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} predictions, {} labels",
                preds.len(),
                labels.len()
            )));
        }
        for (index, (&p, &g)) in preds.iter().zip(&labels.semantic).enumerate() {
            if g == labels.ignore_label {
                continue;
            }
            for label in [g, p] {
                if usize::from(label) >= self.classes {
                    return Err(Error::ClassOutOfRange {
                        index,
                        label,
                        num_classes: self.classes,
                    });
                }
            }
        }
        for (&p, &g) in preds.iter().zip(&labels.semantic) {
            if g != labels.ignore_label {
                self.counts[usize::from(g) * self.classes + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "class counts differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class was neither
    /// present nor predicted.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes that are not absent.
    pub fn miou(&self) -> Result<f64> {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::NoPresentClass);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Per-class rows `class,iou,present` followed by an `mIoU` summary row.
    pub fn write_report(&self, class_names: &[String], mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("metrics report", e);
        writeln!(w, "class,iou,present").map_err(io)?;
        for (c, iou) in self.class_iou().into_iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
            match iou {
                Some(v) => writeln!(w, "{name},{v:.6},true"),
                None => writeln!(w, "{name},,false"),
            }
            .map_err(io)?;
        }
        match self.miou() {
            Ok(m) => writeln!(w, "mIoU,{m:.6},true"),
            Err(_) => writeln!(w, "mIoU,,false"),
        }
        .map_err(io)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correctness {
    Correct,
    Incorrect,
    Ignored,
}

pub fn correctness_flags(preds: &[u16], labels: &LabelArray) -> Vec<Correctness> {
    assert_eq!(preds.len(), labels.len(), "predictions and labels must pair up");
    preds
        .iter()
        .zip(&labels.semantic)
        .map(|(&p, &g)| {
            if g == labels.ignore_label {
                Correctness::Ignored
            } else if p == g {
                Correctness::Correct
            } else {
                Correctness::Incorrect
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u16]) -> LabelArray {
        LabelArray::new(v.to_vec(), 255)
    }

    #[test]
    fn empty_and_all_ignored() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[], &labels(&[])).unwrap();
        cm.accumulate(&[0, 1], &labels(&[255, 255])).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(3));
        assert!(matches!(cm.miou(), Err(Error::NoPresentClass)));
    }

    #[test]
    fn out_of_range_reports_index() {
        let mut cm = ConfusionMatrix::new(3);
        let err = cm.accumulate(&[0, 3], &labels(&[0, 1])).unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { index: 1, label: 3, .. }));
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn hand_computed_iou() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]);
        let iou = cm.class_iou();
        assert_eq!(iou[0], Some(0.5));
        assert_eq!(iou[1], Some(4.0 / 7.0));
        assert!((cm.miou().unwrap() - 0.5357).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_absent() {
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&[0, 1, 1, 3], &labels(&[0, 1, 1, 3])).unwrap();
        assert_eq!(cm.class_iou(), vec![Some(1.0), Some(1.0), None, Some(1.0)]);
        assert_eq!(cm.miou().unwrap(), 1.0);
    }

    #[test]
    fn flags_by_hand() {
        let f = correctness_flags(&[0, 1, 2, 2, 4], &labels(&[0, 2, 2, 255, 3]));
        use Correctness::*;
        assert_eq!(f, vec![Correct, Incorrect, Correct, Ignored, Incorrect]);
        assert!(correctness_flags(&[1, 2], &labels(&[1, 2]))
            .iter()
            .all(|c| *c == Correct));
        assert!(correctness_flags(&[1, 2], &labels(&[255, 255]))
            .iter()
            .all(|c| *c == Ignored));
    }

    #[test]
    fn report_format() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![2, 4, 0], vec![0, 0, 0]]);
        let mut out = Vec::new();
        cm.write_report(&["a".into(), "b".into()], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "class,iou,present\na,0.500000,true\nb,0.571429,true\nclass_2,,false\nmIoU,0.535714,true\n"
        );
    }

    proptest! {
        #[test]
        fn accumulation_commutes(a in prop::collection::vec((0u16..4, 0u16..4), 0..50),
                                 b in prop::collection::vec((0u16..4, 0u16..4), 0..50)) {
            let split = |v: &[(u16, u16)]| (v.iter().map(|x| x.0).collect::<Vec<_>>(), labels(&v.iter().map(|x| x.1).collect::<Vec<_>>()));
            let (pa, la) = split(&a);
            let (pb, lb) = split(&b);
            let mut ab = ConfusionMatrix::new(4);
            ab.accumulate(&pa, &la).unwrap();
            ab.accumulate(&pb, &lb).unwrap();
            let mut ba = ConfusionMatrix::new(4);
            ba.accumulate(&pb, &lb).unwrap();
            ba.accumulate(&pa, &la).unwrap();
            prop_assert_eq!(&ab, &ba);
            let mut merged = ConfusionMatrix::new(4);
            let mut other = ConfusionMatrix::new(4);
            merged.accumulate(&pa, &la).unwrap();
            other.accumulate(&pb, &lb).unwrap();
            merged.merge(&other);
            prop_assert_eq!(merged, ab);
        }

        #[test]
        fn miou_invariant_under_relabeling(v in prop::collection::vec((0u16..4, 0u16..4), 1..60)) {
            let perm = [2u16, 0, 3, 1];
            let preds: Vec<u16> = v.iter().map(|x| x.0).collect();
            let truth: Vec<u16> = v.iter().map(|x| x.1).collect();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&preds, &labels(&truth)).unwrap();
            let mut cp = ConfusionMatrix::new(4);
            let pp: Vec<u16> = preds.iter().map(|&p| perm[usize::from(p)]).collect();
            let pt: Vec<u16> = truth.iter().map(|&t| perm[usize::from(t)]).collect();
            cp.accumulate(&pp, &labels(&pt)).unwrap();
            let (m1, m2) = (cm.miou().unwrap(), cp.miou().unwrap());
            prop_assert!((m1 - m2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&m1));
        }
    }
}
