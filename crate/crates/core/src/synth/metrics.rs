//! Toy-scale tracking metrics.
//!
//! Per frame, predictions are matched to visible ground-truth masks greedily
//! by IoU (threshold 0.5, highest first). Over the sequence:
//!
//! * `mean_iou`: mean IoU of matched pairs, 0 when nothing matched;
//! * `id_switches`: times a ground-truth object is matched to a different
//!   track id than at its previous match;
//! * `smotsa`: `(Σ matched IoU - false positives - id switches) / gt masks`,
//!   counting only non-empty masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::MaskMap;

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_iou: f64,
    pub id_switches: usize,
    pub smotsa: f64,
    pub matched: usize,
    pub false_positives: usize,
    pub gt_masks: usize,
}

/// One predicted mask with its track id.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<'a> {
    pub track_id: u64,
    pub mask: &'a MaskMap,
}

/// Greedy highest-first matching of `(score, a, b)` triples, ties broken by
/// `(a, b)`. Returns matched pairs.
pub fn greedy_match(mut candidates: Vec<(f64, usize, usize)>) -> Vec<(usize, usize, f64)> {
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = Vec::new();
    let mut used_b = Vec::new();
    let mut out = Vec::new();
    for (s, a, b) in candidates {
        if !used_a.contains(&a) && !used_b.contains(&b) {
            used_a.push(a);
            used_b.push(b);
            out.push((a, b, s));
        }
    }
    out
}

/// Scores `pred` against `gt_masks[frame][object]` with identities `gt_ids`.
pub fn evaluate(pred: &[Vec<Prediction<'_>>], gt_masks: &[Vec<MaskMap>], gt_ids: &[u64]) -> Result<Metrics> {
    if pred.len() != gt_masks.len() {
        return Err(Error::FrameCountMismatch { pred: pred.len(), gt: gt_masks.len() });
    }
    let mut last: Vec<Option<u64>> = vec![None; gt_ids.len()];
    let mut iou_sum = 0.0;
    let mut m = Metrics { mean_iou: 0.0, id_switches: 0, smotsa: 0.0, matched: 0, false_positives: 0, gt_masks: 0 };
    for (preds, gts) in pred.iter().zip(gt_masks) {
        Error::check_dim("ground-truth objects", gt_ids.len(), gts.len())?;
        m.gt_masks += gts.iter().filter(|g| !g.is_empty()).count();
        let mut cands = Vec::new();
        for (pi, p) in preds.iter().enumerate() {
            for (gi, g) in gts.iter().enumerate() {
                let iou = p.mask.iou(g);
                if iou >= MATCH_IOU {
                    cands.push((iou, pi, gi));
                }
            }
        }
        let matches = greedy_match(cands);
        m.false_positives += preds.iter().filter(|p| !p.mask.is_empty()).count()
            - matches.iter().filter(|(pi, _, _)| !preds[*pi].mask.is_empty()).count();
        for (pi, gi, iou) in matches {
            iou_sum += iou;
            m.matched += 1;
            let id = preds[pi].track_id;
            if let Some(prev) = last[gi] {
                if prev != id {
                    m.id_switches += 1;
                }
            }
            last[gi] = Some(id);
        }
    }
    m.mean_iou = if m.matched > 0 { iou_sum / m.matched as f64 } else { 0.0 };
    m.smotsa = if m.gt_masks > 0 {
        (iou_sum - m.false_positives as f64 - m.id_switches as f64) / m.gt_masks as f64
    } else {
        0.0
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(x0: usize) -> MaskMap {
        MaskMap::from_fn(4, 8, |y, x| y < 2 && (x0..x0 + 2).contains(&x))
    }

    #[test]
    fn perfect_prediction() {
        let gt = vec![vec![block(0), block(4)]; 3];
        let pred: Vec<Vec<Prediction>> = gt
            .iter()
            .map(|f| f.iter().enumerate().map(|(i, m)| Prediction { track_id: i as u64 + 10, mask: m }).collect())
            .collect();
        let m = evaluate(&pred, &gt, &[0, 1]).unwrap();
        assert_eq!(m.mean_iou, 1.0);
        assert_eq!(m.id_switches, 0);
        assert_eq!(m.smotsa, 1.0);
    }

    #[test]
    fn empty_predictions() {
        let gt = vec![vec![block(0)]; 2];
        let m = evaluate(&[vec![], vec![]], &gt, &[0]).unwrap();
        assert_eq!(m.mean_iou, 0.0);
        assert!(m.smotsa <= 0.0);
        assert!(matches!(evaluate(&[vec![]], &gt, &[0]), Err(Error::FrameCountMismatch { pred: 1, gt: 2 })));
    }

    #[test]
    fn one_swap_is_one_switch() {
        // frame 0: track 1 on object A, track 2 on B; frame 1: swapped
        let (a, b) = (block(0), block(4));
        let gt = vec![vec![a.clone(), b.clone()], vec![a.clone(), b.clone()]];
        let pred = vec![
            vec![Prediction { track_id: 1, mask: &a }, Prediction { track_id: 2, mask: &b }],
            vec![Prediction { track_id: 2, mask: &a }, Prediction { track_id: 1, mask: &b }],
        ];
        let m = evaluate(&pred, &gt, &[0, 1]).unwrap();
        assert_eq!(m.id_switches, 2);
        let pred = vec![
            vec![Prediction { track_id: 1, mask: &a }, Prediction { track_id: 2, mask: &b }],
            vec![Prediction { track_id: 3, mask: &a }, Prediction { track_id: 2, mask: &b }],
        ];
        let m = evaluate(&pred, &gt, &[0, 1]).unwrap();
        assert_eq!(m.id_switches, 1);
        assert!((m.smotsa - 3.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_prediction_is_false_positive() {
        let gt = vec![vec![block(0)]];
        let stray = block(5);
        let pred = vec![vec![Prediction { track_id: 1, mask: &gt[0][0] }, Prediction { track_id: 2, mask: &stray }]];
        let m = evaluate(&pred, &gt, &[0]).unwrap();
        assert_eq!(m.false_positives, 1);
        assert_eq!(m.smotsa, 0.0);
    }

    #[test]
    fn greedy_prefers_highest() {
        let m = greedy_match(vec![(0.6, 0, 0), (0.9, 0, 1), (0.7, 1, 1), (0.5, 1, 0)]);
        assert_eq!(m, vec![(0, 1, 0.9), (1, 0, 0.5)]);
    }
}
