use super::InstanceMask;

/// Overlap definition for the affinity matrix. The paper leaves "overlap"
/// undefined; IoU is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    /// Intersection over union.
    IoU,
    /// Intersection over the prediction area.
    IntersectionOverPrediction,
}

/// Overlap of a prediction and a detection mask, in `[0, 1]` (IoU).
pub fn overlap(pred: &InstanceMask, det: &InstanceMask) -> f64 {
    overlap_with(OverlapKind::IoU, pred, det)
}

pub fn overlap_with(kind: OverlapKind, pred: &InstanceMask, det: &InstanceMask) -> f64 {
    assert!(pred.same_dimensions(det), "overlap requires equal raster dimensions");
    let mut intersection = 0usize;
    let mut union = 0usize;
    let mut pred_area = 0usize;
    for (&a, &b) in pred.raw_pixels().iter().zip(det.raw_pixels()) {
        intersection += usize::from(a && b);
        union += usize::from(a || b);
        pred_area += usize::from(a);
    }
    let denom = match kind {
        OverlapKind::IoU => union,
        OverlapKind::IntersectionOverPrediction => pred_area,
    };
    if denom == 0 {
        0.0
    } else {
        intersection as f64 / denom as f64
    }
}

/// Flow-warped masks of live tracks, one prediction per track. Predictions
/// whose pixels all left the image are kept as empty masks and score zero
/// overlap against every detection.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    entries: Vec<(u64, InstanceMask)>,
}

impl PredictionSet {
    pub fn new(entries: Vec<(u64, InstanceMask)>) -> Self {
        PredictionSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn track_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn masks(&self) -> impl Iterator<Item = &InstanceMask> {
        self.entries.iter().map(|(_, m)| m)
    }
}

/// Matrix of prediction-detection overlap scores. Row `u` corresponds to
/// prediction/track `row_ids[u]`, column `v` to detection index `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    row_ids: Vec<u64>,
}

impl AffinityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in &rows {
            assert_eq!(row.len(), n_cols, "affinity rows must have equal length");
            data.extend_from_slice(row);
        }
        assert!(
            data.iter().all(|w| (0.0..=1.0).contains(w)),
            "affinity entries must lie in [0, 1]"
        );
        AffinityMatrix { rows: n_rows, cols: n_cols, data, row_ids: (0..n_rows as u64).collect() }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }
}

/// Builds the affinity matrix of overlaps between every prediction and
/// every detection. Entry computation is pure per entry and runs in
/// parallel across rows.
pub fn build_affinity(
    preds: &PredictionSet,
    dets: &[InstanceMask],
    kind: OverlapKind,
) -> AffinityMatrix {
    use rayon::prelude::*;
    let data: Vec<f64> = preds
        .entries
        .par_iter()
        .flat_map_iter(|(_, pred)| dets.iter().map(move |det| overlap_with(kind, pred, det)))
        .collect();
    AffinityMatrix {
        rows: preds.len(),
        cols: dets.len(),
        data,
        row_ids: preds.track_ids().collect(),
    }
}
