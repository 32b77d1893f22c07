use std::collections::BTreeMap;

use super::{
    assign, build_affinity, FlowField, InstanceMask, PredictionSet, Side, TrackingConfig,
    TrackingError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    /// Unmatched for the given number of consecutive frames.
    Lost(u32),
}

/// One tracked object instance. The left camera is the canonical owner:
/// `left_masks` holds the confirmed detections, `right_masks` the masks
/// attached by stereo association.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    /// Instance label of the spawning detection.
    pub category: u32,
    pub left_masks: BTreeMap<usize, InstanceMask>,
    pub right_masks: BTreeMap<usize, InstanceMask>,
    pub status: TrackStatus,
    /// Mask the next prediction is warped from: the latest confirmed
    /// detection while active, the previous prediction while lost. Always
    /// lives at the tracker's current frame, left side. May be empty.
    prediction_basis: InstanceMask,
}

/// Tracker state over a stereo sequence, updated single-threaded in frame
/// order.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    pub tracks: Vec<Track>,
    /// Tracks that exceeded the lost budget, kept for inspection.
    pub terminated: Vec<Track>,
    next_id: u64,
    current_frame: Option<usize>,
}

impl TrackerState {
    pub fn new() -> Self {
        TrackerState::default()
    }

    pub fn current_frame(&self) -> Option<usize> {
        self.current_frame
    }

    pub fn active_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.status == TrackStatus::Active)
    }

    /// Seeds the tracker with the detections of the first frame; every
    /// detection spawns a track.
    pub fn observe_initial(
        &mut self,
        frame_index: usize,
        detections: Vec<InstanceMask>,
        config: &TrackingConfig,
    ) -> Result<(), TrackingError> {
        if self.current_frame.is_some() {
            return Err(TrackingError::FrameOrderError {
                tracker_frame: self.current_frame.unwrap(),
                flow_source: frame_index,
                flow_target: frame_index,
            });
        }
        for det in detections {
            if det.area() >= config.min_mask_area {
                self.spawn(det);
            }
        }
        self.current_frame = Some(frame_index);
        Ok(())
    }

    /// Temporal step: associates left detections of frame `i+1` with the
    /// tracks of frame `i` through the left-to-next-left flow field.
    /// Matched tracks extend, unmatched detections spawn, unmatched tracks
    /// age and are terminated after `max_lost` missing frames.
    pub fn step_temporal(
        &mut self,
        flow_ln: &FlowField,
        dets_next_left: Vec<InstanceMask>,
        config: &TrackingConfig,
    ) -> Result<(), TrackingError> {
        let current = self.current_frame.unwrap_or(flow_ln.source_frame);
        if flow_ln.source_frame != current
            || flow_ln.target_frame != current + 1
            || flow_ln.source_side != Side::Left
            || flow_ln.target_side != Side::Left
        {
            return Err(TrackingError::FrameOrderError {
                tracker_frame: current,
                flow_source: flow_ln.source_frame,
                flow_target: flow_ln.target_frame,
            });
        }
        let next = current + 1;
        for det in &dets_next_left {
            if det.frame_index != next || det.side != Side::Left {
                return Err(TrackingError::FlowMismatch {
                    expected: format!("detections at frame {next} left"),
                    got: format!("detection at frame {} {}", det.frame_index, det.side),
                });
            }
        }
        let detections: Vec<InstanceMask> = dets_next_left
            .into_iter()
            .filter(|d| d.area() >= config.min_mask_area)
            .collect();

        // Predict every live track into the next frame. A prediction whose
        // pixels all left the image is kept as an empty mask: it scores
        // zero overlap and the track simply goes unmatched.
        let predictions: Vec<InstanceMask> = self
            .tracks
            .iter()
            .map(|track| match flow_ln.warp_mask(&track.prediction_basis) {
                Ok(warped) => Ok(warped),
                Err(TrackingError::EmptyPrediction) => Ok(InstanceMask::empty(
                    next,
                    Side::Left,
                    track.prediction_basis.instance_label,
                    flow_ln.width(),
                    flow_ln.height(),
                )),
                Err(other) => Err(other),
            })
            .collect::<Result<_, _>>()?;

        let pred_set = PredictionSet::new(
            self.tracks.iter().map(|t| t.id).zip(predictions.iter().cloned()).map(|(id, m)| (id, m)).collect(),
        );
        let affinity = build_affinity(&pred_set, &detections, config.overlap_kind);
        let matches = assign(&affinity, config.min_overlap);

        let mut det_matched = vec![false; detections.len()];
        let mut track_matched = vec![false; self.tracks.len()];
        for &(row, col) in &matches {
            track_matched[row] = true;
            det_matched[col] = true;
            let track = &mut self.tracks[row];
            track.left_masks.insert(next, detections[col].clone());
            track.prediction_basis = detections[col].clone();
            track.status = TrackStatus::Active;
        }

        for (idx, track) in self.tracks.iter_mut().enumerate() {
            if !track_matched[idx] {
                let lost = match track.status {
                    TrackStatus::Active => 1,
                    TrackStatus::Lost(n) => n + 1,
                };
                track.status = TrackStatus::Lost(lost);
                track.prediction_basis = predictions[idx].clone();
            }
        }
        let max_lost = config.max_lost;
        let (live, dead): (Vec<Track>, Vec<Track>) = self
            .tracks
            .drain(..)
            .partition(|t| !matches!(t.status, TrackStatus::Lost(n) if n >= max_lost));
        self.tracks = live;
        self.terminated.extend(dead);

        for (idx, det) in detections.into_iter().enumerate() {
            if !det_matched[idx] {
                self.spawn(det);
            }
        }

        self.current_frame = Some(next);
        Ok(())
    }

    /// Stereo step: warps the current left masks into the right image and
    /// attaches matched right detections to their tracks. Unmatched right
    /// detections are discarded; right-only tracks never exist.
    pub fn associate_stereo(
        &mut self,
        flow_lr: &FlowField,
        dets_right: Vec<InstanceMask>,
        config: &TrackingConfig,
    ) -> Result<(), TrackingError> {
        let current = self.current_frame.ok_or(TrackingError::FlowMismatch {
            expected: "an initialized tracker".to_string(),
            got: "empty tracker state".to_string(),
        })?;
        if flow_lr.source_frame != current
            || flow_lr.target_frame != current
            || flow_lr.source_side != Side::Left
            || flow_lr.target_side != Side::Right
        {
            return Err(TrackingError::FlowMismatch {
                expected: format!("flow left -> right at frame {current}"),
                got: format!(
                    "flow {} {} -> {} {}",
                    flow_lr.source_frame, flow_lr.source_side, flow_lr.target_frame, flow_lr.target_side
                ),
            });
        }
        for det in &dets_right {
            if det.frame_index != current || det.side != Side::Right {
                return Err(TrackingError::FlowMismatch {
                    expected: format!("detections at frame {current} right"),
                    got: format!("detection at frame {} {}", det.frame_index, det.side),
                });
            }
        }
        let detections: Vec<InstanceMask> = dets_right
            .into_iter()
            .filter(|d| d.area() >= config.min_mask_area)
            .collect();

        // Only tracks confirmed in the current left image predict into the
        // right image.
        let mut rows: Vec<usize> = Vec::new();
        let mut entries: Vec<(u64, InstanceMask)> = Vec::new();
        for (idx, track) in self.tracks.iter().enumerate() {
            if let Some(mask) = track.left_masks.get(&current) {
                let warped = match flow_lr.warp_mask(mask) {
                    Ok(warped) => warped,
                    Err(TrackingError::EmptyPrediction) => InstanceMask::empty(
                        current,
                        Side::Right,
                        mask.instance_label,
                        flow_lr.width(),
                        flow_lr.height(),
                    ),
                    Err(other) => return Err(other),
                };
                rows.push(idx);
                entries.push((track.id, warped));
            }
        }

        let pred_set = PredictionSet::new(entries);
        let affinity = build_affinity(&pred_set, &detections, config.overlap_kind);
        for (row, col) in assign(&affinity, config.min_overlap) {
            let track = &mut self.tracks[rows[row]];
            track.right_masks.insert(current, detections[col].clone());
        }
        Ok(())
    }

    fn spawn(&mut self, det: InstanceMask) {
        self.tracks.push(Track {
            id: self.next_id,
            category: det.instance_label,
            left_masks: BTreeMap::from([(det.frame_index, det.clone())]),
            right_masks: BTreeMap::new(),
            status: TrackStatus::Active,
            prediction_basis: det,
        });
        self.next_id += 1;
    }
}
