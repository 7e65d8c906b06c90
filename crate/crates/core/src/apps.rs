//! Motion segmentation and multi-frame densification.

use serde::{Deserialize, Serialize};

use crate::icp::{icp_align, rigid_flow, IcpConfig};
use crate::{solve, translate, Error, FlowField, PointCloud, Result, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionLabel {
    Static,
    Dynamic,
}

impl MotionLabel {
    /// Integer code used in PLY `label` properties.
    pub fn code(self) -> i32 {
        match self {
            MotionLabel::Static => 0,
            MotionLabel::Dynamic => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionLabels {
    pub labels: Vec<MotionLabel>,
    /// Meters.
    pub threshold: f64,
}

impl MotionLabels {
    pub fn codes(&self) -> Vec<i32> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    pub fn dynamic_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == MotionLabel::Dynamic).count()
    }
}

/// A point is dynamic when its flow is longer than `threshold` meters.
pub fn segment_by_motion(flow: &FlowField, threshold: f64) -> Result<MotionLabels> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be > 0, got {threshold}")));
    }
    let labels = flow
        .vectors()
        .iter()
        .map(|f| {
            if f.norm() > threshold {
                MotionLabel::Dynamic
            } else {
                MotionLabel::Static
            }
        })
        .collect();
    Ok(MotionLabels { labels, threshold })
}

/// Temporally ordered frames with a designated reference frame.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<PointCloud>,
    center: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<PointCloud>, center: usize) -> Result<Self> {
        if center >= frames.len() {
            return Err(Error::invalid(format!(
                "center index {center} out of range for {} frames",
                frames.len()
            )));
        }
        Ok(Self { frames, center })
    }

    pub fn frames(&self) -> &[PointCloud] {
        &self.frames
    }

    pub fn center_index(&self) -> usize {
        self.center
    }

    pub fn center(&self) -> &PointCloud {
        &self.frames[self.center]
    }

    /// Frame indices within `window` of the center, clipped to the sequence.
    pub fn window(&self, window: usize) -> std::ops::RangeInclusive<usize> {
        self.center.saturating_sub(window)..=(self.center + window).min(self.frames.len() - 1)
    }
}

/// How one frame is carried onto its temporal neighbor.
#[derive(Debug, Clone)]
pub enum Aligner {
    /// Non-rigid scene flow.
    Flow(SolverConfig),
    /// Single rigid transform per hop.
    Rigid(IcpConfig),
}

impl Aligner {
    fn carry(&self, cloud: &PointCloud, next: &PointCloud) -> Result<PointCloud> {
        let flow = match self {
            Aligner::Flow(cfg) => solve(cloud, next, cfg)?.flow,
            Aligner::Rigid(cfg) => rigid_flow(cloud, &icp_align(cloud, next, cfg)?.transform),
        };
        translate(cloud, &flow)
    }
}

/// Carry frame `from` onto the center frame hop by hop.
pub fn carry_to_center(seq: &FrameSequence, from: usize, aligner: &Aligner) -> Result<PointCloud> {
    let center = seq.center;
    let mut cloud = seq.frames[from].clone();
    let mut at = from;
    while at != center {
        let next = if at < center { at + 1 } else { at - 1 };
        cloud = aligner
            .carry(&cloud, &seq.frames[next])
            .map_err(|e| Error::Hop {
                from: at,
                to: next,
                source: Box::new(e),
            })?;
        at = next;
    }
    Ok(cloud)
}

/// Accumulate every frame within `window` of the center onto the center
/// frame using `aligner`. Output order: frames in index order, center
/// frame in place.
pub fn densify_with(seq: &FrameSequence, window: usize, aligner: &Aligner) -> Result<PointCloud> {
    let indices: Vec<usize> = seq.window(window).collect();
    let carried = crate::parallel::map_range(indices.len(), |k| {
        carry_to_center(seq, indices[k], aligner)
    });
    let carried = carried.into_iter().collect::<Result<Vec<_>>>()?;
    PointCloud::concat(carried.iter())
}

/// [`densify_with`] using scene flow.
pub fn densify(seq: &FrameSequence, config: &SolverConfig, window: usize) -> Result<PointCloud> {
    densify_with(seq, window, &Aligner::Flow(config.clone()))
}
