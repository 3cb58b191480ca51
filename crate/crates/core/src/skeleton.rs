//! Pose data types, the OpenPose/COCO-18 joint ordering and limb topology,
//! pixel <-> normalized coordinate conversion and a few geometric helpers.
//!
//! Normalized coordinates live in `[-1, 1]` with the origin at the image
//! center, `+x` to the right and `+y` down. Invisible ground-truth joints are
//! parked at the origin.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 18;

/// Side length of the square frame every corpus is resampled to.
pub const IMAGE_SIDE: f64 = 256.0;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
];

pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
}

/// The 17 limbs OpenPose draws for its 18-keypoint body model.
pub const OPENPOSE_18_EDGES: [(usize, usize); 17] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub x: f64,
    pub y: f64,
}

impl Keypoint2D {
    pub const ORIGIN: Keypoint2D = Keypoint2D { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Keypoint2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Joint positions in OpenPose-18 order.
///
/// The length is checked by [`validate_sample`] rather than by the type so
/// that malformed records can still be represented and reported on.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose(pub Vec<Keypoint2D>);

impl Pose {
    pub fn new(joints: Vec<Keypoint2D>) -> Self {
        Self(joints)
    }

    pub fn origin() -> Self {
        Self(vec![Keypoint2D::ORIGIN; NUM_JOINTS])
    }

    /// Builds a pose from 36 interleaved `x, y` values.
    pub fn from_flat(values: &[f64]) -> Self {
        Self(values.chunks_exact(2).map(|c| Keypoint2D::new(c[0], c[1])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|k| [k.x, k.y]).collect()
    }

    pub fn joints(&self) -> &[Keypoint2D] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        Pose(self.0.iter().map(|k| Keypoint2D::new(k.x + dx, k.y + dy)).collect())
    }

    pub fn scaled(&self, factor: f64) -> Pose {
        Pose(
            self.0
                .iter()
                .map(|k| Keypoint2D::new(k.x * factor, k.y * factor))
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for Pose {
    type Output = Keypoint2D;

    fn index(&self, index: usize) -> &Keypoint2D {
        &self.0[index]
    }
}

impl std::ops::IndexMut<usize> for Pose {
    fn index_mut(&mut self, index: usize) -> &mut Keypoint2D {
        &mut self.0[index]
    }
}

/// Per-joint visibility: exactly 0 or 1 for ground truth, a probability for
/// predictions. Doubles as the coordinate-loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Visibility(pub Vec<f64>);

impl Visibility {
    pub fn all_visible() -> Self {
        Self(vec![1.0; NUM_JOINTS])
    }

    pub fn all_invisible() -> Self {
        Self(vec![0.0; NUM_JOINTS])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_visible(&self, joint: usize) -> bool {
        self.0[joint] > 0.5
    }

    pub fn visible_count(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0.5).count()
    }
}

impl std::ops::Index<usize> for Visibility {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    edges: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &edges {
            if i >= NUM_JOINTS || j >= NUM_JOINTS {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) references a joint outside 0..{NUM_JOINTS}"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-edge on joint {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Validation(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self { edges })
    }

    pub fn openpose18() -> Self {
        Self {
            edges: OPENPOSE_18_EDGES.to_vec(),
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::openpose18()
    }
}

/// One caption paired with its ground-truth pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub id: String,
    pub caption: String,
    pub pose: Pose,
    pub visibility: Visibility,
    pub source_width: u32,
    pub source_height: u32,
}

pub fn normalize_coords(px: (f64, f64), width: f64, height: f64) -> Result<Keypoint2D> {
    if !(px.0.is_finite() && px.1.is_finite() && width.is_finite() && height.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite pixel coordinate ({}, {}) at {width}x{height}",
            px.0, px.1
        )));
    }
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::Validation(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }
    Ok(Keypoint2D::new(2.0 * px.0 / width - 1.0, 2.0 * px.1 / height - 1.0))
}

pub fn denormalize_coords(kp: Keypoint2D, width: f64, height: f64) -> (f64, f64) {
    ((kp.x + 1.0) * width / 2.0, (kp.y + 1.0) * height / 2.0)
}

/// Euclidean length of every limb, in normalized units.
pub fn edge_lengths(pose: &Pose, topo: &SkeletonTopology) -> Vec<f64> {
    topo.edges().iter().map(|&(i, j)| pose[i].distance(&pose[j])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    JointCount(usize),
    VisibilityCount(usize),
    VisibilityNotBinary { joint: usize, value: f64 },
    NonFiniteCoordinate { joint: usize },
    CoordinateOutOfRange { joint: usize, x: f64, y: f64 },
    EmptyCaption,
    EmptyId,
    BadSourceSize { width: u32, height: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::JointCount(n) => write!(f, "joint count ≠ 18 (found {n})"),
            Violation::VisibilityCount(n) => write!(f, "visibility count ≠ 18 (found {n})"),
            Violation::VisibilityNotBinary { joint, value } => {
                write!(f, "visibility not binary (joint {joint}: {value})")
            }
            Violation::NonFiniteCoordinate { joint } => {
                write!(f, "non-finite coordinate at joint {joint}")
            }
            Violation::CoordinateOutOfRange { joint, x, y } => {
                write!(f, "coordinate out of range at joint {joint}: ({x}, {y})")
            }
            Violation::EmptyCaption => write!(f, "empty caption"),
            Violation::EmptyId => write!(f, "empty id"),
            Violation::BadSourceSize { width, height } => {
                write!(f, "source dimensions must be positive, got {width}x{height}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        Err(Error::Validation(msgs.join("; ")))
    }
}

/// Checks every sample invariant and reports all violations found.
pub fn validate_sample(s: &PoseSample) -> ValidationReport {
    let mut violations = Vec::new();
    if s.id.is_empty() {
        violations.push(Violation::EmptyId);
    }
    if s.caption.trim().is_empty() {
        violations.push(Violation::EmptyCaption);
    }
    if s.source_width == 0 || s.source_height == 0 {
        violations.push(Violation::BadSourceSize {
            width: s.source_width,
            height: s.source_height,
        });
    }
    if s.pose.len() != NUM_JOINTS {
        violations.push(Violation::JointCount(s.pose.len()));
    }
    if s.visibility.0.len() != NUM_JOINTS {
        violations.push(Violation::VisibilityCount(s.visibility.0.len()));
    }
    for (joint, &value) in s.visibility.0.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            violations.push(Violation::VisibilityNotBinary { joint, value });
        }
    }
    for (joint, kp) in s.pose.joints().iter().enumerate() {
        if !kp.is_finite() {
            violations.push(Violation::NonFiniteCoordinate { joint });
        } else if kp.x.abs() > 1.0 || kp.y.abs() > 1.0 {
            violations.push(Violation::CoordinateOutOfRange {
                joint,
                x: kp.x,
                y: kp.y,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PoseSample {
        PoseSample {
            id: "s0".into(),
            caption: "a person standing".into(),
            pose: Pose::origin(),
            visibility: Visibility::all_visible(),
            source_width: 256,
            source_height: 256,
        }
    }

    #[test]
    fn normalize_examples() {
        let c = normalize_coords((128.0, 128.0), 256.0, 256.0).unwrap();
        assert_eq!(c, Keypoint2D::new(0.0, 0.0));
        let tl = normalize_coords((0.0, 0.0), 256.0, 256.0).unwrap();
        assert_eq!(tl, Keypoint2D::new(-1.0, -1.0));
        // 2*192/256 - 1 = 0.5 ; 2*64/256 - 1 = -0.5
        let p = normalize_coords((192.0, 64.0), 256.0, 256.0).unwrap();
        assert_eq!(p, Keypoint2D::new(0.5, -0.5));
    }

    #[test]
    fn normalize_rejects_bad_input() {
        assert!(normalize_coords((f64::NAN, 0.0), 256.0, 256.0).is_err());
        assert!(normalize_coords((0.0, f64::INFINITY), 256.0, 256.0).is_err());
        assert!(normalize_coords((0.0, 0.0), 0.0, 256.0).is_err());
    }

    #[test]
    fn edge_length_examples() {
        let topo = SkeletonTopology::openpose18();
        assert!(edge_lengths(&Pose::origin(), &topo).iter().all(|&l| l == 0.0));

        let mut pose = Pose::origin();
        pose[1] = Keypoint2D::new(0.3, 0.4);
        let single = SkeletonTopology::new(vec![(0, 1)]).unwrap();
        assert!((edge_lengths(&pose, &single)[0] - 0.5).abs() < 1e-15);

        let moved = pose.translated(0.2, 0.2);
        let a = edge_lengths(&pose, &topo);
        let b = edge_lengths(&moved, &topo);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn openpose_topology_is_valid() {
        let topo = SkeletonTopology::new(OPENPOSE_18_EDGES.to_vec()).unwrap();
        assert_eq!(topo.len(), 17);
        assert!(SkeletonTopology::new(vec![(3, 3)]).is_err());
        assert!(SkeletonTopology::new(vec![(1, 2), (2, 1)]).is_err());
        assert!(SkeletonTopology::new(vec![(0, 18)]).is_err());
    }

    #[test]
    fn validation_reports_violations() {
        assert!(validate_sample(&sample()).is_ok());

        let mut s = sample();
        s.visibility.0[3] = 0.5;
        let report = validate_sample(&s);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].to_string().starts_with("visibility not binary"));

        let mut s = sample();
        s.pose.0.pop();
        let report = validate_sample(&s);
        assert!(report.violations[0].to_string().starts_with("joint count ≠ 18"));

        let mut s = sample();
        s.caption = "   ".into();
        s.pose[4] = Keypoint2D::new(1.2, 0.0);
        s.source_height = 0;
        let report = validate_sample(&s);
        assert_eq!(report.violations.len(), 3);
        assert!(report.into_result().is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), NUM_JOINTS)
            .prop_map(|v| Pose(v.into_iter().map(|(x, y)| Keypoint2D::new(x, y)).collect()))
    }

    proptest! {
        #[test]
        fn edge_lengths_translation_invariant(pose in arb_pose(), dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
            let topo = SkeletonTopology::openpose18();
            let a = edge_lengths(&pose, &topo);
            let b = edge_lengths(&pose.translated(dx, dy), &topo);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn edge_lengths_scale_linearly(pose in arb_pose(), alpha in 0.0f64..4.0) {
            let topo = SkeletonTopology::openpose18();
            let a = edge_lengths(&pose, &topo);
            let b = edge_lengths(&pose.scaled(alpha), &topo);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((alpha * x - y).abs() <= 1e-12 * (alpha * x).max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn normalize_roundtrip(px in 0.0f64..256.0, py in 0.0f64..256.0) {
            let kp = Keypoint2D::new(px / 128.0 - 1.0, py / 128.0 - 1.0);
            let (bx, by) = denormalize_coords(kp, 256.0, 256.0);
            let back = normalize_coords((bx, by), 256.0, 256.0).unwrap();
            prop_assert!((back.x - kp.x).abs() <= 1e-12);
            prop_assert!((back.y - kp.y).abs() <= 1e-12);
        }
    }
}
