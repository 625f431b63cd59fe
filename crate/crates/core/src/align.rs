//! 2-D similarity transforms for face alignment: axis-aligned crop,
//! eye-levelling rotation, and least-squares landmark registration.
//!
//! Transforms map source-image coordinates to the canonical output square.
//! No pixels are touched here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("degenerate bounding box")]
    DegenerateBox,
    #[error("eye points coincide")]
    CoincidentEyes,
    #[error("point sets differ in size ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("need at least 2 points")]
    TooFewPoints,
    #[error("source points are all coincident")]
    DegenerateSource,
    #[error("non-finite coordinate")]
    NonFinite,
}

pub type Point = [f64; 2];

/// Ordered landmarks: left eye, right eye, nose, left mouth corner, right mouth corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self, AlignError> {
        if points.len() < 2 {
            return Err(AlignError::TooFewPoints);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite);
        }
        if points[0][0] >= points[1][0] {
            log::warn!("left eye is not left of the right eye; landmarks may be mirrored");
        }
        Ok(Self { points })
    }
}

/// Five-point template for a 256 x 256 output (the common 112 px
/// five-landmark template scaled up). These positions are defaults, not
/// a standard.
pub const TEMPLATE_256: [Point; 5] = [
    [87.530_514, 118.162_97],
    [168.072_69, 117.717_49],
    [128.057_6, 163.969_37],
    [94.969_83, 211.121_14],
    [161.668_34, 210.752_23],
];

/// Template scaled to an `out_size` square.
pub fn default_template(out_size: f64) -> LandmarkSet {
    let s = out_size / 256.0;
    LandmarkSet { points: TEMPLATE_256.iter().map(|p| [p[0] * s, p[1] * s]).collect() }
}

/// `p -> scale * R(rotation) * p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise in the coordinate frame of the points.
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self { scale: 1.0, rotation: 0.0, tx: 0.0, ty: 0.0 };

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.tx,
            self.scale * (s * p[0] + c * p[1]) + self.ty,
        ]
    }

    /// Row-major 2 x 3 affine matrix.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            [self.scale * c, -self.scale * s, self.tx],
            [self.scale * s, self.scale * c, self.ty],
        ]
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let rot = -self.rotation;
        let (s, c) = rot.sin_cos();
        Self {
            scale: inv_scale,
            rotation: rot,
            tx: -inv_scale * (c * self.tx - s * self.ty),
            ty: -inv_scale * (s * self.tx + c * self.ty),
        }
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &Self) -> Self {
        let t = self.apply([first.tx, first.ty]);
        Self {
            scale: self.scale * first.scale,
            rotation: self.rotation + first.rotation,
            tx: t[0],
            ty: t[1],
        }
    }

    /// `{scale, rotation, tx, ty, matrix}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scale": self.scale,
            "rotation": self.rotation,
            "tx": self.tx,
            "ty": self.ty,
            "matrix": self.matrix(),
        })
    }

    /// Sum of squared distances between transformed `src` and `dst`.
    pub fn residual(&self, src: &[Point], dst: &[Point]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(p, q)| {
                let t = self.apply(*p);
                (t[0] - q[0]).powi(2) + (t[1] - q[1]).powi(2)
            })
            .sum()
    }
}

/// Axis-aligned crop: scales the longer bbox side to `out_size` and centers
/// the box in the output square.
pub fn crop_transform(bbox: [f64; 4], out_size: f64) -> Result<SimilarityTransform, AlignError> {
    let [x, y, w, h] = bbox;
    if !(w > 0.0 && h > 0.0 && out_size > 0.0) || bbox.iter().any(|v| !v.is_finite()) {
        return Err(AlignError::DegenerateBox);
    }
    let scale = out_size / w.max(h);
    let half = out_size / 2.0;
    Ok(SimilarityTransform {
        scale,
        rotation: 0.0,
        tx: half - scale * (x + w / 2.0),
        ty: half - scale * (y + h / 2.0),
    })
}

/// Crop mapping with a rotation about the bbox center that levels the eyes.
pub fn rotation_transform(
    bbox: [f64; 4],
    left_eye: Point,
    right_eye: Point,
    out_size: f64,
) -> Result<SimilarityTransform, AlignError> {
    let crop = crop_transform(bbox, out_size)?;
    let (dx, dy) = (right_eye[0] - left_eye[0], right_eye[1] - left_eye[1]);
    if dx == 0.0 && dy == 0.0 {
        return Err(AlignError::CoincidentEyes);
    }
    let rotation = -dy.atan2(dx);
    let center = [bbox[0] + bbox[2] / 2.0, bbox[1] + bbox[3] / 2.0];
    let (s, c) = rotation.sin_cos();
    let rc = [c * center[0] - s * center[1], s * center[0] + c * center[1]];
    let half = out_size / 2.0;
    Ok(SimilarityTransform {
        scale: crop.scale,
        rotation,
        tx: half - crop.scale * rc[0],
        ty: half - crop.scale * rc[1],
    })
}

/// Closed-form least-squares similarity from `landmarks` onto `template`
/// (no reflection): minimizes `sum |T(p_i) - q_i|^2`.
pub fn similarity_align(landmarks: &LandmarkSet, template: &LandmarkSet) -> Result<SimilarityTransform, AlignError> {
    let (src, dst) = (&landmarks.points, &template.points);
    if src.len() != dst.len() {
        return Err(AlignError::CountMismatch(src.len(), dst.len()));
    }
    if src.len() < 2 {
        return Err(AlignError::TooFewPoints);
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (mp, mq) = (mean(src), mean(dst));
    let (mut dot, mut cross, mut var) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - mp[0], p[1] - mp[1]);
        let (qx, qy) = (q[0] - mq[0], q[1] - mq[1]);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        var += px * px + py * py;
    }
    if var <= f64::EPSILON * n * (mp[0].abs() + mp[1].abs() + 1.0).powi(2) {
        return Err(AlignError::DegenerateSource);
    }
    let rotation = cross.atan2(dot);
    let scale = dot.hypot(cross) / var;
    if scale == 0.0 {
        // template collapses to a point; keep a valid transform
        return Ok(SimilarityTransform { scale: f64::MIN_POSITIVE, rotation: 0.0, tx: mq[0], ty: mq[1] });
    }
    let (s, c) = rotation.sin_cos();
    Ok(SimilarityTransform {
        scale,
        rotation,
        tx: mq[0] - scale * (c * mp[0] - s * mp[1]),
        ty: mq[1] - scale * (s * mp[0] + c * mp[1]),
    })
}
