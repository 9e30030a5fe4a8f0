//! Scene description: checkerboard, camera registry and observation dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Isometry3, Pixel};

pub const DATASET_SCHEMA: &str = "handeye-dataset/1";

pub type CameraId = usize;

/// Planar checkerboard described by its interior corners.
///
/// The board frame sits on the first interior corner with x along columns,
/// y along rows and z out of the board plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardModel {
    pub rows: usize,
    pub cols: usize,
    #[serde(rename = "square_size_m")]
    pub square_size: f64,
}

impl BoardModel {
    pub fn new(rows: usize, cols: usize, square_size: f64) -> Result<Self> {
        let b = Self {
            rows,
            cols,
            square_size,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidBoard(format!(
                "need at least 2x2 interior corners, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.square_size > 0.0 && self.square_size.is_finite()) {
            return Err(Error::InvalidBoard(format!(
                "square size must be positive, got {}",
                self.square_size
            )));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Corner `j = row * cols + col` at `(col * s, row * s, 0)`.
    pub fn corners(&self) -> Vec<Vector3<f64>> {
        board_corners(self)
    }
}

pub fn board_corners(b: &BoardModel) -> Vec<Vector3<f64>> {
    (0..b.rows)
        .flat_map(|row| {
            (0..b.cols).map(move |col| {
                Vector3::new(col as f64 * b.square_size, row as f64 * b.square_size, 0.0)
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: CameraId,
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
}

/// All `Z` corners of the board seen by one camera at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub camera_id: CameraId,
    pub timestep: usize,
    pub corners: Vec<Pixel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Self {
        Self {
            severity: Severity::Error,
            message,
        }
    }

    fn warning(message: String) -> Self {
        Self {
            severity: Severity::Warning,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub board: BoardModel,
    pub cameras: Vec<CameraEntry>,
    pub robot_poses: Vec<Isometry3>,
    pub detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema: String,
    #[serde(flatten)]
    dataset: Dataset,
}

impl Dataset {
    pub fn num_timesteps(&self) -> usize {
        self.robot_poses.len()
    }

    pub fn camera_ids(&self) -> Vec<CameraId> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    pub fn intrinsics(&self, camera: CameraId) -> Option<&CameraIntrinsics> {
        self.cameras
            .iter()
            .find(|c| c.id == camera)
            .map(|c| &c.intrinsics)
    }

    pub fn detection(&self, camera: CameraId, timestep: usize) -> Option<&Detection> {
        self.detections
            .iter()
            .find(|d| d.camera_id == camera && d.timestep == timestep)
    }

    /// Detections of one camera in timestep order.
    pub fn detections_of(&self, camera: CameraId) -> Vec<&Detection> {
        let mut v: Vec<&Detection> = self
            .detections
            .iter()
            .filter(|d| d.camera_id == camera)
            .collect();
        v.sort_by_key(|d| d.timestep);
        v
    }

    /// Checks every dataset invariant. Out-of-image corners only produce
    /// warnings since subpixel refinement can push them past the border.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Err(e) = self.board.validate() {
            out.push(Diagnostic::error(format!("board: {e}")));
        }
        let mut ids = BTreeSet::new();
        for cam in &self.cameras {
            if !ids.insert(cam.id) {
                out.push(Diagnostic::error(format!("camera {}: duplicate camera id", cam.id)));
            }
            if let Err(e) = cam.intrinsics.validate() {
                out.push(Diagnostic::error(format!("camera {}: {e}", cam.id)));
            }
        }
        let m = self.robot_poses.len();
        if m < 3 {
            out.push(Diagnostic::error(format!(
                "robot_poses: need at least 3 poses, got {m}"
            )));
        }
        for (i, pose) in self.robot_poses.iter().enumerate() {
            if !pose.is_finite() {
                out.push(Diagnostic::error(format!("robot pose {i}: non-finite")));
            }
        }
        let z = self.board.corner_count();
        let mut seen = BTreeSet::new();
        for (n, det) in self.detections.iter().enumerate() {
            let name = format!(
                "detection #{n} (camera {}, timestep {})",
                det.camera_id, det.timestep
            );
            if !seen.insert((det.camera_id, det.timestep)) {
                out.push(Diagnostic::error(format!("{name}: duplicate detection")));
            }
            let intr = self.intrinsics(det.camera_id);
            if intr.is_none() {
                out.push(Diagnostic::error(format!("{name}: unknown camera id")));
            }
            if det.timestep >= m {
                out.push(Diagnostic::error(format!(
                    "{name}: timestep out of range [0, {m})"
                )));
            }
            if det.corners.len() != z {
                out.push(Diagnostic::error(format!(
                    "{name}: corner count {} does not match board ({z})",
                    det.corners.len()
                )));
            }
            if det.corners.iter().any(|p| !p.is_finite()) {
                out.push(Diagnostic::error(format!("{name}: non-finite corner")));
            } else if let Some(k) = intr {
                let outside = det.corners.iter().filter(|p| !k.contains(p)).count();
                if outside > 0 {
                    out.push(Diagnostic::warning(format!(
                        "{name}: {outside} corners outside the image bounds"
                    )));
                }
            }
        }
        out
    }

    pub fn errors(&self) -> Vec<Diagnostic> {
        self.validate()
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect()
    }

    /// Parses a `handeye-dataset/1` document without validating it.
    pub fn from_json_unchecked(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.schema != DATASET_SCHEMA {
            return Err(Error::UnsupportedSchema(file.schema));
        }
        Ok(file.dataset)
    }

    /// Parses and validates; any error-level diagnostic rejects the file.
    pub fn from_json(text: &str) -> Result<Self> {
        let d = Self::from_json_unchecked(text)?;
        let errors = d.errors();
        if !errors.is_empty() {
            return Err(Error::InvalidDataset(
                errors.iter().map(|e| e.to_string()).collect(),
            ));
        }
        for w in d.validate() {
            log::warn!("{w}");
        }
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DatasetFile {
            schema: DATASET_SCHEMA.to_string(),
            dataset: self.clone(),
        })?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn covisibility(&self, timestep: usize) -> Covisibility {
        covisibility(self, timestep)
    }
}

/// Binary co-visibility matrix of one timestep, indexed by position in the
/// camera registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Covisibility {
    pub camera_ids: Vec<CameraId>,
    cells: Vec<bool>,
}

impl Covisibility {
    pub fn size(&self) -> usize {
        self.camera_ids.len()
    }

    pub fn get(&self, a: usize, d: usize) -> bool {
        self.cells[a * self.size() + d]
    }

    /// Number of unordered co-visible pairs.
    pub fn pair_count(&self) -> usize {
        let n = self.size();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |d| (a, d)))
            .filter(|&(a, d)| self.get(a, d))
            .count()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        let n = self.size();
        (0..n)
            .map(|a| (0..n).map(|d| self.get(a, d) as u8).collect())
            .collect()
    }
}

pub fn covisibility(d: &Dataset, timestep: usize) -> Covisibility {
    let ids = d.camera_ids();
    let n = ids.len();
    let seen: Vec<bool> = ids
        .iter()
        .map(|&c| d.detection(c, timestep).is_some())
        .collect();
    let mut cells = vec![false; n * n];
    for a in 0..n {
        for b in 0..n {
            cells[a * n + b] = a != b && seen[a] && seen[b];
        }
    }
    Covisibility {
        camera_ids: ids,
        cells,
    }
}

/// Per-camera detection counts.
pub fn detection_counts(d: &Dataset) -> BTreeMap<CameraId, usize> {
    let mut counts: BTreeMap<CameraId, usize> = d.cameras.iter().map(|c| (c.id, 0)).collect();
    for det in &d.detections {
        *counts.entry(det.camera_id).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn tiny_dataset(cams: &[CameraId]) -> Dataset {
        let board = BoardModel::new(2, 2, 0.1).unwrap();
        let corners = vec![Pixel::new(100.0, 100.0); 4];
        Dataset {
            board,
            cameras: cams
                .iter()
                .map(|&id| CameraEntry { id, intrinsics: k() })
                .collect(),
            robot_poses: vec![Isometry3::identity(); 3],
            detections: cams
                .iter()
                .flat_map(|&c| {
                    let corners = corners.clone();
                    (0..3).map(move |t| Detection {
                        camera_id: c,
                        timestep: t,
                        corners: corners.clone(),
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn corners_of_small_board() {
        let b = BoardModel::new(2, 2, 0.1).unwrap();
        let c = board_corners(&b);
        let expect = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1), (0.1, 0.1)];
        assert_eq!(c.len(), 4);
        for (p, e) in c.iter().zip(expect) {
            assert!((p.x - e.0).abs() < 1e-15 && (p.y - e.1).abs() < 1e-15 && p.z == 0.0);
        }
    }

    #[test]
    fn corners_of_5x7_board() {
        let b = BoardModel::new(5, 7, 0.03).unwrap();
        let c = board_corners(&b);
        assert_eq!(c.len(), 35);
        assert_eq!(c[0], Vector3::zeros());
        // enumerate the grid independently
        let mut max = Vector3::<f64>::zeros();
        for row in 0..5 {
            for col in 0..7 {
                let p = c[row * 7 + col];
                assert!((p.x - col as f64 * 0.03).abs() < 1e-15);
                assert!((p.y - row as f64 * 0.03).abs() < 1e-15);
                max = max.sup(&p);
            }
        }
        assert!((max - Vector3::new(0.18, 0.12, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn board_invariants() {
        assert!(BoardModel::new(1, 5, 0.1).is_err());
        assert!(BoardModel::new(3, 3, 0.0).is_err());
    }

    #[test]
    fn validate_clean_dataset() {
        assert!(tiny_dataset(&[0, 1]).validate().is_empty());
    }

    #[test]
    fn validate_duplicate_detection() {
        let mut d = tiny_dataset(&[0]);
        d.detections.push(d.detections[0].clone());
        let diags = d.validate();
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("duplicate detection"));
    }

    #[test]
    fn validate_corner_count() {
        let mut d = tiny_dataset(&[0]);
        d.detections[1].corners.pop();
        let diags = d.validate();
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("corner count"));
        assert!(diags[0].message.contains("timestep 1"));
    }

    #[test]
    fn validate_other_violations() {
        let mut d = tiny_dataset(&[0]);
        d.detections[0].camera_id = 9;
        d.detections[1].timestep = 5;
        d.robot_poses.truncate(2);
        let msgs: Vec<String> = d.errors().into_iter().map(|x| x.message).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown camera")));
        assert!(msgs.iter().any(|m| m.contains("out of range")));
        assert!(msgs.iter().any(|m| m.contains("at least 3 poses")));
    }

    #[test]
    fn out_of_bounds_corner_is_a_warning() {
        let mut d = tiny_dataset(&[0]);
        d.detections[0].corners[0] = Pixel::new(640.4, 10.0);
        let diags = d.validate();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(d.errors().is_empty());
    }

    #[test]
    fn covisibility_examples() {
        let mut d = tiny_dataset(&[0, 1, 2]);
        let x = covisibility(&d, 0);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(x.get(a, b), a != b);
            }
        }
        assert_eq!(x.pair_count(), 3);

        // camera 1 misses timestep 1
        d.detections.retain(|det| !(det.camera_id == 1 && det.timestep == 1));
        let x = covisibility(&d, 1);
        assert_eq!(
            x.to_rows(),
            vec![vec![0, 0, 1], vec![0, 0, 0], vec![1, 0, 0]]
        );

        // only camera 0 at timestep 2
        d.detections
            .retain(|det| !(det.camera_id != 0 && det.timestep == 2));
        let x = covisibility(&d, 2);
        assert!(x.to_rows().iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn json_round_trip_and_schema() {
        let d = tiny_dataset(&[0, 3]);
        let text = d.to_json().unwrap();
        assert!(text.contains("\"schema\": \"handeye-dataset/1\""));
        assert!(text.contains("\"square_size_m\""));
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, d);

        let bad = text.replace("handeye-dataset/1", "handeye-dataset/2");
        assert!(matches!(
            Dataset::from_json(&bad),
            Err(Error::UnsupportedSchema(_))
        ));
    }

    #[test]
    fn loading_rejects_partial_detection() {
        let mut d = tiny_dataset(&[0]);
        d.detections[0].corners.truncate(3);
        let text = serde_json::to_string(&DatasetFile {
            schema: DATASET_SCHEMA.into(),
            dataset: d,
        })
        .unwrap();
        match Dataset::from_json(&text) {
            Err(Error::InvalidDataset(msgs)) => assert!(msgs[0].contains("corner count")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
