use serde::{Deserialize, Serialize};

use super::SynthError;

/// Scene layout and rig trajectory. All lengths are scene units, the
/// defaults describe a desk-scale scene with the backdrop about 7 units
/// from the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub frames: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Shared focal length, pixels (fx = fy).
    pub focal: f64,
    /// True stereo baseline of the rig.
    pub baseline: f64,
    pub n_background_points: usize,
    /// Axis-aligned slab the background points are sampled from.
    pub background_min: [f64; 3],
    pub background_max: [f64; 3],
    /// Depth of the backdrop plane used for non-object flow pixels.
    pub backdrop_depth: f64,
    pub rig_start: [f64; 3],
    pub rig_velocity: [f64; 3],
    pub rig_yaw_rate_deg: f64,
    pub objects: Vec<ObjectConfig>,
    /// Retries before giving up on the visibility invariant.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 12,
            image_width: 384,
            image_height: 288,
            focal: 360.0,
            baseline: 0.2,
            n_background_points: 60,
            background_min: [-3.0, -1.8, 6.0],
            background_max: [3.0, 1.8, 8.0],
            backdrop_depth: 8.0,
            rig_start: [0.0, 0.0, -6.0],
            rig_velocity: [0.04, 0.0, 0.06],
            rig_yaw_rate_deg: 0.25,
            objects: vec![ObjectConfig::default()],
            max_attempts: 20,
        }
    }
}

/// One rigid planar object: a patch of points following a motion family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectConfig {
    pub points: usize,
    /// Half size of the square patch the points are sampled on.
    pub half_extent: f64,
    /// In-plane spin, degrees per frame.
    pub spin_rate_deg: f64,
    pub motion: MotionConfig,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        ObjectConfig {
            points: 24,
            half_extent: 1.3,
            spin_rate_deg: 0.0,
            motion: MotionConfig::Linear {
                start: [-0.8, 0.1, 3.8],
                velocity: [0.13, 0.0, 0.0],
            },
        }
    }
}

/// Object motion families. Positions refer to the patch centroid in world
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionConfig {
    Linear {
        start: [f64; 3],
        /// World velocity per frame.
        velocity: [f64; 3],
    },
    /// Horizontal circle in the world x-z plane.
    CircularArc {
        center: [f64; 3],
        radius: f64,
        start_angle_deg: f64,
        angular_velocity_deg: f64,
    },
    /// Piecewise-linear: each segment holds a velocity for a frame count.
    Piecewise {
        start: [f64; 3],
        segments: Vec<PiecewiseSegment>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSegment {
    pub frames: usize,
    pub velocity: [f64; 3],
}

/// Perturbations applied to the rendered initial reconstructions and
/// observations; models badly registered cameras and the SfM scale
/// ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian pixel noise on feature observations.
    pub pixel_sigma: f64,
    /// Camera rotation noise, degrees.
    pub pose_rot_sigma_deg: f64,
    /// Camera center and point noise as a fraction of the scene extent.
    pub pose_trans_sigma: f64,
    /// Factor the object reconstruction is multiplied by.
    pub scale_perturbation: f64,
    /// Cameras receiving gross pose corruption in the object
    /// reconstruction.
    pub outlier_camera_count: usize,
    /// Gaussian noise on rendered flow fields; zero keeps them exact.
    pub flow_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_sigma: 0.0,
            pose_rot_sigma_deg: 0.0,
            pose_trans_sigma: 0.0,
            scale_perturbation: 1.0,
            outlier_camera_count: 0,
            flow_sigma: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let non_negative = [
            ("pixel_sigma", self.pixel_sigma),
            ("pose_rot_sigma_deg", self.pose_rot_sigma_deg),
            ("pose_trans_sigma", self.pose_trans_sigma),
            ("flow_sigma", self.flow_sigma),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(SynthError::InvalidConfig(format!("{name} must be non-negative, got {value}")));
            }
        }
        if !(self.scale_perturbation > 0.0) || !self.scale_perturbation.is_finite() {
            return Err(SynthError::InvalidConfig(format!(
                "scale_perturbation must be positive, got {}",
                self.scale_perturbation
            )));
        }
        Ok(())
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames < 2 {
            return Err(SynthError::InvalidConfig("need at least 2 frames".to_string()));
        }
        if self.objects.is_empty() {
            return Err(SynthError::InvalidConfig("need at least one object".to_string()));
        }
        for (i, object) in self.objects.iter().enumerate() {
            if object.points < 4 {
                return Err(SynthError::InvalidConfig(format!("object {i} needs at least 4 points")));
            }
        }
        if self.n_background_points < 8 {
            return Err(SynthError::InvalidConfig("need at least 8 background points".to_string()));
        }
        if !(self.baseline > 0.0) {
            return Err(SynthError::InvalidConfig("baseline must be positive".to_string()));
        }
        if !(self.focal > 0.0) {
            return Err(SynthError::InvalidConfig("focal length must be positive".to_string()));
        }
        if self.image_width < 8 || self.image_height < 8 {
            return Err(SynthError::InvalidConfig("image must be at least 8x8".to_string()));
        }
        Ok(())
    }

    /// Loads a scene config from a TOML key-value file.
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: SceneConfig = toml::from_str(&text).map_err(|e| SynthError::ParseError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}
