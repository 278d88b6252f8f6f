//! Pinhole camera and its JSON description.

use glam::{DMat4, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera field of view must be in (0, 180) degrees, got {0}")]
    FieldOfView(f64),
    #[error("camera near plane must satisfy 0 < near < far, got near {0}, far {1}")]
    Planes(f64, f64),
    #[error("camera resolution must be at least 1x1, got {0}x{1}")]
    Resolution(u32, u32),
    #[error("camera position and look_at coincide")]
    DegenerateAxis,
}

/// Camera description as stored in view JSON files. Angles in degrees,
/// lengths in scene units. `resolution` is `[width, height]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub resolution: [u32; 2],
    pub near: f64,
    pub far: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            position: [2.5, 2.0, 4.0],
            look_at: [0.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            fov_deg: 40.0,
            resolution: [512, 512],
            near: 0.1,
            far: 100.0,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(CameraError::FieldOfView(self.fov_deg));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(CameraError::Planes(self.near, self.far));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(CameraError::Resolution(self.resolution[0], self.resolution[1]));
        }
        if DVec3::from(self.position).distance_squared(DVec3::from(self.look_at)) == 0.0 {
            return Err(CameraError::DegenerateAxis);
        }
        Ok(())
    }

    pub fn eye(&self) -> DVec3 {
        DVec3::from(self.position)
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    pub fn view(&self) -> DMat4 {
        DMat4::look_at_rh(
            DVec3::from(self.position),
            DVec3::from(self.look_at),
            DVec3::from(self.up),
        )
    }

    pub fn proj(&self) -> DMat4 {
        let aspect = self.resolution[0] as f64 / self.resolution[1] as f64;
        DMat4::perspective_rh_gl(self.fov_deg.to_radians(), aspect, self.near, self.far)
    }

    pub fn view_proj(&self) -> DMat4 {
        self.proj() * self.view()
    }

    /// Returns a camera rendering at `n`x the linear resolution. Used by the
    /// supersampled anti-aliasing reference.
    pub fn scaled(&self, n: u32) -> Camera {
        let mut c = self.clone();
        c.resolution = [self.resolution[0] * n, self.resolution[1] * n];
        c
    }

    /// Parses a view file: either one camera object or an array of them.
    pub fn parse_views(json: &str) -> Result<Vec<Camera>, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(Camera),
            Many(Vec<Camera>),
        }
        Ok(match serde_json::from_str(json)? {
            OneOrMany::One(c) => vec![c],
            OneOrMany::Many(cs) => cs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_maps_eye_to_origin() {
        let c = Camera::default();
        let eye_view = c.view().transform_point3(c.eye());
        assert!(eye_view.length() < 1e-12);
    }

    #[test]
    fn look_direction_is_negative_z_in_view_space() {
        let c = Camera::default();
        let target = c.view().transform_point3(DVec3::from(c.look_at));
        assert!(target.x.abs() < 1e-12);
        assert!(target.y.abs() < 1e-12);
        assert!(target.z < 0.0);
    }

    #[test]
    fn projection_maps_near_and_far_to_ndc_bounds() {
        let c = Camera::default();
        let p = c.proj();
        let near_clip = p * glam::DVec4::new(0.0, 0.0, -c.near, 1.0);
        let far_clip = p * glam::DVec4::new(0.0, 0.0, -c.far, 1.0);
        assert!((near_clip.z / near_clip.w - -1.0).abs() < 1e-9);
        assert!((far_clip.z / far_clip.w - 1.0).abs() < 1e-9);
        // Clip w is the positive view-space depth.
        assert!((near_clip.w - c.near).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let c = Camera::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn parse_views_accepts_single_and_array() {
        let one = r#"{"position":[0,0,5],"look_at":[0,0,0],"up":[0,1,0],
                      "fov_deg":45,"resolution":[64,64],"near":0.1,"far":10}"#;
        assert_eq!(Camera::parse_views(one).unwrap().len(), 1);
        let many = format!("[{one},{one}]");
        assert_eq!(Camera::parse_views(&many).unwrap().len(), 2);
    }

    #[test]
    fn validation_rejects_bad_planes() {
        let mut c = Camera::default();
        c.near = 2.0;
        c.far = 1.0;
        assert_eq!(c.validate(), Err(CameraError::Planes(2.0, 1.0)));
    }
}
