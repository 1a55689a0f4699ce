use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera looking down its local `-z` axis, `+y` up.
///
/// `rotation` maps camera coordinates to world coordinates (row-major), so
/// its columns are the camera axes expressed in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub origin: Vec3,
    pub rotation: [[f64; 3]; 3],
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

/// Camera ray with its integration interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, near: f64, far: f64) -> Result<Self> {
        if ((norm(dir)) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "ray direction norm {} is not 1",
                norm(dir)
            )));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::invalid(format!(
                "need 0 < near < far, got [{near}, {far}]"
            )));
        }
        Ok(Self {
            origin,
            dir,
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

impl Camera {
    pub fn new(
        origin: Vec3,
        rotation: [[f64; 3]; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            origin,
            rotation,
            focal,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `origin` whose optical axis points at `target`.
    pub fn look_at(
        origin: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let back = normalize(sub(origin, target));
        let right = cross(up, back);
        if norm(right) < 1e-12 {
            return Err(Error::invalid("up vector is parallel to the view axis"));
        }
        let right = normalize(right);
        let true_up = cross(back, right);
        let rotation = [
            [right[0], true_up[0], back[0]],
            [right[1], true_up[1], back[1]],
            [right[2], true_up[2], back[2]],
        ];
        Self::new(origin, rotation, focal, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::invalid(format!(
                "focal must be positive, got {}",
                self.focal
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr - expect).abs() > 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// Row-major 4x4 camera-to-world matrix.
    pub fn pose(&self) -> [f64; 16] {
        let r = &self.rotation;
        let o = self.origin;
        [
            r[0][0], r[0][1], r[0][2], o[0], //
            r[1][0], r[1][1], r[1][2], o[1], //
            r[2][0], r[2][1], r[2][2], o[2], //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_pose(pose: &[f64], focal: f64, width: usize, height: usize) -> Result<Self> {
        if pose.len() != 16 {
            return Err(Error::invalid(format!(
                "pose needs 16 entries, got {}",
                pose.len()
            )));
        }
        let rotation = [
            [pose[0], pose[1], pose[2]],
            [pose[4], pose[5], pose[6]],
            [pose[8], pose[9], pose[10]],
        ];
        Self::new([pose[3], pose[7], pose[11]], rotation, focal, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the center of pixel `(u, v)` (column, row from the top).
    pub fn pixel_ray(&self, u: usize, v: usize, near: f64, far: f64) -> Result<Ray> {
        if u >= self.width || v >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({u}, {v}) outside {}x{}",
                self.width, self.height
            )));
        }
        let x = (u as f64 + 0.5 - self.width as f64 / 2.0) / self.focal;
        let y = -(v as f64 + 0.5 - self.height as f64 / 2.0) / self.focal;
        let local = normalize([x, y, -1.0]);
        let r = &self.rotation;
        let world = [dot(r[0], local), dot(r[1], local), dot(r[2], local)];
        Ray::new(self.origin, normalize(world), near, far)
    }

    /// Rays of every pixel in row-major order.
    pub fn rays(&self, near: f64, far: f64) -> Result<Vec<Ray>> {
        let mut out = Vec::with_capacity(self.pixel_count());
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.pixel_ray(u, v, near, far)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const I3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn center_pixel_looks_down_minus_z() {
        let cam = Camera::new([0.0; 3], I3, 10.0, 3, 3).unwrap();
        let r = cam.pixel_ray(1, 1, 1.0, 2.0).unwrap();
        assert_eq!(r.dir, [0.0, 0.0, -1.0]);
    }

    #[test]
    fn adjacent_pixels_differ_horizontally() {
        let cam = Camera::new([0.0; 3], I3, 10.0, 4, 3).unwrap();
        let a = cam.pixel_ray(1, 1, 1.0, 2.0).unwrap().dir;
        let b = cam.pixel_ray(2, 1, 1.0, 2.0).unwrap().dir;
        assert!((a[0] - b[0]).abs() > 1e-3);
        assert!(a[1].abs() < 1e-15 && b[1].abs() < 1e-15);
    }

    #[test]
    fn corner_angle_follows_pinhole_geometry() {
        let (w, f) = (8usize, 5.0);
        let cam = Camera::new([0.0; 3], I3, f, w, 1).unwrap();
        let d = cam.pixel_ray(0, 0, 1.0, 2.0).unwrap().dir;
        let tan = d[0].abs() / d[2].abs();
        assert!((tan - (w as f64 / 2.0 - 0.5) / f).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_and_bad_rotation_are_errors() {
        let cam = Camera::new([0.0; 3], I3, 10.0, 3, 3).unwrap();
        assert!(cam.pixel_ray(3, 0, 1.0, 2.0).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new([0.0; 3], skew, 10.0, 3, 3).is_err());
        assert!(Camera::new([0.0; 3], I3, 0.0, 3, 3).is_err());
    }

    #[test]
    fn look_at_points_the_axis_at_the_target() {
        let cam = Camera::look_at([3.0, 1.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], 20.0, 5, 5).unwrap();
        let d = cam.pixel_ray(2, 2, 1.0, 5.0).unwrap().dir;
        let expect = normalize([-3.0, -1.0, -2.0]);
        for i in 0..3 {
            assert!((d[i] - expect[i]).abs() < 1e-12);
        }
        let back = Camera::from_pose(&cam.pose(), 20.0, 5, 5).unwrap();
        assert_eq!(back, cam);
    }
}
