use crate::error::{Result, TuvfError};
use crate::geometry::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        vec3::add(self.origin, vec3::scale(self.dir, t))
    }
}

/// Integer pixel rectangle, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        PixelRect { x0, y0, width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel-centre coordinates in row-major order.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(((self.x0 + x) as f64 + 0.5, (self.y0 + y) as f64 + 0.5));
            }
        }
        out
    }
}

/// Pinhole camera with a vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: Vec3, target: Vec3, up: Vec3, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if vec3::dist2(position, target) == 0.0 {
            return Err(TuvfError::invalid("camera position equals its target"));
        }
        if !(fov_deg > 0.0 && fov_deg < 120.0) {
            return Err(TuvfError::invalid(format!("field of view must lie in (0, 120) degrees, got {fov_deg}")));
        }
        if width == 0 || height == 0 {
            return Err(TuvfError::invalid("image size must be positive"));
        }
        let fwd = vec3::normalize(vec3::sub(target, position));
        if vec3::norm(vec3::cross(fwd, up)) < 1e-9 {
            return Err(TuvfError::invalid("camera up hint is parallel to the view direction"));
        }
        Ok(Camera {
            position,
            target,
            up,
            fov_deg,
            width,
            height,
        })
    }

    /// Camera on a sphere around the origin, z up. Angles in degrees.
    pub fn orbit(az_deg: f64, el_deg: f64, radius: f64, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
        let pos = [radius * el.cos() * az.cos(), radius * el.cos() * az.sin(), radius * el.sin()];
        let up = if el.cos().abs() < 1e-6 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        Camera::new(pos, [0.0; 3], up, fov_deg, width, height)
    }

    /// Parses `"az,el,r,fov"`.
    pub fn parse_spec(spec: &str, width: usize, height: usize) -> Result<Self> {
        let parts: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| TuvfError::invalid(format!("camera spec {spec:?} is not `az,el,r,fov`")))?;
        if parts.len() != 4 {
            return Err(TuvfError::invalid(format!("camera spec {spec:?} needs 4 numbers")));
        }
        Camera::orbit(parts[0], parts[1], parts[2], parts[3], width, height)
    }

    /// `(azimuth, elevation, radius)` in degrees of the position around the target.
    pub fn orbit_params(&self) -> (f64, f64, f64) {
        let d = vec3::sub(self.position, self.target);
        let r = vec3::norm(d);
        let el = (d[2] / r).asin().to_degrees();
        let az = d[1].atan2(d[0]).to_degrees().rem_euclid(360.0);
        (az, el, r)
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let fwd = vec3::normalize(vec3::sub(self.target, self.position));
        let right = vec3::normalize(vec3::cross(fwd, self.up));
        let up = vec3::cross(right, fwd);
        (fwd, right, up)
    }

    /// Ray through continuous pixel coordinates, `(0, 0)` being the top-left
    /// corner of the frame.
    pub fn ray_through(&self, px: f64, py: f64) -> Ray {
        let (fwd, right, up) = self.basis();
        let tan_half = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * px / self.width as f64 - 1.0) * tan_half * aspect;
        let y = (1.0 - 2.0 * py / self.height as f64) * tan_half;
        let d = vec3::add(fwd, vec3::add(vec3::scale(right, x), vec3::scale(up, y)));
        Ray {
            origin: self.position,
            dir: vec3::normalize(d),
        }
    }

    /// Continuous frame coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let (fwd, right, up) = self.basis();
        let d = vec3::sub(p, self.position);
        let depth = vec3::dot(d, fwd);
        if depth <= 0.0 {
            return None;
        }
        let tan_half = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = vec3::dot(d, right) / depth / (tan_half * aspect);
        let y = vec3::dot(d, up) / depth / tan_half;
        Some(((x + 1.0) * self.width as f64 / 2.0, (1.0 - y) * self.height as f64 / 2.0))
    }

    pub fn generate_rays(&self, rect: PixelRect) -> Result<Vec<Ray>> {
        if rect.x0 + rect.width > self.width || rect.y0 + rect.height > self.height {
            return Err(TuvfError::invalid(format!(
                "pixel rect {rect:?} exceeds the {}x{} frame",
                self.width, self.height
            )));
        }
        Ok(rect.centers().into_iter().map(|(x, y)| self.ray_through(x, y)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_pixel_looks_at_target() {
        let cam = Camera::orbit(30.0, 20.0, 2.0, 40.0, 9, 7).unwrap();
        let r = cam.generate_rays(PixelRect::new(4, 3, 1, 1)).unwrap()[0];
        let expect = vec3::normalize(vec3::sub(cam.target, cam.position));
        assert!(vec3::dist2(r.dir, expect) < 1e-24);
    }

    #[test]
    fn unit_directions_and_corner_angle() {
        let cam = Camera::orbit(0.0, 30.0, 2.0, 50.0, 16, 8).unwrap();
        for r in cam.generate_rays(PixelRect::new(0, 0, 16, 8)).unwrap() {
            assert!((vec3::norm(r.dir) - 1.0).abs() < 1e-12);
        }
        let fwd = vec3::normalize(vec3::sub(cam.target, cam.position));
        let corner = cam.ray_through(0.0, 0.0);
        let t = (25f64).to_radians().tan();
        let expect = (t * (4.0f64 + 1.0).sqrt()).atan();
        assert!((vec3::dot(fwd, corner.dir).acos() - expect).abs() < 1e-6);
    }

    #[test]
    fn project_inverts_ray_through() {
        let cam = Camera::orbit(70.0, 25.0, 2.5, 45.0, 20, 12).unwrap();
        for &(px, py) in &[(0.5, 0.5), (13.2, 7.9), (19.5, 11.5)] {
            let p = cam.ray_through(px, py).at(1.7);
            let (x, y) = cam.project(p).unwrap();
            assert!((x - px).abs() < 1e-9 && (y - py).abs() < 1e-9);
        }
        assert!(cam.project(vec3::scale(cam.position, 2.0)).is_none());
    }

    #[test]
    fn invalid_cameras() {
        assert!(Camera::new([0.0; 3], [0.0; 3], [0.0, 0.0, 1.0], 40.0, 4, 4).is_err());
        assert!(Camera::orbit(0.0, 10.0, 2.0, 120.0, 4, 4).is_err());
        assert!(Camera::parse_spec("1,2,3", 4, 4).is_err());
        let cam = Camera::parse_spec("0,10,2,40", 4, 4).unwrap();
        assert!(cam.generate_rays(PixelRect::new(2, 2, 3, 1)).is_err());
    }
}
