use super::vec3::{self, Vec3};
use crate::error::{Result, TuvfError};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals, index-aligned with `points`.
    pub normals: Option<Vec<Vec3>>,
}

/// `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl CubeTransform {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::sub(p, self.center), self.scale)
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        vec3::add(vec3::scale(p, 1.0 / self.scale), self.center)
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points, normals: None }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(TuvfError::invalid(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        Ok(PointCloud {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
                [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
            )
        }))
    }

    /// True when every point lies in `[-h, h]^3` for `h = 0.5 + tol`.
    pub fn in_unit_cube(&self, tol: f64) -> bool {
        let h = 0.5 + tol;
        self.points.iter().all(|p| p.iter().all(|c| c.abs() <= h))
    }

    /// Rows of `(x, y, z)`.
    pub fn flat(&self) -> Vec<f64> {
        vec3::flatten(&self.points)
    }

    pub fn transformed(&self, t: &CubeTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(*p)).collect(),
            normals: self.normals.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }
}

/// Isotropic scale and translation that centres the bounding box at the
/// origin and maps its longest side to `fill` (1.0 spans `[-0.5, 0.5]`).
pub fn normalize_into_cube(cloud: &PointCloud, fill: f64) -> Result<(PointCloud, CubeTransform)> {
    let (lo, hi) = cloud
        .bounds()
        .ok_or_else(|| TuvfError::invalid("cannot normalize an empty cloud"))?;
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent <= 1e-12 {
        return Err(TuvfError::invalid("cannot normalize a zero-extent cloud"));
    }
    let t = CubeTransform {
        center: vec3::scale(vec3::add(lo, hi), 0.5),
        scale: fill / extent,
    };
    Ok((cloud.transformed(&t), t))
}

pub fn normalize_to_unit_cube(cloud: &PointCloud) -> Result<(PointCloud, CubeTransform)> {
    normalize_into_cube(cloud, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_map_to_the_faces() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let (n, _) = normalize_to_unit_cube(&c).unwrap();
        assert_eq!(n.points, vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]);
    }

    #[test]
    fn touching_cloud_is_left_alone() {
        let c = PointCloud::new(vec![[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5], [0.1, 0.2, -0.3]]);
        let (n, t) = normalize_to_unit_cube(&c).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(n.points, c.points);
    }

    #[test]
    fn inverse_round_trip() {
        let c = PointCloud::new(vec![[3.0, -1.0, 2.0], [4.5, 7.0, -2.0], [0.25, 0.5, 1.0]]);
        let (n, t) = normalize_to_unit_cube(&c).unwrap();
        for (a, b) in c.points.iter().zip(&n.points) {
            let back = t.invert(*b);
            assert!(vec3::dist2(*a, back).sqrt() < 1e-12);
        }
        assert!(n.in_unit_cube(1e-12));
    }

    #[test]
    fn degenerate_and_empty() {
        assert!(normalize_to_unit_cube(&PointCloud::new(vec![[1.0; 3], [1.0; 3]])).is_err());
        assert!(normalize_to_unit_cube(&PointCloud::default()).is_err());
    }
}
