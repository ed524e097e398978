//! UV sphere construction, point clouds, nearest neighbours and Chamfer distance.

pub mod chamfer;
pub mod icosphere;
pub mod kdtree;
pub mod mesh;
pub mod pointcloud;
pub mod vec3;

pub use chamfer::{chamfer_distance, chamfer_loss};
pub use icosphere::{build_icosphere, UvSphere};
pub use kdtree::KnnIndex;
pub use mesh::{sample_mesh_surface, TriMesh};
pub use pointcloud::{normalize_into_cube, normalize_to_unit_cube, CubeTransform, PointCloud};
pub use vec3::Vec3;
