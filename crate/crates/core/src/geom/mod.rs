//! Point cloud primitives: sampling, neighbour search, interpolation,
//! metrics and file I/O.

mod cloud;
pub mod interp;
pub mod io;
mod metrics;
mod neighbors;

pub use cloud::{euclid, euclid_rows, l1, PointCloud};
pub use interp::{idw_interp_feature, idw_interp_spatial, idw_var, IDW_EPS};
pub use metrics::{chamfer_l1, chamfer_l1_var, chamfer_l2_squared, fscore, nearest_l1, FScore};
pub use neighbors::{farthest_point_sample, knn, knn_rows, NeighborSet};
