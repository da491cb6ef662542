//! Mesh queries used by the losses and by observation extraction.

pub mod distance;
pub mod knn;
pub mod sample;
pub mod section;
pub mod volume;

pub use distance::{signed_distance, winding_number, MeshDistance, SdfCache, SignedDistance};
pub use knn::{brute_force_nearest, NearestNeighborIndex};
pub use sample::{resample_points, sample_surface, samples_backward, SurfaceSample};
pub use section::{contours_from_csv, contours_to_csv, plane_section, plane_section_detailed, section_backward, PlaneSpec, Section};
pub use volume::{enclosed_volume, normalized_volume, volume_gradient, DOMAIN_VOLUME};
