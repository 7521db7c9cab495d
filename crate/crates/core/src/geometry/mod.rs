//! Hydro-body signed distance fields, object surface sampling, contact
//! frames and contact Jacobians.

mod frame;
mod sdf;
mod surface;

pub use frame::{contact_frame, contact_frame_from_sdf, contact_jacobian, ContactFrame, ContactJacobian, NormalSource};
pub use sdf::{sdf_eval, sdf_gradient, SdfGradient, SdfShape};
pub use surface::{sample_surface, ObjectShape, SurfaceSample, TriMesh};
