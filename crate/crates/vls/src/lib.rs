//! Procedural building scenes, damage operators and a simulated airborne
//! laser scanner producing labelled pre/post-event point clouds.

pub mod damage;
pub mod error;
pub mod flight;
pub mod mesh;
pub mod obj;
pub mod raycast;
pub mod scan;
pub mod scene;
pub mod templates;

pub use damage::{apply_damage, DamageParams};
pub use error::{Error, Result};
pub use flight::{plan_strips, Extent2, FlightStrip, ScannerConfig};
pub use mesh::{Part, TriangleMesh};
pub use raycast::{ray_triangle_intersect, Bvh, Ray};
pub use scan::{simulate_scan, simulate_scan_region, ScanTarget};
pub use scene::{
    augment_buildings, generate_scene, generate_scene_with, AugmentParams, Building, Scene,
    ScenePair, ScenePreset,
};
pub use templates::{BuildingSpec, Footprint, RoofKind};
