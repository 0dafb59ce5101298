//! Parametric building models.
//!
//! Buildings are extruded footprints with a roof and one interior slab per
//! upper story, built in a local frame with the footprint centred on the
//! origin and the ground at `z = 0`. Outward faces are counter-clockwise.

use damagescan_core::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{Part, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoofKind {
    Flat,
    Gabled,
    Hipped,
    Shed,
}

impl RoofKind {
    pub const ALL: [RoofKind; 4] = [
        RoofKind::Flat,
        RoofKind::Gabled,
        RoofKind::Hipped,
        RoofKind::Shed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Footprint {
    Rect {
        width: f64,
        depth: f64,
    },
    /// Main block plus a wing on one long side; always flat-roofed.
    LShape {
        width: f64,
        depth: f64,
        wing_width: f64,
        wing_depth: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub footprint: Footprint,
    pub stories: u32,
    pub story_height: f64,
    pub roof: RoofKind,
    /// Ridge (or high eave) height above the top story, ignored for flat roofs.
    pub roof_height: f64,
}

/// Interior slab inset from the walls, meters.
const SLAB_INSET: f64 = 0.1;

fn p(x: f64, y: f64, z: f64) -> Point3 {
    Point3::new(x, y, z)
}

fn wall(m: &mut TriangleMesh, a: [f64; 2], b: [f64; 2], z0: f64, z1: f64) {
    m.push_quad(
        p(a[0], a[1], z0),
        p(b[0], b[1], z0),
        p(b[0], b[1], z1),
        p(a[0], a[1], z1),
        Part::Facade,
    );
}

fn horizontal_rect(m: &mut TriangleMesh, x0: f64, y0: f64, x1: f64, y1: f64, z: f64, part: Part) {
    m.push_quad(p(x0, y0, z), p(x1, y0, z), p(x1, y1, z), p(x0, y1, z), part);
}

impl BuildingSpec {
    pub fn eave_height(&self) -> f64 {
        f64::from(self.stories) * self.story_height
    }

    pub fn total_height(&self) -> f64 {
        match (self.roof, self.footprint) {
            (RoofKind::Flat, _) | (_, Footprint::LShape { .. }) => self.eave_height(),
            _ => self.eave_height() + self.roof_height,
        }
    }

    /// Footprint rectangles, used for roofs and slabs.
    fn rects(&self) -> Vec<[f64; 4]> {
        match self.footprint {
            Footprint::Rect { width, depth } => {
                vec![[-width / 2.0, -depth / 2.0, width / 2.0, depth / 2.0]]
            }
            Footprint::LShape {
                width,
                depth,
                wing_width,
                wing_depth,
            } => {
                let (x0, y0) = (-width / 2.0, -(depth + wing_depth) / 2.0);
                vec![
                    [x0, y0, x0 + width, y0 + depth],
                    [x0, y0 + depth, x0 + wing_width, y0 + depth + wing_depth],
                ]
            }
        }
    }

    /// Counter-clockwise outline.
    fn outline(&self) -> Vec<[f64; 2]> {
        match self.footprint {
            Footprint::Rect { width, depth } => {
                let (w, d) = (width / 2.0, depth / 2.0);
                vec![[-w, -d], [w, -d], [w, d], [-w, d]]
            }
            Footprint::LShape {
                width,
                depth,
                wing_width,
                wing_depth,
            } => {
                let (x0, y0) = (-width / 2.0, -(depth + wing_depth) / 2.0);
                vec![
                    [x0, y0],
                    [x0 + width, y0],
                    [x0 + width, y0 + depth],
                    [x0 + wing_width, y0 + depth],
                    [x0 + wing_width, y0 + depth + wing_depth],
                    [x0, y0 + depth + wing_depth],
                ]
            }
        }
    }

    pub fn to_mesh(&self) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        let h = self.eave_height();
        let roof = match self.footprint {
            Footprint::LShape { .. } => RoofKind::Flat,
            Footprint::Rect { .. } => self.roof,
        };
        for k in 1..self.stories {
            let z = f64::from(k) * self.story_height;
            for r in self.rects() {
                horizontal_rect(
                    &mut m,
                    r[0] + SLAB_INSET,
                    r[1] + SLAB_INSET,
                    r[2] - SLAB_INSET,
                    r[3] - SLAB_INSET,
                    z,
                    Part::Slab,
                );
            }
        }
        let outline = self.outline();
        if roof == RoofKind::Flat {
            for i in 0..outline.len() {
                wall(&mut m, outline[i], outline[(i + 1) % outline.len()], 0.0, h);
            }
            for r in self.rects() {
                horizontal_rect(&mut m, r[0], r[1], r[2], r[3], h, Part::Roof);
            }
            return m;
        }
        let Footprint::Rect { width, depth } = self.footprint else {
            unreachable!("pitched roofs only on rectangles")
        };
        // pitched roofs are built with the ridge along x and rotated when the
        // footprint is deeper than wide
        let swap = depth > width;
        let (w, d) = if swap {
            (depth / 2.0, width / 2.0)
        } else {
            (width / 2.0, depth / 2.0)
        };
        let top = h + self.roof_height;
        let mut r = TriangleMesh::default();
        match roof {
            RoofKind::Gabled => {
                wall(&mut r, [-w, -d], [w, -d], 0.0, h);
                wall(&mut r, [w, d], [-w, d], 0.0, h);
                wall(&mut r, [w, -d], [w, d], 0.0, h);
                wall(&mut r, [-w, d], [-w, -d], 0.0, h);
                r.push_triangle(p(w, -d, h), p(w, d, h), p(w, 0.0, top), Part::Facade);
                r.push_triangle(p(-w, d, h), p(-w, -d, h), p(-w, 0.0, top), Part::Facade);
                r.push_quad(
                    p(-w, -d, h),
                    p(w, -d, h),
                    p(w, 0.0, top),
                    p(-w, 0.0, top),
                    Part::Roof,
                );
                r.push_quad(
                    p(w, d, h),
                    p(-w, d, h),
                    p(-w, 0.0, top),
                    p(w, 0.0, top),
                    Part::Roof,
                );
            }
            RoofKind::Hipped => {
                let outline = [[-w, -d], [w, -d], [w, d], [-w, d]];
                for i in 0..4 {
                    wall(&mut r, outline[i], outline[(i + 1) % 4], 0.0, h);
                }
                let rx = (w - d).max(0.0);
                if rx > 0.0 {
                    r.push_quad(
                        p(-w, -d, h),
                        p(w, -d, h),
                        p(rx, 0.0, top),
                        p(-rx, 0.0, top),
                        Part::Roof,
                    );
                    r.push_quad(
                        p(w, d, h),
                        p(-w, d, h),
                        p(-rx, 0.0, top),
                        p(rx, 0.0, top),
                        Part::Roof,
                    );
                } else {
                    r.push_triangle(p(-w, -d, h), p(w, -d, h), p(0.0, 0.0, top), Part::Roof);
                    r.push_triangle(p(w, d, h), p(-w, d, h), p(0.0, 0.0, top), Part::Roof);
                }
                r.push_triangle(p(w, -d, h), p(w, d, h), p(rx, 0.0, top), Part::Roof);
                r.push_triangle(p(-w, d, h), p(-w, -d, h), p(-rx, 0.0, top), Part::Roof);
            }
            RoofKind::Shed => {
                // low eave at -d, high eave at +d
                wall(&mut r, [-w, -d], [w, -d], 0.0, h);
                wall(&mut r, [w, d], [-w, d], 0.0, top);
                wall(&mut r, [w, -d], [w, d], 0.0, h);
                wall(&mut r, [-w, d], [-w, -d], 0.0, h);
                r.push_triangle(p(w, -d, h), p(w, d, h), p(w, d, top), Part::Facade);
                r.push_triangle(p(-w, d, h), p(-w, -d, h), p(-w, d, top), Part::Facade);
                r.push_quad(
                    p(-w, -d, h),
                    p(w, -d, h),
                    p(w, d, top),
                    p(-w, d, top),
                    Part::Roof,
                );
            }
            RoofKind::Flat => unreachable!(),
        }
        if swap {
            // quarter turn keeps orientation: (x, y) -> (-y, x)
            r.map_vertices(|v| p(-v.y, v.x, v.z));
        }
        m.append(&r);
        m
    }

    /// Random part modifications: roof form, story count and an added or
    /// removed wing.
    pub fn modified<R: Rng>(&self, rng: &mut R, probability: f64) -> BuildingSpec {
        let mut s = *self;
        if rng.random_bool(probability) {
            s.stories = if s.stories > 1 && rng.random_bool(0.5) {
                s.stories - 1
            } else {
                s.stories + 1
            };
        }
        if rng.random_bool(probability) {
            s.roof = RoofKind::ALL[rng.random_range(0..RoofKind::ALL.len())];
        }
        if rng.random_bool(probability / 2.0) {
            s.footprint = match s.footprint {
                Footprint::Rect { width, depth } => Footprint::LShape {
                    width,
                    depth,
                    wing_width: width * rng.random_range(0.35..0.6),
                    wing_depth: depth * rng.random_range(0.4..0.8),
                },
                Footprint::LShape { width, depth, .. } => Footprint::Rect { width, depth },
            };
        }
        s
    }
}

/// Building shapes typical of mixed suburban areas: detached houses, sheds,
/// small apartment blocks and L-shaped plans with assorted roofs.
pub fn generic_base_models<R: Rng>(n: usize, rng: &mut R) -> Vec<BuildingSpec> {
    (0..n)
        .map(|i| {
            let roof = RoofKind::ALL[i % RoofKind::ALL.len()];
            let width = rng.random_range(8.0..18.0);
            let depth = rng.random_range(7.0..13.0);
            let footprint = if i % 7 == 3 {
                Footprint::LShape {
                    width,
                    depth,
                    wing_width: width * rng.random_range(0.35..0.6),
                    wing_depth: depth * rng.random_range(0.4..0.8),
                }
            } else {
                Footprint::Rect { width, depth }
            };
            BuildingSpec {
                footprint,
                stories: rng.random_range(1..=4),
                story_height: rng.random_range(2.8..3.4),
                roof,
                roof_height: rng.random_range(1.5..4.0),
            }
        })
        .collect()
}

/// Denser historic-centre stock: multi-story masonry blocks with hipped or
/// flat roofs and larger plans.
pub fn region_base_models<R: Rng>(n: usize, rng: &mut R) -> Vec<BuildingSpec> {
    (0..n)
        .map(|i| {
            let roof = if i % 3 == 0 {
                RoofKind::Flat
            } else {
                RoofKind::Hipped
            };
            let width = rng.random_range(10.0..20.0);
            let depth = rng.random_range(9.0..15.0);
            let footprint = if i % 5 == 2 {
                Footprint::LShape {
                    width,
                    depth,
                    wing_width: width * rng.random_range(0.4..0.6),
                    wing_depth: depth * rng.random_range(0.5..0.9),
                }
            } else {
                Footprint::Rect { width, depth }
            };
            BuildingSpec {
                footprint,
                stories: rng.random_range(2..=5),
                story_height: rng.random_range(3.0..3.6),
                roof,
                roof_height: rng.random_range(1.5..3.0),
            }
        })
        .collect()
}
