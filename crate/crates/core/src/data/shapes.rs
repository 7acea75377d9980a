//! Parametric shape families sampled uniformly by surface area.
//!
//! Every symmetric family is mirror-symmetric about the plane `x = 0` in its
//! canonical frame, and that plane is its only symmetry plane.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cloud::{add, cross, norm, scale, Point3, PointCloud, Rng, SymPlane};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Box,
    Cylinder,
    EllBracket,
    WingedBody,
    TableLike,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Box,
        Family::Cylinder,
        Family::EllBracket,
        Family::WingedBody,
        Family::TableLike,
    ];
    pub const SYMMETRIC: [Family; 4] = [Family::Box, Family::Cylinder, Family::WingedBody, Family::TableLike];

    pub fn name(self) -> &'static str {
        match self {
            Family::Box => "box",
            Family::Cylinder => "cylinder",
            Family::EllBracket => "ell_bracket",
            Family::WingedBody => "winged_body",
            Family::TableLike => "table_like",
        }
    }

    pub fn is_symmetric(self) -> bool {
        self != Family::EllBracket
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown shape family `{s}` (expected one of box, cylinder, ell_bracket, winged_body, table_like)"
                ))
            })
    }
}

/// Size parameters of one shape, in canonical (unnormalized) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ShapeParams {
    /// Axis-aligned box rotated about the x axis by `tilt_deg`.
    Box { half: [f64; 3], tilt_deg: f64 },
    /// Closed-bottom tube along y with a handle on the +z side.
    Cylinder {
        radius: f64,
        height: f64,
        handle_reach: f64,
        handle_height: f64,
        handle_width: f64,
    },
    /// Two plates of unequal length, thickness and depth, rotated about y.
    EllBracket {
        arm_a: f64,
        arm_b: f64,
        thick_a: f64,
        thick_b: f64,
        depth_a: f64,
        depth_b: f64,
        yaw_deg: f64,
    },
    /// Fuselage along z with wings along x and a tail fin.
    WingedBody {
        body_radius: f64,
        body_length: f64,
        span: f64,
        chord: f64,
        wing_offset: f64,
        fin_height: f64,
    },
    /// Seat on four legs with a backrest at -z.
    TableLike {
        half_width: f64,
        half_depth: f64,
        leg_height: f64,
        back_height: f64,
        thickness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub params: ShapeParams,
    pub seed: u64,
}

impl ShapeSpec {
    /// Draws random size parameters for `family`.
    pub fn random(family: Family, seed: u64, rng: &mut Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let params = match family {
            Family::Box => {
                // Distinct half-extents so the box is not a cube.
                let a = u(0.3, 0.5);
                let b = u(0.55, 0.75);
                let c = u(0.8, 1.0);
                let mut half = [a, b, c];
                // Shuffle which axis gets which extent.
                let k = (u(0.0, 6.0) as usize).min(5);
                let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                half = [half[perms[k][0]], half[perms[k][1]], half[perms[k][2]]];
                ShapeParams::Box {
                    half,
                    tilt_deg: u(10.0, 20.0),
                }
            }
            Family::Cylinder => ShapeParams::Cylinder {
                radius: u(0.35, 0.5),
                height: u(0.9, 1.4),
                handle_reach: u(0.3, 0.45),
                handle_height: u(0.45, 0.7),
                handle_width: u(0.12, 0.2),
            },
            Family::EllBracket => ShapeParams::EllBracket {
                arm_a: u(1.0, 1.4),
                arm_b: u(0.5, 0.8),
                thick_a: u(0.08, 0.14),
                thick_b: u(0.18, 0.28),
                depth_a: u(0.6, 0.8),
                depth_b: u(0.3, 0.45),
                yaw_deg: u(0.0, 360.0),
            },
            Family::WingedBody => ShapeParams::WingedBody {
                body_radius: u(0.1, 0.16),
                body_length: u(1.6, 2.0),
                span: u(0.8, 1.1),
                chord: u(0.3, 0.45),
                wing_offset: u(0.1, 0.3),
                fin_height: u(0.25, 0.4),
            },
            Family::TableLike => ShapeParams::TableLike {
                half_width: u(0.4, 0.6),
                half_depth: u(0.3, 0.45),
                leg_height: u(0.5, 0.8),
                back_height: u(0.4, 0.7),
                thickness: u(0.05, 0.08),
            },
        };
        ShapeSpec { params, seed }
    }

    pub fn family(&self) -> Family {
        match self.params {
            ShapeParams::Box { .. } => Family::Box,
            ShapeParams::Cylinder { .. } => Family::Cylinder,
            ShapeParams::EllBracket { .. } => Family::EllBracket,
            ShapeParams::WingedBody { .. } => Family::WingedBody,
            ShapeParams::TableLike { .. } => Family::TableLike,
        }
    }

    /// Symmetry plane in the canonical frame, if any.
    pub fn plane(&self) -> Option<SymPlane> {
        self.family()
            .is_symmetric()
            .then(|| SymPlane { n: [1.0, 0.0, 0.0], d: 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let values: Vec<(&str, f64)> = match &self.params {
            ShapeParams::Box { half, .. } => vec![("half.x", half[0]), ("half.y", half[1]), ("half.z", half[2])],
            ShapeParams::Cylinder {
                radius,
                height,
                handle_reach,
                handle_height,
                handle_width,
            } => vec![
                ("radius", *radius),
                ("height", *height),
                ("handle_reach", *handle_reach),
                ("handle_height", *handle_height),
                ("handle_width", *handle_width),
            ],
            ShapeParams::EllBracket {
                arm_a,
                arm_b,
                thick_a,
                thick_b,
                depth_a,
                depth_b,
                ..
            } => vec![
                ("arm_a", *arm_a),
                ("arm_b", *arm_b),
                ("thick_a", *thick_a),
                ("thick_b", *thick_b),
                ("depth_a", *depth_a),
                ("depth_b", *depth_b),
            ],
            ShapeParams::WingedBody {
                body_radius,
                body_length,
                span,
                chord,
                fin_height,
                ..
            } => vec![
                ("body_radius", *body_radius),
                ("body_length", *body_length),
                ("span", *span),
                ("chord", *chord),
                ("fin_height", *fin_height),
            ],
            ShapeParams::TableLike {
                half_width,
                half_depth,
                leg_height,
                back_height,
                thickness,
            } => vec![
                ("half_width", *half_width),
                ("half_depth", *half_depth),
                ("leg_height", *leg_height),
                ("back_height", *back_height),
                ("thickness", *thickness),
            ],
        };
        for (name, v) in values {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Generation(format!(
                    "{} parameter `{name}` must be positive, got {v}",
                    self.family()
                )));
            }
        }
        match &self.params {
            ShapeParams::Cylinder {
                height, handle_height, ..
            } if handle_height >= height => Err(Error::Generation("cylinder handle taller than body".into())),
            ShapeParams::WingedBody {
                body_length,
                chord,
                wing_offset,
                ..
            } if wing_offset.abs() + chord / 2.0 > body_length / 2.0 => {
                Err(Error::Generation("wing does not fit on the body".into()))
            }
            ShapeParams::TableLike {
                half_width,
                half_depth,
                thickness,
                ..
            } if 2.0 * thickness >= half_width.min(*half_depth) => {
                Err(Error::Generation("table thickness too large for its footprint".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One primitive surface piece.
#[derive(Debug, Clone, Copy)]
enum Surface {
    /// `origin + s·u + t·v` for s, t in [0, 1].
    Rect { origin: Point3, u: Point3, v: Point3 },
    /// Side of a cylinder with unit axis `axis` starting at `base`.
    Tube {
        base: Point3,
        axis: Point3,
        e1: Point3,
        e2: Point3,
        radius: f64,
        length: f64,
    },
    /// Flat disk with in-plane unit vectors `e1`, `e2`.
    Disk {
        center: Point3,
        e1: Point3,
        e2: Point3,
        radius: f64,
    },
}

impl Surface {
    fn area(&self) -> f64 {
        match *self {
            Surface::Rect { u, v, .. } => norm(cross(u, v)),
            Surface::Tube { radius, length, .. } => 2.0 * PI * radius * length,
            Surface::Disk { radius, .. } => PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut Rng) -> Point3 {
        match *self {
            Surface::Rect { origin, u, v } => {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                add(origin, add(scale(u, s), scale(v, t)))
            }
            Surface::Tube {
                base,
                axis,
                e1,
                e2,
                radius,
                length,
            } => {
                let a = rng.gen_range(0.0..2.0 * PI);
                let h = rng.gen_range(0.0..length);
                let ring = add(scale(e1, radius * a.cos()), scale(e2, radius * a.sin()));
                add(add(base, scale(axis, h)), ring)
            }
            Surface::Disk { center, e1, e2, radius } => {
                let a = rng.gen_range(0.0..2.0 * PI);
                let r = radius * rng.gen::<f64>().sqrt();
                add(center, add(scale(e1, r * a.cos()), scale(e2, r * a.sin())))
            }
        }
    }
}

/// Six faces of the axis-aligned box `[lo, hi]`.
fn box_faces(lo: Point3, hi: Point3, out: &mut Vec<Surface>) {
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut u = [0.0; 3];
        u[a] = ext[a];
        let mut v = [0.0; 3];
        v[b] = ext[b];
        for side in [lo[axis], hi[axis]] {
            let mut origin = lo;
            origin[axis] = side;
            out.push(Surface::Rect { origin, u, v });
        }
    }
}

fn rot_x(p: Point3, deg: f64) -> Point3 {
    let (s, c) = deg.to_radians().sin_cos();
    [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]]
}

fn rot_y(p: Point3, deg: f64) -> Point3 {
    let (s, c) = deg.to_radians().sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

fn surfaces(params: &ShapeParams) -> Vec<Surface> {
    let mut out = Vec::new();
    match *params {
        ShapeParams::Box { half, .. } => {
            box_faces([-half[0], -half[1], -half[2]], half, &mut out);
        }
        ShapeParams::Cylinder {
            radius,
            height,
            handle_reach,
            handle_height,
            handle_width,
        } => {
            let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
            let bottom = -height / 2.0;
            out.push(Surface::Tube {
                base: [0.0, bottom, 0.0],
                axis: y,
                e1: z,
                e2: x,
                radius,
                length: height,
            });
            out.push(Surface::Disk {
                center: [0.0, bottom, 0.0],
                e1: z,
                e2: x,
                radius,
            });
            // Handle: an outer bar joined to the body by two struts.
            let w = handle_width / 2.0;
            let bar = 0.06;
            let (z0, z1) = (radius * 0.9, radius + handle_reach);
            let (y0, y1) = (-handle_height / 2.0, handle_height / 2.0);
            box_faces([-w, y0, z1 - bar], [w, y1, z1], &mut out);
            box_faces([-w, y1 - bar, z0], [w, y1, z1 - bar], &mut out);
            box_faces([-w, y0, z0], [w, y0 + bar, z1 - bar], &mut out);
        }
        ShapeParams::EllBracket {
            arm_a,
            arm_b,
            thick_a,
            thick_b,
            depth_a,
            depth_b,
            ..
        } => {
            let (cx, cy) = (arm_a / 2.0, arm_b / 2.0);
            box_faces([-cx, -cy, -depth_a / 2.0], [arm_a - cx, thick_a - cy, depth_a / 2.0], &mut out);
            box_faces(
                [-cx, thick_a - cy, -depth_b / 2.0],
                [thick_b - cx, arm_b - cy, depth_b / 2.0],
                &mut out,
            );
        }
        ShapeParams::WingedBody {
            body_radius,
            body_length,
            span,
            chord,
            wing_offset,
            fin_height,
        } => {
            let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
            let half = body_length / 2.0;
            out.push(Surface::Tube {
                base: [0.0, 0.0, -half],
                axis: z,
                e1: x,
                e2: y,
                radius: body_radius,
                length: body_length,
            });
            for cz in [-half, half] {
                out.push(Surface::Disk {
                    center: [0.0, 0.0, cz],
                    e1: x,
                    e2: y,
                    radius: body_radius,
                });
            }
            let t = 0.04;
            box_faces(
                [-span, -t / 2.0, wing_offset - chord / 2.0],
                [span, t / 2.0, wing_offset + chord / 2.0],
                &mut out,
            );
            // Tail fin on top at the rear, plus a small horizontal stabiliser.
            let fin_chord = chord * 0.8;
            box_faces(
                [-t / 2.0, body_radius * 0.5, -half],
                [t / 2.0, body_radius + fin_height, -half + fin_chord],
                &mut out,
            );
            box_faces(
                [-span * 0.35, -t / 2.0, -half],
                [span * 0.35, t / 2.0, -half + fin_chord * 0.7],
                &mut out,
            );
        }
        ShapeParams::TableLike {
            half_width,
            half_depth,
            leg_height,
            back_height,
            thickness,
        } => {
            let (w, d, t) = (half_width, half_depth, thickness);
            let y0 = -(leg_height + back_height) / 2.0;
            let seat = y0 + leg_height;
            box_faces([-w, seat - t, -d], [w, seat, d], &mut out);
            let leg = t * 1.2;
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let cx = sx * (w - leg);
                    let cz = sz * (d - leg);
                    box_faces([cx - leg / 2.0, y0, cz - leg / 2.0], [cx + leg / 2.0, seat - t, cz + leg / 2.0], &mut out);
                }
            }
            box_faces([-w, seat, -d], [w, seat + back_height, -d + t], &mut out);
        }
    }
    out
}

fn sample_surfaces(parts: &[Surface], n: usize, rng: &mut Rng) -> Vec<Point3> {
    let areas: Vec<f64> = parts.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    let mut cum = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let r: f64 = rng.gen();
            let k = cum.iter().position(|&c| r < c).unwrap_or(parts.len() - 1);
            parts[k].sample(rng)
        })
        .collect()
}

/// `n` points uniform by area on the shape, in its canonical frame.
///
/// Symmetric families are sampled on the `x >= 0` half and mirrored, so the
/// cloud is exactly symmetric about `x = 0` (one unpaired point when `n` is odd).
pub fn generate_shape(spec: &ShapeSpec, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Generation("shape needs at least one point".into()));
    }
    spec.validate()?;
    let parts = surfaces(&spec.params);
    let symmetric = spec.family().is_symmetric();
    let raw_count = if symmetric { n.div_ceil(2) } else { n };
    let mut pts = sample_surfaces(&parts, raw_count, rng);
    if symmetric {
        for p in &mut pts {
            p[0] = p[0].abs();
        }
        let mirrored: Vec<Point3> = pts.iter().take(n / 2).map(|p| [-p[0], p[1], p[2]]).collect();
        pts.extend(mirrored);
    }
    let pts = match spec.params {
        ShapeParams::Box { tilt_deg, .. } => pts.into_iter().map(|p| rot_x(p, tilt_deg)).collect(),
        ShapeParams::EllBracket { yaw_deg, .. } => pts.into_iter().map(|p| rot_y(p, yaw_deg)).collect(),
        _ => pts,
    };
    PointCloud::new(pts)
}
