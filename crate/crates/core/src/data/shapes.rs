//! Parametric shape families sampled uniformly by surface area.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cylinder,
    LBracket,
    Lamp,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::LBracket,
        ShapeFamily::Lamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::LBracket => "l-bracket",
            ShapeFamily::Lamp => "lamp",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape family `{s}`")))
    }
}

/// Size parameters of one shape instance; units are arbitrary because the
/// sampled cloud is normalized to the unit cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ShapeSpec {
    Sphere {
        radius: f64,
    },
    Box {
        half: [f64; 3],
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Base plate `length x width x thickness` with an upright plate of
    /// height `height` on one end.
    LBracket {
        length: f64,
        width: f64,
        height: f64,
        thickness: f64,
    },
    /// Base disk, thin pole and an open conical shade.
    Lamp {
        base_radius: f64,
        pole_radius: f64,
        pole_height: f64,
        shade_bottom: f64,
        shade_top: f64,
        shade_height: f64,
    },
}

impl ShapeSpec {
    pub fn family(&self) -> ShapeFamily {
        match self {
            ShapeSpec::Sphere { .. } => ShapeFamily::Sphere,
            ShapeSpec::Box { .. } => ShapeFamily::Box,
            ShapeSpec::Cylinder { .. } => ShapeFamily::Cylinder,
            ShapeSpec::LBracket { .. } => ShapeFamily::LBracket,
            ShapeSpec::Lamp { .. } => ShapeFamily::Lamp,
        }
    }

    /// Draws size parameters from the documented ranges.
    pub fn random<R: Rng>(family: ShapeFamily, rng: &mut R) -> Self {
        match family {
            ShapeFamily::Sphere => ShapeSpec::Sphere { radius: 0.5 },
            ShapeFamily::Box => ShapeSpec::Box {
                half: [0; 3].map(|_| rng.random_range(0.15..0.5)),
            },
            ShapeFamily::Cylinder => ShapeSpec::Cylinder {
                radius: rng.random_range(0.15..0.5),
                half_height: rng.random_range(0.15..0.5),
            },
            ShapeFamily::LBracket => ShapeSpec::LBracket {
                length: rng.random_range(0.6..1.0),
                width: rng.random_range(0.3..0.8),
                height: rng.random_range(0.5..1.0),
                thickness: rng.random_range(0.08..0.2),
            },
            ShapeFamily::Lamp => ShapeSpec::Lamp {
                base_radius: rng.random_range(0.2..0.35),
                pole_radius: rng.random_range(0.02..0.05),
                pole_height: rng.random_range(0.5..0.8),
                shade_bottom: rng.random_range(0.25..0.45),
                shade_top: rng.random_range(0.1..0.2),
                shade_height: rng.random_range(0.2..0.35),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values: Vec<f64> = match *self {
            ShapeSpec::Sphere { radius } => vec![radius],
            ShapeSpec::Box { half } => half.to_vec(),
            ShapeSpec::Cylinder { radius, half_height } => vec![radius, half_height],
            ShapeSpec::LBracket {
                length,
                width,
                height,
                thickness,
            } => {
                if thickness >= length || thickness >= height {
                    return Err(Error::invalid("l-bracket thickness must be below length and height"));
                }
                vec![length, width, height, thickness]
            }
            ShapeSpec::Lamp {
                base_radius,
                pole_radius,
                pole_height,
                shade_bottom,
                shade_top,
                shade_height,
            } => {
                if pole_radius >= base_radius || pole_radius >= shade_top.min(shade_bottom) {
                    return Err(Error::invalid("lamp pole must be thinner than base and shade"));
                }
                vec![
                    base_radius,
                    pole_radius,
                    pole_height,
                    shade_bottom,
                    shade_top,
                    shade_height,
                ]
            }
        };
        if values.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("shape parameters must be positive: {self:?}")))
        }
    }

    pub(crate) fn components(&self) -> Vec<Component> {
        match *self {
            ShapeSpec::Sphere { radius } => vec![Component::Sphere { radius }],
            ShapeSpec::Box { half: [a, b, c] } => box_faces([-a, -b, -c], [a, b, c], &[]),
            ShapeSpec::Cylinder { radius, half_height } => vec![
                Component::Tube {
                    z0: -half_height,
                    z1: half_height,
                    r0: radius,
                    r1: radius,
                },
                Component::Disk {
                    z: -half_height,
                    radius,
                },
                Component::Disk { z: half_height, radius },
            ],
            ShapeSpec::LBracket {
                length,
                width,
                height,
                thickness: t,
            } => {
                // The upright plate sits on the base plate; the shared square
                // is interior and not sampled.
                let mut faces = box_faces([0.0, 0.0, 0.0], [length, width, t], &[Face::Top]);
                faces.push(Component::Rect {
                    origin: [t, 0.0, t],
                    u: [length - t, 0.0, 0.0],
                    v: [0.0, width, 0.0],
                });
                faces.extend(box_faces([0.0, 0.0, t], [t, width, height], &[Face::Bottom]));
                faces
            }
            ShapeSpec::Lamp {
                base_radius,
                pole_radius,
                pole_height,
                shade_bottom,
                shade_top,
                shade_height,
            } => vec![
                Component::Disk {
                    z: 0.0,
                    radius: base_radius,
                },
                Component::Tube {
                    z0: 0.0,
                    z1: pole_height,
                    r0: pole_radius,
                    r1: pole_radius,
                },
                Component::Tube {
                    z0: pole_height,
                    z1: pole_height + shade_height,
                    r0: shade_bottom,
                    r1: shade_top,
                },
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Face {
    Bottom,
    Top,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Component {
    Sphere {
        radius: f64,
    },
    /// Parallelogram `origin + s u + t v`, `s, t` in `[0, 1]`.
    Rect {
        origin: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
    },
    /// Horizontal disk centered on the z axis.
    Disk {
        z: f64,
        radius: f64,
    },
    /// Open frustum around the z axis; a cylinder when `r0 == r1`.
    Tube {
        z0: f64,
        z1: f64,
        r0: f64,
        r1: f64,
    },
}

fn box_faces(lo: [f64; 3], hi: [f64; 3], skip: &[Face]) -> Vec<Component> {
    let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut f = vec![
        Component::Rect {
            origin: lo,
            u: [d[0], 0.0, 0.0],
            v: [0.0, d[1], 0.0],
        },
        Component::Rect {
            origin: [lo[0], lo[1], hi[2]],
            u: [d[0], 0.0, 0.0],
            v: [0.0, d[1], 0.0],
        },
        Component::Rect {
            origin: lo,
            u: [d[0], 0.0, 0.0],
            v: [0.0, 0.0, d[2]],
        },
        Component::Rect {
            origin: [lo[0], hi[1], lo[2]],
            u: [d[0], 0.0, 0.0],
            v: [0.0, 0.0, d[2]],
        },
        Component::Rect {
            origin: lo,
            u: [0.0, d[1], 0.0],
            v: [0.0, 0.0, d[2]],
        },
        Component::Rect {
            origin: [hi[0], lo[1], lo[2]],
            u: [0.0, d[1], 0.0],
            v: [0.0, 0.0, d[2]],
        },
    ];
    if skip.contains(&Face::Top) {
        f.remove(1);
    }
    if skip.contains(&Face::Bottom) {
        f.remove(0);
    }
    f
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl Component {
    pub(crate) fn area(&self) -> f64 {
        match *self {
            Component::Sphere { radius } => 4.0 * PI * radius * radius,
            Component::Rect { u, v, .. } => norm(cross(u, v)),
            Component::Disk { radius, .. } => PI * radius * radius,
            Component::Tube { z0, z1, r0, r1 } => {
                let slant = ((z1 - z0).powi(2) + (r1 - r0).powi(2)).sqrt();
                PI * (r0 + r1) * slant
            }
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Component::Sphere { radius: r } => ([-r; 3], [r; 3]),
            Component::Rect { origin, u, v } => {
                let mut lo = origin;
                let mut hi = origin;
                for k in 0..3 {
                    for c in [origin[k] + u[k], origin[k] + v[k], origin[k] + u[k] + v[k]] {
                        lo[k] = lo[k].min(c);
                        hi[k] = hi[k].max(c);
                    }
                }
                (lo, hi)
            }
            Component::Disk { z, radius: r } => ([-r, -r, z], [r, r, z]),
            Component::Tube { z0, z1, r0, r1 } => {
                let r = r0.max(r1);
                ([-r, -r, z0.min(z1)], [r, r, z0.max(z1)])
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        match *self {
            Component::Sphere { radius } => {
                // Archimedes: z uniform on [-r, r] with uniform azimuth.
                let z: f64 = rng.random_range(-1.0..=1.0);
                let phi = rng.random_range(0.0..2.0 * PI);
                let s = (1.0 - z * z).max(0.0).sqrt();
                let p = [s * phi.cos(), s * phi.sin(), z];
                // Renormalize so the radius holds to the last ulp.
                let n = norm(p);
                p.map(|c| radius * c / n)
            }
            Component::Rect { origin, u, v } => {
                let s: f64 = rng.random();
                let t: f64 = rng.random();
                [0, 1, 2].map(|k| origin[k] + s * u[k] + t * v[k])
            }
            Component::Disk { z, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                [r * phi.cos(), r * phi.sin(), z]
            }
            Component::Tube { z0, z1, r0, r1 } => {
                // Area density along the axis grows linearly with the radius.
                let u: f64 = rng.random();
                let t = if (r1 - r0).abs() < 1e-12 {
                    u
                } else {
                    let a = r1 - r0;
                    (-r0 + (r0 * r0 + u * a * (r0 + r1)).sqrt()) / a
                };
                let r = r0 + (r1 - r0) * t;
                let phi = rng.random_range(0.0..2.0 * PI);
                [r * phi.cos(), r * phi.sin(), z0 + (z1 - z0) * t]
            }
        }
    }
}

/// Samples `n` points uniformly by area and maps the shape's analytic
/// bounding box into the unit cube centered at the origin (largest extent 1).
pub fn gen_shape<R: Rng>(spec: &ShapeSpec, n: usize, rng: &mut R) -> Result<PointCloud> {
    Ok(gen_shape_labeled(spec, n, rng)?.0)
}

/// As [`gen_shape`], also returning the component index of every point.
pub(crate) fn gen_shape_labeled<R: Rng>(spec: &ShapeSpec, n: usize, rng: &mut R) -> Result<(PointCloud, Vec<usize>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("gen_shape: n must be at least 1"));
    }
    let comps = spec.components();
    let areas: Vec<f64> = comps.iter().map(Component::area).collect();
    let total: f64 = areas.iter().sum();

    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for c in &comps {
        let (l, h) = c.bounds();
        for k in 0..3 {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(h[k]);
        }
    }
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = 1.0 / extent;

    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut idx = comps.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if u < *a {
                idx = i;
                break;
            }
            u -= a;
        }
        let p = comps[idx].sample(rng);
        pts.push([0, 1, 2].map(|k| (p[k] - center[k]) * scale));
        labels.push(idx);
    }
    Ok((PointCloud::new(pts)?, labels))
}
