//! Star-shaped domains, their grid discretisation, boundary facets and
//! viewpoint frames.

use crate::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::vec3::{add, cross, dot, norm, normalize, scale, sub};
use crate::{Error, Result, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

/// Number of ghost layers kept around the inside nodes.
pub const GHOST_LAYERS: u8 = 3;
/// Cells of empty margin between the domain and the box faces.
pub const BOX_MARGIN_CELLS: usize = 4;
pub const NONE: u32 = u32::MAX;

/// Radial function sampled on a latitude-longitude grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RadialSamples {
    pub n_polar: usize,
    pub n_azimuth: usize,
    /// Row-major `[polar][azimuth]`, polar angle (i + ½)π/n_polar.
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Vec3, radius: f64 },
    Ellipsoid { center: Vec3, semi_axes: Vec3 },
    Radial { center: Vec3, samples: RadialSamples },
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match self {
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Radial { center, .. } => *center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Ball { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::NotStarShaped(format!("radius {radius}")));
                }
            }
            Shape::Ellipsoid { semi_axes, .. } => {
                if semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::NotStarShaped(format!("semi-axes {semi_axes:?}")));
                }
            }
            Shape::Radial { samples, .. } => {
                if samples.n_polar < 4 || samples.n_azimuth < 4 {
                    return Err(Error::Invalid("radial sampling needs at least 4x4 samples".into()));
                }
                if samples.radii.len() != samples.n_polar * samples.n_azimuth {
                    return Err(Error::Invalid("radial sample count mismatch".into()));
                }
                if samples.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(Error::NotStarShaped("non-positive radial sample".into()));
                }
            }
        }
        Ok(())
    }

    /// Distance from the centre to the boundary along the unit direction `d`.
    pub fn radius_along(&self, d: Vec3) -> f64 {
        match self {
            Shape::Ball { radius, .. } => *radius,
            Shape::Ellipsoid { semi_axes: a, .. } => {
                let s = (d[0] / a[0]).powi(2) + (d[1] / a[1]).powi(2) + (d[2] / a[2]).powi(2);
                1.0 / s.sqrt()
            }
            Shape::Radial { samples, .. } => radial_interp(samples, d),
        }
    }

    /// Negative inside, zero on the boundary.
    pub fn level(&self, p: Vec3) -> f64 {
        let c = self.center();
        let y = sub(p, c);
        let rho = norm(y);
        if rho < 1e-300 {
            return -self.radius_along([0.0, 0.0, 1.0]);
        }
        rho - self.radius_along(scale(y, 1.0 / rho))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.level(p) < 0.0
    }

    pub fn boundary_point(&self, d: Vec3) -> Vec3 {
        add(self.center(), scale(d, self.radius_along(d)))
    }

    /// Outward unit normal at a boundary point.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        let c = self.center();
        match self {
            Shape::Ball { .. } => normalize(sub(p, c)),
            Shape::Ellipsoid { semi_axes: a, .. } => {
                let y = sub(p, c);
                normalize([y[0] / (a[0] * a[0]), y[1] / (a[1] * a[1]), y[2] / (a[2] * a[2])])
            }
            Shape::Radial { .. } => {
                let step = 1e-6 * self.max_radius();
                let mut g = [0.0; 3];
                for k in 0..3 {
                    let mut a = p;
                    let mut b = p;
                    a[k] += step;
                    b[k] -= step;
                    g[k] = (self.level(a) - self.level(b)) / (2.0 * step);
                }
                normalize(g)
            }
        }
    }

    pub fn max_radius(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => *radius,
            Shape::Ellipsoid { semi_axes: a, .. } => a[0].max(a[1]).max(a[2]),
            Shape::Radial { samples, .. } => {
                let m = samples.radii.iter().cloned().fold(0.0, f64::max);
                // the cubic interpolant can overshoot the samples slightly
                let mut best = m;
                for d in fibonacci_sphere(2000) {
                    best = best.max(radial_interp(samples, d));
                }
                best
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.max_radius()
    }

    /// Defining function d with d > 0 inside, d = 0 on the boundary, for
    /// shapes where one is available in closed form: (value, gradient, Laplacian).
    pub fn defining_function(&self, p: Vec3) -> Option<(f64, Vec3, f64)> {
        let c = self.center();
        let y = sub(p, c);
        match self {
            Shape::Ball { radius, .. } => Some((radius * radius - dot(y, y), scale(y, -2.0), -6.0)),
            Shape::Ellipsoid { semi_axes: a, .. } => {
                let v = 1.0 - (0..3).map(|k| (y[k] / a[k]).powi(2)).sum::<f64>();
                let g = [-2.0 * y[0] / (a[0] * a[0]), -2.0 * y[1] / (a[1] * a[1]), -2.0 * y[2] / (a[2] * a[2])];
                let l = -2.0 * (0..3).map(|k| 1.0 / (a[k] * a[k])).sum::<f64>();
                Some((v, g, l))
            }
            Shape::Radial { .. } => None,
        }
    }

    /// Whether `x` lies in the closed convex hull of the domain.
    pub fn in_convex_hull(&self, x: Vec3) -> bool {
        match self {
            Shape::Ball { .. } | Shape::Ellipsoid { .. } => self.level(x) <= 0.0,
            Shape::Radial { .. } => {
                let pts: Vec<Vec3> = sphere_directions(48).into_iter().map(|d| self.boundary_point(d)).collect();
                hull_contains(&pts, x, 1e-9 * self.diameter())
            }
        }
    }
}

fn radial_interp(s: &RadialSamples, d: Vec3) -> f64 {
    let np = s.n_polar as isize;
    let na = s.n_azimuth as isize;
    let polar = d[2].clamp(-1.0, 1.0).acos();
    let mut az = d[1].atan2(d[0]);
    if az < 0.0 {
        az += 2.0 * PI;
    }
    let tp = polar / PI * np as f64 - 0.5;
    let ta = az / (2.0 * PI) * na as f64;
    let ip = tp.floor() as isize;
    let ia = ta.floor() as isize;
    let fp = tp - ip as f64;
    let fa = ta - ia as f64;
    let sample = |i: isize, j: isize| -> f64 {
        // reflect through the poles
        let (mut i, mut j) = (i, j);
        if i < 0 {
            i = -i - 1;
            j += na / 2;
        } else if i >= np {
            i = 2 * np - i - 1;
            j += na / 2;
        }
        let j = j.rem_euclid(na);
        s.radii[(i * na + j) as usize]
    };
    let cr = |p0: f64, p1: f64, p2: f64, p3: f64, t: f64| -> f64 {
        0.5 * (2.0 * p1 + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    };
    let mut rows = [0.0; 4];
    for (m, row) in rows.iter_mut().enumerate() {
        let i = ip - 1 + m as isize;
        *row = cr(sample(i, ia - 1), sample(i, ia), sample(i, ia + 1), sample(i, ia + 2), fa);
    }
    cr(rows[0], rows[1], rows[2], rows[3], fp)
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

fn sphere_directions(n_polar: usize) -> Vec<Vec3> {
    let (t, _) = gauss_legendre(n_polar);
    let n_az = 2 * n_polar;
    let mut out = Vec::with_capacity(n_polar * n_az);
    for &ct in &t {
        let st = (1.0 - ct * ct).sqrt();
        for j in 0..n_az {
            let a = 2.0 * PI * j as f64 / n_az as f64;
            out.push([st * a.cos(), st * a.sin(), ct]);
        }
    }
    out
}

/// Minimum-norm point of conv(pts - x) by Frank-Wolfe with exact line
/// search; answers membership of `x` in the hull.
fn hull_contains(pts: &[Vec3], x: Vec3, tol: f64) -> bool {
    let shifted: Vec<Vec3> = pts.iter().map(|p| sub(*p, x)).collect();
    let mut y = shifted[0];
    for _ in 0..20000 {
        let yy = dot(y, y);
        if yy.sqrt() < tol {
            return true;
        }
        let (mut best, mut best_v) = (0usize, f64::INFINITY);
        for (k, p) in shifted.iter().enumerate() {
            let v = dot(*p, y);
            if v < best_v {
                best_v = v;
                best = k;
            }
        }
        if best_v > 0.0 {
            return false;
        }
        let p = shifted[best];
        let d = sub(p, y);
        let dd = dot(d, d);
        if dd == 0.0 {
            break;
        }
        let t = (-dot(y, d) / dd).clamp(0.0, 1.0);
        if t == 0.0 {
            break;
        }
        y = add(y, scale(d, t));
    }
    norm(y) < tol.max(1e-6 * pts.iter().map(|p| norm(sub(*p, x))).fold(0.0, f64::max))
}

/// Uniform box grid with `n` nodes per axis.
#[derive(Clone, Debug)]
pub struct Grid {
    pub n: usize,
    pub lo: Vec3,
    pub dx: f64,
}

impl Grid {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        let i = idx / (self.n * self.n);
        [i, j, k]
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        [
            self.lo[0] + i as f64 * self.dx,
            self.lo[1] + j as f64 * self.dx,
            self.lo[2] + k as f64 * self.dx,
        ]
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Neighbour of `idx` in direction `d` (0:+x 1:-x 2:+y 3:-y 4:+z 5:-z).
    #[inline]
    pub fn neighbor(&self, idx: usize, d: usize) -> Option<usize> {
        let c = self.ijk(idx);
        let axis = d / 2;
        let up = d % 2 == 0;
        if up && c[axis] + 1 >= self.n || !up && c[axis] == 0 {
            return None;
        }
        let stride = [self.n * self.n, self.n, 1][axis];
        Some(if up { idx + stride } else { idx - stride })
    }

    /// Box grid enclosing `shape` with the standard margin.
    pub fn enclosing(shape: &Shape, n: usize) -> Result<Grid> {
        if n < 2 * BOX_MARGIN_CELLS + 5 {
            return Err(Error::GridTooCoarse(format!("grid_n={n} is below {}", 2 * BOX_MARGIN_CELLS + 5)));
        }
        let rmax = shape.max_radius();
        let half = rmax / (1.0 - 2.0 * BOX_MARGIN_CELLS as f64 / (n - 1) as f64);
        let dx = 2.0 * half / (n - 1) as f64;
        let c = shape.center();
        Ok(Grid { n, lo: [c[0] - half, c[1] - half, c[2] - half], dx })
    }
}

pub fn axis_unit(d: usize) -> Vec3 {
    let mut e = [0.0; 3];
    e[d / 2] = if d % 2 == 0 { 1.0 } else { -1.0 };
    e
}

/// Point where a grid line leaves the domain between an inside node and its
/// outside neighbour.
#[derive(Clone, Debug)]
pub struct Crossing {
    pub unknown: u32,
    pub dir: u8,
    /// Distance to the boundary in units of dx, in (0, 1].
    pub frac: f64,
    pub point: Vec3,
}

/// Inside nodes of a grid together with the cut geometry needed by
/// Shortley-Weller stencils.
#[derive(Clone, Debug)]
pub struct MaskedGrid {
    pub grid: Grid,
    /// node → unknown index or [`NONE`].
    pub unknown_of: Vec<u32>,
    /// unknown → node.
    pub nodes: Vec<usize>,
    /// arm length (in dx) to the neighbour or boundary for each direction.
    pub arms: Vec<[f64; 6]>,
    /// crossing index per arm, [`NONE`] when the neighbour is inside.
    pub arm_crossing: Vec<[u32; 6]>,
    pub crossings: Vec<Crossing>,
}

impl MaskedGrid {
    pub fn new(shape: &Shape, grid: Grid) -> MaskedGrid {
        let len = grid.len();
        let eps = 1e-10 * grid.dx;
        let inside: Vec<bool> = (0..len).map(|i| shape.level(grid.point(i)) < -eps).collect();
        let mut unknown_of = vec![NONE; len];
        let mut nodes = Vec::new();
        for (i, &ins) in inside.iter().enumerate() {
            if ins {
                unknown_of[i] = nodes.len() as u32;
                nodes.push(i);
            }
        }
        let mut arms = Vec::with_capacity(nodes.len());
        let mut arm_crossing = Vec::with_capacity(nodes.len());
        let mut crossings = Vec::new();
        for (u, &node) in nodes.iter().enumerate() {
            let mut a = [1.0; 6];
            let mut ac = [NONE; 6];
            let p = grid.point(node);
            for d in 0..6 {
                let nb = grid.neighbor(node, d);
                let nb_inside = nb.map(|q| inside[q]).unwrap_or(false);
                if nb_inside {
                    continue;
                }
                let e = axis_unit(d);
                let f = |t: f64| shape.level(add(p, scale(e, t * grid.dx)));
                let (mut lo, mut hi) = (0.0, 1.0);
                if f(hi) < 0.0 {
                    // outside neighbour classified by the eps band
                    hi = 1.0;
                    lo = 1.0;
                }
                for _ in 0..60 {
                    if hi - lo < 1e-15 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t = (0.5 * (lo + hi)).max(1e-10);
                a[d] = t;
                ac[d] = crossings.len() as u32;
                crossings.push(Crossing {
                    unknown: u as u32,
                    dir: d as u8,
                    frac: t,
                    point: add(p, scale(e, t * grid.dx)),
                });
            }
            arms.push(a);
            arm_crossing.push(ac);
        }
        MaskedGrid { grid, unknown_of, nodes, arms, arm_crossing, crossings }
    }

    pub fn num_unknowns(&self) -> usize {
        self.nodes.len()
    }
}

/// Boundary quadrature node with outward normal and surface weight.
#[derive(Clone, Debug, Serialize)]
pub struct Facet {
    pub pos: Vec3,
    pub normal: Vec3,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub shape: Shape,
    pub grid_n: usize,
}

/// Spectral rule in spherical coordinates about the centre, for integrands
/// that are smooth in closed form.
#[derive(Clone, Debug)]
pub struct VolumeRule {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl VolumeRule {
    pub fn new(shape: &Shape, n_radial: usize, n_polar: usize) -> VolumeRule {
        let c = shape.center();
        let (t, wt) = gauss_legendre(n_polar);
        let n_az = 2 * n_polar;
        let (rs, wr) = gauss_legendre_on(n_radial, 0.0, 1.0);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (a, &ct) in t.iter().enumerate() {
            let st = (1.0 - ct * ct).sqrt();
            for j in 0..n_az {
                let ang = 2.0 * PI * j as f64 / n_az as f64;
                let d = [st * ang.cos(), st * ang.sin(), ct];
                let big_r = shape.radius_along(d);
                let w_dir = wt[a] * 2.0 * PI / n_az as f64;
                for (m, &s) in rs.iter().enumerate() {
                    let rho = s * big_r;
                    points.push(add(c, scale(d, rho)));
                    weights.push(w_dir * wr[m] * big_r * rho * rho);
                }
            }
        }
        VolumeRule { points, weights }
    }

    pub fn integrate<F: Fn(Vec3) -> crate::C64>(&self, f: F) -> crate::C64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| f(*p) * *w).sum()
    }
}

/// Grid discretisation of a star-shaped domain.
#[derive(Clone, Debug)]
pub struct DiscretizedDomain {
    pub spec: DomainSpec,
    pub mask: MaskedGrid,
    /// 0 inside, 1..=GHOST_LAYERS ghost layer, u8::MAX elsewhere.
    pub class: Vec<u8>,
    /// Volume quadrature weight per node (dx³ times the fraction of the dual
    /// cell inside the domain).
    pub weights: Vec<f64>,
    pub facets: Vec<Facet>,
}

impl DiscretizedDomain {
    pub fn new(spec: &DomainSpec) -> Result<DiscretizedDomain> {
        spec.shape.validate()?;
        let grid = Grid::enclosing(&spec.shape, spec.grid_n)?;
        let shape = &spec.shape;
        let mask = MaskedGrid::new(shape, grid.clone());
        if mask.num_unknowns() < 27 {
            return Err(Error::GridTooCoarse(format!("only {} inside nodes", mask.num_unknowns())));
        }
        let class = ghost_classes(&grid, &mask.unknown_of, GHOST_LAYERS + 1);
        for (idx, &c) in class.iter().enumerate() {
            if c <= GHOST_LAYERS {
                let ijk = grid.ijk(idx);
                if ijk.iter().any(|&v| v < 2 || v + 2 >= grid.n) {
                    return Err(Error::GridTooCoarse("ghost layers reach the box faces".into()));
                }
            }
        }
        let weights = volume_weights(shape, &grid, &class);
        let n_polar = ((spec.grid_n - 1) / 2).max(12);
        let facets = sphere_facets(shape, n_polar);
        Ok(DiscretizedDomain { spec: spec.clone(), mask, class, weights, facets })
    }

    pub fn shape(&self) -> &Shape {
        &self.spec.shape
    }

    pub fn grid(&self) -> &Grid {
        &self.mask.grid
    }

    pub fn dx(&self) -> f64 {
        self.mask.grid.dx
    }

    pub fn is_inside(&self, idx: usize) -> bool {
        self.class[idx] == 0
    }

    /// Facets on the part of the boundary seen from `x0`: (x - x0)·ν ≤ 0.
    pub fn front_face(&self, x0: Vec3) -> Vec<bool> {
        self.facets.iter().map(|f| dot(sub(f.pos, x0), f.normal) <= 0.0).collect()
    }

    pub fn total_surface(&self) -> f64 {
        self.facets.iter().map(|f| f.weight).sum()
    }
}

/// Chebyshev-distance layers from the inside nodes, up to `max_layer`.
fn ghost_classes(grid: &Grid, unknown_of: &[u32], max_layer: u8) -> Vec<u8> {
    let n = grid.n as isize;
    let mut class = vec![u8::MAX; grid.len()];
    let mut queue = VecDeque::new();
    for (i, &u) in unknown_of.iter().enumerate() {
        if u != NONE {
            class[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(idx) = queue.pop_front() {
        let c = class[idx];
        if c >= max_layer {
            continue;
        }
        let [i, j, k] = grid.ijk(idx);
        for di in -1..=1isize {
            for dj in -1..=1isize {
                for dk in -1..=1isize {
                    let (a, b, cc) = (i as isize + di, j as isize + dj, k as isize + dk);
                    if a < 0 || b < 0 || cc < 0 || a >= n || b >= n || cc >= n {
                        continue;
                    }
                    let q = grid.index(a as usize, b as usize, cc as usize);
                    if class[q] == u8::MAX {
                        class[q] = c + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    class
}

fn volume_weights(shape: &Shape, grid: &Grid, class: &[u8]) -> Vec<f64> {
    const SUB: usize = 8;
    let dx = grid.dx;
    let cell = dx * dx * dx;
    let band = 1.5 * dx;
    let mut w = vec![0.0; grid.len()];
    for idx in 0..grid.len() {
        if class[idx] > 1 {
            continue;
        }
        let p = grid.point(idx);
        let lv = shape.level(p);
        if lv < -band {
            w[idx] = cell;
            continue;
        }
        if lv > band {
            continue;
        }
        let mut count = 0usize;
        for a in 0..SUB {
            for b in 0..SUB {
                for c in 0..SUB {
                    let off = |m: usize| ((m as f64 + 0.5) / SUB as f64 - 0.5) * dx;
                    let q = [p[0] + off(a), p[1] + off(b), p[2] + off(c)];
                    if shape.level(q) < 0.0 {
                        count += 1;
                    }
                }
            }
        }
        w[idx] = cell * count as f64 / (SUB * SUB * SUB) as f64;
    }
    w
}

/// Spectral surface quadrature: Gauss-Legendre in cos(polar) times a uniform
/// azimuthal rule, lifted through the radial function.
pub fn sphere_facets(shape: &Shape, n_polar: usize) -> Vec<Facet> {
    let (t, wt) = gauss_legendre(n_polar);
    let n_az = 2 * n_polar;
    let mut out = Vec::with_capacity(n_polar * n_az);
    for (a, &ct) in t.iter().enumerate() {
        let st = (1.0 - ct * ct).sqrt();
        for j in 0..n_az {
            let ang = 2.0 * PI * (j as f64 + 0.5) / n_az as f64;
            let d = [st * ang.cos(), st * ang.sin(), ct];
            let r = shape.radius_along(d);
            let pos = shape.boundary_point(d);
            let normal = shape.normal(pos);
            let dw = wt[a] * 2.0 * PI / n_az as f64;
            out.push(Facet { pos, normal, weight: r * r * dw / dot(normal, d) });
        }
    }
    out
}

/// Orthonormal frame adapted to a viewpoint: e1 = ω, e3 points from the
/// singular axis towards the domain centre.
#[derive(Clone, Debug, Serialize)]
pub struct Frame {
    pub origin: Vec3,
    pub e: [Vec3; 3],
}

/// Cylindrical chart coordinates about the singular axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cylindrical {
    pub x1: f64,
    pub r: f64,
    pub theta: f64,
}

impl Frame {
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let y = sub(p, self.origin);
        [dot(y, self.e[0]), dot(y, self.e[1]), dot(y, self.e[2])]
    }

    pub fn to_world(&self, l: Vec3) -> Vec3 {
        let mut p = self.origin;
        for k in 0..3 {
            p = add(p, scale(self.e[k], l[k]));
        }
        p
    }

    pub fn chart(&self, p: Vec3) -> Cylindrical {
        let l = self.to_local(p);
        Cylindrical { x1: l[0], r: (l[1] * l[1] + l[2] * l[2]).sqrt(), theta: l[2].atan2(l[1]) }
    }

    pub fn inverse_chart(&self, c: Cylindrical) -> Vec3 {
        self.to_world([c.x1, c.r * c.theta.cos(), c.r * c.theta.sin()])
    }

    /// Unit radial vector e_r(θ) in world coordinates.
    pub fn radial_unit(&self, theta: f64) -> Vec3 {
        add(scale(self.e[1], theta.cos()), scale(self.e[2], theta.sin()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Viewpoint {
    pub x0: Vec3,
    pub omega: Vec3,
    pub frame: Frame,
}

impl Viewpoint {
    pub fn new(shape: &Shape, x0: Vec3, omega: Vec3) -> Result<Viewpoint> {
        if ((norm(omega) - 1.0).abs()) > 1e-9 {
            return Err(Error::InadmissibleViewpoint(format!("|omega| = {}", norm(omega))));
        }
        if shape.in_convex_hull(x0) {
            return Err(Error::InadmissibleViewpoint("x0 lies in the convex hull".into()));
        }
        let c = shape.center();
        let y = sub(c, x0);
        let perp = sub(y, scale(omega, dot(y, omega)));
        let diam = shape.diameter();
        if norm(perp) < 1e-9 * diam {
            return Err(Error::InadmissibleViewpoint("centre on the singular axis".into()));
        }
        let e3 = normalize(perp);
        let e2 = cross(e3, omega);
        let frame = Frame { origin: x0, e: [omega, e2, e3] };
        // every boundary point must sit strictly on the e3 side of the axis
        for d in sphere_directions(32) {
            let l = frame.to_local(shape.boundary_point(d));
            if l[2] <= 1e-9 * diam {
                return Err(Error::InadmissibleViewpoint("domain meets the axis half-plane".into()));
            }
        }
        if line_meets(shape, x0, omega) {
            return Err(Error::InadmissibleViewpoint("axis line meets the closed domain".into()));
        }
        Ok(Viewpoint { x0, omega, frame })
    }

    /// Standard viewpoint: origin with ω = e1 (for domains away from the x1 axis).
    pub fn standard(shape: &Shape) -> Result<Viewpoint> {
        Viewpoint::new(shape, [0.0; 3], [1.0, 0.0, 0.0])
    }

    /// Random admissible viewpoint at distance `dist_factor`·diameter from the centre.
    pub fn random<R: rand::Rng>(shape: &Shape, rng: &mut R, dist_factor: f64) -> Result<Viewpoint> {
        let c = shape.center();
        let big = dist_factor * shape.diameter();
        for _ in 0..1000 {
            let u = random_unit(rng);
            let x0 = add(c, scale(u, big));
            let w = random_unit(rng);
            if let Ok(vp) = Viewpoint::new(shape, x0, w) {
                return Ok(vp);
            }
        }
        Err(Error::InadmissibleViewpoint("no admissible viewpoint found".into()))
    }
}

pub fn random_unit<R: rand::Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = norm(v);
        if n > 0.1 && n <= 1.0 {
            return scale(v, 1.0 / n);
        }
    }
}

fn line_meets(shape: &Shape, x0: Vec3, w: Vec3) -> bool {
    let c = shape.center();
    let t0 = dot(sub(c, x0), w);
    let rmax = shape.max_radius();
    let p_closest = add(x0, scale(w, t0));
    if norm(sub(p_closest, c)) > 1.01 * rmax {
        return false;
    }
    let steps = 4000;
    (0..=steps).any(|s| {
        let t = t0 - rmax + 2.0 * rmax * s as f64 / steps as f64;
        shape.level(add(x0, scale(w, t))) <= 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_ball() -> Shape {
        Shape::Ball { center: [0.0, 0.0, 4.0], radius: 1.0 }
    }

    #[test]
    fn ball_volume_within_two_percent() {
        let d = DiscretizedDomain::new(&DomainSpec { shape: unit_ball(), grid_n: 33 }).unwrap();
        let v: f64 = d.weights.iter().sum();
        let exact = 4.0 * PI / 3.0;
        assert!((v - exact).abs() / exact < 0.02, "volume {v}");
    }

    #[test]
    fn facets_integrate_surface_area_spectrally() {
        let s = unit_ball();
        let f = sphere_facets(&s, 16);
        let area: f64 = f.iter().map(|f| f.weight).sum();
        assert!((area - 4.0 * PI).abs() < 1e-12);
        let e = Shape::Ellipsoid { center: [0.0; 3], semi_axes: [1.0, 1.0, 1.0] };
        let area_e: f64 = sphere_facets(&e, 16).iter().map(|f| f.weight).sum();
        assert!((area_e - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_surface_divergence_theorem() {
        // ∫ x·ν dS = 3|Ω| for any domain
        let a = [1.2, 0.8, 0.6];
        let e = Shape::Ellipsoid { center: [0.3, -0.1, 0.2], semi_axes: a };
        let c = e.center();
        let fl: f64 = sphere_facets(&e, 24).iter().map(|f| dot(sub(f.pos, c), f.normal) * f.weight).sum();
        let vol = 4.0 * PI / 3.0 * a[0] * a[1] * a[2];
        assert!((fl - 3.0 * vol).abs() < 1e-8 * vol, "{fl} vs {}", 3.0 * vol);
    }

    #[test]
    fn radial_shape_of_constant_radius_is_a_ball() {
        let samples = RadialSamples { n_polar: 8, n_azimuth: 16, radii: vec![0.7; 128] };
        let s = Shape::Radial { center: [1.0, 2.0, 3.0], samples };
        for d in fibonacci_sphere(50) {
            assert!((s.radius_along(d) - 0.7).abs() < 1e-14);
        }
        let p = s.boundary_point([0.0, 0.6, 0.8]);
        let n = s.normal(p);
        assert!(norm(sub(n, [0.0, 0.6, 0.8])) < 1e-6);
        assert!(s.in_convex_hull([1.0, 2.0, 3.5]));
        assert!(!s.in_convex_hull([1.0, 2.0, 3.8]));
    }

    #[test]
    fn standard_viewpoint_frame() {
        let vp = Viewpoint::standard(&unit_ball()).unwrap();
        assert_eq!(vp.frame.e[2], [0.0, 0.0, 1.0]);
        // right-handed
        let c = cross(vp.frame.e[0], vp.frame.e[1]);
        assert!(norm(sub(c, vp.frame.e[2])) < 1e-15);
    }

    #[test]
    fn viewpoint_inside_hull_is_rejected() {
        let s = unit_ball();
        assert!(matches!(
            Viewpoint::new(&s, [0.0, 0.0, 4.5], [1.0, 0.0, 0.0]),
            Err(Error::InadmissibleViewpoint(_))
        ));
        // axis through the ball
        assert!(Viewpoint::new(&s, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]).is_err());
        assert!(Viewpoint::new(&s, [0.0, 0.0, 0.0], [0.0, 0.6, 0.6]).is_err());
    }

    #[test]
    fn front_face_of_ball_from_origin() {
        let d = DiscretizedDomain::new(&DomainSpec { shape: unit_ball(), grid_n: 17 }).unwrap();
        let ff = d.front_face([0.0; 3]);
        for (f, &front) in d.facets.iter().zip(&ff) {
            // (x - x0)·ν ≤ 0 ⇔ x·(x - c) ≤ 0 ⇔ z ≤ 4 - 1/4 on the unit sphere
            let expect = f.pos[2] <= 3.75;
            assert_eq!(front, expect);
        }
    }

    #[test]
    fn chart_round_trip() {
        let vp = Viewpoint::standard(&unit_ball()).unwrap();
        let p = [0.3, -0.2, 4.1];
        let c = vp.frame.chart(p);
        let q = vp.frame.inverse_chart(c);
        assert!(norm(sub(p, q)) < 1e-14);
        assert!(c.theta > 0.0 && c.theta < PI);
    }

    #[test]
    fn crossings_lie_on_the_boundary() {
        let s = unit_ball();
        let g = Grid::enclosing(&s, 17).unwrap();
        let m = MaskedGrid::new(&s, g);
        for c in &m.crossings {
            assert!(s.level(c.point).abs() < 1e-12);
            assert!(c.frac > 0.0 && c.frac <= 1.0);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let r = DiscretizedDomain::new(&DomainSpec { shape: unit_ball(), grid_n: 9 });
        assert!(matches!(r, Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn volume_rule_integrates_polynomials() {
        let e = Shape::Ellipsoid { center: [0.0, 0.0, 4.0], semi_axes: [1.0, 0.8, 0.9] };
        let rule = VolumeRule::new(&e, 8, 12);
        let v = rule.integrate(|_| crate::C64::new(1.0, 0.0)).re;
        let exact = 4.0 * PI / 3.0 * 0.72;
        assert!((v - exact).abs() < 1e-10);
    }
}
