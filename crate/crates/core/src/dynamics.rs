//! One tilt episode: planar sliding under tilted gravity until the part rests.
//!
//! The tray frame is fixed; tilting the tray by `alpha` toward heading `d`
//! produces an in-plane gravity `g sin(alpha) d` and a floor load
//! `m g cos(alpha)`. The floor load is spread evenly over a grid of support
//! points inside the polygon, each carrying Coulomb friction regularized
//! linearly below `v_stick`. Walls push back on penetrating vertices with a
//! linear spring-damper and resist tangential sliding with the same
//! regularized Coulomb law. Integration is semi-implicit Euler at fixed `dt`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::friction::FrictionField;
use crate::geometry::{in_free_space, point_in_polygon, Pose, RigidBody, Tray, Vec2, Wall};

/// 30°, equal to `30f64.to_radians()` so configs written in degrees match it exactly.
pub const DEFAULT_TILT: f64 = PI / 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid simulation parameter: {0}")]
    InvalidParams(String),
    #[error("tilt direction {0} is outside 0..=7")]
    BadDirection(u8),
    #[error("tilt angle {0} rad is outside (0, pi/2)")]
    BadTiltAngle(f64),
    #[error("contact blowup: penetration {depth:.3e} m at t = {time:.4} s exceeds {limit:.1e} m")]
    ContactBlowup { depth: f64, time: f64, limit: f64 },
    #[error("only {found} support points inside the polygon after refinement")]
    SupportSampling { found: usize },
    #[error("start pose {0} is not in free space")]
    StartInCollision(Pose),
    #[error("state became non-finite at t = {0:.4} s")]
    NonFinite(f64),
}

/// Integration, contact and settling constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// s
    pub dt: f64,
    /// m/s²
    pub g: f64,
    /// N/m per penetrating vertex
    pub k_wall: f64,
    /// N·s/m per penetrating vertex
    pub c_wall: f64,
    pub mu_wall: f64,
    /// m/s; friction is linear in slip speed below this
    pub v_stick: f64,
    /// support grid is `n_support x n_support` over the bounding box
    pub n_support: usize,
    /// m/s
    pub settle_v: f64,
    /// rad/s
    pub settle_w: f64,
    /// s
    pub settle_hold: f64,
    /// s
    pub max_sim_time: f64,
    /// m; deeper penetration aborts the episode
    pub max_penetration: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 4e-4,
            g: 9.81,
            k_wall: 1e5,
            c_wall: 50.0,
            mu_wall: 0.25,
            v_stick: 1e-3,
            n_support: 6,
            settle_v: 9.99e-4,
            settle_w: 2e-2,
            settle_hold: 0.05,
            max_sim_time: 10.0,
            max_penetration: 2e-3,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("dt", self.dt),
            ("g", self.g),
            ("k_wall", self.k_wall),
            ("c_wall", self.c_wall),
            ("mu_wall", self.mu_wall),
            ("v_stick", self.v_stick),
            ("settle_v", self.settle_v),
            ("settle_w", self.settle_w),
            ("settle_hold", self.settle_hold),
            ("max_sim_time", self.max_sim_time),
            ("max_penetration", self.max_penetration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dt > 1e-3 {
            return Err(DynamicsError::InvalidParams(format!("dt {} exceeds 1e-3 s", self.dt)));
        }
        if self.n_support < 2 {
            return Err(DynamicsError::InvalidParams("n_support must be at least 2".into()));
        }
        if self.settle_v >= self.v_stick {
            return Err(DynamicsError::InvalidParams(format!(
                "settle_v {} must be below v_stick {}",
                self.settle_v, self.v_stick
            )));
        }
        Ok(())
    }
}

/// A tray tilt toward heading `direction * 45°` by `tilt_angle` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltAction {
    direction: u8,
    tilt_angle: f64,
}

impl TiltAction {
    pub fn new(direction: u8, tilt_angle: f64) -> Result<Self, DynamicsError> {
        if direction > 7 {
            return Err(DynamicsError::BadDirection(direction));
        }
        if !(tilt_angle > 0.0 && tilt_angle < FRAC_PI_2) {
            return Err(DynamicsError::BadTiltAngle(tilt_angle));
        }
        Ok(TiltAction {
            direction,
            tilt_angle,
        })
    }

    /// Tilt by the default 30°.
    pub fn toward(direction: u8) -> Result<Self, DynamicsError> {
        Self::new(direction, DEFAULT_TILT)
    }

    pub fn direction(&self) -> u8 {
        self.direction
    }

    pub fn tilt_angle(&self) -> f64 {
        self.tilt_angle
    }

    /// Unit vector of the downhill direction in the tray frame.
    pub fn heading(&self) -> Vec2 {
        let phi = f64::from(self.direction) * FRAC_PI_4;
        // exact axes for the cardinal headings
        match self.direction {
            0 => Vec2::new(1.0, 0.0),
            2 => Vec2::new(0.0, 1.0),
            4 => Vec2::new(-1.0, 0.0),
            6 => Vec2::new(0.0, -1.0),
            _ => Vec2::new(phi.cos(), phi.sin()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub pose: Pose,
    pub vel: Vec2,
    pub omega: f64,
}

impl BodyState {
    pub fn at_rest(pose: Pose) -> Self {
        BodyState {
            pose,
            vel: Vec2::ZERO,
            omega: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltOutcome {
    pub settled_pose: Pose,
    pub settled: bool,
    pub sim_time: f64,
    pub max_penetration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportPoint {
    /// body frame, relative to the COM
    pub point: Vec2,
    /// fraction of the floor load carried here
    pub share: f64,
}

/// Samples the polygon interior on an `n x n` grid of bounding-box cell
/// centers, doubling the grid (up to two times) when a thin part yields
/// fewer than three samples. The sample set is shifted onto the COM when
/// that keeps every sample inside the polygon, so uniform friction exerts
/// no spurious torque on a translating part.
pub fn support_points(body: &RigidBody, n_support: usize) -> Result<Vec<SupportPoint>, DynamicsError> {
    let verts = body.vertices();
    let (mut lo, mut hi) = (verts[0], verts[0]);
    for v in verts {
        lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
        hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
    }
    let mut n = n_support.max(2);
    let mut points = Vec::new();
    for _ in 0..3 {
        points.clear();
        let step = Vec2::new((hi.x - lo.x) / n as f64, (hi.y - lo.y) / n as f64);
        for i in 0..n {
            for j in 0..n {
                let p = Vec2::new(
                    lo.x + (i as f64 + 0.5) * step.x,
                    lo.y + (j as f64 + 0.5) * step.y,
                );
                if point_in_polygon(p, verts) {
                    points.push(p);
                }
            }
        }
        if points.len() >= 3 {
            break;
        }
        n *= 2;
    }
    if points.len() < 3 {
        return Err(DynamicsError::SupportSampling {
            found: points.len(),
        });
    }
    let count = points.len() as f64;
    let centroid = points.iter().fold(Vec2::ZERO, |acc, p| acc + *p) * (1.0 / count);
    let shifted: Vec<Vec2> = points.iter().map(|p| *p - centroid).collect();
    if shifted.iter().all(|p| point_in_polygon(*p, verts)) {
        points = shifted;
    }
    Ok(points
        .into_iter()
        .map(|point| SupportPoint {
            point,
            share: 1.0 / count,
        })
        .collect())
}

/// A body with its support sampling, ready for repeated episodes.
#[derive(Debug, Clone)]
pub struct Part {
    body: RigidBody,
    supports: Vec<SupportPoint>,
}

impl Part {
    pub fn new(body: RigidBody, params: &SimParams) -> Result<Self, DynamicsError> {
        let supports = support_points(&body, params.n_support)?;
        Ok(Part { body, supports })
    }

    pub fn body(&self) -> &RigidBody {
        &self.body
    }

    pub fn supports(&self) -> &[SupportPoint] {
        &self.supports
    }
}

/// Generalized force `(fx, fy, torque)` together with its velocity and
/// position Jacobians, stored as the upper triangles of 3x3 symmetric
/// matrices in the order `xx, xy, xθ, yy, yθ, θθ`.
#[derive(Debug, Clone, Copy, Default)]
struct ForceAccumulator {
    force: [f64; 3],
    /// `-dF/du`
    damping: [f64; 6],
    /// `-dF/dq`
    stiffness: [f64; 6],
    deepest: f64,
}

/// Adds `gain * J^T A J` to `m`, where `J = [[1, 0, -ry], [0, 1, rx]]` maps
/// body velocity to the velocity of the point at lever `r`, and
/// `A = [[a, b], [b, d]]`.
#[inline(always)]
fn add_projected(m: &mut [f64; 6], r: Vec2, gain: f64, a: f64, b: f64, d: f64) {
    let (wx, wy) = (-r.y, r.x);
    m[0] += gain * a;
    m[1] += gain * b;
    m[2] += gain * (a * wx + b * wy);
    m[3] += gain * d;
    m[4] += gain * (b * wx + d * wy);
    m[5] += gain * (a * wx * wx + 2.0 * b * wx * wy + d * wy * wy);
}

impl ForceAccumulator {
    #[inline(always)]
    fn apply(&mut self, r: Vec2, f: Vec2) {
        self.force[0] += f.x;
        self.force[1] += f.y;
        self.force[2] += r.cross(f);
    }

    fn force_torque(&self) -> (Vec2, f64) {
        (Vec2::new(self.force[0], self.force[1]), self.force[2])
    }
}

/// Floor friction at every support point, regularized Coulomb:
/// `-mu N v / max(|v|, v_stick)`.
#[inline(always)]
fn accumulate_floor(
    acc: &mut ForceAccumulator,
    part: &Part,
    state: &BodyState,
    field: &FrictionField,
    load: f64,
    v_stick: f64,
) {
    let (s, c) = state.pose.theta.sin_cos();
    let pos = state.pose.position();
    for sp in &part.supports {
        let r = sp.point.rotate(c, s);
        let vp = state.vel + r.perp_scaled(state.omega);
        let mu_n = field.mu_at(pos + r) * sp.share * load;
        let speed = vp.norm();
        if speed <= v_stick {
            let g = mu_n / v_stick;
            acc.apply(r, vp * -g);
            add_projected(&mut acc.damping, r, g, 1.0, 0.0, 1.0);
        } else {
            let g = mu_n / speed;
            acc.apply(r, vp * -g);
            let (ux, uy) = (vp.x / speed, vp.y / speed);
            add_projected(&mut acc.damping, r, g, 1.0 - ux * ux, -ux * uy, 1.0 - uy * uy);
        }
    }
}

/// Spring-damper normal force and regularized Coulomb tangential force at
/// every vertex beyond a wall.
#[inline(always)]
fn accumulate_walls(
    acc: &mut ForceAccumulator,
    body: &RigidBody,
    state: &BodyState,
    tray: &Tray,
    params: &SimParams,
) {
    let (s, c) = state.pose.theta.sin_cos();
    let pos = state.pose.position();
    for v in body.vertices() {
        let r = v.rotate(c, s);
        let p = pos + r;
        for wall in Wall::ALL {
            let depth = wall.depth(p, tray);
            if depth <= 0.0 {
                continue;
            }
            acc.deepest = acc.deepest.max(depth);
            let n = wall.inward_normal();
            let t = Vec2::new(-n.y, n.x);
            let vp = state.vel + r.perp_scaled(state.omega);
            let approach = -vp.dot(n);
            let nn = (n.x * n.x, n.x * n.y, n.y * n.y);
            add_projected(&mut acc.stiffness, r, params.k_wall, nn.0, nn.1, nn.2);
            let mut fn_mag = params.k_wall * depth;
            if approach > 0.0 {
                fn_mag += params.c_wall * approach;
                add_projected(&mut acc.damping, r, params.c_wall, nn.0, nn.1, nn.2);
            }
            let vt = vp.dot(t);
            let mu_n = params.mu_wall * fn_mag;
            // Slip is handled as a damper frozen at the current speed. Its
            // force is still the Coulomb limit, but a stiff wall's impulse
            // can no longer flip the contact's sliding direction in one step.
            let g = mu_n / vt.abs().max(params.v_stick);
            add_projected(&mut acc.damping, r, g, t.x * t.x, t.x * t.y, t.y * t.y);
            let ft = -g * vt;
            acc.apply(r, n * fn_mag + t * ft);
        }
    }
}

/// Net floor friction force and torque (about the COM) on the part.
pub fn floor_friction(
    part: &Part,
    state: &BodyState,
    field: &FrictionField,
    action: &TiltAction,
    params: &SimParams,
) -> (Vec2, f64) {
    let mut acc = ForceAccumulator::default();
    let load = part.body.mass * params.g * action.tilt_angle.cos();
    accumulate_floor(&mut acc, part, state, field, load, params.v_stick);
    acc.force_torque()
}

/// Wall contact force, torque and the deepest penetration this step.
pub fn wall_forces(body: &RigidBody, state: &BodyState, tray: &Tray, params: &SimParams) -> (Vec2, f64, f64) {
    let mut acc = ForceAccumulator::default();
    accumulate_walls(&mut acc, body, state, tray, params);
    let (f, t) = acc.force_torque();
    (f, t, acc.deepest)
}

/// Solves the symmetric 3x3 system `A x = b` (A stored as upper triangle).
#[inline(always)]
fn solve_sym3(a: &[f64; 6], b: [f64; 3]) -> [f64; 3] {
    let [a00, a01, a02, a11, a12, a22] = *a;
    let c00 = a11 * a22 - a12 * a12;
    let c01 = a02 * a12 - a01 * a22;
    let c02 = a01 * a12 - a02 * a11;
    let det = a00 * c00 + a01 * c01 + a02 * c02;
    let c11 = a00 * a22 - a02 * a02;
    let c12 = a01 * a02 - a00 * a12;
    let c22 = a00 * a11 - a01 * a01;
    let inv = 1.0 / det;
    [
        (c00 * b[0] + c01 * b[1] + c02 * b[2]) * inv,
        (c01 * b[0] + c11 * b[1] + c12 * b[2]) * inv,
        (c02 * b[0] + c12 * b[1] + c22 * b[2]) * inv,
    ]
}

#[inline(always)]
fn sym_mul(a: &[f64; 6], u: [f64; 3]) -> [f64; 3] {
    [
        a[0] * u[0] + a[1] * u[1] + a[2] * u[2],
        a[1] * u[0] + a[3] * u[1] + a[4] * u[2],
        a[2] * u[0] + a[4] * u[1] + a[5] * u[2],
    ]
}

/// Substeps per step while a vertex strikes or leaves a wall.
const IMPACT_SUBSTEPS: u32 = 16;
/// m/s; normal speed above which wall contact counts as an impact.
const IMPACT_SPEED: f64 = 0.003;

/// Whether a vertex moving faster than [`IMPACT_SPEED`] along a wall normal
/// is in contact or will reach the wall within `dt`. The wall spring's
/// period is only a few steps long, so these transients are resolved with
/// substeps while resting and slow sliding contact keep the full step.
fn impact_ahead(body: &RigidBody, state: &BodyState, tray: &Tray, dt: f64) -> bool {
    let (s, c) = state.pose.theta.sin_cos();
    let pos = state.pose.position();
    body.vertices().iter().any(|v| {
        let r = v.rotate(c, s);
        let p = pos + r;
        let vp = state.vel + r.perp_scaled(state.omega);
        Wall::ALL.iter().any(|wall| {
            let approach = -vp.dot(wall.inward_normal());
            approach.abs() > IMPACT_SPEED && wall.depth(p, tray) + dt * approach.max(0.0) > 0.0
        })
    })
}

/// One linearly-implicit step of length `h`.
#[inline(always)]
fn implicit_update(state: &mut BodyState, acc: &ForceAccumulator, mass: f64, inertia: f64, h: f64) {
    let u = [state.vel.x, state.vel.y, state.omega];
    let ku = sym_mul(&acc.stiffness, u);
    let mut lhs = [mass, 0.0, 0.0, mass, 0.0, inertia];
    for ((m, c), k) in lhs.iter_mut().zip(acc.damping).zip(acc.stiffness) {
        *m += h * c + h * h * k;
    }
    let rhs = [
        h * (acc.force[0] - h * ku[0]),
        h * (acc.force[1] - h * ku[1]),
        h * (acc.force[2] - h * ku[2]),
    ];
    let du = solve_sym3(&lhs, rhs);
    state.vel.x += du[0];
    state.vel.y += du[1];
    state.omega += du[2];
    state.pose.x += state.vel.x * h;
    state.pose.y += state.vel.y * h;
    state.pose.theta += state.omega * h;
}

/// Per-step record emitted by [`simulate_tilt_traced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: BodyState,
    pub penetration: f64,
}

/// Simulates one tilt from rest at `start` until the part settles or
/// `max_sim_time` elapses.
pub fn simulate_tilt(
    part: &Part,
    start: Pose,
    action: &TiltAction,
    field: &FrictionField,
    tray: &Tray,
    params: &SimParams,
) -> Result<TiltOutcome, DynamicsError> {
    simulate_tilt_traced(part, start, action, field, tray, params, |_| {})
}

/// [`simulate_tilt`] with a callback invoked after every step.
///
/// Each step linearizes the contact and friction forces around the current
/// state and takes the velocity update from
/// `(M + dt C + dt² K) du = dt (F - dt K u)`, where `C` and `K` are the
/// velocity and position Jacobians of the force. Positions then advance
/// with the updated velocity. The stick regime of the friction law is a
/// very stiff damper, which an explicit update would turn into a
/// period-two oscillation.
pub fn simulate_tilt_traced<F: FnMut(&TraceRow)>(
    part: &Part,
    start: Pose,
    action: &TiltAction,
    field: &FrictionField,
    tray: &Tray,
    params: &SimParams,
    mut observer: F,
) -> Result<TiltOutcome, DynamicsError> {
    if !in_free_space(&part.body, &start, tray) {
        return Err(DynamicsError::StartInCollision(start));
    }
    let mass = part.body.mass;
    let inertia = part.body.inertia;
    let gravity = action.heading() * (params.g * action.tilt_angle.sin() * mass);
    let load = mass * params.g * action.tilt_angle.cos();
    let dt = params.dt;
    let max_steps = (params.max_sim_time / dt).ceil() as u64;
    let hold_steps = (params.settle_hold / dt).ceil() as u64;

    // theta is left unwrapped while integrating and normalized on output
    let mut state = BodyState::at_rest(start);
    let mut max_pen = 0.0f64;
    let mut calm = 0u64;
    let mut step = 0u64;
    let mut settled = false;
    while step < max_steps {
        step += 1;
        let t = step as f64 * dt;
        let substeps = if impact_ahead(&part.body, &state, tray, dt) { IMPACT_SUBSTEPS } else { 1 };
        let h = dt / substeps as f64;
        let mut deepest = 0.0f64;
        for _ in 0..substeps {
            let mut acc = ForceAccumulator {
                force: [gravity.x, gravity.y, 0.0],
                ..Default::default()
            };
            accumulate_floor(&mut acc, part, &state, field, load, params.v_stick);
            accumulate_walls(&mut acc, &part.body, &state, tray, params);
            if acc.deepest > params.max_penetration {
                return Err(DynamicsError::ContactBlowup {
                    depth: acc.deepest,
                    time: t,
                    limit: params.max_penetration,
                });
            }
            deepest = deepest.max(acc.deepest);
            implicit_update(&mut state, &acc, mass, inertia, h);
        }
        max_pen = max_pen.max(deepest);
        if !(state.pose.x.is_finite() && state.pose.y.is_finite() && state.pose.theta.is_finite()) {
            return Err(DynamicsError::NonFinite(t));
        }
        observer(&TraceRow {
            t,
            state,
            penetration: deepest,
        });
        if state.vel.norm() < params.settle_v && state.omega.abs() < params.settle_w {
            calm += 1;
            if calm >= hold_steps {
                settled = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let rest = Pose::new(state.pose.x, state.pose.y, state.pose.theta);
    Ok(TiltOutcome {
        settled_pose: project_into_tray(&part.body, rest, tray),
        settled,
        sim_time: step as f64 * dt,
        max_penetration: max_pen,
    })
}

/// Translates a resting pose out of any residual wall penetration.
pub fn project_into_tray(body: &RigidBody, pose: Pose, tray: &Tray) -> Pose {
    let (s, c) = pose.theta.sin_cos();
    let (mut left, mut right, mut bottom, mut top) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for v in body.vertices() {
        let p = v.rotate(c, s) + pose.position();
        left = left.max(Wall::Left.depth(p, tray));
        right = right.max(Wall::Right.depth(p, tray));
        bottom = bottom.max(Wall::Bottom.depth(p, tray));
        top = top.max(Wall::Top.depth(p, tray));
    }
    // a hair of clearance so the projected pose tests as free space
    const PAD: f64 = 1e-9;
    let mut out = pose;
    if left > 0.0 {
        out.x += left + PAD;
    } else if right > 0.0 {
        out.x -= right + PAD;
    }
    if bottom > 0.0 {
        out.y += bottom + PAD;
    } else if top > 0.0 {
        out.y -= top + PAD;
    }
    out
}
