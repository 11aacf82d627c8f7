//! C ABI over the navguard core.
//!
//! Objects are opaque handles created by `ng_*_new`/`ng_*_load` and released
//! with the matching `ng_*_free`. Every fallible function returns an
//! [`NgStatus`]; on failure the message is available through
//! [`ng_last_error`] on the same thread. Outputs are only written on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use navguard::agent::{Actor, PolicyCheckpoint};
use navguard::env::{compute_reward, OBS_DIM};
use navguard::geometry::{Scene, Surface, Vec2};
use navguard::mpc::{differential_drive, MpcConfig, MpcController, WipState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Solver = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ng_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ng_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn guard(f: impl FnOnce() -> Result<(), (NgStatus, String)>) -> NgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NgStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside navguard");
            NgStatus::Panic
        }
    }
}

fn null(what: &str) -> (NgStatus, String) {
    (NgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NgStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (NgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (NgStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

pub struct NgScene {
    scene: Scene,
}

/// Loads a scene JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_load(path: *const c_char, out_scene: *mut *mut NgScene) -> NgStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_scene, "out_scene")?;
        let scene = Scene::load(Path::new(path)).map_err(|e| match e {
            navguard::geometry::SceneError::Io(_) => (NgStatus::Io, e.to_string()),
            _ => (NgStatus::InvalidArgument, e.to_string()),
        })?;
        *slot = Box::into_raw(Box::new(NgScene { scene }));
        Ok(())
    })
}

/// Parses a scene from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_from_json(json: *const c_char, out_scene: *mut *mut NgScene) -> NgStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let slot = out(out_scene, "out_scene")?;
        let scene = Scene::from_json_str(json).map_err(|e| (NgStatus::InvalidArgument, e.to_string()))?;
        *slot = Box::into_raw(Box::new(NgScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from `ng_scene_load`/`ng_scene_from_json` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_free(scene: *mut NgScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_obstacle_count(scene: *const NgScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.obstacles().len())
}

/// Distance from a point to the nearest obstacle or wall; negative inside.
///
/// # Safety
/// `scene` must be a live handle and `out_distance` valid.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_point_clearance(scene: *const NgScene, x: f64, y: f64, out_distance: *mut f64) -> NgStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let slot = out(out_distance, "out_distance")?;
        *slot = s.scene.point_clearance(&Vec2::new(x, y));
        Ok(())
    })
}

/// First hit along a ray. `out_obstacle` receives the obstacle index, or -1
/// for a wall or no hit within range (then `out_distance` is the range).
///
/// # Safety
/// `scene` must be a live handle and the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ng_scene_raycast(
    scene: *const NgScene,
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    out_distance: *mut f64,
    out_obstacle: *mut i64,
) -> NgStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let d = Vec2::new(dx, dy);
        if !(d.norm() > 0.0) || !ox.is_finite() || !oy.is_finite() {
            return Err((NgStatus::InvalidArgument, "ray needs a finite origin and a nonzero direction".into()));
        }
        let dist = out(out_distance, "out_distance")?;
        let obstacle = out(out_obstacle, "out_obstacle")?;
        let hit = s.scene.raycast(&Vec2::new(ox, oy), &d);
        *dist = hit.distance;
        *obstacle = match hit.surface {
            Surface::Obstacle(i) => i as i64,
            _ => -1,
        };
        Ok(())
    })
}

/// `1 - (|ax| + |atheta|)`, or `crash_reward` when `collided` is true.
#[no_mangle]
pub extern "C" fn ng_compute_reward(ax: f64, atheta: f64, collided: bool, crash_reward: f64) -> f64 {
    compute_reward([ax, atheta], collided, crash_reward)
}

/// Wheel angular velocities in rad/s for a base velocity and yaw rate.
///
/// # Safety
/// Out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ng_differential_drive(
    v_base: f64,
    v_theta: f64,
    wheel_radius: f64,
    track: f64,
    out_left: *mut f64,
    out_right: *mut f64,
) -> NgStatus {
    guard(|| {
        if !(wheel_radius > 0.0 && track > 0.0) {
            return Err((NgStatus::InvalidArgument, "wheel_radius and track must be positive".into()));
        }
        let l = out(out_left, "out_left")?;
        let r = out(out_right, "out_right")?;
        (*l, *r) = differential_drive(v_base, v_theta, wheel_radius, track);
        Ok(())
    })
}

/// Locomotion controller parameters; see `ng_mpc_default_config`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NgMpcConfig {
    pub g: f64,
    pub l: f64,
    pub horizon: usize,
    pub dt: f64,
    pub u_max: f64,
    pub w_r: f64,
    pub w_phi: f64,
    pub w_u: f64,
    pub terminal_scale: f64,
    pub wheel_radius: f64,
    pub track: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl From<NgMpcConfig> for MpcConfig {
    fn from(c: NgMpcConfig) -> Self {
        MpcConfig {
            g: c.g,
            l: c.l,
            horizon: c.horizon,
            dt: c.dt,
            u_max: c.u_max,
            w_r: c.w_r,
            w_phi: c.w_phi,
            w_u: c.w_u,
            terminal_scale: c.terminal_scale,
            wheel_radius: c.wheel_radius,
            track: c.track,
            max_iter: c.max_iter,
            tol: c.tol,
            ..MpcConfig::default()
        }
    }
}

#[no_mangle]
pub extern "C" fn ng_mpc_default_config() -> NgMpcConfig {
    let c = MpcConfig::default();
    NgMpcConfig {
        g: c.g,
        l: c.l,
        horizon: c.horizon,
        dt: c.dt,
        u_max: c.u_max,
        w_r: c.w_r,
        w_phi: c.w_phi,
        w_u: c.w_u,
        terminal_scale: c.terminal_scale,
        wheel_radius: c.wheel_radius,
        track: c.track,
        max_iter: c.max_iter,
        tol: c.tol,
    }
}

pub struct NgMpc {
    controller: MpcController,
}

/// # Safety
/// `config` may be null for defaults; `out_mpc` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ng_mpc_new(config: *const NgMpcConfig, out_mpc: *mut *mut NgMpc) -> NgStatus {
    guard(|| {
        let slot = out(out_mpc, "out_mpc")?;
        let config = config.as_ref().map_or_else(MpcConfig::default, |c| MpcConfig::from(*c));
        let controller = MpcController::new(config).map_err(|e| (NgStatus::InvalidArgument, e.to_string()))?;
        *slot = Box::into_raw(Box::new(NgMpc { controller }));
        Ok(())
    })
}

/// One warm-started solve. Writes the planned base velocity after the
/// first interval and the solver iteration count.
///
/// # Safety
/// `mpc` must be a live handle; out pointers valid (`out_iterations` may be null).
#[no_mangle]
pub unsafe extern "C" fn ng_mpc_step(
    mpc: *mut NgMpc,
    r: f64,
    phi: f64,
    r_dot: f64,
    phi_dot: f64,
    v_ref: f64,
    out_velocity: *mut f64,
    out_iterations: *mut usize,
) -> NgStatus {
    guard(|| {
        let m = mpc.as_mut().ok_or_else(|| null("mpc"))?;
        let v = out(out_velocity, "out_velocity")?;
        let state = WipState { r, phi, r_dot, phi_dot };
        let step = m.controller.step(&state, v_ref).map_err(|e| (NgStatus::Solver, e.to_string()))?;
        *v = step.velocity;
        if let Some(it) = out_iterations.as_mut() {
            *it = step.solution.iterations;
        }
        Ok(())
    })
}

/// Drops the warm start.
///
/// # Safety
/// `mpc` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ng_mpc_reset(mpc: *mut NgMpc) {
    if let Some(m) = mpc.as_mut() {
        m.controller.reset();
    }
}

/// # Safety
/// `mpc` must come from `ng_mpc_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ng_mpc_free(mpc: *mut NgMpc) {
    if !mpc.is_null() {
        drop(Box::from_raw(mpc));
    }
}

pub struct NgPolicy {
    actor: Actor,
}

/// Observation length the policy expects.
#[no_mangle]
pub extern "C" fn ng_policy_obs_dim() -> usize {
    OBS_DIM
}

/// Loads a policy checkpoint written by `navguard train-policy`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_policy` valid.
#[no_mangle]
pub unsafe extern "C" fn ng_policy_load(path: *const c_char, out_policy: *mut *mut NgPolicy) -> NgStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_policy, "out_policy")?;
        let ckpt = PolicyCheckpoint::load(Path::new(path)).map_err(|e| match e {
            navguard::agent::AgentError::Io(_) => (NgStatus::Io, e.to_string()),
            _ => (NgStatus::InvalidArgument, e.to_string()),
        })?;
        let actor = ckpt.actor().map_err(|e| (NgStatus::InvalidArgument, e.to_string()))?;
        *slot = Box::into_raw(Box::new(NgPolicy { actor }));
        Ok(())
    })
}

/// Deterministic correction for one observation of `ng_policy_obs_dim()` floats.
///
/// # Safety
/// `policy` must be a live handle, `obs` must point to `obs_len` floats and
/// `out_action` to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_policy_act(policy: *const NgPolicy, obs: *const f32, obs_len: usize, out_action: *mut f64) -> NgStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if obs.is_null() {
            return Err(null("obs"));
        }
        if out_action.is_null() {
            return Err(null("out_action"));
        }
        if obs_len != OBS_DIM {
            return Err((NgStatus::InvalidArgument, format!("observation has {obs_len} values, expected {OBS_DIM}")));
        }
        let obs = std::slice::from_raw_parts(obs, obs_len);
        let a = p.actor.deterministic_action(obs);
        ptr::copy_nonoverlapping(a.as_ptr(), out_action, 2);
        Ok(())
    })
}

/// # Safety
/// `policy` must come from `ng_policy_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ng_policy_free(policy: *mut NgPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
