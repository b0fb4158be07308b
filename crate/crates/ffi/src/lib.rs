//! C ABI over the rmpr core: load a configuration, step the reaching world,
//! read its state and image, and query a trained agent or VAE.
//!
//! Every fallible call returns an `RmprStatus`; on failure the message is
//! kept per thread and can be copied out with `rmpr_last_error_message`.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DVector;
use rmpr::harness::experiments::stream_rng;
use rmpr::harness::ExperimentConfig;
use rmpr::policies::TreeLayout;
use rmpr::rl::{agent_state, LatentSource, Td3Agent};
use rmpr::vae::VaeModel;
use rmpr::world::{sample_scene, TerminationCause, World};
use rmpr::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Terminated = 4,
    Config = 5,
    Checkpoint = 6,
    Io = 7,
    Evaluation = 8,
    BufferTooSmall = 9,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmprLayout {
    Residual = 0,
    Vanilla = 1,
    BaselineOnly = 2,
    BaselineWithLimits = 3,
}

impl From<RmprLayout> for TreeLayout {
    fn from(layout: RmprLayout) -> Self {
        match layout {
            RmprLayout::Residual => TreeLayout::Residual,
            RmprLayout::Vanilla => TreeLayout::Vanilla,
            RmprLayout::BaselineOnly => TreeLayout::BaselineOnly,
            RmprLayout::BaselineWithLimits => TreeLayout::BaselineWithLimits,
        }
    }
}

/// Outcome of one control step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RmprStep {
    pub reward: f64,
    pub r_collide: f64,
    pub r_goal: f64,
    pub r_dist: f64,
    pub r_ctrl: f64,
    pub distance: f64,
    pub min_clearance: f64,
    pub collided: bool,
    pub at_goal: bool,
    pub terminated: bool,
    /// 0 running, 1 collision, 2 step limit.
    pub cause: i32,
}

pub struct RmprConfig {
    inner: ExperimentConfig,
}

pub struct RmprWorld {
    config: ExperimentConfig,
    layout: TreeLayout,
    world: World,
}

pub struct RmprAgent {
    inner: Td3Agent,
}

pub struct RmprVae {
    inner: VaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(error: &Error) -> RmprStatus {
    match error {
        Error::Dimension { .. } => RmprStatus::Dimension,
        Error::InvalidArgument(_) | Error::SceneSampling(_) => RmprStatus::InvalidArgument,
        Error::Evaluation(_) | Error::Training(_) => RmprStatus::Evaluation,
        Error::Terminated => RmprStatus::Terminated,
        Error::Checkpoint(_) => RmprStatus::Checkpoint,
        Error::Config(_) => RmprStatus::Config,
        Error::Io(_) => RmprStatus::Io,
    }
}

struct Failure(RmprStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RmprStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RmprStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RmprStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {message}"));
            RmprStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RmprStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copy `values` into the caller's buffer, reporting the needed length.
unsafe fn write_out<T: Copy>(values: &[T], out: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    if !out_len.is_null() {
        *out_len = values.len();
    }
    if capacity < values.len() {
        return Err(Failure(
            RmprStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Length in bytes of the last error message on this thread, including the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn rmpr_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.len() + 1))
}

/// Copy the last error message into `buf` as a NUL-terminated string,
/// truncating if needed. Returns the number of bytes written without the NUL.
///
/// # Safety
/// `buf` must point to at least `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rmpr_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    if buf.is_null() || capacity == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_deref().unwrap_or("").as_bytes();
        let n = bytes.len().min(capacity - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

#[no_mangle]
pub extern "C" fn rmpr_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Default experiment configuration.
#[no_mangle]
pub extern "C" fn rmpr_config_default() -> *mut RmprConfig {
    Box::into_raw(Box::new(RmprConfig {
        inner: ExperimentConfig::default(),
    }))
}

/// Parse a TOML configuration; fields left out take their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmpr_config_from_toml(toml: *const c_char, out: *mut *mut RmprConfig) -> RmprStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let inner = ExperimentConfig::from_toml(as_str(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(RmprConfig { inner }));
        Ok(())
    })
}

/// Load a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmpr_config_load(path: *const c_char, out: *mut *mut RmprConfig) -> RmprStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let inner = ExperimentConfig::load(PathBuf::from(as_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(RmprConfig { inner }));
        Ok(())
    })
}

/// Override the obstacle count of sampled scenes (1 to 3).
///
/// # Safety
/// `config` must come from `rmpr_config_*`.
#[no_mangle]
pub unsafe extern "C" fn rmpr_config_set_obstacles(config: *mut RmprConfig, n_obstacles: usize) -> RmprStatus {
    guard(|| {
        let config = as_mut(config, "config")?;
        if !(1..=3).contains(&n_obstacles) {
            return Err(Failure(
                RmprStatus::InvalidArgument,
                format!("scenes hold 1 to 3 obstacles, got {n_obstacles}"),
            ));
        }
        config.inner.world.scene.n_obstacles = n_obstacles;
        Ok(())
    })
}

/// # Safety
/// `config` must come from `rmpr_config_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmpr_config_free(config: *mut RmprConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

fn build_world(config: &ExperimentConfig, layout: TreeLayout, seed: u64) -> Result<World, Error> {
    let mut rng = stream_rng(seed, 1);
    let scene = sample_scene(&mut rng, &config.robot, &config.world.scene)?;
    World::new(
        config.robot.clone(),
        config.world.clone(),
        config.policy.clone(),
        layout,
        scene,
    )
}

/// Sample a scene from `seed` and build its world. The configuration is
/// copied, so `config` may be freed afterwards.
///
/// # Safety
/// `config` must come from `rmpr_config_*` and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_new(
    config: *const RmprConfig,
    layout: RmprLayout,
    seed: u64,
    out: *mut *mut RmprWorld,
) -> RmprStatus {
    guard(|| {
        let config = as_ref(config, "config")?.inner.clone();
        let out = as_mut(out, "out")?;
        let layout = TreeLayout::from(layout);
        let world = build_world(&config, layout, seed)?;
        *out = Box::into_raw(Box::new(RmprWorld { config, layout, world }));
        Ok(())
    })
}

/// Start a new episode on a scene sampled from `seed`.
///
/// # Safety
/// `world` must come from `rmpr_world_new`.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_reset(world: *mut RmprWorld, seed: u64) -> RmprStatus {
    guard(|| {
        let w = as_mut(world, "world")?;
        w.world = build_world(&w.config, w.layout, seed)?;
        Ok(())
    })
}

/// # Safety
/// `world` must come from `rmpr_world_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_free(world: *mut RmprWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Joint count of the arm, or 0 for a null handle.
///
/// # Safety
/// `world` must be null or come from `rmpr_world_new`.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_dof(world: *const RmprWorld) -> usize {
    world.as_ref().map_or(0, |w| w.world.model().dof())
}

/// Task-space dimension of the end effector, or 0 for a null handle.
///
/// # Safety
/// `world` must be null or come from `rmpr_world_new`.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_task_dim(world: *const RmprWorld) -> usize {
    world.as_ref().map_or(0, |w| w.world.model().task_dim())
}

/// Advance one control period under `action` (one value per joint).
///
/// # Safety
/// `action` must hold `len` doubles; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_step(
    world: *mut RmprWorld,
    action: *const f64,
    len: usize,
    out: *mut RmprStep,
) -> RmprStatus {
    guard(|| {
        let w = as_mut(world, "world")?;
        let action = DVector::from_column_slice(slice(action, len, "action")?);
        let s = w.world.step(&action)?;
        if let Some(out) = out.as_mut() {
            *out = RmprStep {
                reward: s.reward,
                r_collide: s.terms.collide,
                r_goal: s.terms.goal,
                r_dist: s.terms.dist,
                r_ctrl: s.terms.control,
                distance: s.distance,
                min_clearance: s.min_clearance,
                collided: s.collided,
                at_goal: s.at_goal,
                terminated: s.terminated,
                cause: match s.cause {
                    TerminationCause::None => 0,
                    TerminationCause::Collision => 1,
                    TerminationCause::MaxSteps => 2,
                },
            };
        }
        Ok(())
    })
}

/// Copy `[q, qdot, x, xdot]` into `out`; `out_len` receives the length.
///
/// # Safety
/// `out` must hold `capacity` doubles; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_state(
    world: *const RmprWorld,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RmprStatus {
    guard(|| {
        let s = as_ref(world, "world")?.world.state();
        let v: Vec<f64> = s.q.iter().chain(&s.qdot).chain(&s.x).chain(&s.xdot).copied().collect();
        write_out(&v, out, capacity, out_len)
    })
}

/// Goal position of the current scene.
///
/// # Safety
/// `out` must hold `capacity` doubles; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_goal(
    world: *const RmprWorld,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RmprStatus {
    guard(|| {
        let goal = &as_ref(world, "world")?.world.scene().goal;
        write_out(goal.as_slice(), out, capacity, out_len)
    })
}

/// Render the current state as a channel-major float image.
///
/// # Safety
/// `out` must hold `capacity` floats; `channels`, `height`, `width` and
/// `out_len` may each be null.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_render(
    world: *const RmprWorld,
    out: *mut f32,
    capacity: usize,
    out_len: *mut usize,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> RmprStatus {
    guard(|| {
        let image = as_ref(world, "world")?.world.observe()?;
        for (p, v) in [(channels, image.channels), (height, image.height), (width, image.width)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        write_out(&image.data, out, capacity, out_len)
    })
}

/// Full agent state: kinematic state followed by the latent code, taken from
/// `vae` when given and from ground-truth obstacle features otherwise.
///
/// # Safety
/// `vae` may be null; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmpr_world_agent_state(
    world: *const RmprWorld,
    vae: *const RmprVae,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RmprStatus {
    guard(|| {
        let w = as_ref(world, "world")?;
        let latent = match vae.as_ref() {
            Some(v) => LatentSource::Vae(&v.inner),
            None => LatentSource::SceneFeatures {
                slots: w.config.world.scene.n_obstacles,
            },
        };
        let state = agent_state(&w.world, &latent)?;
        write_out(&state, out, capacity, out_len)
    })
}

/// Load a VAE checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmpr_vae_load(path: *const c_char, out: *mut *mut RmprVae) -> RmprStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let inner = VaeModel::load(PathBuf::from(as_str(path, "path")?), &mut stream_rng(0, 0))?;
        *out = Box::into_raw(Box::new(RmprVae { inner }));
        Ok(())
    })
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `vae` must be null or come from `rmpr_vae_load`.
#[no_mangle]
pub unsafe extern "C" fn rmpr_vae_latent_dim(vae: *const RmprVae) -> usize {
    vae.as_ref().map_or(0, |v| v.inner.latent_dim)
}

/// # Safety
/// `vae` must come from `rmpr_vae_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmpr_vae_free(vae: *mut RmprVae) {
    if !vae.is_null() {
        drop(Box::from_raw(vae));
    }
}

/// Load a trained agent; its training hyperparameters come from `config`.
///
/// # Safety
/// `config` must come from `rmpr_config_*`, `path` be NUL-terminated and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmpr_agent_load(
    config: *const RmprConfig,
    path: *const c_char,
    out: *mut *mut RmprAgent,
) -> RmprStatus {
    guard(|| {
        let config = as_ref(config, "config")?;
        let out = as_mut(out, "out")?;
        let path = PathBuf::from(as_str(path, "path")?);
        let inner = Td3Agent::load(path, config.inner.rl.td3.clone(), &mut stream_rng(0, 0))?;
        *out = Box::into_raw(Box::new(RmprAgent { inner }));
        Ok(())
    })
}

/// Deterministic action of the trained actor for `state`.
///
/// # Safety
/// `state` must hold `len` doubles and `out` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmpr_agent_act(
    agent: *const RmprAgent,
    state: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> RmprStatus {
    guard(|| {
        let agent = as_ref(agent, "agent")?;
        let action = agent.inner.policy_action(slice(state, len, "state")?)?;
        write_out(&action, out, capacity, out_len)
    })
}

/// # Safety
/// `agent` must come from `rmpr_agent_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmpr_agent_free(agent: *mut RmprAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}
