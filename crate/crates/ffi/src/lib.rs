//! C ABI over the environments and a checkpointed acting policy.
//!
//! Every function returns an [`AldStatus`]; on failure a message is kept per
//! thread and can be copied out with [`ald_last_error`]. Handles are opaque
//! and owned by the caller until passed to the matching `_free` function.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ald::envs::{Env, EnvConfig, EnvError, EnvKind};
use ald::models::{checkpoint, AgentMemory, AgentNet, ModelError, ParamSet};
use ald::tensor::{Graph, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AldStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    EpisodeDone = 4,
    Io = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AldEnvKind {
    IMaze = 0,
    MetaFetch = 1,
}

/// Opaque environment handle.
pub struct AldEnv {
    env: Env,
}

/// Opaque handle to a loaded acting network and its recurrent state.
pub struct AldPolicy {
    net: AgentNet,
    params: ParamSet<f32>,
    memory: AgentMemory<f32>,
    first: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(AldStatus, String);

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::StepAfterDone => AldStatus::EpisodeDone,
            _ => AldStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => AldStatus::Io,
            ModelError::Tensor(_) => AldStatus::Numeric,
            _ => AldStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: AldStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AldStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (AldStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (AldStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    match p.as_mut() {
        Some(h) => Ok(h),
        None => fail(AldStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return fail(AldStatus::NullPointer, format!("{what} is null"));
    }
    if len < need {
        return fail(AldStatus::BufferTooSmall, format!("{what} holds {len}, need {need}"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(AldStatus::NullPointer, format!("{what} is null"));
    }
    p.write(v);
    Ok(())
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the untruncated length in bytes,
/// excluding the terminator; 0 after a successful call.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ald_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates an environment. `kind` is an [`AldEnvKind`] value, `size` the
/// I-Maze side length (9 or 15) and `objects` the Meta-Fetch object count;
/// the field not used by `kind` is ignored.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn ald_env_new(
    kind: u32,
    size: u32,
    objects: u32,
    seed: u64,
    out: *mut *mut AldEnv,
) -> AldStatus {
    guard(|| {
        let cfg = EnvConfig {
            kind: match kind {
                k if k == AldEnvKind::IMaze as u32 => EnvKind::IMaze,
                k if k == AldEnvKind::MetaFetch as u32 => EnvKind::MetaFetch,
                k => return fail(AldStatus::InvalidArgument, format!("unknown environment kind {k}")),
            },
            size: size as usize,
            objects: objects as usize,
            seed,
        };
        if out.is_null() {
            return fail(AldStatus::NullPointer, "out is null");
        }
        let env = cfg.build(seed)?;
        out.write(Box::into_raw(Box::new(AldEnv { env })));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`ald_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ald_env_free(env: *mut AldEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle; `obs_dim` and `num_actions` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ald_env_dims(env: *mut AldEnv, obs_dim: *mut u32, num_actions: *mut u32) -> AldStatus {
    guard(|| {
        let h = handle(env, "env")?;
        write_out(obs_dim, h.env.obs_dim() as u32, "obs_dim")?;
        write_out(num_actions, h.env.num_actions() as u32, "num_actions")
    })
}

/// Starts a new episode and writes the first observation.
///
/// # Safety
/// `env` must be a live handle and `obs` valid for `obs_len` floats.
#[no_mangle]
pub unsafe extern "C" fn ald_env_reset(env: *mut AldEnv, seed: u64, obs: *mut f32, obs_len: usize) -> AldStatus {
    guard(|| {
        let h = handle(env, "env")?;
        let out = out_slice(obs, obs_len, h.env.obs_dim(), "obs")?;
        let o = h.env.reset(seed);
        out[..o.len()].copy_from_slice(&o);
        Ok(())
    })
}

/// Applies `action` and writes the next observation, reward and done flag.
/// Stepping a finished episode returns `EpisodeDone`.
///
/// # Safety
/// `env` must be a live handle, `obs` valid for `obs_len` floats, and
/// `reward` and `done` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ald_env_step(
    env: *mut AldEnv,
    action: u32,
    obs: *mut f32,
    obs_len: usize,
    reward: *mut f64,
    done: *mut bool,
) -> AldStatus {
    guard(|| {
        let h = handle(env, "env")?;
        let out = out_slice(obs, obs_len, h.env.obs_dim(), "obs")?;
        if reward.is_null() || done.is_null() {
            return fail(AldStatus::NullPointer, "reward or done is null");
        }
        let s = h.env.step(action as usize)?;
        out[..s.obs.len()].copy_from_slice(&s.obs);
        reward.write(s.reward);
        done.write(s.done);
        Ok(())
    })
}

/// Loads an acting network from a checkpoint file and its `.json` spec.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn ald_policy_load(path: *const c_char, out: *mut *mut AldPolicy) -> AldStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(AldStatus::NullPointer, "path or out is null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(AldStatus::InvalidArgument, "path is not UTF-8");
        };
        let (net, params) = checkpoint::load_model(Path::new(path))?;
        let memory = net.initial_memory();
        out.write(Box::into_raw(Box::new(AldPolicy {
            net,
            params,
            memory,
            first: true,
        })));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from [`ald_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ald_policy_free(policy: *mut AldPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a live handle; `obs_dim` and `num_actions` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ald_policy_dims(
    policy: *mut AldPolicy,
    obs_dim: *mut u32,
    num_actions: *mut u32,
) -> AldStatus {
    guard(|| {
        let h = handle(policy, "policy")?;
        write_out(obs_dim, h.net.obs_dim as u32, "obs_dim")?;
        write_out(num_actions, h.net.num_actions as u32, "num_actions")
    })
}

/// Clears the recurrent state; the next call to [`ald_policy_act`] starts an
/// episode.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ald_policy_reset(policy: *mut AldPolicy) -> AldStatus {
    guard(|| {
        let h = handle(policy, "policy")?;
        h.memory = h.net.initial_memory();
        h.first = true;
        Ok(())
    })
}

/// One inference step. Writes the greedy action and, when `logits` is not
/// null, the action logits.
///
/// # Safety
/// `policy` must be a live handle, `obs` valid for `obs_len` floats,
/// `logits` null or valid for `logits_len` floats, `action` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ald_policy_act(
    policy: *mut AldPolicy,
    obs: *const f32,
    obs_len: usize,
    logits: *mut f32,
    logits_len: usize,
    action: *mut u32,
) -> AldStatus {
    guard(|| {
        let h = handle(policy, "policy")?;
        if obs.is_null() || action.is_null() {
            return fail(AldStatus::NullPointer, "obs or action is null");
        }
        if obs_len != h.net.obs_dim {
            return fail(
                AldStatus::InvalidArgument,
                format!("observation has {obs_len} values, policy expects {}", h.net.obs_dim),
            );
        }
        let out = if logits.is_null() {
            None
        } else {
            Some(out_slice(logits, logits_len, h.net.num_actions, "logits")?)
        };
        let x =
            Tensor::new(&[1, obs_len], std::slice::from_raw_parts(obs, obs_len).to_vec()).map_err(ModelError::from)?;
        let mut g = Graph::new();
        let p = h.params.bind_frozen(&mut g);
        let (o, mut next) = h
            .net
            .forward(&mut g, &p, x, 1, 1, &[h.first], std::slice::from_ref(&h.memory), 1)?;
        let l = g.value(o.logits).data();
        if l.iter().any(|v| !v.is_finite()) {
            return fail(AldStatus::Numeric, "non-finite logits");
        }
        h.memory = next.pop().expect("one sequence");
        h.first = false;
        let best = l.iter().enumerate().fold(0, |b, (i, &v)| if v > l[b] { i } else { b });
        if let Some(out) = out {
            out[..l.len()].copy_from_slice(l);
        }
        action.write(best as u32);
        Ok(())
    })
}
