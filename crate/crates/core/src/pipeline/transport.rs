//! Length-prefixed TCP framing for shipping trajectories from remote actors.
//!
//! A frame is a little-endian `u32` byte count followed by a fixed header
//! (`u16` protocol version, `u8` kind, `u32` environment id, `u32` unroll
//! length) and, for trajectory frames, the payload. Numbers in the payload
//! are little-endian `f32`, `i32`, `u32` or `u64`.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::Sender;
use parking_lot::Mutex;

use crate::trajectory::Trajectory;

pub const PROTOCOL_VERSION: u16 = 1;
pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(5);
const MAX_FRAME: u32 = 256 << 20;
const HEADER_LEN: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Trajectory = 1,
    Heartbeat = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub kind: FrameKind,
    pub env_id: u32,
    pub unroll: u32,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Frame {
    Trajectory { env_id: u32, traj: Trajectory },
    Heartbeat { env_id: u32 },
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(bad("truncated frame"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> io::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> io::Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| bad("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn i32s(&mut self, n: usize) -> io::Result<Vec<i32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| bad("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Encodes a frame body (without the length prefix).
pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    match frame {
        Frame::Heartbeat { env_id } => {
            out.push(FrameKind::Heartbeat as u8);
            out.extend_from_slice(&env_id.to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes());
        }
        Frame::Trajectory { env_id, traj: t } => {
            out.push(FrameKind::Trajectory as u8);
            out.extend_from_slice(&env_id.to_le_bytes());
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(&t.actor_id.to_le_bytes());
            out.extend_from_slice(&t.seq.to_le_bytes());
            out.extend_from_slice(&t.actor_version.to_le_bytes());
            out.extend_from_slice(&(t.obs_dim as u32).to_le_bytes());
            out.extend_from_slice(&(t.num_actions as u32).to_le_bytes());
            out.push(t.first as u8);
            put_f32s(&mut out, &t.observations);
            for &a in &t.actions {
                out.extend_from_slice(&(a as i32).to_le_bytes());
            }
            put_f32s(&mut out, &t.rewards);
            out.extend(t.dones.iter().map(|&d| d as u8));
            put_f32s(&mut out, &t.behaviour_logits);
            out.extend_from_slice(&(t.actor_state.len() as u32).to_le_bytes());
            put_f32s(&mut out, &t.actor_state);
        }
    }
    out
}

pub fn decode_header(body: &[u8]) -> io::Result<Header> {
    if body.len() < HEADER_LEN {
        return Err(bad("frame shorter than header"));
    }
    let mut c = Cursor { buf: body };
    let version = c.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(bad(format!("unsupported protocol version {version}")));
    }
    let kind = match c.u8()? {
        1 => FrameKind::Trajectory,
        2 => FrameKind::Heartbeat,
        k => return Err(bad(format!("unknown frame kind {k}"))),
    };
    Ok(Header {
        version,
        kind,
        env_id: c.u32()?,
        unroll: c.u32()?,
    })
}

/// Decodes a frame body; trajectories arrive unannotated.
pub fn decode(body: &[u8]) -> io::Result<Frame> {
    let h = decode_header(body)?;
    let mut c = Cursor {
        buf: &body[HEADER_LEN..],
    };
    let frame = match h.kind {
        FrameKind::Heartbeat => Frame::Heartbeat { env_id: h.env_id },
        FrameKind::Trajectory => {
            let t = h.unroll as usize;
            let actor_id = c.u32()?;
            let seq = c.u64()?;
            let actor_version = c.u64()?;
            let obs_dim = c.u32()? as usize;
            let num_actions = c.u32()? as usize;
            let first = c.u8()? != 0;
            let observations = c.f32s((t + 1) * obs_dim)?;
            let actions = c
                .i32s(t)?
                .into_iter()
                .map(|a| u32::try_from(a).map_err(|_| bad("negative action")))
                .collect::<io::Result<Vec<_>>>()?;
            let rewards = c.f32s(t)?;
            let dones = c.take(t)?.iter().map(|&d| d != 0).collect();
            let behaviour_logits = c.f32s(t * num_actions)?;
            let state_len = c.u32()? as usize;
            let actor_state = c.f32s(state_len)?;
            let traj = Trajectory {
                actor_id,
                seq,
                actor_version,
                obs_dim,
                num_actions,
                observations,
                actions,
                rewards,
                dones,
                first,
                behaviour_logits,
                actor_state,
                annotation: None,
            };
            traj.check().map_err(bad)?;
            Frame::Trajectory { env_id: h.env_id, traj }
        }
    };
    if !c.buf.is_empty() {
        return Err(bad("trailing bytes in frame"));
    }
    Ok(frame)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    let body = encode(frame);
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(bad(format!("frame of {n} bytes exceeds limit")));
    }
    let mut body = vec![0u8; n as usize];
    r.read_exact(&mut body)?;
    decode(&body).map(Some)
}

/// Actor-side connection. A background thread sends heartbeats at a fixed
/// interval; trajectory sends share the socket under a lock.
pub struct Client {
    stream: Arc<Mutex<TcpStream>>,
    env_id: u32,
    stop: Arc<AtomicBool>,
    heartbeat: Option<thread::JoinHandle<()>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, env_id: u32, heartbeat: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let stream = Arc::new(Mutex::new(stream));
        let stop = Arc::new(AtomicBool::new(false));
        let hb = {
            let (stream, stop) = (Arc::clone(&stream), Arc::clone(&stop));
            thread::spawn(move || {
                let tick = Duration::from_millis(10).min(heartbeat);
                let mut waited = Duration::ZERO;
                while !stop.load(Ordering::Acquire) {
                    thread::sleep(tick);
                    waited += tick;
                    if waited >= heartbeat {
                        waited = Duration::ZERO;
                        if write_frame(&mut *stream.lock(), &Frame::Heartbeat { env_id }).is_err() {
                            break;
                        }
                    }
                }
            })
        };
        Ok(Client {
            stream,
            env_id,
            stop,
            heartbeat: Some(hb),
        })
    }

    pub fn send(&self, traj: &Trajectory) -> io::Result<()> {
        write_frame(
            &mut *self.stream.lock(),
            &Frame::Trajectory {
                env_id: self.env_id,
                traj: traj.clone(),
            },
        )
    }

    pub fn close(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.heartbeat.take() {
            let _ = h.join();
        }
        self.stream.lock().shutdown(std::net::Shutdown::Write)
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if self.heartbeat.is_some() {
            let _ = self.shutdown();
        }
    }
}

/// Learner-side listener forwarding received trajectories into a channel.
pub struct Server {
    pub addr: SocketAddr,
    pub heartbeats: Arc<AtomicU64>,
    pub received: Arc<AtomicU64>,
    accept: thread::JoinHandle<()>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, out: Sender<Trajectory>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let heartbeats = Arc::new(AtomicU64::new(0));
        let received = Arc::new(AtomicU64::new(0));
        let accept = {
            let (hb, rx) = (Arc::clone(&heartbeats), Arc::clone(&received));
            thread::spawn(move || {
                for conn in listener.incoming() {
                    let Ok(mut conn) = conn else { break };
                    let (out, hb, rx) = (out.clone(), Arc::clone(&hb), Arc::clone(&rx));
                    thread::spawn(move || {
                        while let Ok(Some(frame)) = read_frame(&mut conn) {
                            match frame {
                                Frame::Heartbeat { .. } => {
                                    hb.fetch_add(1, Ordering::Relaxed);
                                }
                                Frame::Trajectory { traj, .. } => {
                                    rx.fetch_add(1, Ordering::Relaxed);
                                    if out.send(traj).is_err() {
                                        break;
                                    }
                                }
                            }
                        }
                    });
                }
            })
        };
        Ok(Server {
            addr: local,
            heartbeats,
            received,
            accept,
        })
    }

    /// True while the accept loop is alive.
    pub fn running(&self) -> bool {
        !self.accept.is_finished()
    }
}
