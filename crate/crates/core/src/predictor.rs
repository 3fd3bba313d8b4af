//! Frame predictors: given a sequence of frames, produce the next
//! `extension` frames.
//!
//! Built-in predictors are deterministic and need no model weights. The
//! external predictor drives a long-lived child process speaking the
//! [`crate::protocol`] framing, so a pretrained network can be plugged in
//! without linking it.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{to_grayscale, Raster};
use crate::protocol::{self, Message, ProtocolError};

/// Frames of the static input sequence.
pub const DEFAULT_SEQUENCE_LENGTH: usize = 20;
/// Frames predicted past the input.
pub const DEFAULT_EXTENSION: usize = 2;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("failed to start predictor process: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("predicted frames do not match the request: {0}")]
    DimensionMismatch(String),
    #[error("predictor reported: {0}")]
    Sidecar(String),
    #[error("invalid predictor spec `{0}`")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    frames: Vec<Raster>,
    extension: usize,
}

impl PredictRequest {
    pub fn new(frames: Vec<Raster>, extension: usize) -> Result<Self, PredictError> {
        let Some(first) = frames.first() else {
            return Err(PredictError::InvalidRequest("no frames".into()));
        };
        if extension == 0 {
            return Err(PredictError::InvalidRequest(
                "extension must be >= 1".into(),
            ));
        }
        if frames.iter().any(|f| !f.same_shape(first)) {
            return Err(PredictError::InvalidRequest(
                "frames differ in size or channel count".into(),
            ));
        }
        Ok(Self { frames, extension })
    }

    pub fn frames(&self) -> &[Raster] {
        &self.frames
    }

    pub fn extension(&self) -> usize {
        self.extension
    }

    pub fn last_frame(&self) -> &Raster {
        self.frames.last().expect("requests are never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictResponse {
    pub predicted: Vec<Raster>,
}

impl PredictResponse {
    fn check_against(&self, req: &PredictRequest) -> Result<(), PredictError> {
        if self.predicted.len() != req.extension {
            return Err(PredictError::DimensionMismatch(format!(
                "{} frames returned, {} requested",
                self.predicted.len(),
                req.extension
            )));
        }
        let reference = req.last_frame();
        if let Some(f) = self.predicted.iter().find(|f| !f.same_shape(reference)) {
            return Err(PredictError::DimensionMismatch(format!(
                "got {}x{}x{}, expected {}x{}x{}",
                f.width(),
                f.height(),
                f.channels(),
                reference.width(),
                reference.height(),
                reference.channels()
            )));
        }
        Ok(())
    }
}

/// `n` copies of `img`.
pub fn make_static_sequence(
    img: &Raster,
    n: usize,
    extension: usize,
) -> Result<PredictRequest, PredictError> {
    if n == 0 {
        return Err(PredictError::InvalidRequest(
            "sequence length must be >= 1".into(),
        ));
    }
    PredictRequest::new(vec![img.clone(); n], extension)
}

pub trait Predictor: Send + Sync {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError>;
}

/// Predicts that nothing moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError> {
        Ok(predict_identity(req))
    }
}

pub fn predict_identity(req: &PredictRequest) -> PredictResponse {
    PredictResponse {
        predicted: vec![req.last_frame().clone(); req.extension],
    }
}

/// Content translated by `(x, y)` samples `img` at `(x - dx, y - dy)`.
fn translate(img: &Raster, dx: f32, dy: f32) -> Raster {
    Raster::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        img.sample(x as f32 - dx, y as f32 - dy, c)
    })
    .expect("same shape as a valid raster")
}

/// Predicts uniform motion of `(dx, dy)` pixels per frame.
#[derive(Debug, Clone, Copy)]
pub struct ShiftPredictor {
    pub dx: f32,
    pub dy: f32,
}

impl Predictor for ShiftPredictor {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError> {
        Ok(predict_shift(req, self.dx, self.dy))
    }
}

/// Frame `k` is the last input frame moved by `(k + 1) * (dx, dy)`, with
/// bilinear resampling and replicated edges.
pub fn predict_shift(req: &PredictRequest, dx: f32, dy: f32) -> PredictResponse {
    let last = req.last_frame();
    let predicted = (1..=req.extension)
        .map(|k| translate(last, k as f32 * dx, k as f32 * dy))
        .collect();
    PredictResponse { predicted }
}

/// Predicts that content drifts along its own luminance gradient, towards
/// brighter regions.
#[derive(Debug, Clone, Copy)]
pub struct GradientDriftPredictor {
    pub gain: f32,
}

impl Predictor for GradientDriftPredictor {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError> {
        predict_gradient_drift(req, self.gain)
    }
}

/// Displacement field `gain * grad(L)` of the luminance `L`, where the
/// gradient is a 3x3 Sobel (per-pixel units) smoothed by a 5x5 box filter.
/// Each displacement is clamped to at most one pixel.
pub fn drift_field(img: &Raster, gain: f32) -> Vec<(f32, f32)> {
    let lum = to_grayscale(img);
    let (w, h) = (lum.width(), lum.height());
    let at = |x: isize, y: isize| {
        lum.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
            0,
        )
    };
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
        }
    }
    let blur = |src: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0.0;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        s += src[yy * w + xx];
                    }
                }
                out[y as usize * w + x as usize] = s / 25.0;
            }
        }
        out
    };
    let (gx, gy) = (blur(&gx), blur(&gy));
    gx.iter()
        .zip(&gy)
        .map(|(&ex, &ey)| {
            let (dx, dy) = (gain * ex, gain * ey);
            let m = dx.hypot(dy);
            if m > 1.0 {
                (dx / m, dy / m)
            } else {
                (dx, dy)
            }
        })
        .collect()
}

fn drift_step(img: &Raster, gain: f32) -> Raster {
    let field = drift_field(img, gain);
    let w = img.width();
    Raster::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        let (dx, dy) = field[y * w + x];
        img.sample(x as f32 - dx, y as f32 - dy, c)
    })
    .expect("same shape as a valid raster")
}

/// Each predicted frame is the previous one warped once by its own drift
/// field, starting from the last input frame.
pub fn predict_gradient_drift(
    req: &PredictRequest,
    gain: f32,
) -> Result<PredictResponse, PredictError> {
    if !(gain >= 0.0) || !gain.is_finite() {
        return Err(PredictError::InvalidRequest(format!(
            "drift gain {gain} must be >= 0"
        )));
    }
    let mut current = req.last_frame().clone();
    let mut predicted = Vec::with_capacity(req.extension);
    for _ in 0..req.extension {
        current = drift_step(&current, gain);
        predicted.push(current.clone());
    }
    Ok(PredictResponse { predicted })
}

/// Sends one request and reads one reply over an arbitrary byte channel.
///
/// A writer that fails with a broken pipe is not fatal: the peer may have
/// answered (for example with an error message) before consuming the whole
/// request.
pub fn exchange(
    req: &PredictRequest,
    writer: &mut impl Write,
    reader: &mut impl Read,
) -> Result<PredictResponse, PredictError> {
    let extension = u16::try_from(req.extension)
        .map_err(|_| PredictError::InvalidRequest("extension exceeds u16".into()))?;
    let bytes = protocol::encode(&Message::Request {
        frames: req.frames.clone(),
        extension,
    })?;
    match writer.write_all(&bytes).and_then(|_| writer.flush()) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        Err(e) => return Err(ProtocolError::Io(e).into()),
    }
    match protocol::read_message(reader)? {
        Message::Response { frames } => {
            let resp = PredictResponse { predicted: frames };
            resp.check_against(req)?;
            Ok(resp)
        }
        Message::Error(text) => Err(PredictError::Sidecar(text)),
        other => Err(ProtocolError::UnexpectedType {
            got: other.type_code(),
            wanted: protocol::TYPE_RESPONSE,
        }
        .into()),
    }
}

struct Sidecar {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl Sidecar {
    fn spawn(program: &str, args: &[String]) -> Result<Self, PredictError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(PredictError::Spawn)?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }

    fn shutdown(self) {
        let Sidecar {
            mut child, stdin, ..
        } = self;
        drop(stdin);
        let _ = child.kill();
        let _ = child.wait();
    }
}

#[derive(Default)]
struct PoolState {
    idle: Vec<Sidecar>,
    live: usize,
}

/// Predictor backed by up to `max_processes` child processes, each handling
/// one request at a time. Processes are started lazily and reused.
pub struct ExternalPredictor {
    program: String,
    args: Vec<String>,
    max_processes: usize,
    state: Mutex<PoolState>,
    freed: Condvar,
}

impl fmt::Debug for ExternalPredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalPredictor")
            .field("program", &self.program)
            .field("args", &self.args)
            .field("max_processes", &self.max_processes)
            .finish()
    }
}

impl ExternalPredictor {
    /// `command` is split on whitespace into program and arguments.
    pub fn new(command: &str, max_processes: usize) -> Result<Self, PredictError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| PredictError::InvalidSpec(format!("external:{command}")))?;
        Ok(Self {
            program,
            args: parts.collect(),
            max_processes: max_processes.max(1),
            state: Mutex::new(PoolState::default()),
            freed: Condvar::new(),
        })
    }

    pub fn max_processes(&self) -> usize {
        self.max_processes
    }

    fn acquire(&self) -> Result<Sidecar, PredictError> {
        let mut state = self.state.lock().expect("sidecar pool poisoned");
        loop {
            if let Some(s) = state.idle.pop() {
                return Ok(s);
            }
            if state.live < self.max_processes {
                state.live += 1;
                drop(state);
                return Sidecar::spawn(&self.program, &self.args).inspect_err(|_| {
                    self.state.lock().expect("sidecar pool poisoned").live -= 1;
                    self.freed.notify_one();
                });
            }
            state = self.freed.wait(state).expect("sidecar pool poisoned");
        }
    }

    fn release(&self, sidecar: Sidecar, reusable: bool) {
        let mut state = self.state.lock().expect("sidecar pool poisoned");
        if reusable {
            state.idle.push(sidecar);
        } else {
            state.live -= 1;
            drop(state);
            sidecar.shutdown();
        }
        self.freed.notify_one();
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError> {
        let mut sidecar = self.acquire()?;
        let result = exchange(req, &mut sidecar.stdin, &mut sidecar.stdout);
        // after a framing failure the stream position is unknown
        let reusable = matches!(result, Ok(_) | Err(PredictError::Sidecar(_)));
        self.release(sidecar, reusable);
        result
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        if let Ok(state) = self.state.get_mut() {
            for s in state.idle.drain(..) {
                s.shutdown();
            }
        }
    }
}

/// Textual predictor selection: `identity`, `shift:DX,DY`, `drift:GAIN` or
/// `external:COMMAND`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PredictorSpec {
    Identity,
    Shift { dx: f32, dy: f32 },
    Drift { gain: f32 },
    External { command: String },
}

impl PredictorSpec {
    pub fn build(&self, max_processes: usize) -> Result<Box<dyn Predictor>, PredictError> {
        Ok(match self {
            PredictorSpec::Identity => Box::new(IdentityPredictor),
            PredictorSpec::Shift { dx, dy } => Box::new(ShiftPredictor { dx: *dx, dy: *dy }),
            PredictorSpec::Drift { gain } => Box::new(GradientDriftPredictor { gain: *gain }),
            PredictorSpec::External { command } => {
                Box::new(ExternalPredictor::new(command, max_processes)?)
            }
        })
    }

    pub fn is_external(&self) -> bool {
        matches!(self, PredictorSpec::External { .. })
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Identity => write!(f, "identity"),
            PredictorSpec::Shift { dx, dy } => write!(f, "shift:{dx},{dy}"),
            PredictorSpec::Drift { gain } => write!(f, "drift:{gain}"),
            PredictorSpec::External { command } => write!(f, "external:{command}"),
        }
    }
}

impl FromStr for PredictorSpec {
    type Err = PredictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || PredictError::InvalidSpec(s.to_string());
        let s = s.trim();
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = |t: &str| t.trim().parse::<f32>().ok().filter(|v| v.is_finite());
        match kind {
            "identity" if arg.is_empty() => Ok(PredictorSpec::Identity),
            "shift" => {
                let (a, b) = arg.split_once(',').ok_or_else(invalid)?;
                Ok(PredictorSpec::Shift {
                    dx: num(a).ok_or_else(invalid)?,
                    dy: num(b).ok_or_else(invalid)?,
                })
            }
            "drift" => {
                let gain = num(arg).filter(|g| *g >= 0.0).ok_or_else(invalid)?;
                Ok(PredictorSpec::Drift { gain })
            }
            "external" if !arg.trim().is_empty() => Ok(PredictorSpec::External {
                command: arg.trim().to_string(),
            }),
            _ => Err(invalid()),
        }
    }
}

impl TryFrom<String> for PredictorSpec {
    type Error = PredictError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PredictorSpec> for String {
    fn from(spec: PredictorSpec) -> String {
        spec.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Raster {
        Raster::from_fn(w, h, 1, |x, y, _| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.25 * (0.37 * x).sin() * (0.23 * y).cos() + 0.2 * (0.11 * x + 0.31 * y).sin()
        })
        .unwrap()
    }

    #[test]
    fn static_sequence() {
        let img = textured(160, 120);
        let req = make_static_sequence(&img, 20, 2).unwrap();
        assert_eq!(req.frames().len(), 20);
        assert!(req
            .frames()
            .iter()
            .all(|f| f.to_bytes() == img.to_bytes() && *f == img));
        assert_eq!(make_static_sequence(&img, 1, 2).unwrap().frames().len(), 1);
        assert!(make_static_sequence(&img, 0, 2).is_err());
        assert!(make_static_sequence(&img, 3, 0).is_err());
    }

    #[test]
    fn request_rejects_mixed_shapes() {
        let a = Raster::filled(4, 4, 1, 0.0).unwrap();
        let b = Raster::filled(4, 4, 3, 0.0).unwrap();
        assert!(PredictRequest::new(vec![a, b], 2).is_err());
        assert!(PredictRequest::new(vec![], 2).is_err());
    }

    #[test]
    fn identity_repeats_last_frame() {
        let a = Raster::filled(8, 6, 1, 0.1).unwrap();
        let b = textured(8, 6);
        let req = PredictRequest::new(vec![a, b.clone()], 2).unwrap();
        let resp = IdentityPredictor.predict(&req).unwrap();
        assert_eq!(resp.predicted, vec![b.clone(), b]);
    }

    #[test]
    fn zero_shift_equals_identity() {
        let req = make_static_sequence(&textured(32, 24), 3, 2).unwrap();
        assert_eq!(predict_shift(&req, 0.0, 0.0), predict_identity(&req));
    }

    #[test]
    fn half_pixel_shift_matches_interpolation() {
        let img = textured(32, 24);
        let req = make_static_sequence(&img, 2, 2).unwrap();
        let resp = predict_shift(&req, 0.5, 0.0);
        for y in 0..24 {
            for x in 1..32 {
                let want = 0.5 * (img.get(x - 1, y, 0) + img.get(x, y, 0));
                assert!((resp.predicted[0].get(x, y, 0) - want).abs() < 1e-6);
                // second frame moved by one full pixel
                assert!((resp.predicted[1].get(x, y, 0) - img.get(x - 1, y, 0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn drift_identity_cases() {
        let img = textured(40, 30);
        let req = make_static_sequence(&img, 2, 2).unwrap();
        assert_eq!(
            predict_gradient_drift(&req, 0.0).unwrap(),
            predict_identity(&req)
        );
        let flat = make_static_sequence(&Raster::filled(40, 30, 3, 0.6).unwrap(), 2, 2).unwrap();
        assert_eq!(
            predict_gradient_drift(&flat, 25.0).unwrap(),
            predict_identity(&flat)
        );
        assert!(predict_gradient_drift(&req, -1.0).is_err());
    }

    #[test]
    fn drift_on_ramp_is_uniform() {
        let slope = 1.0 / 200.0;
        let ramp = Raster::from_fn(80, 40, 1, |x, _, _| 0.1 + slope * x as f32).unwrap();
        for (gain, expected) in [(40.0f32, 0.2f32), (400.0, 1.0)] {
            let field = drift_field(&ramp, gain);
            for y in 0..40 {
                for x in 4..76 {
                    let (dx, dy) = field[y * 80 + x];
                    assert!(
                        (dx - expected).abs() < 1e-4 && dy.abs() < 1e-5,
                        "({x},{y}) {dx} {dy}"
                    );
                }
            }
            let req = make_static_sequence(&ramp, 1, 1).unwrap();
            let out = &predict_gradient_drift(&req, gain).unwrap().predicted[0];
            for x in 6..74 {
                let want = 0.1 + slope * (x as f32 - expected);
                assert!((out.get(x, 20, 0) - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn builtins_are_deterministic() {
        let req = make_static_sequence(&textured(48, 36), 4, 2).unwrap();
        for spec in ["identity", "shift:1.5,-0.5", "drift:12"] {
            let p = spec.parse::<PredictorSpec>().unwrap().build(1).unwrap();
            let a = p.predict(&req).unwrap();
            let b = p.predict(&req).unwrap();
            assert_eq!(a.predicted.len(), 2);
            for (x, y) in a.predicted.iter().zip(&b.predicted) {
                assert_eq!(x.to_bytes(), y.to_bytes());
                assert!(x.same_shape(req.last_frame()));
            }
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "identity".parse::<PredictorSpec>().unwrap(),
            PredictorSpec::Identity
        );
        assert_eq!(
            "shift:2,0".parse::<PredictorSpec>().unwrap(),
            PredictorSpec::Shift { dx: 2.0, dy: 0.0 }
        );
        assert_eq!(
            "drift:8.5".parse::<PredictorSpec>().unwrap(),
            PredictorSpec::Drift { gain: 8.5 }
        );
        assert_eq!(
            "external:python3 sidecar.py --echo"
                .parse::<PredictorSpec>()
                .unwrap(),
            PredictorSpec::External {
                command: "python3 sidecar.py --echo".into()
            }
        );
        for bad in [
            "",
            "shift:1",
            "drift:-1",
            "external:",
            "magic",
            "identity:3",
        ] {
            assert!(bad.parse::<PredictorSpec>().is_err(), "{bad}");
        }
        let spec = PredictorSpec::Shift { dx: 0.5, dy: -1.0 };
        assert_eq!(spec.to_string().parse::<PredictorSpec>().unwrap(), spec);
    }

    #[test]
    fn exchange_over_in_memory_streams() {
        let img = textured(6, 4);
        let req = make_static_sequence(&img, 3, 2).unwrap();
        let reply = protocol::encode(&Message::Response {
            frames: vec![img.clone(), img.clone()],
        })
        .unwrap();
        let mut sent = Vec::new();
        let resp = exchange(&req, &mut sent, &mut reply.as_slice()).unwrap();
        assert_eq!(resp.predicted.len(), 2);
        assert_eq!(resp.predicted[0].to_bytes(), img.to_bytes());
        match protocol::read_message(&mut sent.as_slice()).unwrap() {
            Message::Request { frames, extension } => {
                assert_eq!((frames.len(), extension), (3, 2));
            }
            other => panic!("{other:?}"),
        }

        let short = protocol::encode(&Message::Response {
            frames: vec![img.clone()],
        })
        .unwrap();
        assert!(matches!(
            exchange(&req, &mut Vec::new(), &mut short.as_slice()),
            Err(PredictError::DimensionMismatch(_))
        ));
        let wrong = protocol::encode(&Message::Response {
            frames: vec![Raster::filled(5, 4, 1, 0.0).unwrap(); 2],
        })
        .unwrap();
        assert!(matches!(
            exchange(&req, &mut Vec::new(), &mut wrong.as_slice()),
            Err(PredictError::DimensionMismatch(_))
        ));
        let err = protocol::encode(&Message::Error("model not loaded".into())).unwrap();
        match exchange(&req, &mut Vec::new(), &mut err.as_slice()) {
            Err(PredictError::Sidecar(t)) => assert_eq!(t, "model not loaded"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            exchange(&req, &mut Vec::new(), &mut &reply[..20]),
            Err(PredictError::Protocol(ProtocolError::Truncated))
        ));
    }

    #[test]
    fn spawn_failure_is_reported() {
        let p = ExternalPredictor::new("/nonexistent/eigen-predictor-binary", 2).unwrap();
        let req = make_static_sequence(&textured(4, 4), 1, 1).unwrap();
        assert!(matches!(p.predict(&req), Err(PredictError::Spawn(_))));
        // the failed slot is returned to the pool
        assert!(matches!(p.predict(&req), Err(PredictError::Spawn(_))));
        assert!(matches!(p.predict(&req), Err(PredictError::Spawn(_))));
    }
}
