use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use image::RgbImage;

use super::{ClassLabel, ClassScores};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// A five-class patch classifier. Implementations must be deterministic.
pub trait PatchClassifier: Send + Sync {
    fn name(&self) -> &str;

    /// Side length the classifier expects; `None` accepts patches as cut.
    fn input_size(&self) -> Option<u32> {
        None
    }

    fn classify(&self, id: usize, patch: &RgbImage) -> Result<ClassScores>;
}

/// Checks the patch against the classifier's declared input, then classifies.
pub fn classify_patch(patch: &RgbImage, classifier: &dyn PatchClassifier, id: usize) -> Result<ClassScores> {
    if let Some(n) = classifier.input_size() {
        if patch.dimensions() != (n, n) {
            return Err(Error::Classifier {
                patch_id: id,
                message: format!(
                    "{} expects {n}×{n} patches, got {}×{}",
                    classifier.name(),
                    patch.width(),
                    patch.height()
                ),
            });
        }
    }
    classifier.classify(id, patch)
}

/// Reference colour-rule classifier: per-pixel class rules give class
/// fractions, scored by `softmax(beta · weight_c · fraction_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicClassifier {
    pub beta: f64,
    pub weights: [f64; 5],
}

impl Default for HeuristicClassifier {
    fn default() -> Self {
        Self {
            beta: 10.0,
            weights: [12.0, 4.0, 4.0, 1.0, 1.0],
        }
    }
}

impl HeuristicClassifier {
    /// Class of a single pixel.
    pub fn pixel_class(rgb: [u8; 3]) -> ClassLabel {
        let [r, g, b] = rgb.map(i32::from);
        let sum = r + g + b;
        let v = sum / 3;
        let sat = r.max(g).max(b) - r.min(g).min(b);
        if v < 120 && b > g {
            ClassLabel::Bunch
        } else if g > r && g > b && g * 5 > sum * 2 {
            ClassLabel::Leaves
        } else if v > 160 && sat < 40 {
            ClassLabel::Pole
        } else if r > g && g > b && r - b > 30 && (50..=190).contains(&v) {
            ClassLabel::Wood
        } else {
            ClassLabel::Background
        }
    }

    pub fn fractions(patch: &RgbImage) -> [f64; 5] {
        let mut counts = [0usize; 5];
        for p in patch.pixels() {
            counts[Self::pixel_class(p.0).index()] += 1;
        }
        let n = (patch.width() * patch.height()).max(1) as f64;
        counts.map(|c| c as f64 / n)
    }
}

impl PatchClassifier for HeuristicClassifier {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn classify(&self, _id: usize, patch: &RgbImage) -> Result<ClassScores> {
        let f = Self::fractions(patch);
        let mut logits = [0.0; 5];
        for i in 0..5 {
            logits[i] = self.beta * self.weights[i] * f[i];
        }
        Ok(ClassScores::softmax(logits))
    }
}

/// Returns the same scores for every patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedClassifier {
    pub scores: ClassScores,
    pub input_size: Option<u32>,
}

impl PatchClassifier for FixedClassifier {
    fn name(&self) -> &str {
        "fixed"
    }

    fn input_size(&self) -> Option<u32> {
        self.input_size
    }

    fn classify(&self, _id: usize, _patch: &RgbImage) -> Result<ClassScores> {
        Ok(self.scores)
    }
}

// Wire protocol.

pub fn write_request<W: Write>(mut w: W, id: usize, patch: &RgbImage) -> std::io::Result<()> {
    writeln!(w, "PATCH {id} {} {}", patch.width(), patch.height())?;
    w.write_all(patch.as_raw())?;
    w.flush()
}

/// Parses `PATCH <id> <width> <height>`.
pub fn parse_request_header(line: &str) -> Result<(usize, u32, u32)> {
    let bad = || Error::Validation(format!("malformed request header `{}`", line.trim_end()));
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 4 || f[0] != "PATCH" {
        return Err(bad());
    }
    let id = f[1].parse().map_err(|_| bad())?;
    let w: u32 = f[2].parse().map_err(|_| bad())?;
    let h: u32 = f[3].parse().map_err(|_| bad())?;
    if w == 0 || h == 0 || w > 8192 || h > 8192 {
        return Err(bad());
    }
    Ok((id, w, h))
}

pub fn write_scores_line<W: Write>(mut w: W, id: usize, scores: &ClassScores) -> std::io::Result<()> {
    let s = scores.as_array();
    writeln!(w, "SCORES {id} {} {} {} {} {}", s[0], s[1], s[2], s[3], s[4])?;
    w.flush()
}

/// Parses `SCORES <id> <bunch> <pole> <wood> <leaves> <background>` for `expected_id`.
pub fn parse_scores_line(line: &str, expected_id: usize) -> Result<ClassScores> {
    let err = |m: String| Error::Classifier {
        patch_id: expected_id,
        message: m,
    };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 7 || f[0] != "SCORES" {
        return Err(err(format!("malformed response `{}`", line.trim_end())));
    }
    if f[1].parse::<usize>().ok() != Some(expected_id) {
        return Err(err(format!("response id `{}` does not match", f[1])));
    }
    let mut s = [0.0; 5];
    for (k, v) in f[2..].iter().enumerate() {
        s[k] = v.parse().map_err(|_| err(format!("non-numeric score `{v}`")))?;
    }
    ClassScores::new(s).map_err(|e| err(e.to_string()))
}

/// Answers requests from `input` on `output` until end of stream; returns
/// the number of patches served.
pub fn serve_classifier<R: BufRead, W: Write>(mut input: R, mut output: W, classifier: &dyn PatchClassifier) -> Result<usize> {
    let io = |e: std::io::Error| Error::io("<classifier stream>", e);
    let mut served = 0;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            return Ok(served);
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, w, h) = parse_request_header(&line)?;
        let mut buf = vec![0u8; (w * h * 3) as usize];
        input.read_exact(&mut buf).map_err(io)?;
        let patch = RgbImage::from_raw(w, h, buf).expect("sized buffer");
        let scores = classifier.classify(id, &patch)?;
        write_scores_line(&mut output, id, &scores).map_err(io)?;
        served += 1;
    }
}

struct ProcessInner {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Speaks the protocol with a spawned process over its standard streams.
/// Requests are serialised over the single connection.
pub struct ProcessClassifier {
    label: String,
    input_size: Option<u32>,
    timeout: Duration,
    inner: Mutex<ProcessInner>,
}

impl ProcessClassifier {
    pub fn spawn(program: &str, args: &[String], input_size: Option<u32>, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match r.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self {
            label: format!("process:{program}"),
            input_size,
            timeout,
            inner: Mutex::new(ProcessInner {
                child,
                stdin,
                lines: rx,
            }),
        })
    }
}

impl PatchClassifier for ProcessClassifier {
    fn name(&self) -> &str {
        &self.label
    }

    fn input_size(&self) -> Option<u32> {
        self.input_size
    }

    fn classify(&self, id: usize, patch: &RgbImage) -> Result<ClassScores> {
        let err = |m: String| Error::Classifier { patch_id: id, message: m };
        let inner = &mut *self.inner.lock().map_err(|_| err("classifier connection poisoned".into()))?;
        write_request(&mut inner.stdin, id, patch).map_err(|e| err(format!("write failed: {e}")))?;
        match inner.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => parse_scores_line(&line, id),
            Ok(Err(e)) => Err(err(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(err(format!("no response within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(err("classifier process closed its output".into())),
        }
    }
}

impl Drop for ProcessClassifier {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            let _ = inner.child.kill();
            let _ = inner.child.wait();
        }
    }
}

/// Speaks the protocol over one TCP connection.
pub struct TcpClassifier {
    label: String,
    input_size: Option<u32>,
    conn: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl TcpClassifier {
    pub fn connect(addr: &str, input_size: Option<u32>, timeout: Duration) -> Result<Self> {
        let io = |e| Error::io(addr, e);
        let sock = addr
            .to_socket_addrs()
            .map_err(io)?
            .next()
            .ok_or_else(|| Error::Config(format!("cannot resolve `{addr}`")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(io)?;
        stream.set_read_timeout(Some(timeout)).map_err(io)?;
        stream.set_write_timeout(Some(timeout)).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        let reader = BufReader::new(stream.try_clone().map_err(io)?);
        Ok(Self {
            label: format!("tcp:{addr}"),
            input_size,
            conn: Mutex::new((reader, stream)),
        })
    }
}

impl PatchClassifier for TcpClassifier {
    fn name(&self) -> &str {
        &self.label
    }

    fn input_size(&self) -> Option<u32> {
        self.input_size
    }

    fn classify(&self, id: usize, patch: &RgbImage) -> Result<ClassScores> {
        let err = |m: String| Error::Classifier { patch_id: id, message: m };
        let conn = &mut *self.conn.lock().map_err(|_| err("classifier connection poisoned".into()))?;
        write_request(&mut conn.1, id, patch).map_err(|e| err(format!("write failed: {e}")))?;
        let mut line = String::new();
        match conn.0.read_line(&mut line) {
            Ok(0) => Err(err("connection closed".into())),
            Ok(_) => parse_scores_line(&line, id),
            Err(e) => Err(err(format!("read failed: {e}"))),
        }
    }
}
