//! Remote operation over a byte stream: sampled wavefronts are framed,
//! checksummed, shipped, and replayed by a transmit array.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "WCF1"
//! 4       1     version (1)
//! 5       4     sequence number, u32
//! 9       2     rows, u16
//! 11      2     cols, u16
//! 13      16n   n = rows*cols samples, (re, im) f64 pairs, row-major
//! 13+16n  4     CRC-32 (IEEE) of bytes 0 .. 13+16n
//! ```

use crate::em::RfReading;
use crate::metrics::BoxStats;
use crate::scene::{PointSource, ReceiveArray};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"WCF1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 13;
pub const TRAILER_LEN: usize = 4;
/// Largest payload a stream reader will wait for; longer headers are
/// treated as corruption.
pub const MAX_STREAM_PAYLOAD: usize = 16 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("checksum mismatch")]
    BadChecksum,
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("{0} bytes after the end of the frame")]
    TrailingBytes(usize),
    #[error("frame payload of {0} bytes exceeds the stream limit")]
    Oversized(usize),
    #[error("reading contains a non-finite sample")]
    NonFiniteSample,
    #[error("reading of {rows}x{cols} does not fit a frame")]
    TooLarge { rows: usize, cols: usize },
    #[error("frame is {frame_rows}x{frame_cols} but the array is {rows}x{cols}")]
    DimMismatch { frame_rows: u16, frame_cols: u16, rows: usize, cols: usize },
    #[error("frame declares {declared} samples but holds {held}")]
    SampleCount { declared: usize, held: usize },
    #[error("connection lost mid-frame ({0} bytes discarded)")]
    ConnectionLost(usize),
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub version: u8,
    pub seq: u32,
    pub rows: u16,
    pub cols: u16,
    pub samples: Vec<Complex64>,
}

impl WireFrame {
    pub fn new(seq: u32, rows: u16, cols: u16, samples: Vec<Complex64>) -> Self {
        WireFrame { version: VERSION, seq, rows, cols, samples }
    }

    pub fn payload_len(&self) -> usize {
        self.rows as usize * self.cols as usize * 16
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len() + TRAILER_LEN
    }

    pub fn to_reading(&self) -> RfReading {
        RfReading::new(self.rows as usize, self.cols as usize, self.samples.clone())
    }
}

/// Appends the encoding of `frame` to `out`.
pub fn encode_into(frame: &WireFrame, out: &mut Vec<u8>) -> Result<(), TransportError> {
    let declared = frame.rows as usize * frame.cols as usize;
    if declared != frame.samples.len() {
        return Err(TransportError::SampleCount { declared, held: frame.samples.len() });
    }
    let start = out.len();
    out.reserve(frame.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.version);
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.rows.to_le_bytes());
    out.extend_from_slice(&frame.cols.to_le_bytes());
    for z in &frame.samples {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

pub fn encode_frame(frame: &WireFrame) -> Result<Vec<u8>, TransportError> {
    let mut out = Vec::new();
    encode_into(frame, &mut out)?;
    Ok(out)
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"))
}

/// Total encoded length announced by a header, once enough bytes are in.
fn announced_len(b: &[u8]) -> Option<usize> {
    (b.len() >= HEADER_LEN).then(|| HEADER_LEN + u16_at(b, 9) as usize * u16_at(b, 11) as usize * 16 + TRAILER_LEN)
}

/// Decodes exactly one frame. Checks run in the order magic, length,
/// checksum, version.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, TransportError> {
    let head = bytes.len().min(4);
    if bytes[..head] != MAGIC[..head] {
        return Err(TransportError::BadMagic);
    }
    let need = announced_len(bytes).unwrap_or(HEADER_LEN + TRAILER_LEN);
    if bytes.len() < need {
        return Err(TransportError::Truncated { need, have: bytes.len() });
    }
    if bytes.len() > need {
        return Err(TransportError::TrailingBytes(bytes.len() - need));
    }
    let body = need - TRAILER_LEN;
    if crc32fast::hash(&bytes[..body]) != u32_at(bytes, body) {
        return Err(TransportError::BadChecksum);
    }
    if bytes[4] != VERSION {
        return Err(TransportError::UnsupportedVersion(bytes[4]));
    }
    let samples = (HEADER_LEN..body)
        .step_by(16)
        .map(|i| Complex64::new(f64_at(bytes, i), f64_at(bytes, i + 8)))
        .collect();
    Ok(WireFrame { version: VERSION, seq: u32_at(bytes, 5), rows: u16_at(bytes, 9), cols: u16_at(bytes, 11), samples })
}

/// Turns readings into frames with consecutive sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct Sampler {
    next_seq: u32,
}

impl Sampler {
    pub fn starting_at(seq: u32) -> Self {
        Sampler { next_seq: seq }
    }

    pub fn sample(&mut self, reading: &RfReading) -> Result<WireFrame, TransportError> {
        sample_wavefront(reading, &mut self.next_seq)
    }
}

/// Frames `reading` verbatim under sequence number `*seq`, then advances
/// it (wrapping).
pub fn sample_wavefront(reading: &RfReading, seq: &mut u32) -> Result<WireFrame, TransportError> {
    if !reading.is_finite() {
        return Err(TransportError::NonFiniteSample);
    }
    let (Ok(rows), Ok(cols)) = (u16::try_from(reading.rows), u16::try_from(reading.cols)) else {
        return Err(TransportError::TooLarge { rows: reading.rows, cols: reading.cols });
    };
    let f = WireFrame::new(*seq, rows, cols, reading.data.clone());
    *seq = seq.wrapping_add(1);
    Ok(f)
}

/// Re-emits a frame from a transmit array: element `i` becomes a point
/// source carrying sample `i` (conjugated if `conjugate`).
pub fn replay_frame(frame: &WireFrame, array: &ReceiveArray, conjugate: bool) -> Result<Vec<PointSource>, TransportError> {
    if frame.rows as usize != array.rows || frame.cols as usize != array.cols || frame.samples.len() != array.elements.len() {
        return Err(TransportError::DimMismatch {
            frame_rows: frame.rows,
            frame_cols: frame.cols,
            rows: array.rows,
            cols: array.cols,
        });
    }
    Ok(array
        .elements
        .iter()
        .zip(&frame.samples)
        .enumerate()
        .map(|(i, (&p, &z))| PointSource::new(format!("{}/{i}", array.id), p, if conjugate { z.conj() } else { z }))
        .collect())
}

/// Receive-side counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub frames: u64,
    /// Magic-aligned candidates that failed checksum, version or size checks.
    pub corrupted: u64,
    /// Bytes discarded while hunting for the next magic.
    pub skipped_bytes: u64,
}

/// Pulls frames out of an ordered byte stream, resynchronizing on the magic
/// after corruption.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    eof: bool,
    pub stats: StreamStats,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader { inner, buf: Vec::with_capacity(1 << 16), eof: false, stats: StreamStats::default() }
    }

    fn fill(&mut self) -> Result<(), TransportError> {
        let mut chunk = [0u8; 1 << 14];
        match self.inner.read(&mut chunk) {
            Ok(0) => self.eof = true,
            Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset || e.kind() == io::ErrorKind::UnexpectedEof => {
                self.eof = true
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn skip(&mut self, n: usize) {
        self.buf.drain(..n);
        self.stats.skipped_bytes += n as u64;
    }

    /// Next intact frame, `None` at a clean end of stream, or
    /// `ConnectionLost` if the stream ends inside a frame.
    pub fn next_frame(&mut self) -> Result<Option<WireFrame>, TransportError> {
        loop {
            // Align the buffer on a (possibly partial) magic.
            let aligned = self.buf.windows(4).position(|w| w == MAGIC);
            match aligned {
                Some(0) => {}
                Some(i) => self.skip(i),
                None => {
                    // Keep a tail that could still grow into a magic.
                    let keep = (1..=3.min(self.buf.len()))
                        .rev()
                        .find(|&k| self.buf[self.buf.len() - k..] == MAGIC[..k])
                        .unwrap_or(0);
                    let drop = self.buf.len() - keep;
                    self.skip(drop);
                    if self.eof {
                        return if self.buf.is_empty() {
                            Ok(None)
                        } else {
                            Err(TransportError::ConnectionLost(self.buf.len()))
                        };
                    }
                    self.fill()?;
                    continue;
                }
            }
            let Some(need) = announced_len(&self.buf) else {
                if self.eof {
                    return self.lost_or_rescan();
                }
                self.fill()?;
                continue;
            };
            if need - HEADER_LEN - TRAILER_LEN > MAX_STREAM_PAYLOAD {
                self.stats.corrupted += 1;
                self.skip(1);
                continue;
            }
            if self.buf.len() < need {
                if self.eof {
                    return self.lost_or_rescan();
                }
                self.fill()?;
                continue;
            }
            match decode_frame(&self.buf[..need]) {
                Ok(f) => {
                    self.buf.drain(..need);
                    self.stats.frames += 1;
                    return Ok(Some(f));
                }
                Err(_) => {
                    self.stats.corrupted += 1;
                    self.skip(1);
                }
            }
        }
    }

    /// At end of stream with an incomplete candidate: a later magic might
    /// still start an intact frame (the candidate may be garbage), otherwise
    /// the connection died mid-frame.
    fn lost_or_rescan(&mut self) -> Result<Option<WireFrame>, TransportError> {
        if self.buf.len() > 4 && self.buf[1..].windows(4).any(|w| w == MAGIC) {
            self.stats.corrupted += 1;
            self.skip(1);
            return self.next_frame();
        }
        let n = self.buf.len();
        self.buf.clear();
        Err(TransportError::ConnectionLost(n))
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<WireFrame, TransportError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Median / p95 / max of per-frame timings, microseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub median_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_durations(d: &[Duration]) -> Self {
        if d.is_empty() {
            return LatencyStats::default();
        }
        let mut us: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        let q = |p: f64| crate::metrics::quantile_sorted(&us, p);
        LatencyStats { count: us.len(), median_us: q(0.5), p95_us: q(0.95), max_us: us[us.len() - 1] }
    }

    pub fn box_stats(d: &[Duration]) -> Option<BoxStats> {
        let us: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e6).collect();
        crate::metrics::summarize(&us).ok()
    }
}

/// Outcome of one side of a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub frames: u64,
    pub stream: StreamStats,
    pub encode: LatencyStats,
    pub decode: LatencyStats,
    /// Set when the peer vanished mid-frame.
    pub connection_lost: bool,
}

/// Encodes and writes frames in order, optionally paced at `rate_hz`.
pub fn send_frames<W: Write>(
    mut out: W,
    frames: impl IntoIterator<Item = WireFrame>,
    rate_hz: Option<f64>,
) -> Result<SessionReport, TransportError> {
    let mut timings = Vec::new();
    let mut buf = Vec::new();
    let period = rate_hz.filter(|r| *r > 0.0).map(|r| Duration::from_secs_f64(1.0 / r));
    let start = Instant::now();
    let mut n = 0u64;
    for f in frames {
        if let Some(p) = period {
            let due = start + p * n as u32;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        buf.clear();
        let t = Instant::now();
        encode_into(&f, &mut buf)?;
        timings.push(t.elapsed());
        out.write_all(&buf)?;
        n += 1;
    }
    out.flush()?;
    Ok(SessionReport { frames: n, encode: LatencyStats::from_durations(&timings), ..Default::default() })
}

/// Reads frames until the stream ends, handing each to `on_frame`.
/// Corrupted frames are counted and skipped; a truncated final frame marks
/// the report as `connection_lost` instead of failing.
pub fn receive_frames<R: Read>(input: R, mut on_frame: impl FnMut(WireFrame)) -> Result<SessionReport, TransportError> {
    let mut reader = FrameReader::new(input);
    let mut timings = Vec::new();
    let mut lost = false;
    loop {
        let t = Instant::now();
        match reader.next_frame() {
            Ok(Some(f)) => {
                timings.push(t.elapsed());
                on_frame(f);
            }
            Ok(None) => break,
            Err(TransportError::ConnectionLost(_)) => {
                lost = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SessionReport {
        frames: reader.stats.frames,
        stream: reader.stats.clone(),
        decode: LatencyStats::from_durations(&timings),
        connection_lost: lost,
        ..Default::default()
    })
}

/// Server role: accepts one client on `listener` and receives its frames.
pub fn serve_once(listener: &TcpListener, on_frame: impl FnMut(WireFrame)) -> Result<SessionReport, TransportError> {
    let (stream, _) = listener.accept()?;
    receive_frames(io::BufReader::new(stream), on_frame)
}

/// Client role: connects and sends every frame, then closes the stream.
pub fn connect_and_send(
    addr: impl std::net::ToSocketAddrs,
    frames: impl IntoIterator<Item = WireFrame>,
    rate_hz: Option<f64>,
) -> Result<SessionReport, TransportError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let report = send_frames(io::BufWriter::new(&stream), frames, rate_hz)?;
    stream.shutdown(std::net::Shutdown::Write)?;
    Ok(report)
}
