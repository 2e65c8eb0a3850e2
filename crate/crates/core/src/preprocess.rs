//! RMS feature extraction and per-window least-squares slopes.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::stream::{SignalStream, Timeline};

/// Per-channel RMS over one window, stamped at the window end.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsFrame {
    pub values: Vec<f64>,
    pub frame_index: usize,
    pub t_seconds: f64,
}

/// Per-channel regression slope over one window of RMS frames, in RMS units
/// per frame. `t_seconds` is the time of the last frame in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeVector {
    pub slopes: Vec<f64>,
    pub window_index: usize,
    pub t_seconds: f64,
}

/// Number of full windows of length `window` advancing by `stride` over `n` items.
pub fn window_count(n: usize, window: usize, stride: usize) -> usize {
    if n < window {
        0
    } else {
        (n - window) / stride + 1
    }
}

fn rms_of<'a>(rows: impl Iterator<Item = &'a [f64]>, k: usize, w: usize) -> Vec<f64> {
    let mut acc = vec![0.0; k];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v * v;
        }
    }
    acc.iter().map(|s| (s / w as f64).sqrt()).collect()
}

/// Sliding-window RMS per channel. The trailing partial window is dropped.
pub fn rms_extract(stream: &SignalStream, timeline: &Timeline) -> Vec<RmsFrame> {
    let w = timeline.rms_window_samples();
    let s = timeline.rms_stride_samples();
    let k = stream.n_channels();
    let n = window_count(stream.len(), w, s);
    if n == 0 {
        log::warn!(
            "stream of {} samples is shorter than one RMS window ({w} samples)",
            stream.len()
        );
    }
    let samples = stream.samples();
    (0..n)
        .map(|f| {
            let start = f * s;
            let values = rms_of(
                samples[start..start + w]
                    .iter()
                    .map(|x| x.channels.as_slice()),
                k,
                w,
            );
            RmsFrame {
                values,
                frame_index: f,
                t_seconds: timeline.frame_time(f),
            }
        })
        .collect()
}

/// Ordinary least-squares slope of `ys` against 0..len.
pub fn ols_slope(ys: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let k_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.clone().sum::<f64>() / nf;
    let sxx = nf * (nf * nf - 1.0) / 12.0;
    let sxy: f64 = ys
        .enumerate()
        .map(|(k, y)| (k as f64 - k_mean) * (y - y_mean))
        .sum();
    sxy / sxx
}

fn slopes_of(frames: &[RmsFrame], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| ols_slope(frames.iter().map(|f| f.values[c])))
        .collect()
}

/// Least-squares slopes over windows of RMS frames.
pub fn slope_features(frames: &[RmsFrame], timeline: &Timeline) -> Vec<SlopeVector> {
    let w = timeline.slope_window_frames();
    let s = timeline.slope_stride_frames();
    let n = window_count(frames.len(), w, s);
    if n == 0 {
        log::warn!(
            "{} RMS frames are fewer than one slope window ({w} frames)",
            frames.len()
        );
        return Vec::new();
    }
    let k = frames[0].values.len();
    (0..n)
        .map(|j| SlopeVector {
            slopes: slopes_of(&frames[j * s..j * s + w], k),
            window_index: j,
            t_seconds: timeline.slope_time(j),
        })
        .collect()
}

/// Incremental RMS extraction over a ring buffer of raw samples.
#[derive(Debug, Clone)]
pub struct RmsStreamer {
    timeline: Timeline,
    buffer: VecDeque<Vec<f64>>,
    seen: usize,
    next_frame: usize,
}

impl RmsStreamer {
    pub fn new(timeline: Timeline) -> Self {
        Self {
            buffer: VecDeque::with_capacity(timeline.rms_window_samples()),
            timeline,
            seen: 0,
            next_frame: 0,
        }
    }

    /// Pushes one multi-channel sample; returns a frame when a window completes.
    pub fn push(&mut self, sample: &[f64]) -> Result<Option<RmsFrame>> {
        if let Some(first) = self.buffer.front() {
            if first.len() != sample.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: sample.len(),
                });
            }
        }
        let w = self.timeline.rms_window_samples();
        let s = self.timeline.rms_stride_samples();
        if self.buffer.len() == w {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample.to_vec());
        self.seen += 1;
        let frame_start = self.next_frame * s;
        if self.seen == frame_start + w {
            let values = rms_of(self.buffer.iter().map(Vec::as_slice), sample.len(), w);
            let frame = RmsFrame {
                values,
                frame_index: self.next_frame,
                t_seconds: self.timeline.frame_time(self.next_frame),
            };
            self.next_frame += 1;
            return Ok(Some(frame));
        }
        Ok(None)
    }
}

/// Incremental slope extraction over a ring buffer of RMS frames.
#[derive(Debug, Clone)]
pub struct SlopeStreamer {
    timeline: Timeline,
    buffer: VecDeque<Vec<f64>>,
    seen: usize,
    next_window: usize,
}

impl SlopeStreamer {
    pub fn new(timeline: Timeline) -> Self {
        Self {
            buffer: VecDeque::with_capacity(timeline.slope_window_frames()),
            timeline,
            seen: 0,
            next_window: 0,
        }
    }

    pub fn push(&mut self, frame: &RmsFrame) -> Result<Option<SlopeVector>> {
        if let Some(first) = self.buffer.front() {
            if first.len() != frame.values.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: frame.values.len(),
                });
            }
        }
        let w = self.timeline.slope_window_frames();
        let s = self.timeline.slope_stride_frames();
        if self.buffer.len() == w {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame.values.clone());
        self.seen += 1;
        if self.seen == self.next_window * s + w {
            let k = frame.values.len();
            let slopes = (0..k)
                .map(|c| ols_slope(self.buffer.iter().map(|v| v[c])))
                .collect();
            let out = SlopeVector {
                slopes,
                window_index: self.next_window,
                t_seconds: self.timeline.slope_time(self.next_window),
            };
            self.next_window += 1;
            return Ok(Some(out));
        }
        Ok(None)
    }
}

fn write_rows<W: Write>(
    mut out: W,
    header: &str,
    prefix: &str,
    rows: impl Iterator<Item = (usize, f64, Vec<f64>)>,
    k: usize,
) -> std::io::Result<()> {
    write!(out, "{header}")?;
    for c in 1..=k {
        write!(out, ",{prefix}_{c}")?;
    }
    writeln!(out)?;
    for (i, t, vals) in rows {
        write!(out, "{i},{t:.6}")?;
        for v in vals {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn write_rms_csv(frames: &[RmsFrame], n_channels: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(
        BufWriter::new(f),
        "frame,t_seconds",
        "rms",
        frames
            .iter()
            .map(|f| (f.frame_index, f.t_seconds, f.values.clone())),
        n_channels,
    )
    .map_err(|e| Error::io(path, e))
}

pub fn write_slope_csv(
    slopes: &[SlopeVector],
    n_channels: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(
        BufWriter::new(f),
        "window,t_seconds",
        "slope",
        slopes
            .iter()
            .map(|s| (s.window_index, s.t_seconds, s.slopes.clone())),
        n_channels,
    )
    .map_err(|e| Error::io(path, e))
}

/// Rows of an indexed feature table: `(index, t_seconds, values)`.
pub(crate) type FeatureRows = Vec<(usize, f64, Vec<f64>)>;

/// Reads `<index_col>,t_seconds,<prefix>_1..K`. Returns the rows and K.
pub(crate) fn read_feature_csv(
    path: &Path,
    index_col: &str,
    prefix: &str,
) -> Result<(FeatureRows, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.into(),
            })
    };
    let idx = pos(index_col)?;
    let t = pos("t_seconds")?;
    let want = format!("{prefix}_");
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&want))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::MissingColumn {
            column: format!("{prefix}_*"),
        });
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row: r + 1,
                column: headers[c].to_string(),
                value: raw.to_string(),
            })
        };
        let i = parse(idx)?;
        let vals = cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        rows.push((i as usize, parse(t)?, vals));
    }
    Ok((rows, cols.len()))
}

pub fn load_rms_csv(path: impl AsRef<Path>) -> Result<Vec<RmsFrame>> {
    let (rows, _) = read_feature_csv(path.as_ref(), "frame", "rms")?;
    Ok(rows
        .into_iter()
        .map(|(frame_index, t_seconds, values)| RmsFrame {
            values,
            frame_index,
            t_seconds,
        })
        .collect())
}

pub fn load_slope_csv(path: impl AsRef<Path>) -> Result<Vec<SlopeVector>> {
    let (rows, _) = read_feature_csv(path.as_ref(), "window", "slope")?;
    Ok(rows
        .into_iter()
        .map(|(window_index, t_seconds, slopes)| SlopeVector {
            slopes,
            window_index,
            t_seconds,
        })
        .collect())
}
