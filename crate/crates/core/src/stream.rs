//! Raw multi-channel signal streams, CSV ingestion, and the shared timeline.
//!
//! A raw CSV carries one sample per row: `t,emg_1,...,emg_K,subject,period,grasp`.
//! Each (subject, period) pair is one recording domain; domains are concatenated
//! into a single stream whose junctions form the ground truth for evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multi-channel sample with its domain labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub channels: Vec<f64>,
    pub subject: u32,
    pub period: u32,
    pub grasp: i32,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalStream {
    samples: Vec<Sample>,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
}

impl SignalStream {
    /// Builds a stream, checking channel counts and the sample rate.
    /// Sample indices are renumbered from zero.
    pub fn new(
        mut samples: Vec<Sample>,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::param(
                "sample_rate_hz",
                "must be positive and finite",
            ));
        }
        if channel_names.is_empty() {
            return Err(Error::Schema("a stream needs at least one channel".into()));
        }
        for (i, s) in samples.iter_mut().enumerate() {
            if s.channels.len() != channel_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: channel_names.len(),
                    got: s.channels.len(),
                });
            }
            s.index = i;
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel_names,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// (subject, period) of the first sample, used to order domains.
    pub fn domain_key(&self) -> Option<(u32, u32)> {
        self.samples.first().map(|s| (s.subject, s.period))
    }

    /// Distinct grasp labels in ascending order.
    pub fn grasps(&self) -> Vec<i32> {
        let mut g: Vec<i32> = self.samples.iter().map(|s| s.grasp).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Channel values as row vectors.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.channels.as_slice())
    }
}

/// Window/stride settings for both feature levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimelineParams {
    pub rms_window_ms: f64,
    pub rms_stride_ms: f64,
    pub slope_window_frames: usize,
    pub slope_stride_frames: usize,
}

impl Default for TimelineParams {
    fn default() -> Self {
        Self {
            rms_window_ms: 200.0,
            rms_stride_ms: 20.0,
            slope_window_frames: 1500,
            slope_stride_frames: 500,
        }
    }
}

/// Converts indices at sample, RMS-frame and slope-window granularity into
/// seconds. Frame and window times are window-end times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timeline {
    sample_rate_hz: f64,
    params: TimelineParams,
    window_samples: usize,
    stride_samples: usize,
}

impl Timeline {
    pub fn new(sample_rate_hz: f64, params: TimelineParams) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::param(
                "sample_rate_hz",
                "must be positive and finite",
            ));
        }
        for (name, v) in [
            ("rms_window_ms", params.rms_window_ms),
            ("rms_stride_ms", params.rms_stride_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if params.slope_window_frames == 0 {
            return Err(Error::param("slope_window_frames", "must be positive"));
        }
        if params.slope_stride_frames == 0 {
            return Err(Error::param("slope_stride_frames", "must be positive"));
        }
        if params.rms_stride_ms > params.rms_window_ms {
            return Err(Error::param(
                "rms_stride_ms",
                "must not exceed rms_window_ms",
            ));
        }
        if params.slope_stride_frames > params.slope_window_frames {
            return Err(Error::param(
                "slope_stride_frames",
                "must not exceed slope_window_frames",
            ));
        }
        let window_samples = ms_to_samples(params.rms_window_ms, sample_rate_hz);
        let stride_samples = ms_to_samples(params.rms_stride_ms, sample_rate_hz);
        if window_samples == 0 {
            return Err(Error::param("rms_window_ms", "shorter than one sample"));
        }
        if stride_samples == 0 {
            return Err(Error::param("rms_stride_ms", "shorter than one sample"));
        }
        Ok(Self {
            sample_rate_hz,
            params,
            window_samples,
            stride_samples,
        })
    }

    pub fn with_defaults(sample_rate_hz: f64) -> Result<Self> {
        Self::new(sample_rate_hz, TimelineParams::default())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn params(&self) -> &TimelineParams {
        &self.params
    }

    pub fn rms_window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn rms_stride_samples(&self) -> usize {
        self.stride_samples
    }

    pub fn slope_window_frames(&self) -> usize {
        self.params.slope_window_frames
    }

    pub fn slope_stride_frames(&self) -> usize {
        self.params.slope_stride_frames
    }

    pub fn sample_time(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate_hz
    }

    /// End time of RMS frame `frame`.
    pub fn frame_time(&self, frame: usize) -> f64 {
        (frame * self.stride_samples + self.window_samples) as f64 / self.sample_rate_hz
    }

    /// Time of the last RMS frame inside slope window `window`.
    pub fn slope_time(&self, window: usize) -> f64 {
        self.frame_time(
            window * self.params.slope_stride_frames + self.params.slope_window_frames - 1,
        )
    }
}

fn ms_to_samples(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round() as usize
}

/// Sorted change times in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    boundaries: Vec<f64>,
}

impl GroundTruth {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Schema(
                "ground-truth times must be finite and >= 0".into(),
            ));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schema(
                "ground-truth times must be strictly increasing".into(),
            ));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }
}

/// Reads a raw signal CSV. Channel columns are the `emg_*` columns in header order.
pub fn load_signal_csv(path: impl AsRef<Path>, sample_rate_hz: f64) -> Result<SignalStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_signal_csv(file, sample_rate_hz)
}

pub fn read_signal_csv<R: std::io::Read>(reader: R, sample_rate_hz: f64) -> Result<SignalStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let emg_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("emg_"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if emg_cols.is_empty() {
        return Err(Error::MissingColumn {
            column: "emg_*".into(),
        });
    }
    let subject_col = find("subject")?;
    let period_col = find("period")?;
    let grasp_col = find("grasp")?;

    let mut samples = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row number, header excluded
        let row = row_idx + 1;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let num = |col: usize| -> Result<f64> {
            let raw = cell(col);
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: headers[col].to_string(),
                value: raw.to_string(),
            })
        };
        let int = |col: usize| -> Result<i64> {
            let raw = cell(col);
            raw.parse::<i64>()
                .or_else(|_| {
                    raw.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && v.is_finite())
                        .map(|v| v as i64)
                        .ok_or(())
                })
                .map_err(|_| Error::Parse {
                    row,
                    column: headers[col].to_string(),
                    value: raw.to_string(),
                })
        };
        let channels = emg_cols
            .iter()
            .map(|(c, _)| num(*c))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            channels,
            subject: int(subject_col)? as u32,
            period: int(period_col)? as u32,
            grasp: int(grasp_col)? as i32,
            index: row_idx,
        });
    }
    SignalStream::new(
        samples,
        sample_rate_hz,
        emg_cols.into_iter().map(|(_, n)| n).collect(),
    )
}

/// Writes a stream in the raw CSV schema. Values use the shortest decimal
/// form that parses back to the same `f64`.
pub fn write_signal_csv(stream: &SignalStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_signal(stream, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_signal<W: Write>(stream: &SignalStream, mut out: W) -> std::io::Result<()> {
    write!(out, "t")?;
    for name in stream.channel_names() {
        write!(out, ",{name}")?;
    }
    writeln!(out, ",subject,period,grasp")?;
    for (i, s) in stream.samples().iter().enumerate() {
        write!(out, "{:.6}", i as f64 / stream.sample_rate_hz())?;
        for v in &s.channels {
            write!(out, ",{v:?}")?;
        }
        writeln!(out, ",{},{},{}", s.subject, s.period, s.grasp)?;
    }
    out.flush()
}

pub fn write_ground_truth_csv(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(out, "t_seconds")?;
        for b in truth.boundaries() {
            writeln!(out, "{b:?}")?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn load_ground_truth_csv(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "t_seconds")
        .ok_or_else(|| Error::MissingColumn {
            column: "t_seconds".into(),
        })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(col).unwrap_or("");
        out.push(raw.parse::<f64>().map_err(|_| Error::Parse {
            row: i + 1,
            column: "t_seconds".into(),
            value: raw.into(),
        })?);
    }
    GroundTruth::new(out)
}

/// Removes channels that are exactly zero everywhere. Returns the cleaned
/// stream and the dropped channels as 1-based indices into the input.
pub fn drop_zero_channels(stream: &SignalStream) -> Result<(SignalStream, Vec<usize>)> {
    if stream.is_empty() {
        return Err(Error::InsufficientData {
            what: "drop_zero_channels",
            needed: 1,
            got: 0,
        });
    }
    let k = stream.n_channels();
    let keep: Vec<bool> = (0..k)
        .map(|c| stream.samples().iter().any(|s| s.channels[c] != 0.0))
        .collect();
    if !keep.iter().any(|&b| b) {
        return Err(Error::Degenerate(
            "every channel is identically zero".into(),
        ));
    }
    let dropped: Vec<usize> = (0..k).filter(|&c| !keep[c]).map(|c| c + 1).collect();
    if dropped.is_empty() {
        return Ok((stream.clone(), dropped));
    }
    let names = stream
        .channel_names()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(n, _)| n.clone())
        .collect();
    let samples = stream
        .samples()
        .iter()
        .map(|s| Sample {
            channels: s
                .channels
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .collect(),
            ..s.clone()
        })
        .collect();
    Ok((
        SignalStream::new(samples, stream.sample_rate_hz(), names)?,
        dropped,
    ))
}

/// Splits a stream into one stream per (subject, period), in ascending
/// domain order. Sample order within a domain is preserved.
pub fn split_domains(stream: &SignalStream) -> Vec<SignalStream> {
    let mut groups: std::collections::BTreeMap<(u32, u32), Vec<Sample>> = Default::default();
    for s in stream.samples() {
        groups
            .entry((s.subject, s.period))
            .or_default()
            .push(s.clone());
    }
    groups
        .into_values()
        .map(|samples| {
            SignalStream::new(
                samples,
                stream.sample_rate_hz(),
                stream.channel_names().to_vec(),
            )
            .expect("splitting preserves stream invariants")
        })
        .collect()
}

/// Orders domain streams by ascending (subject, period). Empty streams sort last.
pub fn sort_domains(streams: &mut [SignalStream]) {
    streams.sort_by_key(|s| s.domain_key().unwrap_or((u32::MAX, u32::MAX)));
}

/// Concatenates domains in the given order. Each junction becomes a
/// ground-truth boundary at (cumulative sample count) / fs.
pub fn concat_domains(streams: &[SignalStream]) -> Result<(SignalStream, GroundTruth)> {
    let first = streams.first().ok_or(Error::InsufficientData {
        what: "concat_domains",
        needed: 1,
        got: 0,
    })?;
    let fs = first.sample_rate_hz();
    let k = first.n_channels();
    let mut samples = Vec::with_capacity(streams.iter().map(|s| s.len()).sum());
    let mut boundaries = Vec::with_capacity(streams.len().saturating_sub(1));
    for (i, s) in streams.iter().enumerate() {
        if s.n_channels() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: s.n_channels(),
            });
        }
        if s.sample_rate_hz() != fs {
            return Err(Error::Schema(format!(
                "sample rate mismatch: {} vs {}",
                fs,
                s.sample_rate_hz()
            )));
        }
        if i > 0 {
            boundaries.push(samples.len() as f64 / fs);
        }
        samples.extend(s.samples().iter().cloned());
    }
    // A junction after an empty domain would repeat the previous boundary.
    boundaries.dedup();
    let stream = SignalStream::new(samples, fs, first.channel_names().to_vec())?;
    Ok((stream, GroundTruth::new(boundaries)?))
}

/// Keeps only samples carrying `grasp`. An absent label yields an empty
/// stream and a warning.
pub fn filter_grasp(stream: &SignalStream, grasp: i32) -> SignalStream {
    let samples: Vec<Sample> = stream
        .samples()
        .iter()
        .filter(|s| s.grasp == grasp)
        .cloned()
        .collect();
    if samples.is_empty() {
        log::warn!("grasp {grasp} does not occur in the stream");
    }
    SignalStream::new(
        samples,
        stream.sample_rate_hz(),
        stream.channel_names().to_vec(),
    )
    .expect("filtering preserves stream invariants")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rows: &[[f64; 4]], grasps: &[i32]) -> SignalStream {
        let samples = rows
            .iter()
            .zip(grasps)
            .map(|(r, &g)| Sample {
                channels: r.to_vec(),
                subject: 1,
                period: 1,
                grasp: g,
                index: 0,
            })
            .collect();
        SignalStream::new(
            samples,
            100.0,
            (1..=4).map(|i| format!("emg_{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "t,emg_1,emg_2,subject,period,grasp\n\
                   0.000000,1.5,-2e-3,1,1,0\n\
                   0.010000,2.5,3,1,1,1\n\
                   0.020000,3.5,4,1,1,1\n";
        let s = read_signal_csv(csv.as_bytes(), 100.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.n_channels(), 2);
        assert_eq!(s.samples()[0].channels, vec![1.5, -2e-3]);
        assert_eq!(s.samples()[2].index, 2);
        assert_eq!(s.grasps(), vec![0, 1]);
    }

    #[test]
    fn empty_body_keeps_channels() {
        let s = read_signal_csv("t,emg_1,emg_2,subject,period,grasp\n".as_bytes(), 100.0).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.n_channels(), 2);
    }

    #[test]
    fn missing_grasp_column_is_named() {
        let err =
            read_signal_csv("t,emg_1,subject,period\n0,1,1,1\n".as_bytes(), 100.0).unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "grasp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_row() {
        let csv = "t,emg_1,subject,period,grasp\n0,1,1,1,1\n0.01,abc,1,1,1\n";
        match read_signal_csv(csv.as_bytes(), 100.0).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "emg_1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drops_zero_channel() {
        let s = toy(&[[1.0, 0.0, 2.0, 3.0], [4.0, 0.0, 5.0, 6.0]], &[1, 1]);
        let (out, dropped) = drop_zero_channels(&s).unwrap();
        assert_eq!(dropped, vec![2]);
        assert_eq!(out.n_channels(), 3);
        assert_eq!(out.channel_names(), &["emg_1", "emg_3", "emg_4"]);
        assert_eq!(out.samples()[1].channels, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn no_zero_channels_is_identity() {
        let s = toy(&[[1.0, 2.0, 3.0, 4.0]], &[1]);
        let (out, dropped) = drop_zero_channels(&s).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(out, s);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let s = toy(&[[0.0; 4], [0.0; 4]], &[1, 1]);
        assert!(matches!(drop_zero_channels(&s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn db6_shaped_channels_nine_and_ten() {
        let samples = (0..50)
            .map(|i| Sample {
                channels: (1..=16)
                    .map(|c| {
                        if c == 9 || c == 10 {
                            0.0
                        } else {
                            (i * c) as f64 * 1e-3 + 1e-4
                        }
                    })
                    .collect(),
                subject: 1,
                period: 1,
                grasp: 1,
                index: 0,
            })
            .collect();
        let s = SignalStream::new(
            samples,
            2000.0,
            (1..=16).map(|i| format!("emg_{i}")).collect(),
        )
        .unwrap();
        let (out, dropped) = drop_zero_channels(&s).unwrap();
        assert_eq!(dropped, vec![9, 10]);
        assert_eq!(out.n_channels(), 14);
    }

    #[test]
    fn concat_boundaries() {
        let a = toy(&vec![[1.0; 4]; 100], &vec![1; 100]);
        let b = toy(&vec![[2.0; 4]; 50], &[1; 50]);
        let (s, gt) = concat_domains(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.len(), 150);
        assert_eq!(gt.boundaries(), &[1.0]);
        assert_eq!(s.samples()[149].index, 149);

        let (_, gt3) = concat_domains(&[a.clone(), b.clone(), a.clone()]).unwrap();
        assert_eq!(gt3.len(), 2);

        let (_, gt1) = concat_domains(&[a]).unwrap();
        assert!(gt1.is_empty());
    }

    #[test]
    fn concat_rejects_bad_input() {
        assert!(concat_domains(&[]).is_err());
        let a = toy(&[[1.0; 4]], &[1]);
        let b = SignalStream::new(
            vec![Sample {
                channels: vec![1.0],
                subject: 1,
                period: 2,
                grasp: 1,
                index: 0,
            }],
            100.0,
            vec!["emg_1".into()],
        )
        .unwrap();
        assert!(matches!(
            concat_domains(&[a, b]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grasp_filter() {
        let s = toy(&[[1.0; 4], [2.0; 4], [3.0; 4]], &[1, 3, 1]);
        let g1 = filter_grasp(&s, 1);
        assert_eq!(g1.len(), 2);
        assert_eq!(g1.samples()[1].channels[0], 3.0);
        assert!(filter_grasp(&s, 2).is_empty());
        let rest = toy(&[[1.0; 4], [2.0; 4]], &[0, 1]);
        assert_eq!(filter_grasp(&rest, 0).len(), 1);
    }

    #[test]
    fn timeline_times() {
        let tl = Timeline::with_defaults(2000.0).unwrap();
        assert_eq!(tl.rms_window_samples(), 400);
        assert_eq!(tl.rms_stride_samples(), 40);
        assert!((tl.frame_time(0) - 0.2).abs() < 1e-12);
        assert!((tl.frame_time(1) - 0.22).abs() < 1e-12);
        // last frame of window 0 is frame 1499
        assert!((tl.slope_time(0) - tl.frame_time(1499)).abs() < 1e-12);
        assert!((tl.slope_time(1) - tl.slope_time(0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn timeline_rejects_stride_above_window() {
        let p = TimelineParams {
            rms_stride_ms: 300.0,
            ..Default::default()
        };
        assert!(Timeline::new(1000.0, p).is_err());
        assert!(Timeline::new(0.0, TimelineParams::default()).is_err());
    }

    #[test]
    fn ground_truth_must_increase() {
        assert!(GroundTruth::new(vec![1.0, 1.0]).is_err());
        assert!(GroundTruth::new(vec![-1.0]).is_err());
        assert!(GroundTruth::new(vec![0.0, 2.5]).is_ok());
    }
}
