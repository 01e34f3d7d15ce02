//! Recording-level preprocessing: missing-value interpolation, channel
//! normalization, and resampling.

use super::{NormalizationMode, SensorRecording, DROP_LABEL};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Non-fatal normalization events, one record per affected channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormWarning {
    pub subject_id: usize,
    pub stream: String,
    pub channel: usize,
    pub message: String,
}

/// Fill missing entries (NaN) per channel: interior gaps by linear
/// interpolation over time, leading/trailing gaps by nearest valid value.
/// A channel with no valid sample at all is an error.
pub fn interpolate_missing(mut rec: SensorRecording) -> Result<SensorRecording> {
    for stream in &mut rec.streams {
        let name = stream.name.clone();
        for (ch, mut row) in stream.data.rows_mut().into_iter().enumerate() {
            let n = row.len();
            let valid: Vec<usize> = (0..n).filter(|&i| row[i].is_finite()).collect();
            if valid.is_empty() {
                return Err(Error::EmptyChannel(format!("{name}[{ch}]")));
            }
            if valid.len() == n {
                continue;
            }
            // Edge extension.
            let (first, last) = (valid[0], *valid.last().unwrap());
            for i in 0..first {
                row[i] = row[first];
            }
            for i in (last + 1)..n {
                row[i] = row[last];
            }
            // Interior gaps between consecutive valid anchors.
            for pair in valid.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if b > a + 1 {
                    let (va, vb) = (row[a], row[b]);
                    let span = (b - a) as f64;
                    for i in (a + 1)..b {
                        let t = (i - a) as f64 / span;
                        row[i] = va + t * (vb - va);
                    }
                }
            }
        }
    }
    Ok(rec)
}

/// Optional fixed min/max bounds keyed by `(stream name, channel)`.
pub type MinMaxBounds = std::collections::BTreeMap<(String, usize), (f64, f64)>;

/// Normalize a set of recordings in place according to `mode`:
///
/// - `MinmaxPerChannel`: clip to per-channel bounds (provided, else computed
///   over all recordings) and rescale to `[0, 1]`.
/// - `ZscorePerUser`: zero mean, unit variance per channel within each
///   recording (population statistics).
/// - `ZscoreGlobal`: zero mean, unit variance per channel over all
///   recordings together.
///
/// Channels with zero variance (or a degenerate min/max range) are set to 0
/// and reported as warnings rather than failing the run.
pub fn normalize(
    recs: &mut [SensorRecording],
    mode: NormalizationMode,
    bounds: Option<&MinMaxBounds>,
) -> Vec<NormWarning> {
    let mut warnings = Vec::new();
    match mode {
        NormalizationMode::MinmaxPerChannel => {
            let layout = channel_layout(recs);
            for (stream_idx, ch, key) in layout {
                let (lo, hi) = match bounds.and_then(|b| b.get(&key)) {
                    Some(&b) => b,
                    None => global_min_max(recs, stream_idx, ch),
                };
                if !(hi > lo) {
                    zero_channel(recs, stream_idx, ch);
                    warnings.extend(degenerate_warnings(recs, stream_idx, ch, "degenerate min/max range"));
                    continue;
                }
                let span = hi - lo;
                for rec in recs.iter_mut() {
                    for v in rec.streams[stream_idx].data.row_mut(ch).iter_mut() {
                        *v = ((*v).clamp(lo, hi) - lo) / span;
                    }
                }
            }
        }
        NormalizationMode::ZscorePerUser => {
            for rec in recs.iter_mut() {
                let subject = rec.subject_id;
                for stream in &mut rec.streams {
                    let name = stream.name.clone();
                    for (ch, mut row) in stream.data.rows_mut().into_iter().enumerate() {
                        let n = row.len() as f64;
                        let mean = row.sum() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        if var <= 0.0 {
                            row.fill(0.0);
                            warnings.push(NormWarning {
                                subject_id: subject,
                                stream: name.clone(),
                                channel: ch,
                                message: "zero variance; channel set to 0".into(),
                            });
                        } else {
                            let std = var.sqrt();
                            row.mapv_inplace(|v| (v - mean) / std);
                        }
                    }
                }
            }
        }
        NormalizationMode::ZscoreGlobal => {
            let layout = channel_layout(recs);
            for (stream_idx, ch, _key) in layout {
                let (mut sum, mut count) = (0.0, 0usize);
                for rec in recs.iter() {
                    let row = rec.streams[stream_idx].data.row(ch);
                    sum += row.sum();
                    count += row.len();
                }
                let mean = sum / count as f64;
                let mut ssq = 0.0;
                for rec in recs.iter() {
                    ssq += rec.streams[stream_idx]
                        .data
                        .row(ch)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ssq / count as f64;
                if var <= 0.0 {
                    zero_channel(recs, stream_idx, ch);
                    warnings.extend(degenerate_warnings(recs, stream_idx, ch, "zero variance; channel set to 0"));
                } else {
                    let std = var.sqrt();
                    for rec in recs.iter_mut() {
                        rec.streams[stream_idx]
                            .data
                            .row_mut(ch)
                            .mapv_inplace(|v| (v - mean) / std);
                    }
                }
            }
        }
    }
    warnings
}

fn channel_layout(recs: &[SensorRecording]) -> Vec<(usize, usize, (String, usize))> {
    let Some(first) = recs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (si, stream) in first.streams.iter().enumerate() {
        for ch in 0..stream.data.nrows() {
            out.push((si, ch, (stream.name.clone(), ch)));
        }
    }
    out
}

fn global_min_max(recs: &[SensorRecording], stream_idx: usize, ch: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for rec in recs {
        for &v in rec.streams[stream_idx].data.row(ch).iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn zero_channel(recs: &mut [SensorRecording], stream_idx: usize, ch: usize) {
    for rec in recs.iter_mut() {
        rec.streams[stream_idx].data.row_mut(ch).fill(0.0);
    }
}

fn degenerate_warnings(
    recs: &[SensorRecording],
    stream_idx: usize,
    ch: usize,
    message: &str,
) -> Vec<NormWarning> {
    recs.iter()
        .map(|rec| NormWarning {
            subject_id: rec.subject_id,
            stream: rec.streams[stream_idx].name.clone(),
            channel: ch,
            message: message.into(),
        })
        .collect()
}

/// Resample to `target_hz`: values by linear interpolation on the new time
/// grid, labels by nearest neighbor. Output length is
/// `round(len * target_hz / sample_rate)`.
pub fn resample(rec: &SensorRecording, target_hz: f64) -> Result<SensorRecording> {
    if target_hz <= 0.0 {
        return Err(Error::InvalidConfig("target_hz must be positive".into()));
    }
    if (target_hz - rec.sample_rate).abs() < f64::EPSILON * rec.sample_rate.max(1.0) {
        return Ok(rec.clone());
    }
    let len = rec.time_len();
    let out_len = ((len as f64) * target_hz / rec.sample_rate).round() as usize;
    let ratio = rec.sample_rate / target_hz;
    let mut streams = Vec::with_capacity(rec.streams.len());
    for stream in &rec.streams {
        let mut data = ndarray::Array2::<f64>::zeros((stream.data.nrows(), out_len));
        for (src_row, mut dst_row) in stream.data.rows().into_iter().zip(data.rows_mut()) {
            for i in 0..out_len {
                let pos = (i as f64 * ratio).min((len - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                let frac = pos - i0 as f64;
                dst_row[i] = src_row[i0] * (1.0 - frac) + src_row[i1] * frac;
            }
        }
        streams.push(super::SensorStream {
            name: stream.name.clone(),
            data,
        });
    }
    let labels = (0..out_len)
        .map(|i| {
            let pos = (i as f64 * ratio).min((len - 1) as f64);
            let nearest = pos.round() as usize;
            rec.labels[nearest.min(len - 1)]
        })
        .collect();
    Ok(SensorRecording {
        subject_id: rec.subject_id,
        streams,
        sample_rate: target_hz,
        labels,
    })
}

/// Select channels per stream, producing a recording with reduced streams.
pub fn select_channels(rec: &SensorRecording, selection: &[Vec<usize>]) -> Result<SensorRecording> {
    if selection.len() != rec.streams.len() {
        return Err(Error::shape(
            "channel selection",
            format!("{} streams", rec.streams.len()),
            format!("{}", selection.len()),
        ));
    }
    let mut streams = Vec::new();
    for (stream, picks) in rec.streams.iter().zip(selection) {
        if picks.is_empty() {
            continue;
        }
        let mut data = ndarray::Array2::zeros((picks.len(), stream.data.ncols()));
        for (row, &ch) in picks.iter().enumerate() {
            if ch >= stream.data.nrows() {
                return Err(Error::InvalidConfig(format!(
                    "channel {ch} out of range for stream '{}'",
                    stream.name
                )));
            }
            data.row_mut(row).assign(&stream.data.row(ch));
        }
        streams.push(super::SensorStream {
            name: stream.name.clone(),
            data,
        });
    }
    Ok(SensorRecording {
        subject_id: rec.subject_id,
        streams,
        sample_rate: rec.sample_rate,
        labels: rec.labels.clone(),
    })
}

/// Drop-sentinel-aware label remapping helper.
pub fn remap_labels(rec: &mut SensorRecording, map: &std::collections::BTreeMap<usize, usize>) {
    for l in rec.labels.iter_mut() {
        *l = if *l == DROP_LABEL {
            DROP_LABEL
        } else {
            map.get(l).copied().unwrap_or(DROP_LABEL)
        };
    }
}
