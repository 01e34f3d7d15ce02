//! Sliding-window extraction and cross-dataset harmonization.

use super::preprocess::{normalize, remap_labels, resample, select_channels};
use super::{
    DatasetSpec, Label, NormalizationMode, SensorRecording, SensorStream, WindowedDataset,
    DROP_LABEL,
};
use crate::error::{Error, Result};
use ndarray::Array3;
use std::collections::BTreeMap;

/// Majority label of a window; ties resolve to the label of the last
/// timestep inside the window.
fn window_label(labels: &[Label]) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let tied: Vec<Label> = counts
        .iter()
        .filter_map(|(&l, &c)| (c == max).then_some(l))
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    *labels.last().expect("window is nonempty")
}

fn grouping_of(rec: &SensorRecording) -> Vec<(String, std::ops::Range<usize>)> {
    let mut grouping = Vec::new();
    let mut offset = 0usize;
    for s in &rec.streams {
        grouping.push((s.name.clone(), offset..offset + s.data.nrows()));
        offset += s.data.nrows();
    }
    grouping
}

/// Cut a recording into windows at offsets `0, step, 2*step, ...` that lie
/// fully inside the recording. Returns the dataset plus a flag set when the
/// recording was shorter than one window (empty output).
///
/// Windows whose majority label is the drop sentinel are discarded.
pub fn slide_windows(rec: &SensorRecording, spec: &DatasetSpec) -> Result<(WindowedDataset, bool)> {
    spec.validate()?;
    let rec_sel;
    let rec = match &spec.channel_selection {
        Some(sel) => {
            rec_sel = select_channels(rec, sel)?;
            &rec_sel
        }
        None => rec,
    };
    let n_c = rec.channel_count();
    let w = spec.window_size;
    let len = rec.time_len();
    let grouping = grouping_of(rec);

    let n_windows = if len >= w { (len - w) / spec.step + 1 } else { 0 };
    let mut keep: Vec<(usize, Label)> = Vec::with_capacity(n_windows);
    for i in 0..n_windows {
        let start = i * spec.step;
        let label = window_label(&rec.labels[start..start + w]);
        if label != DROP_LABEL {
            keep.push((start, label));
        }
    }

    let mut windows = Array3::<f64>::zeros((keep.len(), n_c, w));
    for (row, &(start, _)) in keep.iter().enumerate() {
        let mut ch = 0usize;
        for stream in &rec.streams {
            for r in 0..stream.data.nrows() {
                for t in 0..w {
                    windows[[row, ch, t]] = stream.data[[r, start + t]];
                }
                ch += 1;
            }
        }
    }
    let n_activities = keep
        .iter()
        .map(|&(_, l)| l + 1)
        .max()
        .unwrap_or(1);
    let ds = WindowedDataset {
        windows,
        activity_labels: keep.iter().map(|&(_, l)| l).collect(),
        subject_labels: vec![rec.subject_id; keep.len()],
        sensor_grouping: grouping,
        n_activities,
        subject_origin: None,
    };
    Ok((ds, n_windows == 0))
}

/// Window every recording with a shared spec and merge, remapping subject
/// ids to contiguous `0..K` in first-appearance order of `(origin, id)`.
pub fn window_recordings(
    recs: &[SensorRecording],
    spec: &DatasetSpec,
    n_activities: usize,
    origins: Option<&[String]>,
) -> Result<WindowedDataset> {
    if recs.is_empty() {
        return Err(Error::Dataset("no recordings to window".into()));
    }
    let mut subject_map: BTreeMap<(String, usize), usize> = BTreeMap::new();
    let mut origin_list: Vec<(String, usize)> = Vec::new();
    let mut parts: Vec<WindowedDataset> = Vec::new();
    for (i, rec) in recs.iter().enumerate() {
        let origin = origins.map_or_else(|| spec.name.clone(), |o| o[i].clone());
        let key = (origin.clone(), rec.subject_id);
        let next_id = subject_map.len();
        let sid = *subject_map.entry(key.clone()).or_insert_with(|| {
            origin_list.push(key);
            next_id
        });
        let (mut part, _) = slide_windows(rec, spec)?;
        for s in part.subject_labels.iter_mut() {
            *s = sid;
        }
        parts.push(part);
    }
    let grouping = parts[0].sensor_grouping.clone();
    let n_c = parts[0].n_channels();
    let w = spec.window_size;
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut windows = Array3::<f64>::zeros((total, n_c, w));
    let mut activity_labels = Vec::with_capacity(total);
    let mut subject_labels = Vec::with_capacity(total);
    let mut row = 0usize;
    for part in &parts {
        if part.sensor_grouping != grouping {
            return Err(Error::Dataset("recordings disagree on sensor grouping".into()));
        }
        for i in 0..part.len() {
            windows
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&part.windows.index_axis(ndarray::Axis(0), i));
            row += 1;
        }
        activity_labels.extend_from_slice(&part.activity_labels);
        subject_labels.extend_from_slice(&part.subject_labels);
    }
    let ds = WindowedDataset {
        windows,
        activity_labels,
        subject_labels,
        sensor_grouping: grouping,
        n_activities,
        subject_origin: Some(origin_list),
    };
    ds.validate()?;
    Ok(ds)
}

/// Maps one dataset's streams onto the canonical 18-channel layout:
/// back/chest accelerometer (3), right-hand accelerometer + gyroscope +
/// magnetometer (9), left-ankle accelerometer + gyroscope (6).
#[derive(Debug, Clone, PartialEq)]
pub struct CommonChannelMap {
    /// 18 picks `(stream index, channel index)` in canonical order.
    pub picks: Vec<(usize, usize)>,
}

pub const COMMON_CHANNELS: usize = 18;
pub const COMMON_GROUPS: [(&str, usize); 3] =
    [("back_chest_acc", 3), ("right_hand_imu", 9), ("left_ankle_imu", 6)];

/// One dataset's contribution to a cross-dataset merge.
#[derive(Debug, Clone)]
pub struct HarmonizeInput {
    pub dataset_name: String,
    pub recordings: Vec<SensorRecording>,
    pub channel_map: CommonChannelMap,
    /// Dataset class index -> merged vocabulary index. Unmapped classes are
    /// dropped.
    pub label_map: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizeOptions {
    pub target_rate: f64,
    pub window_size: usize,
    pub step: usize,
    pub n_activities: usize,
}

impl HarmonizeOptions {
    /// Sliding window of 100 samples at 50 Hz with step 16.
    pub fn new(n_activities: usize) -> Self {
        HarmonizeOptions {
            target_rate: 50.0,
            window_size: 100,
            step: 16,
            n_activities,
        }
    }
}

/// Merge several datasets into one windowed dataset over the canonical
/// 18-channel layout: resample to the target rate, reduce to the common
/// channels, z-score per subject, remap activity labels into the shared
/// vocabulary, window, and make subject ids globally unique.
pub fn harmonize_cross_dataset(
    inputs: &[HarmonizeInput],
    opts: &HarmonizeOptions,
) -> Result<WindowedDataset> {
    if inputs.is_empty() {
        return Err(Error::Dataset("harmonize: no datasets supplied".into()));
    }
    let mut recs: Vec<SensorRecording> = Vec::new();
    let mut origins: Vec<String> = Vec::new();
    for input in inputs {
        if input.channel_map.picks.len() != COMMON_CHANNELS {
            return Err(Error::MissingCommonChannel {
                channel: format!("expected {COMMON_CHANNELS} picks, got {}", input.channel_map.picks.len()),
                dataset: input.dataset_name.clone(),
            });
        }
        for rec in &input.recordings {
            for &(si, ci) in &input.channel_map.picks {
                let ok = rec
                    .streams
                    .get(si)
                    .map_or(false, |s| ci < s.data.nrows());
                if !ok {
                    return Err(Error::MissingCommonChannel {
                        channel: format!("stream {si} channel {ci}"),
                        dataset: input.dataset_name.clone(),
                    });
                }
            }
            let mut common = pick_common(rec, &input.channel_map);
            remap_labels(&mut common, &input.label_map);
            let resampled = resample(&common, opts.target_rate)?;
            recs.push(resampled);
            origins.push(input.dataset_name.clone());
        }
    }
    normalize(&mut recs, NormalizationMode::ZscorePerUser, None);
    let spec = DatasetSpec {
        name: "harmonized".into(),
        channel_selection: None,
        window_size: opts.window_size,
        step: opts.step,
        normalization: NormalizationMode::ZscorePerUser,
        target_rate: Some(opts.target_rate),
    };
    window_recordings(&recs, &spec, opts.n_activities, Some(&origins))
}

fn pick_common(rec: &SensorRecording, map: &CommonChannelMap) -> SensorRecording {
    let t = rec.time_len();
    let mut streams = Vec::new();
    let mut cursor = 0usize;
    for (name, size) in COMMON_GROUPS {
        let mut data = ndarray::Array2::<f64>::zeros((size, t));
        for row in 0..size {
            let (si, ci) = map.picks[cursor];
            data.row_mut(row).assign(&rec.streams[si].data.row(ci));
            cursor += 1;
        }
        streams.push(SensorStream {
            name: name.to_string(),
            data,
        });
    }
    SensorRecording {
        subject_id: rec.subject_id,
        streams,
        sample_rate: rec.sample_rate,
        labels: rec.labels.clone(),
    }
}
