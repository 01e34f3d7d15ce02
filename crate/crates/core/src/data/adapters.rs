//! Dataset adapters: generic delimited-text reading plus presets for the
//! published layouts of Opportunity, PAMAP2, MHEALTH, and RealDISP.
//!
//! An adapter describes which file columns feed which sensor stream, where
//! the label column sits, and how raw label codes map into a contiguous
//! class vocabulary. Raw codes absent from the map become the drop sentinel
//! and fall out at windowing time.

use super::preprocess::MinMaxBounds;
use super::window::{CommonChannelMap, COMMON_CHANNELS};
use super::{DatasetSpec, NormalizationMode, SensorRecording, SensorStream, DROP_LABEL};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Whitespace,
    Char(char),
}

/// Column indices (0-based) of one sensor stream in the delimited file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamColumns {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AdapterSpec {
    pub name: String,
    pub delimiter: Delimiter,
    pub streams: Vec<StreamColumns>,
    pub label_column: usize,
    /// Raw label code -> class index. Codes absent here are dropped.
    pub label_map: BTreeMap<i64, usize>,
    pub n_activities: usize,
    pub sample_rate: f64,
    pub default_window: usize,
    pub default_step: usize,
    pub normalization: NormalizationMode,
}

impl AdapterSpec {
    pub fn channel_count(&self) -> usize {
        self.streams.iter().map(|s| s.columns.len()).sum()
    }

    /// Windowing/normalization defaults for this dataset.
    pub fn default_dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            name: self.name.clone(),
            channel_selection: None,
            window_size: self.default_window,
            step: self.default_step,
            normalization: self.normalization,
            target_rate: None,
        }
    }

    /// Parse one delimited text matrix into a recording. Unparseable numeric
    /// tokens and explicit NaN markers become missing values for
    /// interpolation to fill.
    pub fn parse_recording(&self, text: &str, subject_id: usize) -> Result<SensorRecording> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = match self.delimiter {
                Delimiter::Whitespace => line.split_whitespace().collect(),
                Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
            };
            let needed = self
                .streams
                .iter()
                .flat_map(|s| s.columns.iter())
                .copied()
                .max()
                .unwrap_or(0)
                .max(self.label_column);
            if fields.len() <= needed {
                return Err(Error::Dataset(format!(
                    "{}: line {} has {} fields, need at least {}",
                    self.name,
                    line_no + 1,
                    fields.len(),
                    needed + 1
                )));
            }
            let mut row = Vec::with_capacity(self.channel_count());
            for stream in &self.streams {
                for &col in &stream.columns {
                    row.push(fields[col].parse::<f64>().unwrap_or(f64::NAN));
                }
            }
            rows.push(row);
            let raw: i64 = fields[self.label_column]
                .parse::<f64>()
                .map_err(|_| {
                    Error::Dataset(format!(
                        "{}: line {}: unparseable label '{}'",
                        self.name,
                        line_no + 1,
                        fields[self.label_column]
                    ))
                })?
                .round() as i64;
            labels.push(self.label_map.get(&raw).copied().unwrap_or(DROP_LABEL));
        }
        if rows.is_empty() {
            return Err(Error::Dataset(format!("{}: empty recording", self.name)));
        }
        let t = rows.len();
        let mut streams = Vec::new();
        let mut cursor = 0usize;
        for sc in &self.streams {
            let w = sc.columns.len();
            let mut data = ndarray::Array2::<f64>::zeros((w, t));
            for (ti, row) in rows.iter().enumerate() {
                for ci in 0..w {
                    data[[ci, ti]] = row[cursor + ci];
                }
            }
            cursor += w;
            streams.push(SensorStream {
                name: sc.name.clone(),
                data,
            });
        }
        Ok(SensorRecording {
            subject_id,
            streams,
            sample_rate: self.sample_rate,
            labels,
        })
    }

    /// Read one recording per file; a subject may contribute several files
    /// (separate runs stay separate so windows never span file boundaries).
    pub fn load_files(&self, files: &[(usize, PathBuf)]) -> Result<Vec<SensorRecording>> {
        files
            .iter()
            .map(|(subject, path)| {
                let text = std::fs::read_to_string(path)?;
                self.parse_recording(&text, *subject)
            })
            .collect()
    }
}

fn cols(range: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    range.collect()
}

fn opportunity_streams() -> Vec<StreamColumns> {
    vec![
        StreamColumns { name: "body_acc".into(), columns: cols(1..=36) },
        StreamColumns { name: "imu_back".into(), columns: cols(37..=45) },
        StreamColumns { name: "imu_rua".into(), columns: cols(50..=58) },
        StreamColumns { name: "imu_rla".into(), columns: cols(63..=71) },
        StreamColumns { name: "imu_lua".into(), columns: cols(76..=84) },
        StreamColumns { name: "imu_lla".into(), columns: cols(89..=97) },
        StreamColumns { name: "shoes".into(), columns: cols(102..=133) },
    ]
}

/// The 17 mid-level gesture codes of the Opportunity challenge, in the
/// conventional order; the null gesture (code 0) is class 0.
const OPPORTUNITY_GESTURES: [i64; 17] = [
    506616, 506617, 504616, 504617, 506620, 504620, 506605, 504605, 506619,
    504619, 506611, 504611, 506608, 504608, 508612, 507621, 505606,
];

fn opportunity_locomotion() -> AdapterSpec {
    AdapterSpec {
        name: "opportunity_locomotion".into(),
        delimiter: Delimiter::Whitespace,
        streams: opportunity_streams(),
        label_column: 243,
        label_map: BTreeMap::from([(0, 0), (1, 1), (2, 2), (4, 3), (5, 4)]),
        n_activities: 5,
        sample_rate: 30.0,
        default_window: 64,
        default_step: 16,
        normalization: NormalizationMode::MinmaxPerChannel,
    }
}

fn opportunity_gestures() -> AdapterSpec {
    let mut label_map = BTreeMap::from([(0i64, 0usize)]);
    for (i, &code) in OPPORTUNITY_GESTURES.iter().enumerate() {
        label_map.insert(code, i + 1);
    }
    AdapterSpec {
        name: "opportunity_gestures".into(),
        label_column: 249,
        label_map,
        n_activities: 18,
        ..opportunity_locomotion()
    }
}

fn pamap2() -> AdapterSpec {
    // Each IMU block: temperature, acc16g x3, acc6g x3, gyro x3, mag x3,
    // orientation x4; temperature and orientation are excluded.
    let imu = |base: usize| cols(base + 1..=base + 12);
    AdapterSpec {
        name: "pamap2".into(),
        delimiter: Delimiter::Whitespace,
        streams: vec![
            StreamColumns { name: "imu_hand".into(), columns: imu(3) },
            StreamColumns { name: "imu_chest".into(), columns: imu(20) },
            StreamColumns { name: "imu_ankle".into(), columns: imu(37) },
        ],
        label_column: 1,
        label_map: BTreeMap::from([
            (1, 0), (2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (7, 6),
            (12, 7), (13, 8), (16, 9), (17, 10), (24, 11),
        ]),
        n_activities: 12,
        sample_rate: 100.0,
        default_window: 200,
        default_step: 50,
        normalization: NormalizationMode::ZscorePerUser,
    }
}

fn mhealth() -> AdapterSpec {
    AdapterSpec {
        name: "mhealth".into(),
        delimiter: Delimiter::Whitespace,
        streams: vec![
            StreamColumns { name: "chest_acc".into(), columns: cols(0..=2) },
            StreamColumns { name: "ecg".into(), columns: cols(3..=4) },
            StreamColumns { name: "left_ankle".into(), columns: cols(5..=13) },
            StreamColumns { name: "right_arm".into(), columns: cols(14..=22) },
        ],
        label_column: 23,
        label_map: (1..=12).map(|v| (v as i64, v - 1)).collect(),
        n_activities: 12,
        sample_rate: 50.0,
        default_window: 200,
        default_step: 50,
        normalization: NormalizationMode::ZscorePerUser,
    }
}

fn realdisp() -> AdapterSpec {
    // Sensor order: RLA, RUA, BACK, LUA, LLA, RC, RT, LC, LT; 13 columns
    // each (acc x3, gyro x3, mag x3, quaternion x4); quaternions excluded.
    let names = ["rla", "rua", "back", "lua", "lla", "rc", "rt", "lc", "lt"];
    let streams = names
        .iter()
        .enumerate()
        .map(|(i, n)| StreamColumns {
            name: format!("imu_{n}"),
            columns: cols(2 + 13 * i..=2 + 13 * i + 8),
        })
        .collect();
    AdapterSpec {
        name: "realdisp".into(),
        delimiter: Delimiter::Whitespace,
        streams,
        label_column: 119,
        label_map: (1..=33).map(|v| (v as i64, v - 1)).collect(),
        n_activities: 33,
        sample_rate: 50.0,
        default_window: 120,
        default_step: 60,
        normalization: NormalizationMode::ZscorePerUser,
    }
}

/// All built-in adapters, keyed by dataset name.
pub fn registry() -> BTreeMap<String, AdapterSpec> {
    [
        opportunity_locomotion(),
        opportunity_gestures(),
        pamap2(),
        mhealth(),
        realdisp(),
    ]
    .into_iter()
    .map(|a| (a.name.clone(), a))
    .collect()
}

pub fn adapter(name: &str) -> Result<AdapterSpec> {
    registry()
        .remove(name)
        .ok_or_else(|| Error::UnknownAdapter(name.to_string()))
}

/// The canonical 18-channel mapping for each dataset: back/chest acc (3),
/// right-hand acc+gyro+mag (9), left-ankle acc+gyro (6). Stream and channel
/// indices refer to the adapter's stream layout.
pub fn common_channel_map(adapter_name: &str) -> Result<CommonChannelMap> {
    let picks: Vec<(usize, usize)> = match adapter_name {
        // Back IMU acc; RLA IMU; left shoe body-frame acc + angular velocity.
        "opportunity_locomotion" | "opportunity_gestures" => {
            let mut p: Vec<(usize, usize)> = (0..3).map(|c| (1, c)).collect();
            p.extend((0..9).map(|c| (3, c)));
            p.extend((6..12).map(|c| (6, c)));
            p
        }
        // Chest acc16g; hand acc16g+gyro+mag; ankle acc16g+gyro.
        "pamap2" => {
            let mut p: Vec<(usize, usize)> = (0..3).map(|c| (1, c)).collect();
            p.extend((0..3).map(|c| (0, c)));
            p.extend((6..12).map(|c| (0, c)));
            p.extend((0..3).map(|c| (2, c)));
            p.extend((6..9).map(|c| (2, c)));
            p
        }
        "mhealth" => {
            let mut p: Vec<(usize, usize)> = (0..3).map(|c| (0, c)).collect();
            p.extend((0..9).map(|c| (3, c)));
            p.extend((0..6).map(|c| (2, c)));
            p
        }
        // BACK acc; RLA; left calf acc+gyro.
        "realdisp" => {
            let mut p: Vec<(usize, usize)> = (0..3).map(|c| (2, c)).collect();
            p.extend((0..9).map(|c| (0, c)));
            p.extend((0..6).map(|c| (7, c)));
            p
        }
        other => return Err(Error::UnknownAdapter(other.to_string())),
    };
    debug_assert_eq!(picks.len(), COMMON_CHANNELS);
    Ok(CommonChannelMap { picks })
}

/// Shared 4-activity vocabulary (lying, sitting, standing, walking) used for
/// the Opportunity + PAMAP2 + MHEALTH merge. Keys are the dataset's class
/// indices after adapter remapping.
pub fn merged_label_map_4(adapter_name: &str) -> Result<BTreeMap<usize, usize>> {
    let pairs: &[(usize, usize)] = match adapter_name {
        "opportunity_locomotion" => &[(4, 0), (3, 1), (1, 2), (2, 3)],
        "pamap2" => &[(0, 0), (1, 1), (2, 2), (3, 3)],
        "mhealth" => &[(2, 0), (1, 1), (0, 2), (3, 3)],
        other => return Err(Error::UnknownAdapter(other.to_string())),
    };
    Ok(pairs.iter().copied().collect())
}

pub const MERGED_4_ACTIVITIES: [&str; 4] = ["lying", "sitting", "standing", "walking"];

/// Shared 13-activity vocabulary for the four-dataset merge: every class
/// occurs in at least two datasets.
pub const MERGED_13_ACTIVITIES: [&str; 13] = [
    "lying",
    "sitting",
    "standing",
    "walking",
    "running",
    "cycling",
    "jogging",
    "climbing_stairs",
    "knee_bending",
    "jump_front_back",
    "waist_bends_forward",
    "frontal_elevation_of_arms",
    "rope_jumping",
];

pub fn merged_label_map_13(adapter_name: &str) -> Result<BTreeMap<usize, usize>> {
    let pairs: &[(usize, usize)] = match adapter_name {
        "opportunity_locomotion" => &[(4, 0), (3, 1), (1, 2), (2, 3)],
        "pamap2" => &[
            (0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5),
            (7, 7), (11, 12),
        ],
        "mhealth" => &[
            (0, 2), (1, 1), (2, 0), (3, 3), (4, 7), (5, 10),
            (6, 11), (7, 8), (8, 5), (9, 6), (10, 4), (11, 9),
        ],
        "realdisp" => &[
            (0, 3), (1, 6), (2, 4), (4, 9), (7, 12), (10, 10),
            (19, 11), (27, 8), (32, 5),
        ],
        other => return Err(Error::UnknownAdapter(other.to_string())),
    };
    Ok(pairs.iter().copied().collect())
}

/// Per-channel clipping bounds for Opportunity min/max normalization,
/// shipped as a data file and overridable via config.
pub fn opportunity_minmax_bounds() -> MinMaxBounds {
    let raw: BTreeMap<String, Vec<(f64, f64)>> =
        serde_json::from_str(include_str!("../../data/opportunity_bounds.json"))
            .expect("embedded bounds file is well-formed");
    let mut out = MinMaxBounds::new();
    for (stream, bounds) in raw {
        for (ch, b) in bounds.into_iter().enumerate() {
            out.insert((stream.clone(), ch), b);
        }
    }
    out
}
