//! Columnar binary container used for datasets and checkpoints.
//!
//! Layout: 8-byte magic `TKARCH01`, a little-endian u64 manifest length, the
//! JSON manifest, then the raw little-endian payload. The manifest lists each
//! entry's name, dtype, shape, and byte span plus a free-form `meta` value.

use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TKARCH01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryDesc {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    entries: Vec<EntryDesc>,
    meta: serde_json::Value,
}

/// In-memory archive of named tensors plus a JSON metadata blob.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    f64_entries: BTreeMap<String, ArrayD<f64>>,
    i64_entries: BTreeMap<String, Vec<i64>>,
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            ..Default::default()
        }
    }

    pub fn put_f64(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.f64_entries.insert(name.into(), value);
    }

    pub fn put_i64(&mut self, name: impl Into<String>, value: Vec<i64>) {
        self.i64_entries.insert(name.into(), value);
    }

    pub fn f64_names(&self) -> impl Iterator<Item = &String> {
        self.f64_entries.keys()
    }

    pub fn get_f64(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.f64_entries
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing f64 entry '{name}'")))
    }

    pub fn get_i64(&self, name: &str) -> Result<&Vec<i64>> {
        self.i64_entries
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing i64 entry '{name}'")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, arr) in &self.f64_entries {
            let offset = payload.len() as u64;
            let slice = arr.as_slice().expect("standard layout");
            for v in slice {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(EntryDesc {
                name: name.clone(),
                dtype: "f64".into(),
                shape: arr.shape().to_vec(),
                offset,
                byte_len: (slice.len() * 8) as u64,
            });
        }
        for (name, vals) in &self.i64_entries {
            let offset = payload.len() as u64;
            for v in vals {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(EntryDesc {
                name: name.clone(),
                dtype: "i64".into(),
                shape: vec![vals.len()],
                offset,
                byte_len: (vals.len() * 8) as u64,
            });
        }
        let manifest = Manifest {
            format_version: 1,
            entries,
            meta: self.meta.clone(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&manifest_bytes)?;
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive(format!(
                "bad magic in {}: {:?}",
                path.display(),
                magic
            )));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        file.read_exact(&mut manifest_bytes)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        let mut archive = Archive::new(manifest.meta);
        for entry in manifest.entries {
            let start = entry.offset as usize;
            let end = start + entry.byte_len as usize;
            let bytes = payload.get(start..end).ok_or_else(|| {
                Error::Archive(format!("entry '{}' exceeds payload", entry.name))
            })?;
            match entry.dtype.as_str() {
                "f64" => {
                    let vals: Vec<f64> = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), vals)
                        .map_err(|e| Error::Archive(format!("entry '{}': {e}", entry.name)))?;
                    archive.put_f64(entry.name, arr);
                }
                "i64" => {
                    let vals: Vec<i64> = bytes
                        .chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    archive.put_i64(entry.name, vals);
                }
                other => {
                    return Err(Error::Archive(format!(
                        "entry '{}' has unsupported dtype '{other}'",
                        entry.name
                    )))
                }
            }
        }
        Ok(archive)
    }
}

/// Sidecar metadata stored next to a dataset container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub sensor_grouping: Vec<(String, usize, usize)>,
    pub n_activities: usize,
    pub subject_origin: Option<Vec<(String, usize)>>,
}

/// Write `<stem>.bin` + `<stem>.meta.json`.
pub fn save_windowed(ds: &super::WindowedDataset, stem: &Path) -> Result<()> {
    let mut archive = Archive::new(serde_json::json!({"kind": "windowed_dataset"}));
    archive.put_f64("windows", ds.windows.clone().into_dyn());
    archive.put_i64("activity_labels", ds.activity_labels.iter().map(|&l| l as i64).collect());
    archive.put_i64("subject_labels", ds.subject_labels.iter().map(|&l| l as i64).collect());
    archive.write(&stem.with_extension("bin"))?;
    let sidecar = DatasetSidecar {
        sensor_grouping: ds
            .sensor_grouping
            .iter()
            .map(|(n, r)| (n.clone(), r.start, r.end))
            .collect(),
        n_activities: ds.n_activities,
        subject_origin: ds.subject_origin.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(stem.with_extension("meta.json"), json)?;
    Ok(())
}

pub fn load_windowed(stem: &Path) -> Result<super::WindowedDataset> {
    let archive = Archive::read(&stem.with_extension("bin"))?;
    let sidecar: DatasetSidecar =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("meta.json"))?)?;
    let windows = archive
        .get_f64("windows")?
        .clone()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::Archive(format!("windows tensor: {e}")))?;
    let ds = super::WindowedDataset {
        windows,
        activity_labels: archive.get_i64("activity_labels")?.iter().map(|&l| l as usize).collect(),
        subject_labels: archive.get_i64("subject_labels")?.iter().map(|&l| l as usize).collect(),
        sensor_grouping: sidecar
            .sensor_grouping
            .into_iter()
            .map(|(n, a, b)| (n, a..b))
            .collect(),
        n_activities: sidecar.n_activities,
        subject_origin: sidecar.subject_origin,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticConfig};

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let mut a = Archive::new(serde_json::json!({"x": 1}));
        a.put_f64("w", ndarray::arr2(&[[1.0, 2.5], [-3.0, 0.0]]).into_dyn());
        a.put_i64("labels", vec![4, -2, 7]);
        a.write(&path).unwrap();
        let b = Archive::read(&path).unwrap();
        assert_eq!(b.get_f64("w").unwrap(), a.get_f64("w").unwrap());
        assert_eq!(b.get_i64("labels").unwrap(), &vec![4, -2, 7]);
        assert_eq!(b.meta["x"], 1);
        assert!(b.get_f64("nope").is_err());
    }

    #[test]
    fn windowed_dataset_round_trip() {
        let ds = make_synthetic(&SyntheticConfig {
            n_subjects: 2,
            n_activities: 3,
            sensors: vec![2, 2],
            window_size: 8,
            windows_per_subject_per_activity: 2,
            subject_effect: 0.2,
            noise_std: 0.1,
            seed: 3,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ds");
        save_windowed(&ds, &stem).unwrap();
        let loaded = load_windowed(&stem).unwrap();
        assert_eq!(ds, loaded);
    }
}
