//! On-disk dataset format.
//!
//! A dataset directory holds:
//! - `meta.json` — counts, channel and label names, units
//! - `windows.f32` — little-endian binary32, layout `[sample][time][channel]`
//! - `labels.csv` — header `sample_id,subject_id,label`, label as name string

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SensorWindow, NUM_CHANNELS, NUM_CLASSES, TIME_STEPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const META_FILE: &str = "meta.json";
pub const WINDOWS_FILE: &str = "windows.f32";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    version: u32,
    num_samples: usize,
    time_steps: usize,
    channels: usize,
    channel_names: Vec<String>,
    label_names: Vec<String>,
    units: String,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta =
        serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    if meta.version != 1 {
        return Err(Error::parse(
            &meta_path,
            format!("unsupported dataset version {}", meta.version),
        ));
    }
    if meta.time_steps != TIME_STEPS || meta.channels != NUM_CHANNELS {
        return Err(Error::parse(
            &meta_path,
            format!(
                "expected {TIME_STEPS} time steps x {NUM_CHANNELS} channels, got {} x {}",
                meta.time_steps, meta.channels
            ),
        ));
    }
    if meta.channel_names.len() != NUM_CHANNELS {
        return Err(Error::parse(
            &meta_path,
            format!("expected {NUM_CHANNELS} channel names, got {}", meta.channel_names.len()),
        ));
    }
    if meta.label_names.len() != NUM_CLASSES {
        return Err(Error::parse(
            &meta_path,
            format!("expected {NUM_CLASSES} label names, got {}", meta.label_names.len()),
        ));
    }

    let labels_path = dir.join(LABELS_FILE);
    let rows = read_labels(&labels_path, &meta.label_names)?;
    if rows.len() != meta.num_samples {
        return Err(Error::parse(
            &labels_path,
            format!("{} rows but meta.json declares {}", rows.len(), meta.num_samples),
        ));
    }

    let windows_path = dir.join(WINDOWS_FILE);
    let payload = fs::read(&windows_path).map_err(|e| Error::io(&windows_path, e))?;
    let expected_bytes = meta.num_samples * TIME_STEPS * NUM_CHANNELS * 4;
    if payload.len() != expected_bytes {
        return Err(Error::parse(
            &windows_path,
            format!("expected {expected_bytes} bytes, found {}", payload.len()),
        ));
    }

    let floats_per_window = TIME_STEPS * NUM_CHANNELS;
    let mut windows = Vec::with_capacity(meta.num_samples);
    for (i, (sample_id, subject_id, label)) in rows.into_iter().enumerate() {
        let base = i * floats_per_window * 4;
        let values: Vec<f32> = payload[base..base + floats_per_window * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        windows.push(SensorWindow {
            values: Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values)?,
            label,
            subject_id,
            sample_id,
        });
    }

    let ds = Dataset {
        windows,
        channel_names: meta.channel_names,
        label_names: meta.label_names,
        units: meta.units,
        normalizer: None,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_labels(path: &Path, label_names: &[String]) -> Result<Vec<(u64, u32, usize)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    {
        let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
        let expected = ["sample_id", "subject_id", "label"];
        if headers.iter().ne(expected) {
            return Err(Error::parse(
                path,
                format!("expected header sample_id,subject_id,label, got {headers:?}"),
            ));
        }
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::parse(path, format!("row {}: expected 3 fields", line + 2)));
        }
        let sample_id: u64 = record[0]
            .parse()
            .map_err(|_| Error::parse(path, format!("row {}: bad sample_id {:?}", line + 2, &record[0])))?;
        let subject_id: u32 = record[1]
            .parse()
            .map_err(|_| Error::parse(path, format!("row {}: bad subject_id {:?}", line + 2, &record[1])))?;
        let label = label_names
            .iter()
            .position(|n| n == &record[2])
            .ok_or_else(|| {
                Error::parse(path, format!("row {}: unknown label {:?}", line + 2, &record[2]))
            })?;
        rows.push((sample_id, subject_id, label));
    }
    Ok(rows)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = Meta {
        version: 1,
        num_samples: ds.len(),
        time_steps: TIME_STEPS,
        channels: NUM_CHANNELS,
        channel_names: ds.channel_names.clone(),
        label_names: ds.label_names.clone(),
        units: ds.units.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, meta_text).map_err(|e| Error::io(&meta_path, e))?;

    let windows_path = dir.join(WINDOWS_FILE);
    let mut payload = Vec::with_capacity(ds.len() * TIME_STEPS * NUM_CHANNELS * 4);
    for w in &ds.windows {
        for v in w.values.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&windows_path, payload).map_err(|e| Error::io(&windows_path, e))?;

    let labels_path = dir.join(LABELS_FILE);
    let mut out = String::from("sample_id,subject_id,label\n");
    for w in &ds.windows {
        out.push_str(&format!(
            "{},{},{}\n",
            w.sample_id, w.subject_id, ds.label_names[w.label]
        ));
    }
    let mut file = fs::File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}
