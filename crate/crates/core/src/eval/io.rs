//! Binary dataset files and JSON reports.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binio::{check_header, put_f32s, put_u32, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::signal::{Dataset, LabeledSample};

const DATASET_MAGIC: &[u8; 4] = b"SMEI";
pub const DATASET_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

/// Header `{magic, version, K, T, N}` followed by `N` records of `2T`
/// little-endian `f32` values and `K` label bytes.
pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let (k, t) = (data.num_emitters, data.frame_len);
    let mut out = Vec::with_capacity(20 + data.len() * (8 * t + k));
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, k as u32);
    put_u32(&mut out, t as u32);
    put_u32(&mut out, data.len() as u32);
    for s in &data.samples {
        put_f32s(&mut out, &s.channels);
        out.extend_from_slice(&s.label);
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, "dataset file");
    check_header(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
    let k = r.u32()? as usize;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    if k == 0 || k > 30 || t == 0 {
        return Err(Error::Format(format!("dataset header has K = {k}, T = {t}")));
    }
    let record = 8 * t + k;
    if bytes.len() != 20 + n * record {
        return Err(Error::Format(format!(
            "dataset file holds {} bytes, header promises {}",
            bytes.len(),
            20 + n * record
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let channels = r.f32s(2 * t)?;
        let label = r.bytes(k)?.to_vec();
        samples.push(LabeledSample { channels, label });
    }
    r.finish()?;
    Dataset::new(k, t, samples).map_err(|e| Error::Format(format!("dataset content: {e}")))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(data))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    report: T,
}

/// Pretty JSON wrapped with a format version.
pub fn encode_report<T: Serialize>(report: &T) -> Result<String> {
    serde_json::to_string_pretty(&Envelope { format_version: REPORT_VERSION, report }).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_report<T: DeserializeOwned>(text: &str) -> Result<T> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))?;
    match v.get("format_version").and_then(|x| x.as_u64()) {
        Some(x) if x == REPORT_VERSION as u64 => {}
        Some(x) => return Err(Error::Format(format!("report version {x} is not supported (expected {REPORT_VERSION})"))),
        None => return Err(Error::Format("report lacks format_version".into())),
    }
    let env: Envelope<T> = serde_json::from_value(v).map_err(|e| Error::Format(format!("report: {e}")))?;
    Ok(env.report)
}

pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = encode_report(report)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_report(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MetricsReport;

    fn sample_set() -> Dataset {
        let samples = (0..5)
            .map(|i| LabeledSample {
                channels: (0..8).map(|j| (i * 8 + j) as f32 * 0.37 - 1.1).collect(),
                label: crate::signal::label_from_class(i % 3, 2),
            })
            .collect();
        Dataset::new(2, 4, samples).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let d = sample_set();
        let back = decode_dataset(&encode_dataset(&d)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dataset_corruption_rejected() {
        let bytes = encode_dataset(&sample_set());
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[4] = 9;
        let msg = decode_dataset(&v).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
        let mut m = bytes;
        m[0] = b'X';
        assert!(decode_dataset(&m).is_err());
    }

    #[test]
    fn report_round_trip_and_version() {
        let r = MetricsReport {
            subset_accuracy: 0.75,
            hamming_accuracy: 0.9,
            per_emitter: vec![0.8, 1.0],
            num_samples: 4,
            num_emitters: 2,
            scenario: "K=2".into(),
            seed: 3,
        };
        let text = encode_report(&r).unwrap();
        assert_eq!(decode_report::<MetricsReport>(&text).unwrap(), r);
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(decode_report::<MetricsReport>(&bumped).is_err());
    }
}
