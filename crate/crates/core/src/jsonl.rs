//! Detection-stream and report wire formats.
//!
//! Detections arrive as JSON lines, one record per (frame, network):
//! `{"frame": 3, "network": 0, "detections": [{"box": [x1,y1,x2,y2],
//! "scores": [...]}]}`. Records for a frame may arrive in any order;
//! frames are emitted in ascending frame id. Fused objects and entropy
//! reports leave as JSON lines too.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyReport;
use crate::fusion::{Detection, FusedObject, NetworkFramePredictions};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate record for frame {frame}, network {network}")]
    DuplicateRecord { line: usize, frame: i64, network: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One JSONL record: everything one detector produced for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: i64,
    pub network: u32,
    pub detections: Vec<Detection>,
}

pub fn parse_detection_line(line: &str) -> Result<DetectionRecord, serde_json::Error> {
    serde_json::from_str(line)
}

/// Read a whole detection stream, grouped per frame in ascending frame id
/// with each frame's records sorted by network id. Blank lines are skipped.
pub fn read_detection_stream<R: BufRead>(
    reader: R,
) -> Result<Vec<Vec<NetworkFramePredictions>>, StreamError> {
    let mut frames: BTreeMap<i64, Vec<NetworkFramePredictions>> = BTreeMap::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let number = index + 1;
        let record = parse_detection_line(&line).map_err(|e| StreamError::Malformed {
            line: number,
            message: e.to_string(),
        })?;
        let entry = frames.entry(record.frame).or_default();
        if entry.iter().any(|p| p.network_id == record.network) {
            return Err(StreamError::DuplicateRecord {
                line: number,
                frame: record.frame,
                network: record.network,
            });
        }
        entry.push(NetworkFramePredictions {
            network_id: record.network,
            frame_id: record.frame,
            detections: record.detections,
        });
    }
    let mut grouped: Vec<Vec<NetworkFramePredictions>> = frames.into_values().collect();
    for frame in &mut grouped {
        frame.sort_by_key(|p| p.network_id);
    }
    Ok(grouped)
}

/// Fused output record for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFrameRecord {
    pub frame: i64,
    pub objects: Vec<FusedObject>,
}

pub fn write_fused_frame<W: Write>(
    writer: &mut W,
    record: &FusedFrameRecord,
) -> Result<(), StreamError> {
    serde_json::to_writer(&mut *writer, record).map_err(|e| StreamError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    writeln!(writer)?;
    Ok(())
}

/// Entropy report record, one per (frame, object).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub frame: i64,
    pub object: usize,
    #[serde(rename = "E_pe")]
    pub e_pe: f64,
    #[serde(rename = "E_pe_star")]
    pub e_pe_star: f64,
    pub level: u8,
    pub winning_label: usize,
    pub confidence: f64,
    pub d: usize,
}

impl ReportRecord {
    pub fn new(frame: i64, object: usize, report: &EntropyReport) -> Self {
        Self {
            frame,
            object,
            e_pe: report.e_pe,
            e_pe_star: report.e_pe_star,
            level: report.level.as_index(),
            winning_label: report.winning_label,
            confidence: report.confidence,
            d: report.d,
        }
    }
}

pub fn write_report<W: Write>(writer: &mut W, record: &ReportRecord) -> Result<(), StreamError> {
    serde_json::to_writer(&mut *writer, record).map_err(|e| StreamError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    writeln!(writer)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const LINE: &str =
        r#"{"frame": 1, "network": 0, "detections": [{"box": [0.0, 0.0, 10.0, 10.0], "scores": [0.9, 0.1]}]}"#;

    #[test]
    fn parse_single_record() {
        let record = parse_detection_line(LINE).unwrap();
        assert_eq!(record.frame, 1);
        assert_eq!(record.network, 0);
        assert_eq!(record.detections.len(), 1);
    }

    #[test]
    fn stream_groups_and_orders_frames() {
        let text = [
            r#"{"frame": 2, "network": 1, "detections": []}"#,
            r#"{"frame": 1, "network": 1, "detections": []}"#,
            "",
            r#"{"frame": 1, "network": 0, "detections": []}"#,
            r#"{"frame": 2, "network": 0, "detections": []}"#,
        ]
        .join("\n");
        let frames = read_detection_stream(Cursor::new(text)).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0][0].frame_id, 1);
        assert_eq!(frames[0][0].network_id, 0);
        assert_eq!(frames[0][1].network_id, 1);
        assert_eq!(frames[1][0].frame_id, 2);
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let text = format!("{LINE}\nnot json\n");
        match read_detection_stream(Cursor::new(text)) {
            Err(StreamError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_box_is_rejected_at_parse() {
        let bad = r#"{"frame": 0, "network": 0, "detections": [{"box": [10.0, 0.0, 0.0, 10.0], "scores": [1.0]}]}"#;
        match read_detection_stream(Cursor::new(bad)) {
            Err(StreamError::Malformed { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_network_in_frame_rejected() {
        let text = format!("{LINE}\n{LINE}\n");
        match read_detection_stream(Cursor::new(text)) {
            Err(StreamError::DuplicateRecord { line, frame, network }) => {
                assert_eq!((line, frame, network), (2, 1, 0));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_empty() {
        let frames = read_detection_stream(Cursor::new("")).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn report_record_wire_keys() {
        let report = EntropyReport {
            e_pe: 1.5,
            e_pe_star: 1.65,
            level: crate::entropy::EntropyLevel::High,
            winning_label: 6,
            confidence: 0.55,
            d: 4,
        };
        let record = ReportRecord::new(7, 0, &report);
        let json = serde_json::to_string(&record).unwrap();
        for key in ["\"frame\"", "\"object\"", "\"E_pe\"", "\"E_pe_star\"", "\"level\"", "\"winning_label\"", "\"confidence\"", "\"d\""] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        assert!(json.contains("\"level\":2"));
    }
}
