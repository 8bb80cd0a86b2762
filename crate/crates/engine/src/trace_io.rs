//! Line-delimited JSON trace files: a header record, then one frame per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vidpriv_core::trace::{Grid, TraceError};
use vidpriv_core::{Frame, FrameStream};

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Format { line: usize, source: TraceError },
    #[error("missing header line")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub camera_id: String,
    pub fps: u32,
    pub start_time: i64,
    pub grid_cols: u32,
    pub grid_rows: u32,
}

impl TraceHeader {
    pub fn of(stream: &FrameStream) -> TraceHeader {
        TraceHeader {
            camera_id: stream.camera_id.clone(),
            fps: stream.fps,
            start_time: stream.start_time,
            grid_cols: stream.grid.cols,
            grid_rows: stream.grid.rows,
        }
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<FrameStream, TraceIoError> {
    read_trace(BufReader::new(File::open(path)?))
}

pub fn read_trace(reader: impl BufRead) -> Result<FrameStream, TraceIoError> {
    let mut lines = reader.lines().enumerate();
    let header: TraceHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(TraceIoError::MissingHeader);
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| TraceIoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    };
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| TraceIoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if frame.index != frames.len() as u64 {
            return Err(TraceIoError::Format {
                line: i + 1,
                source: TraceError::NonContiguous {
                    expected: frames.len() as u64,
                    found: frame.index,
                },
            });
        }
        frames.push(frame);
    }
    FrameStream::new(
        header.camera_id,
        header.fps,
        header.start_time,
        Grid::new(header.grid_cols, header.grid_rows),
        frames,
    )
    .map_err(|source| {
        // Header problems are reported against line 1, frame problems
        // against the frame's own line.
        let line = match &source {
            TraceError::DuplicateEntity { frame, .. } | TraceError::BadBBox { frame, .. } => *frame as usize + 2,
            _ => 1,
        };
        TraceIoError::Format { line, source }
    })
}

pub fn frame_line(frame: &Frame) -> String {
    serde_json::to_string(frame).expect("frames always serialize")
}

pub fn write_trace(mut out: impl Write, stream: &FrameStream) -> io::Result<()> {
    serde_json::to_writer(&mut out, &TraceHeader::of(stream))?;
    out.write_all(b"\n")?;
    for f in stream.frames() {
        out.write_all(frame_line(f).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_trace(path: impl AsRef<Path>, stream: &FrameStream) -> io::Result<()> {
    write_trace(BufWriter::new(File::create(path)?), stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"camera_id":"cam","fps":1,"start_time":0,"grid_cols":2,"grid_rows":2}
{"index":0,"detections":[{"id":"a","class":"car","bbox":[0,0,1,1],"attrs":{"color":"RED"}}]}
{"index":1,"detections":[]}
{"index":2}
"#;

    #[test]
    fn reads_a_hand_written_file() {
        let s = read_trace(THREE.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.frames()[0].detections[0].attrs["color"], "RED");
        let mut buf = Vec::new();
        write_trace(&mut buf, &s).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn gap_in_frame_indices() {
        let text = "{\"camera_id\":\"c\",\"fps\":1,\"start_time\":0,\"grid_cols\":1,\"grid_rows\":1}\n{\"index\":0}\n{\"index\":2}\n";
        match read_trace(text.as_bytes()) {
            Err(TraceIoError::Format { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text =
            "{\"camera_id\":\"c\",\"fps\":1,\"start_time\":0,\"grid_cols\":1,\"grid_rows\":1}\n{\"index\":0}\n{oops\n";
        match read_trace(text.as_bytes()) {
            Err(TraceIoError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_only_is_an_empty_stream() {
        let text = "{\"camera_id\":\"c\",\"fps\":30,\"start_time\":0,\"grid_cols\":4,\"grid_rows\":4}\n";
        assert!(read_trace(text.as_bytes()).unwrap().is_empty());
    }
}
