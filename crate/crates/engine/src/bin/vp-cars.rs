//! Example processor: one row per distinct vehicle seen in the chunk.
//! Row: `plate \t color \t speed`, using the entity id as the plate.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    if lines.next().transpose()?.is_none() {
        return Ok(());
    }
    let mut seen = BTreeSet::new();
    let out = io::stdout();
    let mut out = out.lock();
    for line in lines {
        let frame: serde_json::Value = match serde_json::from_str(&line?) {
            Ok(v) => v,
            Err(_) => continue,
        };
        for d in frame["detections"].as_array().into_iter().flatten() {
            if d["class"].as_str() != Some("car") {
                continue;
            }
            let Some(id) = d["id"].as_str() else { continue };
            if seen.insert(id.to_string()) {
                let color = d["attrs"]["color"].as_str().unwrap_or("");
                let speed = d["attrs"]["speed"].as_str().unwrap_or("0");
                writeln!(out, "{id}\t{color}\t{speed}")?;
            }
        }
    }
    Ok(())
}
