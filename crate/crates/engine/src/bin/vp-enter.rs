//! Example processor: one row per entity that enters the scene during the
//! chunk, i.e. is detected in the chunk but not in its first frame.
//! Row: `id \t class \t color`.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    if lines.next().transpose()?.is_none() {
        return Ok(());
    }
    let mut at_start: Option<BTreeSet<String>> = None;
    let mut emitted = BTreeSet::new();
    let out = io::stdout();
    let mut out = out.lock();
    for line in lines {
        let frame: serde_json::Value = match serde_json::from_str(&line?) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let dets = frame["detections"].as_array().cloned().unwrap_or_default();
        let ids: Vec<(String, &serde_json::Value)> = dets
            .iter()
            .filter_map(|d| d["id"].as_str().map(|id| (id.to_string(), d)))
            .collect();
        let Some(start) = &at_start else {
            at_start = Some(ids.into_iter().map(|(id, _)| id).collect());
            continue;
        };
        for (id, d) in ids {
            if !start.contains(&id) && emitted.insert(id.clone()) {
                let class = d["class"].as_str().unwrap_or("");
                let color = d["attrs"]["color"].as_str().unwrap_or("");
                writeln!(out, "{id}\t{class}\t{color}")?;
            }
        }
    }
    Ok(())
}
