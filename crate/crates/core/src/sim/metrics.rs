//! JSON-lines metrics sink.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::event::EventRecord;

/// One compact JSON object per line, in emission order.
pub fn to_jsonl(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, events: &[EventRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(to_jsonl(events).as_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EventRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| crate::Error::Validation {
                field: "metrics".into(),
                line: Some(i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}
