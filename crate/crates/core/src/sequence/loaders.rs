//! Event log readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::events::{Event, EventRecord};
use crate::{Error, Result};

/// Reads one event per line; blank lines and lines starting with `#` are skipped.
pub fn read_events_jsonl(path: &Path) -> Result<Vec<Event>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec.into());
    }
    Ok(out)
}

pub fn write_events_jsonl(path: &Path, events: &[Event]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in events {
        serde_json::to_writer(&mut w, &EventRecord::from(e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bit set for every rating.
pub const RATED: u32 = 1;
/// Bit set for ratings of at least [`LIKE_THRESHOLD`].
pub const LIKED: u32 = 2;
pub const LIKE_THRESHOLD: f64 = 4.0;

/// MovieLens ratings: `user::item::rating::ts` or comma separated
/// `user,item,rating,ts` with an optional header line.
pub fn read_movielens(path: &Path) -> Result<Vec<Event>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = if line.contains("::") {
            line.split("::").collect()
        } else {
            line.split(',').collect()
        };
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if parts.len() < 4 {
            return Err(bad(format!("expected 4 fields, found {}", parts.len())));
        }
        let user = parts[0].trim().parse::<u64>();
        if user.is_err() && i == 0 {
            continue; // header
        }
        let user = user.map_err(|e| bad(format!("user id: {e}")))?;
        let item = parts[1].trim().parse::<u64>().map_err(|e| bad(format!("item id: {e}")))?;
        let rating = parts[2].trim().parse::<f64>().map_err(|e| bad(format!("rating: {e}")))?;
        let ts = parts[3].trim().parse::<i64>().map_err(|e| bad(format!("timestamp: {e}")))?;
        let actions = RATED | if rating >= LIKE_THRESHOLD { LIKED } else { 0 };
        out.push(Event::engagement(user, item, actions, ts));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let evs = vec![
            Event::engagement(1, 2, 3, 4),
            Event::contextual(1, 5, 6, 7),
        ];
        write_events_jsonl(&p, &evs).unwrap();
        assert_eq!(read_events_jsonl(&p).unwrap(), evs);
        std::fs::write(&p, "{\"user_id\": 1, \"ts\": 2}\n# note\n\n{\"bad\": 1}\n").unwrap();
        let err = read_events_jsonl(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn movielens_formats() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("ratings.dat");
        std::fs::write(&a, "1::1193::5::978300760\n1::661::3::978302109\n").unwrap();
        let evs = read_movielens(&a).unwrap();
        assert_eq!(evs[0], Event::engagement(1, 1193, RATED | LIKED, 978300760));
        assert_eq!(evs[1].actions, RATED);
        let b = dir.path().join("ratings.csv");
        std::fs::write(&b, "userId,movieId,rating,timestamp\n7,3,4.5,100\n").unwrap();
        assert_eq!(read_movielens(&b).unwrap(), vec![Event::engagement(7, 3, 3, 100)]);
        assert!(read_movielens(&dir.path().join("missing")).is_err());
    }
}
