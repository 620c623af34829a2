//! Append-only transcript files, one JSON message per line.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::Conversation;

pub fn transcript_path(output_dir: &Path, run_id: &str, label: &str) -> PathBuf {
    output_dir
        .join("transcripts")
        .join(run_id)
        .join(format!("{label}.jsonl"))
}

/// Writes the conversation to `transcripts/<run_id>/<label>.jsonl`.
///
/// Persisting the same conversation twice is a no-op, and persisting a
/// longer version of a conversation only appends the new messages. Content
/// that would rewrite an existing line is refused.
pub fn persist_transcript(
    output_dir: &Path,
    run_id: &str,
    label: &str,
    conversation: &Conversation,
) -> io::Result<PathBuf> {
    let path = transcript_path(output_dir, run_id, label);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let lines: Vec<String> = conversation
        .messages()
        .iter()
        .map(|m| serde_json::to_string(m).map_err(io::Error::other))
        .collect::<Result<_, _>>()?;

    let existing = match fs::read_to_string(&path) {
        Ok(text) => text,
        Err(err) if err.kind() == io::ErrorKind::NotFound => String::new(),
        Err(err) => return Err(err),
    };
    let on_disk: Vec<&str> = existing.lines().collect();
    if on_disk.len() > lines.len() || on_disk.iter().zip(&lines).any(|(a, b)| *a != b.as_str()) {
        return Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            format!("{} holds a different transcript", path.display()),
        ));
    }
    if on_disk.len() == lines.len() {
        return Ok(path);
    }
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut buf = String::new();
    for line in &lines[on_disk.len()..] {
        buf.push_str(line);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())?;
    file.sync_data()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idempotent_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut conv = Conversation::new("sys", 20);
        conv.push_user("hello");
        let path = persist_transcript(dir.path(), "base-r00", "it00-coder", &conv).unwrap();
        let first = fs::read_to_string(&path).unwrap();
        persist_transcript(dir.path(), "base-r00", "it00-coder", &conv).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), first);

        conv.push_user("more");
        persist_transcript(dir.path(), "base-r00", "it00-coder", &conv).unwrap();
        let second = fs::read_to_string(&path).unwrap();
        assert!(second.starts_with(&first));
        assert_eq!(second.lines().count(), 3);

        let other = Conversation::new("different", 20);
        assert!(persist_transcript(dir.path(), "base-r00", "it00-coder", &other).is_err());
    }
}
