//! Manifest CSV: `id,path,label,session,gender`, one utterance per row.

use std::path::{Path, PathBuf};

use crate::corpus::{Emotion, Gender, Manifest, Utterance};
use crate::error::{CoreError, Result};

const HEADER: [&str; 5] = ["id", "path", "label", "session", "gender"];

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CoreError::data(format!("cannot read {}: {e}", path.display())))?;

    {
        let headers = reader
            .headers()
            .map_err(|e| CoreError::data(format!("{}: bad header: {e}", path.display())))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != HEADER {
            return Err(CoreError::data(format!(
                "{}: expected header {:?}, got {:?}",
                path.display(),
                HEADER,
                got
            )));
        }
    }

    let mut utterances = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let record = record
            .map_err(|e| CoreError::data(format!("{}: row {row}: {e}", path.display())))?;
        let field = |idx: usize, name: &str| -> Result<String> {
            record
                .get(idx)
                .map(str::to_owned)
                .ok_or_else(|| CoreError::data(format!("row {row}: missing field {name}")))
        };
        let id = field(0, "id")?;
        if id.is_empty() {
            return Err(CoreError::data(format!("row {row}: empty id")));
        }
        let file = field(1, "path")?;
        let label_str = field(2, "label")?;
        let label = Emotion::parse(&label_str).ok_or_else(|| {
            CoreError::data(format!("row {row}: unknown emotion \"{label_str}\""))
        })?;
        let session_str = field(3, "session")?;
        let session: u8 = session_str
            .parse()
            .map_err(|_| CoreError::data(format!("row {row}: bad session \"{session_str}\"")))?;
        if !(1..=5).contains(&session) {
            return Err(CoreError::data(format!(
                "row {row}: session {session} outside 1..=5"
            )));
        }
        let gender_str = field(4, "gender")?;
        let gender = Gender::parse(&gender_str).ok_or_else(|| {
            CoreError::data(format!("row {row}: bad gender \"{gender_str}\""))
        })?;
        utterances.push(Utterance {
            id,
            path: PathBuf::from(file),
            label,
            session,
            gender,
        });
    }

    Manifest::new(utterances, format!("loaded from {}", path.display()))
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "id,path,label,session,gender")?;
    for u in &manifest.utterances {
        writeln!(
            out,
            "{},{},{},{},{}",
            u.id,
            u.path.display(),
            u.label.name(),
            u.session,
            u.gender.letter()
        )?;
    }
    out.flush()?;
    Ok(())
}
