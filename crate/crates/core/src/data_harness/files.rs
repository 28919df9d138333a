use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::batch::Split;
use super::synthetic::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::tensor::io::{load_named, save_named, write_atomic};

const HEADER: &str = "# utterances v1";

/// Writes `<dir>/<split>.utterances` (id, frames, labels per line) and the
/// feature tensors of each split as a named tensor manifest.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for split in Split::ALL {
        let utts = data.split(split);
        let mut index = format!("{HEADER}\n");
        for u in utts {
            writeln!(index, "{}\t{}\t{}", u.id, u.frames(), u.labels).expect("string write");
        }
        write_atomic(&dir.join(format!("{split}.utterances")), index.as_bytes())?;
        let named: Vec<_> = utts
            .iter()
            .map(|u| (u.id.clone(), u.features.clone()))
            .collect();
        save_named(&dir.join(split.as_str()), &named)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = dir.join(format!("{split}.utterances"));
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::parse(
                "utterance index",
                format!("{} lacks header", path.display()),
            ));
        }
        let lines: Vec<&str> = lines.collect();
        let tensors = load_named(&dir.join(split.as_str()))?;
        if tensors.len() != lines.len() {
            return Err(Error::parse(
                "utterance index",
                format!(
                    "{} lists {} utterances but holds {} tensors",
                    path.display(),
                    lines.len(),
                    tensors.len()
                ),
            ));
        }
        let mut utts = Vec::new();
        for (line, (name, features)) in lines.into_iter().zip(tensors) {
            let mut f = line.splitn(3, '\t');
            let (id, frames, labels) = match (f.next(), f.next(), f.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::parse(
                        "utterance index",
                        format!("bad line {line:?}"),
                    ))
                }
            };
            let frames: usize = frames.parse().map_err(|_| {
                Error::parse("utterance index", format!("bad frame count in {line:?}"))
            })?;
            if id != name || features.shape()[0] != frames {
                return Err(Error::parse(
                    "utterance index",
                    format!("{id} does not match its tensor"),
                ));
            }
            utts.push(Utterance {
                id: id.to_string(),
                features,
                labels: labels.parse()?,
            });
        }
        splits.push(utts);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Dataset { train, valid, test })
}
