use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::{AlignedSequence, Alphabet, Dataset};
use crate::error::{Error, Result};

/// On-disk dataset formats.
///
/// * CSV: header `id,sequence,label`; the label column may be absent or empty.
/// * FASTA: `>id|label` description lines (label optional), sequence lines may wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Fasta,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "fa" | "fasta" | "faa" => Some(DataFormat::Fasta),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "fasta" => Ok(DataFormat::Fasta),
            other => Err(Error::config(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    alphabet: &Alphabet,
    wild_type: Option<&str>,
) -> Result<Dataset> {
    let sequences = match format {
        DataFormat::Csv => read_csv(path, alphabet)?,
        DataFormat::Fasta => read_fasta(path, alphabet)?,
    };
    Dataset::new(alphabet.clone(), sequences, wild_type.map(str::to_owned))
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let alphabet = dataset.alphabet();
    match format {
        DataFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["id", "sequence", "label"])?;
            for s in dataset.sequences() {
                let label = s.label.map(|l| l.to_string()).unwrap_or_default();
                w.write_record([s.id.as_str(), &alphabet.decode(&s.tokens), &label])?;
            }
            w.flush()?;
        }
        DataFormat::Fasta => {
            let mut w = BufWriter::new(File::create(path)?);
            for s in dataset.sequences() {
                match s.label {
                    Some(l) => writeln!(w, ">{}|{}", s.id, l)?,
                    None => writeln!(w, ">{}", s.id)?,
                }
                writeln!(w, "{}", alphabet.decode(&s.tokens))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn parse_label(id: &str, raw: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parse(id, format!("label `{raw}` is not a number")))
}

fn read_csv(path: &Path, alphabet: &Alphabet) -> Result<Vec<AlignedSequence>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, seq_col) = match (col("id"), col("sequence")) {
        (Some(i), Some(s)) => (i, s),
        _ => {
            return Err(Error::input(format!(
                "{}: CSV header must contain `id` and `sequence`",
                path.display()
            )))
        }
    };
    let label_col = col("label");
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let id = record
            .get(id_col)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(format!("row {}", row + 1), "missing id"))?;
        let seq = record
            .get(seq_col)
            .ok_or_else(|| Error::parse(id, "missing sequence"))?;
        let label = match label_col.and_then(|c| record.get(c)) {
            Some(raw) => parse_label(id, raw)?,
            None => None,
        };
        out.push(AlignedSequence::parse(id, seq.trim(), label, alphabet)?);
    }
    Ok(out)
}

fn read_fasta(path: &Path, alphabet: &Alphabet) -> Result<Vec<AlignedSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut current: Option<(String, Option<f64>, String)> = None;
    let finish = |cur: (String, Option<f64>, String)| {
        let (id, label, seq) = cur;
        AlignedSequence::parse(id, &seq, label, alphabet)
    };
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end();
        if let Some(desc) = line.strip_prefix('>') {
            if let Some(cur) = current.take() {
                out.push(finish(cur)?);
            }
            let (id, label) = match desc.split_once('|') {
                Some((id, l)) => (id.trim().to_owned(), parse_label(id.trim(), l)?),
                None => (desc.trim().to_owned(), None),
            };
            if id.is_empty() {
                return Err(Error::parse(
                    format!("record {}", out.len() + 1),
                    "empty id",
                ));
            }
            current = Some((id, label, String::new()));
        } else if !line.is_empty() {
            match current.as_mut() {
                Some((_, _, seq)) => seq.push_str(line.trim()),
                None => return Err(Error::input("FASTA data before first `>` header")),
            }
        }
    }
    if let Some(cur) = current.take() {
        out.push(finish(cur)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn csv_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "id,sequence,label\na,ACD,1.5\nb,ACE,\nc,ACF,-2\n").unwrap();
        let d = load_dataset(&p, DataFormat::Csv, &Alphabet::amino_acids(), None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.get(0).label, Some(1.5));
        assert_eq!(d.get(1).label, None);
        assert_eq!(d.get(2).label, Some(-2.0));
    }

    #[test]
    fn csv_without_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "id,sequence\na,ACD\n").unwrap();
        let d = load_dataset(&p, DataFormat::Csv, &Alphabet::amino_acids(), None).unwrap();
        assert_eq!(d.get(0).label, None);
    }

    #[test]
    fn fasta_ragged_record_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fasta");
        fs::write(&p, ">a|1.0\nACDE\n>bad_one|2.0\nACD\n").unwrap();
        let err = load_dataset(&p, DataFormat::Fasta, &Alphabet::amino_acids(), None).unwrap_err();
        assert!(err.to_string().contains("bad_one"), "{err}");
    }

    #[test]
    fn unknown_residue_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "id,sequence,label\nx1,ACZ,1\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, &Alphabet::amino_acids(), None).unwrap_err();
        assert!(err.to_string().contains("x1") && err.to_string().contains('Z'));
    }

    #[test]
    fn wrapped_fasta_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fa");
        fs::write(&p, ">a|0.125\nAC\nDE\n>b\nACDF\n").unwrap();
        let alphabet = Alphabet::amino_acids();
        let d = load_dataset(&p, DataFormat::Fasta, &alphabet, Some("a")).unwrap();
        assert_eq!(d.length(), 4);
        assert_eq!(d.wild_type().unwrap().id, "a");
        for fmt in [DataFormat::Csv, DataFormat::Fasta] {
            let q = dir.path().join("out");
            save_dataset(&d, &q, fmt).unwrap();
            let back = load_dataset(&q, fmt, &alphabet, None).unwrap();
            assert_eq!(back.sequences(), d.sequences());
        }
    }
}
