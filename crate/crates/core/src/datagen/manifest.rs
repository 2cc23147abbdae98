//! JSON-lines dataset manifests: one `ImagePairRecord` per line, with a
//! streaming reader and a batch reader over the same parser.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use super::ImagePairRecord;
use crate::error::{Error, Result};

/// Write one JSON document per record, newline separated.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ImagePairRecord]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_line(line: &str, line_no: usize) -> Result<ImagePairRecord> {
    let record: ImagePairRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    record.validate().map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    Ok(record)
}

/// Iterator over manifest records; yields a line-numbered error on the
/// first malformed line.
pub struct ManifestReader {
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

impl Iterator for ManifestReader {
    type Item = Result<ImagePairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            match self.lines.next()? {
                Err(e) => return Some(Err(e.into())),
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => return Some(parse_line(&line, self.line_no)),
            }
        }
    }
}

pub fn stream_manifest(path: impl AsRef<Path>) -> Result<ManifestReader> {
    let file = File::open(path.as_ref())?;
    Ok(ManifestReader {
        lines: BufReader::new(file).lines(),
        line_no: 0,
    })
}

/// Read the whole manifest at once.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ImagePairRecord>> {
    stream_manifest(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatagenConfig;
    use crate::datagen::synthetic::generate_synthetic_pair;

    fn sample_records(count: usize) -> Vec<ImagePairRecord> {
        let cfg = DatagenConfig {
            width: 48,
            height: 48,
            min_lines: 3,
            max_lines: 5,
            ..Default::default()
        };
        (0..count)
            .map(|seed| {
                generate_synthetic_pair(&cfg, seed as u64)
                    .unwrap()
                    .into_record(format!("img/{seed}_a.png"), format!("img/{seed}_b.png"), &cfg)
            })
            .collect()
    }

    #[test]
    fn empty_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_manifest(&path, &[]).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn single_record_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        let records = sample_records(1);
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn streaming_and_batch_reads_agree_on_a_large_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.jsonl");
        let one = sample_records(1).remove(0);
        let records: Vec<ImagePairRecord> = (0..1000)
            .map(|i| {
                let mut r = one.clone();
                r.image_a = format!("img/{i}_a.png");
                r.image_b = format!("img/{i}_b.png");
                r.meta.seed = i as u64;
                r
            })
            .collect();
        write_manifest(&path, &records).unwrap();
        let batch = read_manifest(&path).unwrap();
        let streamed: Vec<ImagePairRecord> = stream_manifest(&path)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(batch.len(), 1000);
        assert_eq!(batch, streamed);
        assert_eq!(batch, records);
    }

    #[test]
    fn malformed_line_reports_its_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let records = sample_records(2);
        let mut text = String::new();
        text.push_str(&serde_json::to_string(&records[0]).unwrap());
        text.push('\n');
        text.push_str(&serde_json::to_string(&records[1]).unwrap());
        text.push('\n');
        text.push_str("{ not json }\n");
        std::fs::write(&path, text).unwrap();
        let err = read_manifest(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_ground_truth_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oob.jsonl");
        let mut record = sample_records(1).remove(0);
        record.gt.pairs.push((999, 0));
        let text = format!("{}\n", serde_json::to_string(&record).unwrap());
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
