use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

/// Reads one `{text, label, campaign, position}` object per line. The class
/// count is inferred as `max(label) + 1` (at least 2).
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    let num_classes = samples
        .iter()
        .map(|s| s.label + 1)
        .max()
        .unwrap_or(2)
        .max(2);
    Dataset::new(samples, num_classes)
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in dataset.samples() {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_campaigns, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn missing_field_names_the_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            "{\"text\":\"a\",\"label\":0,\"campaign\":\"c\",\"position\":0}\n{\"text\":\"b\",\"campaign\":\"c\",\"position\":1}\n",
        )
        .unwrap();
        let err = load_jsonl(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn class_count_is_max_label_plus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.jsonl");
        std::fs::write(
            &p,
            "{\"text\":\"a\",\"label\":0,\"campaign\":\"c\",\"position\":0}\n{\"text\":\"b\",\"label\":1,\"campaign\":\"c\",\"position\":1}\n",
        )
        .unwrap();
        assert_eq!(load_jsonl(&p).unwrap().num_classes(), 2);
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("synth.jsonl");
        let cfg = SynthConfig {
            samples_per_campaign: 50,
            ..SynthConfig::with_seed(2)
        };
        let d = generate_synthetic_campaigns(&cfg).unwrap();
        save_jsonl(&d, &p).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_identity(
            rows in proptest::collection::vec(("[a-z\"\\\\ é]{1,12}", 0usize..3, 0u8..3, 0u64..50), 1..20)
        ) {
            let samples: Vec<Sample> = rows
                .into_iter()
                .filter(|(t, ..)| !t.trim().is_empty())
                .map(|(text, label, c, position)| Sample { text, label, campaign: format!("c{c}"), position })
                .collect();
            prop_assume!(!samples.is_empty());
            let c = samples.iter().map(|s| s.label + 1).max().unwrap().max(2);
            let d = Dataset::new(samples, c).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.jsonl");
            save_jsonl(&d, &p).unwrap();
            prop_assert_eq!(load_jsonl(&p).unwrap(), d);
        }
    }
}
