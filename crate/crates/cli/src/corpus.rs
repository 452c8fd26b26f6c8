//! Validated corpus handles.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use metatrip_core::embed::{read_image, ImageSample};
use metatrip_core::records::{read_corpus, CorpusRecord};
use metatrip_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub path: PathBuf,
    records: Vec<CorpusRecord>,
    index: HashMap<String, usize>,
}

/// Loads a corpus file and checks ids are unique and every image exists.
pub fn ingest(path: &Path) -> Result<Corpus> {
    let records = read_corpus(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut index = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if index.insert(r.id.clone(), i).is_some() {
            return Err(Error::Validation(format!("duplicate id `{}` in {}", r.id, path.display())));
        }
        let img = base.join(&r.image);
        if !img.is_file() {
            return Err(Error::Validation(format!(
                "image `{}` for id `{}` not found",
                img.display(),
                r.id
            )));
        }
    }
    Ok(Corpus {
        path: path.to_path_buf(),
        records,
        index,
    })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&CorpusRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn image_path(&self, record: &CorpusRecord) -> PathBuf {
        self.path.parent().unwrap_or(Path::new(".")).join(&record.image)
    }

    pub fn image(&self, record: &CorpusRecord) -> Result<ImageSample> {
        read_image(&self.image_path(record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metatrip_core::embed::write_pgm;
    use std::fs;

    fn setup(lines: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageSample::new(8, 8, vec![0.5; 64]).unwrap();
        write_pgm(&img, &dir.path().join("a.pgm")).unwrap();
        let p = dir.path().join("corpus.jsonl");
        fs::write(&p, lines).unwrap();
        (dir, p)
    }

    #[test]
    fn two_records() {
        let (_d, p) = setup(concat!(
            "{\"schema\":1,\"id\":\"r1\",\"text\":\"Mild edema.\",\"image\":\"a.pgm\"}\n",
            "{\"schema\":1,\"id\":\"r2\",\"text\":\"Clear.\",\"image\":\"a.pgm\"}\n"
        ));
        let c = ingest(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("r2").unwrap().text, "Clear.");
        assert_eq!(c.image(c.get("r1").unwrap()).unwrap().width(), 8);
    }

    #[test]
    fn duplicate_and_missing() {
        let (_d, p) = setup(concat!(
            "{\"schema\":1,\"id\":\"r1\",\"text\":\"a\",\"image\":\"a.pgm\"}\n",
            "{\"schema\":1,\"id\":\"r1\",\"text\":\"b\",\"image\":\"a.pgm\"}\n"
        ));
        let err = ingest(&p).unwrap_err().to_string();
        assert!(err.contains("r1"), "{err}");

        let (_d, p) = setup("{\"schema\":1,\"id\":\"r1\",\"text\":\"a\",\"image\":\"nope.pgm\"}\n");
        assert!(ingest(&p).is_err());

        let (_d, p) = setup("{\"schema\":1,\"id\":\"r1\",\"image\":\"a.pgm\"}\n");
        assert!(matches!(ingest(&p).unwrap_err(), Error::Parse { line: 1, .. }));
    }
}
