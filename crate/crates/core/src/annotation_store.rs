//! Append-only, shard-mergeable storage for sampled annotations.
//!
//! Workers write `ann-i<iteration>-w<worker>.part` shards; a single merge
//! sorts their union into `ann-i<iteration>.records`, which readers consume.
//! One JSON object per line, reals in shortest round-trip decimal form.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure at {path}: {source}")]
    StorageFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("iteration {0} has no merged records")]
    UnknownIteration(u32),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// One sampled structure for one unlabeled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub iteration: u32,
    pub x: String,
    /// Position of `x` in the unlabeled corpus; keeps duplicate texts apart.
    pub input_index: usize,
    pub sample_index: usize,
    /// Linearized sample, verbatim from the decoder.
    pub z: String,
    /// Raw (unnormalized) value of the sample.
    pub v: f64,
    /// log q(z|x) under the parser that drew the sample.
    pub logq_sampler: f64,
    pub malformed: bool,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.iteration == 0 {
            return Err(StoreError::InvalidRecord(
                "iteration 0 (warm-up) produces no annotations".into(),
            ));
        }
        if !self.v.is_finite() {
            return Err(StoreError::InvalidRecord(format!("non-finite value {}", self.v)));
        }
        if !(self.logq_sampler <= 0.0) {
            return Err(StoreError::InvalidRecord(format!(
                "sampler log-probability must be <= 0, got {}",
                self.logq_sampler
            )));
        }
        Ok(())
    }

    fn sort_key(&self) -> (&str, usize, usize, &str, u64, u64, bool) {
        (
            &self.x,
            self.input_index,
            self.sample_index,
            &self.z,
            self.v.to_bits(),
            self.logq_sampler.to_bits(),
            self.malformed,
        )
    }
}

/// Directory holding shards and merged record files.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    root: PathBuf,
}

impl AnnotationStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn shard_path(&self, iteration: u32, worker: usize) -> PathBuf {
        self.root.join(format!("ann-i{iteration}-w{worker}.part"))
    }

    pub fn merged_path(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("ann-i{iteration}.records"))
    }

    /// Opens (truncating) the shard of one worker.
    pub fn shard_writer(&self, iteration: u32, worker: usize) -> Result<ShardWriter, StoreError> {
        if iteration == 0 {
            return Err(StoreError::InvalidRecord(
                "iteration 0 (warm-up) produces no annotations".into(),
            ));
        }
        let path = self.shard_path(iteration, worker);
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(ShardWriter {
            iteration,
            out: BufWriter::new(file),
            path,
            written: 0,
        })
    }

    fn shard_paths(&self, iteration: u32) -> Result<Vec<PathBuf>, StoreError> {
        let prefix = format!("ann-i{iteration}-w");
        let mut paths = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(rest) = name.strip_prefix(&prefix) {
                if let Some(w) = rest.strip_suffix(".part") {
                    if w.parse::<usize>().is_ok() {
                        paths.push(entry.path());
                    }
                }
            }
        }
        paths.sort();
        Ok(paths)
    }

    /// Merges every shard of `iteration` into the canonical record file and
    /// removes the shards. Writes an empty file when there are no shards.
    /// Returns the number of merged records.
    pub fn merge(&self, iteration: u32) -> Result<usize, StoreError> {
        let shards = self.shard_paths(iteration)?;
        let mut records = Vec::new();
        for path in &shards {
            records.extend(read_records(path)?);
        }
        if let Some(r) = records.iter().find(|r| r.iteration != iteration) {
            return Err(StoreError::InvalidRecord(format!(
                "record of iteration {} in a shard of iteration {iteration}",
                r.iteration
            )));
        }
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

        let path = self.merged_path(iteration);
        let tmp = path.with_extension("records.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            for r in &records {
                write_record(&mut out, r).map_err(io_err(&tmp))?;
            }
            out.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        for shard in &shards {
            fs::remove_file(shard).map_err(io_err(shard))?;
        }
        Ok(records.len())
    }

    /// Iterations with a merged record file, ascending.
    pub fn iterations(&self) -> Result<Vec<u32>, StoreError> {
        let mut found = BTreeSet::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(i) = name
                .strip_prefix("ann-i")
                .and_then(|r| r.strip_suffix(".records"))
                .and_then(|i| i.parse().ok())
            {
                found.insert(i);
            }
        }
        Ok(found.into_iter().collect())
    }

    /// All merged records of `iteration`, in canonical order (samples of one
    /// input are contiguous).
    pub fn records(&self, iteration: u32) -> Result<Vec<AnnotationRecord>, StoreError> {
        let path = self.merged_path(iteration);
        if !path.exists() {
            return Err(StoreError::UnknownIteration(iteration));
        }
        read_records(&path)
    }

    /// Merged records grouped by input.
    pub fn groups(&self, iteration: u32) -> Result<Vec<Vec<AnnotationRecord>>, StoreError> {
        let mut groups: Vec<Vec<AnnotationRecord>> = Vec::new();
        for r in self.records(iteration)? {
            match groups.last_mut() {
                Some(g) if g[0].input_index == r.input_index && g[0].x == r.x => g.push(r),
                _ => groups.push(vec![r]),
            }
        }
        Ok(groups)
    }
}

fn write_record<W: Write>(out: &mut W, record: &AnnotationRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Appends records to one worker's shard.
pub struct ShardWriter {
    iteration: u32,
    out: BufWriter<File>,
    path: PathBuf,
    written: usize,
}

impl ShardWriter {
    pub fn append(&mut self, record: &AnnotationRecord) -> Result<(), StoreError> {
        record.validate()?;
        if record.iteration != self.iteration {
            return Err(StoreError::InvalidRecord(format!(
                "record of iteration {} written to shard of iteration {}",
                record.iteration, self.iteration
            )));
        }
        write_record(&mut self.out, record).map_err(io_err(&self.path))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    /// Flushes and syncs the shard.
    pub fn finish(mut self) -> Result<usize, StoreError> {
        self.out.flush().map_err(io_err(&self.path))?;
        self.out.get_ref().sync_all().map_err(io_err(&self.path))?;
        Ok(self.written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: &str, input_index: usize, sample_index: usize, v: f64) -> AnnotationRecord {
        AnnotationRecord {
            iteration: 1,
            x: x.into(),
            input_index,
            sample_index,
            z: format!("<S> {x} <R> r <O> o{sample_index}"),
            v,
            logq_sampler: -0.1 * (sample_index as f64 + 1.0) / 3.0,
            malformed: sample_index % 2 == 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        let tricky = [0.1 + 0.2, -1.0 / 3.0, 1e-300, -123456.789e10, f64::MIN_POSITIVE];
        let mut w = store.shard_writer(1, 0).unwrap();
        let written: Vec<_> = tricky.iter().enumerate().map(|(i, &v)| rec("a", 0, i, v)).collect();
        for r in &written {
            w.append(r).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(store.merge(1).unwrap(), 5);
        let back = store.records(1).unwrap();
        for (a, b) in written.iter().zip(&back) {
            assert_eq!(a.v.to_bits(), b.v.to_bits());
            assert_eq!(a.logq_sampler.to_bits(), b.logq_sampler.to_bits());
        }
        assert_eq!(back, written);
    }

    #[test]
    fn rejects_iteration_zero_and_positive_logq() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        assert!(store.shard_writer(0, 0).is_err());
        let mut w = store.shard_writer(1, 0).unwrap();
        let mut r = rec("a", 0, 0, 1.0);
        r.iteration = 0;
        assert!(w.append(&r).is_err());
        let mut r = rec("a", 0, 0, 1.0);
        r.logq_sampler = 0.5;
        assert!(w.append(&r).is_err());
        let mut r = rec("a", 0, 0, 1.0);
        r.iteration = 2;
        assert!(w.append(&r).is_err());
    }

    #[test]
    fn unknown_and_empty_iterations() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        assert!(matches!(store.records(3), Err(StoreError::UnknownIteration(3))));
        store.shard_writer(3, 0).unwrap().finish().unwrap();
        assert_eq!(store.merge(3).unwrap(), 0);
        assert!(store.records(3).unwrap().is_empty());
        assert_eq!(store.iterations().unwrap(), vec![3]);
    }

    #[test]
    fn merge_is_order_independent_and_grouped() {
        let mut all = Vec::new();
        for i in 0..10 {
            for n in 0..5 {
                all.push(rec(&format!("x{}", i % 7), i, n, (i * n) as f64 - 3.5));
            }
        }
        let mut outputs = Vec::new();
        for rotation in [0usize, 17, 33] {
            let dir = tempfile::tempdir().unwrap();
            let store = AnnotationStore::open(dir.path()).unwrap();
            let mut shuffled = all.clone();
            shuffled.rotate_left(rotation);
            shuffled.reverse();
            let workers = 1 + rotation % 4;
            let mut writers: Vec<_> = (0..workers).map(|w| store.shard_writer(1, w).unwrap()).collect();
            for (k, r) in shuffled.iter().enumerate() {
                writers[k % workers].append(r).unwrap();
            }
            for w in writers {
                w.finish().unwrap();
            }
            assert_eq!(store.merge(1).unwrap(), 50);
            assert!(store.shard_paths(1).unwrap().is_empty());
            let groups = store.groups(1).unwrap();
            assert_eq!(groups.len(), 10);
            assert!(groups.iter().all(|g| g.len() == 5));
            outputs.push(fs::read(store.merged_path(1)).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    }
}
