//! Inspection record storage: a JSON-lines append log with an in-memory index.
//!
//! Every upsert appends the full record. Opening the store replays the log,
//! keeps the last version of each (project, mission) record, drops a torn
//! trailing line and rewrites the file compacted.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::protocol::{IndexedCapture, InspectionRecord};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("storage I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    log: File,
    /// Records in first-stored order; upserts replace in place.
    records: Vec<InspectionRecord>,
    index: HashMap<(String, String), usize>,
}

impl RecordStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StorageError::Io { path: path.clone(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }

        let mut records: Vec<InspectionRecord> = Vec::new();
        let mut index = HashMap::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path).map_err(io)?)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io)?;
            let last = lines.len().saturating_sub(1);
            for (n, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: InspectionRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    // A crash mid-append leaves at most one partial line at the end.
                    Err(_) if n == last => break,
                    Err(e) => {
                        return Err(StorageError::Corrupt {
                            path: path.clone(),
                            line: n + 1,
                            reason: e.to_string(),
                        })
                    }
                };
                upsert_in(&mut records, &mut index, record);
            }
        }

        let tmp = path.with_extension("compact");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
            for r in &records {
                serde_json::to_writer(&mut w, r).expect("record serializes");
                w.write_all(b"\n").map_err(io)?;
            }
            w.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &path).map_err(io)?;
        let log = OpenOptions::new().append(true).open(&path).map_err(io)?;
        Ok(Self { path, log, records, index })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably stores `record`, replacing any earlier record of the same mission.
    pub fn upsert(&mut self, record: InspectionRecord) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        let io = |source| StorageError::Io { path: self.path.clone(), source };
        self.log.write_all(&line).map_err(io)?;
        self.log.sync_data().map_err(io)?;
        upsert_in(&mut self.records, &mut self.index, record);
        Ok(())
    }

    /// Records of `project` inspected on `date`, in the order they were first stored.
    pub fn by_date(&self, project: &str, date: &str) -> Vec<InspectionRecord> {
        self.records
            .iter()
            .filter(|r| r.project_id == project && r.inspection_date == date)
            .cloned()
            .collect()
    }

    pub fn dates(&self, project: &str) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .filter(|r| r.project_id == project)
            .map(|r| r.inspection_date.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn capture(&self, project: &str, capture_id: &str) -> Option<(&InspectionRecord, &IndexedCapture)> {
        self.records
            .iter()
            .filter(|r| r.project_id == project)
            .find_map(|r| r.captures.iter().find(|c| c.capture_id == capture_id).map(|c| (r, c)))
    }

    pub fn get(&self, project: &str, mission_id: &str) -> Option<&InspectionRecord> {
        self.index
            .get(&(project.to_string(), mission_id.to_string()))
            .map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn upsert_in(
    records: &mut Vec<InspectionRecord>,
    index: &mut HashMap<(String, String), usize>,
    record: InspectionRecord,
) {
    let key = (record.project_id.clone(), record.mission_id.clone());
    match index.get(&key) {
        Some(&i) => records[i] = record,
        None => {
            index.insert(key, records.len());
            records.push(record);
        }
    }
}
