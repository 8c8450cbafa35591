//! Loss log: `iteration,phase,loss_name,value`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use s2gan_core::train::IterationRecord;

use crate::error::{Error, Result};

pub const HEADER: &str = "iteration,phase,loss_name,value";

pub struct LossLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LossLog {
    /// A fresh log; an existing file is replaced.
    pub fn create(path: &Path) -> Result<Self> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", HEADER).map_err(|e| Error::io(path, e))?;
        Self::wrap(path, f)
    }

    /// Continue a log at `iteration`: rows from that iteration on are
    /// dropped, so a resumed run rewrites exactly what an uninterrupted run
    /// would have.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Self::create(path),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut kept = String::from(HEADER);
        kept.push('\n');
        for line in text.lines().skip(1) {
            let it: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad row {:?}", line)))?;
            if it < iteration {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Self::wrap(path, f)
    }

    fn wrap(path: &Path, f: File) -> Result<Self> {
        Ok(LossLog {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn record(&mut self, r: &IterationRecord) -> Result<()> {
        for (name, value) in &r.losses {
            writeln!(self.out, "{},{},{},{}", r.iteration, r.phase, name, value).map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use s2gan_core::train::Phase;

    fn rec(i: u64) -> IterationRecord {
        IterationRecord {
            phase: Phase::Structure,
            iteration: i,
            losses: vec![("d", 0.5), ("g", i as f64)],
            updates: vec![],
        }
    }

    #[test]
    fn resume_drops_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let mut log = LossLog::create(&p).unwrap();
        for i in 0..4 {
            log.record(&rec(i)).unwrap();
        }
        log.flush().unwrap();
        drop(log);
        let full = fs::read_to_string(&p).unwrap();
        assert!(full.starts_with("iteration,phase,loss_name,value\n0,structure,d,0.5\n"));

        let mut log = LossLog::resume(&p, 2).unwrap();
        for i in 2..4 {
            log.record(&rec(i)).unwrap();
        }
        log.flush().unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), full);
    }
}
