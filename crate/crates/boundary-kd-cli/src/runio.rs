//! Run-directory plumbing: resolved configs, stable hashing, CSV emission,
//! progress events.

use std::io::Write;
use std::path::{Path, PathBuf};

use boundary_kd::Result;

use crate::config::RunConfig;

/// FNV-1a over the canonical JSON bytes of the resolved config.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub struct RunDir {
    pub dir: PathBuf,
    pub config_hash: String,
}

impl RunDir {
    /// Create the output directory and write the resolved config into it.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(config)?;
        std::fs::write(dir.join("resolved_config.json"), &json)?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            config_hash: format!("{:016x}", fnv1a64(json.as_bytes())),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// CSV with a `# config_hash=` comment line, then the header, then rows.
    pub fn write_csv(
        &self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = String>,
    ) -> Result<PathBuf> {
        let path = self.path(name);
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "# config_hash={}", self.config_hash)?;
        writeln!(f, "{header}")?;
        for row in rows {
            writeln!(f, "{row}")?;
        }
        Ok(path)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let f = std::fs::File::create(&path)?;
        serde_json::to_writer_pretty(f, value)?;
        Ok(path)
    }
}

/// Machine-parseable progress events on standard error.
pub fn progress(stage: &str, done: usize, total: usize, queries: u64) {
    eprintln!("{{\"stage\":\"{stage}\",\"done\":{done},\"total\":{total},\"queries\":{queries}}}");
}

/// Matrix CSV: `class` label column then one column per class; NaN cells are
/// written empty.
pub fn matrix_rows(matrix: &[Vec<f64>]) -> Vec<String> {
    matrix
        .iter()
        .enumerate()
        .map(|(m, row)| {
            let mut s = m.to_string();
            for v in row {
                s.push(',');
                if v.is_finite() {
                    s.push_str(&v.to_string());
                }
            }
            s
        })
        .collect()
}

pub fn matrix_header(class_count: usize) -> String {
    let mut h = String::from("class");
    for n in 0..class_count {
        h.push_str(&format!(",to_{n}"));
    }
    h
}
