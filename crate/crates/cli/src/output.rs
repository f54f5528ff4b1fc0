use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Provenance line written at the top of every table.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn line(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!("miwols {} config_sha256={} seed={}", self.command, self.config_sha256, seed)
    }
}

pub struct OutDir {
    dir: PathBuf,
    prov: Provenance,
}

impl OutDir {
    pub fn create(dir: &Path, prov: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), prov })
    }

    /// Writes `<stem>.csv`, whose first line is a `#` comment carrying the
    /// provenance.
    pub fn csv(&self, stem: &str, fill: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), CliError>) -> Result<PathBuf, CliError> {
        let mut buf = format!("# {}\n", self.prov.line()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            fill(&mut w)?;
            w.flush()?;
        }
        self.write(&format!("{stem}.csv"), &buf)
    }

    /// Writes `<stem>.md` with the provenance as an HTML comment.
    pub fn markdown(&self, stem: &str, body: &str) -> Result<PathBuf, CliError> {
        let text = format!("<!-- {} -->\n\n{body}", self.prov.line());
        self.write(&format!("{stem}.md"), text.as_bytes())
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// Decimal form with trailing zeros dropped, for human-readable reports.
pub fn trim_float(x: f64, places: usize) -> String {
    let s = format!("{x:.places$}");
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" { "0".into() } else { t.into() }
    } else {
        s
    }
}
