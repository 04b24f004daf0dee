//! CSV writing. Every file starts with a `#schema=<name>/<version>` line
//! followed by a header row.

use std::io::Write;
use std::path::Path;

use anyhow::Context;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, version: u32, columns: &[&str]) -> Self {
        CsvTable {
            schema: schema.to_string(),
            version,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut s = format!("#schema={}/{}\n{}\n", self.schema, self.version, self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Writes through a sibling temp file so a crash never leaves a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
