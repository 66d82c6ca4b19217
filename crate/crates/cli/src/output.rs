use crate::config::Config;
use crate::error::{CliError, CliResult};
use difno_core::container::TensorContainer;
use std::path::{Path, PathBuf};

/// An output directory, created on first use.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(format!("{}: {e}", p.display())))
    }

    pub fn container(&self, name: &str, c: &TensorContainer) -> CliResult<()> {
        let p = self.path(name);
        c.save(&p).map_err(|e| CliError::from(e).context(p.display()))
    }
}

pub fn load_container(path: &Path) -> CliResult<TensorContainer> {
    TensorContainer::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// `manifest_<command>.cfg`: the resolved configuration, then run notes as comments.
pub fn write_manifest(out: &Output, command: &str, cfg: &Config, notes: &str) -> CliResult<()> {
    let mut text = format!("# difno {command}\n");
    text.push_str(&cfg.render());
    for line in notes.lines() {
        text.push_str("# | ");
        text.push_str(line);
        text.push('\n');
    }
    out.text(&format!("manifest_{command}.cfg"), &text)
}

/// Shortest round-trip decimal form, `nan` for missing values.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".into(),
    }
}
