//! `scribe.toml` at the project root and the merged run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gateway::BackendConfig;

pub const CONFIG_FILE_NAME: &str = "scribe.toml";

/// Contents of `scribe.toml`. Every key is optional.
///
/// ```toml
/// [backend]
/// kind = "remote"
/// endpoint_url = "https://example.invalid/v1/chat/completions"
/// model_name = "gpt-4o"
///
/// [translate]
/// template = "seed_prompt.toml"
/// out_dir = "cpp"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub backend: BackendConfig,
    pub translate: TranslateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateSection {
    /// Relative paths are resolved against the project root.
    pub template: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    /// Reads `<root>/scribe.toml`; a missing file yields the defaults.
    pub fn load(root: &Path) -> Result<ConfigFile> {
        let path = root.join(CONFIG_FILE_NAME);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ConfigFile::default()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let anchor = |p: &mut Option<PathBuf>| {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(root.join(rel));
            }
        };
        anchor(&mut cfg.translate.template);
        anchor(&mut cfg.translate.out_dir);
        Ok(cfg)
    }
}

/// Settings for one command run after merging `scribe.toml` and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub project_root: PathBuf,
    pub backend: BackendConfig,
    pub template_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub force_overwrite: bool,
    pub report_path: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn missing_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(ConfigFile::load(dir.path()).unwrap(), ConfigFile::default());
    }

    #[test]
    fn partial_backend_section() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(CONFIG_FILE_NAME),
            "[backend]\nkind = \"mock\"\nmodel_name = \"m\"\n[translate]\ntemplate = \"seed.toml\"\n",
        )
        .unwrap();
        let cfg = ConfigFile::load(dir.path()).unwrap();
        assert_eq!(cfg.backend.kind, BackendKind::Mock);
        assert_eq!(cfg.backend.model_name, "m");
        assert_eq!(cfg.backend.max_tokens, 4096);
        assert_eq!(cfg.translate.template, Some(dir.path().join("seed.toml")));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(CONFIG_FILE_NAME), "[backend]\nmodle = \"x\"\n").unwrap();
        assert!(matches!(ConfigFile::load(dir.path()), Err(Error::Config(_))));
    }
}
