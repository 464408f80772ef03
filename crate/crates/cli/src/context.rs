use std::path::{Path, PathBuf};

use log::info;
use pdls_core::config::Config;
use pdls_core::data::SpecimenBag;
use pdls_core::hierarchy::PdlsModel;
use pdls_core::persist;

use crate::{Common, Failure};

/// Loaded config plus resolved locations for one invocation.
pub struct Context {
    pub config: Config,
    pub out: PathBuf,
    config_dir: PathBuf,
    timestamp: bool,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self, Failure> {
        let mut config = match Config::load(&common.config) {
            Ok(c) => c,
            Err(pdls_core::Error::Io { path, source }) => {
                return Err(Failure::Usage(format!("cannot read config {}: {source}", path.display())))
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        std::fs::create_dir_all(&common.out)
            .map_err(|e| Failure::Data(format!("cannot create {}: {e}", common.out.display())))?;
        let config_dir = common
            .config
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Self {
            config,
            out: common.out.clone(),
            config_dir,
            timestamp: !common.no_timestamp,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// A configured input path (relative to the config file), or `default`
    /// in the output directory.
    pub fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        match configured {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.config_dir.join(p),
            None => self.out.join(default),
        }
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.input(&self.config.data.manifest, "manifest.csv")
    }

    pub fn load_dataset(&self) -> Result<Vec<SpecimenBag>, Failure> {
        let d = &self.config.data;
        let bags = persist::load_dataset(&self.manifest_path(), &self.input(&d.embeddings, "embeddings.bin"))?;
        info!("loaded {} specimens", bags.len());
        Ok(bags)
    }

    pub fn load_model(&self) -> Result<PdlsModel, Failure> {
        Ok(persist::load_model(&self.input(&self.config.data.model, "model.pdls"))?)
    }

    pub fn write_csv(&self, name: &str, comments: &[String], body: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.output(name);
        persist::write_report(&path, comments, body, self.timestamp)?;
        info!("wrote {}", path.display());
        Ok(path)
    }
}
