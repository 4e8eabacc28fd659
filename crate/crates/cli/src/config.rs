//! Reader profiles and crossover configuration as given on the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gary_core::simulator::{make_profile, ReaderProfile, SimError};
use serde::Deserialize;

/// A preset name or a path to a profile JSON file.
pub fn resolve_profile(arg: &str) -> Result<ReaderProfile, SimError> {
    match make_profile(arg) {
        Err(SimError::UnknownPreset(_)) if Path::new(arg).is_file() => {
            let json = std::fs::read_to_string(arg).map_err(|_| SimError::UnknownPreset(arg.to_string()))?;
            ReaderProfile::from_json(&json)
        }
        other => other,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ProfileEntry {
    Preset(String),
    Inline(ReaderProfile),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (1..=*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

fn default_seeds() -> Seeds {
    Seeds::Count(20)
}

fn default_max_words() -> usize {
    gary_core::text::MAX_PHRASE_WORDS
}

/// Crossover configuration file. Text paths are relative to the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverConfig {
    pub profiles: Vec<ProfileEntry>,
    pub text_a: PathBuf,
    pub text_b: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
}

impl CrossoverConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&json).with_context(|| format!("bad crossover config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.text_a = base.join(&cfg.text_a);
        cfg.text_b = base.join(&cfg.text_b);
        Ok(cfg)
    }

    /// Profiles with names made unique, so report rows stay distinguishable.
    pub fn resolve_profiles(&self) -> Result<Vec<ReaderProfile>> {
        if self.profiles.is_empty() {
            bail!("the crossover config lists no profiles");
        }
        let mut out: Vec<ReaderProfile> = Vec::new();
        for entry in &self.profiles {
            let mut p = match entry {
                ProfileEntry::Preset(name) => resolve_profile(name)?,
                ProfileEntry::Inline(p) => {
                    p.validate()?;
                    p.clone()
                }
            };
            let base = p.name.clone();
            let mut k = 1;
            while out.iter().any(|q| q.name == p.name) {
                k += 1;
                p.name = format!("{base}#{k}");
            }
            out.push(p);
        }
        Ok(out)
    }
}
