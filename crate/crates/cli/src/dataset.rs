//! Simulated cohorts on disk: one bundle directory per recording plus a
//! JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use cardiodx_core::io::{load_bundle, save_bundle};
use cardiodx_core::seed;
use cardiodx_core::synth::{gen_cir, SubjectProfile};
use cardiodx_core::{Label, RadarConfig, RecordingBundle};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub label: Label,
    pub seed: u64,
    pub split: Split,
    /// Bundle directory relative to the manifest.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub duration: f64,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Input(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// 60/20/20 split assignment, stratified by label and shuffled with `seed`.
pub fn stratified_split(labels: &[Label], seed: u64) -> Vec<Split> {
    let mut out = vec![Split::Train; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Healthy, Label::Arrhythmia] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * 0.6).round() as usize;
        let n_val = (n as f64 * 0.2).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out
}

/// Profiles for a cohort: each template is re-seeded per recording, cycling
/// through templates in order.
pub fn cohort(templates: &[SubjectProfile], count: usize, master: u64) -> Vec<SubjectProfile> {
    (0..count)
        .map(|i| {
            let mut p = templates[i % templates.len()].clone();
            p.seed = seed::derive_index(seed::derive(master, "subject"), i as u64);
            p
        })
        .collect()
}

/// Profiles with `healthy` healthy then `arrhythmic` arrhythmic defaults.
pub fn default_cohort(healthy: usize, arrhythmic: usize, master: u64) -> Vec<SubjectProfile> {
    cardiodx_core::synth::cohort_profiles(master, healthy, arrhythmic)
}

/// Simulate every profile in parallel.
pub fn simulate(profiles: &[SubjectProfile], radar: &RadarConfig, duration: f64) -> CliResult<Vec<RecordingBundle>> {
    profiles.par_iter().map(|p| Ok(gen_cir(p, radar, duration)?)).collect()
}

/// Simulate and write a cohort with its manifest.
pub fn write_cohort(
    dir: &Path,
    profiles: &[SubjectProfile],
    radar: &RadarConfig,
    duration: f64,
    master: u64,
) -> CliResult<Manifest> {
    fs::create_dir_all(dir)?;
    let labels: Vec<Label> = profiles.iter().map(|p| p.kind).collect();
    let splits = stratified_split(&labels, seed::derive(master, "split"));
    let entries: Vec<Entry> = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = format!("rec{i:04}");
            let bundle = gen_cir(p, radar, duration)?;
            let tmp = dir.join(format!(".{id}.partial"));
            if tmp.exists() {
                fs::remove_dir_all(&tmp)?;
            }
            save_bundle(&bundle, &tmp)?;
            let dest = dir.join(&id);
            if dest.exists() {
                fs::remove_dir_all(&dest)?;
            }
            fs::rename(&tmp, &dest)?;
            Ok(Entry { id: id.clone(), label: p.kind, seed: p.seed, split: splits[i], path: PathBuf::from(id) })
        })
        .collect::<CliResult<_>>()?;
    let manifest = Manifest { version: MANIFEST_VERSION, seed: master, duration, entries };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn load_entry(dir: &Path, entry: &Entry) -> CliResult<RecordingBundle> {
    Ok(load_bundle(dir.join(&entry.path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified() {
        let labels: Vec<Label> =
            (0..100).map(|i| if i < 50 { Label::Healthy } else { Label::Arrhythmia }).collect();
        let s = stratified_split(&labels, 3);
        for label in [Label::Healthy, Label::Arrhythmia] {
            let n = |sp| (0..100).filter(|&i| labels[i] == label && s[i] == sp).count();
            assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (30, 10, 10));
        }
        assert_eq!(s, stratified_split(&labels, 3));
        assert_ne!(s, stratified_split(&labels, 4));
    }
}
