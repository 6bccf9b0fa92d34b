//! Simulated cohorts on disk: one MCTA file per array plus `manifest.json`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_io::{load_matrix, save_matrix, write_atomic};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fbp::{fbp_reconstruct, FilterKind};
use crate::geometry::FanBeamGeometry;
use crate::grid::{Image, Sinogram, WeightDiag};
use crate::noise::{simulate_low_dose, weights_for, NoiseModel};
use crate::phantom::shepp_logan;
use crate::projector::{FanBeamProjector, SystemOperator};
use crate::rng;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub patient: u64,
    pub slice: u64,
    pub variant_seed: u64,
    pub split: Split,
    pub reference: String,
    pub sinogram: String,
    pub fbp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub geometry: FanBeamGeometry,
    pub noise: NoiseModel,
    pub fbp_filter: FilterKind,
    pub members: Vec<Member>,
}

/// Arrays for one member.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub y: Sinogram,
    pub fbp: Image,
    pub reference: Image,
}

impl Sample {
    pub fn weights(&self, noise: &NoiseModel) -> WeightDiag {
        weights_for(&self.y, noise)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

fn member_id(patient: u64, slice: u64) -> String {
    format!("p{patient:03}_s{slice:02}")
}

/// Member list for the cohort, in the order used for noise streams.
pub fn plan_members(cfg: &ExperimentConfig) -> Vec<Member> {
    let c = &cfg.cohort;
    let mut out = Vec::new();
    let mut push = |patient: u64, slices: usize, split: Split| {
        for slice in 0..slices as u64 {
            let id = member_id(patient, slice);
            out.push(Member {
                variant_seed: rng::mix(patient, slice),
                patient,
                slice,
                split,
                reference: format!("{id}_reference.mcta"),
                sinogram: format!("{id}_sinogram.mcta"),
                fbp: format!("{id}_fbp.mcta"),
                id,
            });
        }
    };
    for (k, &p) in c.train_patients.iter().enumerate() {
        push(p, c.train_slices_for(k), Split::Train);
    }
    for &p in &c.test_patients {
        push(p, c.test_slices_per_patient, Split::Test);
    }
    out
}

/// Generate phantoms, noisy sinograms and FBP images into `cfg.dataset_dir`.
pub fn simulate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let root = &cfg.dataset_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let geom = &cfg.geometry;
    let op = FanBeamProjector::new(geom)?;
    let members = plan_members(cfg);
    members.par_iter().enumerate().try_for_each(|(k, m)| -> Result<()> {
        let reference = shepp_logan(geom.n_pixels, m.variant_seed);
        let ideal = op.forward(&reference)?;
        let y = simulate_low_dose(&ideal, &cfg.noise, k as u64)?;
        let fbp = fbp_reconstruct(geom, &y, cfg.fbp.filter)?;
        save_matrix(&root.join(&m.reference), reference.as_array())?;
        save_matrix(&root.join(&m.sinogram), y.as_array())?;
        save_matrix(&root.join(&m.fbp), fbp.as_array())
    })?;
    let manifest = DatasetManifest {
        geometry: geom.clone(),
        noise: cfg.noise.clone(),
        fbp_filter: cfg.fbp.filter,
        members,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_atomic(&root.join(MANIFEST), &json)?;
    Ok(Dataset {
        root: root.clone(),
        manifest,
    })
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        manifest.geometry.validate()?;
        let ds = Dataset {
            root: root.to_path_buf(),
            manifest,
        };
        ds.check_disjoint()?;
        Ok(ds)
    }

    /// No patient may appear in both splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let train: BTreeSet<u64> = self.patients(Split::Train);
        if let Some(p) = self.patients(Split::Test).intersection(&train).next() {
            return Err(Error::Data(format!("patient {p} appears in both train and test splits")));
        }
        let mut ids = BTreeSet::new();
        for m in &self.manifest.members {
            if !ids.insert(&m.id) {
                return Err(Error::Data(format!("duplicate member id {}", m.id)));
            }
        }
        Ok(())
    }

    pub fn patients(&self, split: Split) -> BTreeSet<u64> {
        self.members(split).map(|m| m.patient).collect()
    }

    pub fn members(&self, split: Split) -> impl Iterator<Item = &Member> {
        self.manifest.members.iter().filter(move |m| m.split == split)
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.manifest.geometry
    }

    pub fn load(&self, m: &Member) -> Result<Sample> {
        let g = self.geometry();
        let img = Some(g.image_shape());
        let sino = Some(g.sinogram_shape());
        Ok(Sample {
            id: m.id.clone(),
            y: Sinogram::new(load_matrix(&self.root.join(&m.sinogram), sino)?),
            fbp: Image::new(load_matrix(&self.root.join(&m.fbp), img)?),
            reference: Image::new(load_matrix(&self.root.join(&m.reference), img)?),
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.members(split).map(|m| self.load(m)).collect()
    }
}
