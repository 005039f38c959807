use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, NormStats};
use crate::shapemodel::EfRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    ImageTrain,
    ImageVal,
    ImageTest,
    MeshTrain,
    MeshVal,
}

/// Subject counts per pool. Image subjects and mesh subjects are disjoint;
/// validation and test image subjects keep their meshes for evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub image_train: usize,
    pub image_val: usize,
    pub image_test: usize,
    pub mesh_train: usize,
    pub mesh_val: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        // 140:60 of 200 image subjects mirrors a 313:133 train/test ratio
        PoolConfig { image_train: 140, image_val: 30, image_test: 30, mesh_train: 140, mesh_val: 30 }
    }
}

impl PoolConfig {
    pub fn total(&self) -> usize {
        self.image_train + self.image_val + self.image_test + self.mesh_train + self.mesh_val
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub assignments: BTreeMap<Split, Vec<usize>>,
}

impl Pools {
    pub fn ids(&self, split: Split) -> &[usize] {
        self.assignments.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn split_of(&self, id: usize) -> Option<Split> {
        self.assignments.iter().find(|(_, v)| v.contains(&id)).map(|(s, _)| *s)
    }
}

/// Random disjoint assignment of `cohort_size` subject ids to pools.
pub fn make_unpaired_pools(cohort_size: usize, cfg: &PoolConfig, seed: u64) -> Result<Pools, DatasetError> {
    let needed = cfg.total().max(4);
    if cohort_size < needed || cfg.image_train == 0 || cfg.mesh_train == 0 {
        return Err(DatasetError::CohortTooSmall { needed, got: cohort_size });
    }
    let mut ids: Vec<usize> = (0..cohort_size).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = ids.as_slice();
    let mut take = |n: usize| {
        let (a, b) = rest.split_at(n);
        rest = b;
        let mut v = a.to_vec();
        v.sort_unstable();
        v
    };
    let assignments = [
        (Split::ImageTrain, cfg.image_train),
        (Split::ImageVal, cfg.image_val),
        (Split::ImageTest, cfg.image_test),
        (Split::MeshTrain, cfg.mesh_train),
        (Split::MeshVal, cfg.mesh_val),
    ]
    .into_iter()
    .map(|(s, n)| (s, take(n)))
    .collect();
    Ok(Pools { assignments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cine_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mesh_paths: Vec<String>,
    pub ef: EfRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub frames: usize,
    pub image_size: usize,
    pub mm_per_px: f64,
    pub pools: Pools,
    pub samples: Vec<SampleRecord>,
}
