//! Retrieval followed by optional Vogel-disc resampling and refinement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optimize::{decode_refine, optimize_pose, LpoConfig, TracePoint};
use super::{retrieve_nn, vdr_refine, GridDatabase, LatentCost, PoseCost};
use crate::embed::{EncoderParams, Embedding};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{FloorPlan, Pose, Scene3D};

/// Which stages run after retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stages {
    #[serde(rename = "retrieval")]
    Retrieval,
    #[serde(rename = "vdr")]
    Vdr,
    #[serde(rename = "lpo")]
    Lpo,
    #[serde(rename = "vdr+lpo")]
    VdrLpo,
    #[serde(rename = "vdr+decode")]
    VdrDecode,
}

impl Stages {
    pub const ALL: [Stages; 5] = [Stages::Retrieval, Stages::Vdr, Stages::Lpo, Stages::VdrLpo, Stages::VdrDecode];

    pub fn name(self) -> &'static str {
        match self {
            Stages::Retrieval => "retrieval",
            Stages::Vdr => "vdr",
            Stages::Lpo => "lpo",
            Stages::VdrLpo => "vdr+lpo",
            Stages::VdrDecode => "vdr+decode",
        }
    }

    pub fn uses_vdr(self) -> bool {
        matches!(self, Stages::Vdr | Stages::VdrLpo | Stages::VdrDecode)
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stages {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stages::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown stage set '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: Stages,
    /// Vogel disc radius in meters; `None` means twice the grid resolution.
    pub vdr_radius: Option<f64>,
    pub vdr_samples: usize,
    pub lpo: LpoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Stages::VdrLpo,
            vdr_radius: None,
            vdr_samples: 200,
            lpo: LpoConfig::default(),
        }
    }
}

/// Latent distance to the query after each stage that ran.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCosts<T = f64> {
    pub retrieval: T,
    pub vdr: Option<T>,
    pub refined: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult<T = f64> {
    pub retrieved_pose: Pose<T>,
    /// Equal to the retrieved pose when resampling is off.
    pub vdr_pose: Pose<T>,
    /// The final estimate.
    pub refined_pose: Pose<T>,
    pub stage_costs: StageCosts<T>,
    pub lpo_trace: Vec<TracePoint<T>>,
    pub gt_pose: Option<Pose<T>>,
}

impl<T: Real> LocalizationResult<T> {
    pub fn error(&self) -> Option<T> {
        self.gt_pose.map(|g| g.distance(self.refined_pose))
    }
}

/// Localizes an already encoded query against `db`, whose entries were
/// embedded with `params`, the layout branch.
pub fn localize_full<T: Real>(
    query: &Embedding<T>,
    plan: &FloorPlan<T>,
    scene: &Scene3D<T>,
    params: &EncoderParams<T>,
    db: &GridDatabase<T>,
    config: &PipelineConfig,
    gt_pose: Option<Pose<T>>,
) -> Result<LocalizationResult<T>> {
    if db.is_empty() {
        return Err(Error::Empty("grid database has no entries".into()));
    }
    let (top, top_cost) = retrieve_nn(query, db)[0];
    let retrieved = db.entries[top].pose;
    let latent = LatentCost { scene, params, query };
    let mut stage_costs = StageCosts {
        retrieval: top_cost,
        vdr: None,
        refined: None,
    };
    let mut vdr_pose = retrieved;
    if config.stages.uses_vdr() {
        let radius = config.vdr_radius.map(T::lit).unwrap_or(db.resolution + db.resolution);
        let (p, c) = vdr_refine(plan, retrieved, &latent, radius, config.vdr_samples)?;
        vdr_pose = p;
        stage_costs.vdr = Some(c);
    }
    let mut refined = vdr_pose;
    let mut lpo_trace = Vec::new();
    match config.stages {
        Stages::Lpo | Stages::VdrLpo => {
            let out = optimize_pose(plan, vdr_pose, &latent, &config.lpo)?;
            refined = out.pose;
            stage_costs.refined = Some(out.cost);
            lpo_trace = out.trace;
        }
        Stages::VdrDecode => {
            let target = params.decode(query)?;
            let out = decode_refine(plan, scene, vdr_pose, &target, &config.lpo)?;
            refined = out.pose;
            stage_costs.refined = Some(latent.cost(refined)?);
            lpo_trace = out.trace;
        }
        Stages::Retrieval | Stages::Vdr => {}
    }
    Ok(LocalizationResult {
        retrieved_pose: retrieved,
        vdr_pose,
        refined_pose: refined,
        stage_costs,
        lpo_trace,
        gt_pose,
    })
}
