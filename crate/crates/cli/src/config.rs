//! Experiment configuration. Every module parameter is reachable from this
//! JSON document; omitted keys take the shipped defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flowedit_core::solver::SolverOrder;
use flowedit_core::velocity::{AnalyticField, DiTConfig};
use flowedit_core::workbench::{EditTask, Motif, Rect, SyntheticVideoSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; weights, video texture, edit patch, prompt and probe items
    /// derive their seeds from it.
    pub seed: u64,
    pub model: DiTConfig,
    pub video: VideoConfig,
    pub solver: SolverConfig,
    pub enrichment: EnrichmentConfig,
    pub edit: EditConfig,
    pub probe: ProbeConfig,
    pub bench: BenchConfig,
    /// Also dump every frame/channel of the outputs as PGM.
    pub pgm: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            model: DiTConfig::default(),
            video: VideoConfig::default(),
            solver: SolverConfig::default(),
            enrichment: EnrichmentConfig::default(),
            edit: EditConfig::default(),
            probe: ProbeConfig::default(),
            bench: BenchConfig::default(),
            pgm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub motif: Motif,
    pub start: (usize, usize),
    pub velocity: (i64, i64),
    pub background: f32,
    pub foreground: f32,
    pub texture: f32,
}

impl Default for VideoConfig {
    fn default() -> Self {
        let s = SyntheticVideoSpec::default();
        Self {
            motif: s.motif,
            start: s.start,
            velocity: s.velocity,
            background: s.background,
            foreground: s.foreground,
            texture: s.texture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inversion_steps: usize,
    pub sampling_steps: usize,
    pub order: SolverOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            inversion_steps: 50,
            sampling_steps: 50,
            order: SolverOrder::Rf2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentConfig {
    pub tau: f64,
    pub guidance_scale: f32,
    /// Number of vital layers; `null` means `ceil(0.1 * num_layers)`.
    pub k: Option<usize>,
    /// Explicit vital layers; when absent they are selected by probing.
    pub vital_layers: Option<Vec<usize>>,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            guidance_scale: 3.0,
            k: Some(4),
            vital_layers: None,
        }
    }
}

impl EnrichmentConfig {
    pub fn resolved_k(&self, num_layers: usize) -> usize {
        self.k
            .unwrap_or_else(|| (0.1 * num_layers as f64).ceil() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub task: EditTask,
    pub region: Rect,
    pub patch_level: f32,
    /// Condition the editing path on a seeded target prompt instead of the
    /// null prompt.
    pub target_prompt: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            task: EditTask::Insert,
            region: Rect {
                row: 4,
                col: 4,
                height: 3,
                width: 3,
            },
            patch_level: 1.0,
            target_prompt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub items: usize,
    pub probe_t: f32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            items: 8,
            probe_t: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub field: AnalyticField,
    pub ns: Vec<usize>,
    pub initial_value: f32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            field: AnalyticField::LinearDecay,
            ns: vec![8, 16, 32, 64],
            initial_value: 2.0,
        }
    }
}

/// Offsets added to the root seed for each derived stream.
pub mod seeds {
    pub const VIDEO: u64 = 1;
    pub const PATCH: u64 = 2;
    pub const PROMPT: u64 = 3;
    pub const PROBE_VIDEO: u64 = 100;
    pub const PROBE_NOISE: u64 = 200;
    pub const PROBE_PATCH: u64 = 300;
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn video_spec(&self) -> SyntheticVideoSpec {
        SyntheticVideoSpec {
            frames: self.model.frames,
            height: self.model.height,
            width: self.model.width,
            channels: self.model.channels,
            motif: self.video.motif,
            start: self.video.start,
            velocity: self.video.velocity,
            background: self.video.background,
            foreground: self.video.foreground,
            texture: self.video.texture,
            seed: self.seed.wrapping_add(seeds::VIDEO),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
