//! Data model, manifests, synthetic data, label-noise injection and
//! simulated annotator panels.

mod manifest;
mod model;
mod noise;
mod panel;
mod synth;

pub use manifest::{read_manifest, read_manifest_from, write_manifest, write_manifest_to, MANIFEST_FORMAT};
pub use model::{AnnotationSet, Dataset, LabelSource, LabelSpace, Sample, Vote};
pub use noise::{flip_count, inject_noise, NoiseKind, NoiseOutcome, NoiseSpec, NoiseStatus, RankingModel};
pub use panel::{simulate_panel, AnnotatorProfile};
pub use synth::{class_direction, generate_synthetic, SynthSpec};
