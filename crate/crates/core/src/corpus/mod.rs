//! Corpus handling: manifests, WAV I/O and the synthetic corpus generator.

mod manifest;
mod synth;
mod wav;

pub use manifest::{
    load_manifest, CorpusDims, CorpusManifest, Split, UtteranceRecord, CSD_DIMS, MANIFEST_HEADER,
};
pub use synth::{render_utterance, synthesize_corpus, EmotionStyle, Preset, SynthSpec};
pub use wav::{ingest_wav, write_wav};

/// File name of the manifest inside a generated corpus directory.
pub const MANIFEST_FILE: &str = "manifest.csv";
