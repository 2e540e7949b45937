//! Molecule ingestion, synthetic corpora and run configuration files.

pub mod config;
pub mod corpus;
pub mod elements;
pub mod synth;
pub mod xyz;

pub use config::{load_config, parse_config, ConfigError, LoadedConfig};
pub use corpus::{Corpus, CorpusError, Split};
pub use synth::{synth_corpus, SynthConfig, SynthError, ToyPotential};
pub use xyz::{parse_xyz, parse_xyz_frames, write_xyz, write_xyz_frames, XyzError, XyzFrame};
