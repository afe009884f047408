//! Event-log ingestion, preprocessing, tokenization and synthetic homes.

pub mod casas;
pub mod prep;
pub mod synth;
pub mod vocab;

pub use casas::{parse_casas, Corrections, ParseDiagnostics, ParseOptions, SensorEvent};
pub use prep::{
    build_vocab, complete_second_labels, filter_motion_off, majority_vote, window_instances,
    EncodedInstance, Instance, LabeledEvent,
};
pub use synth::{generate_synthetic, SyntheticConfig};
pub use vocab::{Vocabulary, EOS, PAD, SOS, UNK};
