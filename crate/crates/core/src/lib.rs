//! Phoneme transducer kit: alignment label topologies, frame-wise
//! cross-entropy training of a context-one scorer, and time-synchronous
//! lexical prefix-tree decoding with n-gram shallow fusion.

pub mod alignment_io;
pub mod lexicon;
pub mod lm;
pub mod math;
pub mod model;
pub mod search;
pub mod synth;
pub mod topology;
pub mod training;
pub mod verify;
pub mod wer;

pub use lexicon::{Augmentation, Label, LabelId, LabelVocabulary, Lexicon, Phoneme, PrefixTree};
pub use math::LogScore;
pub use model::ScorerParams;
pub use search::{decode_utterance, BeamConfig, DecodeMode, DecodeResult};
pub use topology::{FrameScorer, SilenceMode, Topology};
pub use training::{train, Corpus, TrainConfig, Utterance};
