//! The sentence generator: an LSTM decoder conditioned on classifier
//! score vectors.

pub mod config;
pub mod decode;
pub mod dropout;
pub mod network;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use config::{Architecture, DropoutSite, NetworkConfig};
pub use decode::{ensemble_generate, generate, mean_distribution, Ensemble, DEFAULT_MAX_LEN};
pub use dropout::{apply_dropout, DropoutMode};
pub use network::{forward_step, lstm_cell_forward, DecoderState, LstmLayer, Network, Params};
pub use schedule::{lr_at, LrSchedule};
pub use train::{train, train_ensemble, TrainingExample, TrainingLog};
pub use vocab::Vocabulary;
