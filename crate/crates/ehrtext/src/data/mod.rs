//! Paired datasets: synthetic generation, file ingestion, and the
//! leakage-safe split protocol.

pub mod ingest;
pub mod split;
pub mod synthetic;
pub mod types;

pub use ingest::{ingest, write_dataset, IngestReport};
pub use split::{make_split_plan, SplitCfg, SplitPlan, SubsetSplit};
pub use synthetic::{
    decoy_vocab, default_topic_vocabs, generate_synthetic, generate_synthetic_with_latents,
    LabelTask, SynthConfig,
};
pub use types::{PairedDataset, Provenance};
