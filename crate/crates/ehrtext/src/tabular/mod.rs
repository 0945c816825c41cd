//! Tabular modality: schema inference, row encoding, the attentive encoder,
//! and masked-reconstruction pretraining.

pub mod encoder;
pub mod pretrain;
pub mod schema;

pub use encoder::{TabEncoder, OUTPUT_DIM};
pub use pretrain::{apply_mask, init_recon_params, recon_loss, MaskInfo};
pub use schema::{build_schema, encode_rows, Cell, ColumnRole, FeatureSchema, RawTable, TabularBatch};
