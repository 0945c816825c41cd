//! Text side of the pipeline: cleanup, vocabulary, chunking, encoding.

pub mod chunk;
pub mod encoder;
pub mod preprocess;
pub mod vocab;

pub use chunk::{chunk, NoteChunks, CHUNK_CONTENT, CHUNK_TOTAL};
pub use encoder::{TextEncoder, TEXT_DIM};
pub use preprocess::{clean_note, normalize_text, strip_sections, DEFAULT_DROP_HEADERS};
pub use vocab::{Vocab, CLS_ID, PAD_ID, UNK_ID};
