//! Dataset records, the persistent store and JSONL export/import.

mod blob;
mod export;
mod store;
mod types;

pub use blob::{BlobStore, ImageFormat};
pub use export::{ExportError, ExportRecord, ExportedImage};
pub use store::{IngestReport, MetaphorRecord, RecordFilter, Store, StoreData};
pub use types::*;
