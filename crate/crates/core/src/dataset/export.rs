use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RecordFilter, SourceCorpus, StoreData};

/// One line of the dataset export. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub metaphor: String,
    pub source: SourceCorpus,
    pub objects: Vec<String>,
    pub implicit_meaning: String,
    pub visual_elaboration: String,
    pub elaboration_edited: bool,
    pub prompt_strategy: String,
    pub images: Vec<ExportedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedImage {
    pub file: String,
    pub status: String,
}

impl ExportRecord {
    pub(crate) fn collect(data: &StoreData, filter: &RecordFilter) -> Vec<ExportRecord> {
        data.metaphors
            .values()
            .filter(|r| filter.matches(r))
            .map(|rec| {
                let elab = data.current_elaboration(rec);
                ExportRecord {
                    id: rec.metaphor.id.to_string(),
                    metaphor: rec.metaphor.text.clone(),
                    source: rec.metaphor.source_corpus,
                    objects: elab.map(|e| e.objects.clone()).unwrap_or_default(),
                    implicit_meaning: elab.map(|e| e.implicit_meaning.clone()).unwrap_or_default(),
                    visual_elaboration: elab.map(|e| e.elaboration_text.clone()).unwrap_or_default(),
                    elaboration_edited: elab.is_some_and(|e| e.edited),
                    prompt_strategy: elab.map(|e| e.prompt_strategy.as_str().to_owned()).unwrap_or_default(),
                    images: data
                        .images_of(rec)
                        .map(|i| ExportedImage {
                            file: i.image_ref.clone(),
                            status: i.filter_status.as_str().to_owned(),
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

/// Export failure; `partial` is set when some lines reached the writer first.
#[derive(Debug, Error)]
#[error("export failed after {lines_written} lines{}: {source}", if *.partial { " (partial output)" } else { "" })]
pub struct ExportError {
    pub partial: bool,
    pub lines_written: usize,
    #[source]
    pub source: std::io::Error,
}

impl ExportError {
    pub(crate) fn new(lines_written: usize, source: std::io::Error) -> Self {
        ExportError { partial: lines_written > 0, lines_written, source }
    }
}
