//! Turning source documents into structured policies.
//!
//! The pipeline is extract, refine, deduplicate, structure. Refinement and
//! duplicate confirmation are delegated to the Policy Agent model; the
//! rest is local and deterministic.

mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{AgentRole, BackendError, DedupJudgment, ExtractionPayload, LlmClient, ResponseSchema};
use crate::policy::{DatabaseError, Policy, PolicyCategory, PolicyDatabase, RiskLevel, SourceSpan};
use crate::similarity::{canonicalize, text_similarity};

pub use prompt::OrganizationContext;

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    PlainText,
    Markdown,
    /// Text produced by an external PDF extractor.
    PdfExtractedText,
}

impl DocumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::PlainText => "plain_text",
            DocumentKind::Markdown => "markdown",
            DocumentKind::PdfExtractedText => "pdf_extracted_text",
        }
    }

    /// Guesses the kind from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "txt" | "text" => Some(DocumentKind::PlainText),
            "md" | "markdown" => Some(DocumentKind::Markdown),
            _ => None,
        }
    }
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocumentKind {
    type Err = EnhancementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "plain_text" | "text" | "txt" => Ok(DocumentKind::PlainText),
            "markdown" | "md" => Ok(DocumentKind::Markdown),
            "pdf_extracted_text" | "pdf_text" => Ok(DocumentKind::PdfExtractedText),
            _ => Err(EnhancementError::UnsupportedKind(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnhancementError {
    #[error("unsupported document kind `{0}`")]
    UnsupportedKind(String),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("document `{0}` has no text to ingest")]
    EmptyDocument(String),
    #[error("extractor `{tool}` failed: {message}")]
    Extractor { tool: String, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub kind: DocumentKind,
    pub content: String,
    pub origin: String,
}

impl SourceDocument {
    /// Normalizes `content` and rejects documents left empty.
    pub fn from_text(
        doc_id: impl Into<String>,
        kind: DocumentKind,
        content: &str,
        origin: impl Into<String>,
    ) -> Result<Self, EnhancementError> {
        let doc_id = doc_id.into();
        let content = normalize_text(content);
        if content.trim().is_empty() {
            return Err(EnhancementError::EmptyDocument(doc_id));
        }
        Ok(SourceDocument {
            doc_id,
            kind,
            content,
            origin: origin.into(),
        })
    }
}

/// Unifies line endings and removes control characters other than tab and
/// newline, plus a leading byte order mark.
pub fn normalize_text(text: &str) -> String {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.replace("\r\n", "\n")
        .replace('\r', "\n")
        .chars()
        .filter(|&c| c == '\n' || c == '\t' || !c.is_control())
        .collect()
}

/// Pluggable text extraction for sources the crate cannot read itself.
pub trait TextExtractor {
    fn name(&self) -> &str;
    fn extract(&self, path: &Path) -> Result<String, String>;
}

/// Reads `path` as a source document. Without an explicit kind it is
/// guessed from the extension. `pdf_extracted_text` expects a text file
/// that an external extractor already produced.
pub fn extract_text(path: &Path, kind: Option<DocumentKind>) -> Result<SourceDocument, EnhancementError> {
    let kind = match kind.or_else(|| DocumentKind::from_path(path)) {
        Some(k) => k,
        None => {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            return Err(EnhancementError::UnsupportedKind(format!(".{ext}")));
        }
    };
    let bytes = std::fs::read(path).map_err(|source| EnhancementError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| EnhancementError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    SourceDocument::from_text(doc_id_for(path), kind, &text, path.display().to_string())
}

/// Runs an external extractor and wraps its output as pre-extracted text.
pub fn extract_with(path: &Path, extractor: &dyn TextExtractor) -> Result<SourceDocument, EnhancementError> {
    let text = extractor.extract(path).map_err(|message| EnhancementError::Extractor {
        tool: extractor.name().to_string(),
        message,
    })?;
    SourceDocument::from_text(
        doc_id_for(path),
        DocumentKind::PdfExtractedText,
        &text,
        path.display().to_string(),
    )
}

fn doc_id_for(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// A policy candidate between refinement and structuring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftPolicy {
    pub raw_statement: String,
    pub refined_statement: String,
    pub proposed_category: PolicyCategory,
    pub proposed_risk_level: RiskLevel,
    pub scope: String,
    pub constraints: Vec<String>,
    pub source_spans: Vec<SourceSpan>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refinement {
    pub drafts: Vec<DraftPolicy>,
    /// Extracted entries dropped for having an empty statement.
    pub rejected: usize,
}

/// Char offsets of `needle` in `haystack`.
fn char_span(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let byte = haystack.find(needle)?;
    let start = haystack[..byte].chars().count();
    Some((start, start + needle.chars().count()))
}

/// Locates the text a draft came from. Falls back to the whole document
/// when the model paraphrased instead of quoting.
fn locate(doc: &SourceDocument, raw: &str, refined: &str) -> SourceSpan {
    let (start, end) = char_span(&doc.content, raw.trim())
        .or_else(|| char_span(&doc.content, refined.trim()))
        .unwrap_or_else(|| {
            log::warn!("{}: statement not found verbatim, citing whole document", doc.doc_id);
            (0, doc.content.chars().count())
        });
    SourceSpan {
        doc_id: doc.doc_id.clone(),
        start,
        end,
    }
}

/// Asks the Policy Agent to extract and rewrite the document's policies.
pub fn refine_policies(
    doc: &SourceDocument,
    client: &LlmClient,
    org: &OrganizationContext,
) -> Result<Refinement, EnhancementError> {
    let request = client.request(
        AgentRole::PolicyAgent,
        prompt::extraction_system_prompt(org),
        prompt::extraction_payload(doc),
        ResponseSchema::PolicyExtraction,
    );
    let payload: ExtractionPayload = client.complete(&request)?;
    let mut out = Refinement::default();
    for p in payload.policies {
        let refined = p.statement.trim().to_string();
        if refined.is_empty() {
            out.rejected += 1;
            continue;
        }
        let source = locate(doc, &p.raw_statement, &refined);
        out.drafts.push(DraftPolicy {
            raw_statement: p.raw_statement,
            refined_statement: refined,
            proposed_category: p.category,
            proposed_risk_level: p.risk_level,
            scope: p.scope.trim().to_string(),
            constraints: p
                .constraints
                .into_iter()
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect(),
            source_spans: vec![source],
        });
    }
    Ok(out)
}

fn merge_spans(into: &mut Vec<SourceSpan>, from: &[SourceSpan]) {
    let set: BTreeSet<SourceSpan> = into.drain(..).chain(from.iter().cloned()).collect();
    into.extend(set);
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deduplication {
    pub survivors: Vec<DraftPolicy>,
    pub merged: usize,
    /// Candidate pairs the model chose to keep apart.
    pub kept_apart: usize,
}

/// Two-stage duplicate removal. Pairs at or above `threshold` are candidates
/// and the model decides whether to merge; statements identical after
/// canonicalization merge without asking. A merged draft folds its source
/// spans into the earlier survivor, so first-seen order is preserved.
pub fn dedup_policies(
    drafts: Vec<DraftPolicy>,
    client: &LlmClient,
    threshold: f64,
) -> Result<Deduplication, EnhancementError> {
    let mut out = Deduplication::default();
    'drafts: for draft in drafts {
        let canon = canonicalize(&draft.refined_statement);
        for kept in out.survivors.iter_mut() {
            if canonicalize(&kept.refined_statement) == canon {
                merge_spans(&mut kept.source_spans, &draft.source_spans);
                out.merged += 1;
                continue 'drafts;
            }
            let sim = text_similarity(&kept.refined_statement, &draft.refined_statement).value();
            if sim < threshold {
                continue;
            }
            let request = client.request(
                AgentRole::PolicyAgent,
                prompt::DEDUP_SYSTEM_PROMPT,
                prompt::dedup_payload(kept, &draft, sim),
                ResponseSchema::DedupJudgment,
            );
            let judgment: DedupJudgment = client.complete(&request)?;
            if judgment.merge {
                merge_spans(&mut kept.source_spans, &draft.source_spans);
                out.merged += 1;
                continue 'drafts;
            }
            out.kept_apart += 1;
        }
        out.survivors.push(draft);
    }
    Ok(out)
}

/// Stable id from category and canonical statement.
pub fn policy_id(category: PolicyCategory, statement: &str) -> String {
    let mut h = Sha256::new();
    h.update(category.as_str().as_bytes());
    h.update(b"\n");
    h.update(canonicalize(statement).as_bytes());
    let digest = h.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("pol-{hex}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structuring {
    pub inserted: Vec<String>,
    /// Existing policies with the same statement that gained source spans.
    pub updated: Vec<String>,
}

/// Inserts each draft as a policy with an empty queue. A draft whose
/// statement already exists under its id extends that policy's sources;
/// an id held by a different statement is suffixed `-2`, `-3`, ...
pub fn structure_policies(drafts: &[DraftPolicy], db: &mut PolicyDatabase) -> Result<Structuring, DatabaseError> {
    let mut out = Structuring::default();
    for d in drafts {
        let base = policy_id(d.proposed_category, &d.refined_statement);
        let canon = canonicalize(&d.refined_statement);
        let mut id = base.clone();
        let mut n = 1;
        loop {
            match db.get(&id) {
                None => break,
                Some(p) if p.category == d.proposed_category && canonicalize(&p.definition) == canon => {
                    let p = db.get_mut(&id).expect("policy present");
                    merge_spans(&mut p.source, &d.source_spans);
                    out.updated.push(id.clone());
                    break;
                }
                Some(_) => {
                    n += 1;
                    id = format!("{base}-{n}");
                }
            }
        }
        if out.updated.last() == Some(&id) {
            continue;
        }
        db.insert_policy(Policy {
            id: id.clone(),
            category: d.proposed_category,
            scope: d.scope.clone(),
            definition: d.refined_statement.clone(),
            constraints: d.constraints.clone(),
            risk_level: d.proposed_risk_level,
            source: d.source_spans.clone(),
            violation_queue: db.empty_queue(d.proposed_risk_level),
        })?;
        out.inserted.push(id);
    }
    Ok(out)
}

/// Summary of one document ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_id: String,
    pub extracted: usize,
    pub rejected: usize,
    pub merged: usize,
    pub kept_apart: usize,
    pub inserted: Vec<String>,
    pub updated: Vec<String>,
}

/// Refines, deduplicates and structures one document into `db`.
pub fn ingest(
    doc: &SourceDocument,
    client: &LlmClient,
    org: &OrganizationContext,
    threshold: f64,
    db: &mut PolicyDatabase,
) -> Result<IngestReport, EnhancementError> {
    let refinement = refine_policies(doc, client, org)?;
    let extracted = refinement.drafts.len() + refinement.rejected;
    let dedup = dedup_policies(refinement.drafts, client, threshold)?;
    let structured = structure_policies(&dedup.survivors, db)?;
    Ok(IngestReport {
        doc_id: doc.doc_id.clone(),
        extracted,
        rejected: refinement.rejected,
        merged: dedup.merged,
        kept_apart: dedup.kept_apart,
        inserted: structured.inserted,
        updated: structured.updated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("\u{feff}a\r\nb\rc\u{0007}\td"), "a\nb\nc\td");
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "pdf-extracted-text".parse::<DocumentKind>().unwrap(),
            DocumentKind::PdfExtractedText
        );
        assert!("docx".parse::<DocumentKind>().is_err());
        assert_eq!(
            DocumentKind::from_path(Path::new("a/b.MD")),
            Some(DocumentKind::Markdown)
        );
        assert_eq!(DocumentKind::from_path(Path::new("b.pdf")), None);
    }

    #[test]
    fn char_offsets_not_bytes() {
        assert_eq!(char_span("é never pay", "never"), Some((2, 7)));
        assert_eq!(char_span("abc", ""), None);
    }

    #[test]
    fn ids_are_stable_and_category_scoped() {
        let a = policy_id(PolicyCategory::Consent, "Never auto-confirm payments.");
        assert_eq!(a, policy_id(PolicyCategory::Consent, "never AUTO-confirm payments."));
        assert_ne!(a, policy_id(PolicyCategory::Boundary, "Never auto-confirm payments."));
        assert_eq!(a.len(), "pol-".len() + 12);
    }
}
