use super::{PromptError, PromptKind, PromptRequest};

const FACTUAL_V1: &str = include_str!("../../assets/templates/v1/factual.txt");
const CONTRASTIVE_V1: &str = include_str!("../../assets/templates/v1/contrastive.txt");
const CIT_V1: &str = include_str!("../../assets/templates/v1/cit.txt");

/// Output-format instruction appended to every template.
pub const FORMAT_ADDENDUM: &str = include_str!("../../assets/templates/v1/format_addendum.txt");

/// Instruction text for `kind` under `version`, without caption or addendum.
pub fn template_text(kind: PromptKind, version: &str) -> Result<&'static str, PromptError> {
    match version {
        "v1" => Ok(match kind {
            PromptKind::Factual => FACTUAL_V1,
            PromptKind::Contrastive => CONTRASTIVE_V1,
            PromptKind::Cit => CIT_V1,
        }),
        other => Err(PromptError::UnknownTemplateVersion(other.to_string())),
    }
}

pub fn build_prompt_versioned(
    kind: PromptKind,
    caption: &str,
    version: &str,
) -> Result<PromptRequest, PromptError> {
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    let template = template_text(kind, version)?;
    let rendered = format!("{template}\n\nSentence: {caption}\n\n{FORMAT_ADDENDUM}");
    Ok(PromptRequest {
        kind,
        caption: caption.to_string(),
        template_version: version.to_string(),
        rendered,
    })
}

pub fn build_prompt(kind: PromptKind, caption: &str) -> Result<PromptRequest, PromptError> {
    build_prompt_versioned(kind, caption, crate::TEMPLATE_VERSION)
}

pub fn build_factual_prompt(caption: &str) -> Result<PromptRequest, PromptError> {
    build_prompt(PromptKind::Factual, caption)
}

pub fn build_contrastive_prompt(caption: &str) -> Result<PromptRequest, PromptError> {
    build_prompt(PromptKind::Contrastive, caption)
}

pub fn build_cit_prompt(caption: &str) -> Result<PromptRequest, PromptError> {
    build_prompt(PromptKind::Cit, caption)
}
