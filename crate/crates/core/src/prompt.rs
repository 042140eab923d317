//! Prompt templates and flat `{Name}` placeholder substitution.
//!
//! Template bodies live as UTF-8 resource files under `templates/`, one per
//! template id, with `\n` line breaks and no trailing whitespace.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::label::LabelSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing binding for placeholder {{{0}}}")]
    MissingBinding(&'static str),
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("binding for {{{0}}} contains brace characters")]
    InvalidBinding(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Modality,
    LabelSet,
    Question,
    Disease,
    Rad,
    Moed,
}

impl Placeholder {
    pub const ALL: [Placeholder; 6] = [
        Placeholder::Modality,
        Placeholder::LabelSet,
        Placeholder::Question,
        Placeholder::Disease,
        Placeholder::Rad,
        Placeholder::Moed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Modality => "Modality",
            Placeholder::LabelSet => "Label Set",
            Placeholder::Question => "Question",
            Placeholder::Disease => "Disease",
            Placeholder::Rad => "RAD",
            Placeholder::Moed => "MoED",
        }
    }

    pub fn from_name(name: &str) -> Option<Placeholder> {
        Placeholder::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateId {
    /// Disease diagnosis (classification).
    Cls,
    /// Chest X-ray report generation.
    Mrg,
    /// Free-form visual question answering.
    Vqa,
    /// Diagnosis-guided report bootstrapping, with the verified disease.
    Dgb,
    /// Instruction-tuning form of the bootstrapping prompt (no disease slot).
    DgbSft,
    /// Image description.
    Des,
    /// Collaboration instruction, one of four phrasings.
    Gsco(u8),
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Cls,
        TemplateId::Mrg,
        TemplateId::Vqa,
        TemplateId::Dgb,
        TemplateId::DgbSft,
        TemplateId::Des,
        TemplateId::Gsco(0),
        TemplateId::Gsco(1),
        TemplateId::Gsco(2),
        TemplateId::Gsco(3),
    ];

    pub fn gsco(variant: u8) -> Result<TemplateId, PromptError> {
        if variant <= 3 {
            Ok(TemplateId::Gsco(variant))
        } else {
            Err(PromptError::UnknownTemplate(alloc::format!("GSCO-{variant}")))
        }
    }

    pub fn parse(id: &str) -> Result<TemplateId, PromptError> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.into()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Cls => "CLS",
            TemplateId::Mrg => "MRG",
            TemplateId::Vqa => "VQA",
            TemplateId::Dgb => "DGB",
            TemplateId::DgbSft => "DGB-SFT",
            TemplateId::Des => "DES",
            TemplateId::Gsco(0) => "GSCO-0",
            TemplateId::Gsco(1) => "GSCO-1",
            TemplateId::Gsco(2) => "GSCO-2",
            TemplateId::Gsco(3) => "GSCO-3",
            TemplateId::Gsco(_) => "GSCO-?",
        }
    }

    pub fn body(self) -> Result<&'static str, PromptError> {
        Ok(match self {
            TemplateId::Cls => include_str!("../templates/cls.txt"),
            TemplateId::Mrg => include_str!("../templates/mrg.txt"),
            TemplateId::Vqa => include_str!("../templates/vqa.txt"),
            TemplateId::Dgb => include_str!("../templates/dgb.txt"),
            TemplateId::DgbSft => include_str!("../templates/dgb_sft.txt"),
            TemplateId::Des => include_str!("../templates/des.txt"),
            TemplateId::Gsco(0) => include_str!("../templates/gsco_0.txt"),
            TemplateId::Gsco(1) => include_str!("../templates/gsco_1.txt"),
            TemplateId::Gsco(2) => include_str!("../templates/gsco_2.txt"),
            TemplateId::Gsco(3) => include_str!("../templates/gsco_3.txt"),
            TemplateId::Gsco(v) => return Err(PromptError::UnknownTemplate(alloc::format!("GSCO-{v}"))),
        })
    }

    /// Placeholders occurring in the body, in first-occurrence order.
    pub fn placeholders(self) -> Result<Vec<Placeholder>, PromptError> {
        let mut out = Vec::new();
        for seg in segments(self.body()?) {
            if let Segment::Slot(name) = seg {
                let p = Placeholder::from_name(name).ok_or_else(|| PromptError::UnknownPlaceholder(name.into()))?;
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptBindings(BTreeMap<Placeholder, String>);

impl PromptBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, p: Placeholder, value: impl Into<String>) -> &mut Self {
        self.0.insert(p, value.into());
        self
    }

    pub fn with(mut self, p: Placeholder, value: impl Into<String>) -> Self {
        self.set(p, value);
        self
    }

    /// Binds `{Label Set}` to the display labels joined by ", ". The templates
    /// supply the terminal period.
    pub fn with_label_set(self, labels: &LabelSet) -> Self {
        self.with(Placeholder::LabelSet, labels.joined())
    }

    pub fn get(&self, p: Placeholder) -> Option<&str> {
        self.0.get(&p).map(String::as_str)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn segments(body: &str) -> impl Iterator<Item = Segment<'_>> {
    let mut rest = body;
    core::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        if let Some(open) = rest.find('{') {
            if open > 0 {
                let (text, tail) = rest.split_at(open);
                rest = tail;
                return Some(Segment::Text(text));
            }
            if let Some(close) = rest.find('}') {
                let name = &rest[1..close];
                rest = &rest[close + 1..];
                return Some(Segment::Slot(name));
            }
        }
        let text = rest;
        rest = "";
        Some(Segment::Text(text))
    })
}

pub fn render_prompt(template: TemplateId, bindings: &PromptBindings) -> Result<String, PromptError> {
    render_body(template.body()?, bindings)
}

fn render_body(body: &str, bindings: &PromptBindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len() + 64);
    for seg in segments(body) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let p = Placeholder::from_name(name).ok_or_else(|| PromptError::UnknownPlaceholder(name.into()))?;
                let value = bindings.get(p).ok_or(PromptError::MissingBinding(p.name()))?;
                if value.contains(['{', '}']) {
                    return Err(PromptError::InvalidBinding(p.name()));
                }
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn sentinels() -> PromptBindings {
        Placeholder::ALL.into_iter().fold(PromptBindings::new(), |b, p| b.with(p, format!("«{}»", p.name())))
    }

    #[test]
    fn cls_example() {
        let labels = LabelSet::new(["Normal", "Pneumonia"], None).unwrap();
        let b = PromptBindings::new().with(Placeholder::Modality, "chest X-ray").with_label_set(&labels);
        let out = render_prompt(TemplateId::Cls, &b).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines.contains(&"Your task is disease diagnosis."));
        assert!(lines.contains(&"The possible diagnoses are: Normal, Pneumonia."));
        assert!(lines.contains(&"You are given a chest X-ray image."));
    }

    #[test]
    fn dgb_example() {
        let b = PromptBindings::new().with(Placeholder::Modality, "endoscopy").with(Placeholder::Disease, "ulcerative colitis");
        let out = render_prompt(TemplateId::Dgb, &b).unwrap();
        assert!(out.contains("the diagnosis is ulcerative colitis"));
        assert!(out.contains("findings and impressions"));
        assert!(out.ends_with("findings and impressions."));
    }

    #[test]
    fn missing_binding() {
        let labels = LabelSet::new(["Normal", "Pneumonia"], None).unwrap();
        let b = PromptBindings::new().with_label_set(&labels);
        assert_eq!(render_prompt(TemplateId::Cls, &b), Err(PromptError::MissingBinding("Modality")));
    }

    #[test]
    fn brace_in_binding_rejected() {
        let b = PromptBindings::new().with(Placeholder::Question, "what is {RAD}?");
        assert_eq!(render_prompt(TemplateId::Vqa, &b), Err(PromptError::InvalidBinding("Question")));
    }

    #[test]
    fn template_ids() {
        for t in TemplateId::ALL {
            assert_eq!(TemplateId::parse(t.as_str()), Ok(t));
        }
        assert!(matches!(TemplateId::parse("GSCO-4"), Err(PromptError::UnknownTemplate(_))));
        assert!(TemplateId::gsco(4).is_err());
        assert!(TemplateId::Gsco(9).body().is_err());
    }

    #[test]
    fn declared_placeholders() {
        use Placeholder::*;
        assert_eq!(TemplateId::Cls.placeholders().unwrap(), [Modality, LabelSet]);
        assert_eq!(TemplateId::Mrg.placeholders().unwrap(), []);
        assert_eq!(TemplateId::Vqa.placeholders().unwrap(), [Question]);
        assert_eq!(TemplateId::Dgb.placeholders().unwrap(), [Modality, Disease]);
        assert_eq!(TemplateId::Gsco(0).placeholders().unwrap(), [Modality, LabelSet, Rad, Moed]);
        assert_eq!(TemplateId::Gsco(1).placeholders().unwrap(), [Modality, Rad, Moed, LabelSet]);
    }

    #[test]
    fn bodies_are_canonical() {
        for t in TemplateId::ALL {
            let body = t.body().unwrap();
            assert!(!body.contains('\r'));
            assert!(!body.ends_with('\n'));
            for line in body.lines() {
                assert_eq!(line, line.trim_end(), "{t}: trailing whitespace");
            }
        }
    }

    #[test]
    fn sentinel_counts_match_placeholder_counts() {
        let b = sentinels();
        for t in TemplateId::ALL {
            let body = t.body().unwrap();
            let out = render_prompt(t, &b).unwrap();
            assert!(!out.contains(['{', '}']));
            for p in Placeholder::ALL {
                let slot = format!("{{{}}}", p.name());
                let sentinel = format!("«{}»", p.name());
                assert_eq!(out.matches(&sentinel).count(), body.matches(&slot).count(), "{t} {p:?}");
            }
        }
    }

    #[test]
    fn rendering_is_pure() {
        let b = sentinels();
        for t in TemplateId::ALL {
            assert_eq!(render_prompt(t, &b), render_prompt(t, &b));
        }
    }
}
