//! Prompt templates and their assembly.
//!
//! A template is UTF-8 text with `{{placeholder}}` slots. Exactly four
//! placeholders are recognised and all four must appear: `task_description`,
//! `definitions`, `demos`, `target`. Substitution is single-pass, so values
//! containing braces are inserted verbatim.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::demo_store::{Demonstration, FactType, Polarity, Stage, ALL_SETS};
use crate::io::sha256_fields;
use crate::llm_gateway::{stage_marker, wrap_block};
use crate::protocol::{facts_block, verdict_line, CASE_A_BLOCK, CASE_B_BLOCK, TARGET_BLOCK};

pub const PLACEHOLDERS: [&str; 4] = ["task_description", "definitions", "demos", "target"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("cannot read template {path}: {message}")]
    Missing { path: PathBuf, message: String },
    #[error("template {name} uses unknown placeholder {{{{{placeholder}}}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name} lacks placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("template {name} has an unterminated placeholder")]
    Unterminated { name: String },
}

fn template_name(stage: Stage, fact_type: FactType) -> String {
    format!(
        "{}_{}.txt",
        stage.code().to_lowercase(),
        fact_type.code().to_lowercase()
    )
}

/// The four stage templates plus shared task descriptions and definitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<(Stage, FactType), String>,
    tasks: BTreeMap<Stage, String>,
    definitions: BTreeMap<FactType, String>,
    pub system_text: String,
}

macro_rules! asset {
    ($name:literal) => {
        include_str!(concat!("../../assets/templates/", $name))
    };
}

pub const DEFAULT_SYSTEM_TEXT: &str =
    "You are a careful legal analyst. Follow the requested output format exactly.";

impl Default for TemplateSet {
    fn default() -> Self {
        use FactType::*;
        use Stage::*;
        let set = Self {
            templates: BTreeMap::from([
                ((FactExtraction, Material), asset!("fe_mf.txt").to_owned()),
                ((FactExtraction, Legal), asset!("fe_lf.txt").to_owned()),
                ((FactAnnotation, Material), asset!("fa_mf.txt").to_owned()),
                ((FactAnnotation, Legal), asset!("fa_lf.txt").to_owned()),
            ]),
            tasks: BTreeMap::from([
                (FactExtraction, asset!("task_fe.txt").trim_end().to_owned()),
                (FactAnnotation, asset!("task_fa.txt").trim_end().to_owned()),
            ]),
            definitions: BTreeMap::from([
                (Material, asset!("def_mf.txt").trim_end().to_owned()),
                (Legal, asset!("def_lf.txt").trim_end().to_owned()),
            ]),
            system_text: DEFAULT_SYSTEM_TEXT.to_owned(),
        };
        set.validate().expect("bundled templates are valid");
        set
    }
}

impl TemplateSet {
    /// Loads `{fe,fa}_{mf,lf}.txt`, `task_{fe,fa}.txt` and `def_{mf,lf}.txt`
    /// from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| TemplateError::Missing {
                path,
                message: e.to_string(),
            })
        };
        let mut templates = BTreeMap::new();
        for (s, f) in ALL_SETS {
            templates.insert((s, f), read(&template_name(s, f))?);
        }
        let set = Self {
            templates,
            tasks: BTreeMap::from([
                (Stage::FactExtraction, read("task_fe.txt")?.trim_end().to_owned()),
                (Stage::FactAnnotation, read("task_fa.txt")?.trim_end().to_owned()),
            ]),
            definitions: BTreeMap::from([
                (FactType::Material, read("def_mf.txt")?.trim_end().to_owned()),
                (FactType::Legal, read("def_lf.txt")?.trim_end().to_owned()),
            ]),
            system_text: DEFAULT_SYSTEM_TEXT.to_owned(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_template(mut self, stage: Stage, fact_type: FactType, text: impl Into<String>) -> Self {
        self.templates.insert((stage, fact_type), text.into());
        self
    }

    pub fn template(&self, stage: Stage, fact_type: FactType) -> &str {
        &self.templates[&(stage, fact_type)]
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for ((s, f), text) in &self.templates {
            check_placeholders(&template_name(*s, *f), text)?;
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut fields: Vec<&[u8]> = vec![self.system_text.as_bytes()];
        fields.extend(self.templates.values().map(|t| t.as_bytes()));
        fields.extend(self.tasks.values().map(|t| t.as_bytes()));
        fields.extend(self.definitions.values().map(|t| t.as_bytes()));
        sha256_fields(fields)
    }

    /// Fills the (stage, fact type) template. The result starts with the
    /// stage marker line.
    pub fn assemble(
        &self,
        stage: Stage,
        fact_type: FactType,
        demos: &[&Demonstration],
        target: &str,
    ) -> Result<String, TemplateError> {
        let name = template_name(stage, fact_type);
        let template = self.template(stage, fact_type);
        let demos = render_demos(demos);
        let body = substitute(&name, template, |key| match key {
            "task_description" => Some(self.tasks[&stage].as_str()),
            "definitions" => Some(self.definitions[&fact_type].as_str()),
            "demos" => Some(demos.as_str()),
            "target" => Some(target),
            _ => None,
        })?;
        Ok(format!("{}\n{body}", stage_marker(stage, fact_type)))
    }
}

/// Free-function form of [`TemplateSet::assemble`].
pub fn assemble_prompt(
    templates: &TemplateSet,
    stage: Stage,
    fact_type: FactType,
    demos: &[&Demonstration],
    target: &str,
) -> Result<String, TemplateError> {
    templates.assemble(stage, fact_type, demos, target)
}

/// Placeholder names in order of appearance.
fn scan_placeholders<'a>(name: &str, text: &'a str) -> Result<Vec<(usize, usize, &'a str)>, TemplateError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find("{{") {
        let start = pos + off;
        let end = text[start..]
            .find("}}")
            .map(|e| start + e)
            .ok_or_else(|| TemplateError::Unterminated { name: name.to_owned() })?;
        out.push((start, end + 2, text[start + 2..end].trim()));
        pos = end + 2;
    }
    Ok(out)
}

fn check_placeholders(name: &str, text: &str) -> Result<(), TemplateError> {
    let found = scan_placeholders(name, text)?;
    for (_, _, key) in &found {
        if !PLACEHOLDERS.contains(key) {
            return Err(TemplateError::UnknownPlaceholder {
                name: name.to_owned(),
                placeholder: (*key).to_owned(),
            });
        }
    }
    for key in PLACEHOLDERS {
        if !found.iter().any(|(_, _, k)| *k == key) {
            return Err(TemplateError::MissingPlaceholder {
                name: name.to_owned(),
                placeholder: key.to_owned(),
            });
        }
    }
    Ok(())
}

fn substitute<'v>(
    name: &str,
    template: &str,
    value: impl Fn(&str) -> Option<&'v str>,
) -> Result<String, TemplateError> {
    check_placeholders(name, template)?;
    let mut out = String::with_capacity(template.len() * 2);
    let mut last = 0;
    for (start, end, key) in scan_placeholders(name, template)? {
        out.push_str(&template[last..start]);
        out.push_str(value(key).expect("placeholder checked"));
        last = end;
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Serializes demonstrations in the given order, showing the expected
/// response format for their stage.
pub fn render_demos(demos: &[&Demonstration]) -> String {
    let mut out = String::new();
    for (i, d) in demos.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match d.stage {
            Stage::FactExtraction => {
                out.push_str(&format!(
                    "Example {}\nInput:\n{}\nOutput:\n{}\n",
                    i + 1,
                    d.input_text.trim(),
                    facts_block(d.exemplar_output.trim())
                ));
            }
            Stage::FactAnnotation => {
                let relevant = d.polarity == Some(Polarity::Relevant);
                out.push_str(&format!(
                    "Example {} ({})\nInput:\n{}\nAnalysis:\n{}\n{}\n",
                    i + 1,
                    if relevant { "relevant" } else { "irrelevant" },
                    d.input_text.trim(),
                    d.exemplar_output.trim(),
                    verdict_line(relevant)
                ));
            }
        }
    }
    out
}

pub fn render_extraction_target(text: &str) -> String {
    wrap_block(TARGET_BLOCK, text)
}

pub fn render_pair_target(a: &str, b: &str) -> String {
    format!("Case A:\n{}\nCase B:\n{}", wrap_block(CASE_A_BLOCK, a), wrap_block(CASE_B_BLOCK, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fe_demo(id: &str, out: &str) -> Demonstration {
        Demonstration {
            id: id.into(),
            stage: Stage::FactExtraction,
            fact_type: FactType::Material,
            input_text: format!("input {id}"),
            exemplar_output: out.into(),
            polarity: None,
        }
    }

    #[test]
    fn fe_prompt_contains_demos_in_order_then_target() {
        let t = TemplateSet::default();
        let d1 = fe_demo("d1", "FIRST-OUTPUT");
        let d2 = fe_demo("d2", "SECOND-OUTPUT");
        let p = t
            .assemble(
                Stage::FactExtraction,
                FactType::Material,
                &[&d1, &d2],
                &render_extraction_target("THE-TARGET"),
            )
            .unwrap();
        assert!(p.starts_with("#STAGE:FE_MF\n"));
        let i1 = p.find("FIRST-OUTPUT").unwrap();
        let i2 = p.find("SECOND-OUTPUT").unwrap();
        let it = p.find("THE-TARGET").unwrap();
        assert!(i1 < i2 && i2 < it);
        assert!(!p.contains("{{"));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let t = TemplateSet::default().with_template(
            Stage::FactExtraction,
            FactType::Material,
            "{{task_description}} {{definitions}} {{demos}} {{target}} {{foo}}",
        );
        let err = t
            .assemble(Stage::FactExtraction, FactType::Material, &[], "x")
            .unwrap_err();
        assert_eq!(
            err,
            TemplateError::UnknownPlaceholder {
                name: "fe_mf.txt".into(),
                placeholder: "foo".into()
            }
        );
        assert!(t.validate().is_err());
    }

    #[test]
    fn missing_placeholder_rejected() {
        let t = TemplateSet::default().with_template(
            Stage::FactAnnotation,
            FactType::Legal,
            "{{task_description}} {{definitions}} {{target}}",
        );
        assert!(matches!(
            t.assemble(Stage::FactAnnotation, FactType::Legal, &[], "x"),
            Err(TemplateError::MissingPlaceholder { ref placeholder, .. }) if placeholder == "demos"
        ));
    }

    #[test]
    fn empty_demo_list_is_valid() {
        let t = TemplateSet::default();
        let p = t
            .assemble(Stage::FactAnnotation, FactType::Material, &[], &render_pair_target("a", "b"))
            .unwrap();
        assert!(p.contains("<<<CASE_A\na\nCASE_A>>>"));
        assert!(!p.contains("Example 1"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = TemplateSet::default();
        let p = t
            .assemble(Stage::FactExtraction, FactType::Legal, &[], "literal {{demos}} text")
            .unwrap();
        assert!(p.contains("literal {{demos}} text"));
    }

    #[test]
    fn fa_demos_show_verdict_lines() {
        let d = Demonstration {
            id: "x".into(),
            stage: Stage::FactAnnotation,
            fact_type: FactType::Legal,
            input_text: "pair".into(),
            exemplar_output: "reasoning".into(),
            polarity: Some(Polarity::Irrelevant),
        };
        let r = render_demos(&[&d]);
        assert!(r.contains("(irrelevant)"));
        assert!(r.contains("VERDICT: IRRELEVANT"));
    }

    #[test]
    fn load_dir_reports_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            TemplateSet::load_dir(dir.path()),
            Err(TemplateError::Missing { .. })
        ));
    }

    #[test]
    fn hash_changes_with_template() {
        let a = TemplateSet::default();
        let b = a.clone().with_template(
            Stage::FactExtraction,
            FactType::Material,
            "{{task_description}}{{definitions}}{{demos}}{{target}}",
        );
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
