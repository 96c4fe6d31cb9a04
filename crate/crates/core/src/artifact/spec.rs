use serde::{Deserialize, Serialize};

use super::markdown::{self, Section};
use super::ArtifactError;

const KNOWN: [&str; 3] = ["Requirements", "Acceptance Criteria", "Clarifications"];

/// SPEC.md: requirements and acceptance criteria for one feature.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpecDoc {
    pub title: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub preamble: String,
    pub requirements: Vec<String>,
    pub acceptance_criteria: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarifications: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<Section>,
}

impl SpecDoc {
    pub fn parse(text: &str) -> Result<Self, ArtifactError> {
        let outline = markdown::outline(text, "# Spec")?;
        let title = markdown::title_suffix(&outline.title, "spec")
            .ok_or(ArtifactError::MissingHeading("# Spec"))?;
        let kinds = markdown::classify_sections(&outline.sections, &KNOWN)?;

        let mut doc = SpecDoc {
            title,
            preamble: markdown::join_body(&outline.preamble),
            ..Default::default()
        };
        let mut seen = [false; 3];
        for (raw, kind) in outline.sections.iter().zip(kinds) {
            match kind {
                Some(0) => doc.requirements = markdown::bullets(&raw.lines),
                Some(1) => doc.acceptance_criteria = markdown::bullets(&raw.lines),
                Some(2) => doc.clarifications = Some(markdown::bullets(&raw.lines)),
                _ => doc.extra.push(markdown::extra_section(raw)),
            }
            if let Some(k) = kind {
                seen[k] = true;
            }
        }
        if !seen[0] {
            return Err(ArtifactError::MissingHeading("## Requirements"));
        }
        if !seen[1] {
            return Err(ArtifactError::MissingHeading("## Acceptance Criteria"));
        }
        Ok(doc)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.requirements.is_empty() {
            v.push("requirements list is empty".to_string());
        }
        if self.acceptance_criteria.is_empty() {
            v.push("acceptance criteria list is empty".to_string());
        }
        let all = self
            .requirements
            .iter()
            .chain(&self.acceptance_criteria)
            .chain(self.clarifications.iter().flatten());
        for item in all {
            if !markdown::is_clean_line(item) {
                v.push(format!("item is not a single non-blank line: {item:?}"));
            }
        }
        if !markdown::is_clean_title(&self.title) {
            v.push(format!("title {:?} is not one trimmed line", self.title));
        }
        if !self.preamble.is_empty() && !markdown::is_clean_block(&self.preamble) {
            v.push("preamble would not read back unchanged".to_string());
        }
        v.extend(markdown::extra_violations(&self.extra, &KNOWN));
        v
    }

    pub fn serialize(&self) -> Result<String, ArtifactError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(ArtifactError::Invariant(v.join("; ")));
        }
        let mut out = if self.title.is_empty() {
            "# Spec\n".to_string()
        } else {
            format!("# Spec: {}\n", self.title)
        };
        if !self.preamble.is_empty() {
            out.push('\n');
            out.push_str(&self.preamble);
            out.push('\n');
        }
        let mut list = |heading: &str, items: &[String]| {
            out.push_str(&format!("\n## {heading}\n\n"));
            for i in items {
                out.push_str(&format!("- {i}\n"));
            }
        };
        list("Requirements", &self.requirements);
        list("Acceptance Criteria", &self.acceptance_criteria);
        if let Some(c) = &self.clarifications {
            list("Clarifications", c);
        }
        markdown::write_extras(&mut out, &self.extra);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_the_grammar() {
        let text = "# Spec: Add --json flag for JSON output\n\n## Requirements\n- Add a `--json` flag\n- Keep text output default\n\n## Acceptance Criteria\n- `--json` prints valid JSON\n\n## Notes\nfree prose\nkept\n";
        let d = SpecDoc::parse(text).unwrap();
        assert_eq!(d.title, "Add --json flag for JSON output");
        assert_eq!(d.requirements.len(), 2);
        assert_eq!(d.acceptance_criteria, vec!["`--json` prints valid JSON"]);
        assert_eq!(d.extra[0].heading, "Notes");
        assert_eq!(d.extra[0].body, "free prose\nkept");
        assert_eq!(SpecDoc::parse(&d.serialize().unwrap()).unwrap(), d);
    }

    #[test]
    fn long_title_round_trips_to_identical_text() {
        let d = SpecDoc {
            title: "Add --json flag for JSON output".into(),
            requirements: vec!["Add --json flag for JSON output".into()],
            acceptance_criteria: vec!["Running with --json emits JSON".into()],
            ..Default::default()
        };
        let text = d.serialize().unwrap();
        let again = SpecDoc::parse(&text).unwrap().serialize().unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn missing_heading_is_named() {
        let err = SpecDoc::parse("# Spec\n## Requirements\n- a\n").unwrap_err();
        assert_eq!(err, ArtifactError::MissingHeading("## Acceptance Criteria"));
        let err = SpecDoc::parse("# Plan\n").unwrap_err();
        assert_eq!(err, ArtifactError::MissingHeading("# Spec"));
    }

    #[test]
    fn headings_are_case_insensitive_and_ordered() {
        let ok =
            SpecDoc::parse("# SPEC\n## requirements\n- a\n## ACCEPTANCE CRITERIA\n- b\n").unwrap();
        assert_eq!(ok.requirements, vec!["a"]);
        let err = SpecDoc::parse("# Spec\n## Acceptance Criteria\n- b\n## Requirements\n- a\n");
        assert!(matches!(err, Err(ArtifactError::OutOfOrder { .. })));
    }

    #[test]
    fn empty_requirements_refused() {
        let d = SpecDoc {
            acceptance_criteria: vec!["x".into()],
            ..Default::default()
        };
        assert!(matches!(d.serialize(), Err(ArtifactError::Invariant(_))));
        // but the parser still produces it so validators can report it
        let parsed =
            SpecDoc::parse("# Spec\n## Requirements\n## Acceptance Criteria\n- b\n").unwrap();
        assert!(parsed.requirements.is_empty());
    }

    fn arb_spec() -> impl Strategy<Value = SpecDoc> {
        let word = "[a-zA-Z0-9`|*#()é/.-]{1,8}";
        let line = proptest::collection::vec(word, 1..6).prop_map(|w| w.join(" "));
        let list = |min| proptest::collection::vec(line.clone(), min..5);
        (
            line.clone(),
            list(1),
            list(1),
            proptest::option::of(list(0)),
            any::<bool>(),
        )
            .prop_map(
                |(title, requirements, acceptance_criteria, clarifications, titled)| SpecDoc {
                    title: if titled && !title.starts_with(['-', ':']) {
                        title
                    } else {
                        String::new()
                    },
                    preamble: String::new(),
                    requirements,
                    acceptance_criteria,
                    clarifications,
                    extra: Vec::new(),
                },
            )
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(doc in arb_spec()) {
            let text = doc.serialize().unwrap();
            prop_assert_eq!(SpecDoc::parse(&text).unwrap(), doc);
        }
    }
}
