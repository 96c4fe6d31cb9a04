//! Heading-level scanner shared by the three artifact parsers.

use serde::{Deserialize, Serialize};

use super::ArtifactError;

/// An unrecognised `##` section, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub body: String,
}

#[derive(Debug)]
pub(crate) struct RawSection<'a> {
    pub heading: String,
    /// 1-based line number of the heading.
    pub line: usize,
    pub lines: Vec<(usize, &'a str)>,
}

#[derive(Debug)]
pub(crate) struct Outline<'a> {
    pub title: String,
    pub preamble: Vec<(usize, &'a str)>,
    pub sections: Vec<RawSection<'a>>,
}

fn heading(line: &str, level: usize) -> Option<&str> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if hashes != level {
        return None;
    }
    let rest = &line[hashes..];
    if rest.is_empty() {
        return Some("");
    }
    if !rest.starts_with([' ', '\t']) {
        return None;
    }
    Some(rest.trim())
}

/// Splits a document into its `#` title, preamble and `##` sections.
/// Headings inside fenced code blocks are ignored.
pub(crate) fn outline<'a>(text: &'a str, doc: &'static str) -> Result<Outline<'a>, ArtifactError> {
    let mut title: Option<String> = None;
    let mut preamble = Vec::new();
    let mut sections: Vec<RawSection<'a>> = Vec::new();
    let mut in_fence = false;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim_end();
        if is_fence(trimmed) {
            in_fence = !in_fence;
        }
        if !in_fence {
            if title.is_none() {
                if let Some(t) = heading(trimmed, 1) {
                    title = Some(t.to_string());
                    continue;
                }
                if trimmed.trim().is_empty() {
                    continue;
                }
                return Err(ArtifactError::MissingHeading(doc));
            }
            if let Some(h) = heading(trimmed, 2) {
                sections.push(RawSection {
                    heading: h.to_string(),
                    line: lineno,
                    lines: Vec::new(),
                });
                continue;
            }
        }
        match sections.last_mut() {
            Some(s) => s.lines.push((lineno, trimmed)),
            None => preamble.push((lineno, trimmed)),
        }
    }

    let title = title.ok_or(ArtifactError::MissingHeading(doc))?;
    Ok(Outline {
        title,
        preamble,
        sections,
    })
}

/// Matches `# Spec`, `# Spec: title`, `# spec - title`. Returns the title
/// suffix when the keyword matches.
pub(crate) fn title_suffix(title: &str, keyword: &str) -> Option<String> {
    let lower = title.to_ascii_lowercase();
    if !lower.starts_with(keyword) {
        return None;
    }
    let rest = &title[keyword.len()..];
    if !(rest.is_empty() || rest.starts_with([':', ' ', '-', '\t'])) {
        return None;
    }
    Some(
        rest.trim_start_matches([':', '-', ' ', '\t'])
            .trim()
            .to_string(),
    )
}

pub(crate) fn join_body(lines: &[(usize, &str)]) -> String {
    let texts: Vec<&str> = lines.iter().map(|(_, l)| *l).collect();
    let start = texts.iter().position(|l| !l.trim().is_empty());
    let end = texts.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => texts[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Bulleted items. Non-bullet prose after a bullet is folded into it;
/// prose before the first bullet is dropped.
pub(crate) fn bullets(lines: &[(usize, &str)]) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for (_, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(item) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
            items.push(item.trim().to_string());
        } else if let Some(last) = items.last_mut() {
            last.push(' ');
            last.push_str(t);
        }
    }
    items
}

/// Fixed-order matcher over known section names. Returns the index into
/// `known` for each section, or `None` for unknown sections.
pub(crate) fn classify_sections(
    sections: &[RawSection<'_>],
    known: &[&'static str],
) -> Result<Vec<Option<usize>>, ArtifactError> {
    let mut last: Option<usize> = None;
    let mut seen = vec![false; known.len()];
    let mut out = Vec::with_capacity(sections.len());
    for s in sections {
        let idx = known
            .iter()
            .position(|k| k.eq_ignore_ascii_case(s.heading.trim()));
        if let Some(i) = idx {
            if seen[i] {
                return Err(ArtifactError::Malformed {
                    line: s.line,
                    message: format!("duplicate section `{}`", known[i]),
                });
            }
            if last.is_some_and(|l| l > i) {
                return Err(ArtifactError::OutOfOrder {
                    heading: known[i],
                    line: s.line,
                });
            }
            seen[i] = true;
            last = Some(i);
        }
        out.push(idx);
    }
    Ok(out)
}

pub(crate) fn write_extras(out: &mut String, extra: &[Section]) {
    for s in extra {
        out.push_str(&format!("\n## {}\n", s.heading));
        if !s.body.is_empty() {
            out.push('\n');
            out.push_str(&s.body);
            out.push('\n');
        }
    }
}

pub(crate) fn extra_section(raw: &RawSection<'_>) -> Section {
    Section {
        heading: raw.heading.clone(),
        body: join_body(&raw.lines),
    }
}

/// Single-line, non-empty, no leading/trailing whitespace.
pub(crate) fn is_clean_line(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\n', '\r']) && s.trim() == s
}

/// A title survives `# Doc: title` only if the separator trim leaves it intact.
pub(crate) fn is_clean_title(s: &str) -> bool {
    s.is_empty() || (is_clean_line(s) && !s.starts_with([':', '-']))
}

fn is_fence(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("```") || t.starts_with("~~~")
}

/// Free text that reads back unchanged as a preamble or section body:
/// trimmed, no carriage returns or trailing blanks, balanced fences and
/// no `##` heading outside a fence.
pub(crate) fn is_clean_block(s: &str) -> bool {
    if s.trim() != s || s.contains('\r') {
        return false;
    }
    let mut in_fence = false;
    for line in s.split('\n') {
        if line.trim_end() != line {
            return false;
        }
        if is_fence(line) {
            in_fence = !in_fence;
        } else if !in_fence && heading(line, 2).is_some() {
            return false;
        }
    }
    !in_fence
}

/// Violations for unrecognised sections that would not read back as written.
pub(crate) fn extra_violations(extra: &[Section], known: &[&str]) -> Vec<String> {
    let mut v = Vec::new();
    for s in extra {
        if !is_clean_line(&s.heading) || known.iter().any(|k| k.eq_ignore_ascii_case(&s.heading)) {
            v.push(format!("invalid section heading {:?}", s.heading));
        }
        if !is_clean_block(&s.body) {
            v.push(format!(
                "section `{}` body would not read back unchanged",
                s.heading
            ));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_headings_are_not_structure() {
        let text = "# Spec\n## Requirements\n```\n## Not a heading\n```\n- a\n";
        let o = outline(text, "# Spec").unwrap();
        assert_eq!(o.sections.len(), 1);
        assert_eq!(o.sections[0].lines.len(), 4);
    }

    #[test]
    fn title_keyword_matching() {
        assert_eq!(title_suffix("Spec", "spec").as_deref(), Some(""));
        assert_eq!(
            title_suffix("SPEC: Add flag", "spec").as_deref(),
            Some("Add flag")
        );
        assert_eq!(title_suffix("Specification", "spec"), None);
        assert_eq!(title_suffix("Plan", "spec"), None);
    }

    #[test]
    fn bullets_fold_continuations() {
        let lines = vec![(1, "intro"), (2, "- one"), (3, "  more"), (4, "* two")];
        assert_eq!(
            bullets(&lines),
            vec!["one more".to_string(), "two".to_string()]
        );
    }

    #[test]
    fn text_before_title_is_rejected() {
        assert!(matches!(
            outline("hello\n# Spec\n", "# Spec"),
            Err(ArtifactError::MissingHeading("# Spec"))
        ));
    }

    #[test]
    fn clean_blocks() {
        assert!(is_clean_block("a\n\n- b\n### c"));
        assert!(is_clean_block("```\n## fenced\n```"));
        assert!(!is_clean_block("a \nb"));
        assert!(!is_clean_block("a\n## b"));
        assert!(!is_clean_block("```\nopen"));
        assert!(!is_clean_block(" a"));
        assert!(!is_clean_block("a\r\nb"));
    }

    #[test]
    fn clean_titles() {
        assert!(is_clean_title(""));
        assert!(is_clean_title("Add a flag"));
        assert!(!is_clean_title(": lead"));
        assert!(!is_clean_title("- lead"));
        assert!(!is_clean_title("trail "));
    }
}
