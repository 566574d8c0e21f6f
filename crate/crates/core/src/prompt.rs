//! Chat templates, prompt assembly and JSON export.
//!
//! Templates are TOML files holding an ordered `[[messages]]` list. Payloads
//! travel in tagged blocks (`<source>`, `<draft>`, `<context>`); the model
//! answers in `<csource>` and `<fsource>` blocks.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drafter::{self, AnnotationKind, DraftArtifact};
use crate::error::{Error, Result};
use crate::fortran::{SourceFile, SourceForm};
use crate::indexer::ConstructMap;

/// Tagged-block helpers shared by assembly, extraction and the mock backend.
pub mod tags {
    pub const SOURCE: &str = "source";
    pub const DRAFT: &str = "draft";
    pub const CONTEXT: &str = "context";
    pub const CSOURCE: &str = "csource";
    pub const FSOURCE: &str = "fsource";

    pub fn open(tag: &str) -> String {
        format!("<{tag}>")
    }

    pub fn close(tag: &str) -> String {
        format!("</{tag}>")
    }

    /// `<tag>\n{payload}\n</tag>`
    pub fn wrap(tag: &str, payload: &str) -> String {
        format!("<{tag}>\n{payload}\n</{tag}>")
    }

    /// Contents of every complete `<tag>…</tag>` block, in order. One
    /// newline directly after the opening tag and one directly before the
    /// closing tag belong to the wrapping, not the payload.
    pub fn blocks<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
        let (open, close) = (open(tag), close(tag));
        let mut out = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find(&open) {
            let body = &rest[start + open.len()..];
            let Some(end) = body.find(&close) else { break };
            let mut inner = &body[..end];
            inner = inner.strip_prefix('\n').unwrap_or(inner);
            inner = inner.strip_suffix('\n').unwrap_or(inner);
            out.push(inner);
            rest = &body[end + close.len()..];
        }
        out
    }

    /// First opening or closing literal of any of `tags` found in `payload`.
    pub fn find_literal(payload: &str, tags: &[&str]) -> Option<String> {
        tags.iter()
            .flat_map(|t| [open(t), close(t)])
            .filter_map(|lit| payload.find(&lit).map(|at| (at, lit)))
            .min()
            .map(|(_, lit)| lit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }

    fn parse(s: &str) -> Option<ChatRole> {
        match s {
            "system" => Some(ChatRole::System),
            "user" => Some(ChatRole::User),
            "assistant" => Some(ChatRole::Assistant),
            _ => None,
        }
    }
}

impl fmt::Display for ChatRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTemplate {
    pub name: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub messages: Vec<ChatMessage>,
    /// The translated file, or the first inspected file.
    pub source_file: PathBuf,
}

impl AssembledPrompt {
    /// The appended payload message.
    pub fn payload(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn to_json(&self) -> String {
        messages_to_json(&self.messages)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    name: Option<String>,
    messages: Vec<RawMessage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    role: String,
    content: String,
}

/// Loads and validates a TOML chat template.
pub fn load_template(path: &Path) -> Result<ChatTemplate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_template(&text, &stem).map_err(|message| Error::Template { path: path.to_owned(), message })
}

/// Parses template text; errors name the offending key path.
pub fn parse_template(text: &str, default_name: &str) -> std::result::Result<ChatTemplate, String> {
    let raw: RawTemplate = toml::from_str(text).map_err(|e| e.to_string().trim_end().to_owned())?;
    if raw.messages.is_empty() {
        return Err("messages: at least one message is required".into());
    }
    let mut messages = Vec::with_capacity(raw.messages.len());
    for (i, m) in raw.messages.into_iter().enumerate() {
        let role = ChatRole::parse(&m.role).ok_or_else(|| {
            format!("messages[{i}].role: unknown role `{}` (expected system, user or assistant)", m.role)
        })?;
        if m.content.trim().is_empty() {
            return Err(format!("messages[{i}].content: must not be empty"));
        }
        let expected = match i {
            0 => ChatRole::System,
            i if i % 2 == 1 => ChatRole::User,
            _ => ChatRole::Assistant,
        };
        if role != expected {
            return Err(match (i, role) {
                (0, _) => format!("messages[0].role: first message must be `system`, found `{role}`"),
                (_, ChatRole::System) => format!("messages[{i}].role: duplicate `system` message"),
                _ => format!(
                    "messages[{i}].role: expected `{expected}` (examples alternate user/assistant), found `{role}`"
                ),
            });
        }
        messages.push(ChatMessage { role, content: m.content });
    }
    if messages.len() > 1 && messages.len() % 2 == 0 {
        let i = messages.len() - 1;
        return Err(format!("messages[{i}]: example `user` message has no `assistant` reply"));
    }
    Ok(ChatTemplate { name: raw.name.unwrap_or_else(|| default_name.to_owned()), messages })
}

/// Instruction placed after the payload blocks of a translate prompt.
pub const TRANSLATE_INSTRUCTION: &str = "Translate the Fortran source to C++ following the conversion rules. \
Use the draft as the starting point and respect every `// scribe:` annotation. \
Reply with the C++ code enclosed in <csource>...</csource> and the Fortran-C interface \
enclosed in <fsource>...</fsource>.";

fn check_payload(tag: &'static str, payload: &str, reserved: &[&str]) -> Result<()> {
    match tags::find_literal(payload, reserved) {
        Some(literal) => Err(Error::PayloadCollision { tag, literal }),
        None => Ok(()),
    }
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Template messages plus one user message carrying the source and draft.
pub fn assemble_translate_prompt(
    template: &ChatTemplate,
    source_text: &str,
    draft: &DraftArtifact,
) -> Result<AssembledPrompt> {
    let reserved = [tags::SOURCE, tags::DRAFT];
    check_payload(tags::SOURCE, source_text, &reserved)?;
    check_payload(tags::DRAFT, &draft.draft_text, &reserved)?;
    let content = format!(
        "Fortran file: {}\n{}\n{}\n{}",
        file_label(&draft.source_file),
        tags::wrap(tags::SOURCE, source_text),
        tags::wrap(tags::DRAFT, &draft.draft_text),
        TRANSLATE_INSTRUCTION
    );
    let mut messages = template.messages.clone();
    messages.push(ChatMessage::new(ChatRole::User, content));
    Ok(AssembledPrompt { messages, source_file: draft.source_file.clone() })
}

pub const INSPECT_SYSTEM: &str = "You are assisting a developer who is studying a legacy Fortran code base. \
Answer the query about the files in <source> blocks. The <context> block lists facts taken from the \
project index: the constructs each file defines and where the procedures and modules it references \
are defined. Rely on that context for anything outside the given files, and say so when the answer \
is not determined by the files or the context.";

/// Context lines for one file: its own constructs and index-resolved
/// references. Unresolved names are left out so that everything listed is
/// backed by the index.
fn context_for(path: &Path, text: &str, cmap: &ConstructMap) -> String {
    let Some(file_ref) = cmap.file_ref(path).filter(|f| cmap.contains_file(f)) else {
        return format!("file: {} (not indexed)\n", path.display());
    };
    let mut out = format!("file: {}\n", file_ref.path());
    for (kind, name) in cmap.constructs_in(&file_ref) {
        out.push_str(&format!("  defines {kind} {name}\n"));
    }
    let form = SourceForm::from_path(path).unwrap_or(SourceForm::Free);
    let source = SourceFile::parse(text, form);
    let refs = drafter::detect_statement_functions(&source, cmap)
        .into_iter()
        .chain(drafter::annotate_external_uses(&source, cmap));
    for a in refs {
        let (Some(kind), Some(file)) = (a.kind.construct_kind(), a.resolved_file) else {
            continue;
        };
        debug_assert!(a.kind != AnnotationKind::StatementFunctionCandidate);
        out.push_str(&format!("  references {kind} {} defined in {file}\n", a.name.to_ascii_lowercase()));
    }
    out
}

/// Built-in system message plus one user message with a context block, one
/// `<source>` block per file in input order, and the query.
pub fn assemble_inspect_prompt(
    query: &str,
    files: &[(PathBuf, String)],
    cmap: &ConstructMap,
) -> Result<AssembledPrompt> {
    let reserved = [tags::SOURCE, tags::CONTEXT];
    let mut context = String::new();
    let mut sources = String::new();
    for (path, text) in files {
        check_payload(tags::SOURCE, text, &reserved)?;
        context.push_str(&context_for(path, text, cmap));
        sources.push_str(&format!("File: {}\n{}\n", path.display(), tags::wrap(tags::SOURCE, text)));
    }
    let context = context.strip_suffix('\n').unwrap_or(&context);
    let content = format!("{}\n{sources}Query: {query}", tags::wrap(tags::CONTEXT, context));
    Ok(AssembledPrompt {
        messages: vec![
            ChatMessage::new(ChatRole::System, INSPECT_SYSTEM),
            ChatMessage::new(ChatRole::User, content),
        ],
        source_file: files.first().map(|(p, _)| p.clone()).unwrap_or_default(),
    })
}

#[derive(Serialize, Deserialize)]
struct PromptDocument {
    messages: Vec<ChatMessage>,
}

pub fn messages_to_json(messages: &[ChatMessage]) -> String {
    let doc = PromptDocument { messages: messages.to_vec() };
    let mut text = serde_json::to_string_pretty(&doc).expect("messages serialize");
    text.push('\n');
    text
}

pub fn messages_from_json(text: &str) -> std::result::Result<Vec<ChatMessage>, String> {
    serde_json::from_str::<PromptDocument>(text).map(|d| d.messages).map_err(|e| e.to_string())
}

/// Writes `{"messages":[{"role":…,"content":…},…]}` to `path`.
pub fn export_json(prompt: &AssembledPrompt, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, prompt.to_json()).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_json`].
pub fn read_json(path: &Path) -> Result<Vec<ChatMessage>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    messages_from_json(&text).map_err(|message| Error::PromptFormat { path: path.to_owned(), message })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[messages]]
role = "system"
content = "rules"

[[messages]]
role = "user"
content = "example in"

[[messages]]
role = "assistant"
content = "example out"
"#;

    #[test]
    fn minimal_template_keeps_order() {
        let t = parse_template(MINIMAL, "seed").unwrap();
        assert_eq!(t.name, "seed");
        let roles: Vec<_> = t.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [ChatRole::System, ChatRole::User, ChatRole::Assistant]);
    }

    #[test]
    fn template_errors_name_key_paths() {
        let no_system = "[[messages]]\nrole = \"user\"\ncontent = \"x\"\n";
        assert!(parse_template(no_system, "t").unwrap_err().starts_with("messages[0].role"));
        let bad_role = MINIMAL.replace("\"assistant\"", "\"bot\"");
        assert!(parse_template(&bad_role, "t").unwrap_err().starts_with("messages[2].role: unknown role"));
        let empty = MINIMAL.replace("\"example out\"", "\"  \"");
        assert!(parse_template(&empty, "t").unwrap_err().starts_with("messages[2].content"));
        let dup = MINIMAL.replace("\"user\"", "\"system\"");
        assert!(parse_template(&dup, "t").unwrap_err().contains("duplicate `system`"));
        let dangling = format!("{MINIMAL}\n[[messages]]\nrole = \"user\"\ncontent = \"q\"\n");
        assert!(parse_template(&dangling, "t").unwrap_err().starts_with("messages[3]"));
        assert!(parse_template("messages = []", "t").is_err());
        assert!(parse_template("[[messages]]\nrole = \"system\"\n", "t").is_err());
    }

    #[test]
    fn blocks_strip_one_wrapping_newline() {
        for payload in ["", "\n", "a\nb", "\n\nx\n\n", "trailing\n"] {
            let text = format!("pre {} post", tags::wrap("t", payload));
            assert_eq!(tags::blocks(&text, "t"), [payload]);
        }
        assert_eq!(tags::blocks("<t>A</t><t>B</t>", "t"), ["A", "B"]);
        assert!(tags::blocks("<t>unterminated", "t").is_empty());
    }

    #[test]
    fn translate_prompt_wraps_payloads() {
        let t = parse_template(MINIMAL, "seed").unwrap();
        let d = DraftArtifact {
            source_file: "target.f".into(),
            draft_text: "double x;\n".into(),
            annotations: vec![],
        };
        let p = assemble_translate_prompt(&t, "      real*8 x\n", &d).unwrap();
        assert_eq!(&p.messages[..3], &t.messages[..]);
        assert_eq!(tags::blocks(p.payload(), tags::SOURCE), ["      real*8 x\n"]);
        assert_eq!(tags::blocks(p.payload(), tags::DRAFT), ["double x;\n"]);
        assert!(p.payload().contains("<csource>") && p.payload().contains("<fsource>"));
    }

    #[test]
    fn payload_collision_is_refused() {
        let t = parse_template(MINIMAL, "seed").unwrap();
        let d = DraftArtifact { source_file: "a.f90".into(), draft_text: String::new(), annotations: vec![] };
        let err = assemble_translate_prompt(&t, "! </source>\n", &d).unwrap_err();
        assert!(matches!(err, Error::PayloadCollision { tag: "source", ref literal } if literal == "</source>"));
    }

    #[test]
    fn json_round_trip() {
        let msgs = vec![
            ChatMessage::new(ChatRole::System, "a \"quoted\"\nline\t\\"),
            ChatMessage::new(ChatRole::User, "ü ✓ \u{0}"),
        ];
        assert_eq!(messages_from_json(&messages_to_json(&msgs)).unwrap(), msgs);
    }
}
