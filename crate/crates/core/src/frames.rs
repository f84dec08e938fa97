//! Verb-frame lexicon and caption rendering.
//!
//! Lexicon file, one record per line:
//!
//! ```text
//! sitting<TAB>Agent,Item,Place<TAB>An {Agent} sits on an {Item} at a ~{Place}
//! ```
//!
//! An `a`/`an` word directly before a slot marks an adaptive article that is
//! re-chosen for the filled noun. A `~` before a slot marks it droppable:
//! when its noun is blank the slot is removed together with the words that
//! lead into it (the trailing prepositional group). Any other text, such as
//! `the`, is kept verbatim. Blank lines and lines starting with `#` are
//! ignored.
//!
//! Noun table file: `noun_id<TAB>display`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::GroundedSituation;

pub const MAX_ROLES: usize = 6;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("role {role:?} is not part of the {verb:?} frame")]
    UnknownRole { verb: String, role: String },
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(String);

impl Role {
    pub fn new(name: impl Into<String>) -> Option<Self> {
        let name = name.into();
        (!name.trim().is_empty() && name.trim() == name).then_some(Role(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArticleMode {
    /// `a`/`an` chosen from the display string.
    Adaptive,
    /// No article handled by the slot; surrounding text is kept as written.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot {
        role: usize,
        article: ArticleMode,
        droppable: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbFrame {
    verb: String,
    roles: Vec<Role>,
    pieces: Vec<Piece>,
    template: String,
}

impl VerbFrame {
    pub fn verb(&self) -> &str {
        &self.verb
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.as_str() == role)
    }
}

/// Noun-class id, or blank when a role is left unfilled.
///
/// Blank is the empty string, as in the SWiG release, so that "blank
/// matches blank" is an ordinary string comparison.
pub const BLANK_NOUN: &str = "";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameLexicon {
    frames: BTreeMap<String, VerbFrame>,
    noun_display: HashMap<String, String>,
}

fn parse_template(
    template: &str,
    roles: &[Role],
    line: usize,
) -> Result<Vec<Piece>, FrameError> {
    let schema = |message: String| FrameError::Schema { line, message };
    let mut pieces = Vec::new();
    let mut seen = vec![false; roles.len()];
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').map(|c| open + c).ok_or_else(|| FrameError::Parse {
            line,
            message: format!("unclosed slot in template {template:?}"),
        })?;
        let mut text = &rest[..open];
        let droppable = text.ends_with('~');
        if droppable {
            text = &text[..text.len() - 1];
        }
        let name = &rest[open + 1..close];
        let role = roles
            .iter()
            .position(|r| r.as_str() == name)
            .ok_or_else(|| schema(format!("template slot {{{name}}} names no role of the frame")))?;
        if seen[role] {
            return Err(schema(format!("role {name} appears in more than one slot")));
        }
        seen[role] = true;

        let mut article = ArticleMode::None;
        let trimmed = text.trim_end();
        if trimmed.len() < text.len() {
            let word_start = trimmed.rfind(char::is_whitespace).map_or(0, |i| i + 1);
            let word = &trimmed[word_start..];
            if word.eq_ignore_ascii_case("a") || word.eq_ignore_ascii_case("an") {
                article = ArticleMode::Adaptive;
                text = &trimmed[..word_start];
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text.to_string()));
        }
        pieces.push(Piece::Slot {
            role,
            article,
            droppable,
        });
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err(FrameError::Parse {
            line,
            message: format!("stray '}}' in template {template:?}"),
        });
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(schema(format!(
            "template omits role {}",
            roles[missing].as_str()
        )));
    }
    Ok(pieces)
}

fn starts_with_vowel(s: &str) -> bool {
    s.chars()
        .next()
        .is_some_and(|c| matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u'))
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl FrameLexicon {
    /// Reads the line-oriented lexicon format.
    pub fn load<R: BufRead>(source: R) -> Result<Self, FrameError> {
        let mut frames = BTreeMap::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(FrameError::Parse {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let verb = fields[0].trim();
            if verb.is_empty() {
                return Err(FrameError::Parse {
                    line: line_no,
                    message: "empty verb".into(),
                });
            }
            let mut roles = Vec::new();
            for name in fields[1].split(',') {
                let role = Role::new(name.trim()).ok_or_else(|| FrameError::Parse {
                    line: line_no,
                    message: format!("empty role name in {:?}", fields[1]),
                })?;
                if roles.contains(&role) {
                    return Err(FrameError::Schema {
                        line: line_no,
                        message: format!("duplicate role {role}"),
                    });
                }
                roles.push(role);
            }
            if roles.len() > MAX_ROLES {
                return Err(FrameError::Schema {
                    line: line_no,
                    message: format!("{} roles exceed the maximum of {MAX_ROLES}", roles.len()),
                });
            }
            let template = fields[2].trim();
            let pieces = parse_template(template, &roles, line_no)?;
            if frames.contains_key(verb) {
                return Err(FrameError::Schema {
                    line: line_no,
                    message: format!("duplicate verb {verb:?}"),
                });
            }
            frames.insert(
                verb.to_string(),
                VerbFrame {
                    verb: verb.to_string(),
                    roles,
                    pieces,
                    template: template.to_string(),
                },
            );
        }
        Ok(FrameLexicon {
            frames,
            noun_display: HashMap::new(),
        })
    }

    /// Adds `noun_id<TAB>display` entries; later entries win.
    pub fn load_nouns<R: BufRead>(&mut self, source: R) -> Result<(), FrameError> {
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, display) = line.split_once('\t').ok_or_else(|| FrameError::Parse {
                line: idx + 1,
                message: "expected noun_id<TAB>display".into(),
            })?;
            if id.trim().is_empty() {
                return Err(FrameError::Parse {
                    line: idx + 1,
                    message: "empty noun id".into(),
                });
            }
            self.noun_display.insert(id.trim().to_string(), display.trim().to_string());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, verb: &str) -> Result<&VerbFrame, FrameError> {
        self.frames.get(verb).ok_or_else(|| FrameError::UnknownVerb(verb.to_string()))
    }

    pub fn verbs(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    pub fn roles_of(&self, verb: &str) -> Result<&[Role], FrameError> {
        self.frame(verb).map(VerbFrame::roles)
    }

    /// Display string for a noun id; unmapped ids render as themselves.
    pub fn display<'a>(&'a self, noun: &'a str) -> &'a str {
        self.noun_display.get(noun).map_or(noun, String::as_str)
    }

    /// Fills the verb's template. Roles missing from `nouns` count as blank.
    pub fn render_caption<S: AsRef<str>>(
        &self,
        verb: &str,
        nouns: &[(S, S)],
    ) -> Result<String, FrameError> {
        let frame = self.frame(verb)?;
        let mut filled: Vec<Option<&str>> = vec![None; frame.roles.len()];
        for (role, noun) in nouns {
            let idx = frame.role_index(role.as_ref()).ok_or_else(|| FrameError::UnknownRole {
                verb: verb.to_string(),
                role: role.as_ref().to_string(),
            })?;
            let noun = noun.as_ref();
            filled[idx] = (noun != BLANK_NOUN).then(|| self.display(noun));
        }

        let mut parts: Vec<String> = Vec::new();
        for (pi, piece) in frame.pieces.iter().enumerate() {
            match piece {
                Piece::Text(t) => parts.push(t.clone()),
                Piece::Slot {
                    role,
                    article,
                    droppable,
                } => {
                    let word = match filled[*role] {
                        Some(display) => display.to_string(),
                        None if *droppable => {
                            // drop the lead-in words back to the previous slot
                            if pi > 0 && matches!(frame.pieces[pi - 1], Piece::Text(_)) {
                                parts.pop();
                            }
                            continue;
                        }
                        None => frame.roles[*role].as_str().to_lowercase(),
                    };
                    let text = match article {
                        ArticleMode::Adaptive if starts_with_vowel(&word) => format!("an {word}"),
                        ArticleMode::Adaptive => format!("a {word}"),
                        ArticleMode::None => word,
                    };
                    parts.push(text);
                }
            }
        }
        let sentence = parts.concat();
        Ok(capitalize_first(sentence.trim()))
    }

    /// Checks a situation against its verb's frame; never fails.
    pub fn validate_situation(&self, situation: &GroundedSituation) -> Vec<Violation> {
        let mut out = Vec::new();
        if situation.entries.len() > MAX_ROLES {
            out.push(Violation::TooManyRoles(situation.entries.len()));
        }
        let mut seen = HashSet::new();
        for e in &situation.entries {
            if !seen.insert(e.role.as_str()) {
                out.push(Violation::DuplicateRole(e.role.clone()));
            }
        }
        let Ok(frame) = self.frame(&situation.verb) else {
            out.push(Violation::UnknownVerb(situation.verb.clone()));
            return out;
        };
        for e in &situation.entries {
            if frame.role_index(&e.role).is_none() {
                out.push(Violation::RoleNotInFrame(e.role.clone()));
            }
        }
        for r in &frame.roles {
            if !seen.contains(r.as_str()) {
                out.push(Violation::MissingRole(r.as_str().to_string()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    UnknownVerb(String),
    RoleNotInFrame(String),
    MissingRole(String),
    DuplicateRole(String),
    TooManyRoles(usize),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::UnknownVerb(v) => write!(f, "unknown verb {v:?}"),
            Violation::RoleNotInFrame(r) => write!(f, "role not in frame: {r}"),
            Violation::MissingRole(r) => write!(f, "missing role: {r}"),
            Violation::DuplicateRole(r) => write!(f, "duplicate role: {r}"),
            Violation::TooManyRoles(n) => write!(f, "role count exceeds {MAX_ROLES}: {n}"),
        }
    }
}
