use std::path::{Path, PathBuf};

use super::read_text;
use crate::error::{Error, LineIssue, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Novel,
}

/// One manifest line. Paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub role: Role,
    pub image: PathBuf,
    pub camera: PathBuf,
    /// Input: first depth layer. Novel: target-view depth for masking.
    pub depth: Option<PathBuf>,
    /// Input only: second depth layer.
    pub depth2: Option<PathBuf>,
    pub line: usize,
}

/// Views of a fit, one per line: `role image camera [depth [depth2]]`,
/// with `role` either `input` or `novel`. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub input: ViewEntry,
    pub novel: Vec<ViewEntry>,
}

impl Manifest {
    /// `path` labels errors; its directory anchors relative paths.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut issues = Vec::new();
        let mut input: Option<ViewEntry> = None;
        let mut novel = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut issue = |message: String| issues.push(LineIssue { line, message });
            let fields: Vec<&str> = content.split_whitespace().collect();
            let role = match fields[0] {
                "input" => Role::Input,
                "novel" => Role::Novel,
                other => {
                    issue(format!("unknown role `{other}` (expected `input` or `novel`)"));
                    continue;
                }
            };
            let max = if role == Role::Input { 5 } else { 4 };
            if fields.len() < 3 || fields.len() > max {
                issue(format!(
                    "`{}` lines take an image, a camera and up to {} depth path(s); got {} field(s)",
                    fields[0],
                    max - 3,
                    fields.len() - 1
                ));
                continue;
            }
            let at = |k: usize| fields.get(k).map(|p| base.join(p));
            let entry = ViewEntry {
                role,
                image: base.join(fields[1]),
                camera: base.join(fields[2]),
                depth: at(3),
                depth2: at(4),
                line,
            };
            match role {
                Role::Input if input.is_some() => {
                    issue(format!("second `input` line (first on line {})", input.as_ref().unwrap().line))
                }
                Role::Input => input = Some(entry),
                Role::Novel => novel.push(entry),
            }
        }
        if input.is_none() {
            issues.push(LineIssue {
                line: text.lines().count().max(1),
                message: "no `input` line".into(),
            });
        }
        if !issues.is_empty() {
            return Err(Error::Schema {
                path: path.into(),
                issues,
            });
        }
        Ok(Self {
            input: input.unwrap(),
            novel,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}
