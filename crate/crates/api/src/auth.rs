use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::ApiError;

/// One rater credential from the token file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSession {
    pub rater_id: String,
    pub token: String,
    pub expiry: Option<DateTime<Utc>>,
}

impl ApiSession {
    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        self.expiry.is_some_and(|e| e <= now)
    }
}

/// Static bearer tokens, one line per rater: `rater_id token [expiry-rfc3339]`.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    by_token: HashMap<String, ApiSession>,
}

impl TokenTable {
    pub fn parse(text: &str) -> Result<Self, ApiError> {
        let mut by_token = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |why: &str| ApiError::Config(format!("token file line {}: {why}", n + 1));
            let (rater_id, token, expiry) = match fields.as_slice() {
                [r, t] => (*r, *t, None),
                [r, t, e] => {
                    let at = DateTime::parse_from_rfc3339(e).map_err(|_| bad("expiry is not RFC 3339"))?;
                    (*r, *t, Some(at.with_timezone(&Utc)))
                }
                _ => return Err(bad("expected `rater_id token [expiry]`")),
            };
            let session = ApiSession { rater_id: rater_id.to_owned(), token: token.to_owned(), expiry };
            if by_token.insert(token.to_owned(), session).is_some() {
                return Err(bad("duplicate token"));
            }
        }
        Ok(TokenTable { by_token })
    }

    pub fn load(path: &Path) -> Result<Self, ApiError> {
        let text = std::fs::read_to_string(path).map_err(|e| ApiError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, session: ApiSession) {
        self.by_token.insert(session.token.clone(), session);
    }

    pub fn is_registered(&self, rater_id: &str) -> bool {
        self.by_token.values().any(|s| s.rater_id == rater_id)
    }

    /// The rater behind a live token.
    pub fn authenticate(&self, token: &str, now: DateTime<Utc>) -> Result<&ApiSession, ApiError> {
        match self.by_token.get(token) {
            Some(s) if s.is_expired(now) => Err(ApiError::Unauthorized("token expired".into())),
            Some(s) => Ok(s),
            None => Err(ApiError::Unauthorized("unknown token".into())),
        }
    }
}
