//! Token sequences with per-position roles: an image block, then prompt
//! tokens, then a (possibly empty) assistant suffix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Image,
    Prompt,
    Assistant,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeqError {
    #[error("ids and roles have different lengths ({ids} vs {roles})")]
    LengthMismatch { ids: usize, roles: usize },
    #[error("role layout must be image block, then prompt, then assistant suffix")]
    RoleLayout,
}

/// A token sequence plus parallel role annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
    roles: Vec<Role>,
}

impl TokenSeq {
    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            roles: Vec::new(),
        }
    }

    /// Validates the role layout: `Image* Prompt* Assistant*`.
    pub fn try_new(ids: Vec<TokenId>, roles: Vec<Role>) -> Result<Self, SeqError> {
        if ids.len() != roles.len() {
            return Err(SeqError::LengthMismatch {
                ids: ids.len(),
                roles: roles.len(),
            });
        }
        let mut stage = Role::Image;
        for &r in &roles {
            match (stage, r) {
                (Role::Image, Role::Image) => {}
                (Role::Image, Role::Prompt) | (Role::Prompt, Role::Prompt) => stage = Role::Prompt,
                (_, Role::Assistant) => stage = Role::Assistant,
                (Role::Assistant, _) | (Role::Prompt, Role::Image) => {
                    return Err(SeqError::RoleLayout)
                }
            }
        }
        Ok(Self { ids, roles })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn last(&self) -> Option<TokenId> {
        self.ids.last().copied()
    }

    pub fn push(&mut self, id: TokenId, role: Role) {
        self.ids.push(id);
        self.roles.push(role);
    }

    pub fn extend(&mut self, ids: &[TokenId], role: Role) {
        for &id in ids {
            self.push(id, role);
        }
    }

    /// Index of the first assistant-role position, if any.
    pub fn first_assistant(&self) -> Option<usize> {
        self.roles.iter().position(|&r| r == Role::Assistant)
    }

    /// Ids of the assistant-role suffix.
    pub fn assistant_ids(&self) -> &[TokenId] {
        match self.first_assistant() {
            Some(i) => &self.ids[i..],
            None => &[],
        }
    }

    /// Positions whose role is `Image`.
    pub fn image_positions(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| (r == Role::Image).then_some(i))
            .collect()
    }
}
