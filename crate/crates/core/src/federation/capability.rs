//! Capability tokens derived from verified certificates.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use x25519_dalek::StaticSecret;

use super::request::{KeyId, MinuteRange, OperationClass, RequestId, Subject, SystemStateKind};
use super::{FederationError, SystemState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    Write,
    ReadEncrypted,
    ResolveRegistry,
    Decrypt,
    Delete,
}

impl Permission {
    /// What each operation class grants.
    pub fn granted_by(self, class: OperationClass) -> bool {
        use OperationClass::*;
        match self {
            Permission::Write => matches!(class, StrictPush | BlindProcessing | FullProcessing),
            Permission::ReadEncrypted => {
                matches!(class, BlindAnalysis | BlindProcessing | FullProcessing)
            }
            Permission::ResolveRegistry => matches!(class, BlindProcessing | FullProcessing),
            Permission::Decrypt => class == FullProcessing,
            Permission::Delete => matches!(class, FullProcessing | LockUnlock),
        }
    }
}

/// Proof that a certificate of `class` was accepted in alert epoch `epoch`.
/// Becomes stale as soon as the system leaves that epoch.
#[derive(Clone)]
pub struct Capability {
    pub(super) class: OperationClass,
    pub(super) request_id: RequestId,
    pub(super) epoch: u64,
    pub(super) scope: Option<MinuteRange>,
    pub(super) subjects: Vec<Subject>,
    pub(super) keys: BTreeMap<KeyId, StaticSecret>,
}

impl fmt::Debug for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Capability")
            .field("class", &self.class)
            .field("request_id", &self.request_id)
            .field("epoch", &self.epoch)
            .field("scope", &self.scope)
            .field("keys", &self.keys.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Capability {
    pub fn class(&self) -> OperationClass {
        self.class
    }

    pub fn request_id(&self) -> RequestId {
        self.request_id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn scope(&self) -> Option<MinuteRange> {
        self.scope
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn permits(&self, p: Permission) -> bool {
        p.granted_by(self.class)
    }

    /// Checks the permission and that the capability is still current.
    pub fn require(&self, p: Permission, state: &SystemState) -> Result<(), FederationError> {
        if state.kind != SystemStateKind::Alert {
            return Err(FederationError::NotAlert);
        }
        if state.epoch != self.epoch {
            return Err(FederationError::StaleCapability {
                issued: self.epoch,
                current: state.epoch,
            });
        }
        if !self.permits(p) {
            return Err(FederationError::Forbidden {
                class: self.class,
                permission: p,
            });
        }
        Ok(())
    }

    /// Released decryption key. Only FULL_PROCESSING capabilities carry keys.
    pub fn decryption_key(
        &self,
        id: &KeyId,
        state: &SystemState,
    ) -> Result<&StaticSecret, FederationError> {
        self.require(Permission::Decrypt, state)?;
        self.keys
            .get(id)
            .ok_or_else(|| FederationError::KeyNotReleased(id.clone()))
    }
}
