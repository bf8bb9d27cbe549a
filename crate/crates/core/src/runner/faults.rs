use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One injected fault, written `kind:id` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "id")]
pub enum Fault {
    VaultByzantine(u8),
    VaultCrash(u8),
    AuthoritySilent(u8),
    AuthorityEquivocate(u8),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::VaultByzantine(i) => write!(f, "vault-byzantine:{i}"),
            Fault::VaultCrash(i) => write!(f, "vault-crash:{i}"),
            Fault::AuthoritySilent(i) => write!(f, "authority-silent:{i}"),
            Fault::AuthorityEquivocate(i) => write!(f, "authority-equivocate:{i}"),
        }
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| format!("fault {s:?} is not kind:id"))?;
        let id: u8 = id
            .parse()
            .map_err(|_| format!("fault {s:?}: bad id {id:?}"))?;
        match kind {
            "vault-byzantine" => Ok(Fault::VaultByzantine(id)),
            "vault-crash" => Ok(Fault::VaultCrash(id)),
            "authority-silent" => Ok(Fault::AuthoritySilent(id)),
            "authority-equivocate" => Ok(Fault::AuthorityEquivocate(id)),
            _ => Err(format!("unknown fault kind {kind:?}")),
        }
    }
}

/// Comma-separated list; empty string means no faults.
pub fn parse_faults(list: &str) -> Result<Vec<Fault>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}
