//! Records exchanged between ledgers and the field mappings between their
//! schema versions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::InteropError;
use crate::hash::{Canonical, DecodeError, Decoder, Digest, Encoder};
use crate::ledger::{Payload, Transaction};

/// Payload tag under which records are written.
pub const RECORD_TAG: &str = "record";

/// A typed, versioned set of named fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub record_type: String,
    pub schema_version: u32,
    pub fields: BTreeMap<String, String>,
}

impl Canonical for Record {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.record_type)
            .u32(self.schema_version)
            .u32(self.fields.len() as u32);
        for (k, v) in &self.fields {
            enc.str(k).str(v);
        }
    }
}

impl Record {
    pub fn new(record_type: &str, schema_version: u32) -> Self {
        Record {
            record_type: record_type.into(),
            schema_version,
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub(crate) fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let record_type = dec.string()?;
        let schema_version = dec.u32()?;
        let n = dec.u32()?;
        let mut fields = BTreeMap::new();
        for _ in 0..n {
            let k = dec.string()?;
            fields.insert(k, dec.string()?);
        }
        Ok(Record {
            record_type,
            schema_version,
            fields,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let r = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(r)
    }

    pub fn to_payload(&self) -> Payload {
        Payload::data(RECORD_TAG, self.canonical_bytes())
    }

    /// The record carried by a committed transaction, if it carries one.
    pub fn from_tx(tx: &Transaction) -> Option<Self> {
        (tx.payload.tag == RECORD_TAG)
            .then(|| Self::decode(&tx.payload.body).ok())
            .flatten()
    }
}

/// Field mapping for one record type between two schema versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationRule {
    pub record_type: String,
    pub from: u32,
    pub to: u32,
    /// Source field name → destination field name. Unlisted fields are not
    /// carried over.
    pub renames: BTreeMap<String, String>,
    /// Fields the destination schema cannot do without.
    #[serde(default)]
    pub required: Vec<String>,
}

impl TranslationRule {
    /// Mapping back from the destination version; it requires every field
    /// the forward mapping reads.
    pub fn inverse(&self) -> TranslationRule {
        TranslationRule {
            record_type: self.record_type.clone(),
            from: self.to,
            to: self.from,
            renames: self.renames.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            required: self.renames.keys().cloned().collect(),
        }
    }

    pub fn apply(&self, record: &Record) -> Result<Record, InteropError> {
        let fields: BTreeMap<String, String> = record
            .fields
            .iter()
            .filter_map(|(k, v)| self.renames.get(k).map(|to| (to.clone(), v.clone())))
            .collect();
        if let Some(missing) = self.required.iter().find(|f| !fields.contains_key(*f)) {
            return Err(InteropError::FieldLoss(missing.clone()));
        }
        Ok(Record {
            record_type: record.record_type.clone(),
            schema_version: self.to,
            fields,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationTable {
    #[serde(default)]
    pub rules: Vec<TranslationRule>,
}

/// A translated record with both hashes kept for audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub record: Record,
    pub original_hash: Digest,
    pub translated_hash: Digest,
}

impl TranslationTable {
    pub fn rule(&self, record_type: &str, from: u32, to: u32) -> Option<&TranslationRule> {
        self.rules
            .iter()
            .find(|r| r.record_type == record_type && r.from == from && r.to == to)
    }

    /// Translates `record` to schema version `to`. Same-version transfers
    /// without an explicit rule are the identity.
    pub fn translate(&self, record: &Record, to: u32) -> Result<Translation, InteropError> {
        let out = match self.rule(&record.record_type, record.schema_version, to) {
            Some(rule) => rule.apply(record)?,
            None if record.schema_version == to => record.clone(),
            None => {
                return Err(InteropError::TranslationUnsupported {
                    record_type: record.record_type.clone(),
                    from: record.schema_version,
                    to,
                })
            }
        };
        Ok(Translation {
            original_hash: record.canonical_digest(),
            translated_hash: out.canonical_digest(),
            record: out,
        })
    }
}
