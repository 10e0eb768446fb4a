//! Token id space shared by chains, models and decoders.
//!
//! Layout: `[start, end, metadata × K, value block 0, …, value block K-1]`.
//! Every id belongs to exactly one block.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::registry::{MetricValue, Registry, RegistryError};
use crate::tokenizer::{Codec, CodecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Start,
    End,
    Metadata { metric: usize },
    Value { metric: usize, local: u32 },
}

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("{given} codecs given for {expected} metrics")]
    CodecCount { expected: usize, given: usize },
    #[error("codec {position} is for `{found}`, expected `{expected}`")]
    CodecOrder {
        position: usize,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("metric `{metric}`: {source}")]
    Codec { metric: String, source: CodecError },
}

pub const START: Token = Token(0);
pub const END: Token = Token(1);
const METADATA_BASE: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocabulary {
    block_offsets: Vec<u32>,
    block_sizes: Vec<u32>,
    total: u32,
}

impl TokenVocabulary {
    pub fn new(block_sizes: &[usize]) -> Self {
        let k = block_sizes.len() as u32;
        let mut next = METADATA_BASE + k;
        let mut block_offsets = Vec::with_capacity(block_sizes.len());
        for &s in block_sizes {
            block_offsets.push(next);
            next += s as u32;
        }
        TokenVocabulary {
            block_offsets,
            block_sizes: block_sizes.iter().map(|&s| s as u32).collect(),
            total: next,
        }
    }

    pub fn num_metrics(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn len(&self) -> usize {
        self.total as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn metadata(&self, metric: usize) -> Token {
        assert!(metric < self.num_metrics(), "metric {metric} out of range");
        Token(METADATA_BASE + metric as u32)
    }

    pub fn value(&self, metric: usize, local: u32) -> Token {
        assert!(local < self.block_sizes[metric], "value {local} outside block");
        Token(self.block_offsets[metric] + local)
    }

    pub fn block_size(&self, metric: usize) -> usize {
        self.block_sizes[metric] as usize
    }

    pub fn block_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.block_sizes.iter().map(|&s| s as usize)
    }

    /// Ids of the value block of `metric`, ascending.
    pub fn value_block(&self, metric: usize) -> std::ops::Range<u32> {
        let a = self.block_offsets[metric];
        a..a + self.block_sizes[metric]
    }

    pub fn kind(&self, token: Token) -> Option<TokenKind> {
        let id = token.0;
        if id == START.0 {
            return Some(TokenKind::Start);
        }
        if id == END.0 {
            return Some(TokenKind::End);
        }
        let k = self.num_metrics() as u32;
        if id < METADATA_BASE + k {
            return Some(TokenKind::Metadata {
                metric: (id - METADATA_BASE) as usize,
            });
        }
        if id >= self.total {
            return None;
        }
        let metric = self.block_offsets.partition_point(|&o| o <= id) - 1;
        Some(TokenKind::Value {
            metric,
            local: id - self.block_offsets[metric],
        })
    }
}

/// Registry, fitted codecs and the vocabulary they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    registry: Registry,
    codecs: Vec<Codec>,
    vocab: TokenVocabulary,
    hash: String,
}

impl Tokenizer {
    /// `codecs` must follow registry order.
    pub fn new(registry: Registry, codecs: Vec<Codec>) -> Result<Self, VocabError> {
        if codecs.len() != registry.len() {
            return Err(VocabError::CodecCount {
                expected: registry.len(),
                given: codecs.len(),
            });
        }
        for (i, (spec, codec)) in registry.iter().zip(&codecs).enumerate() {
            if spec.name != codec.metric {
                return Err(VocabError::CodecOrder {
                    position: i,
                    expected: spec.name.clone(),
                    found: codec.metric.clone(),
                });
            }
        }
        let sizes: Vec<usize> = codecs.iter().map(Codec::block_size).collect();
        let vocab = TokenVocabulary::new(&sizes);
        let mut hasher = Sha256::new();
        hasher.update(registry.to_json().as_bytes());
        for c in &codecs {
            hasher.update([0u8]);
            hasher.update(c.to_json().as_bytes());
        }
        let hash = hex::encode(hasher.finalize());
        Ok(Tokenizer {
            registry,
            codecs,
            vocab,
            hash,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn codecs(&self) -> &[Codec] {
        &self.codecs
    }

    pub fn codec(&self, metric: usize) -> &Codec {
        &self.codecs[metric]
    }

    pub fn vocab(&self) -> &TokenVocabulary {
        &self.vocab
    }

    /// Content hash of registry and codecs; artifacts built on this
    /// tokenizer record it.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Validates then encodes `value` for `metric`, returning the local id.
    pub fn encode(&self, metric: usize, value: &MetricValue) -> Result<u32, VocabError> {
        let spec = &self.registry.specs()[metric];
        spec.validate_value(value)?;
        self.codecs[metric]
            .encode(value)
            .map_err(|source| VocabError::Codec {
                metric: spec.name.clone(),
                source,
            })
    }

    pub fn decode(&self, metric: usize, local: u32) -> Result<MetricValue, VocabError> {
        self.codecs[metric]
            .decode(local)
            .map_err(|source| VocabError::Codec {
                metric: self.registry.specs()[metric].name.clone(),
                source,
            })
    }

    pub fn describe(&self, token: Token) -> String {
        match self.vocab.kind(token) {
            Some(TokenKind::Start) => "<s>".into(),
            Some(TokenKind::End) => "</s>".into(),
            Some(TokenKind::Metadata { metric }) => {
                format!("<{}>", self.registry.specs()[metric].name)
            }
            Some(TokenKind::Value { metric, local }) => match self.decode(metric, local) {
                Ok(v) => v.to_string(),
                Err(_) => format!("?{}", token.0),
            },
            None => format!("?{}", token.0),
        }
    }
}
