//! Synthetic labeled corpus of SIP headers.
//!
//! Stands in for a real call capture: each class gets a template with
//! `fixed_attributes` class-wide constant slots (think user-agent string,
//! codec) and per-slot randomization pools for the rest. Fixed signatures
//! and pool values are class-disjoint by construction, so headers of the
//! same class always agree on at least `fixed_attributes` slots while
//! headers of different classes never agree on any slot. Generation is
//! fully determined by the spec and its seed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{CallClass, Context, HeaderId, HeaderSpace, SipHeader, ATTRIBUTE_COUNT};
use crate::error::{Error, Result};

/// First line of the corpus TSV format.
pub const CORPUS_FORMAT: &str = "spitband-corpus-v1";

/// One corpus entry. The class is ground truth for the environment and the
/// metrics accounting; it is never exposed through any learner-facing API.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabeledCall {
    pub header: HeaderId,
    pub class: CallClass,
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    /// Calls to generate per class.
    pub counts: BTreeMap<CallClass, u64>,
    /// Number of class-wide constant attribute slots (the last `F` slots).
    pub fixed_attributes: u32,
    /// Size of the per-class randomization pool for each remaining slot.
    pub pool_size: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let mut counts = BTreeMap::new();
        counts.insert(CallClass::Normal, 5609);
        counts.insert(CallClass::Spitter, 870);
        counts.insert(CallClass::Honeypot, 6);
        counts.insert(CallClass::Warvox, 80);
        counts.insert(CallClass::Voipbot, 1861);
        CorpusSpec {
            counts,
            fixed_attributes: 6,
            pool_size: 8,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_attributes as usize > ATTRIBUTE_COUNT {
            return Err(Error::config(format!(
                "fixed_attributes {} exceeds {ATTRIBUTE_COUNT}",
                self.fixed_attributes
            )));
        }
        if self.pool_size == 0 {
            return Err(Error::config("pool_size must be at least 1"));
        }
        Ok(())
    }

    pub fn total_calls(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn load(path: &Path) -> Result<CorpusSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: CorpusSpec =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("cannot serialize corpus spec: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A generated or loaded corpus: interned header space plus labeled calls.
#[derive(Clone, Debug)]
pub struct Corpus {
    space: HeaderSpace,
    calls: Vec<LabeledCall>,
}

impl Corpus {
    /// Generates a corpus from a spec. Deterministic given the seed; classes
    /// are emitted in a fixed order and each class draws only its own slots.
    pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
        spec.validate()?;
        let fixed = spec.fixed_attributes as usize;
        let random_slots = ATTRIBUTE_COUNT - fixed;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut space = HeaderSpace::new();
        let mut calls = Vec::with_capacity(spec.total_calls() as usize);
        for class in CallClass::ALL {
            let count = spec.counts.get(&class).copied().unwrap_or(0);
            let label = class.label();
            // Pool values carry the class label, keeping cross-class slot
            // agreement at zero; fixed signatures are disjoint the same way.
            let pools: Vec<Vec<String>> = (0..random_slots)
                .map(|slot| {
                    (0..spec.pool_size)
                        .map(|v| format!("{label}-a{slot}-v{v}"))
                        .collect()
                })
                .collect();
            let fixed_values: Vec<String> = (random_slots..ATTRIBUTE_COUNT)
                .map(|slot| format!("{label}-fx{slot}"))
                .collect();
            for _ in 0..count {
                let mut attrs: Vec<String> = Vec::with_capacity(ATTRIBUTE_COUNT);
                for pool in &pools {
                    let pick = rng.random_range(0..pool.len());
                    attrs.push(pool[pick].clone());
                }
                attrs.extend(fixed_values.iter().cloned());
                let header = space.intern(SipHeader::from_slice(&attrs)?);
                calls.push(LabeledCall {
                    header,
                    class,
                });
            }
        }
        Ok(Corpus { space, calls })
    }

    /// Builds a corpus directly from labeled headers (used by small tests
    /// and tools; duplicate headers intern to the same id).
    pub fn from_labeled_headers(entries: Vec<(SipHeader, CallClass)>) -> Corpus {
        let mut space = HeaderSpace::new();
        let calls = entries
            .into_iter()
            .map(|(header, class)| LabeledCall {
                header: space.intern(header),
                class,
            })
            .collect();
        Corpus { space, calls }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn calls(&self) -> &[LabeledCall] {
        &self.calls
    }

    pub fn space(&self) -> &HeaderSpace {
        &self.space
    }

    pub fn context(&self, id: HeaderId) -> Context {
        self.space.context(id)
    }

    /// One call drawn uniformly from the corpus; `None` when empty.
    pub fn draw(&self, rng: &mut impl Rng) -> Option<&LabeledCall> {
        if self.calls.is_empty() {
            return None;
        }
        Some(&self.calls[rng.random_range(0..self.calls.len())])
    }

    pub fn class_counts(&self) -> BTreeMap<CallClass, u64> {
        let mut counts = BTreeMap::new();
        for call in &self.calls {
            *counts.entry(call.class).or_insert(0) += 1;
        }
        counts
    }

    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{CORPUS_FORMAT}")?;
        for call in &self.calls {
            let header = self.space.header(call.header);
            write!(w, "{}", call.class.label())?;
            for attr in header.attributes() {
                debug_assert!(!attr.contains(['\t', '\n', '\r']));
                write!(w, "\t{attr}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead, origin: &Path) -> Result<Corpus> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(origin, e))?
            .ok_or_else(|| Error::parse(origin, "empty file"))?;
        if first.trim_end() != CORPUS_FORMAT {
            return Err(Error::parse(
                origin,
                format!("expected format line '{CORPUS_FORMAT}', found '{first}'"),
            ));
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != ATTRIBUTE_COUNT + 1 {
                return Err(Error::parse(
                    origin,
                    format!(
                        "line {}: expected {} tab-separated fields, found {}",
                        lineno + 2,
                        ATTRIBUTE_COUNT + 1,
                        fields.len()
                    ),
                ));
            }
            let class = CallClass::from_label(fields[0]).ok_or_else(|| {
                Error::parse(
                    origin,
                    format!("line {}: unknown class label '{}'", lineno + 2, fields[0]),
                )
            })?;
            let attrs: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
            entries.push((SipHeader::from_slice(&attrs)?, class));
        }
        Ok(Corpus::from_labeled_headers(entries))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Corpus::read_tsv(std::io::BufReader::new(file), path)
    }
}
