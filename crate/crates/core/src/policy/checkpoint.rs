//! Versioned text checkpoints for tables and network parameters.
//!
//! ```text
//! toksoft-checkpoint 1
//! vocab <fingerprint>
//! env_steps <n>
//! section <name> table <n_tokens> <n_rows>
//! <state ids or -> ; <prefix ids or -> ; <v_0> ... <v_{n-1}>
//! section <name> net <inputs> <hidden> <outputs>
//! <p_0> <p_1> ...
//! end
//! ```
//!
//! Ids are comma separated. Reals use Rust's shortest round-trip scientific
//! form, so save/load is exact. Table rows are written in context order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{TokenSeq, Vocabulary};

use super::{Context, NetShape, ParametricNet, PolicyTable, QTable, Reference};

const MAGIC: &str = "toksoft-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Table {
        n_tokens: usize,
        rows: Vec<(Context, Vec<f64>)>,
    },
    Net(ParametricNet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab_fingerprint: String,
    pub env_steps: u64,
    pub sections: Vec<(String, Section)>,
}

fn write_seq(out: &mut String, seq: &TokenSeq) {
    if seq.is_empty() {
        out.push('-');
    } else {
        let ids: Vec<String> = seq.iter().map(|i| i.to_string()).collect();
        out.push_str(&ids.join(","));
    }
}

fn parse_seq(s: &str) -> Option<TokenSeq> {
    let s = s.trim();
    if s == "-" {
        return Some(TokenSeq::empty());
    }
    s.split(',')
        .map(|v| v.trim().parse().ok())
        .collect::<Option<Vec<usize>>>()
        .map(TokenSeq::from)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(vocab: &Vocabulary, env_steps: u64) -> Self {
        Self {
            vocab_fingerprint: vocab.fingerprint(),
            env_steps,
            sections: Vec::new(),
        }
    }

    pub fn add_q(&mut self, name: &str, q: &QTable) {
        use super::SoftQ;
        let rows = q
            .rows()
            .into_iter()
            .map(|(c, r)| (c.clone(), r.clone()))
            .collect();
        self.sections.push((
            name.to_string(),
            Section::Table {
                n_tokens: q.n_tokens(),
                rows,
            },
        ));
    }

    pub fn add_policy(&mut self, name: &str, pi: &PolicyTable) {
        use super::Policy;
        let rows = pi
            .rows()
            .into_iter()
            .map(|(c, r)| (c.clone(), r.clone()))
            .collect();
        self.sections.push((
            name.to_string(),
            Section::Table {
                n_tokens: pi.n_tokens(),
                rows,
            },
        ));
    }

    pub fn add_net(&mut self, name: &str, net: &ParametricNet) {
        self.sections
            .push((name.to_string(), Section::Net(net.clone())));
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| bad(format!("missing section {name:?}")))
    }

    pub fn q_table(&self, name: &str) -> Result<QTable> {
        match self.section(name)? {
            Section::Table { n_tokens, rows } => {
                let mut q = QTable::new(*n_tokens);
                for (ctx, row) in rows {
                    q.row_mut(ctx.clone()).copy_from_slice(row);
                }
                Ok(q)
            }
            Section::Net(_) => Err(bad(format!("section {name:?} is not a table"))),
        }
    }

    pub fn policy_table(&self, name: &str, reference: Reference) -> Result<PolicyTable> {
        use super::Policy;
        match self.section(name)? {
            Section::Table { n_tokens, rows } if *n_tokens == reference.n_tokens() => {
                let mut pi = PolicyTable::new(reference);
                for (ctx, row) in rows {
                    pi.set_row(ctx.clone(), row.clone());
                }
                Ok(pi)
            }
            _ => Err(bad(format!(
                "section {name:?} is not a compatible policy table"
            ))),
        }
    }

    pub fn net(&self, name: &str) -> Result<ParametricNet> {
        match self.section(name)? {
            Section::Net(net) => Ok(net.clone()),
            Section::Table { .. } => Err(bad(format!("section {name:?} is not a net"))),
        }
    }

    /// Fails unless the checkpoint was written for `vocab`.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_fingerprint == vocab.fingerprint() {
            Ok(())
        } else {
            Err(bad(format!(
                "vocabulary mismatch: checkpoint {} vs {}",
                self.vocab_fingerprint,
                vocab.fingerprint()
            )))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "vocab {}", self.vocab_fingerprint);
        let _ = writeln!(out, "env_steps {}", self.env_steps);
        for (name, section) in &self.sections {
            match section {
                Section::Table { n_tokens, rows } => {
                    let _ = writeln!(out, "section {name} table {n_tokens} {}", rows.len());
                    for (ctx, row) in rows {
                        write_seq(&mut out, &ctx.state);
                        out.push_str(" ; ");
                        write_seq(&mut out, &ctx.prefix);
                        out.push_str(" ;");
                        for v in row {
                            let _ = write!(out, " {v:e}");
                        }
                        out.push('\n');
                    }
                }
                Section::Net(net) => {
                    let s = net.shape();
                    let _ = writeln!(
                        out,
                        "section {name} net {} {} {}",
                        s.inputs, s.hidden, s.outputs
                    );
                    let vals: Vec<String> = net.params().iter().map(|v| format!("{v:e}")).collect();
                    let _ = writeln!(out, "{}", vals.join(" "));
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
        };
        let (_, header) = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("not a checkpoint"))?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let (_, vocab_line) = next("vocab")?;
        let vocab_fingerprint = vocab_line
            .strip_prefix("vocab ")
            .ok_or_else(|| bad("missing vocab line"))?
            .trim()
            .to_string();
        let (_, steps_line) = next("env_steps")?;
        let env_steps = steps_line
            .strip_prefix("env_steps ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing env_steps line"))?;

        let mut sections = Vec::new();
        loop {
            let (n, line) = next("section or end")?;
            if line.trim() == "end" {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("line {}: malformed section header", n + 1)))
            };
            match fields.as_slice() {
                ["section", name, "table", ..] => {
                    let n_tokens = num(3)?;
                    let n_rows = num(4)?;
                    let mut rows = Vec::with_capacity(n_rows);
                    for _ in 0..n_rows {
                        let (m, row_line) = next("table row")?;
                        let row_err = || bad(format!("line {}: malformed table row", m + 1));
                        let mut parts = row_line.splitn(3, ';');
                        let state = parts.next().and_then(parse_seq).ok_or_else(row_err)?;
                        let prefix = parts.next().and_then(parse_seq).ok_or_else(row_err)?;
                        let values = parts
                            .next()
                            .ok_or_else(row_err)?
                            .split_whitespace()
                            .map(|v| v.parse::<f64>().map_err(|_| row_err()))
                            .collect::<Result<Vec<_>>>()?;
                        if values.len() != n_tokens {
                            return Err(row_err());
                        }
                        rows.push((Context::new(state, prefix), values));
                    }
                    sections.push((name.to_string(), Section::Table { n_tokens, rows }));
                }
                ["section", name, "net", ..] => {
                    let shape = NetShape {
                        inputs: num(3)?,
                        hidden: num(4)?,
                        outputs: num(5)?,
                    };
                    let (m, params_line) = next("net parameters")?;
                    let params = params_line
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("line {}: malformed parameter", m + 1)))?;
                    let net = ParametricNet::from_params(shape, params)
                        .ok_or_else(|| bad(format!("line {}: wrong parameter count", m + 1)))?;
                    sections.push((name.to_string(), Section::Net(net)));
                }
                _ => return Err(bad(format!("line {}: expected section header", n + 1))),
            }
        }
        Ok(Self {
            vocab_fingerprint,
            env_steps,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
