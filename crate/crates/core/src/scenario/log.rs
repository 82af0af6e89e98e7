use std::fmt::Write;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

use crate::chain::Block;

const HEADER: &str = "interchain-run 1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("CorruptLog: line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

/// Replayable record of a run: the effective scenario, what each script
/// action returned, and every certified block in production order.
///
/// Text form, one record per line:
/// ```text
/// interchain-run 1
/// config <base64 TOML>
/// action <base64 text>
/// block <chain> <base64 block>
/// end <number of block lines>
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLog {
    pub config: String,
    pub actions: Vec<String>,
    pub blocks: Vec<Block>,
}

impl RunLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "config {}", B64.encode(&self.config)).unwrap();
        for a in &self.actions {
            writeln!(out, "action {}", B64.encode(a)).unwrap();
        }
        for b in &self.blocks {
            writeln!(out, "block {} {}", b.header.chain_id, B64.encode(b.encode())).unwrap();
        }
        writeln!(out, "end {}", self.blocks.len()).unwrap();
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let corrupt = |line: usize, reason: &str| LogError::CorruptLog { line, reason: reason.to_string() };
        let b64 = |line: usize, s: &str| B64.decode(s).map_err(|e| corrupt(line, &format!("bad base64: {e}")));
        let utf8 = |line: usize, bytes: Vec<u8>| String::from_utf8(bytes).map_err(|_| corrupt(line, "not UTF-8"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(corrupt(1, "missing header")),
        }
        let config = match lines.next() {
            Some((n, l)) if l.starts_with("config ") => utf8(n, b64(n, &l[7..])?)?,
            _ => return Err(corrupt(2, "missing config")),
        };
        let mut log = RunLog { config, actions: Vec::new(), blocks: Vec::new() };
        for (n, l) in lines.by_ref() {
            let (tag, rest) = l.split_once(' ').unwrap_or((l, ""));
            match tag {
                "action" if log.blocks.is_empty() => log.actions.push(utf8(n, b64(n, rest)?)?),
                "block" => {
                    let (chain, data) = rest.split_once(' ').ok_or_else(|| corrupt(n, "block line without chain"))?;
                    let block = Block::decode(&b64(n, data)?).map_err(|e| corrupt(n, &format!("undecodable block: {e}")))?;
                    if block.header.chain_id != chain {
                        return Err(corrupt(n, "block filed under another chain"));
                    }
                    log.blocks.push(block);
                }
                "end" => {
                    if rest.parse::<usize>().ok() != Some(log.blocks.len()) {
                        return Err(corrupt(n, "block count does not match"));
                    }
                    if let Some((m, _)) = lines.find(|(_, l)| !l.is_empty()) {
                        return Err(corrupt(m, "content after end"));
                    }
                    return Ok(log);
                }
                _ => return Err(corrupt(n, "unexpected record")),
            }
        }
        Err(corrupt(text.lines().count(), "truncated: no end record"))
    }
}
