//! Host command stream and its line-oriented text format.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::FeatureFlags;

/// One host command. Column ids are positions within the open DRAM row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Load one 16-element chunk of the vector into the global buffer.
    Lgb(u32),
    /// All-bank row activation.
    Act,
    /// Load an index-only column into the iFIFOs (no broadcast, no compute).
    Lidx(u32),
    /// Compute a column against the eFIFO heads while the latched slice
    /// stays (broadcast stall).
    Cnb(u32),
    /// Compute a column and broadcast the next vector slice.
    Cbr(u32),
    /// Read one bank's result vector and reset its accumulators.
    Rd(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub banks: usize,
    pub macs: usize,
    pub slice: usize,
    pub fifo: usize,
    pub flags: FeatureFlags,
    pub digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandStream {
    pub header: StreamHeader,
    pub commands: Vec<Command>,
}

pub fn emit_command_text<W: Write>(stream: &CommandStream, w: &mut W) -> Result<()> {
    let h = &stream.header;
    writeln!(w, "#ESPIM-CS v1")?;
    writeln!(
        w,
        "#banks={} macs={} slice={} fifo={} flags={} digest={:016x}",
        h.banks,
        h.macs,
        h.slice,
        h.fifo,
        h.flags.to_token_string(),
        h.digest
    )?;
    for c in &stream.commands {
        match c {
            Command::Lgb(n) => writeln!(w, "LGB {n}")?,
            Command::Act => writeln!(w, "ACT")?,
            Command::Lidx(n) => writeln!(w, "LIDX {n}")?,
            Command::Cnb(n) => writeln!(w, "CNB {n}")?,
            Command::Cbr(n) => writeln!(w, "CBR {n}")?,
            Command::Rd(n) => writeln!(w, "RD {n}")?,
        }
    }
    Ok(())
}

pub fn parse_command_text<R: Read>(r: R) -> Result<CommandStream> {
    let reader = BufReader::new(r);
    let mut header: Option<StreamHeader> = None;
    let mut saw_magic = false;
    let mut commands = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with('#') {
            if t == "#ESPIM-CS v1" {
                saw_magic = true;
                continue;
            }
            if t.starts_with("#banks=") {
                header = Some(parse_header_line(t, lineno)?);
            }
            continue;
        }
        let mut toks = t.split_whitespace();
        let op = toks.next().unwrap();
        let mut arg = |required: bool| -> Result<u32> {
            match toks.next() {
                Some(s) => s
                    .parse::<u32>()
                    .map_err(|_| Error::parse(lineno, s, "expected integer argument")),
                None if required => Err(Error::parse(lineno, op, "missing argument")),
                None => Ok(0),
            }
        };
        let cmd = match op {
            "LGB" => Command::Lgb(arg(true)?),
            "ACT" => {
                arg(false)?;
                Command::Act
            }
            "LIDX" => Command::Lidx(arg(true)?),
            "CNB" => Command::Cnb(arg(true)?),
            "CBR" => Command::Cbr(arg(true)?),
            "RD" => Command::Rd(arg(true)?),
            other => return Err(Error::parse(lineno, other, "unknown command")),
        };
        if toks.next().is_some() {
            return Err(Error::parse(lineno, t, "trailing tokens"));
        }
        commands.push(cmd);
    }
    if !saw_magic {
        return Err(Error::parse(1, "", "missing #ESPIM-CS v1 magic line"));
    }
    let header = header.ok_or_else(|| Error::parse(0, "", "missing header line"))?;
    Ok(CommandStream { header, commands })
}

fn parse_header_line(t: &str, lineno: usize) -> Result<StreamHeader> {
    let mut banks = None;
    let mut macs = None;
    let mut slice = None;
    let mut fifo = None;
    let mut flags = None;
    let mut digest = None;
    for tok in t.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, tok, "expected key=value"))?;
        match k {
            "banks" => banks = Some(parse_usize(v, lineno)?),
            "macs" => macs = Some(parse_usize(v, lineno)?),
            "slice" => slice = Some(parse_usize(v, lineno)?),
            "fifo" => fifo = Some(parse_usize(v, lineno)?),
            "flags" => flags = Some(FeatureFlags::from_token_string(v, lineno)?),
            "digest" => {
                digest = Some(
                    u64::from_str_radix(v, 16)
                        .map_err(|_| Error::parse(lineno, v, "expected hex digest"))?,
                )
            }
            other => return Err(Error::parse(lineno, other, "unknown header key")),
        }
    }
    let mut flags = flags.ok_or_else(|| Error::parse(lineno, t, "missing flags"))?;
    let fifo = fifo.ok_or_else(|| Error::parse(lineno, t, "missing fifo"))?;
    flags.fifo_depth = fifo;
    Ok(StreamHeader {
        banks: banks.ok_or_else(|| Error::parse(lineno, t, "missing banks"))?,
        macs: macs.ok_or_else(|| Error::parse(lineno, t, "missing macs"))?,
        slice: slice.ok_or_else(|| Error::parse(lineno, t, "missing slice"))?,
        fifo,
        flags,
        digest: digest.ok_or_else(|| Error::parse(lineno, t, "missing digest"))?,
    })
}

fn parse_usize(v: &str, lineno: usize) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::parse(lineno, v, "expected integer"))
}

impl CommandStream {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        emit_command_text(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_command_text(BufReader::new(std::fs::File::open(path)?))
    }
}
