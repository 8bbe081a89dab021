//! Line-oriented trace format.
//!
//! ```text
//! # vbi-trace v1
//! REQVB 0 4M latency_sensitive
//! MEM r 0 0 0x1040 3
//! ```
//!
//! Gzip-compressed files are detected by their magic bytes.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;
use vbi_core::address::parse_u64;
use vbi_core::{ClientId, Perms, Props, Vbuid};

pub const HEADER: &str = "# vbi-trace v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Mem {
        write: bool,
        client: ClientId,
        cvt_index: usize,
        offset: u64,
        icount_delta: u64,
    },
    /// Non-memory instructions with no access attached.
    Exec { icount: u64 },
    ReqVb { client: ClientId, size: u64, props: Props },
    Enable { vbuid: Vbuid, props: Props },
    Disable { vbuid: Vbuid },
    Attach { client: ClientId, vbuid: Vbuid, perms: Perms },
    Detach { client: ClientId, vbuid: Vbuid },
    Clone { src: Vbuid, dst: Vbuid },
    Promote { client: ClientId, src: Vbuid, dst: Vbuid },
}

impl TraceEvent {
    pub fn is_lifecycle(&self) -> bool {
        !matches!(self, TraceEvent::Mem { .. } | TraceEvent::Exec { .. })
    }
}

fn props_text(p: Props) -> String {
    if p.is_empty() { "-".to_string() } else { p.to_string() }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceEvent::Mem {
                write,
                client,
                cvt_index,
                offset,
                icount_delta,
            } => write!(
                f,
                "MEM {} {} {} {:#x} {}",
                if write { 'w' } else { 'r' },
                client.0,
                cvt_index,
                offset,
                icount_delta
            ),
            TraceEvent::Exec { icount } => write!(f, "EXEC {icount}"),
            TraceEvent::ReqVb { client, size, props } => {
                write!(f, "REQVB {} {} {}", client.0, size, props_text(props))
            }
            TraceEvent::Enable { vbuid, props } => write!(f, "ENABLE {vbuid} {}", props_text(props)),
            TraceEvent::Disable { vbuid } => write!(f, "DISABLE {vbuid}"),
            TraceEvent::Attach { client, vbuid, perms } => {
                write!(f, "ATTACH {} {vbuid} {perms}", client.0)
            }
            TraceEvent::Detach { client, vbuid } => write!(f, "DETACH {} {vbuid}", client.0),
            TraceEvent::Clone { src, dst } => write!(f, "CLONE {src} {dst}"),
            TraceEvent::Promote { client, src, dst } => write!(f, "PROMOTE {} {src} {dst}", client.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing or unsupported header (expected `{HEADER}`)")]
    Header,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Byte count with an optional binary suffix: `4096`, `0x1000`, `4K`, `128M`.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, shift) = match s.char_indices().last()? {
        (i, 'K' | 'k') => (&s[..i], 10),
        (i, 'M' | 'm') => (&s[..i], 20),
        (i, 'G' | 'g') => (&s[..i], 30),
        (i, 'T' | 't') => (&s[..i], 40),
        _ => (s, 0),
    };
    let n = if shift == 0 { parse_u64(num)? } else { num.parse::<u64>().ok()? };
    n.checked_mul(1 << shift)
}

fn parse_line(text: &str) -> Result<Option<TraceEvent>, String> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = text.split_whitespace().collect();
    let want = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(format!("{} expects {} fields, found {}", fields[0], n - 1, fields.len() - 1))
        }
    };
    let num = |s: &str, what: &str| parse_u64(s).ok_or_else(|| format!("bad {what} `{s}`"));
    let client = |s: &str| -> Result<ClientId, String> {
        s.parse::<u16>().map(ClientId).map_err(|_| format!("bad client `{s}`"))
    };
    let vbuid = |s: &str| -> Result<Vbuid, String> { s.parse().map_err(|e| format!("bad VBUID `{s}`: {e}")) };
    let props = |s: &str| Props::parse(s).ok_or_else(|| format!("bad props `{s}`"));
    let event = match fields[0] {
        "MEM" => {
            want(6)?;
            let write = match fields[1] {
                "r" | "R" => false,
                "w" | "W" => true,
                other => return Err(format!("bad access kind `{other}`")),
            };
            TraceEvent::Mem {
                write,
                client: client(fields[2])?,
                cvt_index: num(fields[3], "CVT index")? as usize,
                offset: num(fields[4], "offset")?,
                icount_delta: num(fields[5], "icount")?,
            }
        }
        "EXEC" => {
            want(2)?;
            TraceEvent::Exec {
                icount: num(fields[1], "icount")?,
            }
        }
        "REQVB" => {
            want(4)?;
            let size = parse_size(fields[2]).ok_or_else(|| format!("bad size `{}`", fields[2]))?;
            if size == 0 {
                return Err("REQVB size must be at least 1 byte".into());
            }
            TraceEvent::ReqVb {
                client: client(fields[1])?,
                size,
                props: props(fields[3])?,
            }
        }
        "ENABLE" => {
            want(3)?;
            TraceEvent::Enable {
                vbuid: vbuid(fields[1])?,
                props: props(fields[2])?,
            }
        }
        "DISABLE" => {
            want(2)?;
            TraceEvent::Disable { vbuid: vbuid(fields[1])? }
        }
        "ATTACH" => {
            want(4)?;
            TraceEvent::Attach {
                client: client(fields[1])?,
                vbuid: vbuid(fields[2])?,
                perms: Perms::parse(fields[3]).ok_or_else(|| format!("bad perms `{}`", fields[3]))?,
            }
        }
        "DETACH" => {
            want(3)?;
            TraceEvent::Detach {
                client: client(fields[1])?,
                vbuid: vbuid(fields[2])?,
            }
        }
        "CLONE" => {
            want(3)?;
            TraceEvent::Clone {
                src: vbuid(fields[1])?,
                dst: vbuid(fields[2])?,
            }
        }
        "PROMOTE" => {
            want(4)?;
            TraceEvent::Promote {
                client: client(fields[1])?,
                src: vbuid(fields[2])?,
                dst: vbuid(fields[3])?,
            }
        }
        other => return Err(format!("unknown record `{other}`")),
    };
    Ok(Some(event))
}

pub fn parse<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == HEADER => {}
        Some(Err(e)) => return Err(e.into()),
        _ => return Err(TraceError::Header),
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        match parse_line(&line) {
            Ok(Some(e)) => events.push(e),
            Ok(None) => {}
            Err(message) => return Err(TraceError::Parse { line: i + 2, message }),
        }
    }
    Ok(events)
}

pub fn parse_str(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    parse(text.as_bytes())
}

/// Reads a trace file, decompressing it if it is gzip.
pub fn read_file(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let mut file = BufReader::new(File::open(path)?);
    let gz = file.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read> = if gz { Box::new(MultiGzDecoder::new(file)) } else { Box::new(file) };
    parse(BufReader::new(reader))
}

pub fn write<W: Write>(mut out: W, events: &[TraceEvent]) -> io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for e in events {
        writeln!(out, "{e}")?;
    }
    out.flush()
}

pub fn to_string(events: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write(&mut buf, events).expect("writing to memory");
    String::from_utf8(buf).expect("trace text is ASCII")
}

/// Writes a trace file; a `.gz` extension selects gzip compression.
pub fn write_file(path: &Path, events: &[TraceEvent]) -> io::Result<()> {
    let file = io::BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = flate2::write::GzEncoder::new(file, flate2::Compression::default());
        write(&mut gz, events)?;
        gz.finish()?.flush()
    } else {
        write(file, events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vbi_core::SizeClass;

    #[test]
    fn round_trip() {
        let v = Vbuid::new(SizeClass::MB4, 3);
        let events = vec![
            TraceEvent::ReqVb {
                client: ClientId(0),
                size: 4 << 20,
                props: Props::LATENCY_SENSITIVE,
            },
            TraceEvent::Enable { vbuid: v, props: Props::empty() },
            TraceEvent::Attach {
                client: ClientId(1),
                vbuid: v,
                perms: Perms::R | Perms::W,
            },
            TraceEvent::Mem {
                write: true,
                client: ClientId(1),
                cvt_index: 0,
                offset: 0x1040,
                icount_delta: 7,
            },
            TraceEvent::Exec { icount: 1000 },
            TraceEvent::Clone {
                src: v,
                dst: Vbuid::new(SizeClass::MB4, 4),
            },
            TraceEvent::Promote {
                client: ClientId(1),
                src: v,
                dst: Vbuid::new(SizeClass::MB128, 0),
            },
            TraceEvent::Detach { client: ClientId(1), vbuid: v },
            TraceEvent::Disable { vbuid: v },
        ];
        let text = to_string(&events);
        assert_eq!(parse_str(&text).unwrap(), events);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{HEADER}\n\n# note\nMEM r 0 0 0x10 1\nMEM x 0 0 0 0\n");
        match parse_str(&text) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_str("MEM r 0 0 0 0\n"), Err(TraceError::Header)));
        assert!(parse_str(&format!("{HEADER}\nREQVB 0 0 -\n")).is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4K"), Some(4096));
        assert_eq!(parse_size("128M"), Some(128 << 20));
        assert_eq!(parse_size("0x1000"), Some(4096));
        assert_eq!(parse_size("12"), Some(12));
        assert_eq!(parse_size("x"), None);
    }
}
