//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// A single syntax error produced while reading `.scene` text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    /// 1-based line of the offending token.
    pub line: usize,
    /// 1-based column of the offending token.
    pub column: usize,
    pub message: String,
}

/// A timing problem detected while checking a schedule against wave-packet
/// arrival windows.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingViolation {
    /// A shutter's mechanical transition window overlaps a packet window at
    /// that shutter's location.
    #[error(
        "contact: shutter {shutter} transition at {transition_time} s overlaps the packet \
         window [{packet_lead} s, {packet_trail} s]"
    )]
    Contact {
        shutter: String,
        transition_time: f64,
        packet_lead: f64,
        packet_trail: f64,
    },
    /// The packet reaches a shutter that is still closed.
    #[error(
        "ordering: shutter {shutter} is closed when the packet lead edge arrives at \
         {packet_lead} s (closed since {closed_at} s)"
    )]
    Ordering {
        shutter: String,
        packet_lead: f64,
        closed_at: f64,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    /// Scene text failed to parse. Every error carries line/column.
    #[error("{}", format_parse_errors(.0))]
    Parse(Vec<ParseError>),

    /// A structurally valid scene failed cross-reference or sanity checks.
    #[error("invalid scene: {}", .0.join("; "))]
    InvalidScene(Vec<String>),

    /// Mode/basis/dimension misuse detected at the state-algebra layer.
    #[error("configuration error: {0}")]
    Config(String),

    /// The schedule cannot be executed without a shutter touching the packet.
    #[error("timing violations: {}", format_violations(.0))]
    Timing(Vec<TimingViolation>),

    /// Visibility is undefined when every sample is zero.
    #[error("visibility undefined: all samples are zero")]
    UndefinedVisibility,
}

fn format_parse_errors(errors: &[ParseError]) -> String {
    errors
        .iter()
        .map(ParseError::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_violations(violations: &[TimingViolation]) -> String {
    violations
        .iter()
        .map(TimingViolation::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
