use std::time::Duration;

use super::HarnessError;

/// `H:MM:SS.ffffff`, truncated to microseconds.
pub fn format_duration(d: Duration) -> String {
    let micros = d.as_micros();
    let secs = micros / 1_000_000;
    format!(
        "{}:{:02}:{:02}.{:06}",
        secs / 3600,
        secs / 60 % 60,
        secs % 60,
        micros % 1_000_000
    )
}

pub fn parse_duration(s: &str) -> Result<Duration, HarnessError> {
    let bad = || HarnessError::Config(format!("duration must look like H:MM:SS.ffffff, got {s:?}"));
    let mut parts = s.split(':');
    let (Some(h), Some(m), Some(rest), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let (sec, frac) = rest.split_once('.').ok_or_else(bad)?;
    let digits = |v: &str, len: Option<usize>| -> Result<u64, HarnessError> {
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) || len.is_some_and(|n| v.len() != n) {
            return Err(bad());
        }
        v.parse().map_err(|_| bad())
    };
    let (h, m, sec, frac) = (digits(h, None)?, digits(m, Some(2))?, digits(sec, Some(2))?, digits(frac, Some(6))?);
    if m >= 60 || sec >= 60 {
        return Err(bad());
    }
    Ok(Duration::from_micros(((h * 60 + m) * 60 + sec) * 1_000_000 + frac))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_examples() {
        assert_eq!(format_duration(Duration::from_micros(0)), "0:00:00.000000");
        assert_eq!(format_duration(Duration::from_micros(27 * 60_000_000 + 123)), "0:27:00.000123");
        assert_eq!(format_duration(Duration::from_secs(3600 * 12 + 61)), "12:01:01.000000");
        assert_eq!(format_duration(Duration::from_nanos(1_999)), "0:00:00.000001");
    }

    #[test]
    fn parse_rejects_malformed() {
        for s in ["", "1:2:3.4", "0:60:00.000000", "0:00:00", "a:00:00.000000", "0:00:00.0000001"] {
            assert!(parse_duration(s).is_err(), "{s}");
        }
    }
}
