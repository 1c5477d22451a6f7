//! Parsing of quantities with SI suffixes, as typed on the command line.

use crate::error::{Error, Result};

fn split_number(s: &str) -> (&str, &str) {
    let end = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && is_exponent(s, i)))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    (&s[..end], s[end..].trim())
}

/// `e` followed by a digit or sign is an exponent, not a unit.
fn is_exponent(s: &str, i: usize) -> bool {
    i > 0 && s[i + 1..].starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+')
}

fn number(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidData(format!("cannot parse {what} `{s}`")))
}

/// Duration in seconds. Accepts `ps`, `ns`, `us`/`µs`, `ms`, `s`; a bare
/// number is taken as ns.
pub fn parse_duration(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, unit) = split_number(t);
    // Divide rather than multiply so that e.g. 30 ns is the double nearest 3e-8.
    let per_second = match unit {
        "" | "ns" => 1e9,
        "ps" => 1e12,
        "us" | "µs" | "μs" => 1e6,
        "ms" => 1e3,
        "s" => 1.0,
        _ => return Err(Error::InvalidData(format!("unknown duration unit in `{t}`"))),
    };
    Ok(number(num, "duration")? / per_second)
}

/// Rate in Hz. Accepts `Hz`, `k`/`kHz`, `M`/`MHz`, `G`/`GHz`; a bare
/// number is taken as Hz.
pub fn parse_rate(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, unit) = split_number(t);
    let scale = match unit {
        "" | "Hz" => 1.0,
        "k" | "kHz" => 1e3,
        "M" | "MHz" => 1e6,
        "G" | "GHz" => 1e9,
        _ => return Err(Error::InvalidData(format!("unknown rate unit in `{t}`"))),
    };
    Ok(number(num, "rate")? * scale)
}

/// Either `start:stop:count` (inclusive, evenly spaced) or a comma list.
pub fn parse_rate_list(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let rates = match parts.as_slice() {
        [start, stop, count] => {
            let (a, b) = (parse_rate(start)?, parse_rate(stop)?);
            let n: usize = count
                .trim()
                .parse()
                .map_err(|_| Error::InvalidData(format!("bad point count `{count}`")))?;
            match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }
        }
        [list] => list.split(',').map(parse_rate).collect::<Result<_>>()?,
        _ => return Err(Error::InvalidData(format!("bad rate list `{s}`"))),
    };
    if rates.is_empty() {
        return Err(Error::InvalidData("empty rate list".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidData(format!("rates must be > 0, got {r}")));
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("172ns").unwrap(), 172e-9);
        assert_eq!(parse_duration("30").unwrap(), 30e-9);
        assert_eq!(parse_duration("1.5us").unwrap(), 1.5e-6);
        assert_eq!(parse_duration("2e3ps").unwrap(), 2e-9);
        assert_eq!(parse_duration("30ns").unwrap(), 30e-9);
        assert!(parse_duration("3 parsecs").is_err());
        assert!(parse_duration("ns").is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(parse_rate("50k").unwrap(), 5e4);
        assert_eq!(parse_rate("1.2MHz").unwrap(), 1.2e6);
        assert_eq!(parse_rate("3e5").unwrap(), 3e5);
        assert!(parse_rate("5x").is_err());
    }

    #[test]
    fn rate_lists() {
        let r = parse_rate_list("50k:500k:10").unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], 5e4);
        assert_eq!(r[9], 5e5);
        assert_eq!(parse_rate_list("1e5,2e5").unwrap(), vec![1e5, 2e5]);
        assert!(parse_rate_list("0:1k:3").is_err());
        assert!(parse_rate_list("1k:2k:0").is_err());
        assert!(parse_rate_list("1:2").is_err());
    }
}
