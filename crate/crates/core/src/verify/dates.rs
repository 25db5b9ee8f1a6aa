//! dd/mm/yyyy dates, spans and the consensus rule.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;

use super::VerifyError;
use crate::model::{ConsensusLabel, DateSpan};

pub const CONSENSUS_MAX_DAYS: i64 = 29;
pub const PARTIAL_MAX_DAYS: i64 = 92;

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4})$").expect("static regex"))
}

pub fn parse_date(text: &str) -> Result<NaiveDate, VerifyError> {
    let t = text.trim();
    let bad = || VerifyError::BadDate(text.to_string());
    let c = date_re().captures(t).ok_or_else(bad)?;
    let num = |i: usize| c[i].parse::<u32>().map_err(|_| bad());
    let year = c[3].parse::<i32>().map_err(|_| bad())?;
    NaiveDate::from_ymd_opt(year, num(2)?, num(1)?).ok_or_else(bad)
}

/// A single date or `dd/mm/yyyy - dd/mm/yyyy`; the span is put in order.
pub fn parse_date_span(text: &str) -> Result<DateSpan, VerifyError> {
    let t = text.trim();
    let parts: Vec<&str> = t.split(['-', '\u{2013}', '\u{2014}']).collect();
    match parts.as_slice() {
        [one] => Ok(DateSpan::single(parse_date(one)?)),
        [a, b] => Ok(DateSpan::ordered(parse_date(a)?, parse_date(b)?)),
        _ => Err(VerifyError::BadDate(text.to_string())),
    }
}

/// Under 30 days is consensus, 30 to 92 partial, beyond that non-verifiable.
pub fn classify_consensus(span: &DateSpan) -> ConsensusLabel {
    match span.days() {
        d if d <= CONSENSUS_MAX_DAYS => ConsensusLabel::Consensus,
        d if d <= PARTIAL_MAX_DAYS => ConsensusLabel::Partial,
        _ => ConsensusLabel::NonVerifiable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_accept_dashes_and_order() {
        let s = parse_date_span("02/10/2022 \u{2013} 28/05/2022").unwrap();
        assert_eq!(s.earliest(), NaiveDate::from_ymd_opt(2022, 5, 28).unwrap());
        assert!(parse_date_span("1/1/2020 - 2/1/2020 - 3/1/2020").is_err());
        assert!(parse_date("2022-05-28").is_err());
    }
}
