//! Coordinate text in hemisphere or signed-decimal notation.

use std::sync::OnceLock;

use regex::Regex;

use super::VerifyError;
use crate::model::GeoPoint;

fn hemisphere_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(\d+(?:\.\d+)?)\s*°?\s*([NS])\s*[,;]?\s*(\d+(?:\.\d+)?)\s*°?\s*([EW])\s*$",
        )
        .expect("static regex")
    })
}

fn decimal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([+-]?\d+(?:\.\d+)?)\s*°?\s*[,;\s]\s*([+-]?\d+(?:\.\d+)?)\s*°?\s*$")
            .expect("static regex")
    })
}

pub fn parse_coordinates(text: &str) -> Result<GeoPoint, VerifyError> {
    let bad = |why: String| VerifyError::BadCoordinates(format!("{text:?}: {why}"));
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
    let (lat, lon) = if let Some(c) = hemisphere_re().captures(text) {
        let mut lat = num(&c[1])?;
        let mut lon = num(&c[3])?;
        if c[2].eq_ignore_ascii_case("s") {
            lat = -lat;
        }
        if c[4].eq_ignore_ascii_case("w") {
            lon = -lon;
        }
        (lat, lon)
    } else if let Some(c) = decimal_re().captures(text) {
        (num(&c[1])?, num(&c[2])?)
    } else {
        return Err(bad("unrecognised notation".into()));
    };
    GeoPoint::new(lat, lon).map_err(|e| bad(e.to_string()))
}

/// Hemisphere notation with shortest round-trip digits.
pub fn format_coordinates(p: &GeoPoint) -> String {
    let ns = if p.lat() < 0.0 { 'S' } else { 'N' };
    let ew = if p.lon() < 0.0 { 'W' } else { 'E' };
    format!("{}° {ns}, {}° {ew}", p.lat().abs(), p.lon().abs())
}
