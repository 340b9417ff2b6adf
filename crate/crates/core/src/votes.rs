//! Survey records shared by the service, the QA filters and the models:
//! votes, rater sessions and their CSV exchange formats.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamp format used in every CSV export (UTC, microseconds).
pub const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6fZ";

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.format(TS_FORMAT).to_string()
}

pub fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT)
        .map(|n| n.and_utc())
        .or_else(|_| DateTime::parse_from_rfc3339(s).map(|d| d.with_timezone(&Utc)))
        .map_err(|e| Error::invalid(format!("bad timestamp `{s}`: {e}")))
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

string_enum!(
    /// What the rater did with a served pair.
    Choice {
        Left => "left",
        Right => "right",
        NotComparable => "not_comparable",
        NotShown => "not_shown",
    }
);

string_enum!(PairKind { Fresh => "fresh", Repeated => "repeated" });
string_enum!(Location { London => "london", NotLondon => "not_london" });
string_enum!(Gender { Female => "female", Male => "male", Other => "other" });
string_enum!(Activity { High => "high", Low => "low" });
string_enum!(Source { Amt => "amt", Network => "network" });

impl Choice {
    pub fn is_decisive(self) -> bool {
        matches!(self, Choice::Left | Choice::Right)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    #[serde(default)]
    pub location: Option<Location>,
    #[serde(default)]
    pub gender: Option<Gender>,
    #[serde(default)]
    pub activity: Option<Activity>,
    #[serde(default)]
    pub source: Option<Source>,
}

impl Demographics {
    pub fn is_empty(&self) -> bool {
        *self == Demographics::default()
    }
}

/// Session attribute used to split raters into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grouping {
    Source,
    Location,
    Gender,
    Activity,
}

impl Grouping {
    /// The group level of a session, if it reported this attribute.
    pub fn level(self, d: &Demographics) -> Option<&'static str> {
        match self {
            Grouping::Source => d.source.map(Source::as_str),
            Grouping::Location => d.location.map(Location::as_str),
            Grouping::Gender => d.gender.map(Gender::as_str),
            Grouping::Activity => d.activity.map(Activity::as_str),
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Grouping::Source),
            "location" => Ok(Grouping::Location),
            "gender" => Ok(Grouping::Gender),
            "activity" => Ok(Grouping::Activity),
            other => Err(Error::invalid(format!("unknown grouping key `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rater {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub demographics: Option<Demographics>,
}

/// Unordered image pair with members in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey(pub String, pub String);

impl PairKey {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            PairKey(a.to_string(), b.to_string())
        } else {
            PairKey(b.to_string(), a.to_string())
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub vote_id: u64,
    pub session_id: String,
    pub left_image: String,
    pub right_image: String,
    pub choice: Choice,
    pub pair_kind: PairKind,
    pub client_ts: Option<DateTime<Utc>>,
    pub server_ts: DateTime<Utc>,
}

impl Vote {
    pub fn pair(&self) -> PairKey {
        PairKey::new(&self.left_image, &self.right_image)
    }

    /// Image chosen by a decisive vote.
    pub fn winner(&self) -> Option<&str> {
        match self.choice {
            Choice::Left => Some(&self.left_image),
            Choice::Right => Some(&self.right_image),
            _ => None,
        }
    }

    pub fn loser(&self) -> Option<&str> {
        match self.choice {
            Choice::Left => Some(&self.right_image),
            Choice::Right => Some(&self.left_image),
            _ => None,
        }
    }
}

pub const VOTE_HEADER: [&str; 8] = [
    "vote_id",
    "session_id",
    "left_image",
    "right_image",
    "choice",
    "pair_kind",
    "client_ts",
    "server_ts",
];

pub const SESSION_HEADER: [&str; 6] = ["session_id", "created_at", "location", "gender", "activity", "source"];

/// Writes votes in the order given.
pub fn write_votes<W: Write>(votes: &[Vote], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(VOTE_HEADER)?;
    for v in votes {
        w.write_record([
            v.vote_id.to_string(),
            v.session_id.clone(),
            v.left_image.clone(),
            v.right_image.clone(),
            v.choice.to_string(),
            v.pair_kind.to_string(),
            v.client_ts.as_ref().map(format_ts).unwrap_or_default(),
            format_ts(&v.server_ts),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_votes<R: Read>(reader: R, source: &Path) -> Result<Vec<Vote>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &VOTE_HEADER, source)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let at = |e: Error| Error::parse(source, line, e.to_string());
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        let vote_id = rec[0]
            .parse()
            .map_err(|e| Error::parse(source, line, format!("vote_id: {e}")))?;
        let client_ts = match &rec[6] {
            "" => None,
            s => Some(parse_ts(s).map_err(at)?),
        };
        out.push(Vote {
            vote_id,
            session_id: rec[1].to_string(),
            left_image: rec[2].to_string(),
            right_image: rec[3].to_string(),
            choice: rec[4].parse().map_err(at)?,
            pair_kind: rec[5].parse().map_err(at)?,
            client_ts,
            server_ts: parse_ts(&rec[7]).map_err(at)?,
        });
    }
    Ok(out)
}

fn opt_str<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sessions<W: Write>(raters: &[Rater], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SESSION_HEADER)?;
    for r in raters {
        let d = r.demographics.unwrap_or_default();
        w.write_record([
            r.session_id.clone(),
            format_ts(&r.created_at),
            opt_str(d.location),
            opt_str(d.gender),
            opt_str(d.activity),
            opt_str(d.source),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions<R: Read>(reader: R, source: &Path) -> Result<Vec<Rater>> {
    fn field<T: FromStr<Err = Error>>(s: &str) -> Result<Option<T>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some)
        }
    }
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &SESSION_HEADER, source)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let at = |e: Error| Error::parse(source, line, e.to_string());
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        let d = Demographics {
            location: field(&rec[2]).map_err(at)?,
            gender: field(&rec[3]).map_err(at)?,
            activity: field(&rec[4]).map_err(at)?,
            source: field(&rec[5]).map_err(at)?,
        };
        out.push(Rater {
            session_id: rec[0].to_string(),
            created_at: parse_ts(&rec[1]).map_err(at)?,
            demographics: (!d.is_empty()).then_some(d),
        });
    }
    Ok(out)
}

fn check_header(found: &csv::StringRecord, expected: &[&str], source: &Path) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            source,
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enums_round_trip_and_reject_unknown() {
        for c in Choice::ALL {
            assert_eq!(c.as_str().parse::<Choice>().unwrap(), *c);
        }
        assert!("maybe".parse::<Location>().is_err());
        assert!("maybe".parse::<Grouping>().is_err());
    }

    #[test]
    fn demographics_json_rejects_unknown_values() {
        let ok: Demographics = serde_json::from_str(r#"{"location":"london","gender":"female"}"#).unwrap();
        assert_eq!(ok.location, Some(Location::London));
        assert!(serde_json::from_str::<Demographics>(r#"{"location":"maybe"}"#).is_err());
        assert!(serde_json::from_str::<Demographics>(r#"{"mood":"happy"}"#).is_err());
    }

    #[test]
    fn pair_key_is_unordered() {
        assert_eq!(PairKey::new("b", "a"), PairKey::new("a", "b"));
    }
}
