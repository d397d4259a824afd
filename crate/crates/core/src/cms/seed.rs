//! Schema migrations and CSV seeding. This is the only code path that opens
//! the contract database for writing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rusqlite::{params, Connection};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ocs;

/// Versioned migration scripts, applied in order.
pub const MIGRATIONS: &[(u32, &str)] = &[(1, include_str!("../../migrations/0001_init.sql"))];

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{file} record {record}: {message}")]
    InvalidRecord {
        file: String,
        record: usize,
        message: String,
    },
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
}

/// Money as integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cents(pub i64);

impl FromStr for Cents {
    type Err = String;

    /// Accepts `1234`, `1234.5`, `1234.56` and an optional leading `-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (neg, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
        let ok = !whole.is_empty()
            && whole.bytes().all(|b| b.is_ascii_digit())
            && frac.len() <= 2
            && frac.bytes().all(|b| b.is_ascii_digit());
        if !ok {
            return Err(format!("invalid amount {s:?}"));
        }
        let whole: i64 = whole.parse().map_err(|_| format!("amount out of range {s:?}"))?;
        let frac: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().expect("digit") * 10,
            _ => frac.parse().expect("digits"),
        };
        let cents = whole
            .checked_mul(100)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(|| format!("amount out of range {s:?}"))?;
        Ok(Cents(if neg { -cents } else { cents }))
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cents {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Situation {
    Active,
    Closed,
    Suspended,
}

impl Situation {
    pub fn as_str(self) -> &'static str {
        match self {
            Situation::Active => "active",
            Situation::Closed => "closed",
            Situation::Suspended => "suspended",
        }
    }
}

/// One contract row as it appears in the seed CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub ocs: String,
    pub object: String,
    pub supplier: String,
    pub manager: String,
    pub total_value: Cents,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub situation: Situation,
    pub procurement_mode: String,
    #[serde(default)]
    pub source_file: Option<String>,
}

impl ContractRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !ocs::is_valid(&self.ocs) {
            return Err(format!("ocs {:?} is not in nnn/yyyy form", self.ocs));
        }
        if self.start_date > self.end_date {
            return Err(format!(
                "start_date {} is after end_date {}",
                self.start_date, self.end_date
            ));
        }
        if self.total_value.0 < 0 {
            return Err("total_value is negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerRecord {
    pub name: String,
    pub department: String,
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmendmentRecord {
    pub ocs: String,
    pub signed_on: NaiveDate,
    pub description: String,
    pub value_delta: Cents,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SeedReport {
    pub contracts: usize,
    pub managers: usize,
    pub amendments: usize,
}

/// Brings the schema up to the latest migration, tracked via `user_version`.
pub fn apply_migrations(conn: &Connection) -> Result<u32, SeedError> {
    let current: u32 = conn.query_row("PRAGMA user_version", [], |r| r.get(0))?;
    let mut version = current;
    for &(v, sql) in MIGRATIONS {
        if v > current {
            conn.execute_batch(&format!("BEGIN; {sql}\nPRAGMA user_version = {v}; COMMIT;"))?;
            version = v;
        }
    }
    Ok(version)
}

/// Inserts records into a (possibly new) database file in one transaction.
/// Managers referenced by contracts but absent from `managers` are created
/// with placeholder department and email.
pub fn seed(
    db: &Path,
    contracts: &[ContractRecord],
    managers: &[ManagerRecord],
    amendments: &[AmendmentRecord],
) -> Result<SeedReport, SeedError> {
    for (i, c) in contracts.iter().enumerate() {
        c.validate().map_err(|message| SeedError::InvalidRecord {
            file: "contracts".into(),
            record: i + 1,
            message,
        })?;
    }
    let mut conn = Connection::open(db)?;
    apply_migrations(&conn)?;
    let tx = conn.transaction()?;
    let mut report = SeedReport::default();
    {
        let mut put_manager =
            tx.prepare("INSERT OR IGNORE INTO managers (name, department, email) VALUES (?1, ?2, ?3)")?;
        for m in managers {
            report.managers += put_manager.execute(params![m.name, m.department, m.email])?;
        }
        for c in contracts {
            let email = format!("{}@example.org", c.manager.to_lowercase().replace(' ', "."));
            report.managers += put_manager.execute(params![c.manager, "unassigned", email])?;
        }

        let mut put_contract = tx.prepare(
            "INSERT INTO contracts (ocs, object, supplier, manager, total_value_cents, start_date, end_date, \
             situation, procurement_mode, source_file) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
        )?;
        for c in contracts {
            put_contract.execute(params![
                c.ocs,
                c.object,
                c.supplier,
                c.manager,
                c.total_value.0,
                c.start_date.to_string(),
                c.end_date.to_string(),
                c.situation.as_str(),
                c.procurement_mode,
                c.source_file,
            ])?;
            report.contracts += 1;
        }

        let mut put_amendment = tx.prepare(
            "INSERT INTO amendments (ocs, signed_on, description, value_delta_cents) VALUES (?1, ?2, ?3, ?4)",
        )?;
        for a in amendments {
            put_amendment.execute(params![a.ocs, a.signed_on.to_string(), a.description, a.value_delta.0])?;
            report.amendments += 1;
        }
    }
    tx.commit()?;
    Ok(report)
}

/// Reads typed records from a CSV file with a header row.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SeedError> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| SeedError::Read {
        path: name.clone(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| SeedError::InvalidRecord {
                file: name.clone(),
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes records as CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cents_parse_and_display() {
        assert_eq!("1234.56".parse::<Cents>().unwrap(), Cents(123_456));
        assert_eq!("1234.5".parse::<Cents>().unwrap(), Cents(123_450));
        assert_eq!("7".parse::<Cents>().unwrap(), Cents(700));
        assert_eq!("-0.05".parse::<Cents>().unwrap(), Cents(-5));
        assert!("1.234".parse::<Cents>().is_err());
        assert!("abc".parse::<Cents>().is_err());
        assert!(".5".parse::<Cents>().is_err());
        assert_eq!(Cents(123_456).to_string(), "1234.56");
        assert_eq!(Cents(-5).to_string(), "-0.05");
    }

    fn record(ocs: &str) -> ContractRecord {
        ContractRecord {
            ocs: ocs.into(),
            object: "Suporte".into(),
            supplier: "Oracle do Brasil Sistemas Ltda.".into(),
            manager: "Ana Souza".into(),
            total_value: Cents(100),
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            situation: Situation::Active,
            procurement_mode: "tender".into(),
            source_file: None,
        }
    }

    #[test]
    fn record_validation() {
        assert!(record("278/2023").validate().is_ok());
        assert!(record("278-2023").validate().is_err());
        let mut r = record("1/2020");
        r.end_date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        assert!(r.validate().is_err());
    }

    #[test]
    fn seeds_and_migrates_once() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("cms.db");
        let report = seed(&db, &[record("278/2023"), record("159/2021")], &[], &[]).unwrap();
        assert_eq!(report.contracts, 2);
        assert_eq!(report.managers, 1);
        let conn = Connection::open(&db).unwrap();
        assert_eq!(apply_migrations(&conn).unwrap(), 1);
        let n: i64 = conn
            .query_row("SELECT COUNT(*) FROM contracts", [], |r| r.get(0))
            .unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn duplicate_ocs_rolls_back() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("cms.db");
        assert!(seed(&db, &[record("1/2020"), record("1/2020")], &[], &[]).is_err());
        let conn = Connection::open(&db).unwrap();
        let n: i64 = conn
            .query_row("SELECT COUNT(*) FROM contracts", [], |r| r.get(0))
            .unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_csv(&path, &[record("278/2023")]).unwrap();
        let back: Vec<ContractRecord> = read_csv(&path).unwrap();
        assert_eq!(back, vec![record("278/2023")]);
    }
}
