//! Contract-management database: schema introspection and a read-only
//! execution surface.
//!
//! Every connection handed out here is opened with `SQLITE_OPEN_READ_ONLY`
//! and `PRAGMA query_only`, independently of the statement validation done by
//! the SQL agent. Writes happen only through [`seed`].

pub mod seed;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use seed::{Cents, ContractRecord, Situation};

pub const DEFAULT_MAX_ROWS: usize = 200;
pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum CmsError {
    #[error("cannot open contract database {path}: {message}")]
    ConnectionFailed { path: PathBuf, message: String },
    #[error("sql error: {0}")]
    SqlExecution(String),
    #[error("query exceeded {0} ms")]
    Timeout(u64),
    #[error("max_rows must be at least 1")]
    InvalidRowLimit,
    #[error("unknown column {table}.{column}")]
    UnknownColumn { table: String, column: String },
}

/// Query result: column names and rows in query order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Set when rows beyond `max_rows` were dropped.
    #[serde(default)]
    pub truncated: bool,
}

impl Table {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Single scalar result, if the table is exactly one cell.
    pub fn scalar(&self) -> Option<&Value> {
        match self.rows.as_slice() {
            [row] if row.len() == 1 => row.first(),
            _ => None,
        }
    }

    /// Plain-text rendering: one header line then one pipe-separated line
    /// per row.
    pub fn render(&self) -> String {
        let mut out = self.columns.join(" | ");
        for row in &self.rows {
            out.push('\n');
            let cells: Vec<String> = row.iter().map(cell_text).collect();
            out.push_str(&cells.join(" | "));
        }
        if self.truncated {
            out.push_str("\n(truncated)");
        }
        out
    }
}

/// Cell as display text: strings unquoted, null as `NULL`.
pub fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "NULL".into(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub decl_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    pub row_count: u64,
    pub samples: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDescription {
    pub tables: Vec<TableSchema>,
    pub rendered_text: String,
}

impl SchemaDescription {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    fn render(tables: &[TableSchema]) -> String {
        if tables.is_empty() {
            return "(no tables)".into();
        }
        let mut out = String::new();
        for t in tables {
            let _ = writeln!(out, "TABLE {} ({} rows)", t.name, t.row_count);
            for c in &t.columns {
                let _ = writeln!(out, "  - {} {}", c.name, c.decl_type);
            }
            for row in &t.samples {
                let cells: Vec<String> = row
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => format!("'{}'", s.replace('\'', "''")),
                        other => cell_text(other),
                    })
                    .collect();
                let _ = writeln!(out, "  sample: ({})", cells.join(", "));
            }
        }
        out.truncate(out.trim_end().len());
        out
    }
}

pub struct CmsStore {
    path: PathBuf,
    sample_rows: usize,
    executions: AtomicU64,
}

impl CmsStore {
    /// Opens an existing database file read-only.
    pub fn open(path: &Path) -> Result<Self, CmsError> {
        let store = Self {
            path: path.to_owned(),
            sample_rows: 3,
            executions: AtomicU64::new(0),
        };
        store.connect()?;
        Ok(store)
    }

    /// Sample rows per table included in the schema description.
    pub fn with_sample_rows(mut self, n: usize) -> Self {
        self.sample_rows = n;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of `execute_readonly` calls made so far.
    pub fn execution_count(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn connect(&self) -> Result<Connection, CmsError> {
        let fail = |e: rusqlite::Error| CmsError::ConnectionFailed {
            path: self.path.clone(),
            message: e.to_string(),
        };
        let conn = Connection::open_with_flags(
            &self.path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(fail)?;
        conn.execute_batch("PRAGMA query_only = ON;").map_err(fail)?;
        conn.busy_timeout(Duration::from_secs(2)).map_err(fail)?;
        Ok(conn)
    }

    /// Live schema, ordered by table name then column ordinal.
    pub fn introspect_schema(&self) -> Result<SchemaDescription, CmsError> {
        let conn = self.connect()?;
        let names: Vec<String> = {
            let mut stmt = conn
                .prepare(
                    "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
                )
                .map_err(sql_err)?;
            let names = stmt
                .query_map([], |r| r.get(0))
                .map_err(sql_err)?
                .collect::<Result<_, _>>()
                .map_err(sql_err)?;
            names
        };

        let mut tables = Vec::with_capacity(names.len());
        for name in names {
            let quoted = quote_ident(&name);
            let columns: Vec<ColumnSchema> = {
                let mut stmt = conn
                    .prepare(&format!(
                        "SELECT name, type FROM pragma_table_info({}) ORDER BY cid",
                        quote_literal(&name)
                    ))
                    .map_err(sql_err)?;
                let columns = stmt
                    .query_map([], |r| {
                        Ok(ColumnSchema {
                            name: r.get(0)?,
                            decl_type: r.get::<_, String>(1)?,
                        })
                    })
                    .map_err(sql_err)?
                    .collect::<Result<_, _>>()
                    .map_err(sql_err)?;
                columns
            };
            let row_count: i64 = conn
                .query_row(&format!("SELECT COUNT(*) FROM {quoted}"), [], |r| r.get(0))
                .map_err(sql_err)?;
            let samples = if self.sample_rows > 0 {
                let sql = format!("SELECT * FROM {quoted} ORDER BY rowid LIMIT {}", self.sample_rows);
                read_rows(&conn, &sql, self.sample_rows)?.rows
            } else {
                Vec::new()
            };
            tables.push(TableSchema {
                name,
                columns,
                row_count: row_count as u64,
                samples,
            });
        }
        let rendered_text = SchemaDescription::render(&tables);
        Ok(SchemaDescription { tables, rendered_text })
    }

    /// Runs one statement in a read-only transaction, returning at most
    /// `max_rows` rows. The statement is expected to have passed the SQL
    /// agent's validator already; the connection refuses writes regardless.
    pub fn execute_readonly(&self, sql: &str, max_rows: usize, timeout_ms: u64) -> Result<Table, CmsError> {
        if max_rows == 0 {
            return Err(CmsError::InvalidRowLimit);
        }
        self.executions.fetch_add(1, Ordering::Relaxed);
        let conn = self.connect()?;
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        conn.progress_handler(1_000, Some(move || Instant::now() > deadline));

        conn.execute_batch("BEGIN DEFERRED").map_err(sql_err)?;
        conn.authorizer(Some(readonly_authorizer));
        let result = read_rows(&conn, sql, max_rows).map_err(|e| match e {
            CmsError::SqlExecution(msg) if msg.contains("interrupted") => CmsError::Timeout(timeout_ms),
            other => other,
        });
        conn.authorizer(None::<fn(AuthContext<'_>) -> Authorization>);
        let _ = conn.execute_batch("ROLLBACK");
        result
    }

    /// Whether a contract with this id exists.
    pub fn contract_exists(&self, ocs: &str) -> Result<bool, CmsError> {
        self.value_exists("contracts", "ocs", ocs)
    }

    /// Contract id registered for a source document, if any.
    pub fn contract_for_source(&self, source: &str) -> Result<Option<String>, CmsError> {
        let conn = self.connect()?;
        let mut stmt = conn
            .prepare("SELECT ocs FROM contracts WHERE source_file = ?1 ORDER BY ocs LIMIT 1")
            .map_err(sql_err)?;
        let mut rows = stmt.query([source]).map_err(sql_err)?;
        match rows.next().map_err(sql_err)? {
            Some(row) => Ok(Some(row.get(0).map_err(sql_err)?)),
            None => Ok(None),
        }
    }

    /// Whether `table.column` holds `value` in any row. Identifiers are
    /// checked against the live schema before use.
    pub fn value_exists(&self, table: &str, column: &str, value: &str) -> Result<bool, CmsError> {
        let schema = self.introspect_schema()?;
        let known = schema
            .tables
            .iter()
            .find(|t| t.name == table)
            .is_some_and(|t| t.columns.iter().any(|c| c.name == column));
        if !known {
            return Err(CmsError::UnknownColumn {
                table: table.into(),
                column: column.into(),
            });
        }
        let conn = self.connect()?;
        let sql = format!(
            "SELECT EXISTS(SELECT 1 FROM {} WHERE {} = ?1)",
            quote_ident(table),
            quote_ident(column)
        );
        conn.query_row(&sql, [value], |r| r.get::<_, bool>(0)).map_err(sql_err)
    }
}

fn read_rows(conn: &Connection, sql: &str, max_rows: usize) -> Result<Table, CmsError> {
    let mut stmt = conn.prepare(sql).map_err(sql_err)?;
    if !stmt.readonly() {
        return Err(CmsError::SqlExecution("statement is not read-only".into()));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_owned).collect();
    let width = columns.len();
    let mut rows = stmt.query([]).map_err(sql_err)?;
    let mut out = Vec::new();
    let mut truncated = false;
    while let Some(row) = rows.next().map_err(sql_err)? {
        if out.len() == max_rows {
            truncated = true;
            break;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(to_json(row.get_ref(i).map_err(sql_err)?));
        }
        out.push(cells);
    }
    Ok(Table {
        columns,
        rows: out,
        truncated,
    })
}

fn to_json(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::from(i),
        ValueRef::Real(f) => serde_json::Number::from_f64(f).map_or(Value::Null, Value::Number),
        ValueRef::Text(t) => Value::String(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => {
            let mut s = String::with_capacity(b.len() * 2 + 3);
            s.push_str("x'");
            for byte in b {
                let _ = write!(s, "{byte:02x}");
            }
            s.push('\'');
            Value::String(s)
        }
    }
}

fn sql_err(e: rusqlite::Error) -> CmsError {
    CmsError::SqlExecution(e.to_string())
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Statement-level allowlist: reads, selects and side-effect-free functions.
fn readonly_authorizer(ctx: AuthContext<'_>) -> Authorization {
    match ctx.action {
        AuthAction::Select | AuthAction::Read { .. } | AuthAction::Recursive => Authorization::Allow,
        AuthAction::Function { function_name } if !crate::sql_agent::is_forbidden_function(function_name) => {
            Authorization::Allow
        }
        _ => Authorization::Deny,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch_db(sql: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cms.db");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(sql).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_database_has_no_tables() {
        let (_d, path) = scratch_db("");
        let schema = CmsStore::open(&path).unwrap().introspect_schema().unwrap();
        assert!(schema.is_empty());
        assert_eq!(schema.rendered_text, "(no tables)");
    }

    #[test]
    fn missing_file_fails_to_connect() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            CmsStore::open(&dir.path().join("nope.db")),
            Err(CmsError::ConnectionFailed { .. })
        ));
    }

    #[test]
    fn introspection_sees_new_columns() {
        let (_d, path) = scratch_db("CREATE TABLE b (x INTEGER); CREATE TABLE a (y TEXT);");
        let store = CmsStore::open(&path).unwrap();
        let names: Vec<_> = store
            .introspect_schema()
            .unwrap()
            .tables
            .into_iter()
            .map(|t| t.name)
            .collect();
        assert_eq!(names, ["a", "b"]);

        Connection::open(&path)
            .unwrap()
            .execute_batch("ALTER TABLE a ADD COLUMN z REAL")
            .unwrap();
        let schema = store.introspect_schema().unwrap();
        let cols: Vec<_> = schema.tables[0].columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(cols, ["y", "z"]);
        assert!(schema.rendered_text.contains("  - z REAL"));
    }

    #[test]
    fn store_refuses_side_effects_without_validator() {
        let (d, path) = scratch_db("CREATE TABLE t (x INTEGER); INSERT INTO t VALUES (1);");
        let store = CmsStore::open(&path).unwrap();
        let copy = d.path().join("copy.db");
        let other = d.path().join("other.db");
        for sql in [
            format!("VACUUM INTO '{}'", copy.display()),
            format!("ATTACH DATABASE '{}' AS o", other.display()),
            "SELECT * FROM pragma_table_info('t')".to_owned(),
            "PRAGMA user_version = 7".to_owned(),
            "DELETE FROM t".to_owned(),
        ] {
            assert!(store.execute_readonly(&sql, 10, 1000).is_err(), "{sql}");
        }
        assert!(!copy.exists() && !other.exists());
        assert_eq!(
            store.execute_readonly("SELECT COUNT(*) FROM t", 10, 1000).unwrap().rows[0][0],
            1
        );
    }

    #[test]
    fn row_cap_and_order() {
        let (_d, path) = scratch_db(
            "CREATE TABLE t (n INTEGER); WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM c WHERE n < 50) INSERT INTO t SELECT n FROM c;",
        );
        let store = CmsStore::open(&path).unwrap();
        let table = store
            .execute_readonly("SELECT n FROM t ORDER BY n DESC", 10, 1000)
            .unwrap();
        assert_eq!(table.rows.len(), 10);
        assert!(table.truncated);
        assert_eq!(table.rows[0][0], Value::from(50));
        let table = store.execute_readonly("SELECT COUNT(*) AS c FROM t", 10, 1000).unwrap();
        assert_eq!(table.scalar(), Some(&Value::from(50)));
        assert!(!table.truncated);
        assert!(matches!(
            store.execute_readonly("SELECT 1", 0, 1000),
            Err(CmsError::InvalidRowLimit)
        ));
    }

    #[test]
    fn writes_refused_by_connection() {
        let (_d, path) = scratch_db("CREATE TABLE t (n INTEGER); INSERT INTO t VALUES (1);");
        let store = CmsStore::open(&path).unwrap();
        for sql in [
            "DELETE FROM t",
            "INSERT INTO t VALUES (2)",
            "DROP TABLE t",
            "UPDATE t SET n = 5",
            "CREATE TABLE u (x)",
            "PRAGMA user_version = 7",
        ] {
            assert!(store.execute_readonly(sql, 10, 1000).is_err(), "{sql} must fail");
        }
        assert!(matches!(
            store.execute_readonly("SELECT 1; DELETE FROM t", 10, 1000),
            Err(CmsError::SqlExecution(_))
        ));
        let t = store.execute_readonly("SELECT n FROM t", 10, 1000).unwrap();
        assert_eq!(t.rows, vec![vec![Value::from(1)]]);
    }

    #[test]
    fn missing_table_is_execution_error() {
        let (_d, path) = scratch_db("CREATE TABLE t (n INTEGER);");
        let store = CmsStore::open(&path).unwrap();
        let err = store.execute_readonly("SELECT * FROM nowhere", 10, 1000).unwrap_err();
        assert!(matches!(err, CmsError::SqlExecution(ref m) if m.contains("nowhere")));
    }

    #[test]
    fn runaway_query_times_out() {
        let (_d, path) = scratch_db("CREATE TABLE t (n INTEGER);");
        let store = CmsStore::open(&path).unwrap();
        let sql = "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM c) SELECT COUNT(*) FROM c";
        assert!(matches!(
            store.execute_readonly(sql, 10, 50),
            Err(CmsError::Timeout(50))
        ));
    }

    #[test]
    fn value_exists_checks_identifiers() {
        let (_d, path) = scratch_db("CREATE TABLE t (name TEXT); INSERT INTO t VALUES ('x');");
        let store = CmsStore::open(&path).unwrap();
        assert!(store.value_exists("t", "name", "x").unwrap());
        assert!(!store.value_exists("t", "name", "y").unwrap());
        assert!(matches!(
            store.value_exists("t", "nope", "x"),
            Err(CmsError::UnknownColumn { .. })
        ));
    }

    #[test]
    fn table_render() {
        let t = Table {
            columns: vec!["supplier".into(), "n".into()],
            rows: vec![
                vec![Value::from("Oracle"), Value::from(5)],
                vec![Value::from("IBM"), Value::Null],
            ],
            truncated: false,
        };
        assert_eq!(t.render(), "supplier | n\nOracle | 5\nIBM | NULL");
    }
}
