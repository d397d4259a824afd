use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cms::{cell_text, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Bar,
    Line,
    Pie,
}

/// Chart description for the client to render. `x.len() == y.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub title: String,
    pub x: Vec<String>,
    pub y: Vec<f64>,
    pub y_label: String,
}

pub const MIN_CHART_ROWS: usize = 2;
pub const MAX_CHART_ROWS: usize = 30;

/// A bar chart when the table has a text column and a numeric column and
/// between 2 and 30 rows. The first qualifying column of each kind is used.
pub fn decide_chart(table: &Table) -> Option<ChartSpec> {
    let n = table.rows.len();
    if !(MIN_CHART_ROWS..=MAX_CHART_ROWS).contains(&n) {
        return None;
    }
    let column_is = |i: usize, pred: fn(&Value) -> bool| table.rows.iter().all(|r| r.get(i).is_some_and(pred));
    let label = (0..table.columns.len()).find(|&i| column_is(i, Value::is_string))?;
    let value = (0..table.columns.len()).find(|&i| i != label && column_is(i, Value::is_number))?;
    Some(ChartSpec {
        kind: ChartKind::Bar,
        title: format!("{} by {}", table.columns[value], table.columns[label]),
        x: table.rows.iter().map(|r| cell_text(&r[label])).collect(),
        y: table
            .rows
            .iter()
            .map(|r| r[value].as_f64().unwrap_or_default())
            .collect(),
        y_label: table.columns[value].clone(),
    })
}
