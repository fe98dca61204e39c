use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{Pipeline, PipelineError, RunConfig, Stage, StageOutcome};

/// One-factor-at-a-time studies over the model and graph settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationTable {
    LayerKind,
    Depth,
    Channels,
    Edges,
    JumpingKnowledge,
}

impl AblationTable {
    pub const ALL: [AblationTable; 5] =
        [AblationTable::LayerKind, AblationTable::Depth, AblationTable::Channels, AblationTable::Edges, AblationTable::JumpingKnowledge];

    pub fn name(self) -> &'static str {
        match self {
            AblationTable::LayerKind => "layer",
            AblationTable::Depth => "depth",
            AblationTable::Channels => "channels",
            AblationTable::Edges => "edges",
            AblationTable::JumpingKnowledge => "jk",
        }
    }

    fn key(self) -> &'static str {
        match self {
            AblationTable::LayerKind => "model.layer_kind",
            AblationTable::Depth => "model.n_layers",
            AblationTable::Channels => "model.hidden_dim",
            AblationTable::Edges => "graph.n_structured",
            AblationTable::JumpingKnowledge => "model.jumping_knowledge",
        }
    }

    fn values(self) -> &'static [&'static str] {
        match self {
            AblationTable::LayerKind => &["sage", "gcn", "graphconv"],
            AblationTable::Depth => &["6", "8", "10", "12"],
            AblationTable::Channels => &["64", "72", "80", "96"],
            AblationTable::Edges => &["0", "100", "200"],
            AblationTable::JumpingKnowledge => &["false", "true"],
        }
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationTable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationTable::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown ablation table `{s}` (layer, depth, channels, edges, jk)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub table: AblationTable,
    pub value: String,
    /// The row whose setting equals the base configuration.
    pub is_default: bool,
}

impl AblationRow {
    pub fn config(&self, base: &RunConfig) -> Result<RunConfig, PipelineError> {
        let mut c = base.clone();
        c.set(self.table.key(), &self.value)?;
        c.validate()?;
        Ok(c)
    }
}

/// Rows of the requested tables; the base setting is always one of the rows of each table.
pub fn ablation_grid(base: &RunConfig, tables: &[AblationTable]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &table in tables {
        let current = base.entries().into_iter().find(|(k, _)| *k == table.key()).map(|(_, v)| v).unwrap_or_default();
        let mut values: Vec<String> = table.values().iter().map(|v| v.to_string()).collect();
        if !values.contains(&current) {
            values.push(current.clone());
        }
        rows.extend(values.into_iter().map(|value| AblationRow { table, is_default: value == current, value }));
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub global_rmse_mm: f64,
    pub cancer_rmse_mm: f64,
    pub dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<(AblationRow, Result<RowMetrics, String>)>,
}

impl AblationReport {
    pub fn get(&self, table: AblationTable, value: &str) -> Option<&Result<RowMetrics, String>> {
        self.rows.iter().find(|(r, _)| r.table == table && r.value == value).map(|(_, m)| m)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|(_, m)| m.is_err()).count()
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        for (row, m) in &self.rows {
            let _ = match m {
                Ok(m) => writeln!(
                    out,
                    "table={} value={} default={} global_rmse_mm={:.6} cancer_rmse_mm={:.6} dsc={:.6}",
                    row.table, row.value, row.is_default, m.global_rmse_mm, m.cancer_rmse_mm, m.dsc
                ),
                Err(e) => writeln!(out, "table={} value={} default={} error={e:?}", row.table, row.value, row.is_default),
            };
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for (row, m) in &self.rows {
            if current != Some(row.table) {
                current = Some(row.table);
                let _ = writeln!(out, "\n### {}\n\n| {} | Global RMSE (mm) | Cancer RMSE (mm) | DSC |\n|---|---|---|---|", row.table, row.table);
            }
            let label = if row.is_default { format!("**{}**", row.value) } else { row.value.clone() };
            let _ = match m {
                Ok(m) => writeln!(out, "| {label} | {:.3} | {:.3} | {:.3} |", m.global_rmse_mm, m.cancer_rmse_mm, m.dsc),
                Err(e) => writeln!(out, "| {label} | failed: {e} | | |"),
            };
        }
        out
    }
}

/// Mean record of an evaluation report.
fn parse_mean(records: &str) -> Option<RowMetrics> {
    let line = records.lines().find(|l| l.starts_with("sample=mean "))?;
    let field = |name: &str| -> Option<f64> {
        line.split_whitespace().find_map(|kv| kv.strip_prefix(name)?.strip_prefix('=')?.parse().ok())
    };
    Some(RowMetrics { global_rmse_mm: field("global_rmse_mm")?, cancer_rmse_mm: field("cancer_rmse_mm")?, dsc: field("dsc")? })
}

impl Pipeline {
    /// Trains and evaluates every row (reusing any stage already built) and writes a summary report.
    pub fn run_ablate(&mut self, tables: &[AblationTable]) -> Result<(StageOutcome, AblationReport), PipelineError> {
        self.prerequisite(Self::run_dataset)?;
        let base = self.config().clone();
        let mut report = AblationReport::default();
        for row in ablation_grid(&base, tables) {
            log::info!("ablation {} = {}", row.table, row.value);
            let result = row.config(&base).and_then(|cfg| {
                self.with_config(cfg, |p| {
                    let outcome = p.prerequisite(Self::run_eval)?;
                    let records = std::fs::read_to_string(outcome.dir.join("eval.txt")).map_err(|e| PipelineError::io(&outcome.dir, e))?;
                    parse_mean(&records).ok_or_else(|| PipelineError::Integrity { stage: Stage::Eval, detail: "no mean record".into() })
                })
            });
            if let Err(e) = &result {
                log::warn!("ablation {} = {} failed: {e}", row.table, row.value);
            }
            report.rows.push((row, result.map_err(|e| e.to_string())));
        }
        let names: Vec<&str> = tables.iter().map(|t| t.name()).collect();
        let mut cfg = base;
        cfg.ablate_tables = tables.to_vec();
        let rows = report.clone();
        let outcome = self.with_config(cfg, |p| {
            p.run_stage(Stage::Ablate, |_| {
                let summary = format!("tables {}\nrows {} ({} failed)\n", names.join(","), rows.rows.len(), rows.failures());
                Ok((vec![("ablation.txt", rows.records().into_bytes()), ("ablation.md", rows.table().into_bytes())], summary))
            })
        })?;
        Ok((outcome, report))
    }
}
