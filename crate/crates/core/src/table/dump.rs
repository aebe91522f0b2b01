use super::{ColumnKind, FusionTable, Placement, Row, Src};
use crate::graph::Primitive;
use std::collections::BTreeMap;
use std::fmt::Write as _;

impl FusionTable {
    fn row_label(&self, row: &Row) -> String {
        match row {
            Row::Var(v) => self.rows.iter().position(|r| r == v).map(|i| self.row_names[i].clone()).unwrap_or_else(|| v.clone()),
            Row::Val => "val".into(),
        }
    }

    fn place_label(&self, place: &Placement) -> String {
        match place {
            Placement::Column(c) => self.columns[*c].name.clone(),
            Placement::Merged(cs) => cs.iter().map(|c| self.columns[*c].name.clone()).collect::<Vec<_>>().join("|"),
            Placement::Writer => "out".into(),
        }
    }

    fn red1_ref(&self, src: &Src) -> Option<usize> {
        let mut s = src.clone();
        for _ in 0..self.items.len() + self.scopes.len() + 1 {
            match s {
                Src::Port { item, port: 0 } if matches!(self.items[item].prim, Primitive::Red1 { .. }) => return Some(item),
                Src::Scope { scope, ref var } => s = self.scopes.get(&(scope, var.clone()))?.clone(),
                _ => return None,
            }
        }
        None
    }

    /// Cell contents keyed by (row, column or merged span): primitives, plus
    /// `name[crd0]` entries where a reducer's coordinates are referenced.
    pub fn cells(&self) -> BTreeMap<(String, String), Vec<String>> {
        let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for it in &self.items {
            out.entry((self.row_label(&it.row), self.place_label(&it.place))).or_default().push(it.name.clone());
            for src in &it.inputs {
                if let Some(r) = self.red1_ref(src) {
                    let key = (self.row_label(&self.items[r].row), self.place_label(&it.place));
                    let label = format!("{}[crd0]", self.items[r].name);
                    let cell = out.entry(key).or_default();
                    if !cell.contains(&label) {
                        cell.push(label);
                    }
                }
            }
        }
        let out_col = self
            .columns
            .iter()
            .position(|c| c.kind == ColumnKind::Output)
            .or_else(|| self.columns.iter().position(|c| c.name == self.region))
            .unwrap_or(self.columns.len().saturating_sub(1));
        for src in &self.out_crds {
            if let Some(r) = self.red1_ref(src) {
                let key = (self.row_label(&self.items[r].row), self.columns[out_col].name.clone());
                out.entry(key).or_default().push(format!("{}[crd0]", self.items[r].name));
            }
        }
        out
    }

    /// Aligned text grid; merged cells are listed after the grid.
    pub fn dump_text(&self) -> String {
        let cells = self.cells();
        let mut rows: Vec<String> = self.row_names.clone();
        rows.push("val".into());
        let cols: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        let width = |c: &str| {
            rows.iter()
                .map(|r| cells.get(&(r.clone(), c.to_string())).map(|v| v.join(", ").len()).unwrap_or(1))
                .max()
                .unwrap_or(1)
                .max(c.len())
        };
        let widths: Vec<usize> = cols.iter().map(|c| width(c)).collect();
        let rw = rows.iter().map(|r| r.len()).max().unwrap_or(3).max(3);
        let mut s = format!("{:rw$}", "");
        for (c, w) in cols.iter().zip(&widths) {
            let _ = write!(s, " | {c:w$}");
        }
        s.push('\n');
        for r in &rows {
            let _ = write!(s, "{r:rw$}");
            for (c, w) in cols.iter().zip(&widths) {
                let text = cells.get(&(r.clone(), c.clone())).map(|v| v.join(", ")).unwrap_or_else(|| "-".into());
                let _ = write!(s, " | {text:w$}");
            }
            s.push('\n');
        }
        for ((r, c), items) in &cells {
            if c.contains('|') {
                let _ = writeln!(s, "{r}: [{c}] {}", items.join(", "));
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}
