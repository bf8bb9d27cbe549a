use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CepError, ContaminationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotspotCell {
    pub cell_x: i64,
    pub cell_y: i64,
    pub count: usize,
}

/// Counts record centers per grid cell, busiest first.
pub fn hotspot_map(records: &[ContaminationRecord], cell: f64) -> Result<Vec<HotspotCell>, CepError> {
    if !(cell.is_finite() && cell > 0.0) {
        return Err(CepError::InvalidGrid);
    }
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for r in records {
        let c = r.coord.center();
        let key = ((c.x / cell).floor() as i64, (c.y / cell).floor() as i64);
        *counts.entry(key).or_default() += 1;
    }
    let mut cells: Vec<HotspotCell> = counts
        .into_iter()
        .map(|((cell_x, cell_y), count)| HotspotCell {
            cell_x,
            cell_y,
            count,
        })
        .collect();
    cells.sort_by(|a, b| b.count.cmp(&a.count).then((a.cell_x, a.cell_y).cmp(&(b.cell_x, b.cell_y))));
    Ok(cells)
}

pub fn hotspot_csv(cells: &[HotspotCell]) -> String {
    let mut s = String::from("cell_x,cell_y,count\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{}", c.cell_x, c.cell_y, c.count);
    }
    s
}
