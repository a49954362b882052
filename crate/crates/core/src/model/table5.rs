//! Parameter totals for the six published layout variants.

use std::fmt;

use serde::Serialize;

use super::{cost, BlockConv, LayoutString, ModelConfig};
use crate::error::Result;

/// `(variant, layout, published total)`
pub const TABLE5: [(&str, &str, u64); 6] = [
    ("Present work", "C--C--C--D--D--C", 820_778),
    ("Version-2", "D--D--D--D--D--D", 818_492),
    ("Version-3", "C--C--C--D--D--D", 821_122),
    ("Version-4", "C--D--C--D--C--D", 819_682),
    ("Version-5", "C--C--D--D--D--D", 820_386),
    ("Version-6", "C--D--D--D--D--D", 818_610),
];

/// Published total of the all-standard reference model.
pub const BASELINE_PUBLISHED: u64 = 822_770;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table5Row {
    pub variant: String,
    pub layout: String,
    pub params: u64,
    pub published: u64,
    /// `params - baseline_params`
    pub delta: i64,
    pub published_delta: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table5Report {
    pub config: String,
    pub baseline_params: u64,
    pub baseline_published: u64,
    /// Parameter change from switching block `i` alone from C to D.
    pub block_deltas: Vec<i64>,
    pub rows: Vec<Table5Row>,
}

fn layout_params(base: &ModelConfig, layout: LayoutString) -> Result<u64> {
    Ok(cost(&base.with_layout(layout)?)?.params_total)
}

pub fn table5_report(base: &ModelConfig) -> Result<Table5Report> {
    let n = base.blocks.len();
    let all_c = LayoutString::all(BlockConv::Standard, n)?;
    let baseline = layout_params(base, all_c.clone())?;
    let mut block_deltas = Vec::with_capacity(n);
    for i in 0..n {
        let mut blocks = all_c.blocks().to_vec();
        blocks[i] = BlockConv::Separable;
        block_deltas.push(layout_params(base, LayoutString::new(blocks)?)? as i64 - baseline as i64);
    }
    let rows = TABLE5
        .iter()
        .map(|&(variant, layout, published)| {
            let params = layout_params(base, layout.parse()?)?;
            Ok(Table5Row {
                variant: variant.into(),
                layout: layout.into(),
                params,
                published,
                delta: params as i64 - baseline as i64,
                published_delta: published as i64 - BASELINE_PUBLISHED as i64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table5Report {
        config: base.name.clone(),
        baseline_params: baseline,
        baseline_published: BASELINE_PUBLISHED,
        block_deltas,
        rows,
    })
}

impl Table5Report {
    /// Every row total equals the baseline plus the single-block deltas of its D positions.
    pub fn is_additive(&self) -> bool {
        self.rows.iter().all(|r| {
            let layout: LayoutString = r.layout.parse().expect("table layouts parse");
            let sum: i64 = layout.separable_blocks().iter().map(|&i| self.block_deltas[i]).sum();
            r.delta == sum
        })
    }

    /// Whenever one row's D positions strictly contain another's, it has strictly
    /// fewer parameters; all totals are distinct and below the baseline.
    pub fn is_ordered(&self) -> bool {
        let sets: Vec<Vec<usize>> = self
            .rows
            .iter()
            .map(|r| r.layout.parse::<LayoutString>().expect("table layouts parse").separable_blocks())
            .collect();
        let subset = |a: &[usize], b: &[usize]| a.len() < b.len() && a.iter().all(|i| b.contains(i));
        for (i, a) in sets.iter().enumerate() {
            for (j, b) in sets.iter().enumerate() {
                if subset(a, b) && self.rows[i].params <= self.rows[j].params {
                    return false;
                }
            }
        }
        let mut totals: Vec<u64> = self.rows.iter().map(|r| r.params).collect();
        totals.sort_unstable();
        totals.dedup();
        totals.len() == self.rows.len()
            && self.block_deltas.iter().all(|&d| d < 0)
            && self.rows.iter().all(|r| r.params < self.baseline_params)
    }

    pub fn present_work(&self) -> &Table5Row {
        &self.rows[0]
    }

    /// Difference between the computed and the published present-work delta.
    pub fn delta_residual(&self) -> i64 {
        let p = self.present_work();
        p.delta - p.published_delta
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for Table5Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "base geometry: {}", self.config)?;
        writeln!(
            f,
            "{:<13} {:<18} {:>10} {:>10} {:>9} {:>10}",
            "variant", "layout", "params", "published", "delta", "pub.delta"
        )?;
        writeln!(
            f,
            "{:<13} {:<18} {:>10} {:>10} {:>9} {:>10}",
            "Baseline", "C--C--C--C--C--C", self.baseline_params, self.baseline_published, 0, 0
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<13} {:<18} {:>10} {:>10} {:>9} {:>10}",
                r.variant, r.layout, r.params, r.published, r.delta, r.published_delta
            )?;
        }
        let deltas: Vec<String> = self.block_deltas.iter().map(|d| d.to_string()).collect();
        writeln!(f, "single-block C->D deltas: [{}]", deltas.join(", "))?;
        writeln!(
            f,
            "additive: {}  ordered: {}  present-work delta residual: {}",
            self.is_additive(),
            self.is_ordered(),
            self.delta_residual()
        )?;
        write!(
            f,
            "baseline residual: {}",
            self.baseline_params as i64 - self.baseline_published as i64
        )
    }
}
