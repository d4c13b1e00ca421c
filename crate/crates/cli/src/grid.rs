//! Ablation grid specifications.
//!
//! A grid is either a built-in name (`ablation`, `blocks`) or a JSON file:
//!
//! ```json
//! {
//!   "cells": [
//!     {"name": "mr", "preset": "mr"},
//!     {"name": "ce-x1", "norm": "sigmoid", "measure": "ce", "branches": "x1:linear", "blocks": "all"}
//!   ],
//!   "grids": [
//!     {"norm": ["l2", "sigmoid"], "measure": ["mse", "ce"],
//!      "branches": ["x1:linear", "x1:linear,x2:linear"], "blocks": ["all", "1", "5"]}
//!   ]
//! }
//! ```
//!
//! `grids` expand to their cartesian product. Cells that fail validation
//! (cross-entropy with L2 normalization, duplicate branches) are skipped with
//! a notice on stderr.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mrperceptual::pipeline::{
    ablation_columns, parse_blocks, parse_branches, Metric, MetricConfig,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    cells: Vec<CellSpec>,
    #[serde(default)]
    grids: Vec<ProductSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellSpec {
    name: Option<String>,
    preset: Option<String>,
    norm: Option<String>,
    measure: Option<String>,
    branches: Option<String>,
    blocks: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductSpec {
    norm: Vec<String>,
    measure: Vec<String>,
    #[serde(default = "default_branches")]
    branches: Vec<String>,
    #[serde(default = "default_blocks")]
    blocks: Vec<String>,
}

fn default_branches() -> Vec<String> {
    vec!["x1:linear".into()]
}

fn default_blocks() -> Vec<String> {
    vec!["all".into()]
}

/// A named metric to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub metric: Metric,
}

fn explicit(norm: &str, measure: &str, branches: &str, blocks: &str) -> Result<MetricConfig> {
    let config = MetricConfig::new(parse_branches(branches)?, norm.parse()?, measure.parse()?)
        .with_blocks(parse_blocks(blocks)?);
    Ok(config)
}

/// Keep only valid cells, reporting the others.
fn admit(cells: Vec<Cell>) -> Vec<Cell> {
    cells
        .into_iter()
        .filter(|cell| match &cell.metric {
            Metric::Deep(c) => match c.validate() {
                Ok(()) => true,
                Err(e) => {
                    eprintln!("skipping grid cell {}: {e}", cell.name);
                    false
                }
            },
            Metric::Ssim => true,
        })
        .collect()
}

pub fn builtin(name: &str) -> Option<Vec<Cell>> {
    match name {
        "ablation" => Some(
            ablation_columns()
                .into_iter()
                .map(|(name, c)| Cell {
                    name: name.to_string(),
                    metric: Metric::Deep(c),
                })
                .collect(),
        ),
        "blocks" => {
            let mut cells: Vec<Cell> = (1..=5)
                .map(|b| Cell {
                    name: format!("block{b}"),
                    metric: Metric::Deep(MetricConfig::classical().with_blocks(Some(vec![b]))),
                })
                .collect();
            cells.push(Cell {
                name: "all".into(),
                metric: Metric::Deep(MetricConfig::classical()),
            });
            Some(cells)
        }
        _ => None,
    }
}

pub fn parse_grid_json(text: &str) -> Result<Vec<Cell>> {
    let file: GridFile = serde_json::from_str(text).context("parsing grid spec")?;
    let mut cells = Vec::new();
    for (i, spec) in file.cells.into_iter().enumerate() {
        let metric = match (&spec.preset, &spec.norm, &spec.measure) {
            (Some(p), None, None) => {
                let mut m = Metric::preset(p)?;
                if let (Metric::Deep(c), Some(blocks)) = (&mut m, &spec.blocks) {
                    c.block_mask = parse_blocks(blocks)?;
                }
                m
            }
            (None, Some(n), Some(m)) => Metric::Deep(explicit(
                n,
                m,
                spec.branches.as_deref().unwrap_or("x1:linear"),
                spec.blocks.as_deref().unwrap_or("all"),
            )?),
            _ => bail!("grid cell {i}: give either `preset` or both `norm` and `measure`"),
        };
        let name = spec.name.unwrap_or_else(|| metric.label());
        cells.push(Cell { name, metric });
    }
    for g in file.grids {
        for n in &g.norm {
            for m in &g.measure {
                for br in &g.branches {
                    for bl in &g.blocks {
                        let metric = Metric::Deep(explicit(n, m, br, bl)?);
                        cells.push(Cell {
                            name: metric.label(),
                            metric,
                        });
                    }
                }
            }
        }
    }
    let admitted = admit(cells);
    if admitted.is_empty() {
        bail!("grid spec has no valid cells");
    }
    Ok(admitted)
}

pub fn load_grid(spec: &str) -> Result<Vec<Cell>> {
    if let Some(cells) = builtin(spec) {
        return Ok(cells);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).with_context(|| {
        format!("grid `{spec}` is neither `ablation`, `blocks` nor a readable file")
    })?;
    parse_grid_json(&text)
}
