//! Tabular data behind the standard figures: cosine-to-target histograms,
//! PCA scatter, harmlessness bars and dropout curves.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::inject::{inject_embmarker, inject_espew, inject_espew_random};
use crate::key::WatermarkKey;
use crate::stats::top_k_components;
use crate::verify::VerificationReport;

use super::pipeline::{run_pipeline, AttackSpec, PipelineConfig, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    CosHistogram,
    PcaScatter,
    HarmlessnessBars,
    DropoutCurve,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::CosHistogram,
        PlotKind::PcaScatter,
        PlotKind::HarmlessnessBars,
        PlotKind::DropoutCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::CosHistogram => "cos_histogram",
            PlotKind::PcaScatter => "pca_scatter",
            PlotKind::HarmlessnessBars => "harmlessness_bars",
            PlotKind::DropoutCurve => "dropout_curve",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown plot kind {s:?}")))
    }
}

/// A header row plus data rows, written tab-separated.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }
}

fn check_rows(ids: &[String], flags: &[bool], m: &EmbeddingMatrix) -> Result<()> {
    if ids.len() != m.rows() || flags.len() != m.rows() {
        return Err(Error::domain(format!(
            "{} ids and {} flags for {} rows",
            ids.len(),
            flags.len(),
            m.rows()
        )));
    }
    Ok(())
}

/// One line per row: its cosine to `target` and whether it was watermarked.
pub fn cos_histogram(ids: &[String], m: &EmbeddingMatrix, target: &[f64], watermarked: &[bool]) -> Result<PlotTable> {
    check_rows(ids, watermarked, m)?;
    let cos = m
        .iter_rows()
        .map(|r| cosine(r, target))
        .collect::<Result<Vec<_>>>()?;
    Ok(PlotTable {
        header: vec!["id", "cos_to_target", "watermarked"],
        rows: ids
            .iter()
            .zip(cos)
            .zip(watermarked)
            .map(|((id, c), w)| vec![id.clone(), c.to_string(), w.to_string()])
            .collect(),
    })
}

/// Rows projected onto the two leading principal directions, measured from
/// the column mean.
pub fn pca_scatter(ids: &[String], m: &EmbeddingMatrix, watermarked: &[bool]) -> Result<PlotTable> {
    check_rows(ids, watermarked, m)?;
    let pc = top_k_components(m, 2)?;
    let mut mean = vec![0.0; m.dim()];
    for r in m.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(c, v)| *c += v);
    }
    mean.iter_mut().for_each(|c| *c /= m.rows() as f64);
    let dirs = pc.components();
    let project = |r: &[f64], d: &[f64]| -> f64 { r.iter().zip(&mean).zip(d).map(|((v, c), w)| (v - c) * w).sum() };
    Ok(PlotTable {
        header: vec!["id", "pc1", "pc2", "watermarked"],
        rows: ids
            .iter()
            .zip(m.iter_rows())
            .zip(watermarked)
            .map(|((id, r), w)| {
                vec![
                    id.clone(),
                    project(r, &dirs[0]).to_string(),
                    project(r, &dirs[1]).to_string(),
                    w.to_string(),
                ]
            })
            .collect(),
    })
}

/// Mean cosine between clean embeddings and their watermarked versions when
/// every row is watermarked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmlessness {
    /// Smallest-magnitude positions replaced.
    pub espew_min: f64,
    /// Uniformly random positions replaced.
    pub espew_random: f64,
    /// Full interpolation to the target.
    pub embmarker_full: f64,
}

/// Every row of `clean` watermarked with `key`'s first target at
/// proportion `alpha`, regardless of triggers.
pub fn harmlessness(ids: &[String], clean: &EmbeddingMatrix, target: &[f64], alpha: f64, seed: u64) -> Result<Harmlessness> {
    if ids.len() != clean.rows() {
        return Err(Error::domain(format!("{} ids for {} rows", ids.len(), clean.rows())));
    }
    if clean.rows() == 0 {
        return Err(Error::domain("harmlessness needs at least one row"));
    }
    let per_row = (0..clean.rows())
        .into_par_iter()
        .map(|i| {
            let e = clean.row(i);
            Ok([
                cosine(e, inject_espew(e, target, alpha)?.values())?,
                cosine(e, inject_espew_random(e, target, alpha, &ids[i], seed)?.values())?,
                cosine(e, inject_embmarker(e, target, 1, 1)?.values())?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_row.len() as f64;
    let avg = |j: usize| per_row.iter().map(|r| r[j]).sum::<f64>() / n;
    Ok(Harmlessness {
        espew_min: avg(0),
        espew_random: avg(1),
        embmarker_full: avg(2),
    })
}

/// Harmlessness of the world's copy corpus under `key`'s first target.
pub fn world_harmlessness(world: &World, key: &WatermarkKey, seed: u64) -> Result<Harmlessness> {
    let ids: Vec<String> = world.corpus.iter().map(|d| d.id.clone()).collect();
    harmlessness(&ids, &world.clean, key.targets[0].values(), key.alpha, seed)
}

pub fn harmlessness_bars(h: &Harmlessness) -> PlotTable {
    let bar = |name: &str, v: f64| vec![name.to_string(), v.to_string(), ((1.0 - v) * 100.0).to_string()];
    PlotTable {
        header: vec!["variant", "mean_cos_to_clean", "change_pct"],
        rows: vec![
            bar("espew_min", h.espew_min),
            bar("espew_random", h.espew_random),
            bar("embmarker_full", h.embmarker_full),
        ],
    }
}

pub const DEFAULT_DROPOUT_RATES: [f64; 9] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// Verification of the stealer after dropout at each rate.
pub fn dropout_reports(
    world: &World,
    key: &WatermarkKey,
    rates: &[f64],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<(f64, VerificationReport)>> {
    rates
        .par_iter()
        .map(|&rate| {
            let out = run_pipeline(world, key, &AttackSpec::Dropout { rate }, cfg, seed)?;
            Ok((rate, out.report))
        })
        .collect()
}

pub fn dropout_curve(points: &[(f64, VerificationReport)]) -> PlotTable {
    PlotTable {
        header: vec!["rate", "p_value", "delta_cos_pct", "delta_l2_pct", "is_copy"],
        rows: points
            .iter()
            .map(|(rate, r)| {
                vec![
                    rate.to_string(),
                    r.p_value.to_string(),
                    r.delta_cos_pct.to_string(),
                    r.delta_l2_pct.to_string(),
                    r.is_copy.to_string(),
                ]
            })
            .collect(),
    }
}
