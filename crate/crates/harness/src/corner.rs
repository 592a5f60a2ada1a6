//! Plot data for corner figures: weighted 1D and 2D histograms per run.

use std::path::Path;

use anyhow::{bail, Context};
use neutra_core::diagnostics::weighted_quantile;
use neutra_core::scalar::format_f64;

use crate::output::{self, Manifest, SampleTable};

pub const INTERVAL_MASS: f64 = 0.68;
pub const CONTOUR_MASSES: [f64; 2] = [0.68, 0.95];

#[derive(Debug, Clone)]
pub struct CornerInput {
    pub label: String,
    pub table: SampleTable,
}

/// A run directory (samples plus manifest) or a bare samples CSV.
pub fn load_artifact(path: &Path) -> anyhow::Result<CornerInput> {
    if path.is_dir() {
        let table = SampleTable::read_csv(&path.join(output::SAMPLES_FILE))?;
        let manifest_path = path.join(output::MANIFEST_FILE);
        let label = if manifest_path.exists() {
            let m: Manifest = output::read_json(&manifest_path)?;
            m.config.method.as_str().to_string()
        } else {
            path.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned())
        };
        return Ok(CornerInput { label, table });
    }
    let table = SampleTable::read_csv(path)?;
    let label = path.file_stem().map_or("run".into(), |n| n.to_string_lossy().into_owned());
    Ok(CornerInput { label, table })
}

/// Histogram densities over equal bins on `[lo, hi]`, normalized by the total
/// weight so draws outside the range still count against the mass.
pub fn histogram_1d(values: &[f64], weights: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let total: f64 = weights.iter().sum();
    let mut h = vec![0.0; bins];
    for (&x, &w) in values.iter().zip(weights) {
        if let Some(i) = bin_of(x, lo, width, bins) {
            h[i] += w;
        }
    }
    h.iter().map(|m| m / (total * width)).collect()
}

/// `h[i][j]` is the density in x-bin `i`, y-bin `j`.
pub fn histogram_2d(xs: &[f64], ys: &[f64], weights: &[f64], x_range: (f64, f64), y_range: (f64, f64), bins: usize) -> Vec<Vec<f64>> {
    let wx = (x_range.1 - x_range.0) / bins as f64;
    let wy = (y_range.1 - y_range.0) / bins as f64;
    let total: f64 = weights.iter().sum();
    let mut h = vec![vec![0.0; bins]; bins];
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        if let (Some(i), Some(j)) = (bin_of(x, x_range.0, wx, bins), bin_of(y, y_range.0, wy, bins)) {
            h[i][j] += w;
        }
    }
    let area = wx * wy * total;
    h.iter().map(|r| r.iter().map(|m| m / area).collect()).collect()
}

fn bin_of(x: f64, lo: f64, width: f64, bins: usize) -> Option<usize> {
    let t = (x - lo) / width;
    if !(t >= 0.0 && t <= bins as f64) {
        return None;
    }
    Some((t as usize).min(bins - 1))
}

/// Density level of the highest cells that together hold `mass` of the grid's
/// total mass.
pub fn histogram_level(h: &[Vec<f64>], mass: f64) -> f64 {
    let mut cells: Vec<f64> = h.iter().flatten().copied().collect();
    cells.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = cells.iter().sum();
    let mut acc = 0.0;
    for &c in &cells {
        acc += c;
        if acc >= mass * total {
            return c;
        }
    }
    0.0
}

#[derive(Debug, Clone, Default)]
pub struct CornerBundle {
    pub marginals_csv: String,
    pub intervals_csv: String,
    /// Absent for a single input.
    pub pairs_csv: Option<String>,
    pub levels_csv: Option<String>,
}

fn centers(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let w = (hi - lo) / bins as f64;
    (0..bins).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Shared per-parameter ranges, per-run marginals with 68% equal-tailed
/// markers, and, for two or more runs, overlaid pair histograms.
pub fn corner(inputs: &[CornerInput], bins_1d: usize, bins_2d: usize) -> anyhow::Result<CornerBundle> {
    let Some(first) = inputs.first() else {
        bail!("corner needs at least one artifact");
    };
    if bins_1d == 0 || bins_2d == 0 {
        bail!("bin counts must be positive");
    }
    let names = &first.table.names;
    for inp in inputs {
        if &inp.table.names != names {
            bail!("{}: parameters {:?} differ from {:?}", inp.label, inp.table.names, names);
        }
        if inp.table.rows.is_empty() {
            bail!("{}: no samples", inp.label);
        }
    }
    let k = names.len();
    let columns: Vec<(Vec<Vec<f64>>, Vec<f64>)> = inputs
        .iter()
        .map(|inp| {
            let cols = (0..k).map(|j| inp.table.rows.iter().map(|r| r[j]).collect()).collect();
            (cols, normalized(&inp.table.weights_or_uniform()))
        })
        .collect();

    let mut ranges = Vec::with_capacity(k);
    for j in 0..k {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (cols, w) in &columns {
            lo = lo.min(weighted_quantile(&cols[j], w, 0.001)?);
            hi = hi.max(weighted_quantile(&cols[j], w, 0.999)?);
        }
        let pad = 0.05 * (hi - lo).max(1e-12);
        ranges.push((lo - pad, hi + pad));
    }

    let mut bundle = CornerBundle {
        marginals_csv: String::from("label,parameter,x,density\n"),
        intervals_csv: String::from("label,parameter,lo,median,hi\n"),
        ..CornerBundle::default()
    };
    for (inp, (cols, w)) in inputs.iter().zip(&columns) {
        for j in 0..k {
            let (lo, hi) = ranges[j];
            let dens = histogram_1d(&cols[j], w, lo, hi, bins_1d);
            for (x, d) in centers(lo, hi, bins_1d).iter().zip(&dens) {
                bundle.marginals_csv.push_str(&format!("{},{},{},{}\n", inp.label, names[j], format_f64(*x), format_f64(*d)));
            }
            let q = |p: f64| weighted_quantile(&cols[j], w, p);
            let (a, m, b) = (q(0.5 * (1.0 - INTERVAL_MASS))?, q(0.5)?, q(0.5 * (1.0 + INTERVAL_MASS))?);
            bundle.intervals_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                inp.label,
                names[j],
                format_f64(a),
                format_f64(m),
                format_f64(b)
            ));
        }
    }
    if inputs.len() < 2 {
        return Ok(bundle);
    }
    let mut pairs = String::from("label,x_parameter,y_parameter,x,y,density\n");
    let mut levels = String::from("label,x_parameter,y_parameter,mass,level\n");
    for (inp, (cols, w)) in inputs.iter().zip(&columns) {
        for jx in 0..k {
            for jy in jx + 1..k {
                let h = histogram_2d(&cols[jx], &cols[jy], w, ranges[jx], ranges[jy], bins_2d);
                let cx = centers(ranges[jx].0, ranges[jx].1, bins_2d);
                let cy = centers(ranges[jy].0, ranges[jy].1, bins_2d);
                for (i, x) in cx.iter().enumerate() {
                    for (l, y) in cy.iter().enumerate() {
                        pairs.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            inp.label,
                            names[jx],
                            names[jy],
                            format_f64(*x),
                            format_f64(*y),
                            format_f64(h[i][l])
                        ));
                    }
                }
                for mass in CONTOUR_MASSES {
                    levels.push_str(&format!(
                        "{},{},{},{},{}\n",
                        inp.label,
                        names[jx],
                        names[jy],
                        format_f64(mass),
                        format_f64(histogram_level(&h, mass))
                    ));
                }
            }
        }
    }
    bundle.pairs_csv = Some(pairs);
    bundle.levels_csv = Some(levels);
    Ok(bundle)
}

pub fn write_bundle(dir: &Path, bundle: &CornerBundle) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> anyhow::Result<()> {
        std::fs::write(dir.join(name), text)?;
        files.push(name.to_string());
        Ok(())
    };
    put("marginals.csv", &bundle.marginals_csv)?;
    put("intervals.csv", &bundle.intervals_csv)?;
    if let Some(p) = &bundle.pairs_csv {
        put("pairs.csv", p)?;
    }
    if let Some(l) = &bundle.levels_csv {
        put("pair_levels.csv", l)?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_mass_in_range() {
        let xs = [0.1, 0.2, 0.7, 5.0];
        let w = [0.25; 4];
        let h = histogram_1d(&xs, &w, 0.0, 1.0, 4);
        let mass: f64 = h.iter().map(|d| d * 0.25).sum();
        assert!((mass - 0.75).abs() < 1e-12);
    }

    #[test]
    fn upper_edge_falls_in_last_bin() {
        let h = histogram_1d(&[1.0], &[1.0], 0.0, 1.0, 2);
        assert_eq!(h, vec![0.0, 2.0]);
    }

    #[test]
    fn level_selects_the_densest_cells() {
        let h = vec![vec![4.0, 1.0], vec![3.0, 2.0]];
        assert_eq!(histogram_level(&h, 0.5), 3.0);
        assert_eq!(histogram_level(&h, 0.95), 1.0);
    }
}
