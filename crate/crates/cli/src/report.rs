//! Result tables, gap histograms and depth-image panels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crownfit::dataset::{read_case, read_cfr, DepthRaster, MAX_LEVEL};
use crownfit::evalsuite::CorpusSummary;
use crownfit::gapgeom::reconstruct_gap;

use crate::corpus::{split_dir, Split};
use crate::runs::EvalTarget;
use crate::{create_dir, read_json, require, write_text, CliError, CliResult, ExperimentConfig};

/// Range of the gap histograms, millimetres.
pub const HIST_RANGE_MM: (f64, f64) = (-0.5, 0.5);

struct Evaluated {
    target: EvalTarget,
    /// `seed → split → summary`; the design target uses seed 0.
    summaries: BTreeMap<u64, BTreeMap<Split, CorpusSummary>>,
    /// Directory with per-split predictions of the first seed.
    first_seed_dir: PathBuf,
}

fn subdirs(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let e = e.map_err(|e| CliError::io(dir, e))?;
        if e.path().is_dir() {
            out.push((e.file_name().to_string_lossy().into_owned(), e.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn split_summaries(dir: &Path) -> CliResult<BTreeMap<Split, CorpusSummary>> {
    let mut out = BTreeMap::new();
    for split in Split::ALL {
        let path = dir.join(split.name()).join("summary.json");
        if path.is_file() {
            out.insert(split, read_json(&path)?);
        }
    }
    Ok(out)
}

fn collect(eval_root: &Path) -> CliResult<Vec<Evaluated>> {
    let mut found = Vec::new();
    for (name, dir) in subdirs(eval_root)? {
        let Ok(target) = name.parse::<EvalTarget>() else {
            continue;
        };
        let mut summaries = BTreeMap::new();
        let mut first_seed_dir = dir.clone();
        match target {
            EvalTarget::Design => {
                summaries.insert(0, split_summaries(&dir)?);
            }
            EvalTarget::Model(_) => {
                let mut seeds: Vec<(u64, PathBuf)> = subdirs(&dir)?
                    .into_iter()
                    .filter_map(|(n, p)| n.strip_prefix("seed-")?.parse().ok().map(|s| (s, p)))
                    .collect();
                seeds.sort();
                if let Some((_, p)) = seeds.first() {
                    first_seed_dir = p.clone();
                }
                for (s, p) in seeds {
                    summaries.insert(s, split_summaries(&p)?);
                }
            }
        }
        summaries.retain(|_, m| !m.is_empty());
        if !summaries.is_empty() {
            found.push(Evaluated {
                target,
                summaries,
                first_seed_dir,
            });
        }
    }
    found.sort_by_key(|e| e.target);
    Ok(found)
}

/// Median of the present values; `None` when there are none.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

type Field = fn(&CorpusSummary) -> Option<f64>;

fn row(e: &Evaluated, columns: &[(Split, Field)]) -> String {
    let mut line = format!("{},{}", e.target, e.summaries.len());
    for (split, field) in columns {
        let vals: Vec<f64> = e
            .summaries
            .values()
            .filter_map(|m| m.get(split).and_then(field))
            .collect();
        line.push(',');
        line.push_str(&cell(median(vals)));
    }
    line.push('\n');
    line
}

fn table(evaluated: &[Evaluated], header: &str, columns: &[(Split, Field)]) -> String {
    let mut out = format!("setting,seeds,{header}\n");
    for e in evaluated {
        out.push_str(&row(e, columns));
    }
    out
}

fn quality_table(ev: &[Evaluated]) -> String {
    let cols: [(Split, Field); 6] = [
        (Split::Val, |s| s.mean_rmse),
        (Split::Val, |s| s.mean_rmse_normalized),
        (Split::Val, |s| s.mean_iou),
        (Split::Val, |s| s.mean_boundary_precision),
        (Split::Val, |s| s.mean_boundary_recall),
        (Split::Val, |s| s.mean_boundary_f),
    ];
    table(
        ev,
        "rmse_levels,rmse_normalized,iou,boundary_precision,boundary_recall,boundary_f",
        &cols,
    )
}

fn penetration_table(ev: &[Evaluated]) -> String {
    let mut cols: Vec<(Split, Field)> = Vec::new();
    for split in [Split::Val, Split::Test] {
        cols.push((split, |s| Some(s.penetration_rate)));
        cols.push((split, |s| s.mean_max_penetration));
        cols.push((split, |s| s.mean_penetration_area));
    }
    table(
        ev,
        "val_penetration_rate,val_mean_max_penetration_mm,val_mean_penetration_area_px,\
         test_penetration_rate,test_mean_max_penetration_mm,test_mean_penetration_area_px",
        &cols,
    )
}

fn contact_table(ev: &[Evaluated]) -> String {
    let mut cols: Vec<(Split, Field)> = Vec::new();
    for split in [Split::Val, Split::Test] {
        cols.push((split, |s| s.mean_n_clusters));
        cols.push((split, |s| s.mean_spread));
        cols.push((split, |s| s.mean_deviation_nc));
        cols.push((split, |s| s.mean_deviation_spread));
    }
    table(
        ev,
        "val_nc,val_spread_px,val_deviation_nc,val_deviation_spread,\
         test_nc,test_spread_px,test_deviation_nc,test_deviation_spread",
        &cols,
    )
}

/// Histogram of generated (filled) and designed (outlined) gap distances
/// over [`HIST_RANGE_MM`]. Values outside the range are not drawn.
pub fn histogram_svg(generated: &[f64], designed: &[f64], bin_mm: f64, title: &str) -> String {
    let (lo, hi) = HIST_RANGE_MM;
    let bins = ((hi - lo) / bin_mm).round().max(1.0) as usize;
    let count = |vals: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in vals {
            if (lo..=hi).contains(&v) {
                let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
                c[k.min(bins - 1)] += 1;
            }
        }
        c
    };
    let (g, d) = (count(generated), count(designed));
    let top = g.iter().chain(&d).copied().max().unwrap_or(0).max(1) as f64;
    let (w, h, left, bottom, right, top_pad) = (480.0, 300.0, 50.0, 40.0, 20.0, 30.0);
    let pw = w - left - right;
    let ph = h - bottom - top_pad;
    let x_of = |mm: f64| left + (mm - lo) / (hi - lo) * pw;
    let y_of = |n: f64| top_pad + ph - n / top * ph;
    let bw = pw / bins as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" data-x-min="{lo}" data-x-max="{hi}" data-unit="mm">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (k, &n) in g.iter().enumerate() {
        if n > 0 {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7fb5"/>"##,
                left + k as f64 * bw,
                y_of(n as f64),
                bw,
                ph - (y_of(n as f64) - top_pad)
            );
        }
    }
    let mut path = format!("M {:.2} {:.2}", left, y_of(0.0));
    for (k, &n) in d.iter().enumerate() {
        let x0 = left + k as f64 * bw;
        let _ = write!(path, " L {:.2} {:.2} L {:.2} {:.2}", x0, y_of(n as f64), x0 + bw, y_of(n as f64));
    }
    let _ = write!(path, " L {:.2} {:.2}", left + pw, y_of(0.0));
    let _ = writeln!(s, r##"<path d="{path}" fill="none" stroke="#d0582c" stroke-width="1.5"/>"##);
    let _ = writeln!(
        s,
        r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black" stroke-dasharray="4 3"/>"#,
        x_of(0.0),
        top_pad,
        top_pad + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        top_pad + ph,
        left + pw
    );
    for t in [-0.5, -0.25, 0.0, 0.25, 0.5] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{t}</text>"#,
            x_of(t),
            top_pad + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">gap distance (mm)</text>"#,
        left + pw / 2.0,
        h - 6.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grayscale PNG with the rasters side by side, separated by 2 white columns.
pub fn panel_png(rasters: &[&DepthRaster]) -> CliResult<Vec<u8>> {
    let (w, h) = rasters.first().map(|r| r.dims()).ok_or_else(|| CliError::Config("empty panel".into()))?;
    let gap = 2;
    let total_w = rasters.len() * w + (rasters.len() - 1) * gap;
    let mut pixels = vec![255u8; total_w * h];
    for (k, r) in rasters.iter().enumerate() {
        let x0 = k * (w + gap);
        for y in 0..h {
            for x in 0..w {
                let v = r.get(x, y) / MAX_LEVEL * 255.0;
                pixels[y * total_w + x0 + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, total_w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| CliError::Config(format!("png encoding: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| CliError::Config(format!("png encoding: {e}")))?;
    }
    Ok(out)
}

fn plots(cfg: &ExperimentConfig, e: &Evaluated, report: &Path) -> CliResult<()> {
    for split in Split::ALL {
        let pred_dir = e.first_seed_dir.join(split.name()).join("predictions");
        if !pred_dir.is_dir() {
            continue;
        }
        let mut ids: Vec<String> = std::fs::read_dir(&pred_dir)
            .map_err(|err| CliError::io(&pred_dir, err))?
            .filter_map(|x| x.ok())
            .filter_map(|x| x.file_name().to_string_lossy().strip_suffix(".cfr").map(String::from))
            .collect();
        ids.sort();
        ids.truncate(cfg.report.plot_cases);
        let hist_dir = report.join("histograms").join(e.target.to_string()).join(split.name());
        let panel_dir = report.join("panels").join(e.target.to_string()).join(split.name());
        create_dir(&hist_dir)?;
        create_dir(&panel_dir)?;
        for id in ids {
            let case = read_case(&split_dir(cfg, split).join(&id))?;
            let (w, h, values) = read_cfr(&pred_dir.join(format!("{id}.cfr")))?;
            let y_hat = DepthRaster::new(w, h, values)?;
            let f = reconstruct_gap(&case.gap, &case.prepared, &y_hat, case.scale())?;
            let f_gt = reconstruct_gap(&case.gap, &case.prepared, &case.crown_gt, case.scale())?;
            let to64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
            let svg = histogram_svg(
                &to64(f.valid_values()),
                &to64(f_gt.valid_values()),
                cfg.report.plot_bin_mm,
                &format!("{} {} {id}", e.target, split),
            );
            write_text(&hist_dir.join(format!("{id}.svg")), &svg)?;
            let png = panel_png(&[&case.prepared, &case.opposing, &case.crown_gt, &y_hat])?;
            let path = panel_dir.join(format!("{id}.png"));
            std::fs::write(&path, png).map_err(|err| CliError::io(&path, err))?;
        }
    }
    Ok(())
}

/// Writes the three result tables (medians over seeds), the ideal contact
/// statistics and the per-case plots. Returns the report directory.
pub fn cmd_report(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let eval_root = cfg.run_dir().join("eval");
    require(&eval_root, "evaluation directory (run eval first)")?;
    let evaluated = collect(&eval_root)?;
    if evaluated.is_empty() {
        return Err(CliError::Missing {
            what: "evaluation summaries (run eval first)",
            path: eval_root,
        });
    }
    let report = cfg.run_dir().join("report");
    create_dir(&report)?;
    write_text(&report.join("quality.csv"), &quality_table(&evaluated))?;
    write_text(&report.join("penetration.csv"), &penetration_table(&evaluated))?;
    write_text(&report.join("contact.csv"), &contact_table(&evaluated))?;
    let ideal = eval_root.join("ideal.json");
    if ideal.is_file() {
        std::fs::copy(&ideal, report.join("ideal.json")).map_err(|e| CliError::io(&ideal, e))?;
    }
    for e in &evaluated {
        plots(cfg, e, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn histogram_range_is_fixed() {
        let svg = histogram_svg(&[-0.7, -0.1, 0.0, 0.2, 3.0], &[0.1, 0.4], 0.05, "a<b");
        assert!(svg.contains(r#"data-x-min="-0.5" data-x-max="0.5""#));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn panel_is_a_png() {
        let r = DepthRaster::new(4, 3, vec![100.0; 12]).unwrap();
        let bytes = panel_png(&[&r, &r]).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    }
}
