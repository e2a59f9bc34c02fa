use std::fs;
use std::io::BufWriter;
use std::path::Path;

use super::config::{page_seed, ExperimentConfig, ModelKind, Split};
use super::dataset::{generate_dataset, reconstruct_page};
use super::eval::{evaluate_fer, Decoder, FerReport};
use super::image::write_pgm;
use super::train::run_training;
use super::{PipelineError, Result};
use crate::datapage::{random_page, render_page};
use crate::optics::Propagator;

/// Result of a distance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// CNN, MLP, TEMPLATE for each z in sweep order.
    pub reports: Vec<FerReport>,
    /// `(z, Pearson correlation of the first test page's reconstruction with its clean rendering)`.
    pub correlations: Vec<(f64, f64)>,
}

impl BenchReport {
    pub fn fer(&self, z: f64, model: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.z == z && r.model == model).map(|r| r.fer)
    }

    /// One row per (z, decoder); no timing, so identical runs match byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", FerReport::CSV_HEADER);
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn correlations_csv(&self) -> String {
        let mut s = String::from("z_m,pearson_vs_clean\n");
        for (z, c) in &self.correlations {
            s.push_str(&format!("{z},{c:.10}\n"));
        }
        s
    }

    /// Decoders as rows, distances as columns, plus timing.
    pub fn to_text(&self) -> String {
        let zs: Vec<f64> = self.correlations.iter().map(|c| c.0).collect();
        let mut s = format!("{:<10}", "FER");
        for z in &zs {
            s.push_str(&format!("{:>14}", format!("z = {z} m")));
        }
        s.push('\n');
        for model in ["CNN", "MLP", "TEMPLATE"] {
            s.push_str(&format!("{model:<10}"));
            for &z in &zs {
                match self.fer(z, model) {
                    Some(f) => s.push_str(&format!("{f:>14.3e}")),
                    None => s.push_str(&format!("{:>14}", "-")),
                }
            }
            s.push('\n');
        }
        s.push_str("\nevaluation seconds\n");
        for r in &self.reports {
            s.push_str(&format!("  z = {} m  {:<9} {:.2}\n", r.z, r.model, r.seconds));
        }
        s
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(PipelineError::Io)
}

/// For each z: generate datasets, train CNN and MLP, evaluate CNN, MLP and
/// TEMPLATE. When `out_dir` is given, writes `bench.csv`, `bench.txt`,
/// `correlations.csv`, per-model training logs and PGM reconstructions of the
/// first test page (`page_clean.pgm`, `reconstruction_z<z>.pgm`).
pub fn run_benchmark(
    base: &ExperimentConfig,
    z_list: &[f64],
    out_dir: Option<&Path>,
) -> Result<BenchReport> {
    if z_list.is_empty() {
        return Err(PipelineError::Config("empty z list".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let side = base.geometry.side_px();
    let propagator = Propagator::new(side, side);
    let page = random_page(base.geometry, page_seed(base.channel.seed, Split::Test, 0))?;
    let clean = render_page::<f64>(&page);
    if let Some(dir) = out_dir {
        write_pgm(&clean, &mut BufWriter::new(fs::File::create(dir.join("page_clean.pgm"))?))?;
    }

    let mut report = BenchReport { reports: Vec::new(), correlations: Vec::new() };
    for &z in z_list {
        let mut cfg = base.clone();
        cfg.channel.z = z;
        cfg.validate()?;
        let recon = reconstruct_page(&propagator, &page, z)?;
        report.correlations.push((z, recon.pearson(&clean)?));
        if let Some(dir) = out_dir {
            let f = fs::File::create(dir.join(format!("reconstruction_z{z}.pgm")))?;
            write_pgm(&recon, &mut BufWriter::new(f))?;
        }

        let (train, test) = generate_dataset(&cfg)?;
        for kind in [ModelKind::Cnn, ModelKind::Mlp] {
            cfg.model = kind;
            let outcome = run_training(kind, &cfg.train, &train, None)?;
            if let Some(dir) = out_dir {
                let name = format!("train_log_z{z}_{}.csv", kind.name().to_lowercase());
                write_file(&dir.join(name), &outcome.log_csv())?;
            }
            let decoder = Decoder::Network { name: kind.name(), network: &outcome.network };
            report.reports.push(evaluate_fer(&decoder, &test, z, &cfg.fingerprint())?);
        }
        cfg.model = ModelKind::Template;
        report.reports.push(evaluate_fer(&Decoder::Template, &test, z, &cfg.fingerprint())?);
    }

    if let Some(dir) = out_dir {
        write_file(&dir.join("bench.csv"), &report.to_csv())?;
        write_file(&dir.join("bench.txt"), &report.to_text())?;
        write_file(&dir.join("correlations.csv"), &report.correlations_csv())?;
    }
    Ok(report)
}
