use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use holomem::datapage::canonical_fragment;
use holomem::nn::{adam_update, AdamConfig};
use holomem::pipeline::{build_model, run_benchmark, BenchReport, Dataset, ExperimentConfig, ModelKind, TrainConfig, Trainer};

use crate::Outcome;

/// Chance fragment error rate for 16 equiprobable symbols.
const CHANCE_FER: f64 = 15.0 / 16.0;

/// Desk-scale sweep at the default configuration, shared by criteria 4 and 5.
fn desk_sweep() -> &'static BenchReport {
    static SWEEP: OnceLock<BenchReport> = OnceLock::new();
    SWEEP.get_or_init(|| run_benchmark(&ExperimentConfig::default(), &[0.05, 0.15], None).unwrap())
}

fn fer(report: &BenchReport, z: f64, model: &str) -> f64 {
    report.fer(z, model).unwrap()
}

pub fn criterion_4() -> Vec<(String, Outcome)> {
    let r = desk_sweep();
    let cnn = fer(r, 0.05, "CNN");
    let mlp = fer(r, 0.05, "MLP");
    let bound = CHANCE_FER / 10.0;
    vec![
        ("4a desk-scale CNN FER".into(), Outcome::new(cnn <= 5e-2, format!("CNN FER {cnn:.4} at z = 0.05 m (<= 0.05)"))),
        (
            "4b MLP/CNN ordering".into(),
            Outcome::new(mlp >= 2.0 * cnn, format!("MLP FER {mlp:.4} vs 2 x CNN FER {:.4}", 2.0 * cnn)),
        ),
        (
            "4c 10x better than chance".into(),
            Outcome::new(
                cnn <= bound && mlp <= bound,
                format!("CNN {cnn:.4}, MLP {mlp:.4} (each <= {bound:.5} = chance {CHANCE_FER:.4} / 10)"),
            ),
        ),
    ]
}

pub fn criterion_5() -> Vec<(String, Outcome)> {
    let r = desk_sweep();
    let near = fer(r, 0.05, "CNN");
    let far = fer(r, 0.15, "CNN");
    vec![(
        "5 distance degradation".into(),
        Outcome::new(far > near, format!("CNN FER {far:.4} at z = 0.15 m vs {near:.4} at z = 0.05 m")),
    )]
}

fn errors(report: &BenchReport, model: &str) -> (u64, f64) {
    let r = report.reports.iter().find(|r| r.model == model).unwrap();
    (r.n_errors, r.fer)
}

pub fn criterion_6() -> Vec<(String, Outcome)> {
    let mut clean = ExperimentConfig::default();
    clean.channel.noise_sigma = 0.0;
    clean.channel.max_shift_px = 0;
    let mut shifted = clean.clone();
    shifted.channel.max_shift_px = 5;
    let a = run_benchmark(&clean, &[0.05], None).unwrap();
    let b = run_benchmark(&shifted, &[0.05], None).unwrap();
    let (cnn0, cnn0_fer) = errors(&a, "CNN");
    let (mlp0, mlp0_fer) = errors(&a, "MLP");
    let (cnn1, cnn1_fer) = errors(&b, "CNN");
    let (mlp1, mlp1_fer) = errors(&b, "MLP");
    // add-one smoothing keeps the ratio finite when the clean run is error-free
    let factor = |shift: u64, base: u64| (shift as f64 + 1.0) / (base as f64 + 1.0);
    let (f_cnn, f_mlp) = (factor(cnn1, cnn0), factor(mlp1, mlp0));
    vec![
        (
            "6a clean-channel FER".into(),
            Outcome::new(
                cnn0_fer <= 1e-2 && mlp0_fer <= 1e-2,
                format!("no noise, no shift: CNN {cnn0_fer:.4}, MLP {mlp0_fer:.4} (each <= 0.01)"),
            ),
        ),
        (
            "6b shift degradation factor".into(),
            Outcome::new(
                f_mlp > f_cnn,
                format!(
                    "shift only: CNN {cnn1_fer:.4}, MLP {mlp1_fer:.4}; factor (N_e+1 ratio) MLP {f_mlp:.1} vs CNN {f_cnn:.1}"
                ),
            ),
        ),
    ]
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Two `bench` invocations through the CLI with the same reduced-scale config.
pub fn criterion_7() -> Vec<(String, Outcome)> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_holomem"))
            .args(["bench", "--geometry", "6", "--train-pages", "4", "--test-pages", "2", "--epochs", "2"])
            .args(["--seed", "3", "--z-list", "0.05,0.1,0.15", "--out-dir"])
            .arg(d.path())
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let a = csv_files(dirs[0].path());
    let b = csv_files(dirs[1].path());
    let rows = a.iter().find(|(n, _)| n == "bench.csv").map(|(_, c)| c.iter().filter(|&&x| x == b'\n').count() - 1);
    let pass = a == b && rows == Some(9);
    vec![(
        "7 determinism".into(),
        Outcome::new(
            pass,
            format!(
                "{} CSV files byte-identical across two bench runs ({} FER rows); 6x6-fragment pages, 4/2 pages, 2 epochs",
                a.len(),
                rows.unwrap_or(0)
            ),
        ),
    )]
}

fn canonical_dataset() -> Dataset {
    let labels: Vec<u8> = (0..160).map(|i| (i % 16) as u8).collect();
    let pixels = labels.iter().flat_map(|&s| canonical_fragment::<f32>(s, 10)).collect();
    Dataset::new(20, labels, pixels).unwrap()
}

/// First epoch (1-based) after which inference accuracy on the training set is 100%.
fn epochs_to_fit(kind: ModelKind, data: &Dataset) -> Option<usize> {
    let config = TrainConfig::default();
    let mut trainer = Trainer::new(build_model(kind, &config, 20).unwrap(), data, config).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&all);
    for epoch in 1..=50 {
        trainer.run_epoch().unwrap();
        let predicted = trainer.network().classify(&batch).unwrap();
        if predicted == data.labels() {
            return Some(epoch);
        }
    }
    None
}

pub fn criterion_8() -> Vec<(String, Outcome)> {
    let data = canonical_dataset();
    let cnn = epochs_to_fit(ModelKind::Cnn, &data);
    let mlp = epochs_to_fit(ModelKind::Mlp, &data);
    let show = |e: Option<usize>| e.map_or("not within 50 epochs".to_string(), |e| format!("epoch {e}"));

    let mut theta = [5.0f64];
    let (mut m, mut v) = ([0.0], [0.0]);
    for step in 1..=500 {
        let g = [2.0 * theta[0]];
        adam_update(&mut theta, &g, &mut m, &mut v, step, 0.1, &AdamConfig::default());
    }
    vec![
        (
            "8a training sanity".into(),
            Outcome::new(
                cnn.is_some() && mlp.is_some(),
                format!("100% training accuracy on 160 canonical fragments: CNN {}, MLP {}", show(cnn), show(mlp)),
            ),
        ),
        (
            "8b Adam on a quadratic".into(),
            Outcome::new(theta[0].abs() < 1e-2, format!("|theta| = {:.2e} after 500 steps from 5.0", theta[0].abs())),
        ),
    ]
}
