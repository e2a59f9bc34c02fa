use std::time::Instant;

use rayon::prelude::*;

use super::dataset::Dataset;
use super::{PipelineError, Result};
use crate::datapage::{TemplateDecoder, NUM_SYMBOLS};
use crate::nn::Network;

const EVAL_BATCH: usize = 500;

/// What classifies the test fragments.
pub enum Decoder<'a> {
    Network { name: &'a str, network: &'a Network<f64> },
    /// Matched filter about the dataset's mean pixel value.
    Template,
}

impl Decoder<'_> {
    pub fn name(&self) -> &str {
        match self {
            Decoder::Network { name, .. } => name,
            Decoder::Template => "TEMPLATE",
        }
    }

    pub fn classify(&self, data: &Dataset) -> Result<Vec<u8>> {
        match self {
            Decoder::Network { network, .. } => {
                let p = data.fragment_px();
                if network.input_shape() != [1, p, p] || network.output_len() != NUM_SYMBOLS {
                    return Err(PipelineError::Config(format!(
                        "model input {:?} / {} outputs incompatible with 1x{p}x{p} fragments",
                        network.input_shape(),
                        network.output_len()
                    )));
                }
                let idx: Vec<usize> = (0..data.len()).collect();
                let mut out = Vec::with_capacity(data.len());
                for chunk in idx.chunks(EVAL_BATCH) {
                    out.extend(network.classify(&data.batch(chunk))?);
                }
                Ok(out)
            }
            Decoder::Template => {
                if data.fragment_px() % 2 != 0 {
                    return Err(PipelineError::Dataset("fragment side must be even".into()));
                }
                let t = TemplateDecoder::new(data.fragment_px() / 2, data.mean_pixel());
                (0..data.len())
                    .into_par_iter()
                    .map(|i| Ok(t.decode(data.fragment(i))?))
                    .collect()
            }
        }
    }
}

/// Fragment error counts for one decoder on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct FerReport {
    pub z: f64,
    pub model: String,
    pub n_errors: u64,
    pub n_total: u64,
    pub fer: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; NUM_SYMBOLS]; NUM_SYMBOLS],
    pub seconds: f64,
    pub fingerprint: String,
}

impl FerReport {
    pub fn from_predictions(
        labels: &[u8],
        predictions: &[u8],
        z: f64,
        model: &str,
        fingerprint: &str,
    ) -> Result<Self> {
        if labels.len() != predictions.len() || labels.is_empty() {
            return Err(PipelineError::Dataset(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = [[0u64; NUM_SYMBOLS]; NUM_SYMBOLS];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t as usize >= NUM_SYMBOLS || p as usize >= NUM_SYMBOLS {
                return Err(PipelineError::Dataset(format!("symbol out of range: {t}/{p}")));
            }
            confusion[t as usize][p as usize] += 1;
        }
        let n_total = labels.len() as u64;
        let n_errors = n_total - (0..NUM_SYMBOLS).map(|k| confusion[k][k]).sum::<u64>();
        Ok(Self {
            z,
            model: model.to_string(),
            n_errors,
            n_total,
            fer: n_errors as f64 / n_total as f64,
            confusion,
            seconds: 0.0,
            fingerprint: fingerprint.to_string(),
        })
    }

    pub const CSV_HEADER: &'static str = "z_m,model,n_errors,n_total,fer,fingerprint";

    /// One CSV line without the trailing newline. Wall-clock time is left out
    /// so reports of identical runs compare byte for byte.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6e},{}",
            self.z, self.model, self.n_errors, self.n_total, self.fer, self.fingerprint
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    /// 16×16 matrix, rows are true symbols.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for k in 0..NUM_SYMBOLS {
            s.push_str(&format!(",{k}"));
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            s.push_str(&t.to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model        {}\nz            {} m\nN_e          {}\nN_t          {}\nFER          {:.4e}\nseconds      {:.2}\nfingerprint  {}\n\nconfusion (rows: true, columns: predicted)\n    ",
            self.model, self.z, self.n_errors, self.n_total, self.fer, self.seconds, self.fingerprint
        );
        for k in 0..NUM_SYMBOLS {
            s.push_str(&format!("{k:>6}"));
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("{t:>4}"));
            for c in row {
                s.push_str(&format!("{c:>6}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Classifies every fragment and counts exact-symbol mismatches.
pub fn evaluate_fer(decoder: &Decoder, data: &Dataset, z: f64, fingerprint: &str) -> Result<FerReport> {
    let start = Instant::now();
    let predictions = decoder.classify(data)?;
    let mut report = FerReport::from_predictions(data.labels(), &predictions, z, decoder.name(), fingerprint)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
