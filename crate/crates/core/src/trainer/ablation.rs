use super::{Ablation, LogRecord, RunConfig, Trainer};
use crate::data::PairSource;
use crate::metrics::{evaluate_pairs, format_table, EvalReport};
use crate::scalar::Scalar;

/// Published full-scale results per condition `(condition, PSNR dB, SSIM)`,
/// shown as context under the comparison table and never asserted.
pub const PUBLISHED_RESULTS: [(Ablation, f64, f64); 4] = [
    (Ablation::Default, 15.67, 0.684),
    (Ablation::RPlusA, 15.55, 0.676),
    (Ablation::ROnly, 15.64, 0.681),
    (Ablation::UnetScratch, 14.81, 0.643),
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub condition: Ablation,
    /// Evaluation report, or the error that stopped this condition.
    pub result: Result<EvalReport, String>,
    /// Discriminator parameter count; zero when none was allocated.
    pub discriminator_parameters: usize,
    pub history: Vec<LogRecord>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `Condition / PSNR / SSIM` table with the published values as footer.
    pub fn table(&self) -> String {
        let rows: Vec<(String, Option<(f64, f64)>)> = self
            .rows
            .iter()
            .map(|r| (r.condition.label().to_string(), r.result.as_ref().ok().map(|e| (e.mean_psnr, e.mean_ssim))))
            .collect();
        let mut footer = String::from(
            "Published values at full scale (curated FAID split, 1000 epochs) for context only; not reproduced or asserted here:\n",
        );
        for (c, p, s) in PUBLISHED_RESULTS {
            footer.push_str(&format!("  {:<26}{p:>7.2}{s:>9.3}\n", c.label()));
        }
        format_table("Condition", &rows, Some(&footer))
    }
}

/// Trains and evaluates each condition with the shared settings of `base`.
/// A failing condition is recorded and the others still run. With an
/// `output_dir`, each condition writes into its own subdirectory.
pub fn run_ablation_matrix<T, S, E>(base: &RunConfig, conditions: &[Ablation], train: &S, eval: &E) -> AblationReport
where
    T: Scalar,
    S: PairSource<T> + ?Sized,
    E: PairSource<T> + ?Sized,
{
    let rows = conditions
        .iter()
        .map(|&condition| {
            let config = RunConfig {
                ablation: condition,
                output_dir: base.output_dir.as_ref().map(|d| d.join(condition.as_str())),
                ..base.clone()
            };
            let mut discriminator_parameters = 0;
            let mut history = Vec::new();
            let result = Trainer::<T>::new(config)
                .and_then(|mut trainer| {
                    discriminator_parameters = trainer.discriminator().map_or(0, |d| d.params().num_elements());
                    let outcome = trainer.run(train)?;
                    history = outcome.history;
                    let pairs = (0..eval.len()).map(|i| (eval.pair_id(i).to_string(), eval.load_pair(i)));
                    let report = evaluate_pairs(pairs, trainer.generator())?;
                    if let Some(dir) = &trainer.config().output_dir {
                        report.write(&dir.join("eval_report.tsv"))?;
                    }
                    Ok(report)
                })
                .map_err(|e| {
                    ::log::error!("condition {condition} failed: {e}");
                    e.to_string()
                });
            AblationRow { condition, result, discriminator_parameters, history }
        })
        .collect();
    AblationReport { rows }
}
