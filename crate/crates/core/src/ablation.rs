//! Single-run driver and the seven-variant ablation table.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::curriculum::{train, TrainLog};
use crate::encoders::EmbeddingRecord;
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{Dataset, FusionModel, Predictions};
use crate::synthdata::{corrupt_text, generate};
use crate::tensor::{Precision, Scalar};

/// Train and validation records.
pub type Split = (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>);

/// Generates the configured synthetic data, or degrades the given records'
/// text by `config.synth.text_degradation` when data is supplied.
pub fn prepare_data(config: &RunConfig, provided: Option<&Split>) -> Result<Split> {
    match provided {
        None => {
            let ds = generate(&config.synth)?;
            Ok((ds.train(), ds.val()))
        }
        Some((tr, va)) => {
            let level = config.synth.text_degradation;
            if level == 0.0 {
                return Ok((tr.clone(), va.clone()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.synth.seed ^ 0x6465_6772_6164_6500);
            let mut degrade = |recs: &[EmbeddingRecord]| -> Result<Vec<EmbeddingRecord>> {
                recs.iter()
                    .map(|r| {
                        Ok(EmbeddingRecord {
                            text: corrupt_text(&r.text, level, &mut rng)?,
                            ..r.clone()
                        })
                    })
                    .collect()
            };
            Ok((degrade(tr)?, degrade(va)?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<S> {
    pub model: FusionModel<S>,
    pub log: TrainLog,
    pub predictions: Predictions,
    pub report: MetricsReport,
}

pub fn train_and_evaluate<S: Scalar>(config: &RunConfig, data: &Split) -> Result<RunOutcome<S>> {
    let mut model = FusionModel::<S>::new(config.model_config())?;
    let train_set = Dataset::Embedded(data.0.clone());
    let val_set = Dataset::Embedded(data.1.clone());
    let schedule = config.schedule()?;
    let log = train(&config.train, schedule.as_ref(), &mut model, &train_set, Some(&val_set))?;
    let (predictions, report) = model.evaluate(&val_set)?;
    Ok(RunOutcome {
        model,
        log,
        predictions,
        report,
    })
}

/// Runs at the configured precision and keeps only the metrics.
pub fn run_report(config: &RunConfig, data: &Split) -> Result<MetricsReport> {
    Ok(match config.precision {
        Precision::F32 => train_and_evaluate::<f32>(config, data)?.report,
        Precision::F64 => train_and_evaluate::<f64>(config, data)?.report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    NoTextBranch,
    NoVisualBranch,
    NoFineTuning,
    NoPrmf,
    NoCurriculum,
    NoNoiseRobust,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::NoTextBranch,
        Variant::NoVisualBranch,
        Variant::NoFineTuning,
        Variant::NoPrmf,
        Variant::NoCurriculum,
        Variant::NoNoiseRobust,
        Variant::Full,
    ];

    /// Row label.
    pub fn name(self) -> &'static str {
        match self {
            Variant::NoTextBranch => "w/o Texual Branch",
            Variant::NoVisualBranch => "w/o Visual Branch",
            Variant::NoFineTuning => "w/o Fine-Tuning VLM",
            Variant::NoPrmf => "w/o PRMF Block",
            Variant::NoCurriculum => "w/o Curriculum Learning",
            Variant::NoNoiseRobust => "w/o Noise Robust",
            Variant::Full => "Full Model",
        }
    }

    /// `base` with every ablation flag cleared, then this variant's change applied.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = RunConfig {
            disable_text_branch: false,
            disable_visual_branch: false,
            disable_prmf: false,
            disable_curriculum: false,
            disable_confidence: false,
            ..base.clone()
        };
        match self {
            Variant::NoTextBranch => c.disable_text_branch = true,
            Variant::NoVisualBranch => c.disable_visual_branch = true,
            Variant::NoFineTuning => c.synth.text_degradation = c.degraded_text_level,
            Variant::NoPrmf => c.disable_prmf = true,
            Variant::NoCurriculum => c.disable_curriculum = true,
            Variant::NoNoiseRobust => c.disable_confidence = true,
            Variant::Full => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean over seeds.
    pub mean: MetricsReport,
    pub per_seed: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24}", "variant")?;
        for k in MetricsReport::KEYS {
            write!(f, " {k:>9}")?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "{:<24}", r.variant.name())?;
            for v in r.mean.values() {
                write!(f, " {v:>9.6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len().max(1) as f64;
    let mut acc = [0.0; 7];
    for r in reports {
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += v / n;
        }
    }
    MetricsReport {
        acc: acc[0],
        bacc: acc[1],
        kappa: acc[2],
        f1: acc[3],
        prec: acc[4],
        rec: acc[5],
        auroc: acc[6],
    }
}

/// Trains every variant once per seed. Generated data uses the seed as its
/// data seed; supplied data is shared across seeds.
pub fn run_ablation_suite(config: &RunConfig, seeds: &[u64], data: Option<&Split>) -> Result<AblationTable> {
    run_ablation_suite_with(config, seeds, data, |_, _, _| {})
}

/// As [`run_ablation_suite`], calling `progress(variant, seed, report)` after each run.
pub fn run_ablation_suite_with(
    config: &RunConfig,
    seeds: &[u64],
    data: Option<&Split>,
    mut progress: impl FnMut(Variant, u64, &MetricsReport),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = v.apply(config);
            c.train.seed = seed;
            if data.is_none() {
                c.synth.seed = seed;
            }
            let split = prepare_data(&c, data)?;
            let report = run_report(&c, &split)?;
            progress(v, seed, &report);
            per_seed.push(report);
        }
        rows.push(AblationRow {
            variant: v,
            mean: mean_report(&per_seed),
            per_seed,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
