use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enclave::{Enclave, EnclaveConfig, Session};
use crate::error::{Error, Result};
use crate::harness::arch::{build_model, random_input, ArchSpec};
use crate::matcore::{Precision, Scalar, SeededRng};
use crate::refnet::{Act, Block, LayerKind, PlainModel};
use crate::runtime::{run_traced, MaskedAct, ObfModel, OpCounters, OtpMaterials};

/// Everything one complete inference leaves behind.
#[derive(Debug)]
pub struct ProtocolRun<T> {
    pub labels: Vec<usize>,
    pub trace: Vec<MaskedAct<T>>,
    pub counters: OpCounters,
    pub session: Session<T>,
    pub otp: OtpMaterials<T>,
}

/// One inference: prepare materials, cross in, run untrusted, cross out.
pub fn run_protocol<T: Scalar>(enclave: &mut Enclave<T>, x: &Act<T>) -> Result<ProtocolRun<T>> {
    let (mut session, otp) = enclave.prepare_inference()?;
    let masked = session.mask_input(x)?;
    let obf = ObfModel::assemble(enclave.weights(), &otp)?;
    let (trace, mut counters) = run_traced(&obf, &masked)?;
    let labels = session.unmask_output(trace.last().expect("trace includes the input"))?;
    counters.tee_crossings = session.crossings();
    Ok(ProtocolRun {
        labels,
        trace,
        counters,
        session,
        otp,
    })
}

/// Fuses batch normalization when present.
pub fn prepare_model<T: Scalar>(model: &PlainModel<T>) -> Result<PlainModel<T>> {
    if model
        .blocks()
        .iter()
        .any(|b| matches!(b, Block::BatchNorm(_)))
    {
        model.fuse_batchnorm()
    } else {
        Ok(model.clone())
    }
}

/// Seed of trial `t` under master seed `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    SeededRng::with_stream(seed, 1 + t as u64).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub index: usize,
    pub kind: LayerKind,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivReport {
    pub arch: String,
    pub precision: Precision,
    pub trials: usize,
    pub tol: f64,
    pub max_deviation: f64,
    pub per_layer: Vec<LayerDeviation>,
    pub agreeing_rows: usize,
    pub total_rows: usize,
    pub argmax_agreement: f64,
    pub worst_trial: Option<TrialRecord>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub config: EnclaveConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 100,
            tol: 1e-8,
            seed: 0,
            config: EnclaveConfig::default(),
        }
    }
}

struct TrialOutcome {
    per_layer: Vec<f64>,
    deviation: f64,
    agreeing: usize,
    rows: usize,
}

/// Max deviation of every unmasked activation from the plaintext trace.
pub fn trace_deviations<T: Scalar>(
    enclave: &Enclave<T>,
    model: &PlainModel<T>,
    x: &Act<T>,
    run: &ProtocolRun<T>,
) -> Result<Vec<f64>> {
    let plain = model.trace(x)?;
    plain
        .iter()
        .zip(&run.trace)
        .enumerate()
        .skip(1)
        .map(|(j, (p, m))| {
            enclave
                .audit_unmask(&run.session, j, &m.act)?
                .max_abs_diff(&p.cast())
        })
        .collect()
}

fn run_trial<T: Scalar>(
    model: &PlainModel<T>,
    seed: u64,
    config: EnclaveConfig,
) -> Result<TrialOutcome> {
    let mut rng = SeededRng::new(seed);
    let x = random_input::<T>(model.input_shape(), &mut rng);
    let mut enclave = Enclave::new(model, config, rng.next_u64())?;
    let run = run_protocol(&mut enclave, &x)?;
    let per_layer = trace_deviations(&enclave, model, &x, &run)?;
    let expected = model.forward(&x)?.to_rows().argmax_rows();
    let agreeing = expected
        .iter()
        .zip(&run.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(TrialOutcome {
        deviation: *per_layer.last().unwrap_or(&0.0),
        per_layer,
        agreeing,
        rows: expected.len(),
    })
}

fn summarize<T: Scalar>(
    arch: &str,
    kinds: &[LayerKind],
    outcomes: Vec<(usize, u64, TrialOutcome)>,
    opts: &VerifyOptions,
) -> EquivReport {
    let mut per_layer: Vec<LayerDeviation> = kinds
        .iter()
        .enumerate()
        .map(|(index, &kind)| LayerDeviation {
            index,
            kind,
            max_deviation: 0.0,
        })
        .collect();
    let (mut agreeing, mut total, mut max_dev) = (0, 0, 0.0f64);
    let mut worst: Option<TrialRecord> = None;
    for (trial, seed, o) in outcomes {
        for (l, d) in per_layer.iter_mut().zip(&o.per_layer) {
            l.max_deviation = l.max_deviation.max(*d);
        }
        agreeing += o.agreeing;
        total += o.rows;
        if worst.as_ref().is_none_or(|w| o.deviation > w.deviation) {
            worst = Some(TrialRecord {
                trial,
                seed,
                deviation: o.deviation,
            });
        }
        max_dev = max_dev.max(o.deviation);
    }
    let agreement = if total == 0 {
        1.0
    } else {
        agreeing as f64 / total as f64
    };
    EquivReport {
        arch: arch.to_string(),
        precision: T::PRECISION,
        trials: opts.trials,
        tol: opts.tol,
        max_deviation: max_dev,
        per_layer,
        agreeing_rows: agreeing,
        total_rows: total,
        argmax_agreement: agreement,
        worst_trial: worst,
        passed: max_dev <= opts.tol && agreeing == total,
    }
}

fn collect_trials(
    opts: &VerifyOptions,
    f: impl Fn(u64) -> Result<TrialOutcome> + Sync,
) -> Result<Vec<(usize, u64, TrialOutcome)>> {
    (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(opts.seed, t);
            f(seed).map(|o| (t, seed, o)).map_err(|e| Error::Trial {
                trial: t,
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Fresh random model, input and one-time pad per trial.
pub fn verify_equivalence<T: Scalar>(spec: &ArchSpec, opts: &VerifyOptions) -> Result<EquivReport> {
    let kinds = prepare_model(&build_model::<T>(spec, &mut SeededRng::new(opts.seed))?)?.kinds();
    let outcomes = collect_trials(opts, |seed| {
        let mut rng = SeededRng::new(seed);
        let model = prepare_model(&build_model::<T>(spec, &mut rng)?)?;
        run_trial(&model, rng.next_u64(), opts.config)
    })?;
    Ok(summarize::<T>(spec.name(), &kinds, outcomes, opts))
}

/// Fixed model, fresh input and one-time pad per trial.
pub fn verify_model<T: Scalar>(model: &PlainModel<T>, opts: &VerifyOptions) -> Result<EquivReport> {
    let model = prepare_model(model)?;
    let outcomes = collect_trials(opts, |seed| run_trial(&model, seed, opts.config))?;
    Ok(summarize::<T>("model", &model.kinds(), outcomes, opts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub index: usize,
    pub kind: LayerKind,
    pub deviation: f64,
    /// Largest plaintext magnitude at this point, for scale.
    pub magnitude: f64,
}

/// Deviation of the masked path after every component, for one input.
pub fn error_profile<T: Scalar>(
    model: &PlainModel<T>,
    x: &Act<T>,
    seed: u64,
    config: EnclaveConfig,
) -> Result<Vec<ProfileRow>> {
    let model = prepare_model(model)?;
    let mut enclave = Enclave::new(&model, config, seed)?;
    let run = run_protocol(&mut enclave, x)?;
    let devs = trace_deviations(&enclave, &model, x, &run)?;
    let plain = model.trace(x)?;
    Ok(model
        .kinds()
        .into_iter()
        .zip(devs)
        .enumerate()
        .map(|(index, (kind, deviation))| ProfileRow {
            index,
            kind,
            deviation,
            magnitude: plain[index + 1].max_abs(),
        })
        .collect())
}

/// Smallest ratio of deviation before each normalization to deviation right after it.
pub fn norm_reductions(rows: &[ProfileRow]) -> Vec<f64> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.kind == LayerKind::LayerNorm)
        .filter_map(|(i, r)| {
            let before = if i == 0 {
                return None;
            } else {
                rows[i - 1].deviation
            };
            Some(before / r.deviation.max(f64::MIN_POSITIVE))
        })
        .collect()
}
