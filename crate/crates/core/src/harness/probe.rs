use serde::{Deserialize, Serialize};

use crate::enclave::{Enclave, EnclaveConfig};
use crate::error::{Error, Result};
use crate::harness::arch::{random_input, ArchSpec};
use crate::harness::stats::pearson;
use crate::harness::verify::prepare_model;
use crate::matcore::{Scalar, SeededRng};
use crate::refnet::{Act, Block, PlainModel};
use crate::runtime::{ObfModel, ObfWeights, OtpMaterials};

/// Fields shorter than this are not correlated against the weights.
pub const MIN_CORRELATION_ENTRIES: usize = 64;

/// The probe's model: one 64x64 dense layer followed by ReLU and a 10-way head, on a batch of
/// 64, so the masked input and the first weight matrix both have 4096 entries.
pub fn probe_spec() -> ArchSpec {
    ArchSpec::Mlp {
        batch: 64,
        input: 64,
        hidden: vec![64],
        classes: 10,
        activation: crate::harness::Activation::Relu,
        repeat_activation: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroRound {
    pub entries: usize,
    pub mean: f64,
    pub std_err: f64,
    /// `mean / std_err`.
    pub z: f64,
    pub within_3_se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCorrelation {
    pub field: String,
    pub entries: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rounds: usize,
    pub entries: usize,
    /// `3/√n` for `n` masked-input entries.
    pub threshold: f64,
    pub masked_input_pairs: Vec<PairCorrelation>,
    pub max_abs_pair_rho: f64,
    pub masked_inputs_independent: bool,
    pub zero_round: ZeroRound,
    pub weight_correlations: Vec<FieldCorrelation>,
    pub max_abs_weight_rho: f64,
    pub weights_constant: bool,
    pub otp_fields_vary: bool,
    pub masked_inputs_distinct: bool,
}

fn to_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64()).collect()
}

fn weight_bytes<T: Scalar>(w: &ObfWeights<T>) -> Vec<u8> {
    let mut out = Vec::new();
    for t in w.tensors() {
        for &v in t.data {
            v.write_le(&mut out);
        }
    }
    out
}

/// The adversary's view over `rounds` inferences of one fixed input plus an all-zero round.
pub fn security_probe<T: Scalar>(
    model: &PlainModel<T>,
    rounds: usize,
    seed: u64,
    config: EnclaveConfig,
) -> Result<ProbeReport> {
    if rounds < 2 {
        return Err(Error::InvalidArgument(
            "the probe needs at least 2 rounds".into(),
        ));
    }
    let model = prepare_model(model)?;
    let first_w = match model.blocks().first() {
        Some(Block::Dense(d)) => to_f64(d.weight.transpose().as_slice()),
        _ => {
            return Err(Error::Unsupported(
                "the probe needs a dense first layer".into(),
            ))
        }
    };
    let mut rng = SeededRng::new(seed);
    let x = random_input::<T>(model.input_shape(), &mut rng);
    let mut enclave = Enclave::new(&model, config, rng.next_u64())?;
    let kinds = model.kinds();

    let mut masked_inputs = Vec::with_capacity(rounds);
    let mut otps: Vec<OtpMaterials<T>> = Vec::with_capacity(rounds);
    let mut weight_snapshots = Vec::with_capacity(rounds + 1);
    for _ in 0..rounds {
        let (mut session, otp) = enclave.prepare_inference()?;
        let masked = session.mask_input(&x)?;
        let (y, _) = crate::runtime::run(&ObfModel::assemble(enclave.weights(), &otp)?, &masked)?;
        session.unmask_output(&y)?;
        weight_snapshots.push(weight_bytes(enclave.weights()));
        masked_inputs.push(to_f64(masked.act.as_slice()));
        otps.push(otp);
    }

    let zero = Act::zeros(model.input_shape());
    let (mut session, _) = enclave.prepare_inference()?;
    let zero_masked = to_f64(session.mask_input(&zero)?.act.as_slice());
    weight_snapshots.push(weight_bytes(enclave.weights()));

    let n = masked_inputs[0].len();
    let threshold = 3.0 / (n as f64).sqrt();
    let mut pairs = Vec::new();
    for a in 0..rounds {
        for b in a + 1..rounds {
            pairs.push(PairCorrelation {
                a,
                b,
                rho: pearson(&masked_inputs[a], &masked_inputs[b]),
            });
        }
    }
    let max_abs_pair_rho = pairs.iter().map(|p| p.rho.abs()).fold(0.0, f64::max);
    let masked_inputs_distinct =
        (0..rounds).all(|a| (a + 1..rounds).all(|b| masked_inputs[a] != masked_inputs[b]));

    let zn = zero_masked.len() as f64;
    let mean = zero_masked.iter().sum::<f64>() / zn;
    let var = zero_masked
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (zn - 1.0);
    let std_err = (var / zn).sqrt();
    let z = if std_err > 0.0 { mean / std_err } else { 0.0 };

    let mut weight_correlations = Vec::new();
    let mut correlate = |field: String, data: &[f64]| {
        let len = data.len().min(first_w.len());
        if len >= MIN_CORRELATION_ENTRIES {
            weight_correlations.push(FieldCorrelation {
                field,
                entries: len,
                rho: pearson(&first_w[..len], &data[..len]),
            });
        }
    };
    for (r, xm) in masked_inputs.iter().enumerate() {
        correlate(format!("round{r}.masked_input"), xm);
    }
    correlate("zero_round.masked_input".into(), &zero_masked);
    for t in enclave.weights().tensors() {
        correlate(t.name(), &to_f64(t.data));
    }
    for (r, otp) in otps.iter().enumerate() {
        for t in otp.tensors(&kinds) {
            correlate(format!("round{r}.{}", t.name()), &to_f64(t.data));
        }
    }
    let max_abs_weight_rho = weight_correlations
        .iter()
        .map(|c| c.rho.abs())
        .fold(0.0, f64::max);

    let weights_constant = weight_snapshots.windows(2).all(|w| w[0] == w[1]);
    let otp_fields_vary = (0..rounds).all(|a| {
        (a + 1..rounds).all(|b| {
            let (ta, tb) = (otps[a].tensors(&kinds), otps[b].tensors(&kinds));
            // The rescaled epsilon depends only on the reusable gadget.
            ta.iter()
                .zip(&tb)
                .filter(|(x, _)| x.field != "eps")
                .all(|(x, y)| x.data != y.data)
        })
    });

    Ok(ProbeReport {
        rounds,
        entries: n,
        threshold,
        masked_input_pairs: pairs,
        max_abs_pair_rho,
        masked_inputs_independent: max_abs_pair_rho < threshold,
        zero_round: ZeroRound {
            entries: zero_masked.len(),
            mean,
            std_err,
            z,
            within_3_se: z.abs() <= 3.0,
        },
        weight_correlations,
        max_abs_weight_rho,
        weights_constant,
        otp_fields_vary,
        masked_inputs_distinct,
    })
}
