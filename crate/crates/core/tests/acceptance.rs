//! Acceptance suite: one PASS/FAIL line per criterion, with the time spent against its budget.
//! Exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::io::bundle_to_bytes;
use maskinfer_core::harness::{
    build_model, count_and_size_report, error_profile, norm_reductions, prepare_model, probe_spec,
    random_input, run_protocol, security_probe, storage_growth, verify_equivalence, weight_stats,
    ArchSpec, VerifyOptions, TEMPLATES,
};
use maskinfer_core::matcore::{kron, Perm};
use maskinfer_core::refnet::ops::{flatten_fwd, norm_rows, softmax_rows};
use maskinfer_core::refnet::{LayerKind, PlainModel};
use maskinfer_core::{Error, Mat, Result, SeededRng, Tensor4};

use common::{dim, layer_deviations, rand_mat, random_attention, random_cnn, random_mlp};

type Verdict = Result<(bool, String)>;

/// Extra operations per layer kind, written out independently of the runtime's own table.
fn extra_ops_table(kind: LayerKind) -> (u64, u64) {
    match kind {
        LayerKind::Relu => (4, 2),
        LayerKind::Gelu => (4, 1),
        LayerKind::LayerNorm => (1, 0),
        _ => (0, 0),
    }
}

fn model<T: maskinfer_core::Scalar>(spec: &ArchSpec, seed: u64) -> Result<PlainModel<T>> {
    build_model(spec, &mut SeededRng::new(seed))
}

fn crossings() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in TEMPLATES {
        let m: PlainModel<f64> = prepare_model(&model(&ArchSpec::template(name)?, 1)?)?;
        let mut rng = SeededRng::new(2);
        let x = random_input(m.input_shape(), &mut rng);
        let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 3)?;
        let mut run = run_protocol(&mut enclave, &x)?;
        let count = run.session.crossings();
        let third_in = run.session.mask_input(&x);
        let third_out = run.session.unmask_output(run.trace.last().expect("output"));
        let rejected = matches!(third_in, Err(Error::CrossingBudget { attempted: 3 }))
            && matches!(third_out, Err(Error::CrossingBudget { attempted: 3 }));
        ok &= count == 2
            && run.counters.tee_crossings == 2
            && run.session.log().len() == 2
            && rejected;
        notes.push(format!(
            "{name}: {count} crossings, third rejected={rejected}"
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn op_counts() -> Verdict {
    let mut ok = true;
    let mut seen: BTreeMap<LayerKind, (u64, u64)> = BTreeMap::new();
    let mut offending = Vec::new();
    for name in TEMPLATES {
        let m: PlainModel<f64> = model(&ArchSpec::template(name)?, 4)?;
        let report = count_and_size_report(&m, 5, EnclaveConfig::default())?;
        ok &= report.counts.tee_crossings == 2;
        for row in &report.counts.rows {
            let observed = (row.observed.mults, row.observed.krons);
            if observed != extra_ops_table(row.kind) {
                ok = false;
                offending.push(format!("{name} layer {} ({})", row.index, row.kind));
            }
            seen.insert(row.kind, observed);
        }
    }
    for kind in [LayerKind::Relu, LayerKind::Gelu, LayerKind::LayerNorm] {
        ok &= seen.contains_key(&kind);
    }
    let table: Vec<String> = seen
        .iter()
        .map(|(k, (m, kr))| format!("{k} {m}M+{kr}K"))
        .collect();
    let mut detail = table.join(", ");
    if !offending.is_empty() {
        detail = format!("{detail}; mismatched: {}", offending.join(", "));
    }
    Ok((ok, detail))
}

fn exact_equivalence() -> Verdict {
    let opts = VerifyOptions {
        trials: 100,
        tol: 1e-8,
        ..VerifyOptions::default()
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for name in TEMPLATES {
        let r = verify_equivalence::<f64>(&ArchSpec::template(name)?, &opts)?;
        ok &= r.trials == 100 && r.max_deviation <= 1e-8 && r.argmax_agreement == 1.0;
        notes.push(format!(
            "{name}: max dev {:.2e}, agreement {:.1}%",
            r.max_deviation,
            100.0 * r.argmax_agreement
        ));
    }
    Ok((ok, notes.join("; ")))
}

const PROFILE_SEEDS: u64 = 10;

fn single_precision() -> Verdict {
    let cnn = verify_equivalence::<f32>(
        &ArchSpec::cnn(),
        &VerifyOptions {
            trials: 100,
            tol: 1e-3,
            ..VerifyOptions::default()
        },
    )?;
    let cnn_ok = (1e-5..=1e-3).contains(&cnn.max_deviation);

    let spec = ArchSpec::transformer_profile();
    let mut min_norm_reduction = f64::INFINITY;
    let (mut without, mut with) = (0.0f64, 0.0f64);
    for seed in 0..PROFILE_SEEDS {
        let mut rng = SeededRng::new(seed);
        let m: PlainModel<f32> = build_model(&spec, &mut rng)?;
        let x = random_input::<f32>(m.input_shape(), &mut rng);
        let plain = error_profile(&m, &x, seed, EnclaveConfig::default())?;
        for r in norm_reductions(&plain) {
            min_norm_reduction = min_norm_reduction.min(r);
        }
        let normed = error_profile(
            &m.append_final_norm(1e-5)?,
            &x,
            seed,
            EnclaveConfig::default(),
        )?;
        without = without.max(plain.last().expect("rows").deviation);
        with = with.max(normed.last().expect("rows").deviation);
    }
    let norm_ok = min_norm_reduction >= 100.0;
    let final_ok = with <= 1e-6;
    let final_reduction = without / with;
    let reduction_ok = final_reduction >= 100.0;
    let detail = format!(
        "cnn max dev {:.2e} in [1e-5, 1e-3]={cnn_ok}; min LayerNorm reduction {min_norm_reduction:.0}x \
         (>=100x)={norm_ok}; final-norm max dev {with:.2e} (<=1e-6)={final_ok}; \
         final-norm reduction {final_reduction:.0}x (>=100x)={reduction_ok}",
        cnn.max_deviation
    );
    Ok((cnn_ok && norm_ok && final_ok && reduction_ok, detail))
}

const LOCAL_INSTANCES: u64 = 50;
const LOCAL_TOL: f64 = 1e-9;

fn layer_local() -> Verdict {
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, dev: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(dev);
    };
    let builders: [fn(&mut SeededRng) -> PlainModel<f64>; 3] =
        [random_mlp, random_cnn, random_attention];
    for seed in 0..LOCAL_INSTANCES {
        let mut rng = SeededRng::new(1000 + seed);
        for build in builders {
            let m = build(&mut rng);
            for (kind, dev) in layer_deviations(&m, rng.next_u64())? {
                note(kind.name(), dev);
            }
        }

        // (A ⊗ B)(C ⊗ D) = (AC) ⊗ (BD)
        let (m, n, p, q, r, s) = (
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
        );
        let a = rand_mat(m, n, 1.0, &mut rng);
        let b = rand_mat(p, q, 1.0, &mut rng);
        let c = rand_mat(n, r, 1.0, &mut rng);
        let d = rand_mat(q, s, 1.0, &mut rng);
        let lhs = kron(&a, &b)?.matmul(&kron(&c, &d)?)?;
        let rhs = kron(&a.matmul(&c)?, &b.matmul(&d)?)?;
        note("kron mixed product", lhs.max_abs_diff(&rhs));

        // softmax(π X πᵀ) = π softmax(X) πᵀ
        let k = dim(1, 8, &mut rng);
        let x = rand_mat(k, k, 4.0, &mut rng);
        let pi = Perm::from_map(random_map(k, &mut rng))?;
        let permuted = pi.permute_cols(&pi.permute_rows(&x)?)?;
        let expect = pi.permute_cols(&pi.permute_rows(&softmax_rows(&x))?)?;
        note(
            "softmax equivariance",
            softmax_rows(&permuted).max_abs_diff(&expect),
        );

        // Flatten(P·X·Q) = P·Flatten(X)·(Q ⊗ I_hw)
        let (bn, ch, h, w) = (
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
            dim(1, 4, &mut rng),
        );
        let t = Tensor4::from_fn([bn, ch, h, w], |_, _, _, _| rng.uniform(-1.0, 1.0));
        let pm = rand_mat(bn, bn, 1.0, &mut rng);
        let qm = rand_mat(ch, ch, 1.0, &mut rng);
        let lhs = flatten_fwd(&t.mix(&pm, &qm)?);
        let rhs = pm
            .matmul(&flatten_fwd(&t))?
            .matmul(&kron(&qm, &Mat::identity(h * w))?)?;
        note("flatten mask propagation", lhs.max_abs_diff(&rhs));

        // Standardizing X·G with G[a,b] = λδ(a,b) + r[a] and eps·λ² equals standardizing X.
        let (rows, dd) = (dim(1, 8, &mut rng), dim(2, 8, &mut rng));
        let x = rand_mat(rows, dd, 1.0, &mut rng);
        let lambda = rng.uniform(0.5, 2.0);
        let rv: Vec<f64> = (0..dd).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = Mat::from_fn(dd, dd, |a, b| if a == b { lambda } else { 0.0 } + rv[a]);
        let eps = 1e-5;
        let lhs = norm_rows(&x.matmul(&g)?, eps * lambda * lambda);
        note(
            "norm gadget identity",
            lhs.max_abs_diff(&norm_rows(&x, eps)),
        );
    }
    let ok = worst.values().all(|&d| d <= LOCAL_TOL) && worst.len() >= 13;
    let detail = worst
        .iter()
        .map(|(k, d)| format!("{k} {d:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, detail))
}

fn random_map(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        map.swap(i, rng.index(i + 1));
    }
    map
}

const PROBE_SEEDS: u64 = 20;

fn probes() -> Verdict {
    let spec = probe_spec();
    let (mut weight_rho, mut pair_rho, mut threshold, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut entries = 0;
    let mut zero_ok = true;
    for seed in 0..PROBE_SEEDS {
        let m: PlainModel<f64> = model(&spec, seed)?;
        let enclave = Enclave::new(&m, EnclaveConfig::default(), seed)?;
        let stats = weight_stats(&m, enclave.weights())?;
        for layer in stats.layers.iter().filter(|l| l.entries == 64 * 64) {
            weight_rho = weight_rho.max(layer.pearson.abs());
        }
        let probe = security_probe(&m, 2, seed, EnclaveConfig::default())?;
        pair_rho = pair_rho.max(probe.max_abs_pair_rho);
        threshold = probe.threshold;
        entries = probe.entries;
        z = z.max(probe.zero_round.z.abs());
        zero_ok &= probe.zero_round.within_3_se;
    }
    let ok =
        weight_rho < 0.05 && entries == 4096 && pair_rho < 3.0 / (entries as f64).sqrt() && zero_ok;
    Ok((
        ok,
        format!(
            "max |rho(W, W~)| {weight_rho:.4} (<0.05); max |rho(X~1, X~2)| {pair_rho:.4} \
             (<{threshold:.4}, n={entries}); zero-input max |z| {z:.2} (<=3)"
        ),
    ))
}

fn one_time_pads() -> Verdict {
    let m: PlainModel<f64> = model(&ArchSpec::mlp(), 6)?;
    let mut rng = SeededRng::new(7);
    let x = random_input(m.input_shape(), &mut rng);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 8)?;
    let reference = bundle_to_bytes(&enclave.bundle(None));
    let mut masked: Vec<Vec<u64>> = Vec::new();
    let mut weights_same = true;
    for _ in 0..100 {
        let run = run_protocol(&mut enclave, &x)?;
        masked.push(
            run.trace[0]
                .act
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect(),
        );
        weights_same &= bundle_to_bytes(&enclave.bundle(None)) == reference;
    }
    let mut collisions = 0;
    for i in 0..masked.len() {
        for j in i + 1..masked.len() {
            collisions += usize::from(masked[i] == masked[j]);
        }
    }
    Ok((
        collisions == 0 && weights_same,
        format!(
            "{collisions} equal masked-input pairs of 4950; weight bytes identical={weights_same}"
        ),
    ))
}

fn storage() -> Verdict {
    let g = storage_growth::<f64>(&ArchSpec::mlp(), 3, 9)?;
    let doubled = g.steps[1].nonlinear_layers == 2 * g.steps[0].nonlinear_layers;
    let ok = g.monotone && doubled && g.nonlinear_share >= 0.8;
    let sizes: Vec<String> = g
        .steps
        .iter()
        .map(|s| format!("{} nonlinear: {} B", s.nonlinear_layers, s.bundle_bytes))
        .collect();
    Ok((
        ok,
        format!(
            "{}; nonlinear share of growth {:.1}% (>=80%)",
            sizes.join(", "),
            100.0 * g.nonlinear_share
        ),
    ))
}

type Criterion = (&'static str, u64, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("two crossings per inference", 1, crossings),
        ("extra-operation counts", 10, op_counts),
        ("f64 equivalence", 120, exact_equivalence),
        ("f32 error behaviour", 120, single_precision),
        ("layer-local masked ops", 60, layer_local),
        ("security probes", 60, probes),
        ("one-time pads vs reusable weights", 30, one_time_pads),
        ("storage attribution", 30, storage),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {} {}: {name}: {detail} [{:.2}s of {budget}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
