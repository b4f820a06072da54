use std::fmt::Write as _;
use std::path::Path;

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::io::{self, Loaded};
use maskinfer_core::harness::{
    build_model, count_and_size_report, count_report, error_profile, norm_reductions,
    prepare_model, probe_spec, random_input, run_protocol, security_probe, size_report,
    storage_growth, verify_equivalence, weight_stats, ArchSpec, ProfileRow, VerifyOptions,
};
use maskinfer_core::refnet::PlainModel;
use maskinfer_core::{Precision, Scalar, SeededRng};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{ArchArg, Command, Common};

pub type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// A finished command: its machine-readable report, a text rendering and whether every check
/// it performs passed.
pub struct Outcome {
    pub command: &'static str,
    pub precision: Precision,
    pub report: Value,
    pub text: String,
    pub passed: bool,
}

impl Outcome {
    fn new(
        command: &'static str,
        precision: Precision,
        report: impl Serialize,
        text: String,
    ) -> CliResult<Self> {
        Ok(Outcome {
            command,
            precision,
            report: serde_json::to_value(report)?,
            text,
            passed: true,
        })
    }
}

macro_rules! at_precision {
    ($p:expr, $f:ident($($arg:expr),* $(,)?)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(command: &Command, common: &Common) -> CliResult<Outcome> {
    let seed = common.seed;
    let flag = common.precision;
    match command {
        Command::Gen { arch, model, input } => {
            let spec = arch_spec(arch)?;
            at_precision!(
                flag.unwrap_or(Precision::F64),
                gen(&spec, model, input.as_deref(), seed)
            )
        }
        Command::Obfuscate {
            model,
            bundle,
            export_secrets,
            insecure_causal,
        } => {
            let config = EnclaveConfig {
                insecure_causal: *insecure_causal,
                ..EnclaveConfig::default()
            };
            let p = precision_of(model, flag)?;
            at_precision!(
                p,
                obfuscate(model, bundle, export_secrets.as_deref(), config, seed)
            )
        }
        Command::Infer {
            bundle,
            input,
            secrets,
        } => {
            let p = precision_of(bundle, flag)?;
            at_precision!(p, infer(bundle, input, secrets))
        }
        Command::Verify { arch, trials, tol } => {
            let spec = arch_spec(arch)?;
            let p = flag.unwrap_or(Precision::F64);
            let tol = tol.unwrap_or(match p {
                Precision::F32 => 1e-3,
                Precision::F64 => 1e-8,
            });
            let opts = VerifyOptions {
                trials: *trials,
                tol,
                seed,
                ..VerifyOptions::default()
            };
            at_precision!(p, verify(&spec, &opts))
        }
        Command::Profile { arch, gain, eps } => {
            let mut spec = arch_spec(arch)?;
            if let Some(g) = gain {
                let ArchSpec::Transformer {
                    sublayer_gain,
                    head_gain,
                    ..
                } = &mut spec
                else {
                    return Err("--gain applies to the transformer template only".into());
                };
                *sublayer_gain = *g;
                *head_gain = *g;
            }
            at_precision!(flag.unwrap_or(Precision::F32), profile(&spec, *eps, seed))
        }
        Command::Stats { arch } => {
            let spec = arch_spec(arch)?;
            at_precision!(flag.unwrap_or(Precision::F64), stats(&spec, seed))
        }
        Command::Probe { rounds } => {
            at_precision!(flag.unwrap_or(Precision::F64), probe(*rounds, seed))
        }
        Command::Report { arch, growth } => {
            let spec = arch_spec(arch)?;
            at_precision!(flag.unwrap_or(Precision::F64), report(&spec, *growth, seed))
        }
    }
}

/// Prints the text or JSON rendering and writes the JSON report to `--out` if given.
pub fn emit(outcome: &Outcome, common: &Common) -> CliResult<()> {
    let doc = json!({
        "command": outcome.command,
        "seed": common.seed,
        "precision": outcome.precision,
        "passed": outcome.passed,
        "report": outcome.report,
    });
    let rendered = serde_json::to_string_pretty(&doc)? + "\n";
    if let Some(path) = &common.out {
        std::fs::write(path, &rendered).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if common.json {
        print!("{rendered}");
    } else {
        print!("{}", outcome.text);
    }
    Ok(())
}

fn arch_spec(arg: &ArchArg) -> CliResult<ArchSpec> {
    match &arg.arch_file {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
        }
        None => Ok(ArchSpec::template(&arg.arch)?),
    }
}

/// The `--precision` flag if given, else the precision the file was stored at.
fn precision_of(path: &Path, flag: Option<Precision>) -> CliResult<Precision> {
    if let Some(p) = flag {
        return Ok(p);
    }
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(io::read_manifest(&bytes)?.0.precision)
}

fn unwrap_loaded<V>(loaded: Loaded<V>) -> V {
    if let Some(notice) = &loaded.notice {
        eprintln!("note: {notice}");
    }
    loaded.value
}

fn gen<T: Scalar>(
    spec: &ArchSpec,
    path: &Path,
    input: Option<&Path>,
    seed: u64,
) -> CliResult<Outcome> {
    let model: PlainModel<T> = build_model(spec, &mut SeededRng::new(seed))?;
    io::save_model(path, &model, Some(seed))?;
    if let Some(input) = input {
        let x = random_input::<T>(model.input_shape(), &mut SeededRng::with_stream(seed, 2));
        io::save_input(input, &x)?;
    }
    let report = json!({
        "arch": spec,
        "layers": model.kinds(),
        "input_shape": model.input_shape(),
        "output_shape": model.output_shape(),
        "model": path,
        "input": input,
    });
    let mut text = format!(
        "{} model, {} layers, {} -> {}, written to {}\n",
        spec.name(),
        model.kinds().len(),
        model.input_shape(),
        model.output_shape(),
        path.display()
    );
    if let Some(input) = input {
        let _ = writeln!(text, "random input written to {}", input.display());
    }
    Outcome::new("gen", T::PRECISION, report, text)
}

fn obfuscate<T: Scalar>(
    model: &Path,
    bundle: &Path,
    secrets: Option<&Path>,
    config: EnclaveConfig,
    seed: u64,
) -> CliResult<Outcome> {
    let plain = prepare_model(&unwrap_loaded(io::load_model::<T>(model)?))?;
    let enclave = Enclave::new(&plain, config, seed)?;
    let obf = enclave.bundle(None);
    io::save_bundle(bundle, &obf)?;
    if let Some(path) = secrets {
        io::save_secrets(path, &enclave)?;
    }
    let sizes = size_report(&plain, &obf);
    let mut text = format!(
        "bundle written to {}: {} weight bytes for {} plaintext bytes\n",
        bundle.display(),
        sizes.weight_bytes,
        sizes.plaintext_bytes
    );
    if let Some(path) = secrets {
        let _ = writeln!(
            text,
            "enclave state written to {} (keep local; not a protocol artifact)",
            path.display()
        );
    }
    let report = json!({
        "bundle": bundle,
        "secrets": secrets,
        "config": config,
        "sizes": sizes,
    });
    Outcome::new("obfuscate", T::PRECISION, report, text)
}

fn infer<T: Scalar>(bundle: &Path, input: &Path, secrets: &Path) -> CliResult<Outcome> {
    let obf = unwrap_loaded(io::load_bundle::<T>(bundle)?);
    let x = unwrap_loaded(io::load_input::<T>(input)?);
    let mut enclave = io::load_secrets::<T>(secrets)?;
    if enclave.weights() != &obf.weights {
        return Err(format!(
            "{} was not produced from the enclave state in {}",
            bundle.display(),
            secrets.display()
        )
        .into());
    }
    let run = run_protocol(&mut enclave, &x)?;
    io::save_secrets(secrets, &enclave)?;
    let counts = count_report(&run.counters)?;
    let mut text = format!(
        "labels: {:?}\ninference {}, {} enclave crossings, {} extra mults, {} extra krons\n",
        run.labels,
        run.session.inference(),
        counts.tee_crossings,
        counts.total.mults,
        counts.total.krons
    );
    for row in &counts.rows {
        let _ = writeln!(
            text,
            "  layer {:>2} {:<10} {} mult + {} kron",
            row.index,
            row.kind.to_string(),
            row.observed.mults,
            row.observed.krons
        );
    }
    let report = json!({
        "labels": run.labels,
        "inference": run.session.inference(),
        "counts": counts,
    });
    Outcome::new("infer", T::PRECISION, report, text)
}

fn verify<T: Scalar>(spec: &ArchSpec, opts: &VerifyOptions) -> CliResult<Outcome> {
    let r = verify_equivalence::<T>(spec, opts)?;
    let mut text = format!(
        "{} at {}: {} trials, max deviation {:.3e} (tol {:.1e}), argmax agreement {:.2}% ({}/{})\n",
        r.arch,
        r.precision,
        r.trials,
        r.max_deviation,
        r.tol,
        100.0 * r.argmax_agreement,
        r.agreeing_rows,
        r.total_rows
    );
    for l in &r.per_layer {
        let _ = writeln!(
            text,
            "  layer {:>2} {:<10} {:.3e}",
            l.index,
            l.kind.to_string(),
            l.max_deviation
        );
    }
    text.push_str(if r.passed { "PASS\n" } else { "FAIL\n" });
    let passed = r.passed;
    let mut out = Outcome::new("verify", T::PRECISION, &r, text)?;
    out.passed = passed;
    Ok(out)
}

fn profile_text(text: &mut String, title: &str, rows: &[ProfileRow]) {
    let _ = writeln!(text, "{title}");
    for r in rows {
        let _ = writeln!(
            text,
            "  layer {:>2} {:<10} deviation {:.3e}  magnitude {:.3e}",
            r.index,
            r.kind.to_string(),
            r.deviation,
            r.magnitude
        );
    }
}

fn profile<T: Scalar>(spec: &ArchSpec, eps: f64, seed: u64) -> CliResult<Outcome> {
    let mut rng = SeededRng::new(seed);
    let model: PlainModel<T> = build_model(spec, &mut rng)?;
    let x = random_input::<T>(model.input_shape(), &mut rng);
    let rows = error_profile(&model, &x, seed, EnclaveConfig::default())?;
    let normed = error_profile(
        &model.append_final_norm(T::from_f64(eps))?,
        &x,
        seed,
        EnclaveConfig::default(),
    )?;
    let without = rows.last().map_or(0.0, |r| r.deviation);
    let with = normed.last().map_or(0.0, |r| r.deviation);
    let reduction = without / with.max(f64::MIN_POSITIVE);
    let reductions = norm_reductions(&rows);

    let mut text = String::new();
    profile_text(&mut text, "without final norm:", &rows);
    profile_text(&mut text, "with final norm:", &normed);
    if !reductions.is_empty() {
        let list: Vec<String> = reductions.iter().map(|r| format!("{r:.0}x")).collect();
        let _ = writeln!(
            text,
            "reduction across each normalization: {}",
            list.join(", ")
        );
    }
    let _ = writeln!(
        text,
        "output deviation {without:.3e} -> {with:.3e} with final norm ({reduction:.1}x)"
    );
    let report = json!({
        "arch": spec,
        "rows": rows,
        "norm_reductions": reductions,
        "final_norm": {
            "eps": eps,
            "rows": normed,
            "deviation_without": without,
            "deviation_with": with,
            "reduction": reduction,
        },
    });
    Outcome::new("profile", T::PRECISION, report, text)
}

fn stats<T: Scalar>(spec: &ArchSpec, seed: u64) -> CliResult<Outcome> {
    let model = prepare_model(&build_model::<T>(spec, &mut SeededRng::new(seed))?)?;
    let enclave = Enclave::new(&model, EnclaveConfig::default(), seed)?;
    let r = weight_stats(&model, enclave.weights())?;
    let mut text = String::from(
        "layer kind       field      entries   pearson     ks   std(orig)  std(obf)\n",
    );
    for l in &r.layers {
        let _ = writeln!(
            text,
            "{:>5} {:<10} {:<8} {:>8} {:>+9.4} {:>6.3} {:>10.4} {:>9.4}",
            l.index,
            l.kind.to_string(),
            l.field,
            l.entries,
            l.pearson,
            l.ks,
            l.original.var.sqrt(),
            l.obfuscated.var.sqrt()
        );
    }
    let _ = writeln!(text, "max |pearson| {:.4}", r.max_abs_pearson);
    Outcome::new("stats", T::PRECISION, &r, text)
}

fn probe<T: Scalar>(rounds: usize, seed: u64) -> CliResult<Outcome> {
    let model: PlainModel<T> = build_model(&probe_spec(), &mut SeededRng::new(seed))?;
    let r = security_probe(&model, rounds, seed, EnclaveConfig::default())?;
    let z = &r.zero_round;
    let text = format!(
        "masked inputs: max |rho| {:.4} over {} pairs (threshold {:.4}), independent={}, distinct={}\n\
         all-zero input: mean {:.3e}, std err {:.3e}, z {:+.2}, within 3 se={}\n\
         weights: max |rho| with obfuscated fields {:.4}, constant across rounds={}, one-time fields vary={}\n",
        r.max_abs_pair_rho,
        r.masked_input_pairs.len(),
        r.threshold,
        r.masked_inputs_independent,
        r.masked_inputs_distinct,
        z.mean,
        z.std_err,
        z.z,
        z.within_3_se,
        r.max_abs_weight_rho,
        r.weights_constant,
        r.otp_fields_vary
    );
    Outcome::new("probe", T::PRECISION, &r, text)
}

fn report<T: Scalar>(spec: &ArchSpec, growth: Option<usize>, seed: u64) -> CliResult<Outcome> {
    let model: PlainModel<T> = build_model(spec, &mut SeededRng::new(seed))?;
    let r = count_and_size_report(&model, seed, EnclaveConfig::default())?;
    let mut text = format!("{} enclave crossings\n", r.counts.tee_crossings);
    for row in &r.counts.rows {
        let _ = writeln!(
            text,
            "  layer {:>2} {:<10} {} mult + {} kron",
            row.index,
            row.kind.to_string(),
            row.observed.mults,
            row.observed.krons
        );
    }
    let s = &r.sizes;
    let _ = writeln!(
        text,
        "plaintext {} B, bundle {} B ({} weights + {} one-time), overhead {:.1}%, nonlinear materials {} B",
        s.plaintext_bytes, s.bundle_bytes, s.weight_bytes, s.material_bytes, s.overhead_pct, s.nonlinear_bytes
    );
    let growth = match growth {
        Some(steps) => {
            let g = storage_growth::<T>(spec, steps, seed)?;
            for step in &g.steps {
                let _ = writeln!(
                    text,
                    "  {:>3} nonlinear layers: bundle {} B, nonlinear {} B",
                    step.nonlinear_layers, step.bundle_bytes, step.nonlinear_bytes
                );
            }
            let _ = writeln!(
                text,
                "nonlinear share of growth when doubling: {:.1}%",
                100.0 * g.nonlinear_share
            );
            Some(g)
        }
        None => None,
    };
    let report = json!({
        "arch": spec,
        "counts": r.counts,
        "sizes": r.sizes,
        "growth": growth,
    });
    Outcome::new("report", T::PRECISION, report, text)
}
