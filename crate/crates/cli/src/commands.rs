use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use wmtrace::bitstats::{
    detect, fpr_of_threshold, identify, match_bits, threshold_for_fpr, BitMessage, TailConvention,
};
use wmtrace::codecs::{
    adversarial_forge, adversarial_remove, embed, embed_ss_iterative, extract, extract_ss,
    extract_ss_unwhitened, keygen, CodecKey, CodecKind, IterativeParams, KeyParams,
};
use wmtrace::corpus::seed_corpus;
use wmtrace::imaging::{
    apply_transform, psnr, read_image, ssim, write_image, ImageBuffer, TransformSpec,
};
use wmtrace::tracing::{
    derived_rng, robustness_table, run_collusion_experiment, run_detection_experiment,
    run_identification_sweep, validate_fpr_empirical, ChannelModel, CollusionConfig,
    ExperimentReport, FprSource, IdentificationConfig, TrialSource,
};
use wmtrace::whitening::{fit_whitening, hard_bits, iid_diagnostics};

use crate::args::*;

const PURPOSE_SIGNATURE: u64 = 0x5167_0000;
// Must differ from every purpose used inside the library, or the streams coincide.
const PURPOSE_COLLUDERS: u64 = 0xC0_11DE;
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pnm", "pgm"];

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit 2.
    Usage(String),
    /// The command ran and failed; exit 1.
    Op(String),
}

impl From<wmtrace::Error> for CliError {
    fn from(e: wmtrace::Error) -> Self {
        Self::Op(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Op(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Op(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub enum Body {
    /// Machine output plus an optional hand-made table rendering.
    Json(Value, Option<String>),
    /// A bare scalar printed as is.
    Text(String),
}

pub struct Outcome {
    pub body: Body,
    pub csv: Option<String>,
    pub exit: u8,
}

impl Outcome {
    fn json(value: Value) -> Self {
        Self {
            body: Body::Json(value, None),
            csv: None,
            exit: 0,
        }
    }

    fn report(report: &ExperimentReport) -> CliResult<Self> {
        report.validate()?;
        Ok(Self {
            body: Body::Json(serde_json::to_value(report)?, Some(report.to_table())),
            csv: Some(report.to_csv()),
            exit: 0,
        })
    }
}

pub fn execute(command: &Command) -> CliResult<Outcome> {
    match command {
        Command::Keygen(a) => keygen_cmd(a),
        Command::WhitenFit(a) => whiten_fit(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Channel(a) => channel(a),
        Command::BenchRobustness(a) => bench_robustness(a),
        Command::SimIdentify(a) => sim_identify(a),
        Command::SimCollusion(a) => sim_collusion(a),
        Command::ValidateFpr(a) => validate_fpr(a),
        Command::AttackRemove(a) => attack_remove(a),
        Command::AttackForge(a) => attack_forge(a),
        Command::Metric(a) => metric(a),
    }
}

/// JSON has no infinity; identical images report `"+inf"`.
fn num(v: f64) -> Value {
    if v == f64::INFINITY {
        json!("+inf")
    } else {
        json!(v)
    }
}

fn load_key(path: &Path) -> CliResult<CodecKey> {
    CodecKey::load(path).map_err(|e| CliError::Op(format!("{}: {e}", path.display())))
}

fn load_image(path: &Path) -> CliResult<ImageBuffer> {
    read_image(path).map_err(|e| CliError::Op(format!("{}: {e}", path.display())))
}

/// Refuses to write over any of the command's inputs.
fn output_path<'a>(out: &'a Path, inputs: &[&Path]) -> CliResult<&'a Path> {
    if let Ok(target) = out.canonicalize() {
        for input in inputs {
            if input.canonicalize().is_ok_and(|p| p == target) {
                return Err(CliError::Op(format!(
                    "refusing to overwrite input {}",
                    input.display()
                )));
            }
        }
    }
    Ok(out)
}

/// The signature a key embeds and detects when no message is given.
pub fn default_signature(key: &CodecKey) -> BitMessage {
    BitMessage::random(key.k(), &mut derived_rng(key.seed(), PURPOSE_SIGNATURE, 0))
}

fn parse_message(text: &str, k: usize) -> CliResult<BitMessage> {
    let m: BitMessage = text
        .parse()
        .map_err(|e: wmtrace::Error| CliError::Usage(e.to_string()))?;
    if m.len() != k {
        return Err(CliError::Usage(format!(
            "message has {} bits, key expects {k}",
            m.len()
        )));
    }
    Ok(m)
}

fn signature(key: &CodecKey, message: &Option<String>) -> CliResult<BitMessage> {
    match message {
        Some(text) => parse_message(text, key.k()),
        None => Ok(default_signature(key)),
    }
}

fn parse_transforms(specs: &[String]) -> CliResult<Vec<TransformSpec>> {
    specs
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|e: wmtrace::Error| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn image_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn load_corpus(args: &CorpusArgs) -> CliResult<Vec<ImageBuffer>> {
    if let Some(count) = args.synthetic {
        if count == 0 {
            return Err(CliError::Usage(
                "--synthetic needs at least one image".into(),
            ));
        }
        return Ok(seed_corpus(args.corpus_seed, count, args.size));
    }
    let mut files = Vec::new();
    for p in &args.images {
        files.extend(image_files(p)?);
    }
    if files.is_empty() {
        return Err(CliError::Usage(
            "no images given; use --images or --synthetic".into(),
        ));
    }
    files.par_iter().map(|p| load_image(p)).collect()
}

fn keygen_cmd(a: &KeygenArgs) -> CliResult<Outcome> {
    let kind: CodecKind = a.codec.parse()?;
    let mut params = KeyParams::default();
    if let Some(alpha) = a.alpha {
        params.alpha = alpha;
    }
    if let Some(delta) = a.delta {
        params.delta = delta;
    }
    let key = keygen(kind, a.k, a.seed, params)?;
    key.save(&a.out)?;
    Ok(Outcome::json(json!({
        "codec": kind.to_string(),
        "k": key.k(),
        "seed": key.seed(),
        "key": a.out,
        "signature": default_signature(&key).to_string(),
    })))
}

fn whiten_fit(a: &WhitenFitArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    if key.kind() != CodecKind::Spreadspectrum {
        return Err(CliError::Op("whitening needs a spread-spectrum key".into()));
    }
    let out = output_path(&a.out, &[&a.key])?;
    let corpus = load_corpus(&a.corpus)?;
    let raw: Vec<Vec<f64>> = corpus
        .par_iter()
        .map(|x| extract_ss_unwhitened(x, &key))
        .collect::<wmtrace::Result<_>>()?;
    let transform = fit_whitening(&raw, a.eigen_floor)?;
    let white = raw
        .iter()
        .map(|v| transform.apply(v).map(|w| hard_bits(&w)))
        .collect::<wmtrace::Result<Vec<_>>>()?;
    let before = iid_diagnostics(&raw.iter().map(|v| hard_bits(v)).collect::<Vec<_>>())?;
    let after = iid_diagnostics(&white)?;
    key.with_whitening(Some(transform))?.save(out)?;
    let summary = |r: &wmtrace::whitening::IidReport| json!({"max_bias": r.max_bias, "max_offdiag_corr": r.max_offdiag_corr});
    Ok(Outcome::json(json!({
        "key": out,
        "key_seed": key.seed(),
        "samples": raw.len(),
        "before": summary(&before),
        "after": summary(&after),
    })))
}

fn embed_cmd(a: &EmbedArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let out = output_path(&a.out, &[&a.image, &a.key])?;
    let m = signature(&key, &a.message)?;
    let marked = match a.lambda {
        Some(lambda_i) => {
            if key.kind() != CodecKind::Spreadspectrum {
                return Err(CliError::Usage(
                    "--lambda needs a spread-spectrum key".into(),
                ));
            }
            let params = IterativeParams {
                lambda_i,
                steps: a.steps,
                learning_rate: a.learning_rate,
            };
            embed_ss_iterative(&x, &key, &m, &params)?
        }
        None => embed(&x, &key, &m)?,
    };
    let written = marked.quantize_8bit();
    write_image(&written, out)?;
    let read = extract(&written, &key)?;
    Ok(Outcome::json(json!({
        "out": out,
        "key_seed": key.seed(),
        "message": m.to_string(),
        "psnr": num(psnr(&written, &x)?),
        "ssim": ssim(&written, &x)?,
        "bit_accuracy": match_bits(&read, &m)? as f64 / m.len() as f64,
    })))
}

fn extract_cmd(a: &ExtractArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let mut value = json!({"codec": key.kind().to_string(), "k": key.k(), "key_seed": key.seed()});
    if key.kind() == CodecKind::Spreadspectrum {
        let (soft, bits) = extract_ss(&x, &key)?;
        value["bits"] = json!(bits.to_string());
        value["soft"] = json!(soft.values);
    } else {
        value["bits"] = json!(extract(&x, &key)?.to_string());
    }
    Ok(Outcome::json(value))
}

fn detect_cmd(a: &DetectArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let m = signature(&key, &a.message)?;
    let tau = threshold_for_fpr(key.k(), a.fpr, 1)?;
    let read = extract(&x, &key)?;
    let verdict = detect(&m, &read, tau)?;
    Ok(Outcome {
        exit: if verdict.flagged { 0 } else { 3 },
        ..Outcome::json(json!({
            "flagged": verdict.flagged,
            "score": verdict.score,
            "tau": verdict.threshold,
            "p_value": verdict.p_value,
            "k": key.k(),
            "key_seed": key.seed(),
            "extracted": read.to_string(),
        }))
    })
}

fn read_signatures(path: &Path, k: usize) -> CliResult<Vec<BitMessage>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Op(format!("{}: {e}", path.display())))?;
    let sigs = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            parse_message(l, k).map_err(|e| match e {
                CliError::Usage(msg) | CliError::Op(msg) => {
                    CliError::Op(format!("{}: {msg}", path.display()))
                }
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if sigs.is_empty() {
        return Err(CliError::Op(format!("{}: no signatures", path.display())));
    }
    Ok(sigs)
}

fn identify_cmd(a: &IdentifyArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let sigs = read_signatures(&a.signatures, key.k())?;
    let tau = threshold_for_fpr(key.k(), a.fpr, sigs.len())?;
    let read = extract(&x, &key)?;
    let verdict = identify(&read, &sigs, tau)?;
    Ok(Outcome::json(json!({
        "flagged": verdict.flagged,
        "user": verdict.best_index,
        "score": verdict.best_score,
        "tau": tau,
        "p_value": fpr_of_threshold(key.k(), verdict.best_score, TailConvention::Ge)?,
        "n_users": sigs.len(),
        "key_seed": key.seed(),
        "extracted": read.to_string(),
    })))
}

fn channel(a: &ChannelArgs) -> CliResult<Outcome> {
    if let Some(spec) = &a.transform {
        let (Some(image), Some(out)) = (&a.image, &a.out) else {
            return Err(CliError::Usage(
                "--transform needs --image and --out".into(),
            ));
        };
        let t = parse_transforms(std::slice::from_ref(spec))?.remove(0);
        let x = load_image(image)?;
        let out = output_path(out, &[image])?;
        let y = apply_transform(&x, &t, a.seed)?.quantize_8bit();
        write_image(&y, out)?;
        let mut value = json!({
            "transform": t.to_string(),
            "seed": a.seed,
            "out": out,
            "height": y.height(),
            "width": y.width(),
        });
        if y.dims() == x.dims() {
            value["psnr"] = num(psnr(&y, &x)?);
            value["ssim"] = json!(ssim(&y, &x)?);
        }
        return Ok(Outcome::json(value));
    }
    let (Some(p), Some(text)) = (a.bsc, &a.message) else {
        return Err(CliError::Usage("--bsc needs --message".into()));
    };
    let m: BitMessage = text
        .parse()
        .map_err(|e: wmtrace::Error| CliError::Usage(e.to_string()))?;
    let model = ChannelModel::bsc(p, a.seed)?;
    let y = model.apply_bits(&m, 0)?;
    Ok(Outcome::json(json!({
        "channel": model.label(),
        "seed": a.seed,
        "input": m.to_string(),
        "output": y.to_string(),
        "flipped": m.len() - match_bits(&m, &y)?,
    })))
}

fn bench_robustness(a: &BenchRobustnessArgs) -> CliResult<Outcome> {
    let start = Instant::now();
    let key = load_key(&a.key)?;
    let corpus = load_corpus(&a.corpus)?;
    let transforms = if a.transforms.is_empty() {
        TransformSpec::evaluation_set()
    } else {
        parse_transforms(&a.transforms)?
    };
    let mut report = robustness_table(&key, &corpus, &transforms, a.n_keys, a.seed)?;
    if !a.fpr.is_empty() {
        for t in &transforms {
            let channel = ChannelModel::image(t.clone(), a.seed)?;
            let rows = run_detection_experiment(
                &key,
                TrialSource::Images(&corpus),
                &channel,
                &a.fpr,
                a.seed,
            )?;
            report.detection.extend(rows.detection);
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Outcome::report(&report)
}

fn sim_identify(a: &SimIdentifyArgs) -> CliResult<Outcome> {
    let mut channels =
        a.p.iter()
            .map(|&p| ChannelModel::bsc(p, a.seed))
            .collect::<wmtrace::Result<Vec<_>>>()?;
    for t in parse_transforms(&a.transforms)? {
        channels.push(ChannelModel::image(t, a.seed)?);
    }
    if channels.is_empty() {
        return Err(CliError::Usage(
            "give at least one --p or --transforms".into(),
        ));
    }
    let config = IdentificationConfig {
        n_users: a.n_users,
        n_decoys: a.n_decoys,
        images_per_user: a.images_per_user,
        target_fpr: a.fpr,
        k: a.k,
        seed: a.seed,
    };
    let report = match &a.key {
        Some(path) if !a.transforms.is_empty() => {
            let key = load_key(path)?;
            if key.k() != a.k {
                return Err(CliError::Usage(format!(
                    "key carries {} bits, --k is {}",
                    key.k(),
                    a.k
                )));
            }
            let corpus = load_corpus(&a.corpus)?;
            run_identification_sweep(&config, &channels, Some((&key, &corpus)))?
        }
        _ => run_identification_sweep(&config, &channels, None)?,
    };
    Outcome::report(&report)
}

fn sim_collusion(a: &SimCollusionArgs) -> CliResult<Outcome> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let key_i = BitMessage::random(a.k, &mut derived_rng(a.seed, PURPOSE_COLLUDERS, 0));
    let key_j = BitMessage::random(a.k, &mut derived_rng(a.seed, PURPOSE_COLLUDERS, 1));
    let config = CollusionConfig {
        p: a.p,
        n_bits_total: a.bits,
        messages_per_trial: a.messages_per_trial,
        seed: a.seed,
    };
    Outcome::report(&run_collusion_experiment(&key_i, &key_j, &config)?)
}

fn validate_fpr(a: &ValidateFprArgs) -> CliResult<Outcome> {
    let report = match &a.key {
        Some(path) => {
            let key = load_key(path)?;
            if a.k.is_some_and(|k| k != key.k()) {
                return Err(CliError::Usage(format!("key carries {} bits", key.k())));
            }
            let corpus = load_corpus(&a.corpus)?;
            let source = FprSource::Extractor {
                key: &key,
                corpus: &corpus,
            };
            validate_fpr_empirical(key.k(), &a.tau, a.trials, source, a.seed)?
        }
        None => validate_fpr_empirical(
            a.k.unwrap_or(48),
            &a.tau,
            a.trials,
            FprSource::Synthetic,
            a.seed,
        )?,
    };
    Outcome::report(&report)
}

fn attack_remove(a: &AttackRemoveArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let out = output_path(&a.out, &[&a.image, &a.key])?;
    let attacked = adversarial_remove(&x, &key, a.psnr_floor, a.seed)?;
    let written = attacked.image.quantize_8bit();
    write_image(&written, out)?;
    let before = extract(&x, &key)?;
    let after = extract(&written, &key)?;
    Ok(Outcome::json(json!({
        "out": out,
        "seed": a.seed,
        "key_seed": key.seed(),
        "psnr_floor": a.psnr_floor,
        "psnr": num(attacked.psnr),
        "psnr_8bit": num(psnr(&written, &x)?),
        "noop": attacked.noop,
        "bits_before": before.to_string(),
        "bits_after": after.to_string(),
        "changed_bits": before.len() - match_bits(&before, &after)?,
    })))
}

fn attack_forge(a: &AttackForgeArgs) -> CliResult<Outcome> {
    let key = load_key(&a.key)?;
    let x = load_image(&a.image)?;
    let out = output_path(&a.out, &[&a.image, &a.key])?;
    let victim = signature(&key, &a.message)?;
    let forged = adversarial_forge(&x, &key, &victim, a.psnr_floor)?;
    let written = forged.image.quantize_8bit();
    write_image(&written, out)?;
    let tau = threshold_for_fpr(key.k(), a.fpr, 1)?;
    let verdict = detect(&victim, &extract(&written, &key)?, tau)?;
    Ok(Outcome::json(json!({
        "out": out,
        "key_seed": key.seed(),
        "victim": victim.to_string(),
        "psnr_floor": a.psnr_floor,
        "psnr": num(forged.psnr),
        "psnr_8bit": num(psnr(&written, &x)?),
        "noop": forged.noop,
        "flagged": verdict.flagged,
        "score": verdict.score,
        "tau": tau,
    })))
}

fn metric(a: &MetricArgs) -> CliResult<Outcome> {
    let x = load_image(&a.a)?;
    let y = load_image(&a.b)?;
    let text = match a.metric {
        Metric::Psnr => match psnr(&x, &y)? {
            v if v == f64::INFINITY => "+inf".to_string(),
            v => format!("{v:.6}"),
        },
        Metric::Ssim => format!("{:.6}", ssim(&x, &y)?),
    };
    Ok(Outcome {
        body: Body::Text(text),
        csv: None,
        exit: 0,
    })
}
