//! Experiment driver: runs attack variants over an evaluation set, scores
//! white-box and transfer success rates, and serializes canonical CSV
//! reports.
//!
//! Scoring convention: the success-rate denominator counts only images the
//! target model classifies correctly *before* the attack — an image the
//! target already gets wrong says nothing about the attack. The rule is
//! restated in every report header.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attack::{run_variant, AdversarialResult, AttackConfig, Variant};
use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;
use crate::tensor::Tensor;

/// One scored (variant, target) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub target: String,
    pub white_box: bool,
    pub asr: f64,
    /// Denominator: eval images the target classified correctly pre-attack.
    pub n: usize,
    pub mean_linf: f64,
    /// Measured wallclock for the variant's generation+scoring pass. Kept
    /// out of the canonical CSV unless timing is explicitly requested.
    pub seconds: f64,
}

/// A full experiment result; rows are kept sorted by (variant, target).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub surrogate: String,
    pub seed: u64,
    pub config_digest: String,
    pub rows: Vec<EvalRow>,
}

/// First 8 bytes of the SHA-256 of the value's canonical JSON, hex-encoded.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialization cannot fail");
    let hash = Sha256::digest(&json);
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Attack every image in `data` on `model`. Image order in the result
/// matches dataset order; each image draws from its own seed substream, so
/// the bytes produced are identical for every worker count.
pub fn attack_all(
    model: &ModelCheckpoint,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<AdversarialResult>> {
    cfg.validate()?;
    if workers <= 1 {
        data.images()
            .iter()
            .map(|img| run_variant(model, img, data, cfg, seed))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            data.images()
                .par_iter()
                .map(|img| run_variant(model, img, data, cfg, seed))
                .collect()
        })
    }
}

/// Re-verify the perturbation contract on finished examples; results are
/// not trusted from the attack module.
pub fn check_feasibility(
    data: &DatasetHandle,
    results: &[AdversarialResult],
    epsilon: f64,
) -> Result<()> {
    let by_id: HashMap<usize, &Tensor> =
        data.images().iter().map(|img| (img.id, &img.pixels)).collect();
    for res in results {
        let clean = by_id.get(&res.original_id).ok_or_else(|| {
            Error::Feasibility(format!("result for unknown image id {}", res.original_id))
        })?;
        let dist = res.x_adv.max_abs_diff(clean);
        if dist > epsilon + 1e-9 {
            return Err(Error::Feasibility(format!(
                "image {}: distance {dist} exceeds budget {epsilon}",
                res.original_id
            )));
        }
        if res.x_adv.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Feasibility(format!(
                "image {}: pixel outside [0, 1]",
                res.original_id
            )));
        }
    }
    Ok(())
}

/// Success rate over explicit (clean, adversarial, label) triples.
pub fn attack_success_rate(
    target: &ModelCheckpoint,
    pairs: &[(&Tensor, &Tensor, usize)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "success rate needs at least one pair".into(),
        ));
    }
    let mut n = 0usize;
    let mut hits = 0usize;
    for &(x, x_adv, y) in pairs {
        if target.predict(x)?.0 != y {
            continue;
        }
        n += 1;
        if target.predict(x_adv)?.0 != y {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "target misclassifies every clean image; success rate undefined".into(),
        ));
    }
    Ok(hits as f64 / n as f64)
}

fn score_target(
    target: &ModelCheckpoint,
    data: &DatasetHandle,
    clean_correct: &[bool],
    results: &[AdversarialResult],
) -> Result<(f64, usize)> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for ((img, res), &correct) in data.images().iter().zip(results).zip(clean_correct) {
        debug_assert_eq!(img.id, res.original_id);
        if !correct {
            continue;
        }
        n += 1;
        if target.predict(&res.x_adv)?.0 != img.label {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "target '{}' misclassifies every clean image",
            target.spec.name
        )));
    }
    Ok((hits as f64 / n as f64, n))
}

/// Run a list of labeled attack configurations against every target and
/// assemble the report. This is the engine behind the transfer, ablation,
/// and frequency drivers; labels become the CSV `variant` column.
pub fn run_labeled(
    surrogate: &ModelCheckpoint,
    targets: &[&ModelCheckpoint],
    data: &DatasetHandle,
    labeled_cfgs: &[(String, AttackConfig)],
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no target models given".into()));
    }
    // Clean predictions per target are variant-independent; compute once.
    let mut clean_correct: Vec<Vec<bool>> = Vec::with_capacity(targets.len());
    for target in targets {
        let marks = data
            .images()
            .iter()
            .map(|img| Ok(target.predict(&img.pixels)?.0 == img.label))
            .collect::<Result<Vec<bool>>>()?;
        clean_correct.push(marks);
    }
    let mut rows = Vec::new();
    for (label, cfg) in labeled_cfgs {
        let start = Instant::now();
        let results = attack_all(surrogate, data, cfg, seed, workers)?;
        check_feasibility(data, &results, cfg.epsilon)?;
        let mean_linf =
            results.iter().map(|r| r.linf).sum::<f64>() / results.len() as f64;
        for (target, marks) in targets.iter().zip(&clean_correct) {
            let (asr, n) = score_target(target, data, marks, &results)?;
            rows.push(EvalRow {
                variant: label.clone(),
                target: target.spec.name.clone(),
                white_box: target.spec.name == surrogate.spec.name,
                asr,
                n,
                mean_linf,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    rows.sort_by(|a, b| (&a.variant, &a.target).cmp(&(&b.variant, &b.target)));
    Ok(EvalReport {
        surrogate: surrogate.spec.name.clone(),
        seed,
        config_digest: config_digest(&labeled_cfgs),
        rows,
    })
}

/// One row per (variant, target): every config attacks each eval image on
/// the surrogate once, then every target scores the same examples.
pub fn transfer_matrix(
    surrogate: &ModelCheckpoint,
    targets: &[&ModelCheckpoint],
    data: &DatasetHandle,
    cfgs: &[AttackConfig],
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    let labeled: Vec<(String, AttackConfig)> = cfgs
        .iter()
        .map(|cfg| (cfg.variant.name().to_string(), cfg.clone()))
        .collect();
    run_labeled(surrogate, targets, data, &labeled, seed, workers)
}

/// Four-way study: the attack with both transforms disabled (plain
/// cross-entropy ascent), each transform alone, and the full pipeline —
/// all other settings shared.
pub fn ablation_study(
    surrogate: &ModelCheckpoint,
    targets: &[&ModelCheckpoint],
    data: &DatasetHandle,
    base_cfg: &AttackConfig,
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    if base_cfg.variant != Variant::Safer {
        return Err(Error::InvalidArgument(format!(
            "ablation starts from the full pipeline, got {}",
            base_cfg.variant
        )));
    }
    let with = |variant: Variant| {
        let mut cfg = base_cfg.clone();
        cfg.variant = variant;
        (variant.name().to_string(), cfg)
    };
    let labeled = vec![
        with(Variant::MimCe),
        with(Variant::SaferBlockmixOnly),
        with(Variant::SaferSelfmixOnly),
        with(Variant::Safer),
    ];
    run_labeled(surrogate, targets, data, &labeled, seed, workers)
}

/// Corner-noise probe sweep: one labeled config per corner size τ, plus a
/// plain cross-entropy baseline. Row labels embed τ (`HF_NOISE_TAU8`).
pub fn frequency_study(
    surrogate: &ModelCheckpoint,
    targets: &[&ModelCheckpoint],
    data: &DatasetHandle,
    base_cfg: &AttackConfig,
    taus: &[usize],
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    let extent = surrogate.spec.input_shape[0].min(surrogate.spec.input_shape[1]);
    for &tau in taus {
        if tau == 0 || tau > extent {
            return Err(Error::InvalidArgument(format!(
                "tau {tau} outside the image extent {extent}"
            )));
        }
    }
    let mut labeled = Vec::new();
    let mut baseline = base_cfg.clone();
    baseline.variant = Variant::MimCe;
    labeled.push(("MIM_CE".to_string(), baseline));
    for &tau in taus {
        let mut cfg = base_cfg.clone();
        cfg.variant = Variant::HfNoise;
        cfg.tau = tau;
        labeled.push((format!("HF_NOISE_TAU{tau}"), cfg));
    }
    run_labeled(surrogate, targets, data, &labeled, seed, workers)
}

fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Canonical CSV: comment headers carrying seed, digest, and the
/// denominator rule; fixed column order; 9-significant-digit floats; LF
/// endings; rows sorted by (variant, target). Identical reports serialize
/// to identical bytes. Measured wallclock is written only when
/// `include_timing` is set — the deterministic default writes zero.
pub fn to_csv(report: &EvalReport, include_timing: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!("# seed={}\n", report.seed));
    out.push_str(&format!("# config_digest={}\n", report.config_digest));
    out.push_str(&format!("# surrogate={}\n", report.surrogate));
    out.push_str(
        "# asr denominator: images the target classifies correctly before the attack\n",
    );
    out.push_str("variant,target,white_box,asr,n,mean_linf,seconds\n");
    let mut rows = report.rows.clone();
    rows.sort_by(|a, b| (&a.variant, &a.target).cmp(&(&b.variant, &b.target)));
    for row in &rows {
        let seconds = if include_timing { row.seconds } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.variant,
            row.target,
            row.white_box,
            fmt9(row.asr),
            row.n,
            fmt9(row.mean_linf),
            fmt9(seconds)
        ));
    }
    out
}

/// Write the canonical CSV to disk.
pub fn write_report(path: &Path, report: &EvalReport, include_timing: bool) -> Result<()> {
    std::fs::write(path, to_csv(report, include_timing))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Export adversarial images as `<id>_<variant>.png` under `dir`.
pub fn dump_adversarial(
    dir: &Path,
    results: &[AdversarialResult],
    variant_label: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for res in results {
        let path = dir.join(format!("{}_{}.png", res.original_id, variant_label));
        crate::data::save_png(&path, &res.x_adv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageTensor;
    use crate::model::{build, LayerSpec, ModelSpec, PadMode};
    use crate::rng::RandomStream;
    use std::collections::BTreeMap;

    /// Model on [2,2,1] whose logits are (pixel0, pixel1): predicts 0 when
    /// pixel0 ≥ pixel1 (ties go low), else 1.
    fn pixel_judge() -> ModelCheckpoint {
        let spec = ModelSpec {
            name: "judge".into(),
            input_shape: [2, 2, 1],
            num_classes: 2,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }],
            feature_taps: [("mid".to_string(), 1)].into_iter().collect::<BTreeMap<_, _>>(),
        };
        let mut ckpt = build(&spec, 1).unwrap();
        let w = Tensor::new(
            &[4, 2],
            vec![
                1.0, 0.0, // pixel0 -> logit0
                0.0, 1.0, // pixel1 -> logit1
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        ckpt.params[1] = vec![w, Tensor::zeros(&[2])];
        ckpt
    }

    fn quad(p0: f64, p1: f64) -> Tensor {
        Tensor::new(&[2, 2, 1], vec![p0, p1, 0.0, 0.0])
    }

    #[test]
    fn success_rate_counts_flipped_fraction() {
        let judge = pixel_judge();
        // Ten initially-correct pairs; three adversarials flip the argmax.
        let clean: Vec<Tensor> = (0..10)
            .map(|i| if i % 2 == 0 { quad(0.9, 0.1) } else { quad(0.1, 0.9) })
            .collect();
        let adv: Vec<Tensor> = (0..10)
            .map(|i| match i {
                0 | 2 | 4 => quad(0.1, 0.9), // label 0 flipped to 1
                _ => clean[i].clone(),
            })
            .collect();
        let pairs: Vec<(&Tensor, &Tensor, usize)> = (0..10)
            .map(|i| (&clean[i], &adv[i], i % 2))
            .collect();
        assert_eq!(attack_success_rate(&judge, &pairs).unwrap(), 0.3);
    }

    #[test]
    fn initially_wrong_images_leave_the_denominator() {
        let judge = pixel_judge();
        // Four pairs; one clean image already mislabeled, one attack succeeds.
        let c0 = quad(0.9, 0.1); // label 0, correct
        let c1 = quad(0.2, 0.8); // label 0, WRONG already
        let c2 = quad(0.1, 0.9); // label 1, correct
        let c3 = quad(0.3, 0.7); // label 1, correct
        let a0 = quad(0.1, 0.9); // flips
        let pairs = vec![
            (&c0, &a0, 0usize),
            (&c1, &c1, 0usize),
            (&c2, &c2, 1usize),
            (&c3, &c3, 1usize),
        ];
        // Denominator 3, one success.
        let asr = attack_success_rate(&judge, &pairs).unwrap();
        assert!((asr - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_success_rates() {
        let judge = pixel_judge();
        let c = quad(0.9, 0.1);
        let pairs = vec![(&c, &c, 0usize)];
        assert_eq!(attack_success_rate(&judge, &pairs).unwrap(), 0.0);
        let flipped = quad(0.0, 1.0);
        let pairs = vec![(&c, &flipped, 0usize)];
        assert_eq!(attack_success_rate(&judge, &pairs).unwrap(), 1.0);
        assert!(attack_success_rate(&judge, &[]).is_err());
        // Every clean image wrong -> undefined.
        let pairs = vec![(&c, &c, 1usize)];
        assert!(attack_success_rate(&judge, &pairs).is_err());
    }

    /// Shared toy world for driver tests: 8×8×2 images, three classes.
    fn toy_data(per_class: usize, seed: u64) -> DatasetHandle {
        let mut images = Vec::new();
        for label in 0..3usize {
            for k in 0..per_class {
                let id = label * per_class + k;
                let mut rng = RandomStream::substream(seed, "toy", id as u64);
                let mut px = Tensor::zeros(&[8, 8, 2]);
                for y in 0..8 {
                    for x in 0..8 {
                        let active = match label {
                            0 => x < 4,
                            1 => x >= 4,
                            _ => y < 4,
                        };
                        let base = if active { 0.75 } else { 0.25 };
                        for c in 0..2 {
                            let v: f64 = base + rng.uniform_in(-0.08, 0.08);
                            px.set(&[y, x, c], v.clamp(0.0, 1.0));
                        }
                    }
                }
                images.push(ImageTensor::new(px, label, id).unwrap());
            }
        }
        DatasetHandle::new(images, 3).unwrap()
    }

    fn toy_model(name: &str, seed: u64, data: &DatasetHandle) -> ModelCheckpoint {
        let spec = ModelSpec {
            name: name.into(),
            input_shape: [8, 8, 2],
            num_classes: 3,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: PadMode::Same,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
            ],
            feature_taps: [("mid".to_string(), 2)].into_iter().collect::<BTreeMap<_, _>>(),
        };
        crate::model::train(&build(&spec, seed).unwrap(), data, 3, 0.05, seed).unwrap()
    }

    fn toy_cfg(variant: Variant) -> AttackConfig {
        let mut cfg = AttackConfig::default_for(variant);
        cfg.n_b = 4;
        cfg.tau = 2;
        cfg.ensemble_n = 2;
        cfg.steps = 3;
        cfg
    }

    #[test]
    fn transfer_rows_and_white_box_flag() {
        let data = toy_data(4, 50);
        let m0 = toy_model("alpha", 51, &data);
        let m1 = toy_model("beta", 52, &data);
        let cfgs = vec![toy_cfg(Variant::MimCe), toy_cfg(Variant::Safer)];
        let report = transfer_matrix(&m0, &[&m0, &m1], &data, &cfgs, 53, 1).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.surrogate, "alpha");
        for row in &report.rows {
            assert_eq!(row.white_box, row.target == "alpha");
            assert!((0.0..=1.0).contains(&row.asr));
            assert!(row.n > 0);
            assert!(row.mean_linf <= toy_cfg(Variant::MimCe).epsilon + 1e-9);
        }
        // Sorted by (variant, target).
        let keys: Vec<_> = report
            .rows
            .iter()
            .map(|r| (r.variant.clone(), r.target.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn reports_are_deterministic_and_worker_independent() {
        let data = toy_data(3, 60);
        let m0 = toy_model("alpha", 61, &data);
        let m1 = toy_model("beta", 62, &data);
        let cfgs = vec![toy_cfg(Variant::Safer)];
        let a = transfer_matrix(&m0, &[&m1], &data, &cfgs, 63, 1).unwrap();
        let b = transfer_matrix(&m0, &[&m1], &data, &cfgs, 63, 1).unwrap();
        assert_eq!(to_csv(&a, false), to_csv(&b, false));
        let c = transfer_matrix(&m0, &[&m1], &data, &cfgs, 63, 3).unwrap();
        assert_eq!(to_csv(&a, false), to_csv(&c, false));
        let d = transfer_matrix(&m0, &[&m1], &data, &cfgs, 64, 1).unwrap();
        assert_ne!(to_csv(&a, false), to_csv(&d, false));
    }

    #[test]
    fn attack_all_worker_counts_agree_bitwise() {
        let data = toy_data(3, 65);
        let m0 = toy_model("alpha", 66, &data);
        let cfg = toy_cfg(Variant::Safer);
        let seq = attack_all(&m0, &data, &cfg, 67, 1).unwrap();
        let par = attack_all(&m0, &data, &cfg, 67, 4).unwrap();
        assert_eq!(seq.len(), par.len());
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.original_id, b.original_id);
            assert!(a.x_adv.bit_eq(&b.x_adv));
        }
    }

    #[test]
    fn ablation_emits_four_variants_and_matches_plain_run() {
        let data = toy_data(3, 70);
        let m0 = toy_model("alpha", 71, &data);
        let m1 = toy_model("beta", 72, &data);
        let base = toy_cfg(Variant::Safer);
        let report = ablation_study(&m0, &[&m1], &data, &base, 73, 1).unwrap();
        assert_eq!(report.rows.len(), 4);
        let variants: Vec<_> = report.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(
            variants,
            ["MIM_CE", "SAFER", "SAFER_BLOCKMIX_ONLY", "SAFER_SELFMIX_ONLY"]
        );
        // The none-variant row equals an independent plain run.
        let mut plain = base.clone();
        plain.variant = Variant::MimCe;
        let solo = transfer_matrix(&m0, &[&m1], &data, &[plain], 73, 1).unwrap();
        let none_row = report.rows.iter().find(|r| r.variant == "MIM_CE").unwrap();
        let solo_row = &solo.rows[0];
        assert_eq!(none_row.asr, solo_row.asr);
        assert_eq!(none_row.n, solo_row.n);
        assert_eq!(none_row.mean_linf, solo_row.mean_linf);
        // Starting from anything but the full pipeline is a usage error.
        assert!(ablation_study(&m0, &[&m1], &data, &toy_cfg(Variant::Fia), 73, 1).is_err());
    }

    #[test]
    fn frequency_study_row_structure() {
        let data = toy_data(2, 80);
        let m0 = toy_model("alpha", 81, &data);
        let m1 = toy_model("beta", 82, &data);
        let base = toy_cfg(Variant::Safer);
        let report = frequency_study(&m0, &[&m0, &m1], &data, &base, &[2, 3], 83, 1).unwrap();
        // (1 baseline + 2 taus) × 2 targets.
        assert_eq!(report.rows.len(), 6);
        let labels: Vec<_> = report.rows.iter().map(|r| r.variant.as_str()).collect();
        assert!(labels.contains(&"MIM_CE"));
        assert!(labels.contains(&"HF_NOISE_TAU2"));
        assert!(labels.contains(&"HF_NOISE_TAU3"));

        let baseline_only = frequency_study(&m0, &[&m1], &data, &base, &[], 83, 1).unwrap();
        assert_eq!(baseline_only.rows.len(), 1);
        assert_eq!(baseline_only.rows[0].variant, "MIM_CE");

        assert!(frequency_study(&m0, &[&m1], &data, &base, &[99], 83, 1).is_err());
        assert!(frequency_study(&m0, &[&m1], &data, &base, &[0], 83, 1).is_err());
    }

    #[test]
    fn csv_is_canonical() {
        let report = EvalReport {
            surrogate: "alpha".into(),
            seed: 7,
            config_digest: "00ff00ff00ff00ff".into(),
            rows: vec![
                EvalRow {
                    variant: "SAFER".into(),
                    target: "beta".into(),
                    white_box: false,
                    asr: 0.425,
                    n: 40,
                    mean_linf: 16.0 / 255.0,
                    seconds: 3.25,
                },
                EvalRow {
                    variant: "MIM_CE".into(),
                    target: "beta".into(),
                    white_box: false,
                    asr: 1.0,
                    n: 40,
                    mean_linf: 0.05,
                    seconds: 1.5,
                },
            ],
        };
        let csv = to_csv(&report, false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed=7");
        assert_eq!(lines[1], "# config_digest=00ff00ff00ff00ff");
        assert_eq!(lines[2], "# surrogate=alpha");
        assert!(lines[3].starts_with("# asr denominator"));
        assert_eq!(lines[4], "variant,target,white_box,asr,n,mean_linf,seconds");
        // Rows re-sorted even though the input order was reversed.
        assert!(lines[5].starts_with("MIM_CE,beta,false,1.00000000e0,40,"));
        assert!(lines[6].starts_with("SAFER,beta,false,4.25000000e-1,40,"));
        // Timing suppressed by default.
        assert!(lines[5].ends_with(",0.00000000e0"));
        assert!(!csv.contains('\r'));
        assert!(csv.ends_with('\n'));
        // Requesting timing surfaces the measured seconds.
        let timed = to_csv(&report, true);
        assert!(timed.contains("1.50000000e0"));
        assert!(timed.contains("3.25000000e0"));
    }

    #[test]
    fn digest_reacts_to_every_field() {
        let base = toy_cfg(Variant::Safer);
        let d0 = config_digest(&base);
        assert_eq!(d0.len(), 16);
        assert!(d0.chars().all(|c| c.is_ascii_hexdigit()));
        let mutations: Vec<Box<dyn Fn(&mut AttackConfig)>> = vec![
            Box::new(|c| c.variant = Variant::Fia),
            Box::new(|c| c.epsilon += 1e-6),
            Box::new(|c| c.steps += 1),
            Box::new(|c| c.alpha += 1e-6),
            Box::new(|c| c.momentum_decay += 1e-6),
            Box::new(|c| c.ensemble_n += 1),
            Box::new(|c| c.n_b += 1),
            Box::new(|c| c.keep_p -= 1e-6),
            Box::new(|c| c.mix_mu += 1e-6),
            Box::new(|c| c.beta_min += 1e-6),
            Box::new(|c| c.beta_max += 1e-6),
            Box::new(|c| c.tau += 1),
            Box::new(|c| c.hf_sigma = Some(0.5)),
            Box::new(|c| c.p_d += 1e-6),
            Box::new(|c| c.tap = "late".into()),
        ];
        for (i, mutate) in mutations.iter().enumerate() {
            let mut cfg = base.clone();
            mutate(&mut cfg);
            assert_ne!(d0, config_digest(&cfg), "field mutation {i} not detected");
        }
    }

    #[test]
    fn feasibility_recheck_catches_tampering() {
        let data = toy_data(2, 90);
        let m0 = toy_model("alpha", 91, &data);
        let cfg = toy_cfg(Variant::MimCe);
        let mut results = attack_all(&m0, &data, &cfg, 92, 1).unwrap();
        check_feasibility(&data, &results, cfg.epsilon).unwrap();
        // Push one value past the budget.
        let v = results[0].x_adv.data()[0];
        results[0].x_adv.data_mut()[0] = (v + 0.5).min(1.0);
        let err = check_feasibility(&data, &results, cfg.epsilon).unwrap_err();
        assert!(matches!(err, Error::Feasibility(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn adversarial_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_data(2, 95);
        let m0 = toy_model("alpha", 96, &data);
        let cfg = toy_cfg(Variant::MimCe);
        let results = attack_all(&m0, &data, &cfg, 97, 1).unwrap();
        // PNG wants 1 or 3 channels; collapse the 2-channel toys to 1.
        let mono: Vec<AdversarialResult> = results
            .iter()
            .map(|r| {
                let s = r.x_adv.shape();
                let mut px = Tensor::zeros(&[s[0], s[1], 1]);
                for y in 0..s[0] {
                    for x in 0..s[1] {
                        px.set(&[y, x, 0], r.x_adv.at(&[y, x, 0]));
                    }
                }
                AdversarialResult {
                    x_adv: px,
                    ..r.clone()
                }
            })
            .collect();
        dump_adversarial(dir.path(), &mono, "MIM_CE").unwrap();
        for res in &mono {
            let path = dir.path().join(format!("{}_MIM_CE.png", res.original_id));
            let loaded = crate::data::load_image_file(&path).unwrap();
            // PNGs are 8-bit: quantization error at most half a step plus
            // rounding, and the loader expands grey to three channels.
            assert_eq!(loaded.shape()[2], 3);
            for y in 0..res.x_adv.shape()[0] {
                for x in 0..res.x_adv.shape()[1] {
                    let a = res.x_adv.at(&[y, x, 0]);
                    let b = loaded.at(&[y, x, 0]);
                    assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
                }
            }
        }
    }
}
