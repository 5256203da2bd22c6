//! Throwaway parameter sweep harness (not shipped).

use featherstorm::attack::{AttackConfig, Variant};
use featherstorm::data::load_image_dir;
use featherstorm::eval::run_labeled;
use featherstorm::model::load_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = std::path::PathBuf::from(&args[0]);
    let per_class: usize = args[1].parse().unwrap();
    let eval = load_image_dir(&root.join("eval"))
        .unwrap()
        .subset_per_class(per_class)
        .unwrap();
    let m0 = load_checkpoint(&root.join("checkpoints/m0.fstm")).unwrap();
    let m1 = load_checkpoint(&root.join("checkpoints/m1.fstm")).unwrap();
    let m2 = load_checkpoint(&root.join("checkpoints/m2.fstm")).unwrap();
    let targets = [&m1, &m2];

    let seeds = [5u64, 6, 7];

    let mut cfgs: Vec<(String, AttackConfig)> = Vec::new();
    cfgs.push(("MIM".into(), AttackConfig::default_for(Variant::MimCe)));
    for tap in ["early", "mid"] {
        let fia = AttackConfig {
            variant: Variant::Fia,
            tap: tap.into(),
            ..AttackConfig::default_for(Variant::Fia)
        };
        cfgs.push((format!("F:{tap}"), fia));
    }
    // (tap, n_b, keep_p, mix_mu, ensemble_n)
    for (tap, n_b, keep_p, mix_mu, n) in [
        ("early", 8, 0.9, 0.4, 30),
        ("mid", 8, 0.9, 0.4, 30),
        ("early", 16, 0.7, 0.4, 60),
        ("early", 16, 0.7, 1.0, 60),
        ("early", 32, 0.5, 1.0, 60),
    ] {
        let cfg = AttackConfig {
            variant: Variant::Safer,
            tap: tap.into(),
            keep_p,
            n_b,
            mix_mu,
            ensemble_n: n,
            ..AttackConfig::default_for(Variant::Safer)
        };
        cfgs.push((format!("S:{tap}:b{n_b}:k{keep_p}:u{mix_mu}:N{n}"), cfg));
    }

    for (label, cfg) in &cfgs {
        let mut asr = std::collections::BTreeMap::<String, Vec<f64>>::new();
        for &seed in &seeds {
            let rep = run_labeled(
                &m0,
                &targets,
                &eval,
                &[(label.clone(), cfg.clone())],
                seed,
                1,
            )
            .unwrap();
            for row in &rep.rows {
                asr.entry(row.target.clone()).or_default().push(row.asr);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{label:28} m1={:.3} m2={:.3} mean={:.3}",
            mean(&asr["m1"]),
            mean(&asr["m2"]),
            (mean(&asr["m1"]) + mean(&asr["m2"])) / 2.0
        );
    }
}
