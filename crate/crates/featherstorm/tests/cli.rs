//! Black-box tests of the command-line binary: exit codes, report files,
//! determinism across reruns and worker counts, and agreement with the
//! library API.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::LazyLock;

const BIN: &str = env!("CARGO_BIN_EXE_featherstorm");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("FEATHERSTORM_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny corpus plus a briefly trained zoo, built once for the whole file.
/// Accuracy is irrelevant here; these tests check plumbing, not transfer.
static ROOT: LazyLock<PathBuf> = LazyLock::new(|| {
    let root = std::env::temp_dir().join(format!("fs-cli-{}", std::process::id()));
    std::fs::create_dir_all(&root).unwrap();
    let data = root.display().to_string();
    let gen = run(&[
        "gen-data",
        "--data",
        &data,
        "--per-class",
        "30",
        "--eval-per-class",
        "6",
        "--seed",
        "9",
    ]);
    assert!(gen.status.success(), "gen-data failed: {}", stderr(&gen));
    let train = run(&[
        "train", "--data", &data, "--epochs", "2", "--lr", "0.01", "--seed", "9",
    ]);
    assert!(train.status.success(), "train failed: {}", stderr(&train));
    std::fs::write(root.join("train_stdout.txt"), stdout(&train)).unwrap();
    root
});

fn data_arg() -> String {
    ROOT.display().to_string()
}

/// Small fast attack invocation writing a report to `name` under the root.
fn attack_args(name: &str) -> Vec<String> {
    vec![
        "attack".into(),
        "--data".into(),
        data_arg(),
        "--variant".into(),
        "SAFER".into(),
        "--surrogate".into(),
        "m0".into(),
        "--targets".into(),
        "m0,m1,m2".into(),
        "--eval-images".into(),
        "10".into(),
        "--steps".into(),
        "2".into(),
        "--ensemble-n".into(),
        "2".into(),
        "--seed".into(),
        "7".into(),
        "--report".into(),
        ROOT.join(name).display().to_string(),
    ]
}

fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run(&refs)
}

#[test]
fn missing_dataset_exits_two_naming_path() {
    let bogus = ROOT.join("no-such-dir");
    let out = run(&["train", "--data", &bogus.display().to_string()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("no-such-dir"),
        "message must name the path: {}",
        stderr(&out)
    );

    // No --data, no config, no env var: also a usage error naming the remedy.
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("FEATHERSTORM_DATA"));
}

#[test]
fn unknown_names_exit_two() {
    let mut args = attack_args("r_unused.csv");
    args[4] = "NO_SUCH_VARIANT".into();
    let out = run_owned(&args);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("NO_SUCH_VARIANT"));

    let mut args = attack_args("r_unused2.csv");
    args[6] = "m9".into();
    let out = run_owned(&args);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("m9"));

    let out = run(&["attack", "--data", &data_arg(), "--no-such-flag"]);
    assert_ne!(out.status.code(), Some(0), "unknown flags must be rejected");
}

#[test]
fn help_lists_every_documented_flag() {
    let out = run(&["attack", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for flag in [
        "--config",
        "--data",
        "--seed",
        "--workers",
        "--variant",
        "--surrogate",
        "--targets",
        "--epsilon",
        "--steps",
        "--alpha",
        "--ensemble-n",
        "--tap",
        "--eval-images",
        "--report",
        "--dump-adv",
        "--timing",
    ] {
        assert!(text.contains(flag), "help missing {flag}");
    }
}

#[test]
fn report_rows_cover_listed_targets_with_white_box_flag() {
    let args = attack_args("r_rows.csv");
    let out = run_owned(&args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(ROOT.join("r_rows.csv")).unwrap();
    let data_rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("variant,"))
        .collect();
    assert_eq!(data_rows.len(), 3, "one row per listed target:\n{text}");
    for (target, white_box) in [("m0", "true"), ("m1", "false"), ("m2", "false")] {
        assert!(
            data_rows
                .iter()
                .any(|r| r.starts_with(&format!("SAFER,{target},{white_box},"))),
            "missing row for {target}:\n{text}"
        );
    }
}

#[test]
fn reports_identical_across_rerun_and_workers() {
    let a = attack_args("r_det_a.csv");
    let out = run_owned(&a);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let b = attack_args("r_det_b.csv");
    let out = run_owned(&b);
    assert!(out.status.success());
    let mut c = attack_args("r_det_c.csv");
    c.push("--workers".into());
    c.push("4".into());
    let out = run_owned(&c);
    assert!(out.status.success());

    let bytes_a = std::fs::read(ROOT.join("r_det_a.csv")).unwrap();
    assert_eq!(bytes_a, std::fs::read(ROOT.join("r_det_b.csv")).unwrap());
    assert_eq!(bytes_a, std::fs::read(ROOT.join("r_det_c.csv")).unwrap());
}

#[test]
fn cli_report_equals_library_run() {
    use featherstorm::attack::{AttackConfig, Variant};
    use featherstorm::eval::{to_csv, transfer_matrix};
    use featherstorm::model::load_checkpoint;

    let mut args = attack_args("r_eq.csv");
    args[4] = "MIM_CE".into();
    let out = run_owned(&args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let cli_text = std::fs::read_to_string(ROOT.join("r_eq.csv")).unwrap();

    let ckpt = ROOT.join("checkpoints");
    let m0 = load_checkpoint(&ckpt.join("m0.fstm")).unwrap();
    let m1 = load_checkpoint(&ckpt.join("m1.fstm")).unwrap();
    let m2 = load_checkpoint(&ckpt.join("m2.fstm")).unwrap();
    let eval = featherstorm::data::load_image_dir(&ROOT.join("eval"))
        .unwrap()
        .subset_per_class(1)
        .unwrap();
    let mut cfg = AttackConfig::default_for(Variant::MimCe);
    cfg.steps = 2;
    cfg.ensemble_n = 2;
    let report =
        transfer_matrix(&m0, &[&m0, &m1, &m2], &eval, &[cfg], 7, 1).unwrap();
    assert_eq!(cli_text, to_csv(&report, false));
}

#[test]
fn train_prints_accuracies_matching_checkpoints() {
    use featherstorm::model::load_checkpoint;
    let text = std::fs::read_to_string(ROOT.join("train_stdout.txt")).unwrap();
    let ckpt = ROOT.join("checkpoints");
    let mut seen = 0;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let Some(name) = parts.next() else { continue };
        if !name.starts_with('m') {
            continue;
        }
        let model = load_checkpoint(&ckpt.join(format!("{name}.fstm"))).unwrap();
        let printed_train = parts
            .next()
            .and_then(|p| p.strip_prefix("train_acc="))
            .unwrap()
            .to_string();
        let printed_test = parts
            .next()
            .and_then(|p| p.strip_prefix("test_acc="))
            .unwrap()
            .to_string();
        assert_eq!(
            printed_train,
            format!("{:.6}", model.train_meta.train_accuracy),
            "{name} train accuracy mismatch"
        );
        assert_eq!(
            printed_test,
            format!("{:.6}", model.train_meta.test_accuracy),
            "{name} test accuracy mismatch"
        );
        seen += 1;
    }
    assert_eq!(seen, 3, "expected three zoo lines in:\n{text}");
}

#[test]
fn train_rerun_writes_identical_checkpoints() {
    let alt = ROOT.join("ckpt-rerun");
    let out = run(&[
        "train",
        "--data",
        &data_arg(),
        "--epochs",
        "2",
        "--lr",
        "0.01",
        "--seed",
        "9",
        "--checkpoints",
        &alt.display().to_string(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for name in ["m0", "m1", "m2"] {
        let orig = std::fs::read(ROOT.join("checkpoints").join(format!("{name}.fstm"))).unwrap();
        let rerun = std::fs::read(alt.join(format!("{name}.fstm"))).unwrap();
        assert_eq!(orig, rerun, "{name} checkpoint bytes differ across reruns");
    }
}

#[test]
fn ablation_emits_four_variants() {
    let out = run(&[
        "ablate",
        "--data",
        &data_arg(),
        "--eval-images",
        "10",
        "--steps",
        "2",
        "--ensemble-n",
        "2",
        "--targets",
        "m1",
        "--report",
        &ROOT.join("r_ablate.csv").display().to_string(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(ROOT.join("r_ablate.csv")).unwrap();
    for variant in [
        "MIM_CE",
        "SAFER_BLOCKMIX_ONLY",
        "SAFER_SELFMIX_ONLY",
        "SAFER",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{variant},m1,"))),
            "missing {variant} row:\n{text}"
        );
    }
}

#[test]
fn frequency_study_emits_requested_corner_rows() {
    let out = run(&[
        "freqstudy",
        "--data",
        &data_arg(),
        "--eval-images",
        "10",
        "--steps",
        "2",
        "--ensemble-n",
        "2",
        "--targets",
        "m1",
        "--taus",
        "2,4",
        "--report",
        &ROOT.join("r_freq.csv").display().to_string(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(ROOT.join("r_freq.csv")).unwrap();
    for variant in ["MIM_CE", "HF_NOISE_TAU2", "HF_NOISE_TAU4"] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{variant},m1,"))),
            "missing {variant} row:\n{text}"
        );
    }
}

#[test]
fn dump_writes_probe_and_band_images() {
    let dir = ROOT.join("dump-out");
    let out = run(&[
        "dump",
        "--data",
        &data_arg(),
        "--out",
        &dir.display().to_string(),
        "--tau",
        "4",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 6, "expected six images, got {names:?}");
    for suffix in [
        "_clean.png",
        "_blockmix.png",
        "_selfmix.png",
        "_probe.png",
        "_low_tau4.png",
        "_high_tau4.png",
    ] {
        assert!(
            names.iter().any(|n| n.ends_with(suffix)),
            "missing {suffix} in {names:?}"
        );
    }
}

#[test]
fn low_band_of_constant_image_is_the_image() {
    // τ=1 keeps only the DC coefficient, which carries all of a constant
    // image's energy; the reconstruction must return the constant.
    use featherstorm::frequency::{band_reconstruct, Band};
    use featherstorm::tensor::Tensor;
    let constant = Tensor::new(&[8, 8, 3], vec![0.4; 8 * 8 * 3]);
    let low = band_reconstruct(&constant, 1, Band::Low).unwrap();
    assert!(constant.max_abs_diff(&low) < 1e-9);
    let high = band_reconstruct(&constant, 1, Band::High).unwrap();
    assert!(high.data().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn env_var_supplies_dataset_root() {
    let report = ROOT.join("r_env.csv");
    let out = Command::new(BIN)
        .args([
            "attack",
            "--variant",
            "MIM_CE",
            "--targets",
            "m1",
            "--eval-images",
            "10",
            "--steps",
            "2",
            "--report",
            &report.display().to_string(),
        ])
        .env("FEATHERSTORM_DATA", ROOT.as_os_str())
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(report.exists());
}

#[test]
fn config_file_supplies_values_flags_override() {
    let cfg_path = ROOT.join("run.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "[attack]\ndata = {:?}\nvariant = \"MIM_CE\"\ntargets = \"m1\"\n\
             eval_images = 10\nsteps = 2\nensemble_n = 2\nreport = {:?}\n",
            ROOT.display().to_string(),
            ROOT.join("r_cfg.csv").display().to_string()
        ),
    )
    .unwrap();

    // File alone: MIM_CE rows.
    let out = run(&["attack", "--config", &cfg_path.display().to_string()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(ROOT.join("r_cfg.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("MIM_CE,m1,")));

    // Flag overrides the file's variant; everything else still from the file.
    let out = run(&[
        "attack",
        "--config",
        &cfg_path.display().to_string(),
        "--variant",
        "FIA",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(ROOT.join("r_cfg.csv")).unwrap();
    assert!(
        text.lines().any(|l| l.starts_with("FIA,m1,")),
        "flag must beat file:\n{text}"
    );

    // Unknown keys in the file are hard errors.
    let bad = ROOT.join("bad.toml");
    std::fs::write(&bad, "[attack]\nnot_a_key = 1\n").unwrap();
    let out = run(&["attack", "--config", &bad.display().to_string()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}
