use std::path::Path;
use std::process::{Command, Output};

use spinecycle::io::{read_stats, tables};
use spinecycle::model::{InconsistencyKind, VertebraLabel};
use spinecycle::priors::{AnnotatedVertebra, ScanAnnotation};

fn spinecycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinecycle")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn phantom(dir: &Path, labels: &str, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["phantom", "--labels", labels, "--out", p(dir)];
    args.extend_from_slice(extra);
    let o = spinecycle(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ct.nrrd", "spine_mask.nrrd", "truth_locations.tsv", "truth_labelmap.nrrd", "truth_probabilities.tsv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    dir.join("manifest.toml")
}

#[test]
fn clean_phantom_runs_consistently_and_scores_perfectly() {
    let d = tempfile::tempdir().unwrap();
    let manifest = phantom(&d.path().join("in"), "T11,T12,L1,L2,L3", &["--seed", "4"]);
    let out = d.path().join("out");
    let o = spinecycle(&["run-cycle", "--manifest", p(&manifest), "--out", p(&out), "--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tables::read_report(&out.join("report.tsv")).unwrap().is_empty());
    let labels = tables::read_labels(&out.join("labels.tsv")).unwrap();
    let names: Vec<String> = labels.iter().map(|l| l.unwrap().name()).collect();
    assert_eq!(names, ["T11", "T12", "L1", "L2", "L3"]);
    assert!(out.join("probabilities.tsv").exists());

    let metrics = d.path().join("metrics.tsv");
    let o = spinecycle(&[
        "evaluate",
        "--pred",
        p(&out.join("locations.tsv")),
        "--truth",
        p(&d.path().join("in/truth_locations.tsv")),
        "--pred-labelmap",
        p(&out.join("labelmap.nrrd")),
        "--truth-labelmap",
        p(&d.path().join("in/truth_labelmap.nrrd")),
        "--out",
        p(&metrics),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("id_rate\t100.0000"), "{stdout}");
    assert!(stdout.contains("dice\t1.0000"), "{stdout}");
    let rows = tables::parse_metrics(&std::fs::read_to_string(&metrics).unwrap(), "m").unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.identified));
}

#[test]
fn corrupted_phantom_exits_two_and_names_the_failure() {
    let d = tempfile::tempdir().unwrap();
    for (corrupt, kind) in [
        ("drop_mask:2", InconsistencyKind::EmptySegmentation),
        ("shift_location", InconsistencyKind::DistanceAnomaly),
    ] {
        let input = d.path().join(format!("in-{kind:?}"));
        let manifest = phantom(&input, "L1,L2,L3,L4,L5", &["--corrupt", corrupt]);
        let out = d.path().join(format!("out-{kind:?}"));
        let o = spinecycle(&["run-cycle", "--manifest", p(&manifest), "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(2), "{corrupt}: {}", String::from_utf8_lossy(&o.stderr));
        let report = tables::read_report(&out.join("report.tsv")).unwrap();
        assert_eq!(report.entries.len(), 1, "{corrupt}");
        assert_eq!(report.entries[0].kind, kind);
        assert!(String::from_utf8_lossy(&o.stdout).contains(kind.as_str()));
    }
}

#[test]
fn identify_labels_truth_probabilities_consecutively() {
    let d = tempfile::tempdir().unwrap();
    phantom(d.path(), "T10,T11,T12,L1,L2,L3", &["--noise", "0.2", "--seed", "9"]);
    let out = d.path().join("labels.tsv");
    let o = spinecycle(&["identify", "--probs", p(&d.path().join("truth_probabilities.tsv")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labels: Vec<VertebraLabel> = tables::read_labels(&out).unwrap().into_iter().map(Option::unwrap).collect();
    assert!(labels.windows(2).all(|w| w[0].level() < w[1].level()), "{labels:?}");
    let names: Vec<String> = labels.iter().map(|l| l.name()).collect();
    assert_eq!(names, ["T10", "T11", "T12", "L1", "L2", "L3"]);
}

fn synthetic_scans() -> Vec<ScanAnnotation> {
    (0..6)
        .map(|s| {
            let mut z = 0.0;
            let vertebrae = (1..=24u8)
                .map(|code| {
                    let k = (s * 24 + code as usize) as f64;
                    let label = VertebraLabel::new(code).unwrap();
                    let v = AnnotatedVertebra {
                        label,
                        volume_mm3: 5000.0 + 1500.0 * code as f64 + 400.0 * (k * 1.3).sin(),
                        centroid: [0.3 * k.cos(), 0.0, z],
                    };
                    z -= 15.0 + 0.8 * code as f64 + 1.5 * (k * 0.7).sin();
                    v
                })
                .collect();
            ScanAnnotation {
                scan_id: format!("scan{s}"),
                vertebrae,
            }
        })
        .collect()
}

#[test]
fn fit_stats_writes_a_loadable_stats_file() {
    let d = tempfile::tempdir().unwrap();
    let ann = d.path().join("ann.tsv");
    tables::write_annotations(&ann, &synthetic_scans()).unwrap();
    let out = d.path().join("stats.toml");
    let o = spinecycle(&["fit-stats", "--annotations", p(&ann), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = read_stats(&out).unwrap();
    assert!(stats.fallback_volume_mm3 > 0.0);
}

#[test]
fn usage_errors_exit_one() {
    let o = spinecycle(&["--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(spinecycle(&["--help"]).status.code(), Some(0));
    let o = spinecycle(&["run-cycle", "--manifest", "/nonexistent/m.toml", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = spinecycle(&["phantom", "--labels", "L1,Q9", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
}
