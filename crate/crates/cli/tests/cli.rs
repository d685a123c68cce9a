use std::path::Path;
use std::process::{Command, Output};

use lanevp::lane_ingest::write_culane_lines;
use lanevp::synth::{render_scene, SceneSpec};

fn lanevp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanevp")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ten 3-lane frames, one 1-lane frame and one empty frame.
fn small_dataset(root: &Path) {
    let mut list = String::new();
    for i in 0..10 {
        let mut spec = SceneSpec::culane_like(vec![-1.75, 1.75, 5.25]);
        spec.name = format!("clip/{i:05}.jpg");
        spec.yaw = (i as f64 - 5.0) * 0.004;
        let t = render_scene(&spec).unwrap();
        let path = root.join(format!("clip/{i:05}.lines.txt"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, write_culane_lines(&t.lanes)).unwrap();
        list += &format!("/clip/{i:05}.jpg\n");
    }
    std::fs::write(root.join("clip/one.lines.txt"), "100 580 200 400 300 300\n").unwrap();
    std::fs::write(root.join("clip/none.lines.txt"), "").unwrap();
    list += "/clip/one.jpg 0 0 0 0\n/clip/none.jpg\n";
    std::fs::write(root.join("list.txt"), list).unwrap();
}

#[test]
fn help_lists_every_config_key() {
    let out = lanevp(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for key in CONFIG_KEYS {
        assert!(help.contains(&format!("--{key}")), "missing --{key}");
        assert!(help.contains(&format!("[key: {key}]")), "missing key {key}");
    }
}

const CONFIG_KEYS: [&str; 33] = [
    "root", "manifest", "out", "annotation", "mask-root", "mask-ext", "row-interval", "min-y-extent", "method",
    "close-band", "aggregation", "min-n-int", "max-sigma-y", "max-sigma-x", "sigma-mode", "sigma", "sigma-low",
    "sigma-high", "amplitude", "snap-center", "width", "height", "work-width", "work-height", "h-edge", "flip-prob",
    "shift-prob", "epochs", "seed", "workers", "thresholds", "conf-thresholds", "pgm",
];

#[test]
fn every_key_is_accepted_in_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "root = \".\"\nmanifest = \"m\"\nout = \"o\"\nannotation = \"mask\"\nmask-root = \"r\"\nmask-ext = \"png\"\n\
         row-interval = 5\nmin-y-extent = 50\nmethod = \"1d-close\"\nclose-band = 100.0\naggregation = \"mean\"\n\
         min-n-int = 3\nmax-sigma-y = 10.0\nmax-sigma-x = 20.0\nsigma-mode = \"dynamic\"\nsigma = 16.0\n\
         sigma-low = 6.0\nsigma-high = 16.0\namplitude = \"normalized\"\nsnap-center = false\nwidth = 1640\n\
         height = 590\nwork-width = 820\nwork-height = 295\nh-edge = 0.05\nflip-prob = 0.5\nshift-prob = 0.5\n\
         epochs = 1\nseed = 3\nworkers = 2\nthresholds = [0.01]\nconf-thresholds = [0.0]\npgm = false\n",
    )
    .unwrap();
    // parses, then fails on the missing manifest file: an input error
    let out = lanevp(&["label", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "methd = \"1d\"\n").unwrap();
    assert_eq!(lanevp(&["label", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(lanevp(&["label", "--method", "4d", "--manifest", "x"]).status.code(), Some(1));
    assert_eq!(lanevp(&["nonsense"]).status.code(), Some(1));
    assert_eq!(lanevp(&["label"]).status.code(), Some(1));
    assert_eq!(lanevp(&["label", "--h-edge", "0.7", "--manifest", "x"]).status.code(), Some(1));
}

#[test]
fn label_synthetic_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    small_dataset(&root);
    let out = dir.path().join("out");
    let o = lanevp(&["label", "--root", s(&root), "--manifest", s(&root.join("list.txt")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("frames 12  valid 10  filtered-in 10  unreadable 0"), "{summary}");
    let labels = std::fs::read_to_string(out.join("labels.tsv")).unwrap();
    let rows: Vec<&str> = labels.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("/clip/00000.jpg\t3d\t"));
    assert!(rows[10].starts_with("/clip/one.jpg\t3d\tNaN\tNaN\t") && rows[10].ends_with("\tfalse"));
    assert!(rows[11].ends_with("\t0\tfalse"));

    let o = lanevp(&["stats", "--root", s(&root), "--manifest", s(&root.join("list.txt")), "--out", s(&out)]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["frames_total"], 12);
    assert_eq!(stats["n_int_hist"]["counts"][3], 10);
    assert_eq!(stats["lane_count_hist"]["counts"][0], 1);
    assert_eq!(stats["lane_count_hist"]["counts"][1], 1);
    assert_eq!(stats["frames_ge2_lanes"]["count"], 10);
}

#[test]
fn missing_annotation_is_logged_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("list.txt"), "a.jpg\n").unwrap();
    let o = lanevp(&["label", "--root", s(root), "--manifest", s(&root.join("list.txt")), "--out", s(&root.join("o"))]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("unreadable 1"));
}

#[test]
fn eval_identity_none_rows_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    small_dataset(&root);
    let out = dir.path().join("out");
    let list = root.join("list.txt");
    let base = ["--root", s(&root), "--manifest", s(&list), "--out", s(&out)];
    assert!(lanevp(&[&["label"][..], &base].concat()).status.success());

    // working resolution equals full resolution, so labels are predictions
    let labels = std::fs::read_to_string(out.join("labels.tsv")).unwrap();
    let mut perfect = String::new();
    let mut with_none = String::new();
    for (i, row) in labels.lines().skip(1).filter(|r| r.ends_with("true")).enumerate() {
        let f: Vec<&str> = row.split('\t').collect();
        let conf = if i < 4 { 0.995 } else { 0.5 };
        perfect += &format!("{} {} {} {conf}\n", f[0], f[2], f[3]);
        with_none += &if i % 3 == 0 { format!("{} NONE\n", f[0]) } else { format!("{} {} {} {conf}\n", f[0], f[2], f[3]) };
    }
    perfect += "/not/labeled.jpg 1 1 0.5\n";
    let pred = dir.path().join("p.txt");
    std::fs::write(&pred, &perfect).unwrap();
    let full = ["--work-width", "1640", "--work-height", "590", "--conf-thresholds", "0.0,0.99"];
    let o = lanevp(&[&["eval", "--predictions", s(&pred)][..], &base, &full].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("report.txt")).unwrap()).unwrap();
    assert!(report["overall"]["mae_x"].as_float().unwrap() < 1e-9);
    assert!(report["overall"]["mean_norm_dist"].as_float().unwrap() < 1e-9);
    assert_eq!(report["overall"]["n_total"].as_integer(), Some(10));
    assert_eq!(report["n_unknown"].as_integer(), Some(1));
    assert_eq!(report["unknown_frames"][0].as_str(), Some("/not/labeled.jpg"));
    let sweep = report["sweep"].as_array().unwrap();
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[0]["n_accepted"].as_integer(), Some(10));
    assert_eq!(sweep[1]["n_accepted"].as_integer(), Some(4));

    std::fs::write(&pred, &with_none).unwrap();
    assert!(lanevp(&[&["eval", "--predictions", s(&pred)][..], &base, &full].concat()).status.success());
    let report: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("report.txt")).unwrap()).unwrap();
    assert_eq!(report["overall"]["n_failed"].as_integer(), Some(4));
    let fracs = report["overall"]["frac_under"].as_array().unwrap();
    assert_eq!(fracs[0]["fraction"].as_float(), Some(0.6));
    let curve = std::fs::read_to_string(out.join("curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 6);
}

#[test]
fn heatmaps_decode_and_peak_at_label() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    small_dataset(&root);
    let out = dir.path().join("out");
    let list = root.join("list.txt");
    let base = ["--root", s(&root), "--manifest", s(&list), "--out", s(&out)];
    assert!(lanevp(&[&["label"][..], &base].concat()).status.success());
    assert!(lanevp(&[&["heatmap", "--pgm", "true"][..], &base].concat()).status.success());
    let index = std::fs::read_to_string(out.join("heatmaps/index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 11);
    let row: Vec<&str> = index.lines().nth(1).unwrap().split('\t').collect();
    let h = lanevp::heatmap::read_heatmap(&out.join("heatmaps").join(row[1])).unwrap();
    assert_eq!((h.geometry.width, h.geometry.height), (820, 295));
    let p = lanevp::heatmap::extract_peak(&h);
    assert_eq!((f64::from(p.x), f64::from(p.y)), (row[4].parse().unwrap(), row[5].parse().unwrap()));
    assert_eq!(p.confidence, 1.0);
    assert!(out.join("heatmaps/clip__00000.jpg.pgm").exists());
}

#[test]
fn augment_rows_per_epoch_and_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    small_dataset(&root);
    let out = dir.path().join("out");
    let list = root.join("list.txt");
    let base = ["--root", s(&root), "--manifest", s(&list), "--out", s(&out)];
    assert!(lanevp(&[&["label"][..], &base].concat()).status.success());
    assert!(lanevp(&[&["augment", "--epochs", "3", "--shift-prob", "1"][..], &base].concat()).status.success());
    let aug = std::fs::read_to_string(out.join("augment.tsv")).unwrap();
    assert_eq!(aug.lines().count(), 1 + 30);
    for row in aug.lines().skip(1) {
        let vy: f64 = row.split('\t').nth(5).unwrap().parse().unwrap();
        assert!((0.05 * 590.0 - 1e-9..=0.95 * 590.0 + 1e-9).contains(&vy));
    }

    let pred = dir.path().join("p.txt");
    let rows: String = (0..40).map(|i| format!("f{i} {} {} 0.9\n", 20 * i, 100.0 + 0.5 * f64::from(i))).collect();
    std::fs::write(&pred, rows + "g NONE\n").unwrap();
    let o = lanevp(&[&["horizon", "--predictions", s(&pred)][..], &base].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("horizon.txt")).unwrap()).unwrap();
    assert_eq!(h["n_frames"].as_integer(), Some(40));
    assert!((h["slope"].as_float().unwrap() - 0.025).abs() < 1e-3);

    std::fs::write(&pred, "g NONE\n").unwrap();
    assert_eq!(lanevp(&[&["horizon", "--predictions", s(&pred)][..], &base].concat()).status.code(), Some(2));
}

#[test]
fn synth_output_feeds_label() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(lanevp(&["synth", "--out", s(out), "--seed", "2"]).status.success());
    let synth = out.join("synth");
    let o = lanevp(&["label", "--root", s(&synth), "--manifest", s(&synth.join("list.txt")), "--out", s(out), "--method", "1d"]);
    assert!(o.status.success());
    let truth = std::fs::read_to_string(synth.join("truth.tsv")).unwrap();
    let labels = std::fs::read_to_string(out.join("labels.tsv")).unwrap();
    for (t, l) in truth.lines().skip(1).zip(labels.lines().skip(1)) {
        let t: Vec<&str> = t.split('\t').collect();
        let l: Vec<&str> = l.split('\t').collect();
        assert_eq!(t[0], l[0]);
        if t[4] == "0" && t[5] == "0" {
            let dx = t[1].parse::<f64>().unwrap() - l[2].parse::<f64>().unwrap();
            let dy = t[2].parse::<f64>().unwrap() - l[3].parse::<f64>().unwrap();
            assert!(dx.hypot(dy) < 1e-3, "{}", t[0]);
        }
    }
}

#[test]
fn mask_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (w, h) = (64u32, 120u32);
    let mut img = image::GrayImage::new(w, h);
    for y in 20..120 {
        for (id, x0) in [(1u8, 30i64 - (y as i64 - 20) / 4), (2, 34 + (y as i64 - 20) / 4)] {
            for x in x0..x0 + 3 {
                if (0..w as i64).contains(&x) {
                    img.put_pixel(x as u32, y, image::Luma([id]));
                }
            }
        }
    }
    img.save(root.join("f.png")).unwrap();
    std::fs::write(root.join("list.txt"), "f.jpg\n").unwrap();
    let o = lanevp(&[
        "label", "--annotation", "mask", "--root", s(root), "--manifest", s(&root.join("list.txt")), "--out", s(root),
        "--width", "64", "--height", "120", "--method", "1d",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labels = std::fs::read_to_string(root.join("labels.tsv")).unwrap();
    let f: Vec<&str> = labels.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(f[6], "1");
    assert_eq!(f[7], "true");
}
