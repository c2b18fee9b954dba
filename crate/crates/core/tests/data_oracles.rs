use std::collections::{BTreeMap, BTreeSet};

use advts::data::{
    build_rul_frame, label_rul, make_windows, read_backblaze_csv, synth_drive_log, write_backblaze_csv,
    DegradationParams, DriveLog, RulFrameOptions, WindowMode,
};
use advts::rng::Streams;
use chrono::NaiveDate;
use rand::Rng;

fn fleet(seed: u64) -> DriveLog {
    let p = DegradationParams {
        n_serials: 100,
        n_healthy: 10,
        ..DegradationParams::default()
    };
    synth_drive_log(&p, seed).unwrap()
}

/// Counts days one at a time from each row to its serial's failure date.
fn oracle(log: &DriveLog, horizon: u32) -> BTreeSet<(String, NaiveDate, u32)> {
    let failed: BTreeMap<&str, NaiveDate> = log
        .rows
        .iter()
        .filter(|r| r.failure)
        .map(|r| (r.serial.as_str(), r.date))
        .collect();
    let mut out = BTreeSet::new();
    for r in &log.rows {
        let Some(&fail) = failed.get(r.serial.as_str()) else { continue };
        let mut d = r.date;
        let mut days = 0u32;
        while d < fail {
            d = d.succ_opt().unwrap();
            days += 1;
        }
        if (1..=horizon).contains(&days) {
            out.insert((r.serial.clone(), r.date, days));
        }
    }
    out
}

fn labels(log: &DriveLog, horizon: u32) -> BTreeSet<(String, NaiveDate, u32)> {
    label_rul(log, horizon)
        .unwrap()
        .into_iter()
        .map(|l| (l.serial, l.date, l.rul))
        .collect()
}

#[test]
fn rul_labels_match_date_walk_oracle() {
    let log = fleet(3);
    assert_eq!(log.serials().len(), 110);
    for h in [1, 5, 15, 45] {
        let want = oracle(&log, h);
        assert_eq!(labels(&log, h), want, "horizon {h}");
        assert_eq!(want.len(), 100 * h as usize);
    }
}

#[test]
fn rul_labels_survive_missing_days() {
    let mut log = fleet(4);
    let mut rng = Streams::new(9).stream("drop");
    log.rows.retain(|r| r.failure || rng.random::<f64>() > 0.15);
    for h in [5, 25] {
        assert_eq!(labels(&log, h), oracle(&log, h), "horizon {h}");
    }
}

#[test]
fn rul_frame_targets_follow_labels() {
    let log = fleet(5);
    let opts = RulFrameOptions {
        horizon: 10,
        ..RulFrameOptions::default()
    };
    let frame = build_rul_frame(&log, &opts).unwrap();
    assert_eq!(frame.segments().len(), 100);
    let want = oracle(&log, 10);
    let target = frame.column_values(frame.target_index()).unwrap();
    let mut seen = BTreeSet::new();
    for seg in frame.segments() {
        let rows = seg.rows.clone();
        for i in rows.clone() {
            seen.insert((seg.name.clone(), frame.timestamps()[i].date(), target[i] as u32));
        }
        let rul: Vec<f64> = target[rows].to_vec();
        assert!(rul.windows(2).all(|w| w[0] > w[1]), "RUL must count down within {}", seg.name);
    }
    assert_eq!(seen, want);
    for c in 0..frame.n_columns() {
        if c != frame.target_index() {
            let v = frame.column_values(c).unwrap();
            assert!(v.iter().all(|x| (0.0..=255.0).contains(x)));
        }
    }
}

#[test]
fn sequence_windows_stay_inside_one_drive() {
    let frame = build_rul_frame(&fleet(6), &RulFrameOptions::default()).unwrap();
    let w = make_windows::<f64>(&frame, 3, WindowMode::Sequence).unwrap();
    assert_eq!(w.len(), 100 * 3);
    for s in w.stamps() {
        assert_eq!((s.input_end - s.input_start).num_days(), 2);
    }
    // Five labeled days per drive count down 5..1; three-day windows give 5,4,3 / 4,3,2 / 3,2,1.
    let t = w.targets().data();
    assert_eq!(&t[..9], &[5.0, 4.0, 3.0, 4.0, 3.0, 2.0, 3.0, 2.0, 1.0]);
}

#[test]
fn backblaze_csv_round_trips() {
    let log = fleet(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("2016-01-01.csv");
    write_backblaze_csv(&log, &path).unwrap();
    let back = read_backblaze_csv(&path, None).unwrap();
    assert_eq!(back, log);
}
