use super::*;
use crate::adt::SequenceMeta;
use crate::rng::substream;
use crate::C64;
use rand_distr::{Distribution, StandardNormal};

fn seq(t: usize, speed: f64, seed: u64) -> AdSequence {
    let mut rng = substream(seed, "ds-test", 0);
    let frames = (0..t)
        .map(|_| {
            Frame::from_fn(4, 4, |_, _| {
                C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            })
        })
        .collect();
    AdSequence::new(
        frames,
        SequenceMeta {
            dt: 1e-3,
            fc: 3.5e9,
            velocity: [speed, 0.0],
            city_tag: "t".into(),
        },
    )
}

#[test]
fn velocity_bins() {
    let b = VelocityBins::default();
    assert_eq!(b.len(), 3);
    assert_eq!(b.bin_of(0.0), Some(0));
    assert_eq!(b.bin_of(9.999), Some(0));
    assert_eq!(b.bin_of(10.0), Some(1));
    assert_eq!(b.bin_of(29.9), Some(2));
    assert_eq!(b.bin_of(30.0), None);
    assert_eq!(b.label(2), "[20,30)");
    assert!(VelocityBins::new(vec![0.0, 0.0]).is_err());
}

#[test]
fn sample_and_hold_repeats_last_frame() {
    let s = seq(5, 1.0, 1);
    assert_eq!(sample_and_hold(&s.frames).unwrap(), s.frames[4]);
    assert!(sample_and_hold(&[]).is_err());
}

fn sh_method<'a>() -> Method<'a> {
    Method {
        name: "S&H".into(),
        mode: None,
        fraction: None,
        predict: Box::new(|s: &PredictionSample| Ok(crate::model::patchify(&[sample_and_hold(&s.past)?], [1, 1])?.1)),
    }
}

#[test]
fn static_channel_hits_the_floor() {
    let mut s = seq(11, 0.0, 2);
    let first = s.frames[0].clone();
    s.frames.iter_mut().for_each(|f| *f = first.clone());
    let samples = prediction_samples(&[s], 10, [1, 1]).unwrap();
    let r = evaluate(&[sh_method()], &samples, &VelocityBins::default(), -100.0, "h").unwrap();
    assert_eq!(r.get("S&H", "[0,10)").unwrap().nmse_db, Some(-100.0));
    assert_eq!(r.get("S&H", "[10,20)").unwrap().nmse_db, None);
    assert_eq!(r.get("S&H", "[10,20)").unwrap().samples, 0);
}

#[test]
fn oracle_hits_the_floor_and_metric_is_scale_invariant() {
    let seqs: Vec<_> = (0..6).map(|i| seq(11, 5.0 * i as f64, 10 + i)).collect();
    let samples = prediction_samples(&seqs, 10, [1, 1]).unwrap();
    let oracle = Method {
        name: "oracle".into(),
        mode: None,
        fraction: None,
        predict: Box::new(|s: &PredictionSample| Ok(s.example.target.clone())),
    };
    let bins = VelocityBins::default();
    let r = evaluate(&[oracle, sh_method()], &samples, &bins, -100.0, "h").unwrap();
    for b in 0..3 {
        assert_eq!(r.get("oracle", &bins.label(b)).unwrap().nmse_db, Some(-100.0));
    }
    let doubled: Vec<_> = seqs
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.frames.iter_mut().for_each(|f| f.scale(2.0));
            s
        })
        .collect();
    let samples2 = prediction_samples(&doubled, 10, [1, 1]).unwrap();
    let r2 = evaluate(&[sh_method()], &samples2, &bins, -100.0, "h").unwrap();
    let a = r.get("S&H", "all").unwrap().nmse_db.unwrap();
    let b = r2.get("S&H", "all").unwrap().nmse_db.unwrap();
    assert!((a - b).abs() < 1e-9);

    // permutation invariance
    let mut rev = samples.clone();
    rev.reverse();
    let r3 = evaluate(&[sh_method()], &rev, &bins, -100.0, "h").unwrap();
    assert!((r3.get("S&H", "all").unwrap().nmse_db.unwrap() - a).abs() < 1e-9);
}

#[test]
fn report_files_carry_config_hash() {
    let samples = prediction_samples(&[seq(11, 3.0, 3)], 10, [1, 1]).unwrap();
    let r = evaluate(&[sh_method()], &samples, &VelocityBins::default(), -100.0, "deadbeef").unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(&dir.path().join("report")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.contains("config_hash=deadbeef"));
    let json: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json, r);
}

#[test]
fn short_sequences_rejected() {
    assert!(prediction_samples(&[seq(10, 1.0, 4)], 10, [1, 1]).is_err());
}

#[test]
fn nmse_db_clamps() {
    assert_eq!(nmse_db(0.0, 1.0, -100.0), -100.0);
    assert_eq!(nmse_db(1e-20, 1.0, -100.0), -100.0);
    assert!((nmse_db(1.0, 10.0, -100.0) + 10.0).abs() < 1e-12);
}
