use std::process::Command;
use std::time::Instant;

use parcrf::bench::{bench_inputs, bench_run, median, potentials_for, BenchSpec, Checksum, TimingMode};
use parcrf::model_io::save_model;
use parcrf::Pool;
use parcrf_core::mfvi::ain_decode;
use parcrf_core::{DecoderKind, Sequential};

fn small_spec() -> BenchSpec {
    BenchSpec {
        lengths: vec![12, 40],
        count: 30,
        chunk: 7,
        decoders: vec![DecoderKind::Crf, DecoderKind::Ain1, DecoderKind::Ain2],
        workers: vec![1, 2],
        modes: vec![TimingMode::DecoderOnly, TimingMode::FullModel],
        repetitions: 1,
        labels: 9,
        vocab: 50,
        embedding_dim: 6,
        hidden_dim: 8,
        ..Default::default()
    }
}

#[test]
fn ain_time_is_linear_in_iterations() {
    let spec = BenchSpec {
        labels: 17,
        vocab: 200,
        embedding_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    };
    let model = spec.random_model().unwrap();
    let pots = potentials_for(&model, &bench_inputs(1, 128, 200, 0, 150)).unwrap();
    let ms = [1.0, 3.0, 6.0];
    let times: Vec<f64> = ms
        .iter()
        .map(|&m| {
            let cfg = DecoderKind::Ain1.mfvi(m as usize).unwrap();
            let reps: Vec<f64> = (0..5)
                .map(|_| {
                    let t = Instant::now();
                    for p in &pots {
                        std::hint::black_box(ain_decode(p, cfg, &Sequential));
                    }
                    t.elapsed().as_secs_f64()
                })
                .collect();
            median(&reps)
        })
        .collect();
    let mx = ms.iter().sum::<f64>() / 3.0;
    let my = times.iter().sum::<f64>() / 3.0;
    let sxy: f64 = ms.iter().zip(&times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = ms.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = times.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(sxy > 0.0 && r2 > 0.95, "times {times:?} r2 {r2}");
}

#[test]
fn bench_predictions_match_library_predict() {
    let spec = small_spec();
    let mut model = spec.random_model().unwrap();
    let report = bench_run(&spec, Some(&model), &mut |_| {}).unwrap();
    for kind in [DecoderKind::Crf, DecoderKind::Ain1, DecoderKind::Ain2] {
        model.decoder = kind;
        for &len in &spec.lengths {
            let data: Vec<_> = bench_inputs(spec.seed, len, model.words.len(), 0, spec.count)
                .into_iter()
                .map(|ids| {
                    let mut s = parcrf_core::TaggedSentence::new(vec!["x".into(); len], vec!["O".into(); len]).unwrap();
                    s.token_ids = ids;
                    s
                })
                .collect();
            let preds = parcrf_core::train::predict(&model, &data, &Pool::new(2).unwrap()).unwrap();
            let want = Checksum::of(&preds).value();
            for w in [1, 2] {
                for mode in [TimingMode::DecoderOnly, TimingMode::FullModel] {
                    let w = if kind == DecoderKind::Crf { 1 } else { w };
                    assert_eq!(
                        report.find(kind, len, w, mode).unwrap().checksum,
                        want,
                        "{kind} n={len} workers={w}"
                    );
                }
            }
        }
    }
}

#[test]
fn bench_predictions_match_predict_subcommand() {
    let spec = BenchSpec {
        lengths: vec![15],
        decoders: vec![DecoderKind::Ain1],
        count: 20,
        ..small_spec()
    };
    let mut model = spec.random_model().unwrap();
    model.decoder = DecoderKind::Ain1;
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.bin");
    save_model(&model_path, &model).unwrap();
    let inputs = bench_inputs(spec.seed, 15, model.words.len(), 0, spec.count);
    let mut text = String::new();
    for s in &inputs {
        for &t in s {
            text.push_str(model.words.word(t));
            text.push('\n');
        }
        text.push('\n');
    }
    let input = dir.path().join("in.txt");
    std::fs::write(&input, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_parcrf"))
        .args([
            "predict",
            "--model",
            model_path.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let preds: Vec<Vec<usize>> = out
        .split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|b| {
            b.lines()
                .map(|l| model.labels.id(l.split_whitespace().nth(1).unwrap()).unwrap())
                .collect()
        })
        .collect();
    let report = bench_run(&spec, Some(&model), &mut |_| {}).unwrap();
    let row = report.find(DecoderKind::Ain1, 15, 2, TimingMode::DecoderOnly).unwrap();
    assert_eq!(row.checksum, Checksum::of(&preds).value());
}

#[test]
#[ignore = "needs at least 8 cores"]
fn ain_scales_with_workers_and_outpaces_viterbi_on_long_sentences() {
    let spec = BenchSpec {
        lengths: vec![32, 512],
        count: 2000,
        decoders: vec![DecoderKind::Crf, DecoderKind::Ain1],
        workers: vec![1, 8],
        embedding_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    };
    let r = bench_run(&spec, None, &mut |_| {}).unwrap();
    let at = |n, w| r.find(DecoderKind::Ain1, n, w, TimingMode::DecoderOnly).unwrap();
    assert!(at(512, 8).median_seconds < at(512, 1).median_seconds / 2.0);
    let ratio = |n| at(n, 8).speedup_vs_crf.unwrap();
    assert!(ratio(512) > ratio(32));
}
