//! Hot-path benchmarks: scene parsing, a full engine run under both
//! policy families, the dephasing channel, and a Monte Carlo batch.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

use photonbox::collapse::block_dephase;
use photonbox::experiments::{build, double_slit_screen, Preset, PresetParams};
use photonbox::montecarlo::{run_trials, screen_histogram, RunConfig};
use photonbox::scenedsl::{parse, serialize};
use photonbox::timeline::{run, schedule};
use photonbox::{CollapsePolicy, Mode, ModeBasis, Partition, Polarization, PureState};

fn interferometer() -> photonbox::SceneDoc {
    build(
        Preset::Fig4,
        &PresetParams {
            phi: std::f64::consts::FRAC_PI_3,
            ..PresetParams::default()
        },
    )
    .expect("preset builds")
}

fn bench_parse(c: &mut Criterion) {
    let text = serialize(&interferometer());
    c.bench_function("parse_interferometer_scene", |b| {
        b.iter(|| parse(black_box(&text)).expect("canonical text parses"))
    });
}

fn bench_engine(c: &mut Criterion) {
    let scene = interferometer();
    for policy in [CollapsePolicy::PoV1, CollapsePolicy::PoV2Strong] {
        c.bench_function(&format!("engine_run_{}", policy.label()), |b| {
            b.iter(|| {
                let timeline = schedule(black_box(&scene)).unwrap();
                run(&timeline, &scene, policy).unwrap()
            })
        });
    }
}

fn bench_dephase(c: &mut Criterion) {
    let modes: Vec<Mode> = (0..6)
        .map(|i| Mode::new(format!("r{i}"), "p", Polarization::V))
        .collect();
    let basis = ModeBasis::new(modes).unwrap();
    let amp = Complex64::new((1.0f64 / 6.0).sqrt(), 0.0);
    let rho = PureState::new(Arc::clone(&basis), vec![amp; 6])
        .unwrap()
        .to_density();
    let partition = Partition::new(vec![
        vec!["r0".into(), "r1".into(), "r2".into()],
        vec!["r3".into(), "r4".into(), "r5".into()],
    ])
    .unwrap();
    c.bench_function("block_dephase_six_modes", |b| {
        b.iter(|| block_dephase(black_box(&rho), black_box(&partition)).unwrap())
    });
}

fn bench_trials(c: &mut Criterion) {
    let scene = interferometer();
    let cfg = RunConfig {
        trials: 10_000,
        seed: 7,
        policy: CollapsePolicy::PoV1,
    };
    c.bench_function("ten_thousand_trials", |b| {
        b.iter(|| run_trials(black_box(&scene), black_box(&cfg)).unwrap())
    });

    let screen = build(Preset::Fig3, &PresetParams::default()).unwrap();
    let params = double_slit_screen();
    c.bench_function("screen_histogram_ten_thousand", |b| {
        b.iter(|| screen_histogram(black_box(&screen), &params, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_parse, bench_engine, bench_dephase, bench_trials);
criterion_main!(benches);
