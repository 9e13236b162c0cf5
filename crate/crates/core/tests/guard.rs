use std::time::Instant;

use essdispatch::assets::GridCase;
use essdispatch::env::synth_dataset;
use essdispatch::guard::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn trained_guard_quality() {
    let case = GridCase::ieee33();
    let prof = synth_dataset(&case, 3, 60).unwrap();
    let risk = HighRiskSet::ieee33();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t0 = Instant::now();
    let train = random_samples(&case, &prof, &risk, 20_000, 0.3, &mut rng).unwrap();
    let held = random_samples(&case, &prof, &risk, 2_000, 0.3, &mut rng).unwrap();
    println!("labeling {:?}", t0.elapsed());
    let cfg = GuardConfig::default();
    let model = GuardModel::new(&case, risk, &cfg, &mut rng).unwrap();
    let t0 = Instant::now();
    let (m, trace) = train_guard(model, train, cfg, 7).unwrap();
    println!("training {:?} epochs {} last {:?}", t0.elapsed(), trace.len(), trace.last());
    assert!(m.is_ready());
    let rows = evaluate_guard(&m, &held).unwrap();
    let rmse = (rows.iter().map(|r| r.rmse * r.rmse).sum::<f64>() / rows.len() as f64).sqrt();
    let max = rows.iter().map(|r| r.max_abs_err).fold(0.0, f64::max);
    let mut errs: Vec<f64> = rows.iter().map(|r| r.max_abs_err).collect();
    errs.sort_by(f64::total_cmp);
    println!("held-out rmse {rmse:e} max {max:e} p99 {:e}", errs[errs.len() * 99 / 100]);
    assert!(rmse < 1e-2);
}
