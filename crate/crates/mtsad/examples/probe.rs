// Scratch probe for end-to-end timing and detection quality.

use mtsad::correlation::{build_samples, compute_mcm, McmConfig, SeasonalConfig};
use mtsad::evaluation::{nab_score, point_metrics, root_cause_recall, NabProfile};
use mtsad::nn::model::NetworkConfig;
use mtsad::nn::train::train;
use mtsad::rootcause::{attribute_events, RootCauseMethod};
use mtsad::scoring::{fit_thresholds, score_series, validation_split, ScoreMethod};
use mtsad::series::HolidayCalendar;
use mtsad::synth::{gen_seasonal_mts, inject_anomalies, InjectionSpec, SeasonalityMode};

fn main() {
    let t0 = std::time::Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4);
    let t_len: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20_160);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);

    let (mts, _cal) = gen_seasonal_mts(10, t_len, SeasonalityMode::Random, seed).unwrap();
    let (train_mts, test_mts, _, _) = mts.split(&[], 0.5).unwrap();
    let (test_mts, test_labels) =
        inject_anomalies(&test_mts, &InjectionSpec::new(10, seed + 1000)).unwrap();
    println!("[{:.1?}] data ready: train T={}, test T={}", t0.elapsed(), train_mts.t_len(), test_mts.t_len());

    let mcm_config = McmConfig::default();
    let train_mcm = compute_mcm(&train_mts, &mcm_config).unwrap();
    let test_mcm = compute_mcm(&test_mts, &mcm_config).unwrap();
    let seasonal = SeasonalConfig::default();
    let train_samples = build_samples(
        &train_mcm,
        4,
        &seasonal,
        &HolidayCalendar::none(train_mts.t_len()),
    )
    .unwrap();
    let test_samples = build_samples(
        &test_mcm,
        4,
        &seasonal,
        &HolidayCalendar::none(test_mts.t_len()),
    )
    .unwrap();
    println!(
        "[{:.1?}] samples: train {}, test {}",
        t0.elapsed(),
        train_samples.len(),
        test_samples.len()
    );

    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let config = NetworkConfig {
        epochs,
        learning_rate: lr,
        ..NetworkConfig::compact()
    };
    let model = train(&train_samples, &config, seed).unwrap();
    for e in &model.history {
        println!(
            "epoch {:>3}: ctx {:>8.4}  lat {:>8.4}  adv {:>9.5}  wass {:>9.5}  gp {:>8.4}  ({:.1}s)",
            e.epoch,
            e.contextual,
            e.latent,
            e.adversarial,
            e.wasserstein,
            e.penalty,
            model.wall_secs[e.epoch]
        );
    }
    println!("[{:.1?}] training done", t0.elapsed());

    let train_residuals = model.reconstruct(&train_samples).unwrap();
    let test_residuals = model.reconstruct(&test_samples).unwrap();
    println!("[{:.1?}] residuals done", t0.elapsed());

    let (fit_part, validation) = validation_split(
        &train_residuals,
        &[],
        0.2,
        mcm_config.step_size,
        train_mts.t_len(),
    );
    for method in [
        ScoreMethod::ContextH,
        ScoreMethod::ContextB,
        ScoreMethod::LatentB,
        ScoreMethod::Combined,
    ] {
        let (thresholds, _warn) =
            fit_thresholds(&fit_part, &validation, &[0.5, 1.0, 2.0, 4.0], method).unwrap();
        let series = score_series(&test_residuals, method, &thresholds);
        let flags = series.expand_to_points(mcm_config.step_size, test_mts.t_len());
        let mut report = point_metrics(&flags, &test_labels).unwrap();
        report.nab_score = Some(nab_score(&flags, &test_labels, &NabProfile::default()));
        let events = attribute_events(
            &test_residuals,
            &series,
            RootCauseMethod::AbsoluteError,
            thresholds.theta_b,
        )
        .unwrap();
        let rc = root_cause_recall(&events, &test_labels, mcm_config.step_size);
        println!(
            "{:>9}: P {:.3} R {:.3} F1 {:.3} FPR {:.5} NAB {:.3} rc_recall {:?} events {} (th: b={:.4} h={:.4} flag={:.3})",
            method.name(),
            report.precision,
            report.recall,
            report.f1,
            report.fpr,
            report.nab_score.unwrap(),
            rc,
            events.len(),
            thresholds.theta_b,
            thresholds.theta_h,
            thresholds.flag_threshold,
        );
    }
    println!("[{:.1?}] total", t0.elapsed());
}
