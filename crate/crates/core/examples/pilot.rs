//! Pilot sweep on the reference configuration.
//!
//! Prints, per seed, the untuned baseline, SIT/AIT metrics, the gradient
//! ledger statistics and the image-only / text-only ablation. The pass
//! thresholds used by the acceptance suite were read off this output.
//!
//! ```text
//! cargo run --release -p oll-core --example pilot
//! ```
//!
//! Optional environment overrides for exploration: `PILOT_ETA`,
//! `PILOT_SIGMA`, `PILOT_ALPHA`, `PILOT_SEEDS` (count), `PILOT_PET`
//! (`low_rank` | `adapter`).

use oll_core::expcli::{build_world, run_single, ExperimentConfig};
use oll_core::model::PetKind;
use oll_core::objective::Strategy;
use oll_core::streams::ClassRole;
use oll_core::trainer::evaluate_classes;

fn env_f64(key: &str) -> Option<f64> {
    std::env::var(key).ok().and_then(|v| v.parse().ok())
}

fn main() -> oll_core::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(eta) = env_f64("PILOT_ETA") {
        cfg.dataset.generate.eta = eta;
    }
    if let Some(s) = env_f64("PILOT_SIGMA") {
        cfg.dataset.generate.cluster_sigma = s;
    }
    if let Some(a) = env_f64("PILOT_ALPHA") {
        cfg.model.lora_alpha = a;
    }
    if std::env::var("PILOT_PET").as_deref() == Ok("adapter") {
        cfg.model.pet_kind = PetKind::Adapter;
    }
    let seeds = env_f64("PILOT_SEEDS").map_or(5, |n| n as u64);

    let mut gaps = Vec::new();
    println!(
        "seed  base  | SIT last auc bias | AIT last auc bias | ledger sit_in_band ait_blurry_neg>pos | zs img/txt  auc img/txt"
    );
    for seed in 1..=seeds {
        let world = build_world(&cfg, seed)?;
        let trainable = world.dataset.trainable_classes();
        let base = evaluate_classes(&world.model, &world.dataset, &trainable)?.accuracy;

        let (_, sit) = run_single(&cfg, Strategy::Sit, seed)?;
        let (_, ait) = run_single(&cfg, Strategy::Ait, seed)?;
        gaps.push(sit.a_last - ait.a_last);

        let sit_band = {
            let totals = sit.ledger.totals();
            let ok = totals
                .iter()
                .filter(|(_, t)| {
                    let r = t.positive / t.negative();
                    (0.1..=10.0).contains(&r)
                })
                .count();
            ok as f64 / totals.len() as f64
        };
        let ait_blurry = {
            let totals = ait.ledger.totals();
            let blurry: Vec<_> = totals
                .iter()
                .filter(|(c, _)| world.schedule.assignment(*c).map(|a| a.role) == Some(ClassRole::Blurry))
                .collect();
            let n = blurry.iter().filter(|(_, t)| t.negative() > t.positive).count();
            n as f64 / blurry.len() as f64
        };

        let mut img_cfg = cfg.clone();
        img_cfg.model.tune_text = false;
        let mut txt_cfg = cfg.clone();
        txt_cfg.model.tune_image = false;
        let (_, img) = run_single(&img_cfg, Strategy::Sit, seed)?;
        let (_, txt) = run_single(&txt_cfg, Strategy::Sit, seed)?;

        println!(
            "{seed:>4} {base:.3} | {:.3} {:.3} {:.3} | {:.3} {:.3} {:.3} | {:.2} {:.2} | {:.3}->{:.3}/{:.3}  {:.3}/{:.3}",
            sit.a_last,
            sit.a_auc,
            sit.new_class_bias,
            ait.a_last,
            ait.a_auc,
            ait.new_class_bias,
            sit_band,
            ait_blurry,
            img.zero_shot_before.unwrap_or(f64::NAN),
            img.zero_shot_after.unwrap_or(f64::NAN),
            txt.zero_shot_after.unwrap_or(f64::NAN),
            img.a_auc,
            txt.a_auc,
        );
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("mean A_last gap (SIT - AIT): {mean:.4}  per seed: {gaps:.3?}");
    Ok(())
}
