//! A short training run of a small desk-scale model on synthetic mixtures.
//! Writes `train_log.csv` and `best.ckpt` into ./train_desk_out.

use taylor_unfold::error::Result;
use taylor_unfold::model::{TaylorConfig, TaylorModel};
use taylor_unfold::train::{train, TrainConfig};

fn main() -> Result<()> {
    let cfg = TrainConfig {
        model: TaylorConfig {
            q: 1,
            channels: 8,
            unet_depths: vec![1, 0],
            stcm_groups: 1,
            ..TaylorConfig::desk()
        },
        lr: 1e-3,
        epochs: 3,
        batch: 2,
        train_utts: 4,
        val_utts: 2,
        length_s: 0.5,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut model = TaylorModel::new(cfg.model.clone(), cfg.seed)?;
    println!("model: Q={} with {} parameters", cfg.model.q, model.count_params());

    let out = std::path::Path::new("train_desk_out");
    let report = train(&mut model, &cfg, out)?;

    println!(
        "{} steps over {} epochs; train loss {:.4e} -> {:.4e}",
        report.steps, report.epochs_run, report.first_step_loss, report.final_train_loss
    );
    println!("best validation loss {:.4e}", report.best_val_loss);
    println!("checkpoint: {}", report.checkpoint.display());
    Ok(())
}
