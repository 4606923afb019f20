//! Training loop, schedule, ablation runner and command back ends.

mod ablation;
mod config;
pub mod gradcheck;
mod optim;
mod run;
mod viz;

pub use ablation::{ablation_run, param_digest, AblationReport, AblationRow};
pub use config::{Precision, RunConfig, CONFIG_ECHO};
pub use optim::{lr_at, sgd_step, LRSchedule, Sgd};
pub use run::{
    embed_all, heldout_metrics, init_model, load_checkpoint, load_training_data, train, train_on,
    write_checkpoint, EpochMetrics, HeldOutMetrics, TrainOutcome, METRICS_LOG,
};
pub use viz::{
    fusion_maps, normalize_channel, pgm_bytes, pgm_name, read_pgm, top_channels,
    visualize_features, VizOutput, DEFAULT_TOP_K, MAP_NAMES,
};

use crate::data::Report;
use crate::error::Result;
use crate::model::TinyNet;
use crate::param::Parameterized;
use crate::tensor::Dims4;

/// Parameter and operation counts of the configured backbone on a batch of
/// `batch` images, with one row per MSConv block.
pub fn flops_report(cfg: &RunConfig, batch: usize) -> Result<Report> {
    let net = TinyNet::<f64>::init(&cfg.model_config(), cfg.seed)?;
    let input = Dims4::new(batch, cfg.image_size, cfg.image_size, cfg.channels);
    let stem_out = cfg.image_size.div_ceil(cfg.stem_stride);
    let mut d = Dims4::new(batch, stem_out, stem_out, cfg.stem_channels);
    let mut r = Report::new(format!(
        "cost of {} on {batch}x{}x{}x{}",
        cfg.kind, cfg.image_size, cfg.image_size, cfg.channels
    ));
    r.header = ["block", "input", "params", "conv_macs", "other_ops", "flops"]
        .map(String::from)
        .to_vec();
    for (i, u) in net.units.iter().enumerate() {
        let c = crate::block::count_params_flops(&u.block, d);
        r.rows.push(vec![
            format!("unit{i}"),
            d.to_string(),
            c.params.to_string(),
            c.conv_macs.to_string(),
            (c.flops() - c.conv_macs).to_string(),
            c.flops().to_string(),
        ]);
        let s = u.block.k3.stride();
        d = Dims4::new(d.n, d.h.div_ceil(s), d.w.div_ceil(s), u.block.channels());
    }
    let total = net.cost(input);
    r.value("backbone_params", net.param_count());
    r.value("backbone_flops", total.flops());
    r.value("conv_macs", total.conv_macs);
    r.value("block_params", net.units.iter().map(|u| u.block.param_count()).sum::<usize>());
    Ok(r)
}
