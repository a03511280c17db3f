#![allow(dead_code)]

use sparc_lab::RunConfig;

/// Narrow networks and short budgets so a full run takes a second or two.
pub const TINY: &[&str] = &[
    "net.width=16",
    "net.latent=8",
    "net.history_embed=8",
    "net.conv_channels=8",
    "hyper.history_len=8",
    "hyper.batch_size=8",
    "hyper.quantiles=8",
    "run.total_updates=60",
    "run.warmup_steps=40",
    "run.eval_every=30",
    "eval.grid_resolution=3",
    "eval.seeds=[0]",
];

pub fn tiny(extra: &[&str]) -> RunConfig {
    let all: Vec<String> = TINY.iter().chain(extra).map(|s| s.to_string()).collect();
    RunConfig::default().with_overrides(&all).unwrap()
}
