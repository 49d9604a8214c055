//! The training loop: schedule-driven crops, Charbonnier loss, AdamW with a
//! cosine learning rate, periodic checkpoints and a CSV loss trace.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{sample_batch, BlurSpec, Pair};
use super::loss::charbonnier_loss;
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::lakdnet::checkpoint::write_config;
use crate::lakdnet::{Checkpoint, LaKDNet, NetworkConfig};

/// From `iteration` on, train on `patch_size` crops in batches of `batch_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePhase {
    pub iteration: usize,
    pub patch_size: usize,
    pub batch_size: usize,
}

impl SchedulePhase {
    pub const fn new(iteration: usize, patch_size: usize, batch_size: usize) -> Self {
        SchedulePhase { iteration, patch_size, batch_size }
    }
}

fn d_lr_max() -> f64 {
    3e-4
}
fn d_lr_min() -> f64 {
    1e-6
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_wd() -> f64 {
    1e-4
}
fn d_total() -> usize {
    1200
}
fn d_schedule() -> Vec<SchedulePhase> {
    vec![SchedulePhase::new(0, 32, 8), SchedulePhase::new(400, 48, 4), SchedulePhase::new(800, 64, 2)]
}
fn d_eps() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr_max")]
    pub lr_max: f64,
    #[serde(default = "d_lr_min")]
    pub lr_min: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_total")]
    pub total_iters: usize,
    #[serde(default = "d_schedule")]
    pub patch_schedule: Vec<SchedulePhase>,
    #[serde(default = "d_eps")]
    pub charbonnier_eps: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: d_lr_max(),
            lr_min: d_lr_min(),
            adam_beta1: d_beta1(),
            adam_beta2: d_beta2(),
            weight_decay: d_wd(),
            total_iters: d_total(),
            patch_schedule: d_schedule(),
            charbonnier_eps: d_eps(),
            rng_seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the config on its own and against the network's size constraint.
    pub fn validate(&self, network: &NetworkConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return fail(format!("need 0 < lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.charbonnier_eps > 0.0 && self.charbonnier_eps.is_finite()) {
            return fail(format!("charbonnier_eps must be > 0, got {}", self.charbonnier_eps));
        }
        if self.total_iters == 0 {
            return fail("total_iters must be positive".into());
        }
        match self.patch_schedule.first() {
            None => return fail("patch_schedule is empty".into()),
            Some(p) if p.iteration != 0 => return fail("patch_schedule must start at iteration 0".into()),
            _ => {}
        }
        let multiple = network.spatial_multiple();
        for (i, p) in self.patch_schedule.iter().enumerate() {
            if i > 0 && p.iteration <= self.patch_schedule[i - 1].iteration {
                return fail("patch_schedule iterations must be strictly increasing".into());
            }
            if p.patch_size == 0 || p.patch_size % multiple != 0 {
                return fail(format!("patch size {} is not a positive multiple of {multiple}", p.patch_size));
            }
            if p.batch_size == 0 {
                return fail("batch sizes must be positive".into());
            }
        }
        Ok(())
    }

    /// Phase in force at iteration `t`.
    pub fn phase(&self, t: usize) -> SchedulePhase {
        *self.patch_schedule.iter().rev().find(|p| p.iteration <= t).unwrap_or(&self.patch_schedule[0])
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, weight_decay: self.weight_decay }
    }
}

fn d_pairs() -> usize {
    200
}

/// How the training set is synthesized from sharp images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub blur: BlurSpec,
    #[serde(default = "d_pairs")]
    pub pairs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { blur: BlurSpec::default(), pairs: d_pairs() }
    }
}

/// The JSON document read by the `train` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.network.validate()?;
        cfg.train.validate(&cfg.network)?;
        cfg.data.blur.validate()?;
        if cfg.data.pairs == 0 {
            return Err(Error::Config("data.pairs must be positive".into()));
        }
        Ok(cfg)
    }
}

/// Optimization state that advances one iteration at a time.
pub struct Trainer {
    pub net: LaKDNet,
    pub optimizer: AdamW,
    config: TrainConfig,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    /// Parameters and the crop sampler are both seeded from `rng_seed`.
    pub fn new(network: NetworkConfig, config: TrainConfig) -> Result<Self> {
        network.validate()?;
        config.validate(&network)?;
        let mut net = LaKDNet::new(network, config.rng_seed)?;
        net.params_mut().get_mut("out.weight")?.data_mut().fill(0.0);
        let optimizer = AdamW::new(net.params(), config.adamw());
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(1);
        Ok(Trainer { net, optimizer, config, rng, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f64 {
        cosine_lr(self.iteration, self.config.total_iters, self.config.lr_max, self.config.lr_min)
    }

    /// One optimization step. Returns the loss before the update. A
    /// non-finite loss or gradient leaves the parameters untouched and
    /// yields [`Error::Numerical`].
    pub fn step(&mut self, pairs: &[Pair]) -> Result<f64> {
        let phase = self.config.phase(self.iteration);
        let (input, target) = sample_batch(pairs, phase.patch_size, phase.batch_size, &mut self.rng)?;
        let mut g = Graph::new();
        let bound = self.net.params().bind(&mut g, true);
        let x = g.constant(input);
        let y = g.constant(target);
        let pred = self.net.forward(&mut g, &bound, x)?;
        let loss_var = charbonnier_loss(&mut g, pred, y, self.config.charbonnier_eps)?;
        let loss = g.scalar_f64(loss_var)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss} at iteration {}", self.iteration)));
        }
        g.backward(loss_var, 1.0)?;
        let vars = bound.vars().to_vec();
        drop(bound);
        let lr = self.learning_rate();
        let params = self.net.params_mut();
        params.zero_grad();
        params.accumulate_grads(&g, &vars)?;
        drop(g);
        if params.iter().any(|(_, t)| t.grad().is_some_and(|gr| gr.iter().any(|v| !v.is_finite()))) {
            params.zero_grad();
            return Err(Error::Numerical(format!("non-finite gradient at iteration {}", self.iteration)));
        }
        self.optimizer.step(params, lr)?;
        params.zero_grad();
        self.iteration += 1;
        Ok(loss)
    }

    /// Parameters followed by optimizer state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_params(self.net.params());
        self.optimizer.save(self.net.params(), &mut ckpt)?;
        Ok(ckpt)
    }
}

/// Files written by [`train`] next to the checkpoint.
pub fn loss_trace_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".loss.csv");
    PathBuf::from(p)
}

pub struct TrainOutcome {
    pub net: LaKDNet,
    pub losses: Vec<f64>,
}

fn write_outputs(trainer: &Trainer, losses: &[f64], out: &Path) -> Result<()> {
    trainer.checkpoint()?.write(out)?;
    write_config(out, trainer.net.config())?;
    let mut csv = String::from("iteration,loss,lr\n");
    let cfg = trainer.config();
    for (t, l) in losses.iter().enumerate() {
        writeln!(csv, "{t},{l},{}", cosine_lr(t, cfg.total_iters, cfg.lr_max, cfg.lr_min)).expect("string write");
    }
    fs::write(loss_trace_path(out), csv)?;
    Ok(())
}

/// Runs `total_iters` steps. With `out` set, writes the checkpoint (plus
/// config sidecar and loss trace) every `checkpoint_every` iterations and at
/// the end; on a numerical failure the last good state is written before the
/// error is returned.
pub fn train(
    network: NetworkConfig,
    config: TrainConfig,
    pairs: &[Pair],
    out: Option<&Path>,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let channels = network.input_mode.channels();
    if let Some(p) = pairs.iter().find(|p| p.blurry.shape()[0] != channels || p.sharp.shape()[0] != 3) {
        return Err(Error::invalid_shape(
            p.blurry.shape(),
            format!("network expects {channels} input channels and 3 target channels"),
        ));
    }
    let mut trainer = Trainer::new(network, config)?;
    let total = trainer.config().total_iters;
    let every = trainer.config().checkpoint_every;
    let mut losses = Vec::with_capacity(total);
    while trainer.iteration() < total {
        match trainer.step(pairs) {
            Ok(loss) => {
                losses.push(loss);
                progress(trainer.iteration(), loss);
            }
            Err(e @ Error::Numerical(_)) => {
                if let Some(out) = out {
                    write_outputs(&trainer, &losses, out)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if let Some(out) = out {
            let t = trainer.iteration();
            if t == total || (every > 0 && t % every == 0) {
                write_outputs(&trainer, &losses, out)?;
            }
        }
    }
    Ok(TrainOutcome { net: trainer.net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::{synth_dataset, SharpSource};
    use crate::tensor::Tensor;

    fn smoke() -> (NetworkConfig, TrainConfig, Vec<Pair>) {
        let net = NetworkConfig::tiny(4, 3);
        let train = TrainConfig {
            total_iters: 50,
            patch_schedule: vec![SchedulePhase::new(0, 16, 2), SchedulePhase::new(25, 24, 1)],
            rng_seed: 7,
            ..Default::default()
        };
        let src = SharpSource::Procedural { height: 32, width: 32, seed: 1 };
        let pairs = synth_dataset(&src, &BlurSpec::default(), 6).unwrap();
        (net, train, pairs)
    }

    #[test]
    fn defaults_follow_the_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_max, c.lr_min, c.adam_beta1, c.adam_beta2), (3e-4, 1e-6, 0.9, 0.999));
        assert_eq!((c.weight_decay, c.charbonnier_eps, c.total_iters), (1e-4, 1e-3, 1200));
        assert_eq!(c.phase(0), SchedulePhase::new(0, 32, 8));
        assert_eq!(c.phase(399), SchedulePhase::new(0, 32, 8));
        assert_eq!(c.phase(400), SchedulePhase::new(400, 48, 4));
        assert_eq!(c.phase(1199), SchedulePhase::new(800, 64, 2));
        c.validate(&NetworkConfig::default()).unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let net = NetworkConfig::default();
        let bad = [
            TrainConfig { lr_min: 0.0, ..Default::default() },
            TrainConfig { lr_min: 1e-2, ..Default::default() },
            TrainConfig { patch_schedule: vec![], ..Default::default() },
            TrainConfig { patch_schedule: vec![SchedulePhase::new(0, 30, 2)], ..Default::default() },
            TrainConfig {
                patch_schedule: vec![SchedulePhase::new(0, 32, 2), SchedulePhase::new(0, 48, 2)],
                ..Default::default()
            },
            TrainConfig { patch_schedule: vec![SchedulePhase::new(5, 32, 2)], ..Default::default() },
            TrainConfig { total_iters: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(&net), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        assert!(RunConfig::from_json("{}").is_ok());
        assert!(matches!(RunConfig::from_json(r#"{"train": {"lr": 1}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"extra": 1}"#), Err(Error::Config(_))));
        let cfg = RunConfig::from_json(r#"{"train": {"total_iters": 10, "rng_seed": 3}}"#).unwrap();
        assert_eq!(cfg.train.total_iters, 10);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn tiny_learning_rate_barely_moves() {
        let (net, mut train_cfg, pairs) = smoke();
        train_cfg.total_iters = 1;
        train_cfg.lr_max = 1e-12;
        train_cfg.lr_min = 1e-12;
        let initial = LaKDNet::new(net.clone(), train_cfg.rng_seed).unwrap();
        let out = train(net, train_cfg, &pairs, None, |_, _| {}).unwrap();
        for ((name, a), (_, b)) in initial.params().iter().zip(out.net.params().iter()) {
            // training starts from the identity map, with the output projection zeroed
            let start = if name == "out.weight" { Tensor::zeros(a.shape().to_vec()) } else { a.clone() };
            assert!(start.max_abs_diff(b).unwrap() < 1e-10, "{name}");
        }
    }

    #[test]
    fn smoke_run_is_finite_and_deterministic() {
        let (net, cfg, pairs) = smoke();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("smoke.ckpt");
        let a = train(net.clone(), TrainConfig { checkpoint_every: 20, ..cfg.clone() }, &pairs, Some(&out), |_, _| {})
            .unwrap();
        assert_eq!(a.losses.len(), 50);
        assert!(a.losses.iter().all(|l| l.is_finite() && *l > 0.0));
        let b = train(net, cfg, &pairs, None, |_, _| {}).unwrap();
        assert_eq!(a.losses, b.losses);
        let ckpt = Checkpoint::read(&out).unwrap();
        let saved = ckpt.to_params(a.net.config()).unwrap();
        for ((n1, t1), (n2, t2)) in saved.iter().zip(b.net.params().iter()) {
            assert_eq!((n1, t1.data()), (n2, t2.data()));
        }
        assert!(ckpt.get("opt.step").is_some());
        let trace = fs::read_to_string(loss_trace_path(&out)).unwrap();
        assert_eq!(trace.lines().count(), 51);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (mut net, cfg, pairs) = smoke();
        net.input_mode = crate::lakdnet::InputMode::DualPixel;
        assert!(train(net, cfg, &pairs, None, |_, _| {}).is_err());
        let (net, cfg, _) = smoke();
        assert!(train(net, cfg, &[], None, |_, _| {}).is_err());
    }
}
