//! Phase iterations, the divergence guard and the run loop.

use alloc::vec::Vec;

use super::adam::AdamConfig;
use super::config::TrainConfig;
use super::metrics::{argmax_labels, discriminator_accuracy};
use super::state::TrainState;
use super::{kind_index, Phase};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::losses;
use crate::networks::{Mode, NetworkKind};
use crate::real::Real;
use crate::rng;
use crate::synth::{build_codebook, Batch, Dataset, DatasetConfig, NormalCodebook, Split};
use crate::tensor::Tensor;
use crate::NOISE_DIM;

use NetworkKind::{
    Fcn, StructureDiscriminator as StructureD, StructureGenerator as StructureG, StyleDiscriminator as StyleD,
    StyleGenerator as StyleG,
};

/// One optimizer update inside an iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub network: NetworkKind,
    /// With auditing on: every network whose parameters or buffers changed
    /// across this update.
    pub changed: Option<Vec<NetworkKind>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub phase: Phase,
    /// Zero-based index of the iteration within its phase.
    pub iteration: u64,
    pub losses: Vec<(&'static str, f64)>,
    /// In the order they were applied.
    pub updates: Vec<Update>,
}

impl IterationRecord {
    pub fn loss(&self, name: &str) -> Option<f64> {
        self.losses.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Called after every iteration; may stop the run.
pub trait Observer<T: Real> {
    fn observe(&mut self, record: &IterationRecord, state: &TrainState<T>) -> Result<Control>;
}

impl<T: Real, F: FnMut(&IterationRecord, &TrainState<T>) -> Result<Control>> Observer<T> for F {
    fn observe(&mut self, record: &IterationRecord, state: &TrainState<T>) -> Result<Control> {
        self(record, state)
    }
}

/// Halts when a generator loss, averaged over the generated samples, stays
/// above `ceiling` for `patience` consecutive iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceGuard {
    pub ceiling: f64,
    pub patience: usize,
}

impl DivergenceGuard {
    /// Advance `streak` with `loss`; true once it reaches the patience.
    pub fn observe(&self, streak: &mut usize, loss: f64) -> bool {
        if loss > self.ceiling || !loss.is_finite() {
            *streak += 1;
        } else {
            *streak = 0;
        }
        *streak >= self.patience
    }
}

/// Owns the training state and the scene stream.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub config: TrainConfig,
    pub state: TrainState<T>,
    /// Record which networks each update touched (costs a digest pass).
    pub audit_updates: bool,
    data: Dataset,
}

/// Loss for the guard in each phase.
fn guarded_loss(phase: Phase) -> Option<&'static str> {
    match phase {
        Phase::FcnPretrain => None,
        Phase::Structure | Phase::Joint => Some("structure_g_loss"),
        Phase::StyleFrozenFcn | Phase::StyleFinetuneFcn => Some("style_g_loss"),
    }
}

impl<T: Real> Trainer<T> {
    /// Fit the codebook and initialize every network.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let codebook = build_codebook(config.seed, config.scale, config.codebook_scenes)?;
        let state = TrainState::new(config.scale, config.seed, codebook, config.digest())?;
        Self::from_state(config, state)
    }

    /// Continue from a restored state.
    pub fn from_state(config: TrainConfig, state: TrainState<T>) -> Result<Self> {
        if config.batch_size < 2 || config.batch_size % 2 != 0 {
            return Err(Error::config(
                "train",
                alloc::format!("batch size must be even and at least 2, got {}", config.batch_size),
            ));
        }
        if state.scale != config.scale {
            return Err(Error::config(
                "train",
                alloc::format!("state is at scale {}, config asks for {}", state.scale.label(), config.scale.label()),
            ));
        }
        let data = Dataset::new(
            DatasetConfig::new(config.data_count, config.scale, config.seed, Split::Train)
                .with_batch_size(config.batch_size),
            state.codebook.clone(),
        )?;
        Ok(Trainer {
            config,
            state,
            audit_updates: false,
            data,
        })
    }

    pub fn codebook(&self) -> &NormalCodebook {
        &self.state.codebook
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Held-out scenes with the same codebook.
    pub fn test_set(&self, count: usize, batch_size: usize) -> Result<Dataset> {
        Dataset::new(
            DatasetConfig::new(count, self.config.scale, self.config.seed, Split::Test).with_batch_size(batch_size),
            self.state.codebook.clone(),
        )
    }

    pub fn guard(&self) -> DivergenceGuard {
        DivergenceGuard {
            ceiling: self.config.divergence_ceiling,
            patience: self.config.divergence_patience,
        }
    }

    fn lr(&self, phase: Phase, kind: NetworkKind) -> f64 {
        match (phase, kind) {
            (_, Fcn) => self.config.lr_fcn,
            (Phase::Joint, StyleG | StyleD) => self.config.lr_joint_style,
            (Phase::Joint, _) => self.config.lr_joint_structure(),
            (_, StructureG | StructureD) => self.config.lr_structure,
            (_, StyleG | StyleD) => self.config.lr_style,
        }
    }

    /// Start `phase` at iteration zero.
    ///
    /// The trainable networks get fresh optimizer moments at the phase's
    /// learning rate, except that fine-tuning keeps the style networks'
    /// moments from the frozen stage.
    pub fn begin(&mut self, phase: Phase) -> Result<()> {
        for &req in phase.requires() {
            if !self.state.has_completed(req) {
                return Err(Error::Prerequisite {
                    phase: phase.name(),
                    required: req.name(),
                });
            }
        }
        for &kind in phase.trainable() {
            let keep = phase == Phase::StyleFinetuneFcn && kind != Fcn;
            if !keep {
                let lr = self.lr(phase, kind);
                let adam = &mut self.state.adam[kind_index(kind)];
                adam.reset();
                adam.config = AdamConfig::new(lr);
            }
        }
        self.state.phase = phase;
        self.state.iteration = 0;
        self.state.guard_streak = 0;
        Ok(())
    }

    /// Total iterations of the current phase.
    pub fn total_iterations(&self) -> u64 {
        self.config.iterations(self.state.phase)
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.total_iterations()
    }

    /// Iterate until the phase is done or the observer stops. The phase is
    /// marked completed when it runs to its end.
    pub fn run(&mut self, observer: &mut dyn Observer<T>) -> Result<Control> {
        while !self.is_finished() {
            let record = self.step()?;
            if observer.observe(&record, &self.state)? == Control::Stop {
                return Ok(Control::Stop);
            }
        }
        if !self.state.has_completed(self.state.phase) {
            self.state.completed.push(self.state.phase);
        }
        Ok(Control::Continue)
    }

    /// One iteration of the current phase.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let phase = self.state.phase;
        let iteration = self.state.iteration;
        let batch: Batch<T> = self.data.batch(iteration as usize)?;
        let mut record = IterationRecord {
            phase,
            iteration,
            losses: Vec::new(),
            updates: Vec::new(),
        };
        match phase {
            Phase::FcnPretrain => self.fcn_iteration(&batch, &mut record)?,
            Phase::Structure => self.structure_iteration(&batch, &mut record)?,
            Phase::StyleFrozenFcn | Phase::StyleFinetuneFcn => self.style_iteration(&batch, &mut record)?,
            Phase::Joint => self.joint_iteration(&batch, &mut record)?,
        }
        self.state.iteration += 1;
        if let Some(name) = guarded_loss(phase) {
            // Per generated sample, so one ceiling serves every batch size.
            let loss = record.loss(name).expect("phase logs its guarded loss") / self.half() as f64;
            if self.guard().observe(&mut self.state.guard_streak, loss) {
                return Err(Error::Divergence {
                    phase: phase.name().into(),
                    iteration,
                    loss,
                    ceiling: self.config.divergence_ceiling,
                    patience: self.config.divergence_patience,
                });
            }
        }
        Ok(record)
    }

    /// Uniform(-1, 1) noise, `which` is "structure" or "style". The stream
    /// depends on the iteration only, so the joint phase draws the same
    /// noise as the separate phases at the same iteration.
    pub fn noise(&self, which: &str, iteration: u64) -> Tensor<T> {
        let tag = rng::tag("train/noise") ^ rng::tag(which);
        let mut r = rng::stream(self.config.seed, tag, iteration);
        rng::uniform_noise(&mut r, self.config.batch_size / 2, NOISE_DIM)
    }

    fn bind(&self, g: &mut Graph<T>, kind: NetworkKind, trainable: bool) -> Vec<Var> {
        self.state.net(kind).bind(g, trainable)
    }

    fn forward(&mut self, g: &mut Graph<T>, kind: NetworkKind, params: &[Var], inputs: &[Var]) -> Result<Var> {
        self.state.net_mut(kind).forward(g, params, inputs, Mode::Train)
    }

    /// The fixed FCN uses its running statistics so that nothing in it moves.
    fn forward_fixed_fcn(&mut self, g: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var> {
        self.state.net_mut(Fcn).forward(g, params, &[input], Mode::Eval)
    }

    fn apply(&mut self, g: &Graph<T>, kind: NetworkKind, params: &[Var], record: &mut IterationRecord) -> Result<()> {
        let before = self.audit_updates.then(|| self.digests());
        let grads: Vec<Option<&[T]>> = params.iter().map(|&v| g.grad(v)).collect();
        let i = kind_index(kind);
        let net = &mut self.state.nets[i];
        self.state.adam[i].step(&net.params.names, &mut net.params.tensors, &grads)?;
        let changed = before.map(|b| {
            let after = self.digests();
            NetworkKind::ALL
                .iter()
                .zip(b.iter().zip(&after))
                .filter(|(_, (x, y))| x != y)
                .map(|(&k, _)| k)
                .collect()
        });
        record.updates.push(Update { network: kind, changed });
        Ok(())
    }

    fn digests(&self) -> Vec<u64> {
        NetworkKind::ALL.iter().map(|&k| self.state.param_digest(k)).collect()
    }

    fn half(&self) -> usize {
        self.config.batch_size / 2
    }

    fn labels<'b>(&self, batch: &'b Batch<T>, from: usize, to: usize) -> &'b [u8] {
        let plane = self.config.scale.style_size().pow(2);
        &batch.labels[from * plane..to * plane]
    }

    fn fcn_iteration(&mut self, batch: &Batch<T>, record: &mut IterationRecord) -> Result<()> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, Fcn, true);
        let x = g.input(batch.images.clone());
        let logits = self.forward(&mut g, Fcn, &p, &[x])?;
        let loss = losses::fcn_loss(&mut g, logits, &batch.labels)?;
        g.backward(loss)?;
        self.apply(&g, Fcn, &p, record)?;
        let pred = argmax_labels(g.value(logits));
        let hits = pred.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
        record.losses.push(("fcn_loss", g.value(loss).item().to_f64()));
        record.losses.push(("pixel_accuracy", hits as f64 / pred.len() as f64));
        Ok(())
    }

    fn structure_iteration(&mut self, batch: &Batch<T>, record: &mut IterationRecord) -> Result<()> {
        let half = self.half();
        let mut g = Graph::new();
        let gp = self.bind(&mut g, StructureG, true);
        let z = g.input(self.noise("structure", self.state.iteration));
        let fake = self.forward(&mut g, StructureG, &gp, &[z])?;

        let real = g.input(batch.structure_normals.slice_outer(0, half)?);
        let fake_const = g.detach(fake);
        let dp = self.bind(&mut g, StructureD, true);
        let s_real = self.forward(&mut g, StructureD, &dp, &[real])?;
        let s_fake = self.forward(&mut g, StructureD, &dp, &[fake_const])?;
        let d_loss = losses::gan_d_loss(&mut g, s_real, s_fake)?;
        g.backward(d_loss)?;
        self.apply(&g, StructureD, &dp, record)?;

        let dp = self.bind(&mut g, StructureD, false);
        let s = self.forward(&mut g, StructureD, &dp, &[fake])?;
        let g_loss = losses::gan_g_loss(&mut g, s);
        g.backward(g_loss)?;
        self.apply(&g, StructureG, &gp, record)?;

        record.losses.push(("structure_d_loss", g.value(d_loss).item().to_f64()));
        record.losses.push(("structure_g_loss", g.value(g_loss).item().to_f64()));
        record
            .losses
            .push(("structure_d_accuracy", discriminator_accuracy(g.value(s_real), g.value(s_fake))));
        Ok(())
    }

    fn style_iteration(&mut self, batch: &Batch<T>, record: &mut IterationRecord) -> Result<()> {
        let half = self.half();
        let finetune = self.state.phase == Phase::StyleFinetuneFcn;
        let gan = !finetune || self.config.finetune_gan;
        let real_labels = self.labels(batch, 0, half);
        let cond_labels = self.labels(batch, half, 2 * half);
        let mut g = Graph::new();
        let real_img = g.input(batch.images.slice_outer(0, half)?);
        let real_n = g.input(batch.normals.slice_outer(0, half)?);
        let cond = g.input(batch.normals.slice_outer(half, 2 * half)?);
        let gp = self.bind(&mut g, StyleG, true);
        let z = g.input(self.noise("style", self.state.iteration));
        let fake = self.forward(&mut g, StyleG, &gp, &[cond, z])?;

        if gan {
            // Step 1: discriminator.
            let fake_const = g.detach(fake);
            let dp = self.bind(&mut g, StyleD, true);
            let s_real = self.forward(&mut g, StyleD, &dp, &[real_n, real_img])?;
            let s_fake = self.forward(&mut g, StyleD, &dp, &[cond, fake_const])?;
            let d_loss = losses::cond_d_loss(&mut g, s_real, s_fake)?;
            g.backward(d_loss)?;
            self.apply(&g, StyleD, &dp, record)?;
            record.losses.push(("style_d_loss", g.value(d_loss).item().to_f64()));
            record
                .losses
                .push(("style_d_accuracy", discriminator_accuracy(g.value(s_real), g.value(s_fake))));

            // Step 2: generator against the fixed D and FCN.
            let dp = self.bind(&mut g, StyleD, false);
            let s = self.forward(&mut g, StyleD, &dp, &[cond, fake])?;
            let cond_term = losses::cond_g_loss(&mut g, s);
            let fcn_term = if self.config.fcn_weight != 0.0 {
                let fp = self.bind(&mut g, Fcn, false);
                let logits = self.forward_fixed_fcn(&mut g, &fp, fake)?;
                let f = losses::fcn_loss(&mut g, logits, cond_labels)?;
                record.losses.push(("style_fcn_term", g.value(f).item().to_f64()));
                Some(g.scale(f, T::lit(self.config.fcn_weight)))
            } else {
                None
            };
            let g_loss = losses::style_g_multitask_loss(&mut g, cond_term, fcn_term)?;
            g.backward(g_loss)?;
            self.apply(&g, StyleG, &gp, record)?;
            record.losses.push(("style_cond_g_loss", g.value(cond_term).item().to_f64()));
            record.losses.push(("style_g_loss", g.value(g_loss).item().to_f64()));
        } else {
            record.losses.push(("style_g_loss", 0.0));
        }

        if finetune {
            // Step 3: FCN on generated and real images, generator fixed.
            let fake_const = g.detach(fake);
            let fp = self.bind(&mut g, Fcn, true);
            let on_fake = self.forward(&mut g, Fcn, &fp, &[fake_const])?;
            let on_real = self.forward(&mut g, Fcn, &fp, &[real_img])?;
            let lf = losses::fcn_loss(&mut g, on_fake, cond_labels)?;
            let lr = losses::fcn_loss(&mut g, on_real, real_labels)?;
            let loss = g.add(lf, lr)?;
            g.backward(loss)?;
            self.apply(&g, Fcn, &fp, record)?;
            record.losses.push(("fcn_finetune_loss", g.value(loss).item().to_f64()));
        }
        Ok(())
    }

    /// Forward pass shared by the joint iteration and the gradient probe:
    /// structure normals, their bilinear upsampling and the rendered images.
    fn joint_forward(&mut self, g: &mut Graph<T>, gp: &[Var], sp: &[Var]) -> Result<(Var, Var, Var)> {
        let size = self.config.scale.style_size();
        let z_hat = g.input(self.noise("structure", self.state.iteration));
        let z_tilde = g.input(self.noise("style", self.state.iteration));
        let normals = self.forward(g, StructureG, gp, &[z_hat])?;
        let up = g.resize_bilinear(normals, size, size)?;
        let image = self.forward(g, StyleG, sp, &[up, z_tilde])?;
        Ok((normals, up, image))
    }

    fn joint_iteration(&mut self, batch: &Batch<T>, record: &mut IterationRecord) -> Result<()> {
        let half = self.half();
        let mut g = Graph::new();
        let gp = self.bind(&mut g, StructureG, true);
        let sp = self.bind(&mut g, StyleG, true);
        let (normals, up, image) = self.joint_forward(&mut g, &gp, &sp)?;

        let real_small = g.input(batch.structure_normals.slice_outer(0, half)?);
        let normals_const = g.detach(normals);
        let d1 = self.bind(&mut g, StructureD, true);
        let s_real = self.forward(&mut g, StructureD, &d1, &[real_small])?;
        let s_fake = self.forward(&mut g, StructureD, &d1, &[normals_const])?;
        let d1_loss = losses::gan_d_loss(&mut g, s_real, s_fake)?;
        g.backward(d1_loss)?;
        self.apply(&g, StructureD, &d1, record)?;

        let real_img = g.input(batch.images.slice_outer(0, half)?);
        let real_n = g.input(batch.normals.slice_outer(0, half)?);
        let up_const = g.detach(up);
        let image_const = g.detach(image);
        let d2 = self.bind(&mut g, StyleD, true);
        let t_real = self.forward(&mut g, StyleD, &d2, &[real_n, real_img])?;
        let t_fake = self.forward(&mut g, StyleD, &d2, &[up_const, image_const])?;
        let d2_loss = losses::cond_d_loss(&mut g, t_real, t_fake)?;
        g.backward(d2_loss)?;
        self.apply(&g, StyleD, &d2, record)?;

        let d1 = self.bind(&mut g, StructureD, false);
        let d2 = self.bind(&mut g, StyleD, false);
        let s = self.forward(&mut g, StructureD, &d1, &[normals])?;
        let structure_term = losses::gan_g_loss(&mut g, s);
        let t = self.forward(&mut g, StyleD, &d2, &[up, image])?;
        let style_term = losses::cond_g_loss(&mut g, t);

        g.backward(style_term)?;
        self.apply(&g, StyleG, &sp, record)?;
        let joint = losses::joint_structure_g_loss(&mut g, structure_term, style_term, self.config.lambda)?;
        g.backward(joint)?;
        self.apply(&g, StructureG, &gp, record)?;

        record.losses.push(("structure_d_loss", g.value(d1_loss).item().to_f64()));
        record.losses.push(("style_d_loss", g.value(d2_loss).item().to_f64()));
        record.losses.push(("structure_g_loss", g.value(structure_term).item().to_f64()));
        record.losses.push(("style_g_loss", g.value(style_term).item().to_f64()));
        record.losses.push(("joint_g_loss", g.value(joint).item().to_f64()));
        Ok(())
    }

    /// Gradient of the joint Structure-G objective with weight `lambda`, at
    /// the current state and iteration, without changing anything.
    pub fn joint_structure_gradient(&self, lambda: f64) -> Result<Vec<Tensor<T>>> {
        let mut probe = self.clone();
        probe.audit_updates = false;
        let mut g = Graph::new();
        let gp = probe.bind(&mut g, StructureG, true);
        let sp = probe.bind(&mut g, StyleG, false);
        let (normals, up, image) = probe.joint_forward(&mut g, &gp, &sp)?;
        let d1 = probe.bind(&mut g, StructureD, false);
        let d2 = probe.bind(&mut g, StyleD, false);
        let s = probe.forward(&mut g, StructureD, &d1, &[normals])?;
        let structure_term = losses::gan_g_loss(&mut g, s);
        let t = probe.forward(&mut g, StyleD, &d2, &[up, image])?;
        let style_term = losses::cond_g_loss(&mut g, t);
        let joint = losses::joint_structure_g_loss(&mut g, structure_term, style_term, lambda)?;
        g.backward(joint)?;
        Ok(gp.iter().map(|&v| g.grad_tensor(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_needs_consecutive_breaches() {
        let guard = DivergenceGuard {
            ceiling: 15.0,
            patience: 3,
        };
        let mut streak = 0;
        assert!(!guard.observe(&mut streak, 16.0));
        assert!(!guard.observe(&mut streak, 16.0));
        assert!(!guard.observe(&mut streak, 14.0));
        assert_eq!(streak, 0);
        assert!(!guard.observe(&mut streak, f64::NAN));
        assert!(!guard.observe(&mut streak, 20.0));
        assert!(guard.observe(&mut streak, 15.5));
    }

    #[test]
    fn guarded_losses_per_phase() {
        assert_eq!(guarded_loss(Phase::Joint), Some("structure_g_loss"));
        assert_eq!(guarded_loss(Phase::FcnPretrain), None);
    }

    use std::sync::OnceLock;

    fn codebook() -> NormalCodebook {
        static CB: OnceLock<NormalCodebook> = OnceLock::new();
        CB.get_or_init(|| build_codebook(5, crate::networks::Scale::Quarter, 10).unwrap())
            .clone()
    }

    fn config() -> TrainConfig {
        let mut c = TrainConfig::desk(5, 3);
        c.batch_size = 4;
        c.data_count = 16;
        c.codebook_scenes = 10;
        c
    }

    fn trainer<T: Real>(c: TrainConfig) -> Trainer<T> {
        let s = TrainState::new(c.scale, c.seed, codebook(), c.digest()).unwrap();
        Trainer::from_state(c, s).unwrap()
    }

    fn digests<T: Real>(t: &Trainer<T>) -> Vec<u64> {
        NetworkKind::ALL.iter().map(|&k| t.state.param_digest(k)).collect()
    }

    fn finish<T: Real>(t: &mut Trainer<T>, phase: Phase) {
        t.begin(phase).unwrap();
        t.run(&mut |_: &IterationRecord, _: &TrainState<T>| Ok(Control::Continue)).unwrap();
    }

    #[test]
    fn prerequisites_are_enforced() {
        let mut t = trainer::<f32>(config());
        for (phase, required) in [
            (Phase::StyleFrozenFcn, "fcn-pretrain"),
            (Phase::StyleFinetuneFcn, "style-frozen-fcn"),
            (Phase::Joint, "structure"),
        ] {
            match t.begin(phase) {
                Err(Error::Prerequisite { required: r, .. }) => assert_eq!(r, required),
                other => panic!("{:?}", other),
            }
        }
        t.begin(Phase::Structure).unwrap();
        t.begin(Phase::FcnPretrain).unwrap();
    }

    #[test]
    fn structure_updates_d_then_g_in_isolation() {
        let mut t = trainer::<f32>(config());
        t.audit_updates = true;
        t.begin(Phase::Structure).unwrap();
        let r = t.step().unwrap();
        assert_eq!(
            r.updates,
            vec![
                Update {
                    network: StructureD,
                    changed: Some(vec![StructureD])
                },
                Update {
                    network: StructureG,
                    changed: Some(vec![StructureG])
                },
            ]
        );
        for name in ["structure_d_loss", "structure_g_loss", "structure_d_accuracy"] {
            assert!(r.loss(name).unwrap().is_finite(), "{}", name);
        }
        assert_eq!(t.state.iteration, 1);
    }

    #[test]
    fn run_marks_completion_and_stop_does_not() {
        let mut t = trainer::<f32>(config());
        t.begin(Phase::Structure).unwrap();
        let mut seen = Vec::new();
        let c = t
            .run(&mut |r: &IterationRecord, _: &TrainState<f32>| {
                seen.push(r.iteration);
                Ok(if r.iteration == 1 { Control::Stop } else { Control::Continue })
            })
            .unwrap();
        assert_eq!((c, seen), (Control::Stop, vec![0, 1]));
        assert!(!t.state.has_completed(Phase::Structure));
        t.run(&mut |_: &IterationRecord, _: &TrainState<f32>| Ok(Control::Continue))
            .unwrap();
        assert_eq!(t.state.iteration, 3);
        assert!(t.state.has_completed(Phase::Structure));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut c = config();
        c.lr_structure = 0.0;
        let mut t = trainer::<f32>(c);
        let before = digests(&t);
        t.begin(Phase::Structure).unwrap();
        t.step().unwrap();
        // Batch-norm running averages move; parameters do not.
        for k in [StructureG, StructureD] {
            assert_eq!(
                t.state.net(k).params.tensors,
                trainer::<f32>(c).state.net(k).params.tensors,
                "{}",
                k.name()
            );
        }
        assert_eq!(before[kind_index(Fcn)], digests(&t)[kind_index(Fcn)]);
    }

    #[test]
    fn frozen_fcn_is_untouched_and_finetune_moves_it() {
        let mut t = trainer::<f32>(config());
        t.audit_updates = true;
        finish(&mut t, Phase::FcnPretrain);
        let fcn = t.state.param_digest(Fcn);
        t.begin(Phase::StyleFrozenFcn).unwrap();
        for _ in 0..2 {
            let r = t.step().unwrap();
            let nets: Vec<_> = r.updates.iter().map(|u| (u.network, u.changed.clone().unwrap())).collect();
            assert_eq!(nets, vec![(StyleD, vec![StyleD]), (StyleG, vec![StyleG])]);
            assert!(r.loss("style_fcn_term").unwrap() > 0.0);
        }
        assert_eq!(t.state.param_digest(Fcn), fcn);
        t.run(&mut |_: &IterationRecord, _: &TrainState<f32>| Ok(Control::Continue))
            .unwrap();
        t.begin(Phase::StyleFinetuneFcn).unwrap();
        let r = t.step().unwrap();
        let order: Vec<_> = r.updates.iter().map(|u| u.network).collect();
        assert_eq!(order, vec![StyleD, StyleG, Fcn]);
        assert_ne!(t.state.param_digest(Fcn), fcn);
    }

    #[test]
    fn finetune_keeps_style_moments_and_resets_fcn() {
        let mut t = trainer::<f32>(config());
        finish(&mut t, Phase::FcnPretrain);
        finish(&mut t, Phase::StyleFrozenFcn);
        t.begin(Phase::StyleFinetuneFcn).unwrap();
        assert_eq!(t.state.adam(StyleG).step, 3);
        assert_eq!(t.state.adam(Fcn).step, 0);
    }

    #[test]
    fn zero_fcn_weight_is_the_plain_conditional_loss() {
        let mut c = config();
        c.fcn_weight = 0.0;
        let mut t = trainer::<f32>(c);
        finish(&mut t, Phase::FcnPretrain);
        t.begin(Phase::StyleFrozenFcn).unwrap();
        let r = t.step().unwrap();
        assert_eq!(r.loss("style_fcn_term"), None);
        assert_eq!(r.loss("style_g_loss"), r.loss("style_cond_g_loss"));
    }

    #[test]
    fn joint_uses_scaled_rates_and_both_chains() {
        let mut t = trainer::<f32>(config());
        t.audit_updates = true;
        finish(&mut t, Phase::Structure);
        finish(&mut t, Phase::FcnPretrain);
        finish(&mut t, Phase::StyleFrozenFcn);
        t.begin(Phase::Joint).unwrap();
        assert_eq!(t.state.adam(StyleG).config.lr, 1e-6);
        assert!((t.state.adam(StructureG).config.lr - 1e-7).abs() < 1e-20);
        let fcn = t.state.param_digest(Fcn);
        let r = t.step().unwrap();
        let order: Vec<_> = r.updates.iter().map(|u| u.network).collect();
        assert_eq!(order, vec![StructureD, StyleD, StyleG, StructureG]);
        for u in &r.updates {
            assert_eq!(u.changed.as_deref(), Some(&[u.network][..]));
        }
        let (s, st, j) = (
            r.loss("structure_g_loss").unwrap(),
            r.loss("style_g_loss").unwrap(),
            r.loss("joint_g_loss").unwrap(),
        );
        assert!((j - (s + 0.1 * st)).abs() < 1e-4 * j.abs());
        assert_eq!(t.state.param_digest(Fcn), fcn);
    }

    #[test]
    fn zero_lambda_gradient_is_the_structure_gradient() {
        let mut t = trainer::<f64>(config());
        t.begin(Phase::Joint).unwrap_err();
        t.state.completed = vec![Phase::Structure, Phase::FcnPretrain, Phase::StyleFrozenFcn];
        t.begin(Phase::Joint).unwrap();
        let joint = t.joint_structure_gradient(0.0).unwrap();

        let mut probe = t.clone();
        let mut g = Graph::new();
        let gp = probe.bind(&mut g, StructureG, true);
        let z = g.input(probe.noise("structure", 0));
        let n = probe.forward(&mut g, StructureG, &gp, &[z]).unwrap();
        let d1 = probe.bind(&mut g, StructureD, false);
        let s = probe.forward(&mut g, StructureD, &d1, &[n]).unwrap();
        let l = losses::gan_g_loss(&mut g, s);
        g.backward(l).unwrap();
        for (a, &v) in joint.iter().zip(&gp) {
            assert_eq!(a, &g.grad_tensor(v));
        }
        let with_style = t.joint_structure_gradient(1.0).unwrap();
        assert!(joint.iter().zip(&with_style).any(|(a, b)| a != b));
    }

    #[test]
    fn same_seed_same_run_and_resume_matches() {
        let c = config();
        let mut a = trainer::<f32>(c);
        a.begin(Phase::Structure).unwrap();
        a.step().unwrap();
        let snap = a.state.snapshot();
        a.step().unwrap();
        a.step().unwrap();

        let mut b = trainer::<f32>(c);
        b.begin(Phase::Structure).unwrap();
        for _ in 0..3 {
            b.step().unwrap();
        }
        assert_eq!(digests(&a), digests(&b));

        let mut r = Trainer::from_state(c, TrainState::<f32>::restore(&snap).unwrap()).unwrap();
        r.step().unwrap();
        r.step().unwrap();
        assert_eq!(r.state.snapshot(), a.state.snapshot());
    }

    #[test]
    fn guard_fires_inside_step() {
        let mut c = config();
        c.divergence_ceiling = -1.0;
        c.divergence_patience = 2;
        let mut t = trainer::<f32>(c);
        t.begin(Phase::Structure).unwrap();
        t.step().unwrap();
        match t.step() {
            Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn odd_batch_is_rejected() {
        let mut c = TrainConfig::desk(0, 1);
        c.batch_size = 3;
        let cb = build_codebook(0, c.scale, 10).unwrap();
        let s = TrainState::<f32>::new(c.scale, 0, cb, 0).unwrap();
        assert!(Trainer::from_state(c, s).is_err());
    }
}
