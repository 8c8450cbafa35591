//! `train <phase>`: one phase per invocation, state carried in
//! `<out>/state.ckpt`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use log::{info, warn};
use s2gan_core::train::{Control, IterationRecord, Phase, TrainState, Trainer};

use crate::error::{Error, Result};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::config::RunConfig;
use crate::io::csv::LossLog;
use crate::io::rgbd::write_codebook;

pub fn state_path(out: &Path) -> PathBuf {
    out.join("state.ckpt")
}

pub fn phase_checkpoint(out: &Path, phase: Phase) -> PathBuf {
    out.join(format!("{}.ckpt", phase))
}

pub fn loss_log_path(out: &Path, phase: Phase) -> PathBuf {
    out.join(format!("losses-{}.csv", phase))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainOutcome {
    pub phase: Phase,
    /// Iterations of the phase finished so far.
    pub iteration: u64,
    pub total: u64,
    pub interrupted: bool,
}

fn open_trainer(run: &RunConfig, phase: Phase) -> Result<Trainer<f32>> {
    let out = &run.out_dir;
    let path = state_path(out);
    if path.exists() {
        let state: TrainState<f32> = load_checkpoint(&path)?;
        if state.config_digest != run.train.digest() {
            info!("{}: written under a different config; continuing with the current one", path.display());
        }
        return Ok(Trainer::from_state(run.train, state)?);
    }
    if let Some(&required) = phase.requires().first() {
        return Err(s2gan_core::Error::Prerequisite {
            phase: phase.name(),
            required: required.name(),
        }
        .into());
    }
    info!("fitting the normal codebook on {} scenes", run.train.codebook_scenes);
    let t = Trainer::new(run.train)?;
    write_codebook(&out.join("codebook.txt"), t.codebook())?;
    Ok(t)
}

/// Run `phase` to completion, or until `interrupt` is raised, checkpointing
/// every `checkpoint_every` iterations and on exit. An interrupted phase
/// resumes where it stopped on the next call.
pub fn train(run: &RunConfig, phase: Phase, interrupt: &AtomicBool) -> Result<TrainOutcome> {
    let out = run.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut trainer = open_trainer(run, phase)?;
    let st = &trainer.state;
    let resuming =
        st.phase == phase && !st.has_completed(phase) && st.iteration > 0 && st.iteration < run.train.iterations(phase);
    let log_path = loss_log_path(&out, phase);
    let mut log = if resuming {
        info!("resuming {} at iteration {}", phase, st.iteration);
        LossLog::resume(&log_path, st.iteration)?
    } else {
        trainer.begin(phase)?;
        LossLog::create(&log_path)?
    };
    let total = trainer.total_iterations();
    let every = run.checkpoint_every.max(1);
    let state_file = state_path(&out);
    let started = Instant::now();
    info!("{}: {} iterations", phase, total);

    let mut failure: Option<Error> = None;
    let result = trainer.run(&mut |r: &IterationRecord, s: &TrainState<f32>| {
        let mut step = || -> Result<()> {
            log.record(r)?;
            let done = r.iteration + 1;
            if done % every == 0 && done < total {
                log.flush()?;
                save_checkpoint(&state_file, s)?;
            }
            if done % 100 == 0 || done == total {
                let summary: Vec<String> = r.losses.iter().map(|(n, v)| format!("{}={:.4}", n, v)).collect();
                info!("{} {}/{} {} ({:.0?})", phase, done, total, summary.join(" "), started.elapsed());
            }
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(e);
            return Ok(Control::Stop);
        }
        Ok(if interrupt.load(Ordering::SeqCst) {
            Control::Stop
        } else {
            Control::Continue
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    log.flush()?;
    let control = match result {
        Ok(c) => c,
        Err(e) => {
            if matches!(e, s2gan_core::Error::Divergence { .. }) {
                let path = out.join("diverged.ckpt");
                save_checkpoint(&path, &trainer.state)?;
                warn!("state at the halt written to {}", path.display());
            }
            return Err(e.into());
        }
    };
    save_checkpoint(&state_file, &trainer.state)?;
    let interrupted = control == Control::Stop;
    if interrupted {
        info!("interrupted at iteration {}; state saved", trainer.state.iteration);
    } else {
        save_checkpoint(&phase_checkpoint(&out, phase), &trainer.state)?;
    }
    Ok(TrainOutcome {
        phase,
        iteration: trainer.state.iteration,
        total,
        interrupted,
    })
}
