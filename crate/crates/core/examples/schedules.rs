//! Learning-rate schedules and the schedule-free optimizer on a quadratic.

use liforge::optim::{linear_decay_lr, OptimConfig, Optimizer, Scheduler};

fn main() -> liforge::Result<()> {
    let total = 400;
    println!("linear decay with 5% warmup, lr 1e-3:");
    for step in [0, 10, 20, 100, 200, 399] {
        println!("  step {step:>3}: {:.6}", linear_decay_lr(step, total, 0.05, 1e-3)?);
    }

    // Minimize f(θ) = ½‖θ − 3‖² with both schedulers.
    for scheduler in [Scheduler::LinearDecay { warmup_frac: 0.05 }, Scheduler::ScheduleFree { warmup_frac: 0.05 }] {
        let cfg = OptimConfig { lr: 0.1, scheduler, ..OptimConfig::default() };
        let mut params = vec![vec![0.0, 10.0]];
        let mut opt = Optimizer::new(cfg, total, &params)?;
        for _ in 0..total {
            let at = opt.gradient_point(&params)?;
            let grads = vec![at[0].iter().map(|x| x - 3.0).collect()];
            opt.step(&mut params, grads)?;
        }
        println!("{scheduler:?} (clip {:?}): θ = {:.4?}", cfg.clip_max_norm(), params[0]);
    }
    Ok(())
}
