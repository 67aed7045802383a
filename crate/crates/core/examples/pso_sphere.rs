//! Minimizes the sphere and Rastrigin functions with the particle swarm.

use vbsf::pso::{optimize, PsoConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let cfg = PsoConfig::cube(10, -5.0, 5.0)
        .with_swarm_size(30)
        .with_iterations(200)
        .with_seed(0);
    let out = optimize(sphere, &cfg)?;
    println!(
        "sphere:    best {:.3e} after {} iterations",
        out.best_value,
        out.history.len()
    );

    let rastrigin = |x: &[f64]| {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (std::f64::consts::TAU * v).cos())
                .sum::<f64>()
    };
    let cfg = PsoConfig::cube(2, -5.12, 5.12)
        .with_swarm_size(40)
        .with_iterations(150)
        .with_seed(3);
    let out = optimize(rastrigin, &cfg)?;
    println!(
        "rastrigin: best {:.3e} at {:?}",
        out.best_value, out.best_position
    );
    for (i, v) in out.history.iter().enumerate().step_by(25) {
        println!("  iteration {:3}: {v:.5}", i + 1);
    }
    Ok(())
}
