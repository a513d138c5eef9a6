//! Plans the large-encoder batch for a tick period and staleness budget,
//! runs the discrete-event pipeline on a synthetic backend and prints the
//! timeline. Usage: `schedule_trace [TICK_MS] [DELTA_MS]`.

use eta::models::Mode;
use eta::scheduler::{plan_schedule, CostModel, Pipeline, PipelineConfig, SyntheticBackend, SyntheticEnv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let cfg = PipelineConfig::new(
        args.first().copied().unwrap_or(50.0),
        args.get(1).copied().unwrap_or(500.0),
    );
    let costs = CostModel::default();
    match plan_schedule(&costs, &cfg) {
        Ok(p) => println!(
            "T={} ms, delta={} ms: batch {} (large {} ms, worst frame-to-feature {} ms)",
            p.tick_ms, p.delta_ms, p.batch, p.large_ms, p.worst_latency_ms
        ),
        Err(e) => println!("no feasible batch: {e}"),
    }
    for mode in Mode::ALL {
        println!("  {:<24} reactive {:>5} ms", mode.name(), costs.reactive(mode));
    }

    let pipeline = Pipeline::new(&costs, &cfg, Mode::Full)?;
    let run = pipeline.run(&mut SyntheticEnv::new(200), &SyntheticBackend, 200)?;
    let st = run.trace.stats();
    println!(
        "{} ticks, {} large batches, {} misses, large busy {:.0}%, reactive busy {:.0}%",
        st.ticks,
        st.batches,
        st.misses,
        100.0 * st.large_utilization,
        100.0 * st.reactive_utilization
    );
    println!("fuses by staleness (ms): {:?}", st.staleness);
    print!("{}", run.trace.gantt(cfg.tick_ms, 0, 24));
    Ok(())
}
