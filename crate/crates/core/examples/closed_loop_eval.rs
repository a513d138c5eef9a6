//! Closed-loop evaluation on held-out scenarios: the rule-based expert, an
//! untrained model (which emits the stationary plan) and optionally a saved
//! checkpoint. Usage: `closed_loop_eval [CHECKPOINT]`.

use eta::harness::{evaluate_closed_loop, load_checkpoint, EvalConfig, Policy, Split, SuiteSpec};
use eta::models::{EtaModel, Mode, ModelConfig};
use eta::world::{ExpertConfig, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EvalConfig::default();
    let suite = SuiteSpec {
        kinds: ScenarioKind::ALL.to_vec(),
        episodes: 10,
        split: Split::Eval,
    };

    let expert = evaluate_closed_loop(
        &[(0, Policy::Expert(ExpertConfig::default()))],
        Mode::Full,
        &suite,
        &cfg,
    )?;
    println!("expert\n{}", expert.render());

    let untrained = EtaModel::new(&ModelConfig::default(), 0)?;
    let report = evaluate_closed_loop(&[(0, Policy::Model(&untrained))], Mode::Full, &suite, &cfg)?;
    println!("untrained\n{}", report.render());

    if let Some(path) = std::env::args().nth(1) {
        let (model, meta) = load_checkpoint(&path)?;
        for mode in [meta.mode, Mode::NoForecast] {
            let report = evaluate_closed_loop(&[(meta.seed, Policy::Model(&model))], mode, &suite, &cfg)?;
            println!("{path} as {mode}\n{}", report.render());
        }
    }
    Ok(())
}
