use std::time::Instant;

use penguin_core::env::{Asymmetry, Scenario, ScenarioConfig, World};
use penguin_core::graph::{AlphaMode, Architecture};
use penguin_core::rl::{train, PpoConfig, TrainSettings};

fn main() {
    for arch in [
        Architecture::Penguin,
        Architecture::E2gn2,
        Architecture::Egnn,
        Architecture::Gnn,
    ] {
        let settings = TrainSettings {
            ppo: PpoConfig::default(),
            total_steps: 4000, // 2 iterations
            seed: 0,
        };
        let t0 = Instant::now();
        let outcome = train(
            arch,
            AlphaMode::Learned,
            |seed| World::new(ScenarioConfig::new(Scenario::Spread, Asymmetry::None, seed)),
            &settings,
            &mut |log| {
                println!(
                    "  iter {} reward {:.2} alpha ({:.3},{:.3},{:.3})",
                    log.iteration, log.mean_reward, log.alpha.min, log.alpha.mean, log.alpha.max
                );
            },
        )
        .unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "{:?}: {:.2} s for 2 iterations ({:.2} s/iter), final reward {:.2}",
            arch,
            dt,
            dt / 2.0,
            outcome.logs.last().unwrap().mean_reward
        );
    }
}
