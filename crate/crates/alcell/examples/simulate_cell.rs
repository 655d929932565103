//! Simulate the electrolysis cell from one initial state, with the full
//! composition-dependent liquidus and with the ablated constant, and
//! compare where the two models drift apart.
//!
//! Run with: cargo run --example simulate_cell

use alcell::integrate::{simulate, ConstantPolicy};
use alcell::plant::{CellState, ControlInput, PlantConstants, PlantMode};

fn main() -> alcell::Result<()> {
    let consts = PlantConstants::default();
    let x0 = CellState {
        side_ledge: 3260.0,
        alumina: 443.0,
        fluoride: 1572.0,
        cryolite: 13750.0,
        metal: 10075.0,
        bath_temp: 970.0,
        ledge_temp: 820.0,
        wall_temp: 582.0,
    };
    // Constant line current and anode distance, no feeds or tapping.
    let inputs = ConstantPolicy(ControlInput {
        alumina_feed: 0.0,
        line_current: 1.4e4,
        fluoride_feed: 0.0,
        tapping: 0.0,
        anode_distance: 0.05,
    });

    let steps = 5000;
    let dt = 10.0;
    let full = simulate(&x0, &inputs, steps, dt, &consts, PlantMode::Full)?;
    let ablated = simulate(&x0, &inputs, steps, dt, &consts, PlantMode::Ablated)?;

    let out = std::path::Path::new("target/example_out");
    std::fs::create_dir_all(out)?;
    full.write_csv(&out.join("cell_full.csv"))?;
    ablated.write_csv(&out.join("cell_ablated.csv"))?;

    println!("hour |   liquidus |  bath temp | side ledge | ledge (ablated model)");
    for k in (0..=steps).step_by(900) {
        println!(
            "{:4.1} | {:10.2} | {:10.2} | {:10.1} | {:10.1}",
            k as f64 * dt / 3600.0,
            full.liquidus[k],
            full.states[k].bath_temp,
            full.states[k].side_ledge,
            ablated.states[k].side_ledge,
        );
    }

    let last = steps;
    println!(
        "\nafter {:.1} h: ledge-mass gap {:.0} kg, liquidus moved {:.2} C from the ablated constant",
        last as f64 * dt / 3600.0,
        (ablated.states[last].side_ledge - full.states[last].side_ledge).abs(),
        (full.liquidus[last] - consts.constant_liquidus).abs(),
    );
    println!("trajectories written to {}", out.display());
    Ok(())
}
