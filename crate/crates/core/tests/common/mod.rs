#![allow(dead_code)]

use gridflow::{parse_case, PowerSystem, StateVector};
use rand::Rng;

pub fn case_path(name: &str) -> String {
    format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> PowerSystem {
    let text = std::fs::read_to_string(case_path(name)).expect("case fixture");
    PowerSystem::new(parse_case(&text).expect("valid case")).expect("valid system")
}

/// Random state with the slack pinned to its reference values.
pub fn random_state<R: Rng>(sys: &PowerSystem, rng: &mut R) -> StateVector {
    let n = sys.n_buses();
    let slack = sys.case.bus_sets.slack;
    let mut vm: Vec<f64> = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let mut va: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    vm[slack] = sys.case.voltage_setpoint(slack);
    va[slack] = sys.case.slack_angle();
    StateVector { vm, va }
}
