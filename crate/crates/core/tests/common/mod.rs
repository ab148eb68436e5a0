#![allow(dead_code)]

pub mod oracles;

use pdp_twin::labeling::{EventTrace, Signal, SignalBundle};
use pdp_twin::learner::sample_segments;
use pdp_twin::sha::dsl::parse_sha;
use pdp_twin::{compose_network, derive_seed, Sha};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Three affine locations with fixed points 400, 300 and 500 mL.
pub const PLANTED: &str = "\
automaton planted
var TV unit mL init 250
location L0 rate 1/15 flow TV a -0.05 b 20 noise 0.5
location L1 rate 1/15 flow TV a -0.25 b 75 noise 0.5
location L2 rate 1/15 flow TV a -0.45 b 225 noise 0.5
edge L0 -> L1 on TV^low!
edge L1 -> L2 on TV^high!
edge L2 -> L0 on TV^ok!
initial L0
";

pub const PLANTED_DYNAMICS: [(f64, f64); 3] = [(-0.05, 20.0), (-0.25, 75.0), (-0.45, 225.0)];

pub fn planted() -> Sha {
    parse_sha(PLANTED).unwrap()
}

/// One 1 Hz trace of the planted automaton with its event trace.
pub fn planted_trace(seed: u64, horizon: f64) -> (SignalBundle, EventTrace) {
    let net = compose_network(vec![planted()]).unwrap();
    let run = net.simulate(horizon, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let tv = sample_segments(&run.segments, 0, 0.0, horizon, 1.0);
    let mut b = SignalBundle::new();
    b.insert(Signal::new("TV", tv));
    let mut trace = EventTrace::default();
    for (t, e) in run.events(&net) {
        trace.push(t, e);
    }
    (b, trace)
}

pub fn planted_examples(n: usize, master: u64) -> Vec<(SignalBundle, EventTrace)> {
    (0..n).map(|i| planted_trace(derive_seed(master, i as u64), 60.0)).collect()
}
