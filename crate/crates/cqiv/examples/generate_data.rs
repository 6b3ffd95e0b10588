//! Writes a simulated censored dataset to CSV, ready for the `cqiv` CLI.
//!
//! ```text
//! cargo run -p cqiv --release --example generate_data -- out.csv [n] [seed] [het]
//! ```
//!
//! The printed censoring point is the value to pass as `--c-value`.

use cqiv::rng::master_rng;
use cqiv::sim::{generate_design, McDesign};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).cloned().unwrap_or_else(|| "cqiv_data.csv".to_string());
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(42);
    let het = args.get(4).map(|s| s == "het").unwrap_or(false);

    let design = if het {
        McDesign::heteroskedastic(n, seed)
    } else {
        McDesign::homoskedastic(n, seed)
    };
    let mut rng = master_rng(seed);
    let (data, truth) = generate_design(&design, &mut rng);

    let mut out = String::from("y,d,w1,z1\n");
    for i in 0..data.n() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            data.y()[i],
            data.d()[i],
            data.w_cols()[0][i],
            data.z_cols()[0][i]
        ));
    }
    std::fs::write(&path, out).expect("write dataset");
    println!("wrote {} rows to {path}", data.n());
    println!("censoring point: {}", truth.censor_point);
    println!("true coefficients: d = 1, w1 = 1, control (after Phi^-1 transform) = 0.9");
}
