//! Running candidate programs in the child-process sandbox, including ones
//! that hang, exhaust memory or break the output contract.
//!
//! Uses a 3 s wall-clock limit so the demonstration finishes quickly.

use std::time::Duration;

use llmfe::program::{FeatureProgram, Provenance};
use llmfe::sandbox::{ExecutionLimits, Sandbox};
use llmfe::synthetic::{balance_scale, TORQUE_DIFFERENCE_PROGRAM};

fn program(body: &str) -> FeatureProgram {
    let source = format!("def modify_features_v1(df_input):\n{body}");
    FeatureProgram::new(source, 1, Provenance { island: None, iteration: None, parents: vec![] })
}

fn main() {
    let table = balance_scale().features;
    let sandbox = Sandbox::new("python3", ExecutionLimits::new(Duration::from_secs(3), 2 * 1024 * 1024 * 1024));
    let cases = [
        ("torque difference", FeatureProgram::new(TORQUE_DIFFERENCE_PROGRAM, 1, Provenance { island: None, iteration: None, parents: vec![] })),
        ("infinite loop", program("    while True:\n        pass\n")),
        ("4 GB allocation", program("    block = bytearray(4 * 1024 ** 3)\n    return df_input\n")),
        ("drops rows", program("    return df_input.head(10)\n")),
        ("raises", program("    raise RuntimeError('no idea')\n")),
    ];
    for (name, p) in cases {
        let out = sandbox.execute(&p, &table);
        match (out.table(), out.disqualification()) {
            (Some(t), _) => println!("{name:<18} ok in {:.2} s, columns {:?}", out.elapsed.as_secs_f64(), t.names()),
            (_, Some(d)) => println!("{name:<18} {} in {:.2} s: {}", d.reason, out.elapsed.as_secs_f64(), d.detail),
            _ => unreachable!(),
        }
    }
}
