//! Runs the full synthesis loop on the planar pick-and-place scenario and
//! prints the audit log followed by the certified design.

use modbot_core::case_study;
use modbot_core::robustness::max_control;
use modbot_core::synthesis::{correct_by_construction, SynthesisConfig};
use modbot_core::{Srg, SynthesisOutcome};

fn main() -> Result<(), modbot_core::Error> {
    let cfg = SynthesisConfig { cell: case_study::CELL, robustness: case_study::robustness_config(), ..Default::default() };
    let outcome = correct_by_construction(&Srg::manipulator(), &case_study::workspace(), &cfg)?;
    print!("{}", outcome.log().to_jsonl());
    match outcome {
        SynthesisOutcome::Success(d) => {
            println!("structure {}", d.word);
            println!("lengths {:?}", d.theta.lengths);
            println!("robustness {} over {} cells, max |u| {:.3}", d.rho, d.path.cells.len(), max_control(&d.u));
        }
        SynthesisOutcome::Unsynthesizable { reason, .. } => println!("unsynthesizable: {reason}"),
    }
    Ok(())
}
