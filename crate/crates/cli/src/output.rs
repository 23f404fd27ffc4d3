//! Text report and CSV artifacts. Column orders are part of the interface.

use std::fmt::Write as _;

use modbot_core::robustness::max_control;
use modbot_core::synthesis::SynthesisLog;
use modbot_core::{DesignResult, SynthesisOutcome};

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// `t,q1..qn,u1..un,x,y`; the final state has no control, so its `u` cells are empty.
pub fn trajectory_csv(d: &DesignResult) -> String {
    let n = d.n_links();
    let mut s = String::from("t");
    for i in 1..=n {
        write!(s, ",q{i}").unwrap();
    }
    for i in 1..=n {
        write!(s, ",u{i}").unwrap();
    }
    s.push_str(",x,y\n");
    for (j, p) in d.trajectory.iter().enumerate() {
        write!(s, "{}", p.t).unwrap();
        for q in &p.q {
            write!(s, ",{q}").unwrap();
        }
        match d.u.get(j) {
            Some(u) => u.iter().for_each(|v| write!(s, ",{v}").unwrap()),
            None => (0..n).for_each(|_| s.push(',')),
        }
        writeln!(s, ",{},{}", p.tip[0], p.tip[1]).unwrap();
    }
    s
}

/// `search,links,t,rho,acquisition,theta1..thetaM`, one row per robustness
/// evaluation; `M` is the largest link count searched, shorter rows padded.
pub fn history_csv(log: &SynthesisLog) -> String {
    let width = log.searches.iter().flat_map(|r| r.history.iter().map(|h| h.theta.len())).max().unwrap_or(0);
    let mut s = String::from("search,links,t,rho,acquisition");
    for i in 1..=width {
        write!(s, ",theta{i}").unwrap();
    }
    s.push('\n');
    for (k, rec) in log.searches.iter().enumerate() {
        for h in &rec.history {
            write!(s, "{},{},{},{},{}", k + 1, h.theta.len(), h.t, h.rho, num(h.acquisition)).unwrap();
            for i in 0..width {
                s.push(',');
                if let Some(v) = h.theta.get(i) {
                    write!(s, "{v}").unwrap();
                }
            }
            s.push('\n');
        }
    }
    s
}

pub fn report(outcome: &SynthesisOutcome) -> String {
    let log = outcome.log();
    let mut s = String::new();
    match outcome {
        SynthesisOutcome::Success(d) => {
            writeln!(s, "status: success").unwrap();
            writeln!(s, "structure: {}", d.word).unwrap();
            writeln!(s, "links: {}", d.n_links()).unwrap();
            let lengths: Vec<String> = d.theta.lengths.iter().map(|l| format!("{l:.4}")).collect();
            writeln!(s, "lengths: {}", lengths.join(", ")).unwrap();
            writeln!(s, "robustness: {}", d.rho).unwrap();
            writeln!(s, "path cells: {}", d.path.cells.len()).unwrap();
            writeln!(s, "max |u|: {:.6}", max_control(&d.u)).unwrap();
            writeln!(s, "bound: {}", d.config.robustness.u_bound).unwrap();
        }
        SynthesisOutcome::Unsynthesizable { reason, .. } => {
            writeln!(s, "status: unsynthesizable").unwrap();
            writeln!(s, "reason: {reason}").unwrap();
        }
    }
    writeln!(s, "paths tried: {}", log.paths_tried()).unwrap();
    writeln!(s, "blocks added: {}", log.blocks_added()).unwrap();
    writeln!(s, "structural steps: {}", log.structural_steps()).unwrap();
    s
}
