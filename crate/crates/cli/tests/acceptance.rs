//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use tiltray_core::entropy::{entropy_bits, expected_finite_sample_entropy, rice_rule_trials, PoseHistogram};
use tiltray_core::experiment::{run_experiment, run_trial, ExperimentConfig, ExperimentSpec};
use tiltray_core::geometry::{world_vertices, Pose, RigidBody};

const BIN: &str = env!("CARGO_BIN_EXE_tiltray");

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tiltray(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "tiltray {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn config(toml: &str) -> ExperimentConfig {
    ExperimentSpec::parse(toml).unwrap().resolve(Path::new(".")).unwrap().remove(0)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .records()
        .map(Result::unwrap)
        .collect()
}

fn num(rec: &csv::StringRecord, i: usize) -> f64 {
    rec[i].parse().unwrap()
}

/// Runs a shipped recipe through the CLI; returns `(label, H0, final H)` rows
/// from its summary, the step-0 and final mean entropy, slopes, and the
/// largest penetration reported in the manifest.
struct RecipeRun {
    rows: Vec<(String, f64, f64, f64)>,
    mean_first: f64,
    mean_last: f64,
    max_penetration: f64,
}

fn run_recipe(name: &str, scratch: &Path) -> Result<RecipeRun, String> {
    let out = scratch.join(name);
    let recipe = repo_root().join("recipes").join(format!("{name}.toml"));
    tiltray(&["run", recipe.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    let rows = csv_rows(&out.join("summary.csv"))
        .iter()
        .map(|r| (r[0].to_string(), num(r, 1), num(r, 2), num(r, 4)))
        .collect();
    let agg = csv_rows(&out.join("aggregate.csv"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let max_penetration = manifest["experiments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["max_penetration_m"].as_f64().unwrap())
        .fold(0.0, f64::max);
    Ok(RecipeRun {
        rows,
        mean_first: num(&agg[0], 1),
        mean_last: num(agg.last().unwrap(), 1),
        max_penetration,
    })
}

fn within_budget(started: Instant, budget: Duration) -> (bool, String) {
    let took = started.elapsed();
    (took <= budget, format!("{:.1}s of {}s", took.as_secs_f64(), budget.as_secs()))
}

fn entropy_anchor() -> Outcome {
    let h = entropy_bits(&PoseHistogram::from_counts(vec![1; 27]));
    let err = (h - 27f64.log2()).abs();
    outcome(err <= 1e-9, format!("H = {h:.12}, |H - log2 27| = {err:.1e}"))
}

fn finite_sample_bias() -> Outcome {
    let t = Instant::now();
    let h = expected_finite_sample_entropy(500, 27, 1000, 0);
    let (fast, time) = within_budget(t, Duration::from_secs(5));
    outcome((4.70..=4.74).contains(&h) && fast, format!("E[H] = {h:.4} bits ({time})"))
}

fn rice_rule() -> Outcome {
    let (m27, m64) = (rice_rule_trials(27).trials, rice_rule_trials(64).trials);
    outcome(m27 == 2460 && m64 == 32768, format!("M(27) = {m27}, M(64) = {m64}"))
}

fn vertex_shift(body: &RigidBody, a: &Pose, b: &Pose) -> f64 {
    world_vertices(body, a)
        .iter()
        .zip(world_vertices(body, b))
        .map(|(p, q)| (*p - q).norm())
        .fold(0.0, f64::max)
}

fn statics(penetration: &mut f64) -> Outcome {
    let t = Instant::now();
    let sticky = |dir: u8| {
        config(&format!(
            "label = \"sticky\"\ntrials = 100\nmaster_seed = 4\n[shape]\npreset = \"allen-key\"\n[friction]\nmu = 0.7\n[sequence]\ndirections = [{dir}]\n"
        ))
    };
    let mut worst_shift = 0.0f64;
    for dir in 0..8 {
        let cfg = sticky(dir);
        let body = cfg.part().unwrap().body().clone();
        for k in 0..cfg.trials {
            let rec = run_trial(&cfg, k).unwrap();
            worst_shift = worst_shift.max(vertex_shift(&body, &rec.poses[0], &rec.poses[1]));
            *penetration = penetration.max(rec.max_penetration);
        }
    }

    let slippery = config(
        "label = \"slippery\"\ntrials = 1000\nmaster_seed = 5\n[shape]\npreset = \"allen-key\"\n[friction]\nmu = 0.3\n[sequence]\ndirections = [0]\n",
    );
    let body = slippery.part().unwrap().body().clone();
    let result = run_experiment(&slippery).unwrap();
    *penetration = penetration.max(result.max_penetration());
    let gap = |pose: &Pose| {
        let reach = world_vertices(&body, pose).iter().map(|v| v.x).fold(f64::MIN, f64::max);
        slippery.tray.a - reach
    };
    let worst_gap = result.records.iter().map(|r| gap(&r.poses[1])).fold(0.0f64, f64::max);
    let unsettled = result.unsettled_tilts();
    let (fast, time) = within_budget(t, Duration::from_secs(120));
    outcome(
        worst_shift < 1e-4 && worst_gap <= 1e-3 && unsettled == 0 && result.failures.is_empty() && fast,
        format!(
            "mu 0.7: largest shift {:.3} mm over 800 tilts; mu 0.3: farthest {:.3} mm from the right wall, {unsettled} unsettled of 1000 ({time})",
            worst_shift * 1e3,
            worst_gap * 1e3
        ),
    )
}

fn kruskal(scratch: &Path, penetration: &mut f64) -> Outcome {
    let t = Instant::now();
    let run = match run_recipe("recipe_a_desk", scratch) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    *penetration = penetration.max(run.max_penetration);
    let below_one = run.rows.iter().filter(|r| r.2 < 1.0).count();
    let all_negative = run.rows.iter().all(|r| r.3 < 0.0);
    let (fast, time) = within_budget(t, Duration::from_secs(600));
    outcome(
        run.mean_last < 0.25 * run.mean_first && below_one >= 5 && all_negative && fast,
        format!(
            "mean H50 {:.3} vs H0 {:.3}; {below_one}/{} sequences below 1 bit; all slopes negative: {all_negative} ({time})",
            run.mean_last,
            run.mean_first,
            run.rows.len()
        ),
    )
}

fn shape_generality(scratch: &Path, penetration: &mut f64) -> Outcome {
    let t = Instant::now();
    let run = match run_recipe("recipe_b_desk", scratch) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    *penetration = penetration.max(run.max_penetration);
    let converged = run.rows.iter().filter(|r| r.2 < 1.5).count();
    let worst = run.rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let (fast, time) = within_budget(t, Duration::from_secs(900));
    outcome(
        converged >= 10 && fast,
        format!("{converged}/{} triangles below 1.5 bits, worst {worst:.3} ({time})", run.rows.len()),
    )
}

fn friction_ordering(scratch: &Path, penetration: &mut f64) -> Outcome {
    let t = Instant::now();
    let run = match run_recipe("recipe_c_desk", scratch) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    *penetration = penetration.max(run.max_penetration);
    let mean = |class: &str| {
        let v: Vec<f64> = run.rows.iter().filter(|r| r.0.starts_with(class)).map(|r| r.2).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (low, medium, high) = (mean("low-"), mean("medium-"), mean("high-"));
    let (fast, time) = within_budget(t, Duration::from_secs(600));
    outcome(
        low <= medium && medium <= high && low < 1.0 && high > low + 0.5 && fast,
        format!("mean final H: low {low:.3}, medium {medium:.3}, high {high:.3} ({time})"),
    )
}

const SMALL_STUDY: &str = r#"label = "determinism"
trials = 120
master_seed = 77

[shape]
preset = "allen-key"

[friction]
level = "low"
seed = 2

[sequence]
n = 12
seed = 3
"#;

fn determinism(scratch: &Path) -> Outcome {
    let t = Instant::now();
    let cfg = scratch.join("determinism.toml");
    std::fs::write(&cfg, SMALL_STUDY).unwrap();
    let mut reference: Option<(Vec<u8>, Vec<u8>)> = None;
    let mut runs = 0;
    for (i, workers) in ["1", "1", "4", "8"].iter().enumerate() {
        let out = scratch.join(format!("det-{i}"));
        if let Err(e) = tiltray(&["run", cfg.to_str().unwrap(), "--workers", workers, "--out", out.to_str().unwrap()]) {
            return outcome(false, e);
        }
        let files = (
            std::fs::read(out.join("trend.csv")).unwrap(),
            std::fs::read(out.join("trials.csv")).unwrap(),
        );
        match &reference {
            None => reference = Some(files),
            Some(r) if *r != files => {
                return outcome(false, format!("run {i} with {workers} workers differs from the first run"))
            }
            Some(_) => {}
        }
        runs += 1;
    }
    let (fast, time) = within_budget(t, Duration::from_secs(300));
    outcome(fast, format!("{runs} runs (workers 1, 1, 4, 8) byte-identical ({time})"))
}

/// 100 single tilts of the allen key from sampled starts, 12 or 13 per
/// heading, each simulated at the default step and at half of it.
fn dt_halving(penetration: &mut f64) -> (Outcome, f64) {
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut eps_p = f64::NAN;
    for dir in 0..8u8 {
        let base = config(&format!(
            "label = \"dt\"\ntrials = 100\nmaster_seed = 9\n[shape]\npreset = \"allen-key\"\n[friction]\nlevel = \"low\"\nseed = 1\n[sequence]\ndirections = [{dir}]\n"
        ));
        eps_p = base.grid.eps_p();
        let mut fine = base.clone();
        fine.params.dt /= 2.0;
        for k in (usize::from(dir)..100).step_by(8) {
            let (a, b) = (run_trial(&base, k).unwrap(), run_trial(&fine, k).unwrap());
            *penetration = penetration.max(a.max_penetration).max(b.max_penetration);
            if a.settled[0] && b.settled[0] {
                let (p, q) = (a.poses[1], b.poses[1]);
                worst = worst.max((p.position() - q.position()).norm());
                compared += 1;
            }
        }
    }
    let limit = eps_p / 10.0;
    (
        outcome(
            worst < limit && compared == 100,
            format!("{compared}/100 cases settled at both steps, largest shift {:.3} mm (limit {:.1} mm)", worst * 1e3, limit * 1e3),
        ),
        worst,
    )
}

fn round_trip(scratch: &Path) -> Outcome {
    let t = Instant::now();
    let run_dir = scratch.join("det-0");
    let again = scratch.join("round-trip.csv");
    if let Err(e) = tiltray(&[
        "entropy",
        run_dir.join("trials.csv").to_str().unwrap(),
        "--grid",
        "4x4x4",
        "--tray",
        "0.2x0.2",
        "--out",
        again.to_str().unwrap(),
    ]) {
        return outcome(false, e);
    }
    let same = std::fs::read(run_dir.join("trend.csv")).ok() == std::fs::read(&again).ok();
    let (fast, time) = within_budget(t, Duration::from_secs(60));
    outcome(same && fast, format!("entropy of trials.csv equals trend.csv byte for byte: {same} ({time})"))
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let mut penetration = 0.0f64;
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("[{}] {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    report(1, "entropy anchor", entropy_anchor());
    report(2, "finite-sample bias", finite_sample_bias());
    report(3, "rice rule", rice_rule());
    report(4, "statics", statics(&mut penetration));
    report(5, "kruskal effect", kruskal(scratch.path(), &mut penetration));
    report(6, "shape generality", shape_generality(scratch.path(), &mut penetration));
    report(7, "friction ordering", friction_ordering(scratch.path(), &mut penetration));
    report(8, "determinism", determinism(scratch.path()));
    let (halving, _) = dt_halving(&mut penetration);
    report(
        9,
        "numerical robustness",
        outcome(
            halving.pass && penetration <= 2e-3,
            format!("{}; max penetration {:.3} mm", halving.detail, penetration * 1e3),
        ),
    );
    report(10, "round trip", round_trip(scratch.path()));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
