use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wolcan::simgen::{poisson_sample, simulate_population, PopulationConfig};

fn wolcan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wolcan"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_samples(dir: &Path) {
    let pop = simulate_population(
        &PopulationConfig {
            size: 6_000,
            ..PopulationConfig::default()
        },
        5,
    )
    .unwrap();
    let nps = poisson_sample(&pop.selection.pi_b, 1);
    let ps = poisson_sample(&pop.selection.pi_r, 2);
    let c = &pop.covariates;
    let mut s = String::from("id,a1,a2,a3,y");
    for j in 1..=pop.items.nitems() {
        write!(s, ",item{j}").unwrap();
    }
    s.push('\n');
    for &i in &nps {
        write!(
            s,
            "{i},{},{},{},{}",
            c.a1[i],
            c.a2[i],
            c.a3[i],
            u8::from(i % 3 == 0)
        )
        .unwrap();
        for &v in pop.items.row(i) {
            write!(s, ",{}", v + 1).unwrap();
        }
        s.push('\n');
    }
    fs::write(dir.join("nps.csv"), s).unwrap();
    let mut p = String::from("a1,a2,a3,inclusion\n");
    for &i in &ps {
        writeln!(
            p,
            "{},{},{},{}",
            c.a1[i], c.a2[i], c.a3[i], pop.selection.pi_r[i]
        )
        .unwrap();
    }
    fs::write(dir.join("ps.csv"), p).unwrap();
}

#[test]
fn csv_workflow_from_weights_to_odds_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_samples(dir);
    fs::write(
        dir.join("bart.toml"),
        "[propensity]\nburn_in = 30\nnum_trees = 20\n[inclusion]\nburn_in = 30\nnum_trees = 40\n",
    )
    .unwrap();
    ok(&wolcan(
        &[
            "estimate-weights",
            "--nps",
            "nps.csv",
            "--ps",
            "ps.csv",
            "--aux",
            "a1,a2,a3",
            "--draws",
            "40",
            "--select",
            "3",
            "--config",
            "bart.toml",
            "--out",
            "weights.csv",
        ],
        dir,
    ));
    let weights = fs::read_to_string(dir.join("weights.csv")).unwrap();
    assert!(weights.starts_with("id,mean,w1,w2,w3\n"));

    fs::write(
        dir.join("lca.toml"),
        "k_max = 6\n[adaptive]\niterations = 400\nburn_in = 200\nthin = 2\n[fixed]\niterations = 400\nburn_in = 100\nthin = 1\n",
    )
    .unwrap();
    ok(&wolcan(
        &[
            "fit-wolcan",
            "--items",
            "nps.csv",
            "--weights",
            "weights.csv",
            "--no-adjust",
            "--config",
            "lca.toml",
            "--out",
            "lca",
        ],
        dir,
    ));
    for f in ["estimates.csv", "classes.csv", "manifest.json"] {
        assert!(dir.join("lca").join(f).exists(), "{f} missing");
    }
    let est = fs::read_to_string(dir.join("lca/estimates.csv")).unwrap();
    assert!(est.starts_with("parameter,class,item,level,estimate,lower,upper\n"));

    fs::write(dir.join("logit.toml"), "iterations = 800\nburn_in = 300\n").unwrap();
    ok(&wolcan(
        &[
            "fit-outcome",
            "--data",
            "nps.csv",
            "--outcome",
            "y",
            "--classes",
            "lca/classes.csv",
            "--confounders",
            "a1",
            "--weights",
            "weights.csv",
            "--config",
            "logit.toml",
            "--out",
            "or.csv",
        ],
        dir,
    ));
    let or = fs::read_to_string(dir.join("or.csv")).unwrap();
    assert!(or.starts_with("term,odds_ratio,lower,upper,direction_probability\nIntercept,"));
    assert!(or.contains("\na1,"));
}

#[test]
fn reports_rebuild_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("s.toml"),
        "population_size = 3000\nnum_draws = 30\nnum_weight_draws = 3\nbart_burn_in = 20\n\
         roster = [{kind = \"nomodel\"}, {kind = \"logreg\", missing = true}]\n",
    )
    .unwrap();
    ok(&wolcan(
        &[
            "simulate-weights",
            "--scenario",
            "1A",
            "--replicates",
            "2",
            "--config",
            "s.toml",
            "--out",
            "a",
        ],
        dir,
    ));
    ok(&wolcan(
        &[
            "--sequential",
            "simulate-weights",
            "--scenario",
            "1A",
            "--replicates",
            "2",
            "--config",
            "s.toml",
            "--out",
            "b",
        ],
        dir,
    ));
    ok(&wolcan(&["report", "--input", "a", "--out", "c"], dir));
    for f in ["table1_weights.csv", "replicates.csv", "weight_bias.svg"] {
        let a = fs::read(dir.join("a").join(f)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f} differs between runs"
        );
        assert_eq!(
            a,
            fs::read(dir.join("c").join(f)).unwrap(),
            "{f} differs after rebuild"
        );
    }
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = wolcan(&["simulate-lca", "--scenario", "9Z", "--out", "x"], dir);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown scenario"));
    assert!(
        !wolcan(&["simulate-lca", "--scenario", "1A", "--out", "x"], dir)
            .status
            .success()
    );
    assert!(!wolcan(&["fit-wolcan", "--items", "missing.csv"], dir)
        .status
        .success());
    assert!(!wolcan(&["report", "--input", "."], dir).status.success());
}
