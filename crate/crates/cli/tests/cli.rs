use std::path::Path;
use std::process::{Command, Output};

fn svrg(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svrg"))
        .args(args)
        .env("SVRG_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_then_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("exp.cfg");
    std::fs::write(&spec, "synth = 60,4,1\nlambda = 1e-2\nmethods = SVRG\ngrid = 0.1\nepochs = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = svrg(
        &[
            "run",
            "--spec",
            spec.to_str().unwrap(),
            "--methods",
            "SVRG,SVRG-2BB",
            "--epochs",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("SVRG-2BB"), "{stdout}");

    // Command-line epochs override the file.
    let run = std::fs::read_dir(out.join("runs")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(std::fs::read_to_string(run).unwrap().lines().count(), 4);

    let regen = dir.path().join("regen");
    let o = svrg(&["plot", "--from", out.to_str().unwrap(), "--out", regen.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    for entry in std::fs::read_dir(&regen).unwrap() {
        let p = entry.unwrap().path();
        let original = out.join("plots").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(original).unwrap());
    }
}

#[test]
fn reference_uses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.svm");
    let o = svrg(&["synth", "--n", "50", "--d", "3", "--seed", "2", "--out", data.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let args = ["reference", "--data", data.to_str().unwrap(), "--lambda", "0.01", "--tol", "1e-10"];
    let first = svrg(&args, dir.path());
    assert!(first.status.success(), "{}", text(&first));
    let cached = std::fs::read_dir(dir.path()).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x != "svm")
    });
    assert_eq!(cached.count(), 1);
    let second = svrg(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("f_star = "));
}

#[test]
fn errors_map_to_categories() {
    let dir = tempfile::tempdir().unwrap();
    let o = svrg(&["run", "--synth", "20,2,1", "--methods", "SVRG-9"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("error[config]"));

    let o = svrg(&["run"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.svm");
    std::fs::write(&bad, "+1 1:0.5\n-1 3:x\n").unwrap();
    let o = svrg(&["run", "--data", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert!(text(&o).contains("line 2"));

    let o = svrg(&["plot", "--from", dir.path().join("missing").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(6), "{}", text(&o));

    let spec = dir.path().join("x.cfg");
    std::fs::write(&spec, "synth = 5,2,1\ncolour = red\n").unwrap();
    let o = svrg(&["run", "--spec", spec.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("line 2"));
}
