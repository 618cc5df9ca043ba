//! Golden files for `analyze` and `normalize`, produced by calling the
//! library directly with the CLI's default options.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srn_core::fmt::sig;
use srn_core::linalg::{spectral_norm, stable_rank_with};
use srn_core::{
    frobenius_norm, matfile, numerical_rank, spectral_clip_counted, srn_greedy, srn_optimal,
    truncate_rank, DenseMatrix, PowerOptions, SrnConfig,
};

pub fn srn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_srn"))
}

pub fn run(args: &[&str]) -> Output {
    srn().args(args).output().expect("spawn srn")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
}

/// The CLI defaults: `--tol 1e-10 --max-iter 10000 --seed 0`.
pub fn cli_opts() -> PowerOptions {
    PowerOptions {
        tol: 1e-10,
        max_iter: 10_000,
        seed: 0,
    }
}

pub fn inputs() -> Vec<(&'static str, DenseMatrix)> {
    let h = 0.5f64.sqrt();
    vec![
        ("identity3", DenseMatrix::identity(3)),
        ("w2", DenseMatrix::from_diag(&[1.0, h, h])),
        ("random8x6", DenseMatrix::random_normal(8, 6, 7)),
        ("random5x9", DenseMatrix::random_normal(5, 9, 21)),
        // stable rank 3.55
        (
            "spectrum8x6",
            DenseMatrix::with_spectrum(8, 6, &[2.0, 1.8, 1.6, 1.4, 1.2, 1.0], 7).unwrap(),
        ),
    ]
}

pub fn analyze_expected(w: &DenseMatrix) -> String {
    let opts = cli_opts();
    let frob = frobenius_norm(w);
    let s1 = spectral_norm(w, &opts).unwrap();
    format!(
        "frobenius={} sigma1={} srank={} rank_est={}\n",
        sig(frob, 12),
        sig(s1, 12),
        sig((frob / s1).powi(2), 12),
        numerical_rank(w, &opts).unwrap()
    )
}

pub struct NormalizeCase {
    pub name: &'static str,
    pub input: &'static str,
    pub args: Vec<&'static str>,
}

pub fn normalize_cases() -> Vec<NormalizeCase> {
    let case = |name, input, args: &[&'static str]| NormalizeCase {
        name,
        input,
        args: args.to_vec(),
    };
    vec![
        case(
            "identity3_srn_optimal_r2_k1",
            "identity3",
            &["--mode", "srn-optimal", "--r", "2", "--k", "1"],
        ),
        case(
            "identity3_srn_optimal_r2_k0",
            "identity3",
            &["--mode", "srn-optimal", "--r", "2", "--k", "0"],
        ),
        case(
            "spectrum8x6_srn_optimal_c0.4_k2",
            "spectrum8x6",
            &["--mode", "srn-optimal", "--c", "0.4", "--k", "2"],
        ),
        case(
            "spectrum8x6_srn_greedy_r2.5_k3",
            "spectrum8x6",
            &["--mode", "srn-greedy", "--r", "2.5", "--k", "3"],
        ),
        case("spectrum8x6_sn", "spectrum8x6", &["--mode", "sn"]),
        case(
            "spectrum8x6_clip_s1.5",
            "spectrum8x6",
            &["--mode", "clip", "--s", "1.5"],
        ),
        case(
            "random5x9_truncate_t2",
            "random5x9",
            &["--mode", "truncate", "--t", "2"],
        ),
    ]
}

fn flag<'a>(args: &[&'a str], name: &str) -> Option<&'a str> {
    args.iter().position(|a| *a == name).map(|i| args[i + 1])
}

/// Library result for a case: output matrix and report line.
pub fn normalize_expected(case: &NormalizeCase, w: &DenseMatrix) -> (DenseMatrix, String) {
    let opts = cli_opts();
    let a = &case.args;
    let num = |n: &str| flag(a, n).map(|v| v.parse::<f64>().unwrap());
    let k = flag(a, "--k").map_or(1, |v| v.parse().unwrap());
    let cfg = || match (num("--r"), num("--c")) {
        (Some(r), _) => SrnConfig::with_rank(r, k).unwrap(),
        (_, Some(c)) => SrnConfig::with_ratio(c, k).unwrap(),
        _ => unreachable!(),
    };
    let dist = |m: &DenseMatrix| frobenius_norm(&(w - m));
    let srank = |m: &DenseMatrix| stable_rank_with(m, &opts).unwrap();
    let (out, g1, g2, sr, fd, l) = match flag(a, "--mode").unwrap() {
        "srn-optimal" => {
            let (o, r) = srn_optimal(w, &cfg(), &opts).unwrap();
            (
                o,
                r.gamma1,
                r.gamma2,
                r.achieved_srank,
                r.frobenius_distance,
                r.achieved_l,
            )
        }
        "srn-greedy" => {
            let (o, r) = srn_greedy(w, cfg().target_for(w), k, &opts).unwrap();
            (
                o,
                r.gamma1,
                r.gamma2,
                r.achieved_srank,
                r.frobenius_distance,
                r.achieved_l,
            )
        }
        "sn" => {
            let g = 1.0 / spectral_norm(w, &opts).unwrap();
            let o = w.scale(g);
            let (s, d) = (srank(&o), dist(&o));
            (o, g, g, s, d, 0)
        }
        "clip" => {
            let s = num("--s").unwrap();
            let s1 = spectral_norm(w, &opts).unwrap();
            let (o, n) = spectral_clip_counted(w, s, &opts).unwrap();
            let g1 = if n > 0 { s / s1 } else { 1.0 };
            let (sr, d) = (srank(&o), dist(&o));
            (o, g1, 1.0, sr, d, n)
        }
        "truncate" => {
            let t: usize = flag(a, "--t").unwrap().parse().unwrap();
            let o = truncate_rank(w, t, &opts).unwrap();
            let (sr, d) = (srank(&o), dist(&o));
            (o, 1.0, 0.0, sr, d, t)
        }
        m => panic!("unknown mode {m}"),
    };
    let line = format!(
        "gamma1={} gamma2={} srank={} fro_dist={} l={}\n",
        sig(g1, 12),
        sig(g2, 12),
        sig(sr, 12),
        sig(fd, 12),
        l
    );
    (out, line)
}

/// Writes every input, expected stdout and expected output matrix.
pub fn write_goldens() {
    let dir = golden_dir();
    fs::create_dir_all(&dir).unwrap();
    for (name, w) in inputs() {
        matfile::write(dir.join(format!("{name}.srnmat")), &w).unwrap();
        fs::write(
            dir.join(format!("analyze_{name}.out")),
            analyze_expected(&w),
        )
        .unwrap();
    }
    for case in normalize_cases() {
        let w = matfile::read(dir.join(format!("{}.srnmat", case.input))).unwrap();
        let (out, line) = normalize_expected(&case, &w);
        matfile::write(dir.join(format!("normalize_{}.srnmat", case.name)), &out).unwrap();
        fs::write(dir.join(format!("normalize_{}.out", case.name)), line).unwrap();
    }
}

/// Runs the CLI on every golden case and compares bytes. Returns the number
/// of files compared or a description of the first mismatch.
pub fn check_goldens() -> Result<usize, String> {
    let dir = golden_dir();
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let mut compared = 0;
    for (name, w) in inputs() {
        let input = dir.join(format!("{name}.srnmat"));
        if read(input.clone())? != matfile::to_string(&w).into_bytes() {
            return Err(format!("{name}.srnmat differs from its generator"));
        }
        let o = run(&["analyze", "--in", input.to_str().unwrap()]);
        if !o.status.success() {
            return Err(format!("analyze {name}: exit {:?}", o.status.code()));
        }
        if o.stdout != read(dir.join(format!("analyze_{name}.out")))? {
            return Err(format!("analyze {name}: stdout {:?}", stdout(&o)));
        }
        compared += 1;
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in normalize_cases() {
        let input = dir.join(format!("{}.srnmat", case.input));
        let out = tmp.path().join(format!("{}.srnmat", case.name));
        let mut args = vec![
            "normalize",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend(&case.args);
        let o = run(&args);
        if !o.status.success() {
            return Err(format!(
                "normalize {}: exit {:?}",
                case.name,
                o.status.code()
            ));
        }
        if o.stdout != read(dir.join(format!("normalize_{}.out", case.name)))? {
            return Err(format!("normalize {}: stdout {:?}", case.name, stdout(&o)));
        }
        if read(out)? != read(dir.join(format!("normalize_{}.srnmat", case.name)))? {
            return Err(format!("normalize {}: output matrix differs", case.name));
        }
        compared += 2;
    }
    Ok(compared)
}

/// `(args, expected exit code)` pairs covering every code of the contract.
pub fn exit_code_cases(dir: &Path) -> Vec<(Vec<String>, i32)> {
    let g = golden_dir();
    let p = |name: &str| g.join(name).to_str().unwrap().to_string();
    let bad = dir.join("bad.srnmat");
    fs::write(&bad, "srnmat 1\n2 2\n1 2\n3 x\n").unwrap();
    let bad = bad.to_str().unwrap().to_string();
    let out = dir.join("o.srnmat").to_str().unwrap().to_string();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        (s(&["analyze", "--in", &p("identity3.srnmat")]), 0),
        (s(&["verify", "--suite", "monotonicity", "--n", "5"]), 0),
        (s(&["analyze", "--in", &bad]), 2),
        (s(&["analyze", "--in", &p("missing.srnmat")]), 2),
        (s(&["elhist", "--model", &p("no-such-snapshot")]), 2),
        (s(&["train", "--data", "blobs:10,2", "--epochs", "1"]), 2),
        // r = 1.2 is below ||S1||^2 / sigma1^2 = 2 when the top two are kept
        (
            s(&[
                "normalize",
                "--in",
                &p("identity3.srnmat"),
                "--out",
                &out,
                "--mode",
                "srn-optimal",
                "--r",
                "1.2",
                "--k",
                "2",
            ]),
            3,
        ),
        (s(&["verify", "--suite", "bogus"]), 4),
        (
            s(&["analyze", "--in", &p("identity3.srnmat"), "--bogus-flag"]),
            4,
        ),
        (
            s(&[
                "normalize",
                "--in",
                &p("identity3.srnmat"),
                "--out",
                &out,
                "--mode",
                "clip",
            ]),
            4,
        ),
        (s(&["frobnicate"]), 4),
    ]
}
