#![allow(dead_code)]

use std::path::{Path, PathBuf};

use boop_cli::commands::{run, Command, Invocation, Manifest};
use boop_cli::config::Overrides;
use boop_cli::error::CliError;
use boop_core::seeded_rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Persistent trivariate VAR(1) around means (2, 1, 3), written as a quarterly CSV.
pub fn write_var_csv(path: &Path, t: usize, seed: u64) {
    let a = [[0.9, 0.3, 0.0], [0.0, 0.9, 0.3], [0.0, 0.0, 0.9]];
    let mu = [2.0, 1.0, 3.0];
    let mut rng = seeded_rng(seed, 0);
    let mut y = mu;
    let mut text = String::from("gdp,infl,rate\n");
    for _ in 0..t + 50 {
        let dev: Vec<f64> = (0..3).map(|i| y[i] - mu[i]).collect();
        let mut next = [0.0; 3];
        for i in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            next[i] = mu[i] + (0..3).map(|j| a[i][j] * dev[j]).sum::<f64>() + 0.5 * e;
        }
        y = next;
        text.push_str(&format!("{},{},{}\n", y[0], y[1], y[2]));
    }
    // drop the first 50 rows as burn-in of the simulated process
    let body: Vec<&str> = text.lines().collect();
    let kept = std::iter::once(body[0]).chain(body[51..].iter().copied()).collect::<Vec<_>>().join("\n") + "\n";
    std::fs::write(path, kept).unwrap();
}

/// Configuration for the BVAR objective on `data` with budgets small enough for tests.
pub fn small_bvar_config(data: &Path, iterations: usize) -> String {
    format!(
        r#"seed = 7
objective = "bvar"
data = "{}"

[optimizer]
g_min = 1000
burn = 300
batch = 100
g_max = 2000
iterations = {iterations}
j0 = 2
fit_starts = 4

[model]
lags = 2

[[model.columns]]
name = "gdp"
psi_mean = 2.0
psi_sd = 1.0

[[model.columns]]
name = "infl"
psi_mean = 1.0
psi_sd = 1.0

[[model.columns]]
name = "rate"
psi_mean = 3.0
psi_sd = 1.0
"#,
        data.display()
    )
}

pub fn invoke(command: Command, config: Option<PathBuf>, overrides: Overrides, out: &Path) -> Result<Manifest, CliError> {
    run(&Invocation { command, config, overrides, out: out.to_path_buf() })
}

pub fn read_tsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split('\t').map(String::from).collect();
    let rows = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
    (header, rows)
}

/// Every file in `dir`, sorted by name, with its contents.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}
