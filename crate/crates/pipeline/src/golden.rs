//! The bundled synthetic process used by the end-to-end tests and as a
//! worked example.
//!
//! Six true inputs drive two competing objectives:
//!
//! - `yield = 60 + 25·u₁ + 12·u₂ − 30·(u₃ − 0.75)² − 30·(u₅ − 0.8)²`
//! - `uniformity = 70 − 20·u₁² − 12·u₂ − 30·(u₄ − 0.25)² + 10·u₆`
//!
//! where `uᵢ` is the input scaled to `[0, 1]` over its declared bounds, plus
//! Gaussian noise with σ = 0.5. Fourteen decoy inputs carry no signal. The
//! raw files also plant the artifacts cleaning must handle: a constant
//! column, a column fixed by a ratio rule, an affine copy of the
//! temperature in Fahrenheit, a column present in only one source, rows
//! outside a bound rule, outliers, replicate groups and a missing output.
//!
//! The files under `fixtures/golden/` are the output of [`generate`].

use std::fmt::Write;

use procopt_core::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const GOLDEN_SEED: u64 = 7;
pub const NOISE_SD: f64 = 0.5;
pub const N_DECOYS: usize = 14;
pub const ROWS_A: usize = 120;
pub const ROWS_B: usize = 80;

/// True inputs: name, lower bound, upper bound, integer.
pub const TRUE_INPUTS: [(&str, f64, f64, bool); 6] = [
    ("temp", 600.0, 800.0, false),
    ("pressure", 10.0, 50.0, false),
    ("flow_a", 20.0, 100.0, false),
    ("time", 30.0, 120.0, true),
    ("power", 100.0, 500.0, false),
    ("rotation", 0.0, 20.0, false),
];

/// Scaled optimum of each true input; `None` where the objectives trade off.
pub const OPTIMUM_UNIT: [Option<f64>; 6] = [None, None, Some(0.75), Some(0.25), Some(0.8), Some(1.0)];

/// Upper limit of `flow_a` imposed by the bound rule.
pub const FLOW_A_LIMIT: f64 = 90.0;
pub const CHAMBER: f64 = 7.0;
pub const RATIO_RULE: &str = "flow_b / flow_a = 0.5";
pub const BOUND_RULE: &str = "20 <= flow_a <= 90";
pub const RULE_TOLERANCE: f64 = 1e-6;

pub fn truth(u: &[f64; 6]) -> [f64; 2] {
    let y1 = 60.0 + 25.0 * u[0] + 12.0 * u[1] - 30.0 * (u[2] - 0.75).powi(2) - 30.0 * (u[4] - 0.8).powi(2);
    let y2 = 70.0 - 20.0 * u[0] * u[0] - 12.0 * u[1] - 30.0 * (u[3] - 0.25).powi(2) + 10.0 * u[5];
    [y1, y2]
}

/// Native value of a true input for a scaled coordinate.
pub fn native(i: usize, u: f64) -> f64 {
    let (_, lo, hi, _) = TRUE_INPUTS[i];
    lo + (hi - lo) * u
}

/// Scaled coordinate of a true input's native value.
pub fn unit(i: usize, v: f64) -> f64 {
    let (_, lo, hi, _) = TRUE_INPUTS[i];
    (v - lo) / (hi - lo)
}

pub fn decoy_name(i: usize) -> String {
    format!("aux_{:02}", i + 1)
}

pub struct GoldenFiles {
    pub config: String,
    pub line_a: String,
    pub line_b: String,
}

struct Row {
    inputs: [f64; 6],
    decoys: Vec<f64>,
    shift: f64,
    outputs: [Option<f64>; 3],
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn make_row(rng: &mut seed::Rng, noise: &Normal<f64>, inputs: [f64; 6], decoys: Vec<f64>) -> Row {
    let mut u = [0.0; 6];
    for i in 0..6 {
        u[i] = unit(i, inputs[i]);
    }
    let [y1, y2] = truth(&u);
    let thickness = 100.0 + 50.0 * u[1] + noise.sample(rng);
    Row {
        inputs,
        decoys,
        shift: rng.random_range(1..=3) as f64,
        outputs: [Some(y1 + noise.sample(rng)), Some(y2 + noise.sample(rng)), Some(thickness)],
    }
}

fn sample_inputs(rng: &mut seed::Rng) -> [f64; 6] {
    let mut x = [0.0; 6];
    for (i, &(_, lo, hi, integer)) in TRUE_INPUTS.iter().enumerate() {
        let hi = if i == 2 { FLOW_A_LIMIT } else { hi };
        let v = rng.random_range(lo..=hi);
        x[i] = if integer { v.round() } else { v };
    }
    x
}

fn rows() -> Vec<Row> {
    let mut rng = seed::rng(seed::derive(GOLDEN_SEED, "golden"));
    let noise = Normal::new(0.0, NOISE_SD).expect("valid noise");
    let total = ROWS_A + ROWS_B;
    let mut rows: Vec<Row> = Vec::with_capacity(total);
    while rows.len() < total {
        let x = sample_inputs(&mut rng);
        let decoys = (0..N_DECOYS).map(|_| rng.random_range(0.0..1.0)).collect();
        rows.push(make_row(&mut rng, &noise, x, decoys));
    }
    // Replicate groups: repeat the settings of a few experiments.
    for (src, at, copies) in [(3usize, 4usize, 1usize), (40, 41, 2), (130, 131, 1), (150, 152, 2)] {
        for c in 0..copies {
            let (inputs, decoys) = (rows[src].inputs, rows[src].decoys.clone());
            let r = make_row(&mut rng, &noise, inputs, decoys);
            rows[at + c] = r;
        }
    }
    for i in [17usize, 88, 171] {
        rows[i].outputs[0] = rows[i].outputs[0].map(|v| v + 60.0);
    }
    for i in [25usize, 140] {
        rows[i].inputs[2] = 95.0;
    }
    rows[60].outputs[1] = None;
    rows
}

const A_HEADERS: [(&str, &str); 13] = [
    ("Temperature", "temp"),
    ("Pressure", "pressure"),
    ("Flow A", "flow_a"),
    ("Flow B", "flow_b"),
    ("Process time", "time"),
    ("RF power", "power"),
    ("Rotation", "rotation"),
    ("Temp F", "temp_f"),
    ("Chamber", "chamber"),
    ("Yield", "yield"),
    ("Uniformity", "uniformity"),
    ("Thickness", "thickness"),
    ("Comment", "comment"),
];

fn line_a(rows: &[Row]) -> String {
    let mut header: Vec<String> = A_HEADERS[..9].iter().map(|(h, _)| h.to_string()).collect();
    header.extend((0..N_DECOYS).map(decoy_name));
    header.extend(A_HEADERS[9..12].iter().map(|(h, _)| h.to_string()));
    let mut out = header.join(";") + "\n";
    let dec = |v: f64| fmt(v).replace('.', ",");
    for r in rows {
        let x = &r.inputs;
        let mut cells = vec![
            dec(x[0]),
            dec(x[1]),
            dec(x[2]),
            dec(0.5 * x[2]),
            dec(x[3]),
            dec(x[4]),
            dec(x[5]),
            dec(1.8 * x[0] + 32.0),
            dec(CHAMBER),
        ];
        cells.extend(r.decoys.iter().map(|&v| dec(v)));
        cells.extend(r.outputs.iter().map(|o| o.map(dec).unwrap_or_default()));
        out.push_str(&cells.join(";"));
        out.push('\n');
    }
    out
}

fn line_b(rows: &[Row]) -> String {
    let mut out = String::from("# Line B export: one record per experiment\n\n");
    for r in rows {
        let x = &r.inputs;
        let mut kv: Vec<(String, f64)> = vec![
            ("temp".into(), x[0]),
            ("pressure".into(), x[1]),
            ("flow_a".into(), x[2]),
            ("flow_b".into(), 0.5 * x[2]),
            ("time".into(), x[3]),
            ("power".into(), x[4]),
            ("rotation".into(), x[5]),
            ("temp_f".into(), 1.8 * x[0] + 32.0),
            ("chamber".into(), CHAMBER),
            ("operator_shift".into(), r.shift),
        ];
        kv.extend(r.decoys.iter().enumerate().map(|(i, &v)| (decoy_name(i), v)));
        for (name, o) in ["yield", "uniformity", "thickness"].iter().zip(&r.outputs) {
            if let Some(v) = o {
                kv.push((name.to_string(), *v));
            }
        }
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {}", fmt(v));
        }
        out.push('\n');
    }
    out
}

fn config() -> String {
    let mut c = String::from("# Synthetic two-line process: 6 true inputs, 14 decoys, 2 objectives.\n\n[sources]\nparameters = [\n");
    for &(name, lo, hi, integer) in &TRUE_INPUTS {
        let kind = if integer { "integer" } else { "continuous" };
        let _ = writeln!(c, "  {{ name = \"{name}\", kind = \"{kind}\", bounds = [{lo:?}, {hi:?}] }},");
    }
    for i in 0..N_DECOYS {
        let _ = writeln!(c, "  {{ name = \"{}\", kind = \"continuous\", bounds = [0.0, 1.0] }},", decoy_name(i));
    }
    c.push_str(
        r#"  { name = "chamber", kind = "continuous", bounds = [0.0, 10.0] },
  { name = "flow_b", kind = "continuous", bounds = [10.0, 50.0] },
  { name = "temp_f", kind = "continuous", bounds = [1112.0, 1472.0] },
  { name = "operator_shift", kind = "integer", bounds = [1.0, 3.0] },
]
outputs = [{ name = "yield" }, { name = "uniformity" }, { name = "thickness" }]

[[sources.files]]
id = "line_a"
path = "line_a.csv"
delimiter = ";"
decimal = ","

[sources.files.columns]
"#,
    );
    for (h, canonical) in A_HEADERS.iter().take(12) {
        let _ = writeln!(c, "\"{h}\" = \"{canonical}\"");
    }
    let _ = write!(
        c,
        r#"
[[sources.files]]
id = "line_b"
path = "line_b.kv"
format = "key-value-records"

[[rules]]
kind = "ratio"
expression = "{RATIO_RULE}"
tolerance = {RULE_TOLERANCE:e}

[[rules]]
kind = "bound"
expression = "{BOUND_RULE}"

[surrogate]
kernel_bandwidth = 2.5

[objectives]
entries = [
  {{ output = "yield", direction = "maximize" }},
  {{ output = "uniformity", direction = "maximize" }},
]
"#
    );
    c
}

/// Generates the fixture files deterministically.
pub fn generate() -> GoldenFiles {
    let rows = rows();
    GoldenFiles { config: config(), line_a: line_a(&rows[..ROWS_A]), line_b: line_b(&rows[ROWS_A..]) }
}

/// Writes the fixture files into `dir`.
pub fn write(dir: &std::path::Path) -> std::io::Result<()> {
    let files = generate();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), files.config)?;
    std::fs::write(dir.join("line_a.csv"), files.line_a)?;
    std::fs::write(dir.join("line_b.kv"), files.line_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;

    #[test]
    fn truth_optimum_and_tradeoff() {
        let mut u = [0.5, 0.5, 0.75, 0.25, 0.8, 1.0];
        let best = truth(&u);
        u[2] = 0.7;
        assert!(truth(&u)[0] < best[0]);
        u[2] = 0.75;
        u[0] = 0.6;
        let moved = truth(&u);
        assert!(moved[0] > best[0] && moved[1] < best[1]);
    }

    #[test]
    fn config_parses_and_validates() {
        let files = generate();
        let mut c = PipelineConfig::from_toml(&files.config).unwrap();
        for f in &mut c.sources.files {
            f.content = Some(if f.id == "line_a" { files.line_a.clone() } else { files.line_b.clone() });
        }
        c.validate().unwrap();
        assert_eq!(c.sources.parameters.len(), 6 + N_DECOYS + 4);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = (generate(), generate());
        assert_eq!(a.line_a, b.line_a);
        assert_eq!(a.line_b, b.line_b);
        assert_eq!(a.line_a.lines().count(), ROWS_A + 1);
    }
}
