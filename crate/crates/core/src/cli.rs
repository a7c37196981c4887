//! Command-line front end. Every output carries the command, the parameters,
//! the seed and the library version; the same arguments always produce the
//! same bytes, whatever the thread count.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 numerical failure,
//! 3 a verification tolerance was not met. Errors go to stderr as
//! `E<code>: <message>`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::combinatorics::{cumulants_from_moments, moments_from_cumulants, CumulantSequence, MomentSequence};
use crate::dist_free::{fk_ldp_rate, fk_rate_integrand, FreeKummerParams, FreePoissonParams};
use crate::error::Error;
use crate::hv::{
    characterize, freeness_diagnostics, regression_check, s_transform_step3_check, sample_hv, HvModel, HvPair,
    McConfig, QuadrupleRef, RegressionData,
};
use crate::matrix_rand::{
    esd, ks_distance, sample_kummer_eigs, sample_wishart, sym_eigen, MatrixKummerParams, SpectralSample,
    WishartParams, DEFAULT_BURN_IN, DEFAULT_THIN,
};
use crate::par::{map_replicas, replica_rng, with_threads};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// KS bound for `verify hv-law`.
pub const HV_LAW_KS: f64 = 0.06;
/// Residual bound for `verify s-step`.
pub const S_STEP_TOL: f64 = 1e-6;
/// Identity bound for `characterize`.
pub const CHARACTERIZE_TOL: f64 = 1e-8;

/// A real number, written as a decimal or as an exact fraction `p/q`.
pub fn parse_num(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = if s.contains('/') {
        BigRational::from_str(s)
            .map_err(|e| format!("bad fraction {s:?}: {e}"))?
            .to_f64()
            .ok_or_else(|| format!("fraction {s:?} out of range"))?
    } else {
        s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"))?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn parse_rational(s: &str) -> std::result::Result<BigRational, String> {
    let s = s.trim();
    if s.contains('/') {
        return BigRational::from_str(s).map_err(|e| format!("bad fraction {s:?}: {e}"));
    }
    let v = s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"))?;
    BigRational::from_float(v).ok_or_else(|| format!("{s:?} is not finite"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "freekummer", version, about = "Free-Kummer laws, random matrices and the HV characterization")]
pub struct Cli {
    /// Master seed of all random streams.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for Monte Carlo replicas (0 = all cores).
    #[arg(long, global = true, env = "FREEKUMMER_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Free-Kummer law fK(alpha, beta, gamma).
    Fk {
        #[command(subcommand)]
        op: FkOp,
    },
    /// Free-Poisson law.
    Fp {
        #[command(subcommand)]
        op: FpOp,
    },
    /// Moments from free cumulants.
    Moments {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        cumulants: Vec<String>,
        /// Exact rational arithmetic.
        #[arg(long)]
        exact: bool,
    },
    /// Free cumulants from moments.
    Cumulants {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        moments: Vec<String>,
        #[arg(long)]
        exact: bool,
    },
    /// Monte Carlo spectra.
    Simulate {
        #[command(subcommand)]
        op: SimulateOp,
    },
    /// Monte Carlo and numerical checks with pass/fail.
    Verify {
        #[command(subcommand)]
        op: VerifyOp,
    },
    /// Recover the laws from the regression constants.
    Characterize(CharacterizeArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FkArgs {
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FpArgs {
    #[arg(long, value_parser = parse_num)]
    pub jump: f64,
    #[arg(long, value_parser = parse_num)]
    pub rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Grid size.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Grid start (default: left support edge).
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
    pub from: Option<f64>,
    /// Grid end (default: right support edge).
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
    pub to: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    /// Real parts.
    #[arg(long, value_delimiter = ',', value_parser = parse_num, allow_negative_numbers = true, required = true)]
    pub re: Vec<f64>,
    /// Imaginary parts, one per real part.
    #[arg(long, value_delimiter = ',', value_parser = parse_num, allow_negative_numbers = true, required = true)]
    pub im: Vec<f64>,
}

#[derive(Debug, Subcommand)]
pub enum FkOp {
    Support(FkArgs),
    Density {
        #[command(flatten)]
        law: FkArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    Cauchy {
        #[command(flatten)]
        law: FkArgs,
        #[command(flatten)]
        at: PointArgs,
    },
    /// Large-deviation rate of the largest eigenvalue on (b, b + span].
    Rate {
        #[command(flatten)]
        law: FkArgs,
        #[arg(long, value_parser = parse_num, default_value = "5")]
        span: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum FpOp {
    Density {
        #[command(flatten)]
        law: FpArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    Cauchy {
        #[command(flatten)]
        law: FpArgs,
        #[command(flatten)]
        at: PointArgs,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct McArgs {
    /// Matrix size.
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    /// Replicas.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// MCMC burn-in sweeps.
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    /// MCMC sweeps between retained states.
    #[arg(long, default_value_t = DEFAULT_THIN)]
    pub thin: usize,
}

#[derive(Debug, Subcommand)]
pub enum SimulateOp {
    /// Wishart with density ∝ det(y)^{shape−(N+1)/2} e^{−rate tr y}.
    Wishart {
        #[arg(long, value_parser = parse_num)]
        shape: f64,
        #[arg(long, value_parser = parse_num)]
        rate: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Matrix Kummer MK_N(a, b, c I).
    Kummer {
        #[arg(long, value_parser = parse_num)]
        a: f64,
        #[arg(long, value_parser = parse_num, allow_negative_numbers = true)]
        b: f64,
        #[arg(long, value_parser = parse_num)]
        c: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Spectra of U and V for the Kummer–Wishart model.
    Hv {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mc: McArgs,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_num, default_value = "4")]
    pub alpha: f64,
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true, default_value = "1")]
    pub beta: f64,
    #[arg(long, value_parser = parse_num, default_value = "2")]
    pub gamma: f64,
}

#[derive(Debug, Subcommand)]
pub enum VerifyOp {
    /// KS distance of the U and V spectra to their limit laws.
    HvLaw {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Freeness diagnostics on (U, V) with a V := U negative control.
    Freeness {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mc: McArgs,
        /// Acceptance band in standard errors.
        #[arg(long, value_parser = parse_num, default_value = "3")]
        sigmas: f64,
    },
    /// Regression residuals and the two recursions.
    Regression {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
        #[arg(long, value_parser = parse_num, default_value = "3")]
        sigmas: f64,
    },
    /// S_Y · S_{(I+X)^-1} = S_U near zero.
    SStep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_num, allow_negative_numbers = true,
              default_value = "-0.05,-0.01,0.01,0.05,0.1")]
        z: Vec<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CharacterizeArgs {
    #[arg(long, value_parser = parse_num, required_unless_present = "model")]
    pub abar: Option<f64>,
    #[arg(long, value_parser = parse_num, required_unless_present = "model")]
    pub bbar: Option<f64>,
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true, required_unless_present = "model")]
    pub a: Option<f64>,
    #[arg(long, value_parser = parse_num, allow_negative_numbers = true, required_unless_present = "model")]
    pub alpha1: Option<f64>,
    /// Take all constants from the model (alpha, beta, gamma) by quadrature.
    #[arg(long, value_delimiter = ',', value_parser = parse_num,
          conflicts_with_all = ["abar", "bbar", "a", "alpha1"])]
    pub model: Option<Vec<f64>>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: if e.is_numerical() { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, message: format!("i/o: {e}") }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Rows of strings under named columns.
#[derive(Debug, Default)]
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }
}

struct Outcome {
    params: Map<String, Value>,
    results: Value,
    table: Table,
    tolerances_met: Option<bool>,
}

fn params<const N: usize>(pairs: [(&str, Value); N]) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn grid(lo: f64, hi: f64, points: usize) -> CliResult<Vec<f64>> {
    if points < 2 || !(hi > lo) {
        return Err(Failure { code: 1, message: format!("grid needs points >= 2 and from < to (got {points}, {lo}, {hi})") });
    }
    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect())
}

fn complex_points(at: &PointArgs) -> CliResult<Vec<Complex64>> {
    if at.re.len() != at.im.len() {
        return Err(Failure { code: 1, message: format!("{} real parts but {} imaginary parts", at.re.len(), at.im.len()) });
    }
    Ok(at.re.iter().zip(&at.im).map(|(&r, &i)| Complex64::new(r, i)).collect())
}

fn to_value<T: Serialize + ?Sized>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn density_table<F: Fn(f64) -> f64>(xs: &[f64], f: F) -> (Table, Value) {
    let mut t = Table::new(&["x", "value"]);
    let mut pts = Vec::with_capacity(xs.len());
    for &x in xs {
        let v = f(x);
        t.push([num(x), num(v)]);
        pts.push(json!({"x": x, "value": v}));
    }
    (t, Value::Array(pts))
}

fn cauchy_table<F: Fn(Complex64) -> crate::Result<Complex64>>(zs: &[Complex64], g: F) -> CliResult<(Table, Value)> {
    let mut t = Table::new(&["re", "im", "g_re", "g_im"]);
    let mut pts = Vec::with_capacity(zs.len());
    for &z in zs {
        let v = g(z)?;
        t.push([num(z.re), num(z.im), num(v.re), num(v.im)]);
        pts.push(json!({"re": z.re, "im": z.im, "g_re": v.re, "g_im": v.im}));
    }
    Ok((t, Value::Array(pts)))
}

fn fk_params(a: &FkArgs) -> Map<String, Value> {
    params([("alpha", json!(a.alpha)), ("beta", json!(a.beta)), ("gamma", json!(a.gamma))])
}

fn mc_params(m: &mut Map<String, Value>, mc: &McArgs) {
    m.insert("n".into(), json!(mc.n));
    m.insert("reps".into(), json!(mc.reps));
    m.insert("burn_in".into(), json!(mc.burn_in));
    m.insert("thin".into(), json!(mc.thin));
}

fn model_params(model: &ModelArgs, mc: Option<&McArgs>) -> Map<String, Value> {
    let mut m = params([("alpha", json!(model.alpha)), ("beta", json!(model.beta)), ("gamma", json!(model.gamma))]);
    if let Some(mc) = mc {
        mc_params(&mut m, mc);
    }
    m
}

fn mc_config(mc: &McArgs, seed: u64) -> CliResult<McConfig> {
    if mc.reps == 0 || mc.n == 0 {
        return Err(Failure { code: 1, message: "n and reps must be positive".into() });
    }
    Ok(McConfig { n: mc.n, replicas: mc.reps, seed, burn_in: mc.burn_in, thin: mc.thin })
}

fn run_fk(op: &FkOp) -> CliResult<Outcome> {
    match op {
        FkOp::Support(a) => {
            let k = FreeKummerParams::new(a.alpha, a.beta, a.gamma)?;
            let (lo, hi) = k.support();
            let res = k.residuals();
            let mut t = Table::new(&["quantity", "value"]);
            t.push(["a".into(), num(lo)]);
            t.push(["b".into(), num(hi)]);
            t.push(["residual_1".into(), num(res[0])]);
            t.push(["residual_2".into(), num(res[1])]);
            Ok(Outcome {
                params: fk_params(a),
                results: json!({"a": lo, "b": hi, "residuals": res}),
                table: t,
                tolerances_met: None,
            })
        }
        FkOp::Density { law, grid: g } => {
            let k = FreeKummerParams::new(law.alpha, law.beta, law.gamma)?;
            let (lo, hi) = k.support();
            let xs = grid(g.from.unwrap_or(lo), g.to.unwrap_or(hi), g.points)?;
            let (table, results) = density_table(&xs, |x| k.density(x));
            let mut p = fk_params(law);
            p.insert("points".into(), json!(g.points));
            Ok(Outcome { params: p, results, table, tolerances_met: None })
        }
        FkOp::Cauchy { law, at } => {
            let k = FreeKummerParams::new(law.alpha, law.beta, law.gamma)?;
            let (table, results) = cauchy_table(&complex_points(at)?, |z| k.cauchy(z))?;
            Ok(Outcome { params: fk_params(law), results, table, tolerances_met: None })
        }
        FkOp::Rate { law, span, points } => {
            let k = FreeKummerParams::new(law.alpha, law.beta, law.gamma)?;
            if !(*span > 0.0) || *points == 0 {
                return Err(Failure { code: 1, message: "rate grid needs span > 0 and points > 0".into() });
            }
            let b = k.support().1;
            let mut t = Table::new(&["x", "value", "integrand"]);
            let mut pts = Vec::new();
            for i in 0..=*points {
                let x = b + span * i as f64 / *points as f64;
                let v = fk_ldp_rate(&k, x);
                let d = fk_rate_integrand(&k, x);
                if !v.is_finite() {
                    return Err(Failure { code: 2, message: format!("rate integral failed at x = {x}") });
                }
                t.push([num(x), num(v), num(d)]);
                pts.push(json!({"x": x, "value": v, "integrand": d}));
            }
            let mut p = fk_params(law);
            p.insert("span".into(), json!(span));
            p.insert("points".into(), json!(points));
            Ok(Outcome { params: p, results: json!({"right_edge": b, "rate": pts}), table: t, tolerances_met: None })
        }
    }
}

fn run_fp(op: &FpOp) -> CliResult<Outcome> {
    match op {
        FpOp::Density { law, grid: g } => {
            let p = FreePoissonParams::fpois(law.jump, law.rate)?;
            let (lo, hi) = p.support();
            let xs = grid(g.from.unwrap_or(lo), g.to.unwrap_or(hi), g.points)?;
            let (table, pts) = density_table(&xs, |x| p.density(x));
            Ok(Outcome {
                params: params([("jump", json!(law.jump)), ("rate", json!(law.rate)), ("points", json!(g.points))]),
                results: json!({"atom_at_zero": p.atom(), "density": pts}),
                table,
                tolerances_met: None,
            })
        }
        FpOp::Cauchy { law, at } => {
            let p = FreePoissonParams::fpois(law.jump, law.rate)?;
            let (table, results) = cauchy_table(&complex_points(at)?, |z| p.cauchy(z))?;
            Ok(Outcome {
                params: params([("jump", json!(law.jump)), ("rate", json!(law.rate))]),
                results,
                table,
                tolerances_met: None,
            })
        }
    }
}

fn sequence_outcome(input_name: &str, output_name: &str, input: &[String], exact: bool, to_moments: bool) -> CliResult<Outcome> {
    let usage = |m: String| Failure { code: 1, message: m };
    let mut t = Table::new(&["order", output_name]);
    let values: Vec<Value>;
    if exact {
        let xs = input.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>, _>>().map_err(usage)?;
        let out = if to_moments {
            moments_from_cumulants(&CumulantSequence(xs)).0
        } else {
            cumulants_from_moments(&MomentSequence(xs)).0
        };
        values = out.iter().map(|v| json!(v.to_string())).collect();
        for (i, v) in out.iter().enumerate() {
            t.push([(i + 1).to_string(), v.to_string()]);
        }
    } else {
        let xs = input.iter().map(|s| parse_num(s)).collect::<Result<Vec<_>, _>>().map_err(usage)?;
        let out = if to_moments {
            moments_from_cumulants(&CumulantSequence(xs)).0
        } else {
            cumulants_from_moments(&MomentSequence(xs)).0
        };
        values = out.iter().map(|v| json!(v)).collect();
        for (i, v) in out.iter().enumerate() {
            t.push([(i + 1).to_string(), num(*v)]);
        }
    }
    Ok(Outcome {
        params: params([(input_name, json!(input)), ("exact", json!(exact))]),
        results: json!({ output_name: values }),
        table: t,
        tolerances_met: None,
    })
}

fn spectra_table(samples: &[SpectralSample], label: Option<&str>, t: &mut Table) {
    for (r, s) in samples.iter().enumerate() {
        let mut row = vec![r.to_string()];
        if let Some(l) = label {
            row.push(l.to_string());
        }
        row.extend(s.eigenvalues().iter().map(|v| format!("{v:.17e}")));
        t.push(row);
    }
}

fn spectrum_columns(n: usize, with_matrix: bool) -> Table {
    let mut cols = vec!["replica".to_string()];
    if with_matrix {
        cols.push("matrix".into());
    }
    cols.extend((1..=n).map(|i| format!("l{i}")));
    Table { columns: cols, rows: Vec::new() }
}

fn eigen_json(samples: &[SpectralSample]) -> Value {
    Value::Array(samples.iter().map(|s| json!(s.eigenvalues())).collect())
}

fn hv_spectra(model: &ModelArgs, mc: &McArgs, seed: u64) -> CliResult<(HvModel, Vec<crate::hv::HvSample>)> {
    let m = HvModel::new(model.alpha, model.beta, model.gamma)?;
    let samples = sample_hv(&m, &mc_config(mc, seed)?)?;
    Ok((m, samples))
}

fn eigen_of(samples: &[crate::hv::HvSample], pick: impl Fn(&HvPair) -> &nalgebra::DMatrix<f64> + Sync) -> CliResult<Vec<SpectralSample>> {
    Ok(map_replicas(samples.len(), |i| sym_eigen(pick(&samples[i].pair))).into_iter().collect::<crate::Result<Vec<_>>>()?)
}

fn run_simulate(op: &SimulateOp, seed: u64) -> CliResult<Outcome> {
    match op {
        SimulateOp::Wishart { shape, rate, mc } => {
            let p = WishartParams::new(*shape, *rate, mc.n)?;
            let samples = map_replicas(mc.reps, |i| sample_wishart(&p, &mut replica_rng(seed, i as u64)))
                .into_iter()
                .collect::<crate::Result<Vec<_>>>()?;
            let limit = p.limit()?;
            let table = limit.to_density()?.cdf_table();
            let ks = ks_distance(&esd(&samples)?, |x| table.cdf(x));
            let mut t = spectrum_columns(mc.n, false);
            spectra_table(&samples, None, &mut t);
            let prm = params([("shape", json!(shape)), ("rate", json!(rate)), ("n", json!(mc.n)), ("reps", json!(mc.reps))]);
            Ok(Outcome {
                params: prm,
                results: json!({"limit": {"jump": limit.jump(), "rate": limit.rate()}, "ks": ks, "eigenvalues": eigen_json(&samples)}),
                table: t,
                tolerances_met: None,
            })
        }
        SimulateOp::Kummer { a, b, c, mc } => {
            let p = MatrixKummerParams::new(*a, *b, *c, mc.n)?;
            let samples = map_replicas(mc.reps, |i| sample_kummer_eigs(&p, mc.burn_in, mc.thin, &mut replica_rng(seed, i as u64)))
                .into_iter()
                .collect::<crate::Result<Vec<_>>>()?;
            let limit = p.limit()?;
            let table = limit.to_density()?.cdf_table();
            let ks = ks_distance(&esd(&samples)?, |x| table.cdf(x));
            let mut t = spectrum_columns(mc.n, false);
            spectra_table(&samples, None, &mut t);
            let mut prm = params([("a", json!(a)), ("b", json!(b)), ("c", json!(c))]);
            mc_params(&mut prm, mc);
            Ok(Outcome {
                params: prm,
                results: json!({
                    "limit": {"alpha": limit.alpha(), "beta": limit.beta(), "gamma": limit.gamma()},
                    "ks": ks,
                    "eigenvalues": eigen_json(&samples),
                }),
                table: t,
                tolerances_met: None,
            })
        }
        SimulateOp::Hv { model, mc } => {
            let (_, samples) = hv_spectra(model, mc, seed)?;
            let u = eigen_of(&samples, |p| &p.u)?;
            let v = eigen_of(&samples, |p| &p.v)?;
            let mut t = spectrum_columns(mc.n, true);
            spectra_table(&u, Some("U"), &mut t);
            spectra_table(&v, Some("V"), &mut t);
            Ok(Outcome {
                params: model_params(model, Some(mc)),
                results: json!({"u": eigen_json(&u), "v": eigen_json(&v)}),
                table: t,
                tolerances_met: None,
            })
        }
    }
}

fn quantity_table(rows: &[(&str, f64)]) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in rows {
        t.push([k.to_string(), num(*v)]);
    }
    t
}

fn diagnostics_table(ds: &[&crate::hv::Diagnostic]) -> Table {
    let mut t = Table::new(&["name", "estimate", "stderr"]);
    for d in ds {
        t.push([d.name.clone(), num(d.estimate), num(d.stderr)]);
    }
    t
}

fn run_verify(op: &VerifyOp, seed: u64) -> CliResult<Outcome> {
    match op {
        VerifyOp::HvLaw { model, mc } => {
            let (m, samples) = hv_spectra(model, mc, seed)?;
            let u = eigen_of(&samples, |p| &p.u)?;
            let v = eigen_of(&samples, |p| &p.v)?;
            let u_cdf = m.u_law()?.to_density()?.cdf_table();
            let v_cdf = m.v_law()?.to_density()?.cdf_table();
            let ks_u = ks_distance(&esd(&u)?, |x| u_cdf.cdf(x));
            let ks_v = ks_distance(&esd(&v)?, |x| v_cdf.cdf(x));
            let ok = ks_u <= HV_LAW_KS && ks_v <= HV_LAW_KS;
            Ok(Outcome {
                params: model_params(model, Some(mc)),
                results: json!({"ks_u": ks_u, "ks_v": ks_v, "bound": HV_LAW_KS}),
                table: quantity_table(&[("ks_u", ks_u), ("ks_v", ks_v), ("bound", HV_LAW_KS)]),
                tolerances_met: Some(ok),
            })
        }
        VerifyOp::Freeness { model, mc, sigmas } => {
            let (_, samples) = hv_spectra(model, mc, seed)?;
            let pairs: Vec<HvPair> = samples.into_iter().map(|s| s.pair).collect();
            let report = freeness_diagnostics(&pairs)?;
            let control: Vec<HvPair> = pairs.iter().map(|p| HvPair { u: p.u.clone(), v: p.u.clone() }).collect();
            let control = freeness_diagnostics(&control)?;
            let rejected = control.diagnostics.iter().take(2).all(|d| !d.within(*sigmas));
            let ok = report.all_within(*sigmas) && rejected;
            let mut prm = model_params(model, Some(mc));
            prm.insert("sigmas".into(), json!(sigmas));
            let mut rows: Vec<&crate::hv::Diagnostic> = report.diagnostics.iter().collect();
            rows.push(&report.alternating_raw);
            Ok(Outcome {
                params: prm,
                results: json!({"report": to_value(&report), "negative_control": to_value(&control.diagnostics[..2]), "control_rejected": rejected}),
                table: diagnostics_table(&rows),
                tolerances_met: Some(ok),
            })
        }
        VerifyOp::Regression { model, mc, k_max, sigmas } => {
            let (_, samples) = hv_spectra(model, mc, seed)?;
            let report = regression_check(samples.iter().map(QuadrupleRef::from), *k_max)?;
            let mut prm = model_params(model, Some(mc));
            prm.insert("k_max".into(), json!(k_max));
            prm.insert("sigmas".into(), json!(sigmas));
            let mut rows = vec![&report.abar, &report.bbar];
            rows.extend(report.residuals());
            Ok(Outcome {
                params: prm,
                results: to_value(&report),
                table: diagnostics_table(&rows),
                tolerances_met: Some(report.all_within(*sigmas)),
            })
        }
        VerifyOp::SStep { model, z } => {
            let m = HvModel::new(model.alpha, model.beta, model.gamma)?;
            let report = s_transform_step3_check(&m, z)?;
            let mut t = Table::new(&["z", "s_y", "s_inv", "s_u", "residual"]);
            for p in &report.points {
                t.push([num(p.z), num(p.s_y), num(p.s_inv), num(p.s_u), num(p.residual)]);
            }
            let mut prm = model_params(model, None);
            prm.insert("z".into(), json!(z));
            Ok(Outcome {
                params: prm,
                tolerances_met: Some(report.max_residual <= S_STEP_TOL),
                results: to_value(&report),
                table: t,
            })
        }
    }
}

fn run_characterize(a: &CharacterizeArgs) -> CliResult<Outcome> {
    let (data, mut prm) = match &a.model {
        Some(m) => {
            if m.len() != 3 {
                return Err(Failure { code: 1, message: format!("--model takes alpha,beta,gamma, got {} values", m.len()) });
            }
            let model = HvModel::new(m[0], m[1], m[2])?;
            (RegressionData::from_model(&model)?, params([("model", json!(m))]))
        }
        None => {
            let get = |v: Option<f64>, name: &str| v.ok_or_else(|| Failure { code: 1, message: format!("--{name} is required") });
            let (abar, bbar, aa, alpha1) = (get(a.abar, "abar")?, get(a.bbar, "bbar")?, get(a.a, "a")?, get(a.alpha1, "alpha1")?);
            (
                RegressionData::new(abar, bbar, aa, alpha1)?,
                params([("abar", json!(abar)), ("bbar", json!(bbar)), ("a", json!(aa)), ("alpha1", json!(alpha1))]),
            )
        }
    };
    prm.insert("tolerance".into(), json!(CHARACTERIZE_TOL));
    let r = characterize(&data)?;
    let t = quantity_table(&[
        ("gamma", r.gamma),
        ("u_alpha", r.u_law.alpha),
        ("u_beta", r.u_law.beta),
        ("x_alpha", r.x_law.alpha),
        ("x_beta", r.x_law.beta),
        ("y_jump", r.y_law.jump),
        ("y_rate", r.y_law.rate),
        ("x0", r.x0),
        ("x1", r.x1),
        ("x2", r.x2),
        ("max_identity_residual", r.max_identity_residual()),
    ]);
    Ok(Outcome {
        params: prm,
        tolerances_met: Some(r.max_identity_residual() <= CHARACTERIZE_TOL),
        results: to_value(&r),
        table: t,
    })
}

fn command_name(c: &Command) -> String {
    let (head, sub) = match c {
        Command::Fk { op } => ("fk", match op {
            FkOp::Support(_) => "support",
            FkOp::Density { .. } => "density",
            FkOp::Cauchy { .. } => "cauchy",
            FkOp::Rate { .. } => "rate",
        }),
        Command::Fp { op } => ("fp", match op {
            FpOp::Density { .. } => "density",
            FpOp::Cauchy { .. } => "cauchy",
        }),
        Command::Moments { .. } => ("moments", ""),
        Command::Cumulants { .. } => ("cumulants", ""),
        Command::Simulate { op } => ("simulate", match op {
            SimulateOp::Wishart { .. } => "wishart",
            SimulateOp::Kummer { .. } => "kummer",
            SimulateOp::Hv { .. } => "hv",
        }),
        Command::Verify { op } => ("verify", match op {
            VerifyOp::HvLaw { .. } => "hv-law",
            VerifyOp::Freeness { .. } => "freeness",
            VerifyOp::Regression { .. } => "regression",
            VerifyOp::SStep { .. } => "s-step",
        }),
        Command::Characterize(_) => ("characterize", ""),
    };
    if sub.is_empty() { head.to_string() } else { format!("{head} {sub}") }
}

fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    match &cli.command {
        Command::Fk { op } => run_fk(op),
        Command::Fp { op } => run_fp(op),
        Command::Moments { cumulants, exact } => sequence_outcome("cumulants", "moments", cumulants, *exact, true),
        Command::Cumulants { moments, exact } => sequence_outcome("moments", "cumulants", moments, *exact, false),
        Command::Simulate { op } => run_simulate(op, cli.seed),
        Command::Verify { op } => run_verify(op, cli.seed),
        Command::Characterize(a) => run_characterize(a),
    }
}

fn render(cli: &Cli, name: &str, out: &Outcome) -> String {
    match cli.format {
        Format::Json => {
            let mut doc = Map::new();
            doc.insert("command".into(), json!(name));
            doc.insert("params".into(), Value::Object(out.params.clone()));
            doc.insert("seed".into(), json!(cli.seed));
            doc.insert("results".into(), out.results.clone());
            doc.insert("tolerances_met".into(), json!(out.tolerances_met));
            doc.insert("version".into(), json!(VERSION));
            let mut s = serde_json::to_string_pretty(&Value::Object(doc)).unwrap_or_default();
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = String::new();
            let _ = writeln!(s, "# freekummer {VERSION}");
            let _ = writeln!(s, "# command: {name}");
            let _ = writeln!(s, "# seed: {}", cli.seed);
            for (k, v) in &out.params {
                let _ = writeln!(s, "# {k}: {v}");
            }
            if let Some(ok) = out.tolerances_met {
                let _ = writeln!(s, "# tolerances_met: {ok}");
            }
            let _ = writeln!(s, "{}", out.table.columns.join(","));
            for row in &out.table.rows {
                let _ = writeln!(s, "{}", row.join(","));
            }
            s
        }
    }
}

fn execute(cli: &Cli) -> CliResult<bool> {
    let name = command_name(&cli.command);
    let threads = (cli.threads > 0).then_some(cli.threads);
    let outcome = with_threads(threads, || dispatch(cli))?;
    let text = render(cli, &name, &outcome);
    match &cli.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(outcome.tolerances_met != Some(false))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("E1: {}", e.render());
            return 1;
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("E3: tolerance not met in {}", command_name(&cli.command));
            3
        }
        Err(f) => {
            eprintln!("E{}: {}", f.code, f.message);
            f.code
        }
    }
}
