use std::path::Path;

use fluidhopf::mc::{default_horizon, Discounted, HitIndicator};
use fluidhopf::passage::{apply_g, extract_j, extract_p, StateTable};
use fluidhopf::queries::homog_crosscheck;
use fluidhopf::verify::{all_passed, run_suite, CheckResult, Suite, VerifyOptions};
use fluidhopf::{
    estimate_expectation, factorize, laplace_passage_table, solve, BoundaryFunction, Estimate, FluidModel,
    GridParams, LaplaceOptions, PassageQuery, Sign, StateSpace,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{BoundarySpec, Config, PassageSection, PayoffSpec};
use crate::output::{num, write_json, CsvOut, Provenance};
use crate::CliError;

fn provenance(cfg: &Config) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.numerics.seed,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn labels(states: &StateSpace, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| states.label(i).to_string()).collect()
}

#[derive(Debug, Serialize)]
struct FactorizationOut {
    c: f64,
    plus_states: Vec<String>,
    minus_states: Vec<String>,
    #[serde(rename = "Pi_plus")]
    pi_plus: Vec<Vec<f64>>,
    #[serde(rename = "Pi_minus")]
    pi_minus: Vec<Vec<f64>>,
    #[serde(rename = "Q_plus")]
    q_plus: Vec<Vec<f64>>,
    #[serde(rename = "Q_minus")]
    q_minus: Vec<Vec<f64>>,
    residual: f64,
    config_hash: String,
    seed: u64,
}

/// Writes `factorization.json`.
pub fn run_factorize(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let section = cfg
        .factorize
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [factorize] section".into()))?;
    let model = cfg.build_model()?;
    if !model.generator().is_constant() {
        return Err(CliError::Config("factorize requires a constant generator".into()));
    }
    let states = model.states();
    let f = factorize(&model.eval(0.0), states, section.c).map_err(CliError::solver)?;
    let p = provenance(cfg);
    write_json(
        &out.join("factorization.json"),
        &FactorizationOut {
            c: f.c,
            plus_states: labels(states, states.plus()),
            minus_states: labels(states, states.minus()),
            pi_plus: rows(&f.pi_plus),
            pi_minus: rows(&f.pi_minus),
            q_plus: rows(&f.q_plus),
            q_minus: rows(&f.q_minus),
            residual: f.residual,
            config_hash: p.config_hash,
            seed: p.seed,
        },
    )
}

fn boundary(cfg: &Config, model: &FluidModel, section: &PassageSection) -> Result<BoundaryFunction, CliError> {
    let sign: Sign = section.sign.into();
    let spec = section
        .boundary
        .as_ref()
        .ok_or_else(|| CliError::Config("passage needs a boundary unless laplace = true".into()))?;
    match spec {
        BoundarySpec::ExpIndicator { c, target } => {
            let j = target.resolve(model.states())?;
            if model.states().sign_of(j) != sign {
                return Err(CliError::Config(format!(
                    "boundary target '{}' is not in the {sign} class",
                    model.states().label(j)
                )));
            }
            let eta = cfg.numerics.eta.unwrap_or_else(|| BoundaryFunction::default_eta(*c));
            BoundaryFunction::exp_indicator(sign, *c, j, eta).map_err(|e| CliError::Config(e.to_string()))
        }
        BoundarySpec::Table { s, values } => {
            let eta = cfg.numerics.eta.or(s.last().copied()).unwrap_or(0.0);
            BoundaryFunction::table(sign, eta, s.clone(), values.clone()).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn write_state_table(
    path: &Path,
    p: &Provenance,
    states: &StateSpace,
    t: &StateTable,
    stride: usize,
) -> Result<(), CliError> {
    let mut w = CsvOut::create(path, p, &["s", "state", "value"])?;
    for k in (0..t.s.len()).step_by(stride) {
        for (c, &i) in t.states.iter().enumerate() {
            w.row([num(t.s[k]), states.label(i).to_string(), num(t.values[(k, c)])])?;
        }
    }
    w.finish()
}

/// Writes `passage.csv` (sampled field) with `j_table.csv`, `p_table.csv`
/// and, for smooth boundary data, `g_table.csv`; or `laplace.csv` when
/// `laplace` is set.
pub fn run_passage(cfg: &Config, out: &Path, laplace: bool) -> Result<(), CliError> {
    let section = cfg
        .passage
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [passage] section".into()))?;
    let model = cfg.build_model()?;
    let p = provenance(cfg);
    if laplace || section.laplace {
        return write_laplace(cfg, &model, section, &p, out);
    }
    let g = boundary(cfg, &model, section)?;
    let [ss, sa] = section.field_stride;
    let grid = GridParams::new(cfg.numerics.ds, cfg.numerics.da).with_field(ss, sa);
    let f = solve(&model, &g, section.level, &grid).map_err(CliError::solver)?;
    let states = model.states();

    let field = f.field.as_ref().expect("field requested");
    let mut w = CsvOut::create(&out.join("passage.csv"), &p, &["s", "state", "a", "value"])?;
    for (row, &k) in field.s_index.iter().enumerate() {
        for i in 0..states.len() {
            for (col, &j) in field.a_index.iter().enumerate() {
                w.row([
                    num(f.grid.s(k)),
                    states.label(i).to_string(),
                    num(f.grid.a(j)),
                    num(field.value(row, i, col)),
                ])?;
            }
        }
    }
    w.finish()?;

    let j = extract_j(&f);
    write_state_table(&out.join("j_table.csv"), &p, states, &j, section.s_stride)?;
    write_state_table(&out.join("p_table.csv"), &p, states, &extract_p(&f), section.s_stride)?;
    if g.is_smooth() {
        let gg = apply_g(&model, &g, &j).map_err(CliError::solver)?;
        write_state_table(&out.join("g_table.csv"), &p, states, &gg, section.s_stride)?;
    }
    Ok(())
}

fn write_laplace(
    cfg: &Config,
    model: &FluidModel,
    section: &PassageSection,
    p: &Provenance,
    out: &Path,
) -> Result<(), CliError> {
    let c = section
        .c
        .or(match &section.boundary {
            Some(BoundarySpec::ExpIndicator { c, .. }) => Some(*c),
            _ => None,
        })
        .ok_or_else(|| CliError::Config("laplace tables need passage.c".into()))?;
    let sign: Sign = section.sign.into();
    let mut opts = LaplaceOptions::new(GridParams::new(cfg.numerics.ds, cfg.numerics.da));
    opts.eta = cfg.numerics.eta;
    opts.s_stride = section.s_stride;
    let t = laplace_passage_table(model, c, section.level, sign, &opts).map_err(CliError::solver)?;
    let states = model.states();
    let mut w = CsvOut::create(&out.join("laplace.csv"), p, &["s", "from_state", "to_state", "value"])?;
    for (s, v) in t.s_nodes.iter().zip(&t.values) {
        for i in 0..states.len() {
            for (col, &j) in t.targets.iter().enumerate() {
                w.row([num(*s), states.label(i).to_string(), states.label(j).to_string(), num(v[(i, col)])])?;
            }
        }
    }
    w.finish()?;
    if model.generator().is_constant() {
        let r = homog_crosscheck(model, c, section.level, sign, &opts, cfg.numerics.tolerance)
            .map_err(CliError::solver)?;
        eprintln!(
            "homogeneous cross-check: max deviation {:.3e}, tolerance {:.3e}, {}",
            r.max_deviation,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateOut {
    mean: f64,
    stderr: f64,
    n: usize,
    censor_fraction: f64,
    bias_bound: f64,
    seed: u64,
    config_hash: String,
}

impl EstimateOut {
    fn new(e: Estimate, hash: String) -> Self {
        EstimateOut {
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
            censor_fraction: e.censor_fraction,
            bias_bound: e.bias_bound,
            seed: e.seed,
            config_hash: hash,
        }
    }
}

/// Writes `simulate.json`.
pub fn run_simulate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let section = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [simulate] section".into()))?;
    let model = cfg.build_model()?;
    let states = model.states();
    let sign: Sign = section.sign.into();
    let q = PassageQuery {
        s0: section.s0,
        i0: section.start.resolve(states)?,
        level: section.level,
        sign,
        n: section.n,
        horizon: cfg
            .numerics
            .horizon
            .unwrap_or_else(|| default_horizon(&model, section.s0, section.level)),
        seed: cfg.numerics.seed,
    };
    let est = match &section.payoff {
        PayoffSpec::Discounted { c, target } => {
            let target = target.as_ref().map(|t| t.resolve(states)).transpose()?;
            estimate_expectation(&model, &Discounted { c: *c, target }, &q)
        }
        PayoffSpec::Hit => estimate_expectation(&model, &HitIndicator { tail: 1.0 }, &q),
        PayoffSpec::ExpIndicator { c, target } => {
            let j = target.resolve(states)?;
            let eta = cfg.numerics.eta.unwrap_or_else(|| BoundaryFunction::default_eta(*c));
            let g = BoundaryFunction::exp_indicator(sign, *c, j, eta).map_err(|e| CliError::Config(e.to_string()))?;
            estimate_expectation(&model, &g, &q)
        }
    }
    .map_err(CliError::solver)?;
    write_json(&out.join("simulate.json"), &EstimateOut::new(est, cfg.hash()))
}

/// Runs one suite, prints its table and writes `verify_<suite>.csv`.
/// Returns whether every check passed.
pub fn run_verify(suite: Suite, cfg: Option<&Config>, out: &Path) -> Result<bool, CliError> {
    let mut opts = VerifyOptions::default();
    let mut p = Provenance {
        config_hash: String::from("none"),
        seed: opts.seed,
    };
    if let Some(cfg) = cfg {
        opts.seed = cfg.numerics.seed;
        p = provenance(cfg);
        if let Some(v) = &cfg.verify {
            opts.grid = v.grid.unwrap_or(opts.grid);
            opts.mc_n = v.mc_n.unwrap_or(opts.mc_n);
            opts.ks_n = v.ks_n.unwrap_or(opts.ks_n);
            opts.random_generators = v.random_generators.unwrap_or(opts.random_generators);
        }
    }
    let results = run_suite(suite, &opts).map_err(|e| CliError::Suite(e.to_string()))?;
    print_table(suite, &results);
    let mut w = CsvOut::create(
        &out.join(format!("verify_{suite}.csv")),
        &p,
        &["criterion", "check", "measured", "tolerance", "pass"],
    )?;
    for r in &results {
        w.row([
            r.criterion.to_string(),
            r.name.clone(),
            num(r.measured),
            num(r.tolerance),
            r.pass.to_string(),
        ])?;
    }
    w.finish()?;
    Ok(all_passed(&results))
}

fn print_table(suite: Suite, results: &[CheckResult]) {
    println!("suite {suite}");
    for r in results {
        println!("  {r}");
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed", results.len() - failed, results.len());
}
