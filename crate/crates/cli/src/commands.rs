//! One function per subcommand. Each returns the emitted files; the first
//! is the primary table.

use std::time::Instant;

use serde_json::{json, Value};

use schottky_core::coding::hyperbolicity_constants;
use schottky_core::congruence::{build_modgroup, cayley_gap, spectral_radius_new, ModGroup};
use schottky_core::counting::{
    correlation, count_geodesics, fit_decay, laplace_identity_check, mean_zero_pair, orbit_count_report, BasePoint,
    CountReport,
};
use schottky_core::dolgopyat::{contraction_audit, measure_all, DolgopyatModel};
use schottky_core::linalg::C64;
use schottky_core::schottky::{boxcount_dimension, SchottkyGroup};
use schottky_core::thermo::{pressure, solve_delta, Discretization, Thermo};
use schottky_core::zeta::{enumerate_orbits, find_zeros, resonance_scan, words_for_length, Window, Zero};

use crate::config::{Format, RunConfig};
use crate::Failure;

/// An emitted file: name and contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub name: String,
    pub body: String,
}

/// Identity of a run, written as the first line of every output.
pub struct Stamp {
    pub group_hash: String,
    pub config_hash: String,
}

impl Stamp {
    fn line(&self) -> String {
        format!(
            "# schottky {} group={} config={}\n",
            env!("CARGO_PKG_VERSION"),
            self.group_hash,
            self.config_hash
        )
    }
}

struct Table {
    csv: String,
}

impl Table {
    fn new(stamp: &Stamp, columns: &[&str]) -> Self {
        Self {
            csv: format!("{}{}\n", stamp.line(), columns.join(",")),
        }
    }

    fn row(&mut self, cells: &[String]) {
        self.csv.push_str(&cells.join(","));
        self.csv.push('\n');
    }

    fn done(self, name: &str) -> Output {
        Output {
            name: format!("{name}.csv"),
            body: self.csv,
        }
    }
}

fn json_out(stamp: &Stamp, name: &str, mut v: Value) -> Output {
    v["tool"] = json!(format!("schottky {}", env!("CARGO_PKG_VERSION")));
    v["group_hash"] = json!(stamp.group_hash);
    v["config_hash"] = json!(stamp.config_hash);
    Output {
        name: format!("{name}.json"),
        body: serde_json::to_string_pretty(&v).expect("serializable") + "\n",
    }
}

fn f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:e}")
    }
}

fn level(g: &SchottkyGroup, q: u64) -> ModGroup {
    ModGroup::generated(g, q)
}

fn admissible(g: &SchottkyGroup, q: u64) -> Result<ModGroup, Failure> {
    Ok(build_modgroup(g, q)?)
}

pub fn validate(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let h = hyperbolicity_constants(g, 8);
    let cols = ["symbol", "left", "right", "min_expansion", "max_expansion", "c0", "kappa", "kappa1"];
    let rows: Vec<[f64; 4]> = (0..g.alphabet_size())
        .map(|s| {
            let i = g.interval(s);
            [i.lo, i.hi, g.min_expansion(s), g.max_expansion(s)]
        })
        .collect();
    if c.format == Format::Json {
        let v = json!({
            "intervals": rows.iter().map(|r| json!({ "left": r[0], "right": r[1], "min_expansion": r[2], "max_expansion": r[3] })).collect::<Vec<_>>(),
            "c0": h.c0, "kappa": h.kappa, "kappa1": h.kappa1,
        });
        return Ok(vec![json_out(stamp, "validate", v)]);
    }
    let mut t = Table::new(stamp, &cols);
    for (s, r) in rows.iter().enumerate() {
        t.row(&[s.to_string(), f(r[0]), f(r[1]), f(r[2]), f(r[3]), f(h.c0), f(h.kappa), f(h.kappa1)]);
    }
    Ok(vec![t.done("validate")])
}

pub fn dimension(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let mut t = Table::new(stamp, &["method", "order", "delta", "pressure", "change"]);
    let mut prev = f64::NAN;
    let mut rows = Vec::new();
    for &order in &c.orders {
        let disc = Discretization::new(g, order);
        let delta = schottky_core::thermo::solve_delta_disc(&disc, 1e-14)?;
        let p = schottky_core::thermo::pressure_disc(&disc, delta)?;
        t.row(&["pressure".into(), order.to_string(), f(delta), f(p), f(delta - prev)]);
        rows.push(json!({ "order": order, "delta": delta, "pressure": p }));
        prev = delta;
    }
    let depth = 10;
    let bc = boxcount_dimension(g, depth, c.cap)?;
    t.row(&["boxcount".into(), depth.to_string(), f(bc.dimension), String::new(), f(bc.dimension - prev)]);
    if c.format == Format::Json {
        let v = json!({ "orders": rows, "boxcount": { "depth": depth, "dimension": bc.dimension, "residual": bc.residual, "low_confidence": bc.low_confidence } });
        return Ok(vec![json_out(stamp, "dimension", v)]);
    }
    Ok(vec![t.done("dimension")])
}

pub fn spectrum(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let mut t = Table::new(stamp, &["s", "log_lambda", "order"]);
    let mut rows = Vec::new();
    for &s in &c.s {
        let p = pressure(g, s, c.order)?;
        t.row(&[f(s), f(p), c.order.to_string()]);
        rows.push(json!({ "s": s, "log_lambda": p }));
    }
    if c.format == Format::Json {
        return Ok(vec![json_out(stamp, "spectrum", json!({ "order": c.order, "curve": rows }))]);
    }
    Ok(vec![t.done("spectrum")])
}

pub fn gap(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let th = Thermo::new(g, c.order)?;
    let mut t = Table::new(
        stamp,
        &["q", "group_order", "admissible", "a", "b", "radius", "steps", "wallclock_ms"],
    );
    let mut rows = Vec::new();
    for &q in &c.q {
        let mg = level(g, q);
        for &a in &c.a {
            for &b in &c.b {
                if !mg.admissible {
                    t.row(&[q.to_string(), mg.order().to_string(), "false".into(), f(a), f(b), String::new(), String::new(), String::new()]);
                    rows.push(json!({ "q": q, "group_order": mg.order(), "admissible": false, "a": a, "b": b }));
                    continue;
                }
                let start = Instant::now();
                let est = spectral_radius_new(&th, &mg, a, b, c.iters)?;
                let ms = start.elapsed().as_millis();
                t.row(&[
                    q.to_string(),
                    mg.order().to_string(),
                    "true".into(),
                    f(a),
                    f(b),
                    f(est.radius),
                    est.matvecs.to_string(),
                    ms.to_string(),
                ]);
                rows.push(json!({
                    "q": q, "group_order": mg.order(), "admissible": true, "a": a, "b": b,
                    "radius": est.radius, "steps": est.matvecs, "residual": est.residual, "curve": est.curve,
                }));
            }
        }
    }
    if c.format == Format::Json {
        return Ok(vec![json_out(stamp, "gap", json!({ "order": c.order, "levels": rows }))]);
    }
    Ok(vec![t.done("gap")])
}

pub fn dolgopyat_audit(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let th = Thermo::new(g, c.order)?;
    let (k, cfg) = measure_all(&th, None)?;
    let one = ModGroup::generated(g, 1);
    let mut audits = Vec::new();
    let mut t = Table::new(
        stamp,
        &["b", "trial", "seed", "contraction", "undamped", "cone_in", "cone_out", "domination_margin", "passed"],
    );
    let mut failed = Vec::new();
    for &b in &c.audit_b {
        let model = DolgopyatModel::new(&th, &k, &cfg, b)?;
        let rep = contraction_audit(&model, &one, c.trials, c.seed);
        for (i, tr) in rep.trials.iter().enumerate() {
            t.row(&[
                f(b),
                i.to_string(),
                tr.seed.to_string(),
                f(tr.contraction),
                f(tr.undamped),
                f(tr.cone_in),
                f(tr.cone_out),
                f(tr.domination_margin),
                tr.passed.to_string(),
            ]);
        }
        if rep.failure_rate > 0.05 {
            failed.push(b);
        }
        audits.push(json!({
            "b": b, "e": rep.e, "n": rep.n, "eps1": rep.eps1, "mu": rep.mu, "members": rep.members, "leaves": rep.leaves,
            "failure_rate": rep.failure_rate,
            "contraction": rep.trials.iter().map(|x| x.contraction).collect::<Vec<_>>(),
            "diagnostics": rep.trials.iter().filter_map(|x| x.diagnostic.clone()).collect::<Vec<_>>(),
        }));
    }
    let out = if c.format == Format::Json {
        let constants = json!({
            "c0": k.c0, "kappa": k.kappa, "kappa1": k.kappa1, "t0": k.t0, "a0": k.a0, "rho": k.rho,
            "p0": k.p0, "p1": k.p1, "r0": k.r0, "n1": k.n1,
        });
        json_out(stamp, "dolgopyat", json!({ "constants": constants, "delta0": k.delta0, "audits": audits }))
    } else {
        t.done("dolgopyat")
    };
    if failed.is_empty() {
        Ok(vec![out])
    } else {
        Err(Failure::Check {
            message: format!("contraction audit failed on more than 5% of trials at b = {failed:?}"),
            outputs: vec![out],
        })
    }
}

fn zero_rows(t: &mut Table, q: u64, zeros: &[Zero]) {
    for z in zeros {
        t.row(&[q.to_string(), f(z.s.re), f(z.s.im), f(z.residual), z.multiplicity.to_string()]);
    }
}

const ZERO_COLUMNS: [&str; 5] = ["q", "re", "im", "residual", "multiplicity"];

pub fn zeta(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let disc = Discretization::new(g, c.order);
    let [r0, r1, i0, i1] = c.window;
    let w = Window { re: (r0, r1), im: (i0, i1) };
    let mut t = Table::new(stamp, &ZERO_COLUMNS);
    let mut levels = Vec::new();
    for &q in &c.q {
        let mg = if q == 1 { level(g, 1) } else { admissible(g, q)? };
        let zeros = find_zeros(&disc, &mg, &w, q > 1)?;
        zero_rows(&mut t, q, &zeros);
        levels.push(json!({ "q": q, "zeros": zeros_json(&zeros) }));
    }
    if c.format == Format::Json {
        return Ok(vec![json_out(stamp, "zeros", json!({ "order": c.order, "window": c.window, "levels": levels }))]);
    }
    Ok(vec![t.done("zeros")])
}

fn zeros_json(z: &[Zero]) -> Vec<Value> {
    z.iter()
        .map(|z| json!({ "re": z.s.re, "im": z.s.im, "residual": z.residual, "multiplicity": z.multiplicity }))
        .collect()
}

pub fn resonances(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let delta = solve_delta(g, 28, 1e-13)?;
    let levels: Vec<u64> = c.q.iter().copied().filter(|&q| q > 1).collect();
    let scan = resonance_scan(g, delta, &levels, c.eps_test, c.b_max, c.order)?;
    eprintln!(
        "delta = {delta}, epsilon = {}{}",
        scan.epsilon,
        if scan.bounded_by_window { " (no zero in the strip)" } else { "" }
    );
    if c.format == Format::Json {
        let v = json!({
            "delta": delta, "epsilon": scan.epsilon, "bounded_by_window": scan.bounded_by_window,
            "window": [scan.window.re.0, scan.window.re.1, scan.window.im.0, scan.window.im.1],
            "levels": scan.levels.iter().map(|l| json!({ "q": l.q, "zeros": zeros_json(&l.zeros) })).collect::<Vec<_>>(),
        });
        return Ok(vec![json_out(stamp, "resonances", v)]);
    }
    let mut t = Table::new(stamp, &ZERO_COLUMNS);
    for l in &scan.levels {
        zero_rows(&mut t, l.q, &l.zeros);
    }
    Ok(vec![t.done("resonances")])
}

fn count_table(stamp: &Stamp, name: &str, reports: &[CountReport]) -> Output {
    let mut t = Table::new(stamp, &["q", "T", "count", "model", "residual"]);
    for r in reports {
        for i in 0..r.thresholds.len() {
            t.row(&[r.q.to_string(), f(r.thresholds[i]), r.counts[i].to_string(), f(r.model[i]), f(r.residuals[i])]);
        }
    }
    t.done(name)
}

fn count_json(stamp: &Stamp, name: &str, delta: f64, reports: &[CountReport]) -> Output {
    let v: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "q": r.q, "T": r.thresholds, "count": r.counts, "model": r.model, "residual": r.residuals }))
        .collect();
    json_out(stamp, name, json!({ "delta": delta, "levels": v }))
}

pub fn geodesics(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let delta = solve_delta(g, 28, 1e-13)?;
    let mut reports = Vec::new();
    let mut levels = Vec::new();
    for &q in &c.q {
        let mg = if q == 1 { level(g, 1) } else { admissible(g, q)? };
        reports.push(count_geodesics(g, &mg, delta, &c.t, c.cap)?);
        levels.push(mg);
    }
    let main = if c.format == Format::Json {
        count_json(stamp, "geodesics", delta, &reports)
    } else {
        count_table(stamp, "geodesics", &reports)
    };
    // base orbit table with the holonomy order at each level
    let t_max = c.t.iter().copied().fold(0.0, f64::max);
    let orbits = enumerate_orbits(g, words_for_length(g, t_max), c.cap)?;
    let mut cols = vec!["word".to_string(), "trace".into(), "length".into()];
    cols.extend(c.q.iter().map(|q| format!("holonomy_{q}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(stamp, &cols);
    for o in orbits.iter().filter(|o| o.length <= t_max) {
        let word: String = o.necklace.iter().map(|s| s.to_string()).collect();
        let mut row = vec![word, o.trace.to_string(), f(o.length)];
        row.extend(levels.iter().map(|mg| o.holonomy_order(mg).to_string()));
        t.row(&row);
    }
    Ok(vec![main, t.done("orbits")])
}

pub fn orbits(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let delta = solve_delta(g, 28, 1e-13)?;
    let z = BasePoint { x: c.z[0], y: c.z[1] };
    let w = BasePoint { x: c.w[0], y: c.w[1] };
    if z.y <= 0.0 || w.y <= 0.0 {
        return Err(Failure::Usage("base points need a positive imaginary part".into()));
    }
    let mut reports = Vec::new();
    for &q in &c.q {
        let mg = if q == 1 { level(g, 1) } else { admissible(g, q)? };
        reports.push(orbit_count_report(g, &mg, delta, &c.t, z, w, c.cap)?);
    }
    if c.format == Format::Json {
        return Ok(vec![count_json(stamp, "orbit_counts", delta, &reports)]);
    }
    Ok(vec![count_table(stamp, "orbit_counts", &reports)])
}

pub fn mix(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let th = Thermo::new(g, c.order)?;
    let xi = C64::new(c.xi[0], c.xi[1]);
    let mut t = Table::new(stamp, &["q", "t", "re", "im", "stderr"]);
    let mut l = Table::new(
        stamp,
        &["q", "xi_re", "xi_im", "monte_carlo_re", "monte_carlo_im", "operator_re", "operator_im", "stderr", "sigmas"],
    );
    let mut levels = Vec::new();
    for &q in &c.q {
        let mg = if q == 1 { level(g, 1) } else { admissible(g, q)? };
        let (phi, psi) = mean_zero_pair(&th, &mg);
        let corr = correlation(&th, &mg, &phi, &psi, &c.times, c.samples, c.seed);
        for i in 0..corr.t.len() {
            t.row(&[q.to_string(), f(corr.t[i]), f(corr.values[i].re), f(corr.values[i].im), f(corr.stderr[i])]);
        }
        let fit = fit_decay(&corr, 3.0);
        let chk = laplace_identity_check(&th, &mg, &phi, &psi, xi, c.k_max, c.samples, c.seed)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let (m, o) = (chk.monte_carlo, chk.operator());
        l.row(&[q.to_string(), f(xi.re), f(xi.im), f(m.re), f(m.im), f(o.re), f(o.im), f(chk.stderr), f(chk.sigmas())]);
        levels.push(json!({
            "q": q, "t": corr.t, "re": corr.values.iter().map(|v| v.re).collect::<Vec<_>>(),
            "im": corr.values.iter().map(|v| v.im).collect::<Vec<_>>(), "stderr": corr.stderr,
            "eta": fit.eta, "fit_points": fit.points,
            "laplace": { "monte_carlo": [m.re, m.im], "operator": [o.re, o.im], "stderr": chk.stderr, "sigmas": chk.sigmas() },
        }));
        eprintln!("q = {q}: fitted decay rate {} over {} points, Laplace discrepancy {:.2} standard errors", fit.eta, fit.points, chk.sigmas());
    }
    if c.format == Format::Json {
        return Ok(vec![json_out(stamp, "correlation", json!({ "samples": c.samples, "seed": c.seed, "normalization": "probability per level", "levels": levels }))]);
    }
    Ok(vec![t.done("correlation"), l.done("laplace")])
}

pub fn expander(g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    let mut t = Table::new(stamp, &["q", "group_order", "admissible", "gap"]);
    let mut rows = Vec::new();
    for &q in &c.q {
        let mg = level(g, q);
        let gap = if mg.admissible { cayley_gap(&mg)? } else { f64::NAN };
        t.row(&[q.to_string(), mg.order().to_string(), mg.admissible.to_string(), f(gap)]);
        rows.push(json!({ "q": q, "group_order": mg.order(), "admissible": mg.admissible, "gap": if gap.is_nan() { Value::Null } else { json!(gap) } }));
    }
    if c.format == Format::Json {
        return Ok(vec![json_out(stamp, "expander", json!({ "levels": rows }))]);
    }
    Ok(vec![t.done("expander")])
}
