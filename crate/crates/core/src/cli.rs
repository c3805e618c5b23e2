//! Batch driver: run configurations, verification suites, JSON reports, CSV matrices and the
//! dense versus matrix-free benchmark.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::det0_spectrum::{
    boundary_eigenstate_check, eigensolve_sov, interpolated_action_check, make_khat, norm_determinant,
    ortho_suite_det0, scalar_product_determinant, scalar_product_row, SeparateState, SpectralData, Which,
};
use crate::error::{Result, SovError};
use crate::gl2_model::{gl2_bases, gl2_eigen_reps, gl2_ortho_report, gl2_transfer_checks, min_n_t, Gl2Params};
use crate::gl3_model::{
    apply_transfer_free, check_rtt, check_scalar_yb, check_yang_baxter, fusion_residuals, product_formula_check,
    qdet_closed_form, t2_interpolated, transfer, ModelParams, TwistCase, TwistData,
};
use crate::numkernel::{c, pair, rel_diff, rel_err, vec_norm, CMatrix, C64, DENSE_CAP, TAU};
use crate::sampling::Sampler;
use crate::sov_bases::{local_property_residuals, sample_admissible, RetryEvent, Side, SovBasisPair, TernaryIndex};
use crate::sov_measure::{
    appc_recursion_check, b_from_dual, b_recursion, c_scaling_scan, classify_pair, coeff_r0_closed_form,
    dual_bases, expansion_leakage, gram, PairClass,
};
use crate::tt_charges::{build_tt, tt_sov_bases, tt_spectral_data};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SUITES: [&str; 12] = [
    "yangbaxter",
    "fusion",
    "bases",
    "gram",
    "measure",
    "dual",
    "det0",
    "scalarproducts",
    "ttcharges",
    "gl2",
    "appendixA",
    "appendixC",
];

/// Suites that run on a gl(2) configuration.
pub const GL2_SUITES: [&str; 3] = ["gram", "measure", "gl2"];

pub const DEFAULT_SITES: usize = 3;
pub const SEEDS_PER_TASK: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    /// value <= bound
    Upper,
    /// value > bound
    Lower,
}

/// Default bounds, keyed "suite.check".
pub const TOLERANCES: &[(&str, f64, Bound)] = &[
    ("yangbaxter.yang_baxter", 1e-11, Bound::Upper),
    ("yangbaxter.rtt", 1e-11, Bound::Upper),
    ("yangbaxter.scalar_yb", 1e-11, Bound::Upper),
    ("fusion.qdet", 1e-10, Bound::Upper),
    ("fusion.fusion_12", 1e-10, Bound::Upper),
    ("fusion.fusion_23", 1e-10, Bound::Upper),
    ("fusion.central_zero", 1e-10, Bound::Upper),
    ("fusion.t2_interpolation", 1e-9, Bound::Upper),
    ("bases.rank_ratio", 1e-9, Bound::Lower),
    ("bases.def_r0", 1e-10, Bound::Upper),
    ("bases.local_properties", 1e-11, Bound::Upper),
    ("gram.zero_cells", 1e-9, Bound::Upper),
    ("gram.offdiag_floor", 1e-6, Bound::Lower),
    ("gram.diagonal", 1e-8, Bound::Upper),
    ("gram.one_pair_coefficient", 1e-8, Bound::Upper),
    ("gram.scaling_slope", 1e-3, Bound::Upper),
    ("gram.scaling_coefficient", 1e-6, Bound::Upper),
    ("gram.gl2_offdiag", 1e-9, Bound::Upper),
    ("gram.gl2_diagonal", 1e-9, Bound::Upper),
    ("measure.inverse", 1e-8, Bound::Upper),
    ("measure.inverse_agreement", 1e-8, Bound::Upper),
    ("measure.gl2_diagonal", 1e-9, Bound::Upper),
    ("measure.gl2_identity", 1e-8, Bound::Upper),
    ("measure.gl2_reference", 1e-9, Bound::Upper),
    ("dual.orthogonality", 1e-8, Bound::Upper),
    ("dual.expansion_leakage", 1e-8, Bound::Upper),
    ("dual.b_recursion", 1e-7, Bound::Upper),
    ("det0.offdiag", 1e-9, Bound::Upper),
    ("det0.diagonal", 1e-8, Bound::Upper),
    ("det0.interpolated_actions", 1e-8, Bound::Upper),
    ("det0.boundary_eigenstates", 1e-9, Bound::Upper),
    ("det0.boundary_constants", 1e-8, Bound::Upper),
    ("scalarproducts.factorization", 1e-7, Bound::Upper),
    ("scalarproducts.fusion", 1e-8, Bound::Upper),
    ("scalarproducts.norm", 1e-7, Bound::Upper),
    ("scalarproducts.separate_states", 1e-7, Bound::Upper),
    ("ttcharges.projectors", 1e-8, Bound::Upper),
    ("ttcharges.commutation", 1e-9, Bound::Upper),
    ("ttcharges.simplified_fusion", 1e-8, Bound::Upper),
    ("ttcharges.offdiag", 1e-9, Bound::Upper),
    ("ttcharges.diagonal", 1e-8, Bound::Upper),
    ("ttcharges.factorization", 1e-7, Bound::Upper),
    ("ttcharges.scalar_products", 1e-7, Bound::Upper),
    ("gl2.transfer", 1e-10, Bound::Upper),
    ("gl2.orthogonality", 1e-9, Bound::Upper),
    ("gl2.measure", 1e-9, Bound::Upper),
    ("gl2.identity", 1e-8, Bound::Upper),
    ("gl2.eigen_representations", 1e-7, Bound::Upper),
    ("gl2.n_t_min", 1e-8, Bound::Lower),
    ("appendixA.product_formula", 1e-10, Bound::Upper),
    ("appendixC.one_pair", 1e-8, Bound::Upper),
    ("appendixC.two_pairs", 1e-8, Bound::Upper),
];

// ---------------------------------------------------------------------------------------------
// configuration

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algebra {
    #[default]
    Gl3,
    Gl2,
}

/// A JSON number or a "p/q" string.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Num(f64),
    Text(String),
}

impl Real {
    pub fn value(&self) -> Result<f64> {
        match self {
            Real::Num(x) => Ok(*x),
            Real::Text(s) => parse_rational(s),
        }
    }
}

pub fn parse_rational(s: &str) -> Result<f64> {
    let bad = || SovError::Config(format!("cannot read {s:?} as a number"));
    let (p, q) = match s.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s.trim(), "1"),
    };
    let p: f64 = p.parse().map_err(|_| bad())?;
    let q: f64 = q.parse().map_err(|_| bad())?;
    if q == 0.0 || !p.is_finite() || !q.is_finite() {
        return Err(bad());
    }
    Ok(p / q)
}

/// [re, im] or a bare real.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Complex {
    Pair([Real; 2]),
    Real(Real),
}

impl Complex {
    pub fn value(&self) -> Result<C64> {
        match self {
            Complex::Pair([re, im]) => Ok(c(re.value()?, im.value()?)),
            Complex::Real(re) => Ok(c(re.value()?, 0.0)),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum XiSpec {
    List(Vec<Complex>),
    Sampled {
        seed: u64,
        /// [span, den]: parts drawn from k/den, |k| <= span.
        #[serde(default)]
        grid: Option<[i32; 2]>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistSpec {
    pub matrix: Option<Vec<Vec<Complex>>>,
    pub w: Option<Vec<Vec<Complex>>>,
    pub k_jordan: Option<Vec<Vec<Complex>>>,
    pub eigenvalues: Option<Vec<Complex>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub algebra: Algebra,
    pub sites: Option<usize>,
    pub seed: Option<u64>,
    pub eta: Option<Complex>,
    pub xi: Option<XiSpec>,
    pub twist: Option<TwistSpec>,
    pub reference: Option<Vec<Complex>>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub tasks: Vec<String>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SovError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SovError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sites: Option<usize>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub suites: Vec<String>,
    pub all: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub algebra: Algebra,
    pub sites: usize,
    pub seed: u64,
    /// "explicit" when the file fixes the model, "sampled" when every task draws its own.
    pub model: String,
    pub seeds: Vec<u64>,
    pub eta: Option<[f64; 2]>,
    pub xi: Option<Vec<[f64; 2]>>,
    pub twist_form: Option<String>,
    pub twist_matrix: Option<Vec<Vec<[f64; 2]>>>,
    pub reference: Option<Vec<[f64; 2]>>,
    pub tolerances: BTreeMap<String, f64>,
    pub tasks: Vec<String>,
    pub output: PathBuf,
}

#[derive(Clone, Debug)]
pub enum Explicit {
    Gl3 { p: ModelParams, xyz: [C64; 3] },
    Gl2(Gl2Params),
}

pub struct Context {
    pub config: ResolvedConfig,
    pub explicit: Option<Explicit>,
    bounds: BTreeMap<String, (f64, Bound)>,
}

fn pair_of(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn matrix_of(rows: &[Vec<Complex>], d: usize, what: &str) -> Result<CMatrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(SovError::Config(format!("{what} must be {d}x{d}")));
    }
    let vals: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(Complex::value).collect::<Result<_>>()).collect::<Result<_>>()?;
    Ok(CMatrix::from_rows(&vals))
}

fn complex_list(v: &[Complex], len: usize, what: &str) -> Result<Vec<C64>> {
    if v.len() != len {
        return Err(SovError::Config(format!("{what} needs {len} entries, got {}", v.len())));
    }
    v.iter().map(Complex::value).collect()
}

fn config_err(e: SovError) -> SovError {
    match e {
        SovError::Config(_) => e,
        other => SovError::Config(other.to_string()),
    }
}

/// Twist form present in the spec, rejecting zero or several forms.
fn twist_form(t: &TwistSpec) -> Result<&'static str> {
    let forms = [
        ("matrix", t.matrix.is_some()),
        ("w_k_jordan", t.w.is_some() || t.k_jordan.is_some()),
        ("eigenvalues", t.eigenvalues.is_some()),
    ];
    let present: Vec<&str> = forms.iter().filter(|f| f.1).map(|f| f.0).collect();
    match present.as_slice() {
        [one] => {
            if *one == "w_k_jordan" && (t.w.is_none() || t.k_jordan.is_none()) {
                return Err(SovError::Config("twist {w, k_jordan} needs both matrices".into()));
            }
            Ok(one)
        }
        [] => Err(SovError::Config("twist needs one of {matrix}, {w, k_jordan}, {eigenvalues}".into())),
        many => Err(SovError::Config(format!("twist has several specification forms: {}", many.join(", ")))),
    }
}

fn gl3_twist(t: &TwistSpec) -> Result<TwistData> {
    match twist_form(t)? {
        "matrix" => TwistData::from_matrix(matrix_of(t.matrix.as_ref().unwrap(), 3, "twist matrix")?),
        "eigenvalues" => {
            let k = complex_list(t.eigenvalues.as_ref().unwrap(), 3, "twist eigenvalues")?;
            TwistData::from_eigenvalues(CMatrix::identity(3), [k[0], k[1], k[2]])
        }
        _ => {
            let w = matrix_of(t.w.as_ref().unwrap(), 3, "w")?;
            let kj = matrix_of(t.k_jordan.as_ref().unwrap(), 3, "k_jordan")?;
            let is_zero = |z: C64| z.norm() == 0.0;
            let case = match (is_zero(kj[(0, 1)]), is_zero(kj[(1, 2)])) {
                (true, true) => TwistCase::I,
                (false, true) => TwistCase::II,
                (false, false) => TwistCase::III,
                (true, false) => return Err(SovError::Config("k_jordan block shape is not one of the three cases".into())),
            };
            TwistData::from_w_kj(w, kj, case)
        }
    }
}

fn gl2_twist(t: &TwistSpec) -> Result<CMatrix> {
    match twist_form(t)? {
        "matrix" => matrix_of(t.matrix.as_ref().unwrap(), 2, "twist matrix"),
        "eigenvalues" => {
            let k = complex_list(t.eigenvalues.as_ref().unwrap(), 2, "twist eigenvalues")?;
            let mut m = CMatrix::zeros(2, 2);
            m[(0, 0)] = k[0];
            m[(1, 1)] = k[1];
            Ok(m)
        }
        _ => {
            let w = matrix_of(t.w.as_ref().unwrap(), 2, "w")?;
            let kj = matrix_of(t.k_jordan.as_ref().unwrap(), 2, "k_jordan")?;
            Ok(w.matmul(&kj).matmul(&w.inverse()?))
        }
    }
}

impl Context {
    pub fn resolve(cfg: &RunConfig, ov: &Overrides) -> Result<Self> {
        let seed = ov.seed.or(cfg.seed).unwrap_or(0);
        let listed = match &cfg.xi {
            Some(XiSpec::List(v)) => Some(v.len()),
            _ => None,
        };
        let sites = ov.sites.or(cfg.sites).or(listed).unwrap_or(DEFAULT_SITES);
        if sites == 0 {
            return Err(SovError::Config("sites must be at least 1".into()));
        }
        let allowed: Vec<&str> = match cfg.algebra {
            Algebra::Gl3 => SUITES.to_vec(),
            Algebra::Gl2 => GL2_SUITES.to_vec(),
        };
        let mut tasks: Vec<String> = if ov.all {
            allowed.iter().map(|s| s.to_string()).collect()
        } else if !ov.suites.is_empty() {
            ov.suites.clone()
        } else if !cfg.tasks.is_empty() {
            cfg.tasks.clone()
        } else {
            allowed.iter().map(|s| s.to_string()).collect()
        };
        tasks.retain(|t| !t.trim().is_empty());
        for t in &tasks {
            if !SUITES.contains(&t.as_str()) {
                return Err(SovError::Config(format!("unknown suite {t:?}; registered: {}", SUITES.join(", "))));
            }
            if !allowed.contains(&t.as_str()) {
                return Err(SovError::Config(format!("suite {t:?} is not available for algebra gl2")));
            }
        }

        let mut bounds: BTreeMap<String, (f64, Bound)> = TOLERANCES.iter().map(|&(k, v, b)| (k.to_string(), (v, b))).collect();
        if let Some(tol) = ov.tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(SovError::Config(format!("--tol must be positive, got {tol}")));
            }
            for (v, b) in bounds.values_mut() {
                if *b == Bound::Upper {
                    *v = tol;
                }
            }
        }
        for (k, v) in &cfg.tolerances {
            match bounds.get_mut(k) {
                Some(entry) => entry.0 = *v,
                None => return Err(SovError::Config(format!("unknown tolerance key {k:?}"))),
            }
        }

        let explicit_given = cfg.eta.is_some() || cfg.xi.is_some() || cfg.twist.is_some() || cfg.reference.is_some();
        let mut resolved = ResolvedConfig {
            algebra: cfg.algebra,
            sites,
            seed,
            model: if explicit_given { "explicit" } else { "sampled" }.into(),
            seeds: if explicit_given { vec![seed] } else { (0..SEEDS_PER_TASK).map(|i| seed + i).collect() },
            eta: None,
            xi: None,
            twist_form: None,
            twist_matrix: None,
            reference: None,
            tolerances: bounds.iter().map(|(k, v)| (k.clone(), v.0)).collect(),
            tasks,
            output: ov.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("sovlab-out")),
        };
        let explicit = if explicit_given { Some(Self::explicit_model(cfg, sites, seed, &mut resolved).map_err(config_err)?) } else { None };
        Ok(Context { config: resolved, explicit, bounds })
    }

    fn explicit_model(cfg: &RunConfig, n: usize, seed: u64, out: &mut ResolvedConfig) -> Result<Explicit> {
        let mut s = Sampler::new(seed);
        let eta = match &cfg.eta {
            Some(e) => e.value()?,
            None => s.eta(),
        };
        let xi = match &cfg.xi {
            Some(XiSpec::List(v)) => complex_list(v, n, "xi")?,
            Some(XiSpec::Sampled { seed, grid }) => {
                let [span, den] = grid.unwrap_or([8, 4]);
                if span <= 0 || den <= 0 {
                    return Err(SovError::Config("xi grid needs positive span and denominator".into()));
                }
                Sampler::new(*seed).xi_on_grid(n, eta, span, den)
            }
            None => s.xi(n, eta),
        };
        if let Some(t) = &cfg.twist {
            out.twist_form = Some(twist_form(t)?.to_string());
        }
        out.eta = Some(pair_of(eta));
        out.xi = Some(xi.iter().map(|&z| pair_of(z)).collect());
        let rows = |m: &CMatrix| (0..m.rows()).map(|i| m.row(i).into_iter().map(pair_of).collect()).collect();
        match cfg.algebra {
            Algebra::Gl3 => {
                let twist = match &cfg.twist {
                    Some(t) => gl3_twist(t)?,
                    None => s.twist(TwistCase::I)?,
                };
                let xyz = match &cfg.reference {
                    Some(r) => {
                        let v = complex_list(r, 3, "reference (x, y, z)")?;
                        [v[0], v[1], v[2]]
                    }
                    None => s.xyz(),
                };
                out.twist_matrix = Some(rows(&twist.k_matrix));
                out.reference = Some(xyz.iter().map(|&z| pair_of(z)).collect());
                let p = ModelParams::new(eta, xi, twist)?;
                Ok(Explicit::Gl3 { p, xyz })
            }
            Algebra::Gl2 => {
                let base = s.gl2_params(n)?;
                let k = match &cfg.twist {
                    Some(t) => gl2_twist(t)?,
                    None => base.k.clone(),
                };
                let xy = match &cfg.reference {
                    Some(r) => {
                        let v = complex_list(r, 2, "reference (x, y)")?;
                        [v[0], v[1]]
                    }
                    None => base.xy,
                };
                out.twist_matrix = Some(rows(&k));
                out.reference = Some(xy.iter().map(|&z| pair_of(z)).collect());
                Ok(Explicit::Gl2(Gl2Params::new(eta, xi, k, xy)?))
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn sites(&self) -> usize {
        self.config.sites
    }

    pub fn bound(&self, key: &str) -> (f64, Bound) {
        *self.bounds.get(key).unwrap_or_else(|| panic!("no tolerance registered for {key}"))
    }

    fn sampled_seeds(&self) -> Vec<u64> {
        (0..SEEDS_PER_TASK).map(|i| self.config.seed + i).collect()
    }

    fn explicit_gl3(&self, n: usize) -> Option<(&ModelParams, &[C64; 3])> {
        match &self.explicit {
            Some(Explicit::Gl3 { p, xyz }) if p.sites == n => Some((p, xyz)),
            _ => None,
        }
    }

    /// Parameters only: the explicit model when it has n sites, else one draw per seed.
    fn gl3_draws(&self, n: usize) -> Result<Vec<Sample>> {
        if let Some((p, xyz)) = self.explicit_gl3(n) {
            return Ok(vec![Sample { seed: self.seed(), p: p.clone(), xyz: *xyz, bases: None, rng: aux_rng(self.seed()) }]);
        }
        self.sampled_seeds()
            .into_iter()
            .map(|s| {
                let mut rng = Sampler::new(s);
                let p = rng.params(n, TwistCase::I)?;
                let xyz = rng.xyz();
                Ok(Sample { seed: s, p, xyz, bases: None, rng: aux_rng(s) })
            })
            .collect()
    }

    /// Parameters with full-rank dressed bases, resampling on rank loss.
    fn gl3_admissible(&self, task: &mut Task, n: usize, case: TwistCase) -> Result<Vec<Sample>> {
        if let Some((p, xyz)) = self.explicit_gl3(n) {
            let bases = full_rank(SovBasisPair::dressed(p, xyz)?)?;
            return Ok(vec![Sample { seed: self.seed(), p: p.clone(), xyz: *xyz, bases: Some(bases), rng: aux_rng(self.seed()) }]);
        }
        self.sampled_seeds()
            .into_iter()
            .map(|s| {
                let (p, xyz, bases, retries) = sample_admissible(s, n, case, 5)?;
                task.report.retries.extend(retries);
                Ok(Sample { seed: s, p, xyz, bases: Some(bases), rng: aux_rng(s) })
            })
            .collect()
    }

    /// Degenerate-twist models: the explicit twist with its smallest eigenvalue zeroed (unless
    /// det K already vanishes), or sampled case-i twists treated the same way.
    fn det0_samples(&self, task: &mut Task, n: usize) -> Result<Vec<Sample>> {
        if let Some((p, xyz)) = self.explicit_gl3(n) {
            let p = if p.twist.c.norm() <= TAU { p.clone() } else { p.with_twist(make_khat(&p.twist)?) };
            let bases = full_rank(SovBasisPair::dressed(&p, xyz)?)?;
            return Ok(vec![Sample { seed: self.seed(), p, xyz: *xyz, bases: Some(bases), rng: aux_rng(self.seed()) }]);
        }
        let mut out = Vec::new();
        for s in self.sampled_seeds() {
            let mut last = SovError::SingularBasis { ratio: 0.0 };
            let mut found = None;
            for attempt in 0..=5u64 {
                let sd = s + 1000 * attempt;
                let mut rng = Sampler::new(sd);
                let draw = rng.params(n, TwistCase::I).and_then(|p| {
                    let khat = p.with_twist(make_khat(&p.twist)?);
                    let xyz = rng.xyz();
                    let bases = full_rank(SovBasisPair::dressed(&khat, &xyz)?)?;
                    Ok((khat, xyz, bases))
                });
                match draw {
                    Ok((p, xyz, bases)) => {
                        found = Some(Sample { seed: sd, p, xyz, bases: Some(bases), rng: aux_rng(sd) });
                        break;
                    }
                    Err(e) => {
                        task.report.retries.push(RetryEvent { seed: sd, reason: e.to_string() });
                        last = e;
                    }
                }
            }
            out.push(found.ok_or(last)?);
        }
        Ok(out)
    }

    fn gl2_samples(&self, n: usize) -> Result<Vec<(u64, Gl2Params)>> {
        if let Some(Explicit::Gl2(p)) = &self.explicit {
            if p.sites == n {
                return Ok(vec![(self.seed(), p.clone())]);
            }
        }
        self.sampled_seeds().into_iter().map(|s| Ok((s, Sampler::new(s).gl2_params(n)?))).collect()
    }
}

fn full_rank(bases: SovBasisPair) -> Result<SovBasisPair> {
    let (l, r) = bases.rank_ratios();
    if l > TAU && r > TAU {
        Ok(bases)
    } else {
        Err(SovError::SingularBasis { ratio: l.min(r) })
    }
}

/// Auxiliary draws (spectral points, separate states) independent of the model stream.
fn aux_rng(seed: u64) -> Sampler {
    Sampler::new(seed ^ 0xA5A5_5A5A_0F0F_F0F0)
}

struct Sample {
    seed: u64,
    p: ModelParams,
    xyz: [C64; 3],
    bases: Option<SovBasisPair>,
    rng: Sampler,
}

impl Sample {
    fn bases(&self) -> &SovBasisPair {
        self.bases.as_ref().expect("sample drawn without bases")
    }
}

pub fn lambda0(p: &ModelParams) -> C64 {
    p.xi[0] + p.eta * (13.0 / 7.0)
}

// ---------------------------------------------------------------------------------------------
// tasks and reports

#[derive(Clone, Debug, Default, Serialize)]
pub struct TaskReport {
    pub name: String,
    pub passed: bool,
    /// Worst value of each check over all runs: maxima for upper bounds, minima for floors.
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub failures: Vec<String>,
    pub quantities: BTreeMap<String, Value>,
    pub seeds: Vec<u64>,
    pub retries: Vec<RetryEvent>,
    pub error: Option<String>,
}

pub struct Task<'a> {
    ctx: &'a Context,
    pub report: TaskReport,
    pub matrices: BTreeMap<String, CMatrix>,
}

impl<'a> Task<'a> {
    fn new(ctx: &'a Context, name: &str) -> Self {
        Task { ctx, report: TaskReport { name: name.to_string(), ..Default::default() }, matrices: BTreeMap::new() }
    }

    fn check(&mut self, name: &str, value: f64) {
        let (bound, kind) = self.ctx.bound(&format!("{}.{}", self.report.name, name));
        self.report.tolerances.insert(name.to_string(), bound);
        let e = self.report.residuals.entry(name.to_string()).or_insert(value);
        *e = if e.is_nan() || value.is_nan() {
            f64::NAN
        } else {
            match kind {
                Bound::Upper => e.max(value),
                Bound::Lower => e.min(value),
            }
        };
    }

    fn quantity(&mut self, name: &str, v: impl Serialize) {
        self.report.quantities.insert(name.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn seed(&mut self, s: u64) {
        if !self.report.seeds.contains(&s) {
            self.report.seeds.push(s);
        }
    }

    fn finish(mut self, outcome: Result<()>) -> (TaskReport, BTreeMap<String, CMatrix>) {
        for (name, &v) in &self.report.residuals {
            let (bound, kind) = self.ctx.bound(&format!("{}.{}", self.report.name, name));
            let ok = match kind {
                Bound::Upper => v <= bound,
                Bound::Lower => v > bound,
            };
            if !ok {
                let rel = if kind == Bound::Upper { ">" } else { "<=" };
                self.report.failures.push(format!("{name}: {v:e} {rel} {bound:e}"));
            }
        }
        if let Err(e) = outcome {
            self.report.error = Some(e.to_string());
        }
        self.report.passed = self.report.error.is_none() && self.report.failures.is_empty() && !self.report.residuals.is_empty();
        (self.report, self.matrices)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub version: String,
    pub config: ResolvedConfig,
    pub tasks: Vec<TaskReport>,
    pub passed: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        // Value objects are BTreeMap-backed, so keys come out sorted
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

pub struct RunOutput {
    pub report: Report,
    /// (file name, matrix) pairs written next to report.json.
    pub matrices: Vec<(String, CMatrix)>,
}

pub fn run_task(ctx: &Context, name: &str) -> (TaskReport, BTreeMap<String, CMatrix>) {
    let mut t = Task::new(ctx, name);
    let gl2 = ctx.config.algebra == Algebra::Gl2;
    let outcome = match name {
        "yangbaxter" => suite_yangbaxter(ctx, &mut t),
        "fusion" => suite_fusion(ctx, &mut t),
        "bases" => suite_bases(ctx, &mut t),
        "gram" if gl2 => suite_gl2_gram(ctx, &mut t),
        "gram" => suite_gram(ctx, &mut t),
        "measure" if gl2 => suite_gl2_measure(ctx, &mut t),
        "measure" => suite_measure(ctx, &mut t),
        "dual" => suite_dual(ctx, &mut t),
        "det0" => suite_det0(ctx, &mut t),
        "scalarproducts" => suite_scalar_products(ctx, &mut t),
        "ttcharges" => suite_ttcharges(ctx, &mut t),
        "gl2" => suite_gl2(ctx, &mut t),
        "appendixA" => suite_appendix_a(ctx, &mut t),
        "appendixC" => suite_appendix_c(ctx, &mut t),
        other => Err(SovError::Config(format!("unknown suite {other:?}"))),
    };
    t.finish(outcome)
}

/// Runs every configured task in order.
pub fn run(ctx: &Context) -> RunOutput {
    let mut tasks = Vec::new();
    let mut matrices = Vec::new();
    for name in &ctx.config.tasks {
        let (rep, mats) = run_task(ctx, name);
        for (file, m) in mats {
            if !matrices.iter().any(|(f, _): &(String, CMatrix)| *f == file) {
                matrices.push((file, m));
            }
        }
        tasks.push(rep);
    }
    let passed = tasks.iter().all(|t| t.passed);
    RunOutput { report: Report { version: VERSION.to_string(), config: ctx.config.clone(), tasks, passed }, matrices }
}

/// Long-format CSV: one row per cell, flat basis indices, "re,im" quoted values.
pub fn matrix_csv(m: &CMatrix) -> String {
    let mut s = String::from("h,k,value\n");
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let z = m[(i, j)];
            s.push_str(&format!("{i},{j},\"{:e},{:e}\"\n", z.re, z.im));
        }
    }
    s
}

pub fn write_outputs(dir: &Path, out: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), out.report.to_json())?;
    for (file, m) in &out.matrices {
        fs::write(dir.join(file), matrix_csv(m))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------------------------
// suites

fn suite_yangbaxter(ctx: &Context, t: &mut Task) -> Result<()> {
    for mut s in ctx.gl3_draws(ctx.sites())? {
        t.seed(s.seed);
        let (l, m) = (s.rng.lambda(), s.rng.lambda());
        t.check("yang_baxter", check_yang_baxter(l, m, s.p.eta).max(check_yang_baxter(l, l, s.p.eta)));
        t.check("rtt", check_rtt(&s.p, l, m)?);
        t.check("scalar_yb", check_scalar_yb(&s.p.twist.k_matrix, l, s.p.eta));
    }
    Ok(())
}

fn suite_fusion(ctx: &Context, t: &mut Task) -> Result<()> {
    for mut s in ctx.gl3_draws(ctx.sites())? {
        t.seed(s.seed);
        for _ in 0..5 {
            let l = s.rng.lambda();
            t.check("qdet", rel_diff(&transfer(&s.p, 3, l)?, &qdet_closed_form(&s.p, l)));
        }
        for row in fusion_residuals(&s.p)? {
            t.check("fusion_12", row.fusion_12);
            t.check("fusion_23", row.fusion_23);
            t.check("central_zero", row.central_zero);
        }
        let l = s.rng.lambda();
        t.check("t2_interpolation", rel_diff(&t2_interpolated(&s.p, l)?, &transfer(&s.p, 2, l)?));
    }
    Ok(())
}

fn suite_bases(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    let cases: Vec<TwistCase> = match ctx.explicit_gl3(n) {
        Some((p, _)) => vec![p.twist.case],
        None => vec![TwistCase::I, TwistCase::II, TwistCase::III],
    };
    for case in cases {
        for s in ctx.gl3_admissible(t, n, case)? {
            t.seed(s.seed);
            let bases = s.bases();
            let (l, r) = bases.rank_ratios();
            t.check("rank_ratio", l.min(r));
            let mut def_r0: f64 = 0.0;
            for k in 0..bases.dim() {
                let v = pair(&bases.left.row(k), &bases.ref_vector);
                let expect = if k == 0 { 1.0 } else { 0.0 };
                def_r0 = def_r0.max((v - expect).norm());
            }
            t.check("def_r0", def_r0);
            for a in 0..n {
                let r = local_property_residuals(&s.xyz, &s.p.twist, &s.p, a)?;
                t.check("local_properties", r.iter().cloned().fold(0.0, f64::max));
            }
        }
    }
    Ok(())
}

fn suite_gram(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    let cs = [c(0.5, 0.25), c(-1.25, 0.75), c(2.0, -1.5), c(0.25, 1.0)];
    for (i, s) in ctx.gl3_admissible(t, n, TwistCase::I)?.into_iter().enumerate() {
        t.seed(s.seed);
        let g = gram(&s.p, s.bases())?;
        t.check("zero_cells", g.zero_max);
        t.check("diagonal", g.diag_max_rel);
        if n >= 2 {
            // beyond three sites couplings span many orders, so the floor is taken per cell
            t.check("offdiag_floor", if n <= 3 { g.offdiag_min } else { g.offdiag_min_cell });
        }
        t.quantity("offdiag_cells", g.offdiag_cells);
        t.quantity("pattern_violations", g.violations.len());
        if i == 0 {
            t.matrices.insert("gram.csv".into(), g.gram.clone());
        }
        if n < 2 || s.p.twist.c.norm() <= TAU {
            continue;
        }
        for cell in g.coefficients.iter().filter(|c| c.r == 1) {
            if let PairClass::OffDiag { alpha, beta, .. } = classify_pair(&cell.h, &cell.k) {
                t.check("one_pair_coefficient", rel_err(cell.value, coeff_r0_closed_form(&s.p, &cell.h, alpha[0], beta[0])));
            }
        }
        if n <= 4 {
            let rows = c_scaling_scan(&s.p, &s.xyz, &cs, None)?;
            for row in rows.iter().filter(|r| r.r <= 2) {
                t.check("scaling_slope", (row.slope - row.r as f64).abs());
                t.check("scaling_coefficient", row.coeff_spread);
            }
        }
    }
    Ok(())
}

fn suite_measure(ctx: &Context, t: &mut Task) -> Result<()> {
    for (i, s) in ctx.gl3_admissible(t, ctx.sites(), TwistCase::I)?.into_iter().enumerate() {
        t.seed(s.seed);
        let g = gram(&s.p, s.bases())?;
        let d = dual_bases(s.bases(), &g)?;
        t.check("inverse", d.inverse_residual);
        t.check("inverse_agreement", d.inverse_agreement);
        if i == 0 {
            t.matrices.insert("gram.csv".into(), g.gram.clone());
            t.matrices.insert("measure.csv".into(), d.measure.clone());
        }
    }
    Ok(())
}

fn suite_dual(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    for s in ctx.gl3_admissible(t, n, TwistCase::I)? {
        t.seed(s.seed);
        let g = gram(&s.p, s.bases())?;
        let d = dual_bases(s.bases(), &g)?;
        t.check("orthogonality", d.ortho_residuals.0.max(d.ortho_residuals.1));
        for h in TernaryIndex::all(n) {
            t.check("expansion_leakage", expansion_leakage(&d, &h));
        }
        if n >= 2 {
            let h = TernaryIndex::uniform(n, 1);
            let rec = b_recursion(&g, &h)?;
            let solved = b_from_dual(&d, &g, &h);
            for (key, v) in &rec {
                t.check("b_recursion", solved.get(key).map_or(f64::INFINITY, |w| rel_err(*v, *w)));
            }
        }
    }
    Ok(())
}

fn suite_det0(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    for mut s in ctx.det0_samples(t, n)? {
        t.seed(s.seed);
        let bases = s.bases.take().expect("det0 samples carry bases");
        let r = ortho_suite_det0(&s.p, &bases)?;
        t.check("offdiag", r.offdiag_max);
        t.check("diagonal", r.diag_max_rel);
        for _ in 0..10 {
            let h = TernaryIndex::from_flat(s.rng.index(s.p.dim()), n);
            let l = s.rng.lambda();
            for which in [Which::T1, Which::T2] {
                for side in [Side::Left, Side::Right] {
                    t.check("interpolated_actions", interpolated_action_check(&s.p, &bases, &h, which, side, &[l])?);
                }
            }
        }
        let lambdas: Vec<C64> = (0..5).map(|_| s.rng.lambda()).collect();
        let b = boundary_eigenstate_check(&s.p, &bases, &lambdas)?;
        t.check("boundary_eigenstates", b.max_residual());
        t.check("boundary_constants", b.max_spread());
    }
    Ok(())
}

fn separate_state(rng: &mut Sampler, n: usize) -> SeparateState {
    let coeffs = (0..n).map(|_| (0..3).map(|_| rng.complex_unit()).collect()).collect();
    SeparateState::new(coeffs, Side::Left)
}

fn direct_norm(s: &SpectralData, bases: &SovBasisPair, norms: &[C64]) -> C64 {
    pair(&SeparateState::from_left_eigenstate(s).assemble(bases, norms), &s.right)
}

fn suite_scalar_products(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    let count = if n <= 2 { 20 } else { 5 };
    let mut excluded = 0usize;
    for mut s in ctx.det0_samples(t, n)? {
        t.seed(s.seed);
        let bases = s.bases.take().expect("det0 samples carry bases");
        let norms = gram(&s.p, &bases)?.diag;
        let spec = eigensolve_sov(&s.p, &bases, lambda0(&s.p))?;
        for sd in &spec {
            t.check("factorization", sd.factorization.0.max(sd.factorization.1));
            t.check("fusion", sd.fusion_residual);
            if sd.pattern.is_none() {
                excluded += 1;
                continue;
            }
            let direct = direct_norm(sd, &bases, &norms);
            t.check("norm", rel_err(norm_determinant(sd, &s.p)?, direct));
            let own = SeparateState::from_left_eigenstate(sd);
            t.check("norm", rel_err(scalar_product_determinant(&own, sd, &s.p)?, direct));
        }
        let usable: Vec<&SpectralData> = spec.iter().filter(|sd| sd.pattern.is_some()).collect();
        if usable.is_empty() {
            return Err(SovError::PatternMissing);
        }
        for _ in 0..count {
            let sd = usable[s.rng.index(usable.len())];
            let alpha = separate_state(&mut s.rng, n);
            t.check("separate_states", scalar_product_row(&alpha, sd, &s.p, &bases, &norms)?.rel_error);
        }
    }
    t.quantity("excluded_eigenstates", excluded);
    Ok(())
}

/// max |<h|k>| / (|<h|| ||k>|) over h != k.
pub fn offdiag_cosine(bases: &SovBasisPair) -> f64 {
    let g = bases.left.matmul(&bases.right);
    let d = g.rows();
    let rn: Vec<f64> = (0..d).map(|i| vec_norm(&bases.left.row(i))).collect();
    let cn: Vec<f64> = (0..d).map(|j| vec_norm(&bases.right.col(j))).collect();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                worst = worst.max(g[(i, j)].norm() / (rn[i] * cn[j]));
            }
        }
    }
    worst
}

fn suite_ttcharges(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    let mut gram_scaled: f64 = 0.0;
    for mut s in ctx.gl3_draws(n)? {
        t.seed(s.seed);
        let khat = s.p.with_twist(make_khat(&s.p.twist)?);
        let f = build_tt(&s.p, &khat, lambda0(&s.p))?;
        let (complete, idem) = f.projector_residuals();
        t.check("projectors", complete.max(idem));
        let (l, m) = (s.rng.lambda(), s.rng.lambda());
        t.check("commutation", f.commutation_residual(l, m)?);
        for row in f.fusion_checks()? {
            t.check("simplified_fusion", row.residuals.iter().cloned().fold(0.0, f64::max));
        }
        let bases = tt_sov_bases(&f, &s.xyz)?;
        let r = ortho_suite_det0(&f.khat, &bases)?;
        gram_scaled = gram_scaled.max(r.offdiag_max);
        t.check("offdiag", offdiag_cosine(&bases));
        t.check("diagonal", r.diag_max_rel);
        let norms = gram(&f.khat, &bases)?.diag;
        for sd in tt_spectral_data(&f, &bases)? {
            t.check("factorization", sd.factorization.0.max(sd.factorization.1));
            if sd.pattern.is_none() {
                continue;
            }
            let alpha = separate_state(&mut s.rng, n);
            t.check("scalar_products", scalar_product_row(&alpha, &sd, &f.khat, &bases, &norms)?.rel_error);
            t.check("scalar_products", rel_err(norm_determinant(&sd, &f.khat)?, direct_norm(&sd, &bases, &norms)));
        }
    }
    t.quantity("offdiag_relative_to_gram_max", gram_scaled);
    Ok(())
}

fn gl2_lambda0(p: &Gl2Params) -> C64 {
    p.xi[0] + p.eta * (13.0 / 7.0)
}

fn suite_gl2(ctx: &Context, t: &mut Task) -> Result<()> {
    let mut n_t = f64::INFINITY;
    for (seed, p) in ctx.gl2_samples(ctx.sites())? {
        t.seed(seed);
        let mut rng = aux_rng(seed);
        let r = gl2_transfer_checks(&p, rng.lambda(), rng.lambda())?;
        t.check("transfer", r.max_residual());
        let bases = gl2_bases(&p)?;
        let o = gl2_ortho_report(&p, &bases);
        t.check("orthogonality", o.offdiag_max);
        t.check("measure", o.diag_max_rel.max(o.reference_residual).max(o.zero_vector_residual));
        t.check("identity", o.identity_residual);
        let rows = gl2_eigen_reps(&p, &bases, gl2_lambda0(&p))?;
        for row in &rows {
            t.check("eigen_representations", row.max_residual());
        }
        if p.det_k().norm() > TAU {
            let m = min_n_t(&rows);
            n_t = n_t.min(m);
            t.check("n_t_min", m);
        }
    }
    t.quantity("n_t_min", n_t);
    Ok(())
}

fn suite_gl2_gram(ctx: &Context, t: &mut Task) -> Result<()> {
    for (i, (seed, p)) in ctx.gl2_samples(ctx.sites())?.into_iter().enumerate() {
        t.seed(seed);
        let bases = gl2_bases(&p)?;
        let o = gl2_ortho_report(&p, &bases);
        t.check("gl2_offdiag", o.offdiag_max);
        t.check("gl2_diagonal", o.diag_max_rel);
        if i == 0 {
            t.matrices.insert("gram.csv".into(), bases.left.matmul(&bases.right));
        }
    }
    Ok(())
}

fn suite_gl2_measure(ctx: &Context, t: &mut Task) -> Result<()> {
    for (i, (seed, p)) in ctx.gl2_samples(ctx.sites())?.into_iter().enumerate() {
        t.seed(seed);
        let bases = gl2_bases(&p)?;
        let o = gl2_ortho_report(&p, &bases);
        t.check("gl2_diagonal", o.diag_max_rel);
        t.check("gl2_identity", o.identity_residual);
        t.check("gl2_reference", o.reference_residual);
        let g = bases.left.matmul(&bases.right);
        let m = g.inverse_equilibrated()?;
        t.check("inverse", m.matmul(&g).sub(&CMatrix::identity(p.dim())).max_abs());
        if i == 0 {
            t.matrices.insert("gram.csv".into(), g);
            t.matrices.insert("measure.csv".into(), m);
        }
    }
    Ok(())
}

fn suite_appendix_a(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites();
    let subsets: Vec<Vec<usize>> = if n <= 3 {
        (1..1usize << n).map(|mask| (1..=n).filter(|a| mask >> (a - 1) & 1 == 1).collect()).collect()
    } else {
        (1..=n).map(|m| (1..=m).collect()).collect()
    };
    for s in ctx.gl3_draws(n)? {
        t.seed(s.seed);
        for idx in &subsets {
            t.check("product_formula", product_formula_check(&s.p, idx)?);
        }
    }
    Ok(())
}

fn suite_appendix_c(ctx: &Context, t: &mut Task) -> Result<()> {
    let n = ctx.sites().max(2);
    let rests: Vec<Vec<u8>> = TernaryIndex::all(n - 2).map(|h| h.digits).collect();
    let mut squared: f64 = 0.0;
    for s in ctx.gl3_admissible(t, n, TwistCase::I)? {
        t.seed(s.seed);
        for row in appc_recursion_check(&s.p, &s.xyz, 0, &rests)? {
            t.check("one_pair", row.residual);
            squared = squared.max(row.squared_denominator_residual.unwrap_or(0.0));
        }
    }
    // the two-pair identity needs four sites
    for s in ctx.gl3_admissible(t, 4, TwistCase::I)?.into_iter().take(1) {
        t.seed(s.seed);
        for row in appc_recursion_check(&s.p, &s.xyz, 1, &[vec![]])? {
            t.check("two_pairs", row.residual);
        }
    }
    t.quantity("squared_denominator_residual", squared);
    Ok(())
}

// ---------------------------------------------------------------------------------------------
// benchmark

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub seed: u64,
    pub n_min: usize,
    pub n_max: usize,
    /// Largest N for which the dense transfer matrix is built.
    pub dense_max: usize,
    pub repeats: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub sites: usize,
    pub dim: usize,
    pub path: String,
    pub status: String,
    pub wall_seconds: f64,
    /// Applications of T_1 per second.
    pub throughput: f64,
    pub checksum: Option<C64>,
}

/// Times dense T_1 construction plus application against the matrix-free apply.
pub fn bench(opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for n in opts.n_min..=opts.n_max {
        let mut s = Sampler::new(opts.seed.wrapping_add(n as u64));
        let p = s.params(n, TwistCase::I)?;
        let l = s.lambda();
        let v: Vec<C64> = (0..p.dim()).map(|_| s.complex_unit()).collect();
        let reps = opts.repeats.max(1);

        let start = Instant::now();
        let mut out = Vec::new();
        for _ in 0..reps {
            out = apply_transfer_free(&p, 1, l, &v);
        }
        let wall = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            sites: n,
            dim: p.dim(),
            path: "matrix_free".into(),
            status: "ok".into(),
            wall_seconds: wall,
            throughput: reps as f64 / wall.max(1e-12),
            checksum: Some(out.iter().sum()),
        });

        let mut row = BenchRow {
            sites: n,
            dim: p.dim(),
            path: "dense".into(),
            status: String::new(),
            wall_seconds: 0.0,
            throughput: 0.0,
            checksum: None,
        };
        if p.dim() > DENSE_CAP || n <= opts.dense_max {
            let start = Instant::now();
            match transfer(&p, 1, l) {
                Ok(t) => {
                    let mut out = Vec::new();
                    for _ in 0..reps {
                        out = t.matvec(&v);
                    }
                    row.wall_seconds = start.elapsed().as_secs_f64();
                    row.throughput = reps as f64 / row.wall_seconds.max(1e-12);
                    row.status = "ok".into();
                    row.checksum = Some(out.iter().sum());
                }
                Err(e @ SovError::SizeCap { .. }) => row.status = format!("SizeCap: {e}"),
                Err(e) => return Err(e),
            }
        } else {
            row.status = format!("skipped: N > dense_max = {}", opts.dense_max);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("sites,dim,path,status,wall_seconds,throughput,checksum\n");
    for r in rows {
        let sum = r.checksum.map(|z| format!("\"{:e},{:e}\"", z.re, z.im)).unwrap_or_default();
        s.push_str(&format!("{},{},{},\"{}\",{:e},{:e},{}\n", r.sites, r.dim, r.path, r.status, r.wall_seconds, r.throughput, sum));
    }
    s
}

// ---------------------------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "sovlab", version, about = "Separation of variables verification lab")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Number of sites.
    #[arg(short = 'N', long = "sites", global = true)]
    pub sites: Option<usize>,

    /// Replaces every residual tolerance (floors are kept).
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Let tasks use several threads (capped by SOVLAB_THREADS).
    #[arg(long, global = true)]
    pub parallel: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run verification suites and write report.json
    Verify {
        /// Comma-separated suite names.
        #[arg(long, value_delimiter = ',')]
        suite: Vec<String>,
        #[arg(long)]
        all: bool,
    },
    /// Coupling matrix of the SoV bases, written to gram.csv
    Gram,
    /// Coupling matrix and measure, written to gram.csv and measure.csv
    Measure,
    /// Determinant scalar products against direct inner products
    ScalarProduct,
    /// Dense versus matrix-free transfer-matrix timings, written to bench.csv
    Bench {
        #[arg(long, default_value_t = 4)]
        n_min: usize,
        #[arg(long, default_value_t = 9)]
        n_max: usize,
        #[arg(long, default_value_t = 6)]
        dense_max: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Summarize an existing report.json
    Report,
}

/// Thread count for a run: one unless parallelism is requested, then SOVLAB_THREADS or all cores.
pub fn thread_count(parallel: bool) -> usize {
    if !parallel {
        return 1;
    }
    std::env::var("SOVLAB_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(0)
}

fn summary_lines(report: &Report) -> Vec<String> {
    report
        .tasks
        .iter()
        .map(|t| {
            let mut line = format!("{} {}", if t.passed { "PASS" } else { "FAIL" }, t.name);
            if let Some(e) = &t.error {
                line.push_str(&format!(": {e}"));
            }
            for f in &t.failures {
                line.push_str(&format!("; {f}"));
            }
            line
        })
        .collect()
}

/// Executes a parsed command line. Returns whether every task passed.
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut ov = Overrides { seed: cli.seed, sites: cli.sites, tol: cli.tol, out: cli.out.clone(), ..Default::default() };
    match &cli.command {
        Command::Verify { suite, all } => {
            ov.suites = suite.clone();
            ov.all = *all;
        }
        Command::Gram => ov.suites = vec!["gram".into()],
        Command::Measure => ov.suites = vec!["measure".into()],
        Command::ScalarProduct => ov.suites = vec!["scalarproducts".into()],
        Command::Bench { n_min, n_max, dense_max, repeats } => {
            let opts = BenchOptions {
                seed: ov.seed.or(file.seed).unwrap_or(0),
                n_min: *n_min,
                n_max: *n_max,
                dense_max: *dense_max,
                repeats: *repeats,
            };
            let rows = bench(&opts)?;
            let dir = ov.out.or(file.output).unwrap_or_else(|| PathBuf::from("sovlab-out"));
            fs::create_dir_all(&dir)?;
            let csv = bench_csv(&rows);
            fs::write(dir.join("bench.csv"), &csv)?;
            print!("{csv}");
            return Ok(true);
        }
        Command::Report => {
            let dir = ov.out.or(file.output).unwrap_or_else(|| PathBuf::from("sovlab-out"));
            let text = fs::read_to_string(dir.join("report.json"))?;
            let v: Value = serde_json::from_str(&text)?;
            let mut ok = v["passed"].as_bool().unwrap_or(false);
            for t in v["tasks"].as_array().map(|a| a.as_slice()).unwrap_or(&[]) {
                let passed = t["passed"].as_bool().unwrap_or(false);
                ok &= passed;
                println!("{} {}", if passed { "PASS" } else { "FAIL" }, t["name"].as_str().unwrap_or("?"));
            }
            return Ok(ok);
        }
    }
    let ctx = Context::resolve(&file, &ov)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count(cli.parallel)).build()?;
    let out = pool.install(|| run(&ctx));
    write_outputs(&ctx.config.output, &out)?;
    for line in summary_lines(&out.report) {
        println!("{line}");
    }
    if !out.report.passed {
        let failed: Vec<&str> = out.report.tasks.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect();
        eprintln!("{}", SovError::TaskFailure(failed.join(", ")));
    }
    Ok(out.report.passed)
}
