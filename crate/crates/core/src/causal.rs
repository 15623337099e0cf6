//! Causal graphs, d-separation, and structural-model simulation.
//!
//! `Yhat` names the model prediction node. Simulated `X` is discrete, so
//! conditioning on it is exact stratification.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::predictability;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum CausalError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("node `{0}` appears in more than one query set")]
    OverlappingSets(String),
    #[error("mechanism for `{node}` reads {declared:?} but its parents are {parents:?}")]
    MechanismMismatch {
        node: String,
        declared: Vec<String>,
        parents: Vec<String>,
    },
    #[error("no mechanism for node `{0}`")]
    MissingMechanism(String),
    #[error("no stratum contains both treatment levels ({dropped} strata dropped)")]
    NoValidStrata { dropped: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Directed acyclic graph over named nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl Dag {
    pub fn new(nodes: &[&str], edges: &[(&str, &str)]) -> Result<Dag, CausalError> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.to_string(), i).is_some() {
                return Err(CausalError::DuplicateNode(n.to_string()));
            }
        }
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::new();
        for &(p, c) in edges {
            let pi = *index
                .get(p)
                .ok_or_else(|| CausalError::UnknownNode(p.to_string()))?;
            let ci = *index
                .get(c)
                .ok_or_else(|| CausalError::UnknownNode(c.to_string()))?;
            if pi == ci {
                return Err(CausalError::SelfLoop(p.to_string()));
            }
            if seen.insert((pi, ci)) {
                parents[ci].push(pi);
                children[pi].push(ci);
            }
        }
        // Kahn's algorithm; smallest index first keeps the order deterministic.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(nodes.len());
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            topo.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() != nodes.len() {
            let stuck = (0..nodes.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(CausalError::Cycle(nodes[stuck].to_string()));
        }
        Ok(Dag {
            names: nodes.iter().map(|s| s.to_string()).collect(),
            index,
            parents,
            children,
            topo,
        })
    }

    /// Nodes in first-appearance order across the edge list.
    pub fn from_edges(edges: &[(&str, &str)]) -> Result<Dag, CausalError> {
        let mut nodes: Vec<&str> = Vec::new();
        for &(p, c) in edges {
            for n in [p, c] {
                if !nodes.contains(&n) {
                    nodes.push(n);
                }
            }
        }
        Dag::new(&nodes, edges)
    }

    pub fn nodes(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                out.push((self.names[p].clone(), self.names[c].clone()));
            }
        }
        out.sort();
        out
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        match (self.index.get(parent), self.index.get(child)) {
            (Some(&p), Some(&c)) => self.children[p].contains(&c),
            _ => false,
        }
    }

    pub fn node_index(&self, name: &str) -> Result<usize, CausalError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CausalError::UnknownNode(name.to_string()))
    }

    pub fn parents_of(&self, name: &str) -> Result<Vec<&str>, CausalError> {
        let i = self.node_index(name)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].as_str()).collect())
    }

    pub fn topological_order(&self) -> Vec<&str> {
        self.topo.iter().map(|&i| self.names[i].as_str()).collect()
    }

    fn resolve(&self, set: &[&str]) -> Result<Vec<usize>, CausalError> {
        set.iter().map(|n| self.node_index(n)).collect()
    }

    /// Whether every path between `a` and `b` is blocked by `z`.
    pub fn d_separated(&self, a: &[&str], b: &[&str], z: &[&str]) -> Result<bool, CausalError> {
        let (a, b, z) = (self.resolve(a)?, self.resolve(b)?, self.resolve(z)?);
        let mut owner = vec![0u8; self.len()];
        for (tag, set) in [(1u8, &a), (2, &b), (3, &z)] {
            for &v in set {
                if owner[v] != 0 && owner[v] != tag {
                    return Err(CausalError::OverlappingSets(self.names[v].clone()));
                }
                owner[v] = tag;
            }
        }
        Ok(!self.reachable(&a, &z).iter().any(|v| b.contains(v)))
    }

    /// Nodes reachable from `sources` along active trails given `z` (Bayes-ball).
    fn reachable(&self, sources: &[usize], z: &[usize]) -> Vec<usize> {
        let n = self.len();
        let mut in_z = vec![false; n];
        for &v in z {
            in_z[v] = true;
        }
        // Ancestors of z, including z; a collider is open iff it lies here.
        let mut anc = in_z.clone();
        let mut stack: Vec<usize> = z.to_vec();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !anc[p] {
                    anc[p] = true;
                    stack.push(p);
                }
            }
        }
        // `up` = arrived from a child, `down` = arrived from a parent.
        let mut visited = vec![[false; 2]; n];
        let mut queue: VecDeque<(usize, usize)> = sources.iter().map(|&s| (s, 0)).collect();
        let mut out = Vec::new();
        let mut reached = vec![false; n];
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !in_z[v] && !reached[v] {
                reached[v] = true;
                out.push(v);
            }
            if dir == 0 && !in_z[v] {
                queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                queue.extend(self.children[v].iter().map(|&c| (c, 1)));
            } else if dir == 1 {
                if !in_z[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if anc[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        out
    }
}

const BASELINE: &[(&str, &str)] = &[
    ("A", "X"),
    ("X", "Y"),
    ("X", "Yhat"),
    ("X", "Q"),
    ("Y", "M"),
    ("Yhat", "M"),
];

/// The eight reference graphs by name.
pub fn builtin_dags() -> BTreeMap<&'static str, Dag> {
    let mut nr = BASELINE.to_vec();
    nr.push(("H", "Q"));
    let mut fr = nr.clone();
    fr.extend([("X0", "X"), ("X0", "Q")]);
    let graphs: [(&str, Vec<(&str, &str)>); 8] = [
        ("baseline", BASELINE.to_vec()),
        (
            "shared_z",
            vec![
                ("A", "X"),
                ("X", "Z"),
                ("Z", "Yhat"),
                ("X", "Y"),
                ("Yhat", "M"),
                ("Y", "M"),
                ("Z", "Q"),
            ],
        ),
        (
            "strong_tg",
            vec![
                ("A", "X"),
                ("X", "Y"),
                ("X", "Yhat"),
                ("Y", "M"),
                ("Yhat", "M"),
                ("Yhat", "Q"),
            ],
        ),
        (
            "weak_tg",
            vec![
                ("A", "X"),
                ("X", "Y"),
                ("X", "Yhat"),
                ("X", "Q"),
                ("Y", "M"),
                ("Yhat", "M"),
                ("Y", "T"),
                ("Q", "T"),
            ],
        ),
        ("nr_iqa", nr),
        ("fr_iqa", fr),
        (
            "common_corruptions",
            vec![
                ("C", "X"),
                ("S", "X"),
                ("X0", "X"),
                ("X", "Y"),
                ("X", "Yhat"),
                ("X", "Q"),
                ("Y", "M"),
                ("Yhat", "M"),
            ],
        ),
        (
            "baseline_latents",
            vec![
                ("A", "X"),
                ("X", "Zy"),
                ("Zy", "Yhat"),
                ("X", "Zq"),
                ("Zq", "Q"),
                ("X", "Y"),
                ("Yhat", "M"),
                ("Y", "M"),
            ],
        ),
    ];
    graphs
        .into_iter()
        .map(|(name, edges)| {
            (
                name,
                Dag::from_edges(&edges).expect("built-in graphs are acyclic"),
            )
        })
        .collect()
}

/// One conditional-independence statement about a named graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub dag: String,
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub z: Vec<String>,
    /// `None` marks a row that is evaluated and reported but not asserted.
    pub expected: Option<bool>,
}

impl Claim {
    pub fn new(dag: &str, a: &[&str], b: &[&str], z: &[&str], expected: Option<bool>) -> Claim {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Claim {
            dag: dag.to_string(),
            a: own(a),
            b: own(b),
            z: own(z),
            expected,
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} _||_ {} | {{{}}}",
            self.dag,
            self.a.join(","),
            self.b.join(","),
            self.z.join(",")
        )
    }
}

/// Q ⊥ M | X holds where quality and correctness share only X; T in weak_tg is a collider.
pub fn claim_table() -> Vec<Claim> {
    let qm = |dag: &str, z: &[&str], expected: Option<bool>| Claim::new(dag, &["Q"], &["M"], z, expected);
    vec![
        qm("baseline", &["X"], Some(true)),
        qm("nr_iqa", &["X"], Some(true)),
        qm("fr_iqa", &["X"], Some(true)),
        qm("common_corruptions", &["X"], Some(true)),
        qm("baseline_latents", &["X"], Some(true)),
        qm("shared_z", &["X"], Some(false)),
        qm("strong_tg", &["X"], Some(false)),
        qm("weak_tg", &["X", "T"], Some(false)),
        qm("weak_tg", &["X"], None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimResult {
    pub claim: Claim,
    pub observed: bool,
}

impl ClaimResult {
    /// `None` for informational rows.
    pub fn passed(&self) -> Option<bool> {
        self.claim.expected.map(|e| e == self.observed)
    }
}

pub fn verify_claims_with(
    dags: &BTreeMap<&str, Dag>,
    claims: &[Claim],
) -> Result<Vec<ClaimResult>, CausalError> {
    claims
        .iter()
        .map(|c| {
            let dag = dags
                .get(c.dag.as_str())
                .ok_or_else(|| CausalError::UnknownNode(c.dag.clone()))?;
            fn refs(v: &[String]) -> Vec<&str> {
                v.iter().map(String::as_str).collect()
            }
            let observed = dag.d_separated(&refs(&c.a), &refs(&c.b), &refs(&c.z))?;
            Ok(ClaimResult {
                claim: c.clone(),
                observed,
            })
        })
        .collect()
}

pub fn verify_claims() -> Vec<ClaimResult> {
    verify_claims_with(&builtin_dags(), &claim_table()).expect("claim table names only built-in nodes")
}

/// One line per claim: `PASS`, `FAIL`, or `INFO`.
pub fn format_claims(results: &[ClaimResult]) -> String {
    let mut out = String::new();
    for r in results {
        let status = match r.passed() {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        let expected = r.claim.expected.map_or("-".to_string(), |e| e.to_string());
        writeln!(
            out,
            "{status}  {}  expected={expected} observed={}",
            r.claim, r.observed
        )
        .unwrap();
    }
    out
}

pub type MechanismFn = dyn Fn(&[f64], &mut ChaCha8Rng) -> f64 + Send + Sync;

/// Generating function for one node. `inputs` must be exactly the node's parents;
/// values arrive in `inputs` order.
#[derive(Clone)]
pub struct Mechanism {
    pub inputs: Vec<String>,
    pub f: Arc<MechanismFn>,
}

impl Mechanism {
    pub fn new(inputs: &[&str], f: impl Fn(&[f64], &mut ChaCha8Rng) -> f64 + Send + Sync + 'static) -> Self {
        Mechanism {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            f: Arc::new(f),
        }
    }

    pub fn constant(v: f64) -> Self {
        Mechanism::new(&[], move |_, _| v)
    }
}

impl fmt::Debug for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mechanism")
            .field("inputs", &self.inputs)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ScmSpec {
    pub dag: Dag,
    mechanisms: Vec<(Vec<usize>, Arc<MechanismFn>)>,
    /// Number of levels for nodes used as strata.
    pub discrete: BTreeMap<String, usize>,
}

impl fmt::Debug for ScmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScmSpec")
            .field("dag", &self.dag)
            .field("discrete", &self.discrete)
            .finish_non_exhaustive()
    }
}

impl ScmSpec {
    pub fn new(
        dag: Dag,
        mut mechanisms: HashMap<String, Mechanism>,
        discrete: BTreeMap<String, usize>,
    ) -> Result<ScmSpec, CausalError> {
        let mut compiled = Vec::with_capacity(dag.len());
        for (i, name) in dag.nodes().iter().enumerate() {
            let m = mechanisms
                .remove(name)
                .ok_or_else(|| CausalError::MissingMechanism(name.clone()))?;
            let mut declared = m.inputs.clone();
            let mut parents: Vec<String> = dag.parents[i].iter().map(|&p| dag.names[p].clone()).collect();
            declared.sort();
            parents.sort();
            if declared != parents {
                return Err(CausalError::MechanismMismatch {
                    node: name.clone(),
                    declared,
                    parents,
                });
            }
            let idx = m
                .inputs
                .iter()
                .map(|p| dag.node_index(p))
                .collect::<Result<_, _>>()?;
            compiled.push((idx, m.f));
        }
        if let Some(extra) = mechanisms.keys().next() {
            return Err(CausalError::UnknownNode(extra.clone()));
        }
        for k in discrete.keys() {
            dag.node_index(k)?;
        }
        Ok(ScmSpec {
            dag,
            mechanisms: compiled,
            discrete,
        })
    }
}

/// Row-major samples, one column per node in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub columns: Vec<String>,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl SampleFrame {
    pub fn column_index(&self, name: &str) -> Result<usize, CausalError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CausalError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, CausalError> {
        let j = self.column_index(name)?;
        let k = self.columns.len();
        Ok((0..self.rows).map(|i| self.data[i * k + j]).collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.columns.len();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CausalError> {
        std::fs::write(path, self.to_csv()).map_err(|e| CausalError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Ancestral sampling. Row `i` draws from a stream keyed by `(seed, i)`.
pub fn simulate(spec: &ScmSpec, n: usize, seed: u64) -> Result<SampleFrame, CausalError> {
    if n == 0 {
        return Err(CausalError::EmptySample);
    }
    let k = spec.dag.len();
    let mut data = vec![0.0; n * k];
    data.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let mut g = rng::stream(rng::key_index(seed, i as u64));
        let mut args = Vec::with_capacity(k);
        for &v in &spec.dag.topo {
            let (inputs, f) = &spec.mechanisms[v];
            args.clear();
            args.extend(inputs.iter().map(|&p| row[p]));
            row[v] = f(&args, &mut g);
        }
    });
    Ok(SampleFrame {
        columns: spec.dag.nodes().to_vec(),
        rows: n,
        data,
    })
}

pub const SIM_STRATA: usize = 200;

/// Fixed per-stratum constant in [0, 1) for function `which`.
fn stratum_unit(x: f64, which: u64) -> f64 {
    rng::unit_from_key(rng::key_index(0x5eed_0000 + which, x as u64))
}

/// Binary class label of stratum `x`.
fn stratum_label(x: f64) -> f64 {
    f64::from(u8::from(stratum_unit(x, 0) < 0.5))
}

fn standard_normal(g: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(g)
}

fn common(m: &mut HashMap<String, Mechanism>) {
    m.insert(
        "A".into(),
        Mechanism::new(&[], |_, g| g.random_range(0..SIM_STRATA) as f64),
    );
    m.insert("X".into(), Mechanism::new(&["A"], |v, _| v[0]));
    m.insert("Y".into(), Mechanism::new(&["X"], |v, _| stratum_label(v[0])));
    m.insert(
        "M".into(),
        Mechanism::new(&["Y", "Yhat"], |v, _| f64::from(u8::from(v[0] == v[1]))),
    );
}

/// `baseline_sim`: Q and M depend on X only through independent stratum functions.
/// `shared_z_sim`: a noisy latent Z drives both the prediction and the score.
pub fn builtin_scms() -> BTreeMap<&'static str, ScmSpec> {
    let dags = builtin_dags();
    let strata: BTreeMap<String, usize> =
        [("A".to_string(), SIM_STRATA), ("X".to_string(), SIM_STRATA)].into();

    let mut base = HashMap::new();
    common(&mut base);
    base.insert(
        "Yhat".into(),
        Mechanism::new(&["X"], |v, g| {
            let y = stratum_label(v[0]);
            let accuracy = 0.3 + 0.6 * stratum_unit(v[0], 1);
            if g.random::<f64>() < accuracy {
                y
            } else {
                1.0 - y
            }
        }),
    );
    base.insert(
        "Q".into(),
        Mechanism::new(&["X"], |v, g| {
            2.0 * stratum_unit(v[0], 2) - 1.0 + standard_normal(g)
        }),
    );

    let mut shared = HashMap::new();
    common(&mut shared);
    // Signed evidence for the stratum's label; the prediction is its sign, the score its magnitude.
    shared.insert(
        "Z".into(),
        Mechanism::new(&["X"], |v, g| {
            let sign = 2.0 * stratum_label(v[0]) - 1.0;
            sign * (0.5 + stratum_unit(v[0], 3)) + standard_normal(g)
        }),
    );
    shared.insert(
        "Yhat".into(),
        Mechanism::new(&["Z"], |v, _| f64::from(u8::from(v[0] > 0.0))),
    );
    shared.insert(
        "Q".into(),
        Mechanism::new(&["Z"], |v, g| v[0].abs() + 0.3 * standard_normal(g)),
    );

    let mut out = BTreeMap::new();
    out.insert(
        "baseline_sim",
        ScmSpec::new(dags["baseline"].clone(), base, strata.clone()).expect("baseline_sim"),
    );
    out.insert(
        "shared_z_sim",
        ScmSpec::new(dags["shared_z"].clone(), shared, strata).expect("shared_z_sim"),
    );
    out
}

fn group_by_stratum(strata: &[f64]) -> BTreeMap<u64, Vec<usize>> {
    let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        out.entry(s.to_bits()).or_default().push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AceResult {
    pub ace: f64,
    pub valid_strata: usize,
    pub dropped_strata: usize,
}

/// Stratified contrast `Σ_x p(x) (E[M | Q > med, x] - E[M | Q <= med, x])` with a global
/// median split. Strata missing either level are dropped and `p(x)` renormalized.
pub fn ace_estimate(
    frame: &SampleFrame,
    treatment: &str,
    outcome: &str,
    adjust: &str,
) -> Result<AceResult, CausalError> {
    let q = frame.column(treatment)?;
    let m = frame.column(outcome)?;
    let x = frame.column(adjust)?;
    let mut sorted = q.clone();
    sorted.sort_by(f64::total_cmp);
    let median = crate::stats::quantile_sorted(&sorted, 0.5);

    let mut contrasts = Vec::new();
    let mut dropped = 0;
    for rows in group_by_stratum(&x).values() {
        let (mut hi, mut nhi, mut lo, mut nlo) = (0.0, 0usize, 0.0, 0usize);
        for &i in rows {
            if q[i] > median {
                hi += m[i];
                nhi += 1;
            } else {
                lo += m[i];
                nlo += 1;
            }
        }
        if nhi == 0 || nlo == 0 {
            dropped += 1;
            continue;
        }
        contrasts.push((rows.len(), hi / nhi as f64 - lo / nlo as f64));
    }
    if contrasts.is_empty() {
        return Err(CausalError::NoValidStrata { dropped });
    }
    let total: usize = contrasts.iter().map(|c| c.0).sum();
    let ace = contrasts.iter().map(|&(n, d)| n as f64 * d).sum::<f64>() / total as f64;
    Ok(AceResult {
        ace,
        valid_strata: contrasts.len(),
        dropped_strata: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedAuc {
    /// Unweighted mean over strata where both outcome classes occur.
    pub mean_auc: f64,
    pub valid_strata: usize,
    pub dropped_strata: usize,
}

/// AUC of `outcome` (0/1) ranked by `score`, computed within each stratum.
pub fn stratified_auc(
    frame: &SampleFrame,
    score: &str,
    outcome: &str,
    strata: &str,
) -> Result<StratifiedAuc, CausalError> {
    let q = frame.column(score)?;
    let m = frame.column(outcome)?;
    let x = frame.column(strata)?;
    let groups: Vec<Vec<usize>> = group_by_stratum(&x).into_values().collect();
    let aucs: Vec<Option<f64>> = groups
        .par_iter()
        .map(|rows| {
            let s: Vec<f64> = rows.iter().map(|&i| q[i]).collect();
            let y: Vec<u8> = rows.iter().map(|&i| u8::from(m[i] != 0.0)).collect();
            predictability::auc(&s, &y).ok()
        })
        .collect();
    let valid: Vec<f64> = aucs.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(CausalError::NoValidStrata { dropped: aucs.len() });
    }
    Ok(StratifiedAuc {
        mean_auc: crate::stats::mean(&valid),
        valid_strata: valid.len(),
        dropped_strata: aucs.len() - valid.len(),
    })
}

/// Within-stratum covariance sum of `a` and `b`.
fn stratified_cov(a: &[f64], b: &[f64], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|rows| {
            let n = rows.len() as f64;
            let ma = rows.iter().map(|&i| a[i]).sum::<f64>() / n;
            let mb = rows.iter().map(|&i| b[i]).sum::<f64>() / n;
            rows.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>()
        })
        .sum()
}

/// Permutation test of `a ⊥ b | strata`: `b` is shuffled within strata. Ties are broken
/// with an auxiliary uniform, so under the null the p-value is exactly uniform on (0, 1].
pub fn stratified_permutation_p(a: &[f64], b: &[f64], strata: &[u64], permutations: usize, seed: u64) -> f64 {
    let mut by: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        by.entry(s).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by.into_values().collect();
    let observed = stratified_cov(a, b, &groups).abs();
    let mut g = rng::stream(seed);
    let (mut greater, mut equal) = (0usize, 0usize);
    let mut shuffled = b.to_vec();
    for _ in 0..permutations {
        for rows in &groups {
            let mut vals: Vec<f64> = rows.iter().map(|&i| b[i]).collect();
            vals.shuffle(&mut g);
            for (&i, v) in rows.iter().zip(vals) {
                shuffled[i] = v;
            }
        }
        let s = stratified_cov(a, &shuffled, &groups).abs();
        // Relative tolerance absorbs summation-order noise between equal statistics.
        let tol = 1e-9 * observed.max(1e-300);
        if s > observed + tol {
            greater += 1;
        } else if (s - observed).abs() <= tol {
            equal += 1;
        }
    }
    let u: f64 = g.random();
    (greater as f64 + u * (equal + 1) as f64) / (permutations + 1) as f64
}
